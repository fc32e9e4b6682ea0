use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use super::{Point3, Scene};
use crate::error::{Error, Result};
use crate::knn::KdTree;

const SIGN_EPS: f64 = 1e-9;
const DEGENERATE_VARIANCE: f64 = 1e-24;

#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub scene: Scene,
    /// Points whose neighborhood collapsed to a single location.
    pub degenerate: usize,
}

/// Flips `n` so that the first clearly non-zero component among (z, y, x) is
/// positive.
pub(crate) fn orient(n: Point3) -> Point3 {
    let key = if n[2].abs() > SIGN_EPS {
        n[2]
    } else if n[1].abs() > SIGN_EPS {
        n[1]
    } else {
        n[0]
    };
    if key < 0.0 {
        [-n[0], -n[1], -n[2]]
    } else {
        n
    }
}

/// Plane-fit normal of a neighborhood, or `None` when all points coincide.
pub(crate) fn plane_normal(points: &[Point3], neighbors: &[usize]) -> Option<Point3> {
    let mut mean = [0.0; 3];
    for &j in neighbors {
        for d in 0..3 {
            mean[d] += points[j][d];
        }
    }
    let n = neighbors.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = Matrix3::<f64>::zeros();
    for &j in neighbors {
        let v = nalgebra::Vector3::new(
            points[j][0] - mean[0],
            points[j][1] - mean[1],
            points[j][2] - mean[2],
        );
        cov += v * v.transpose();
    }
    cov /= n;
    if cov.trace() <= DEGENERATE_VARIANCE {
        return None;
    }
    let eig = SymmetricEigen::new(cov);
    let (min_idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .unwrap();
    let v = eig.eigenvectors.column(min_idx);
    let len = v.norm();
    Some(orient([v[0] / len, v[1] / len, v[2] / len]))
}

/// Estimates unit normals from a plane fit over each point's `k` nearest
/// neighbors (the point itself included).
pub fn estimate_normals(scene: &Scene, k: usize) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!(
            "normal estimation needs k >= 3, got {k}"
        )));
    }
    if scene.len() <= k {
        return Err(Error::InvalidArgument(format!(
            "normal estimation needs more than k={k} points, scene has {}",
            scene.len()
        )));
    }
    let points = scene.points();
    let tree = KdTree::new(points);
    let fitted: Vec<Option<Point3>> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let nbrs: Vec<usize> = tree.nearest(points[i], k).into_iter().map(|x| x.0).collect();
            plane_normal(points, &nbrs)
        })
        .collect();
    let degenerate = fitted.iter().filter(|n| n.is_none()).count();
    if degenerate > 0 {
        log::warn!("{degenerate} points had coincident neighborhoods; using (0,0,1)");
    }
    let normals = fitted
        .into_iter()
        .map(|n| n.unwrap_or([0.0, 0.0, 1.0]))
        .collect();
    Ok(NormalEstimate {
        scene: scene.with_normals(normals)?,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::DEFAULT_COLOR;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(points: Vec<Point3>) -> Scene {
        let n = points.len();
        Scene::new(points, vec![DEFAULT_COLOR; n], None, None).unwrap()
    }

    fn grid(f: impl Fn(f64, f64) -> Point3) -> Vec<Point3> {
        let mut pts = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                pts.push(f(i as f64, j as f64));
            }
        }
        pts
    }

    #[test]
    fn flat_grid_points_up() {
        let est = estimate_normals(&scene(grid(|a, b| [a, b, 0.0])), 4).unwrap();
        for n in est.scene.normals().unwrap() {
            assert!((n[2] - 1.0).abs() < 1e-12, "{n:?}");
        }
        assert_eq!(est.degenerate, 0);
    }

    #[test]
    fn vertical_plane_resolves_sign_consistently() {
        let est = estimate_normals(&scene(grid(|a, b| [0.0, a, b])), 4).unwrap();
        for n in est.scene.normals().unwrap() {
            assert!((n[0] - 1.0).abs() < 1e-12, "{n:?}");
        }
    }

    #[test]
    fn noisy_plane_within_two_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                let noise: f64 = rng.random_range(-1.0..1.0);
                pts.push([i as f64 * 0.05, j as f64 * 0.05, 1e-3 * noise]);
            }
        }
        let est = estimate_normals(&scene(pts), 10).unwrap();
        let limit = 2f64.to_radians().cos();
        for n in est.scene.normals().unwrap() {
            assert!(n[2] >= limit, "{n:?}");
        }
    }

    #[test]
    fn coincident_neighborhood_falls_back() {
        let mut pts = vec![[0.0; 3]; 5];
        pts.extend(grid(|a, b| [a + 10.0, b, 0.0]));
        let est = estimate_normals(&scene(pts), 4).unwrap();
        assert_eq!(est.degenerate, 5);
        assert_eq!(est.scene.normals().unwrap()[0], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn preconditions() {
        let s = scene(grid(|a, b| [a, b, 0.0]));
        assert!(estimate_normals(&s, 2).is_err());
        assert!(estimate_normals(&s, 9).is_err());
    }

    #[test]
    fn permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point3> = (0..200)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..1.0);
                let y: f64 = rng.random_range(0.0..1.0);
                [x, y, (3.0 * x).sin() * 0.2 + 0.1 * y * y]
            })
            .collect();
        let mut perm: Vec<usize> = (0..pts.len()).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let permuted: Vec<Point3> = perm.iter().map(|&i| pts[i]).collect();
        let a = estimate_normals(&scene(pts), 8).unwrap();
        let b = estimate_normals(&scene(permuted), 8).unwrap();
        let na = a.scene.normals().unwrap();
        let nb = b.scene.normals().unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(nb[new], na[old]);
        }
    }
}
