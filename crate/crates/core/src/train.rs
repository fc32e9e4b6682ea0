//! Alternating training: group with the current parameters, then update the
//! parameters against the resulting instances with the grouping held fixed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::artifact::{read_json, write_json};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::network::NetworkParams;
use crate::pipeline::{seggroup_forward, GroupingConfig, GroupingPlan, SceneInput};
use crate::tensor::Mat;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    Analytic,
    /// Central differences for every parameter. Only practical for tiny
    /// problems; meant for debugging the analytic path.
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    pub grad_mode: GradMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            epochs: 100,
            seed: 0,
            grad_mode: GradMode::Analytic,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("train.learning_rate", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("train.momentum", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Momentum gradient descent: `v <- mu v + g`, `p <- p - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Mat>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Applies one update; `grads` align with `params`.
    pub fn step(&mut self, params: &mut [&mut Mat], grads: &[Mat]) {
        assert_eq!(params.len(), grads.len(), "one gradient per tensor");
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| Mat::zeros(g.rows, g.cols)).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, gv), vv) in p.data.iter_mut().zip(&g.data).zip(&mut v.data) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.learning_rate * *vv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub losses: Vec<EpochLoss>,
}

/// Loss and gradient (aligned with [`NetworkParams::tensors`]) for one scene.
/// Returns the grouping decisions that were used.
pub fn loss_and_gradients(
    input: &SceneInput,
    params: &NetworkParams,
    grouping: &GroupingConfig,
    seed: u64,
    plan: Option<&GroupingPlan>,
) -> Result<(f64, Vec<Mat>, GroupingPlan)> {
    let pass = seggroup_forward(input, params, grouping, seed, plan, true)?;
    let loss = pass.loss_value();
    let grads = pass.tape.backward(pass.loss);
    let out = params
        .tensors()
        .iter()
        .zip(&pass.params.all)
        .map(|((_, m), v)| grads.get(*v).cloned().unwrap_or_else(|| Mat::zeros(m.rows, m.cols)))
        .collect();
    Ok((loss, out, pass.plan))
}

fn plan_loss(input: &SceneInput, params: &NetworkParams, grouping: &GroupingConfig, seed: u64, plan: &GroupingPlan) -> Result<f64> {
    Ok(seggroup_forward(input, params, grouping, seed, Some(plan), false)?.loss_value())
}

/// Central-difference derivative of the fixed-plan loss for one entry.
#[allow(clippy::too_many_arguments)]
pub fn numeric_derivative(
    input: &SceneInput,
    params: &NetworkParams,
    grouping: &GroupingConfig,
    seed: u64,
    plan: &GroupingPlan,
    tensor: usize,
    index: usize,
    epsilon: f64,
) -> Result<f64> {
    let mut shifted = params.clone();
    shifted.tensors_mut()[tensor].data[index] += epsilon;
    let plus = plan_loss(input, &shifted, grouping, seed, plan)?;
    shifted.tensors_mut()[tensor].data[index] -= 2.0 * epsilon;
    let minus = plan_loss(input, &shifted, grouping, seed, plan)?;
    Ok((plus - minus) / (2.0 * epsilon))
}

fn numeric_gradients(
    input: &SceneInput,
    params: &NetworkParams,
    grouping: &GroupingConfig,
    seed: u64,
) -> Result<(f64, Vec<Mat>)> {
    let pass = seggroup_forward(input, params, grouping, seed, None, false)?;
    let loss = pass.loss_value();
    let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|(_, m)| m.shape()).collect();
    let mut grads = Vec::with_capacity(shapes.len());
    for (t, &(r, c)) in shapes.iter().enumerate() {
        let mut g = Mat::zeros(r, c);
        for i in 0..r * c {
            g.data[i] = numeric_derivative(input, params, grouping, seed, &pass.plan, t, i, 1e-5)?;
        }
        grads.push(g);
    }
    Ok((loss, grads))
}

/// Trains on `dataset`, one optimizer step per scene per epoch, and logs the
/// mean step loss of every epoch.
pub fn train(
    dataset: &[SceneInput],
    init: NetworkParams,
    config: &TrainConfig,
    grouping: &GroupingConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one scene".into()));
    }
    let mut params = init;
    let mut sgd = Sgd::new(config.learning_rate, config.momentum);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for input in dataset {
            let (loss, grads) = match config.grad_mode {
                GradMode::Analytic => {
                    let (l, g, _) = loss_and_gradients(input, &params, grouping, config.seed, None)?;
                    (l, g)
                }
                GradMode::Numeric => numeric_gradients(input, &params, grouping, config.seed)?,
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    scene: input.name.clone(),
                });
            }
            total += loss;
            sgd.step(&mut params.tensors_mut(), &grads);
        }
        let entry = EpochLoss {
            epoch,
            mean_loss: total / dataset.len() as f64,
        };
        log::info!("epoch {epoch}: mean loss {:.6}", entry.mean_loss);
        on_epoch(&entry);
        losses.push(entry);
    }
    Ok(TrainOutcome { params, losses })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub samples: usize,
    pub sample_seed: u64,
    /// Only entries whose analytic gradient has at least this magnitude are
    /// eligible. Central differences carry roughly `ulp(loss) / epsilon` of
    /// rounding noise, so relative errors of smaller gradients mostly measure
    /// that noise.
    pub min_gradient: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            samples: 200,
            sample_seed: 0,
            min_gradient: 0.0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients with central differences on randomly drawn
/// parameter entries, with the grouping fixed to the decisions of the
/// unperturbed pass. `tamper` may modify the analytic gradients first.
pub fn grad_check_with(
    input: &SceneInput,
    params: &NetworkParams,
    grouping: &GroupingConfig,
    seed: u64,
    options: &GradCheckOptions,
    tamper: impl FnOnce(&mut [Mat]),
) -> Result<GradCheckReport> {
    let (_, mut grads, plan) = loss_and_gradients(input, params, grouping, seed, None)?;
    tamper(&mut grads);
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut eligible: Vec<(usize, usize)> = grads
        .iter()
        .enumerate()
        .flat_map(|(t, g)| {
            g.data
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() >= options.min_gradient)
                .map(move |(i, _)| (t, i))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(options.sample_seed);
    let take = options.samples.min(eligible.len());
    // partial Fisher-Yates: the first `take` entries become the sample
    for k in 0..take {
        let j = rng.random_range(k..eligible.len());
        eligible.swap(k, j);
    }
    eligible.truncate(take);
    use rayon::prelude::*;
    let entries: Vec<GradCheckEntry> = eligible
        .par_iter()
        .map(|&(t, i)| {
            let numeric = numeric_derivative(input, params, grouping, seed, &plan, t, i, options.epsilon)?;
            let analytic = grads[t].data[i];
            Ok(GradCheckEntry {
                tensor: names[t].clone(),
                index: i,
                analytic,
                numeric,
                relative_error: relative_error(analytic, numeric),
            })
        })
        .collect::<Result<_>>()?;
    let max_relative_error = entries.iter().map(|e| e.relative_error).fold(0.0, f64::max);
    let max_absolute_error = entries
        .iter()
        .map(|e| (e.analytic - e.numeric).abs())
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        epsilon: options.epsilon,
        max_relative_error,
        max_absolute_error,
        entries,
    })
}

pub fn grad_check(
    input: &SceneInput,
    params: &NetworkParams,
    grouping: &GroupingConfig,
    seed: u64,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    grad_check_with(input, params, grouping, seed, options, |_| {})
}

pub fn checkpoint_to_json(params: &NetworkParams) -> Result<Value> {
    Ok(json!({
        "version": CHECKPOINT_VERSION,
        "params": serde_json::to_value(params).map_err(|e| Error::json("checkpoint", e))?,
    }))
}

pub fn save_checkpoint(params: &NetworkParams, path: &Path, config: Option<&PipelineConfig>) -> Result<()> {
    write_json(path, checkpoint_to_json(params)?, config)
}

pub fn checkpoint_from_json(value: &Value) -> Result<NetworkParams> {
    let version = value.get("version").and_then(Value::as_u64);
    if version != Some(CHECKPOINT_VERSION as u64) {
        return Err(Error::validation(
            "version",
            format!("unsupported checkpoint version {version:?}"),
        ));
    }
    let raw = value
        .get("params")
        .ok_or_else(|| Error::validation("params", "missing"))?;
    let params: NetworkParams = serde_path_to_error::deserialize(raw)
        .map_err(|e| Error::validation(format!("params.{}", e.path()), e.inner().to_string()))?;
    for (name, m) in params.tensors() {
        if m.data.len() != m.rows * m.cols {
            return Err(Error::validation(name, "data length does not match shape"));
        }
    }
    Ok(params)
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    checkpoint_from_json(&read_json(path)?)
}

/// `epoch,mean_loss` CSV with an optional leading config comment.
pub fn loss_log_csv(losses: &[EpochLoss], config: Option<&PipelineConfig>) -> Result<String> {
    let mut out = String::new();
    if let Some(cfg) = config {
        out.push_str("# config=");
        out.push_str(&serde_json::to_string(cfg).map_err(|e| Error::json("config", e))?);
        out.push('\n');
    }
    out.push_str("epoch,mean_loss\n");
    for l in losses {
        out.push_str(&format!("{},{}\n", l.epoch, l.mean_loss));
    }
    Ok(out)
}
