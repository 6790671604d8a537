//! Untargeted and targeted FGSM/PGD adversarial example generation.
//!
//! FGSM takes one signed-gradient step of size epsilon; PGD iterates
//! smaller steps of size alpha, clamping to the valid data range `[0, 1]`
//! after every step. The targeted variants descend on the loss of the
//! chosen target class instead of ascending on the true class.
//!
//! Attacks never mutate model parameters, never use randomness, and are
//! bit-deterministic for a fixed (model, inputs, config).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor};
use crate::metrics::{attack_cost, CostConfig, MetricsError};
use crate::models::{labels_of, windows_to_tensor, ModelError, TrainedModel, EVAL_BATCH};
use crate::signal::{FaultClass, SignalWindow, WINDOW_LEN};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
    #[error("no eligible rows: {0}")]
    EmptyEligibleSet(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Fgsm,
    Pgd,
}

impl AttackMethod {
    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Pgd => "pgd",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Untargeted,
    Targeted,
}

impl AttackMode {
    pub fn name(self) -> &'static str {
        match self {
            AttackMode::Untargeted => "untargeted",
            AttackMode::Targeted => "targeted",
        }
    }
}

/// Attack hyperparameters.
///
/// `epsilon` is the FGSM step; `alpha` and `iterations` drive PGD. With
/// `clip01` (the default) adversarials stay valid normalized signals.
/// `ball_radius` optionally projects every PGD iterate onto an L-infinity
/// ball around the original; it is off by default — the iteration then
/// projects onto the data range only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub mode: AttackMode,
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub clip01: bool,
    pub target: Option<FaultClass>,
    pub ball_radius: Option<f64>,
}

impl AttackConfig {
    pub fn fgsm_untargeted(epsilon: f64) -> Self {
        Self {
            method: AttackMethod::Fgsm,
            mode: AttackMode::Untargeted,
            epsilon,
            ..Self::default()
        }
    }

    pub fn pgd_untargeted(alpha: f64, iterations: usize) -> Self {
        Self {
            method: AttackMethod::Pgd,
            mode: AttackMode::Untargeted,
            alpha,
            iterations,
            ..Self::default()
        }
    }

    pub fn targeted(mut self, target: Option<FaultClass>) -> Self {
        self.mode = AttackMode::Targeted;
        self.target = target;
        self
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let nonneg = |v: f64, what: &str| {
            if v < 0.0 || !v.is_finite() {
                Err(AttackError::Config(format!("{what} must be finite and >= 0, got {v}")))
            } else {
                Ok(())
            }
        };
        match self.method {
            AttackMethod::Fgsm => nonneg(self.epsilon, "epsilon")?,
            AttackMethod::Pgd => {
                nonneg(self.alpha, "alpha")?;
                if self.iterations == 0 {
                    return Err(AttackError::Config("pgd needs iterations >= 1".into()));
                }
            }
        }
        if let Some(r) = self.ball_radius {
            nonneg(r, "ball radius")?;
        }
        Ok(())
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            method: AttackMethod::Fgsm,
            mode: AttackMode::Untargeted,
            epsilon: 0.03,
            alpha: 0.005,
            iterations: 20,
            clip01: true,
            target: None,
            ball_radius: None,
        }
    }
}

/// `sign` with the 0 -> 0 convention.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adversarial outputs paired with their originals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdvBatch {
    pub rows: usize,
    /// Flat (rows x 2048) sample arrays.
    pub originals: Vec<f64>,
    pub adversarials: Vec<f64>,
    /// `adversarials - originals`, exactly.
    pub noise: Vec<f64>,
    pub true_labels: Vec<usize>,
    pub orig_pred: Vec<usize>,
    pub adv_pred: Vec<usize>,
    /// Untargeted: prediction left the true class. Targeted: prediction
    /// reached the target.
    pub success: Vec<bool>,
    /// Per-row segmental energy-ratio cost; `+inf` flags zero-noise rows.
    pub cost: Vec<f64>,
    pub target: Option<FaultClass>,
}

impl AdvBatch {
    pub fn original_row(&self, i: usize) -> &[f64] {
        &self.originals[i * WINDOW_LEN..(i + 1) * WINDOW_LEN]
    }

    pub fn adversarial_row(&self, i: usize) -> &[f64] {
        &self.adversarials[i * WINDOW_LEN..(i + 1) * WINDOW_LEN]
    }

    pub fn noise_row(&self, i: usize) -> &[f64] {
        &self.noise[i * WINDOW_LEN..(i + 1) * WINDOW_LEN]
    }

    /// Success count over all rows.
    pub fn successes(&self) -> usize {
        self.success.iter().filter(|&&s| s).count()
    }

    /// Recompute per-row costs under a segmentation policy.
    pub fn fill_costs(&mut self, cfg: CostConfig) -> Result<(), AttackError> {
        let mut costs = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            costs.push(attack_cost(self.original_row(i), self.noise_row(i), cfg)?);
        }
        self.cost = costs;
        Ok(())
    }

    fn append(&mut self, mut other: AdvBatch) {
        self.rows += other.rows;
        self.originals.append(&mut other.originals);
        self.adversarials.append(&mut other.adversarials);
        self.noise.append(&mut other.noise);
        self.true_labels.append(&mut other.true_labels);
        self.orig_pred.append(&mut other.orig_pred);
        self.adv_pred.append(&mut other.adv_pred);
        self.success.append(&mut other.success);
        self.cost.append(&mut other.cost);
        self.target = other.target;
    }
}

fn map_grad_err(e: ModelError, iteration: usize) -> AttackError {
    match e {
        ModelError::Autodiff(AutodiffError::NonFinite { .. }) => {
            AttackError::NonFiniteGradient { iteration }
        }
        other => AttackError::Model(other),
    }
}

/// One signed step on every coordinate, then projection.
fn signed_step(
    x: &mut [f64],
    grad: &[f64],
    step: f64,
    clip01: bool,
    ball: Option<(&[f64], f64)>,
) {
    for (i, (v, &g)) in x.iter_mut().zip(grad).enumerate() {
        *v += step * sign(g);
        if let Some((origin, radius)) = ball {
            *v = v.clamp(origin[i] - radius, origin[i] + radius);
        }
        if clip01 {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

fn finish_batch(
    model: &TrainedModel,
    x: &Tensor,
    adv_data: Vec<f64>,
    true_labels: &[usize],
    mode: AttackMode,
    target: Option<FaultClass>,
) -> Result<AdvBatch, AttackError> {
    let rows = x.shape()[0];
    let adv = Tensor::new(x.shape().to_vec(), adv_data)?;
    let (_, orig_pred) = model.predict_tensor(x)?;
    let (_, adv_pred) = model.predict_tensor(&adv)?;
    let originals = x.data().to_vec();
    let adversarials = adv.into_data();
    let noise: Vec<f64> = adversarials
        .iter()
        .zip(&originals)
        .map(|(a, o)| a - o)
        .collect();
    let success: Vec<bool> = match mode {
        AttackMode::Untargeted => adv_pred
            .iter()
            .zip(true_labels)
            .map(|(p, t)| p != t)
            .collect(),
        AttackMode::Targeted => {
            let t = target
                .ok_or_else(|| AttackError::Config("targeted mode needs a target class".into()))?
                .id();
            adv_pred.iter().map(|&p| p == t).collect()
        }
    };
    let mut batch = AdvBatch {
        rows,
        originals,
        adversarials,
        noise,
        true_labels: true_labels.to_vec(),
        orig_pred,
        adv_pred,
        success,
        cost: Vec::new(),
        target,
    };
    batch.fill_costs(CostConfig::default())?;
    Ok(batch)
}

/// Untargeted FGSM: `x' = x + epsilon * sign(grad_x J(theta, x, y))`,
/// clamped to `[0, 1]` when `clip01`.
pub fn fgsm_untargeted(
    model: &TrainedModel,
    x: &Tensor,
    true_labels: &[usize],
    epsilon: f64,
    clip01: bool,
) -> Result<AdvBatch, AttackError> {
    let grad = model
        .input_gradient(x, true_labels)
        .map_err(|e| map_grad_err(e, 0))?;
    let mut adv = x.data().to_vec();
    signed_step(&mut adv, grad.data(), epsilon, clip01, None);
    finish_batch(model, x, adv, true_labels, AttackMode::Untargeted, None)
}

/// Targeted FGSM: `x' = x - epsilon * sign(grad_x J(theta, x, y_target))`.
pub fn fgsm_targeted(
    model: &TrainedModel,
    x: &Tensor,
    true_labels: &[usize],
    target: FaultClass,
    epsilon: f64,
    clip01: bool,
) -> Result<AdvBatch, AttackError> {
    let rows = x.shape()[0];
    let target_labels = vec![target.id(); rows];
    let grad = model
        .input_gradient(x, &target_labels)
        .map_err(|e| map_grad_err(e, 0))?;
    let mut adv = x.data().to_vec();
    signed_step(&mut adv, grad.data(), -epsilon, clip01, None);
    finish_batch(model, x, adv, true_labels, AttackMode::Targeted, Some(target))
}

/// PGD: `x_0 = x`, then `iterations` signed steps of size `alpha`
/// (ascending on the true labels, or descending on the target), clamping
/// to `[0, 1]` after every step when `clip01`.
pub fn pgd(
    model: &TrainedModel,
    x: &Tensor,
    true_labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdvBatch, AttackError> {
    cfg.validate()?;
    let rows = x.shape()[0];
    let (step_labels, step_sign, target) = match cfg.mode {
        AttackMode::Untargeted => (true_labels.to_vec(), 1.0, None),
        AttackMode::Targeted => {
            let t = cfg
                .target
                .ok_or_else(|| AttackError::Config("targeted mode needs a target class".into()))?;
            (vec![t.id(); rows], -1.0, Some(t))
        }
    };
    let origin = x.data().to_vec();
    let mut current = x.clone();
    for iteration in 0..cfg.iterations {
        let grad = model
            .input_gradient(&current, &step_labels)
            .map_err(|e| map_grad_err(e, iteration))?;
        let ball = cfg.ball_radius.map(|r| (origin.as_slice(), r));
        signed_step(
            current.data_mut(),
            grad.data(),
            step_sign * cfg.alpha,
            cfg.clip01,
            ball,
        );
    }
    finish_batch(model, x, current.into_data(), true_labels, cfg.mode, target)
}

/// Evaluation batches: chunks of [`EVAL_BATCH`] rows, except that a
/// trailing single row folds into the previous chunk so batch-stat layers
/// always see at least two rows.
pub fn eval_chunks(len: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + EVAL_BATCH).min(len);
        out.push(start..end);
        start = end;
    }
    let n = out.len();
    if n >= 2 && out[n - 1].len() == 1 {
        let merged = out[n - 2].start..out[n - 1].end;
        out.truncate(n - 2);
        out.push(merged);
    }
    out
}

/// Run a configured attack over test windows, applying the evaluation
/// protocol:
///
/// - untargeted: only rows the model originally classifies correctly are
///   attacked and scored;
/// - targeted: rows whose true label equals the target are excluded.
///
/// Rows are attacked in evaluation batches of 64 and the returned batch
/// carries per-row costs under `cost_cfg`.
pub fn run_attack(
    model: &TrainedModel,
    windows: &[SignalWindow],
    cfg: &AttackConfig,
    cost_cfg: CostConfig,
) -> Result<AdvBatch, AttackError> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(AttackError::EmptyEligibleSet("no windows given".into()));
    }
    let eligible: Vec<SignalWindow> = match cfg.mode {
        AttackMode::Untargeted => {
            let (_, preds) = model.predict(windows)?;
            windows
                .iter()
                .zip(&preds)
                .filter(|(w, &p)| w.label.id() == p)
                .map(|(w, _)| w.clone())
                .collect()
        }
        AttackMode::Targeted => {
            let target = cfg
                .target
                .ok_or_else(|| AttackError::Config("targeted mode needs a target class".into()))?;
            windows.iter().filter(|w| w.label != target).cloned().collect()
        }
    };
    if eligible.is_empty() {
        return Err(AttackError::EmptyEligibleSet(format!(
            "{} {} left no rows to attack",
            cfg.method.name(),
            cfg.mode.name()
        )));
    }

    let mut combined = AdvBatch::default();
    for range in eval_chunks(eligible.len()) {
        let chunk = &eligible[range];
        let x = windows_to_tensor(chunk);
        let labels = labels_of(chunk);
        let mut batch = match (cfg.method, cfg.mode) {
            (AttackMethod::Fgsm, AttackMode::Untargeted) => {
                fgsm_untargeted(model, &x, &labels, cfg.epsilon, cfg.clip01)?
            }
            (AttackMethod::Fgsm, AttackMode::Targeted) => fgsm_targeted(
                model,
                &x,
                &labels,
                cfg.target.expect("validated above"),
                cfg.epsilon,
                cfg.clip01,
            )?,
            (AttackMethod::Pgd, _) => pgd(model, &x, &labels, cfg)?,
        };
        batch.fill_costs(cost_cfg)?;
        combined.append(batch);
    }
    Ok(combined)
}

/// Run a targeted attack against every class as the target (the sweep the
/// reports aggregate), or just the pinned target when `cfg.target` is set.
pub fn targeted_sweep(
    model: &TrainedModel,
    windows: &[SignalWindow],
    cfg: &AttackConfig,
    cost_cfg: CostConfig,
) -> Result<Vec<(FaultClass, AdvBatch)>, AttackError> {
    let targets: Vec<FaultClass> = match cfg.target {
        Some(t) => vec![t],
        None => FaultClass::ALL.to_vec(),
    };
    let mut out = Vec::with_capacity(targets.len());
    for target in targets {
        let mut per = *cfg;
        per.mode = AttackMode::Targeted;
        per.target = Some(target);
        out.push((target, run_attack(model, windows, &per, cost_cfg)?));
    }
    Ok(out)
}

/// JSON side of an exported batch; sample payloads go to raw-f64le files.
#[derive(Debug, Serialize, Deserialize)]
pub struct AdvBatchMeta {
    pub model: String,
    pub config: AttackConfig,
    pub rows: usize,
    pub window_len: usize,
    pub true_labels: Vec<usize>,
    pub orig_pred: Vec<usize>,
    pub adv_pred: Vec<usize>,
    pub success: Vec<bool>,
    /// `None` marks the zero-noise +inf sentinel.
    pub cost: Vec<Option<f64>>,
    pub originals_file: String,
    pub adversarials_file: String,
}

impl AdvBatch {
    /// Write `<stem>.json`, `<stem>.orig.f64le` and `<stem>.adv.f64le`.
    pub fn export(
        &self,
        dir: &Path,
        stem: &str,
        model_name: &str,
        cfg: &AttackConfig,
    ) -> Result<Vec<PathBuf>, AttackError> {
        let orig_name = format!("{stem}.orig.f64le");
        let adv_name = format!("{stem}.adv.f64le");
        let meta = AdvBatchMeta {
            model: model_name.to_string(),
            config: *cfg,
            rows: self.rows,
            window_len: WINDOW_LEN,
            true_labels: self.true_labels.clone(),
            orig_pred: self.orig_pred.clone(),
            adv_pred: self.adv_pred.clone(),
            success: self.success.clone(),
            cost: self
                .cost
                .iter()
                .map(|&c| if c.is_finite() { Some(c) } else { None })
                .collect(),
            originals_file: orig_name.clone(),
            adversarials_file: adv_name.clone(),
        };
        std::fs::create_dir_all(dir)?;
        let json_path = dir.join(format!("{stem}.json"));
        let orig_path = dir.join(&orig_name);
        let adv_path = dir.join(&adv_name);
        std::fs::write(&json_path, serde_json::to_string_pretty(&meta)?)?;
        crate::signal::write_raw_f64le(&orig_path, &self.originals)
            .map_err(|e| AttackError::Config(e.to_string()))?;
        crate::signal::write_raw_f64le(&adv_path, &self.adversarials)
            .map_err(|e| AttackError::Config(e.to_string()))?;
        Ok(vec![json_path, orig_path, adv_path])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build, init_parameters, StatsMode, TrainMetrics};
    use crate::signal::{synth_class_windows, FaultClass};

    fn untrained(name: &str, seed: u64) -> TrainedModel {
        let spec = build(name).unwrap();
        let params = init_parameters(&spec, seed).unwrap();
        TrainedModel {
            spec,
            params,
            train_seed: seed,
            metrics: TrainMetrics::default(),
            dn_mode: StatsMode::Batch,
        }
    }

    fn sample_windows(n_per_class: usize) -> Vec<SignalWindow> {
        let mut out = Vec::new();
        for class in [FaultClass::Normal, FaultClass::IR007, FaultClass::OR021] {
            out.extend(synth_class_windows(class, n_per_class, 2048, 9).unwrap());
        }
        out
    }

    #[test]
    fn sign_convention() {
        assert_eq!(sign(3.2), 1.0);
        assert_eq!(sign(-0.001), -1.0);
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let model = untrained("cnn1d", 1);
        let ws = sample_windows(3);
        let x = windows_to_tensor(&ws);
        let y = labels_of(&ws);
        let batch = fgsm_untargeted(&model, &x, &y, 0.0, true).unwrap();
        assert_eq!(batch.adversarials, batch.originals);
        assert!(batch.noise.iter().all(|&n| n == 0.0));
        assert!(batch.cost.iter().all(|&c| c == f64::INFINITY));
        // Prediction unchanged, so success tracks original errors exactly.
        for i in 0..batch.rows {
            assert_eq!(batch.success[i], batch.orig_pred[i] != batch.true_labels[i]);
        }
    }

    #[test]
    fn unclipped_fgsm_moves_every_nonzero_gradient_coordinate_by_epsilon() {
        let model = untrained("cnn1d", 2);
        let ws = sample_windows(2);
        let x = windows_to_tensor(&ws);
        let y = labels_of(&ws);
        let grad = model.input_gradient(&x, &y).unwrap();
        let eps = 0.03;
        let batch = fgsm_untargeted(&model, &x, &y, eps, false).unwrap();
        for (&n, &g) in batch.noise.iter().zip(grad.data()) {
            if g != 0.0 {
                assert!((n.abs() - eps).abs() < 1e-15);
            } else {
                assert_eq!(n, 0.0);
            }
        }
    }

    #[test]
    fn clip01_keeps_adversarials_in_range() {
        let model = untrained("cnn1d", 3);
        let ws = sample_windows(2);
        let x = windows_to_tensor(&ws);
        let y = labels_of(&ws);
        let cfg = AttackConfig {
            method: AttackMethod::Pgd,
            alpha: 0.2,
            iterations: 5,
            ..AttackConfig::default()
        };
        let batch = pgd(&model, &x, &y, &cfg).unwrap();
        assert!(batch.adversarials.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(batch.noise.iter().all(|&n| (-1.0..=1.0).contains(&n)));
        for i in 0..batch.noise.len() {
            assert_eq!(batch.noise[i], batch.adversarials[i] - batch.originals[i]);
        }
    }

    #[test]
    fn pgd_single_step_collapses_to_fgsm_bitwise() {
        let model = untrained("cnn1d", 4);
        let ws = sample_windows(4);
        let x = windows_to_tensor(&ws);
        let y = labels_of(&ws);
        let eps = 0.03;
        let fgsm = fgsm_untargeted(&model, &x, &y, eps, false).unwrap();
        let cfg = AttackConfig {
            method: AttackMethod::Pgd,
            alpha: eps,
            iterations: 1,
            clip01: false,
            ..AttackConfig::default()
        };
        let one_step = pgd(&model, &x, &y, &cfg).unwrap();
        assert_eq!(fgsm.adversarials.len(), one_step.adversarials.len());
        for (a, b) in fgsm.adversarials.iter().zip(&one_step.adversarials) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn attacks_leave_parameters_untouched_and_are_deterministic() {
        let model = untrained("cnn1d", 5);
        let before = model.params.clone();
        let ws = sample_windows(3);
        let cfg = AttackConfig {
            method: AttackMethod::Pgd,
            iterations: 3,
            ..AttackConfig::default()
        };
        let a = run_attack(&model, &ws, &cfg, CostConfig::default());
        let b = run_attack(&model, &ws, &cfg, CostConfig::default());
        assert_eq!(model.params, before);
        match (a, b) {
            (Ok(a), Ok(b)) => assert_eq!(a, b),
            (Err(AttackError::EmptyEligibleSet(_)), Err(AttackError::EmptyEligibleSet(_))) => {}
            other => panic!("mismatched outcomes: {other:?}"),
        }
    }

    #[test]
    fn targeted_zero_epsilon_success_is_preexisting_prediction() {
        let model = untrained("cnn1d", 6);
        let ws = sample_windows(3);
        let x = windows_to_tensor(&ws);
        let y = labels_of(&ws);
        let target = FaultClass::B014;
        let batch = fgsm_targeted(&model, &x, &y, target, 0.0, true).unwrap();
        for i in 0..batch.rows {
            assert_eq!(batch.success[i], batch.adv_pred[i] == target.id());
            assert_eq!(batch.adv_pred[i], batch.orig_pred[i]);
        }
    }

    #[test]
    fn targeted_run_excludes_rows_of_target_class() {
        let model = untrained("cnn1d", 7);
        let ws = sample_windows(3); // Normal, IR007, OR021
        let cfg = AttackConfig {
            epsilon: 0.01,
            ..AttackConfig::default()
        }
        .targeted(Some(FaultClass::IR007));
        let batch = run_attack(&model, &ws, &cfg, CostConfig::default()).unwrap();
        assert_eq!(batch.rows, 6); // 3 classes x 3 windows minus the IR007 rows
        assert!(batch.true_labels.iter().all(|&t| t != FaultClass::IR007.id()));
    }

    #[test]
    fn targeted_on_only_target_class_is_empty_eligible_error() {
        let model = untrained("cnn1d", 8);
        let ws = synth_class_windows(FaultClass::B007, 4, 2048, 1).unwrap();
        let cfg = AttackConfig::default().targeted(Some(FaultClass::B007));
        assert!(matches!(
            run_attack(&model, &ws, &cfg, CostConfig::default()),
            Err(AttackError::EmptyEligibleSet(_))
        ));
    }

    #[test]
    fn eval_chunks_merge_trailing_single_row() {
        assert_eq!(eval_chunks(64), vec![0..64]);
        assert_eq!(eval_chunks(129), vec![0..64, 64..129]);
        assert_eq!(eval_chunks(65), vec![0..65]);
        assert_eq!(eval_chunks(1), vec![0..1]);
        assert_eq!(eval_chunks(130), vec![0..64, 64..128, 128..130]);
    }

    #[test]
    fn export_round_trip_files() {
        let model = untrained("cnn1d", 9);
        let ws = sample_windows(2);
        let cfg = AttackConfig::fgsm_untargeted(0.02);
        let batch = run_attack(&model, &ws, &cfg, CostConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = batch.export(dir.path(), "demo", "cnn1d", &cfg).unwrap();
        assert_eq!(files.len(), 3);
        let meta: AdvBatchMeta =
            serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
        assert_eq!(meta.rows, batch.rows);
        let orig_bytes = std::fs::read(&files[1]).unwrap();
        assert_eq!(orig_bytes.len(), batch.rows * WINDOW_LEN * 8);
    }
}
