//! The DN defensive layer and model surgery around it.
//!
//! DN standardizes each feature position across the evaluated batch and
//! applies a learned scalar affine (`gamma`, `dn_shift`). Attached before
//! the first convolution of a victim model it blunts gradient-sign
//! attacks: batch-common perturbation components are absorbed by the batch
//! statistics, and the learned affine restores trainability. The layer is
//! fully differentiable, so attackers see the coupling rather than a
//! masked gradient.

use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor};
use crate::models::{LayerSpec, ModelError, ModelSpec, DN_EPS};

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("spec {0:?} already begins with a DN layer; refusing to stack another")]
    AlreadyDefended(String),
    #[error("spec {0:?} has no convolutional layer to defend")]
    NoConvLayer(String),
    #[error("spec {0:?} has no normalization layers to ablate")]
    NoNormalization(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Learnable parameters of the DN layer plus its stabilizer.
///
/// `dn_shift` is the affine offset of the layer — distinct from the attack
/// perturbation; `eps_stab` the small constant under the square root —
/// distinct from the FGSM budget.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DnParams {
    pub gamma: f64,
    pub dn_shift: f64,
    pub eps_stab: f64,
}

impl Default for DnParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            dn_shift: 0.0,
            eps_stab: DN_EPS,
        }
    }
}

impl DnParams {
    pub fn validate(&self) -> Result<(), DefenseError> {
        if !(self.eps_stab > 0.0) {
            return Err(DefenseError::Config("eps_stab must be positive".into()));
        }
        if !self.gamma.is_finite() || !self.dn_shift.is_finite() {
            return Err(DefenseError::Config("gamma and dn_shift must be finite".into()));
        }
        Ok(())
    }
}

/// Standalone DN forward in batch-stats mode on a `(m, ..)` batch:
/// per-position standardization across the batch, then
/// `y = gamma * xhat + dn_shift`.
pub fn dn_forward(batch: &Tensor, params: &DnParams) -> Result<Tensor, DefenseError> {
    params.validate()?;
    let mut g = Graph::new();
    let x = g.leaf(batch.clone());
    let gamma = g.leaf(Tensor::scalar(params.gamma));
    let shift = g.leaf(Tensor::scalar(params.dn_shift));
    let y = g.dn_norm(x, gamma, shift, params.eps_stab).map_err(|e| match e {
        AutodiffError::State(msg) => DefenseError::Config(msg),
        other => DefenseError::Autodiff(other),
    })?;
    Ok(g.value(y).clone())
}

/// Insert one DN layer before the first convolution (position 0).
/// The returned spec is renamed with a `_dn` suffix and must be retrained:
/// the DN affine is learned.
pub fn attach_defense(spec: &ModelSpec) -> Result<ModelSpec, DefenseError> {
    if matches!(spec.layers.first(), Some(LayerSpec::Dn)) {
        return Err(DefenseError::AlreadyDefended(spec.name.clone()));
    }
    if !spec.layers.iter().any(|l| matches!(l, LayerSpec::Conv1d { .. })) {
        return Err(DefenseError::NoConvLayer(spec.name.clone()));
    }
    let mut layers = Vec::with_capacity(spec.layers.len() + 1);
    layers.push(LayerSpec::Dn);
    layers.extend(spec.layers.iter().cloned());
    let defended = ModelSpec {
        name: format!("{}_dn", spec.name),
        layers,
        uses_normalization: true,
    };
    defended.validate()?;
    Ok(defended)
}

/// Remove every normalization layer (batchnorm and DN). The returned spec
/// is renamed with a `_nonorm` suffix and must be retrained.
pub fn ablate_normalization(spec: &ModelSpec) -> Result<ModelSpec, DefenseError> {
    if !spec.uses_normalization || !spec.layers.iter().any(LayerSpec::is_normalization) {
        return Err(DefenseError::NoNormalization(spec.name.clone()));
    }
    let layers: Vec<LayerSpec> = spec
        .layers
        .iter()
        .filter(|l| !l.is_normalization())
        .cloned()
        .collect();
    let ablated = ModelSpec {
        name: format!("{}_nonorm", spec.name),
        layers,
        uses_normalization: false,
    };
    ablated.validate()?;
    Ok(ablated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::models::build;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn dn_standardizes_standard_normal_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let (m, f) = (256, 32);
        let data: Vec<f64> = (0..m * f).map(|_| gauss.sample(&mut rng)).collect();
        let x = Tensor::new(vec![m, f], data).unwrap();
        let y = dn_forward(&x, &DnParams::default()).unwrap();
        for j in 0..f {
            let col: Vec<f64> = (0..m).map(|i| y.data()[i * f + j]).collect();
            let mean = col.iter().sum::<f64>() / m as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            assert!(mean.abs() < 0.05, "feature {j} mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "feature {j} var {var}");
        }
    }

    #[test]
    fn dn_exact_standardization_with_tiny_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (m, f) = (64, 16);
        let data: Vec<f64> = (0..m * f).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = Tensor::new(vec![m, f], data).unwrap();
        let params = DnParams { eps_stab: 1e-14, ..DnParams::default() };
        let y = dn_forward(&x, &params).unwrap();
        for j in 0..f {
            let col: Vec<f64> = (0..m).map(|i| y.data()[i * f + j]).collect();
            let mean = col.iter().sum::<f64>() / m as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            assert!(mean.abs() < 1e-9, "feature {j} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "feature {j} var {var}");
        }
    }

    #[test]
    fn constant_feature_column_maps_to_shift() {
        let (m, f) = (8, 4);
        let mut data = vec![0.0; m * f];
        for i in 0..m {
            data[i * f] = 2.5; // column 0 constant
            for j in 1..f {
                data[i * f + j] = (i * f + j) as f64 * 0.3;
            }
        }
        let x = Tensor::new(vec![m, f], data).unwrap();
        let params = DnParams { gamma: 3.0, dn_shift: -0.7, ..DnParams::default() };
        let y = dn_forward(&x, &params).unwrap();
        for i in 0..m {
            assert!((y.data()[i * f] - params.dn_shift).abs() < 1e-9);
        }
    }

    #[test]
    fn single_row_batch_directs_to_stored_statistics() {
        let x = Tensor::new(vec![1, 8], vec![0.5; 8]).unwrap();
        match dn_forward(&x, &DnParams::default()) {
            Err(DefenseError::Config(msg)) => assert!(msg.contains("stored statistics")),
            other => panic!("want config error, got {other:?}"),
        }
    }

    #[test]
    fn dn_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (m, f) = (6, 10);
        let data: Vec<f64> = (0..m * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..m * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = DnParams { gamma: 1.3, dn_shift: 0.4, ..DnParams::default() };

        // Analytic gradient through the graph op.
        let analytic = {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::new(vec![m, f], data.clone()).unwrap().with_grad());
            let gamma = g.leaf(Tensor::scalar(params.gamma));
            let shift = g.leaf(Tensor::scalar(params.dn_shift));
            let y = g.dn_norm(x, gamma, shift, params.eps_stab).unwrap();
            let loss = g.weighted_sum(y, &probe).unwrap();
            let grads = g.backward(loss).unwrap();
            grads.get(x).unwrap().data().to_vec()
        };

        // Oracle: forward-only evaluations.
        let coords: Vec<usize> = (0..m * f).collect();
        let numeric = gradcheck::central_diff(
            |vals: &[f64]| {
                let x = Tensor::new(vec![m, f], vals.to_vec()).unwrap();
                let y = dn_forward(&x, &params).unwrap();
                y.data().iter().zip(&probe).map(|(a, b)| a * b).sum()
            },
            &data,
            &coords,
            gradcheck::DEFAULT_STEP,
        );
        let picked: Vec<f64> = coords.iter().map(|&i| analytic[i]).collect();
        let err = gradcheck::max_rel_error(&picked, &numeric);
        assert!(err < gradcheck::REL_TOL, "max rel err {err}");
    }

    #[test]
    fn attach_inserts_dn_at_front() {
        let base = build("alexnet1d").unwrap();
        let defended = attach_defense(&base).unwrap();
        assert_eq!(defended.layers[0], LayerSpec::Dn);
        assert_eq!(defended.layers.len(), base.layers.len() + 1);
        assert!(defended.uses_normalization);
        assert_eq!(defended.name, "alexnet1d_dn");
        // Stacking is an explicit error.
        assert!(matches!(
            attach_defense(&defended),
            Err(DefenseError::AlreadyDefended(_))
        ));
    }

    #[test]
    fn ablate_removes_all_normalization() {
        let base = build("wdcnn").unwrap();
        let ablated = ablate_normalization(&base).unwrap();
        assert!(!ablated.layers.iter().any(|l| l.is_normalization()));
        assert!(!ablated.uses_normalization);
        assert!(ablated.validate().is_ok());
        // Ablating a norm-free spec is a no-op error.
        assert!(matches!(
            ablate_normalization(&ablated),
            Err(DefenseError::NoNormalization(_))
        ));
        assert!(matches!(
            ablate_normalization(&build("alexnet1d").unwrap()),
            Err(DefenseError::NoNormalization(_))
        ));
    }

    #[test]
    fn attach_then_ablate_restores_kind_sequence() {
        let base = build("alexnet1d").unwrap();
        let defended = attach_defense(&base).unwrap();
        let restored = ablate_normalization(&defended).unwrap();
        let kinds = |s: &ModelSpec| s.layers.iter().map(|l| l.kind_name()).collect::<Vec<_>>();
        assert_eq!(kinds(&restored), kinds(&base));
    }
}
