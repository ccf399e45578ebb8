//! Barren-plateau diagnostics: first-step gradient variance across random
//! initializations and log2 slope fits against system size.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::egate::{EgateConfig, EgateError, EgateModel, EgateTrainConfig, GraphShape, Merge, Pooling};
use crate::hgraph::{encode, FeatureScheme, GraphError};
use crate::nnvqe::{hidden_widths, NnvqeError, Predictor, PredictorConfig, Variant};
use crate::pauli::{build_family, Family, FamilySpec, PauliError};
use crate::qsim::{adjoint_grad, AnsatzLayout, QsimError};
use crate::seed::derive_seed;
use crate::Hamiltonian;

/// Reconstruction loss an encoder must reach before its latent is used.
pub const LATENT_TARGET_LOSS: f64 = 1e-5;

/// `(n, D)` pairs `(3, 1)` through `(9, 7)`.
pub const LADDER: [(usize, usize); 7] = [(3, 1), (4, 2), (5, 3), (6, 4), (7, 5), (8, 6), (9, 7)];

#[derive(Debug, Error)]
pub enum BpError {
    #[error("need at least 2 trials, got {0}")]
    TooFewTrials(usize),
    #[error("EGATE-conditioned run needs an encoder trained below the target loss")]
    UntrainedEncoder,
    #[error("need at least 3 positive points to fit, got {0}")]
    TooFewPoints(usize),
    #[error("gradient matrix rows have unequal lengths")]
    Ragged,
    #[error(transparent)]
    Qsim(#[from] QsimError),
    #[error(transparent)]
    Nnvqe(#[from] NnvqeError),
    #[error(transparent)]
    Egate(#[from] EgateError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Pauli(#[from] PauliError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    Dim1,
    Dim5,
    DimN,
    DimN2,
}

impl LatentMode {
    pub const ALL: [LatentMode; 4] = [LatentMode::Dim1, LatentMode::Dim5, LatentMode::DimN, LatentMode::DimN2];

    /// Merge and pooling producing this latent width for an `n`-qubit ring.
    pub fn egate_config(self, n: usize) -> EgateConfig {
        let base = EgateConfig::new(3, 16);
        match self {
            LatentMode::Dim1 => base.with_pooling(Pooling::LinearAfterSum { target: 1 }),
            LatentMode::Dim5 => base.with_pooling(Pooling::LinearAfterSum { target: 5 }),
            LatentMode::DimN => base.with_pooling(Pooling::Sum),
            LatentMode::DimN2 => base.with_merge(Merge::Concat).with_pooling(Pooling::MlpFlatten {
                target: n * n,
                hidden: 32,
            }),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LatentMode::Dim1 => "dim1",
            LatentMode::Dim5 => "dim5",
            LatentMode::DimN => "dimN",
            LatentMode::DimN2 => "dimN2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "method", content = "latent", rename_all = "snake_case")]
pub enum BpMethod {
    Vqe,
    Nnvqe,
    EgateNnvqe(LatentMode),
}

impl BpMethod {
    pub fn label(&self) -> String {
        match self {
            BpMethod::Vqe => "vqe".into(),
            BpMethod::Nnvqe => "nnvqe".into(),
            BpMethod::EgateNnvqe(m) => format!("egate_nnvqe_{}", m.label()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpRun {
    pub method: BpMethod,
    pub n: usize,
    pub depth: usize,
    pub trials: usize,
    pub seed: u64,
}

impl BpRun {
    pub fn layout(&self) -> AnsatzLayout {
        AnsatzLayout::new(self.n, self.depth)
    }
}

/// The fixed instance: ring XXZ with `Jzz = 1`.
pub fn bp_hamiltonian(n: usize) -> Result<Hamiltonian, BpError> {
    Ok(build_family(&FamilySpec::new(Family::Xxz1d, n, &[("Jzz", 1.0)]))?)
}

/// Encoder output for the fixed instance, kept constant across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenLatent {
    pub mode: LatentMode,
    pub latent: Vec<f64>,
    pub final_loss: f64,
    pub steps: usize,
}

impl FrozenLatent {
    pub fn converged(&self) -> bool {
        self.final_loss < LATENT_TARGET_LOSS
    }
}

/// Train a fresh encoder on `h` alone until the loss drops below the target
/// or `max_steps` pass.
pub fn pretrain_latent(
    h: &Hamiltonian,
    mode: LatentMode,
    learning_rate: f64,
    max_steps: usize,
    seed: u64,
) -> Result<FrozenLatent, BpError> {
    let g = encode(h, &FeatureScheme::one_hot())?;
    let mut model = EgateModel::<f64>::new(mode.egate_config(h.n()), GraphShape::of(&g), seed)?;
    let mut cfg = EgateTrainConfig::full_batch(max_steps, learning_rate, seed);
    cfg.target_loss = Some(LATENT_TARGET_LOSS);
    let report = model.train(std::slice::from_ref(&g), &cfg)?;
    Ok(FrozenLatent {
        mode,
        latent: model.encode_latent(&g)?,
        final_loss: report.final_loss,
        steps: report.steps,
    })
}

/// One gradient row per trial, `dC/dtheta` before any update.
///
/// VQE trials draw `theta ~ U[0, 2pi]^P`. Network trials draw every weight and
/// bias from `N(0, 1)` and differentiate at `theta = f(input)`.
pub fn first_step_gradients(run: &BpRun, h: &Hamiltonian, latent: Option<&FrozenLatent>) -> Result<Vec<Vec<f64>>, BpError> {
    if run.trials < 2 {
        return Err(BpError::TooFewTrials(run.trials));
    }
    let layout = run.layout();
    let input: Option<(Variant, Vec<f64>)> = match run.method {
        BpMethod::Vqe => None,
        BpMethod::Nnvqe => Some((Variant::Baseline, vec![1.0])),
        BpMethod::EgateNnvqe(mode) => match latent {
            Some(l) if l.converged() && l.mode == mode => Some((Variant::EgateConditioned, l.latent.clone())),
            _ => return Err(BpError::UntrainedEncoder),
        },
    };
    (0..run.trials)
        .into_par_iter()
        .map(|t| {
            let seed = derive_seed(run.seed, &run.method.label(), t as u64);
            let theta = match &input {
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    (0..layout.param_count()).map(|_| rng.random_range(0.0..TAU)).collect()
                }
                Some((variant, x)) => {
                    let cfg = PredictorConfig {
                        variant: *variant,
                        input_dim: x.len(),
                        hidden: hidden_widths(1),
                        layout,
                        init_std: 1.0,
                    };
                    Predictor::new(cfg, seed)?.predict(x)?
                }
            };
            Ok(adjoint_grad(h, &layout, &theta)?.1)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceStats {
    pub variances: Vec<f64>,
    pub mean_var: f64,
    /// Sample standard deviation of the variance vector.
    pub sd_var: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance of `xs` (zero for fewer than 2 values).
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Per-column unbiased variance of a trials-by-parameters matrix.
pub fn variance_stats(matrix: &[Vec<f64>]) -> Result<VarianceStats, BpError> {
    if matrix.len() < 2 {
        return Err(BpError::TooFewTrials(matrix.len()));
    }
    let p = matrix[0].len();
    if matrix.iter().any(|r| r.len() != p) {
        return Err(BpError::Ragged);
    }
    let variances: Vec<f64> = (0..p)
        .map(|c| sample_variance(&matrix.iter().map(|r| r[c]).collect::<Vec<_>>()))
        .collect();
    Ok(VarianceStats {
        mean_var: mean(&variances),
        sd_var: sample_variance(&variances).sqrt(),
        variances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Log2Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `n` values dropped for a nonpositive variance.
    pub excluded: Vec<f64>,
}

impl Log2Fit {
    pub fn predict(&self, n: f64) -> f64 {
        self.intercept + self.slope * n
    }
}

/// Ordinary least squares of `log2(mean_var)` on `n`.
pub fn log2_fit(points: &[(f64, f64)]) -> Result<Log2Fit, BpError> {
    let mut excluded = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(n, v) in points {
        if v > 0.0 && v.is_finite() {
            xs.push(n);
            ys.push(v.log2());
        } else {
            excluded.push(n);
        }
    }
    if xs.len() < 3 {
        return Err(BpError::TooFewPoints(xs.len()));
    }
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(Log2Fit {
        slope,
        intercept,
        r2,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpRow {
    pub method: String,
    pub n: usize,
    pub depth: usize,
    pub params: usize,
    pub mean_var: f64,
    pub sd_var: f64,
}

pub fn bp_csv(rows: &[BpRow]) -> String {
    let mut out = String::from("method,n,D,P,mean_var,sd_var\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{},{}\n", r.method, r.n, r.depth, r.params, r.mean_var, r.sd_var));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::parameter_shift_grad;

    #[test]
    fn zero_hamiltonian_has_zero_gradients() {
        let h = Hamiltonian::new(3).unwrap();
        let run = BpRun {
            method: BpMethod::Vqe,
            n: 3,
            depth: 1,
            trials: 4,
            seed: 0,
        };
        let g = first_step_gradients(&run, &h, None).unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.iter().flatten().all(|&x| x == 0.0));
        assert_eq!(g[0].len(), 24);
    }

    #[test]
    fn rows_match_parameter_shift_replay() {
        let h = bp_hamiltonian(3).unwrap();
        let run = BpRun {
            method: BpMethod::Vqe,
            n: 3,
            depth: 1,
            trials: 3,
            seed: 9,
        };
        let g = first_step_gradients(&run, &h, None).unwrap();
        for (t, row) in g.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(9, "vqe", t as u64));
            let theta: Vec<f64> = (0..24).map(|_| rng.random_range(0.0..TAU)).collect();
            let ps = parameter_shift_grad(&h, &run.layout(), &theta).unwrap();
            for (a, b) in row.iter().zip(&ps) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn encoder_modes_need_converged_latent() {
        let h = bp_hamiltonian(3).unwrap();
        let run = BpRun {
            method: BpMethod::EgateNnvqe(LatentMode::Dim1),
            n: 3,
            depth: 1,
            trials: 2,
            seed: 0,
        };
        assert!(matches!(first_step_gradients(&run, &h, None), Err(BpError::UntrainedEncoder)));
        let stale = FrozenLatent {
            mode: LatentMode::Dim1,
            latent: vec![0.3],
            final_loss: 1e-3,
            steps: 10,
        };
        assert!(matches!(first_step_gradients(&run, &h, Some(&stale)), Err(BpError::UntrainedEncoder)));
    }

    #[test]
    fn variance_of_constant_column_is_zero() {
        let m = vec![vec![1.0, 2.0], vec![1.0, 4.0], vec![1.0, 6.0]];
        let s = variance_stats(&m).unwrap();
        assert_eq!(s.variances, vec![0.0, 4.0]);
        assert_eq!(s.mean_var, 2.0);
    }

    #[test]
    fn exact_power_of_two_fits_perfectly() {
        let pts: Vec<(f64, f64)> = (3..8).map(|n| (n as f64, 2f64.powi(-n))).collect();
        let f = log2_fit(&pts).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_points_are_excluded() {
        let pts = [(3.0, 0.5), (4.0, 0.0), (5.0, 0.125), (6.0, 0.0625), (7.0, -1.0)];
        let f = log2_fit(&pts).unwrap();
        assert_eq!(f.excluded, vec![4.0, 7.0]);
        assert!(matches!(log2_fit(&pts[..2]), Err(BpError::TooFewPoints(1))));
    }

    #[test]
    fn latent_widths_per_mode() {
        let h = bp_hamiltonian(4).unwrap();
        for (mode, dim) in [(LatentMode::Dim1, 1), (LatentMode::Dim5, 5), (LatentMode::DimN, 7), (LatentMode::DimN2, 16)] {
            let l = pretrain_latent(&h, mode, 1e-2, 0, 1).unwrap();
            assert_eq!(l.latent.len(), dim);
        }
    }
}
