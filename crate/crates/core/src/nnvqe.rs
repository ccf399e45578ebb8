//! Neural predictors of ansatz parameters: training on summed energies,
//! inference, and test-set metrics.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffnet::{Activation, DiffError, Init, Mlp, Optimizer, OptimizerKind, OutputActivation, ParamStore, Tape, Tensor};
use crate::egate::{EgateError, EgateModel};
use crate::hgraph::{encode, FeatureScheme, GraphError};
use crate::pauli::{build_family, FamilySpec, PauliError};
use crate::qsim::{adjoint_grad, expectation, fidelity, hea_prepare, AnsatzLayout, QsimError};
use crate::{Hamiltonian, Spectrum, Statevector};

/// Denominator floor for relative energy errors.
pub const MRE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum NnvqeError {
    #[error("EGATE-conditioned input needs a trained encoder")]
    MissingEncoder,
    #[error("input has {got} entries, predictor expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("empty instance set")]
    Empty,
    #[error("cost became non-finite at iteration {0}")]
    NonFiniteCost(usize),
    #[error("{0} oracle spectra for {1} instances")]
    SpectrumCount(usize, usize),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Qsim(#[from] QsimError),
    #[error(transparent)]
    Pauli(#[from] PauliError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Egate(#[from] EgateError),
    #[error("bad predictor document: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    /// The family's tunable tuple.
    Baseline,
    /// The tunable tuple tiled to `target_dim` entries.
    InputExpanded { target_dim: usize },
    /// The EGATE graph latent.
    EgateConditioned,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Baseline => "nnvqe",
            Variant::InputExpanded { .. } => "input_expanded",
            Variant::EgateConditioned => "egate_nnvqe",
        }
    }
}

/// Hidden widths: `[20]` for one layer, `[20, 40]` for two.
pub fn hidden_widths(layers: usize) -> Vec<usize> {
    match layers {
        1 => vec![20],
        2 => vec![20, 40],
        k => (0..k).map(|i| 20 << i.min(1)).collect(),
    }
}

/// Encoder plus the scheme its graphs were built with.
pub struct Encoder<'a> {
    pub model: &'a EgateModel<f64>,
    pub scheme: &'a FeatureScheme,
}

/// Predictor input for one Hamiltonian.
pub fn make_input(variant: &Variant, spec: &FamilySpec, encoder: Option<&Encoder<'_>>) -> Result<Vec<f64>, NnvqeError> {
    let tunables = spec.tunables();
    match *variant {
        Variant::Baseline => Ok(tunables),
        Variant::InputExpanded { target_dim } => Ok((0..target_dim).map(|k| tunables[k % tunables.len()]).collect()),
        Variant::EgateConditioned => {
            let enc = encoder.ok_or(NnvqeError::MissingEncoder)?;
            let h = build_family::<f64>(spec)?;
            let g = encode(&h, enc.scheme)?;
            Ok(enc.model.encode_latent(&g)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub variant: Variant,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub layout: AnsatzLayout,
    pub init_std: f64,
}

/// `theta = 2 pi sigmoid(MLP(input))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub mlp: Mlp,
    pub store: ParamStore<f64>,
}

impl Predictor {
    /// Weights and biases drawn i.i.d. from `N(0, init_std^2)`.
    pub fn new(config: PredictorConfig, seed: u64) -> Result<Self, NnvqeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut widths = vec![config.input_dim];
        widths.extend_from_slice(&config.hidden);
        widths.push(config.layout.param_count());
        let init = Init::Normal { std: config.init_std };
        let mlp = Mlp::new(
            &mut store,
            "predictor",
            &widths,
            Activation::Relu,
            OutputActivation::SigmoidTimes2Pi,
            init,
            init,
            &mut rng,
        )?;
        Ok(Self { config, mlp, store })
    }

    pub fn param_count(&self) -> usize {
        self.config.layout.param_count()
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, NnvqeError> {
        self.check_input(input)?;
        Ok(self.mlp.eval(&self.store, input)?)
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnvqeError> {
        if input.len() != self.config.input_dim {
            return Err(NnvqeError::InputDim {
                expected: self.config.input_dim,
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&(&self.config, self.store.to_checkpoint())).expect("predictor serializes")
    }

    /// Inverse of [`Predictor::to_json`], bit-exact.
    pub fn from_json(s: &str) -> Result<Self, NnvqeError> {
        let (config, ckpt): (PredictorConfig, BTreeMap<String, Tensor<f64>>) = serde_json::from_str(s)?;
        let mut p = Predictor::new(config, 0)?;
        p.store.load_checkpoint(&ckpt)?;
        Ok(p)
    }
}

/// A Hamiltonian paired with its predictor input.
#[derive(Debug, Clone)]
pub struct Instance {
    pub spec: FamilySpec,
    pub hamiltonian: Hamiltonian,
    pub input: Vec<f64>,
}

impl Instance {
    pub fn new(spec: FamilySpec, variant: &Variant, encoder: Option<&Encoder<'_>>) -> Result<Self, NnvqeError> {
        Ok(Self {
            hamiltonian: build_family(&spec)?,
            input: make_input(variant, &spec, encoder)?,
            spec,
        })
    }
}

fn inputs_tensor(p: &Predictor, set: &[Instance]) -> Result<Tensor<f64>, NnvqeError> {
    for inst in set {
        p.check_input(&inst.input)?;
    }
    Ok(Tensor::new(
        set.len(),
        p.config.input_dim,
        set.iter().flat_map(|i| i.input.iter().copied()).collect(),
    )?)
}

/// `sum_j <0|U(f(in_j))^dag H_j U(f(in_j))|0>`.
pub fn cost(p: &Predictor, set: &[Instance]) -> Result<f64, NnvqeError> {
    if set.is_empty() {
        return Err(NnvqeError::Empty);
    }
    let energies = set
        .par_iter()
        .map(|inst| {
            let theta = p.predict(&inst.input)?;
            let psi = hea_prepare(p.config.layout.n, p.config.layout.depth, &theta)?;
            Ok(expectation(&inst.hamiltonian, &psi)?)
        })
        .collect::<Result<Vec<f64>, NnvqeError>>()?;
    Ok(energies.iter().sum())
}

/// Summed cost and its gradient with respect to every predictor parameter.
///
/// Ansatz gradients come from the adjoint sweep and enter the network through
/// the surrogate `sum_j theta_j . g_j` with `g_j` held constant.
pub fn cost_and_grad(p: &Predictor, set: &[Instance]) -> Result<(f64, Vec<Tensor<f64>>), NnvqeError> {
    if set.is_empty() {
        return Err(NnvqeError::Empty);
    }
    let mut tape = Tape::with_params(&p.store);
    let x = tape.constant(inputs_tensor(p, set)?);
    let theta = p.mlp.forward(&mut tape, x)?;
    let thetas = tape.value(theta).clone();
    let layout = p.config.layout;
    let per = (0..set.len())
        .into_par_iter()
        .map(|j| adjoint_grad(&set[j].hamiltonian, &layout, thetas.row(j)))
        .collect::<Result<Vec<_>, QsimError>>()?;
    let total: f64 = per.iter().map(|(e, _)| e).sum();
    let g = Tensor::new(set.len(), layout.param_count(), per.into_iter().flat_map(|(_, g)| g).collect())?;
    let surrogate = tape.dot_const(theta, g)?;
    tape.backward(surrogate)?;
    Ok((total, tape.param_grads()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorTrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub optimizer: OptimizerKind,
    /// Optional early stop when the summed cost changes by less than this.
    pub tolerance: Option<f64>,
}

impl PredictorTrainConfig {
    pub fn standard() -> Self {
        Self {
            learning_rate: 0.003,
            iterations: 200,
            optimizer: OptimizerKind::ADAM,
            tolerance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorTrainReport {
    /// Summed cost before each update.
    pub history: Vec<f64>,
    pub final_cost: f64,
    pub iterations: usize,
}

/// Full-batch training on the summed cost.
pub fn train(p: &mut Predictor, set: &[Instance], cfg: &PredictorTrainConfig) -> Result<PredictorTrainReport, NnvqeError> {
    if set.is_empty() {
        return Err(NnvqeError::Empty);
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, None)?;
    let mut history: Vec<f64> = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (c, grads) = cost_and_grad(p, set)?;
        if !c.is_finite() {
            return Err(NnvqeError::NonFiniteCost(it));
        }
        if let (Some(tol), Some(&prev)) = (cfg.tolerance, history.last()) {
            if (prev - c).abs() < tol {
                history.push(c);
                break;
            }
        }
        history.push(c);
        opt.step(&mut p.store, &grads)?;
    }
    let final_cost = cost(p, set)?;
    Ok(PredictorTrainReport {
        iterations: opt.steps(),
        history,
        final_cost,
    })
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub theta: Vec<f64>,
    pub state: Statevector,
    pub energy: f64,
}

pub fn infer(p: &Predictor, inst: &Instance) -> Result<Inference, NnvqeError> {
    let theta = p.predict(&inst.input)?;
    let state = hea_prepare(p.config.layout.n, p.config.layout.depth, &theta)?;
    let energy = expectation(&inst.hamiltonian, &state)?;
    Ok(Inference { theta, state, energy })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub mse: f64,
    pub mre: f64,
    pub mf: f64,
    pub e_pred: Vec<f64>,
    pub e0: Vec<f64>,
    pub sq_err: Vec<f64>,
    pub rel_err: Vec<f64>,
    pub fidelity: Vec<f64>,
}

impl MetricsReport {
    /// Scalar metrics from per-instance values.
    pub fn from_values(seed: u64, e_pred: Vec<f64>, e0: Vec<f64>, fidelity: Vec<f64>) -> Self {
        let sq_err: Vec<f64> = e_pred.iter().zip(&e0).map(|(a, b)| (a - b) * (a - b)).collect();
        let rel_err: Vec<f64> = e_pred
            .iter()
            .zip(&e0)
            .map(|(a, b)| (a - b).abs() / b.abs().max(MRE_FLOOR))
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Self {
            seed,
            mse: mean(&sq_err),
            mre: mean(&rel_err),
            mf: mean(&fidelity),
            e_pred,
            e0,
            sq_err,
            rel_err,
            fidelity,
        }
    }

    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Mse => self.mse,
            Metric::Mre => self.mre,
            Metric::Mf => self.mf,
        }
    }
}

/// Test-set metrics against precomputed oracle spectra.
pub fn evaluate(p: &Predictor, test: &[Instance], spectra: &[Spectrum], seed: u64) -> Result<MetricsReport, NnvqeError> {
    if test.is_empty() {
        return Err(NnvqeError::Empty);
    }
    if spectra.len() != test.len() {
        return Err(NnvqeError::SpectrumCount(spectra.len(), test.len()));
    }
    let rows = test
        .par_iter()
        .zip(spectra)
        .map(|(inst, sp)| {
            let inf = infer(p, inst)?;
            Ok((inf.energy, sp.ground_energy, fidelity(&inf.state, sp)?))
        })
        .collect::<Result<Vec<_>, NnvqeError>>()?;
    Ok(MetricsReport::from_values(
        seed,
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
        rows.iter().map(|r| r.2).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mse,
    Mre,
    Mf,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mse, Metric::Mre, Metric::Mf];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Mre => "mre",
            Metric::Mf => "mf",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Mf)
    }
}

/// Percent improvement of candidate `a` over baseline `b`.
pub fn improvement(a: f64, b: f64, metric: Metric) -> f64 {
    if metric.higher_is_better() {
        (a - b) / b * 100.0
    } else {
        (b - a) / b * 100.0
    }
}

/// One CSV row per test instance.
pub fn metrics_csv(report: &MetricsReport, test: &[Instance]) -> String {
    let mut out = String::new();
    let names = test.first().map(|t| t.spec.family.param_names()).unwrap_or(&[]);
    out.push_str("family,n");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",E_pred,E0,sq_err,rel_err,fidelity\n");
    for (k, inst) in test.iter().enumerate() {
        out.push_str(&format!("{},{}", inst.spec.family, inst.spec.n));
        for v in inst.spec.tunables() {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(
            ",{},{},{},{},{}\n",
            report.e_pred[k], report.e0[k], report.sq_err[k], report.rel_err[k], report.fidelity[k]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::Family;

    fn xxz(jzz: f64) -> FamilySpec {
        FamilySpec::new(Family::Xxz1d, 4, &[("Jzz", jzz)])
    }

    fn config(variant: Variant, input_dim: usize) -> PredictorConfig {
        PredictorConfig {
            variant,
            input_dim,
            hidden: hidden_widths(2),
            layout: AnsatzLayout::new(4, 2),
            init_std: 0.1,
        }
    }

    #[test]
    fn inputs_per_variant() {
        let spec = FamilySpec::new(Family::XxzX1d, 4, &[("Jzz", 2.0), ("Kx", -1.0)]);
        assert_eq!(make_input(&Variant::Baseline, &spec, None).unwrap(), vec![2.0, -1.0]);
        assert_eq!(
            make_input(&Variant::InputExpanded { target_dim: 7 }, &xxz(3.0), None).unwrap(),
            vec![3.0; 7]
        );
        assert!(matches!(
            make_input(&Variant::EgateConditioned, &spec, None),
            Err(NnvqeError::MissingEncoder)
        ));
    }

    #[test]
    fn improvement_formulas() {
        assert!((improvement(189.89, 620.77, Metric::Mse) - 69.4).abs() < 0.05);
        assert!((improvement(0.41, 0.33, Metric::Mf) - 24.2).abs() < 0.05);
    }

    #[test]
    fn zero_hamiltonian_costs_nothing() {
        let p = Predictor::new(config(Variant::Baseline, 1), 1).unwrap();
        let inst = Instance {
            spec: xxz(0.0),
            hamiltonian: Hamiltonian::new(4).unwrap(),
            input: vec![0.3],
        };
        assert_eq!(cost(&p, &[inst]).unwrap(), 0.0);
    }

    #[test]
    fn zero_iterations_keep_weights() {
        let mut p = Predictor::new(config(Variant::Baseline, 1), 1).unwrap();
        let before = p.clone();
        let set = vec![Instance::new(xxz(1.0), &Variant::Baseline, None).unwrap()];
        let cfg = PredictorTrainConfig {
            iterations: 0,
            ..PredictorTrainConfig::standard()
        };
        train(&mut p, &set, &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn theta_in_range_and_deterministic() {
        let p = Predictor::new(config(Variant::Baseline, 1), 3).unwrap();
        let inst = Instance::new(xxz(-7.0), &Variant::Baseline, None).unwrap();
        let a = infer(&p, &inst).unwrap();
        let b = infer(&p, &inst).unwrap();
        assert_eq!(a.theta, b.theta);
        assert!(a.theta.iter().all(|t| (0.0..=std::f64::consts::TAU).contains(t)));
        assert!(a.energy >= inst.hamiltonian.exact_spectrum(1e-9).unwrap().ground_energy - 1e-8);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = Predictor::new(config(Variant::InputExpanded { target_dim: 3 }, 3), 8).unwrap();
        let q = Predictor::from_json(&p.to_json()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn metrics_from_exact_ground_energy() {
        let r = MetricsReport::from_values(0, vec![-8.0, -4.0], vec![-8.0, -4.0], vec![1.0, 1.0]);
        assert_eq!((r.mse, r.mre, r.mf), (0.0, 0.0, 1.0));
        let r = MetricsReport::from_values(0, vec![1e-9], vec![0.0], vec![0.5]);
        assert!((r.mre - 1e-3).abs() < 1e-12);
    }
}
