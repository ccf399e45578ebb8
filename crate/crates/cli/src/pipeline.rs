//! Staged per-seed execution: EGATE training, predictor training, test-set
//! evaluation, Krylov curves and gradient-variance sweeps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use egate_core::bpdiag::{
    bp_hamiltonian, first_step_gradients, log2_fit, pretrain_latent, variance_stats, BpError, BpMethod, BpRow, BpRun,
    FrozenLatent, Log2Fit,
};
use egate_core::egate::{EgateError, EgateModel, EgateTrainConfig, GraphShape, TrainReport};
use egate_core::hgraph::{encode, FeatureScheme, GraphError};
use egate_core::nnvqe::{
    evaluate, hidden_widths, metrics_csv, train, Encoder, Instance, MetricsReport, NnvqeError, Predictor, PredictorConfig,
    PredictorTrainConfig, PredictorTrainReport, Variant,
};
use egate_core::diffnet::OptimizerKind;
use egate_core::pauli::{build_family, FamilySpec, PauliError, DEFAULT_DEGENERACY_TOL};
use egate_core::qsim::{fidelity, AnsatzLayout, Preparation, QsimError};
use egate_core::seed::derive_seed;
use egate_core::skqd::{curves_csv, default_time_step, haar_preparation, run_curve, CurveRecord, Provider, SkqdConfig, SkqdError};
use egate_core::{Hamiltonian, Statevector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::artifacts::{read_json, write_atomic, write_csv, write_json, Meta};
use crate::config::{ConfigError, ExperimentConfig, ExperimentKind, VariantKind};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nnvqe(#[from] NnvqeError),
    #[error(transparent)]
    Egate(#[from] EgateError),
    #[error(transparent)]
    Skqd(#[from] SkqdError),
    #[error(transparent)]
    Bp(#[from] BpError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Pauli(#[from] PauliError),
    #[error(transparent)]
    Qsim(#[from] QsimError),
    #[error("stored model {0} is unreadable: {1}")]
    BadModel(PathBuf, String),
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Egate,
    Predictors,
    Eval,
    Skqd,
    Bp,
}

impl Stage {
    /// Stages a full run of `kind` executes.
    pub fn for_kind(kind: ExperimentKind) -> Vec<Stage> {
        match kind {
            ExperimentKind::Generalization => vec![Stage::Egate, Stage::Predictors, Stage::Eval],
            ExperimentKind::Skqd => vec![Stage::Egate, Stage::Predictors, Stage::Eval, Stage::Skqd],
            ExperimentKind::Bp => vec![Stage::Bp],
        }
    }
}

/// A resolved config with its hash.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub hash: String,
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Self {
        let hash = cfg.hash();
        Self { cfg, hash }
    }

    pub fn meta(&self, seed: Option<u64>) -> Meta {
        Meta::new(&self.hash, seed)
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.cfg.output_dir.join(format!("seed-{seed}"))
    }

    pub fn write_resolved(&self) -> std::io::Result<()> {
        let text = format!("# config_hash={}\n{}", self.hash, self.cfg.to_toml());
        write_atomic(&self.cfg.output_dir.join("config.resolved.toml"), text.as_bytes())
    }

    /// Human-readable plan for `dry-run`.
    pub fn plan(&self, stages: &[Stage]) -> Result<String, RunError> {
        let c = &self.cfg;
        let mut out = format!(
            "experiment {} ({:?}), config hash {}\noutput {}\nseeds {:?}\nstages {:?}\n",
            c.name,
            c.kind,
            self.hash,
            c.output_dir.display(),
            c.seeds,
            stages
        );
        if c.kind == ExperimentKind::Bp {
            out.push_str(&format!(
                "bp: {} trials, sizes {:?}, methods {:?}\n",
                c.bp.trials, c.bp.sizes, c.bp.methods
            ));
        } else {
            let layout = AnsatzLayout::new(c.n, c.predictor.depth);
            out.push_str(&format!(
                "{} n={}: {} train / {} test Hamiltonians, ansatz D={} with {} parameters\n",
                c.family,
                c.n,
                c.train_specs()?.len(),
                c.test_specs()?.len(),
                c.predictor.depth,
                layout.param_count()
            ));
            let labels: Vec<&str> = c.predictor.variants.iter().map(|v| v.label()).collect();
            out.push_str(&format!("predictors {labels:?}\n"));
            if stages.contains(&Stage::Skqd) {
                out.push_str(&format!(
                    "skqd: {} instances per seed, shots {:?}, d_max {}\n",
                    c.skqd.instances, c.skqd.shots, c.skqd.d_max
                ));
            }
        }
        out.push_str("\nresolved config:\n");
        out.push_str(&c.to_toml());
        Ok(out)
    }
}

/// Seeds that completed and seeds that failed with their error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub completed: Vec<u64>,
    pub failed: Vec<(u64, String)>,
}

/// Runs `stages` for every seed in parallel. A failing seed is recorded in
/// `failures.json` and does not stop the others.
pub fn run(ctx: &Context, stages: &[Stage]) -> Result<RunOutcome, RunError> {
    ctx.write_resolved()?;
    let results: Vec<(u64, Result<(), RunError>)> = ctx
        .cfg
        .seeds
        .par_iter()
        .map(|&seed| (seed, run_seed(ctx, seed, stages)))
        .collect();
    let mut outcome = RunOutcome::default();
    for (seed, r) in results {
        match r {
            Ok(()) => outcome.completed.push(seed),
            Err(e) => outcome.failed.push((seed, e.to_string())),
        }
    }
    write_json(&ctx.cfg.output_dir.join("failures.json"), &ctx.meta(None), &outcome.failed)?;
    Ok(outcome)
}

pub fn run_seed(ctx: &Context, seed: u64, stages: &[Stage]) -> Result<(), RunError> {
    if stages.contains(&Stage::Bp) {
        return bp_seed(ctx, seed).map(|_| ());
    }
    let egate = ensure_egate(ctx, seed)?;
    if stages.iter().all(|s| *s == Stage::Egate) {
        return Ok(());
    }
    let predictors = ensure_predictors(ctx, seed, &egate)?;
    if stages.contains(&Stage::Eval) {
        evaluate_seed(ctx, seed, &egate, &predictors)?;
    }
    if stages.contains(&Stage::Skqd) {
        skqd_seed(ctx, seed, &egate, &predictors)?;
    }
    Ok(())
}

/// Grid CSVs for the train and test sets.
pub fn write_grids(ctx: &Context) -> Result<(usize, usize), RunError> {
    ctx.write_resolved()?;
    let names = ctx.cfg.family.param_names();
    let mut sizes = (0, 0);
    for (split, specs) in [("train", ctx.cfg.train_specs()?), ("test", ctx.cfg.test_specs()?)] {
        let mut body = format!("index,family,n,{}\n", names.join(","));
        for (k, s) in specs.iter().enumerate() {
            let vals: Vec<String> = s.tunables().iter().map(|v| v.to_string()).collect();
            body.push_str(&format!("{k},{},{},{}\n", s.family, s.n, vals.join(",")));
        }
        write_csv(&ctx.cfg.output_dir.join(format!("grid_{split}.csv")), &ctx.meta(None), &body)?;
        if split == "train" {
            sizes.0 = specs.len();
        } else {
            sizes.1 = specs.len();
        }
    }
    Ok(sizes)
}

fn scheme(ctx: &Context) -> FeatureScheme {
    FeatureScheme::for_family(ctx.cfg.family)
}

/// Stored payload if the file carries this run's hash and seed.
fn cached(ctx: &Context, path: &Path, seed: u64) -> Option<Value> {
    let (meta, data) = read_json(path).ok()?;
    (meta.config_hash == ctx.hash && meta.seed == Some(seed)).then_some(data)
}

fn model_text(path: &Path, data: &Value) -> Result<String, RunError> {
    match data.get("model") {
        Some(m) => Ok(m.to_string()),
        None => Err(RunError::BadModel(path.to_path_buf(), "missing model".into())),
    }
}

pub fn ensure_egate(ctx: &Context, seed: u64) -> Result<EgateModel<f64>, RunError> {
    let path = ctx.seed_dir(seed).join("egate.json");
    if let Some(data) = cached(ctx, &path, seed) {
        return EgateModel::from_checkpoint_json(&model_text(&path, &data)?)
            .map_err(|e| RunError::BadModel(path.clone(), e.to_string()));
    }
    let (model, report) = train_egate(ctx, seed)?;
    let doc = json!({
        "report": report,
        "latent_dim": model.latent_dim(),
        "model": serde_json::from_str::<Value>(&model.to_checkpoint_json()).expect("checkpoint is json"),
    });
    write_json(&path, &ctx.meta(Some(seed)), &doc)?;
    Ok(model)
}

pub fn train_egate(ctx: &Context, seed: u64) -> Result<(EgateModel<f64>, TrainReport), RunError> {
    let scheme = scheme(ctx);
    let graphs = ctx
        .cfg
        .train_specs()?
        .iter()
        .map(|s| Ok(encode(&build_family::<f64>(s)?, &scheme)?))
        .collect::<Result<Vec<_>, RunError>>()?;
    let e = &ctx.cfg.egate;
    let mut model = EgateModel::new(e.model_config(), GraphShape::of(&graphs[0]), derive_seed(seed, "egate-init", 0))?;
    let cfg = EgateTrainConfig {
        epochs: e.epochs,
        learning_rate: e.learning_rate,
        optimizer: OptimizerKind::ADAM,
        batching: e.batching,
        schedule: e.schedule.step_decay(),
        shuffle: e.shuffle,
        seed: derive_seed(seed, "egate-shuffle", 0),
        target_loss: None,
        max_steps: (e.max_steps > 0).then_some(e.max_steps),
    };
    let report = model.train(&graphs, &cfg)?;
    Ok((model, report))
}

fn variant_of(ctx: &Context, kind: VariantKind, latent_dim: usize) -> (Variant, usize) {
    match kind {
        VariantKind::Nnvqe => (Variant::Baseline, ctx.cfg.family.param_names().len()),
        VariantKind::InputExpanded => {
            let d = match ctx.cfg.predictor.input_expanded_dim {
                0 => latent_dim,
                d => d,
            };
            (Variant::InputExpanded { target_dim: d }, d)
        }
        VariantKind::EgateNnvqe => (Variant::EgateConditioned, latent_dim),
    }
}

fn instances(
    specs: &[FamilySpec],
    variant: &Variant,
    egate: &EgateModel<f64>,
    scheme: &FeatureScheme,
) -> Result<Vec<Instance>, RunError> {
    let enc = Encoder { model: egate, scheme };
    Ok(specs
        .par_iter()
        .map(|s| Instance::new(s.clone(), variant, Some(&enc)))
        .collect::<Result<Vec<_>, NnvqeError>>()?)
}

pub fn ensure_predictors(
    ctx: &Context,
    seed: u64,
    egate: &EgateModel<f64>,
) -> Result<BTreeMap<VariantKind, Predictor>, RunError> {
    let scheme = scheme(ctx);
    let train_specs = ctx.cfg.train_specs()?;
    let mut out = BTreeMap::new();
    for &kind in &ctx.cfg.predictor.variants {
        let path = ctx.seed_dir(seed).join(format!("predictor-{}.json", kind.label()));
        if let Some(data) = cached(ctx, &path, seed) {
            let p = Predictor::from_json(&model_text(&path, &data)?).map_err(|e| RunError::BadModel(path.clone(), e.to_string()))?;
            out.insert(kind, p);
            continue;
        }
        let (variant, input_dim) = variant_of(ctx, kind, egate.latent_dim());
        let set = instances(&train_specs, &variant, egate, &scheme)?;
        let (p, report) = train_predictor(ctx, seed, kind, variant, input_dim, &set)?;
        let doc = json!({
            "report": report,
            "model": serde_json::from_str::<Value>(&p.to_json()).expect("predictor is json"),
        });
        write_json(&path, &ctx.meta(Some(seed)), &doc)?;
        out.insert(kind, p);
    }
    Ok(out)
}

pub fn train_predictor(
    ctx: &Context,
    seed: u64,
    kind: VariantKind,
    variant: Variant,
    input_dim: usize,
    set: &[Instance],
) -> Result<(Predictor, PredictorTrainReport), RunError> {
    let s = &ctx.cfg.predictor;
    let cfg = PredictorConfig {
        variant,
        input_dim,
        hidden: hidden_widths(s.hidden_layers),
        layout: AnsatzLayout::new(ctx.cfg.n, s.depth),
        init_std: s.init_std,
    };
    let mut p = Predictor::new(cfg, derive_seed(seed, kind.label(), 0))?;
    let tcfg = PredictorTrainConfig {
        learning_rate: s.learning_rate,
        iterations: s.iterations,
        optimizer: OptimizerKind::ADAM,
        tolerance: (s.early_stop_tolerance > 0.0).then_some(s.early_stop_tolerance),
    };
    let report = train(&mut p, set, &tcfg)?;
    Ok((p, report))
}

/// Scalar metrics for one predictor on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: VariantKind,
    pub mse: f64,
    pub mre: f64,
    pub mf: f64,
    pub min_energy_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub family: String,
    pub n: usize,
    pub test_instances: usize,
    pub variants: Vec<VariantSummary>,
}

/// Spectra are built in chunks and dropped, so large test sets fit in memory.
const EVAL_CHUNK: usize = 64;

pub fn evaluate_seed(
    ctx: &Context,
    seed: u64,
    egate: &EgateModel<f64>,
    predictors: &BTreeMap<VariantKind, Predictor>,
) -> Result<SeedSummary, RunError> {
    let scheme = scheme(ctx);
    let test_specs = ctx.cfg.test_specs()?;
    let sets: Vec<(VariantKind, Vec<Instance>)> = predictors
        .iter()
        .map(|(&kind, p)| Ok((kind, instances(&test_specs, &p.config.variant, egate, &scheme)?)))
        .collect::<Result<_, RunError>>()?;
    let mut columns: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = vec![Default::default(); sets.len()];
    for start in (0..test_specs.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(test_specs.len());
        let spectra = sets[0].1[start..end]
            .par_iter()
            .map(|inst| inst.hamiltonian.exact_spectrum(DEFAULT_DEGENERACY_TOL))
            .collect::<Result<Vec<_>, PauliError>>()?;
        for (k, (kind, set)) in sets.iter().enumerate() {
            let r = evaluate(&predictors[kind], &set[start..end], &spectra, seed)?;
            columns[k].0.extend(r.e_pred);
            columns[k].1.extend(r.e0);
            columns[k].2.extend(r.fidelity);
        }
    }
    let meta = ctx.meta(Some(seed));
    let mut variants = Vec::new();
    for ((kind, set), (e_pred, e0, fid)) in sets.iter().zip(columns) {
        let report = MetricsReport::from_values(seed, e_pred, e0, fid);
        let dir = ctx.seed_dir(seed);
        write_csv(&dir.join(format!("metrics-{}.csv", kind.label())), &meta, &metrics_csv(&report, set))?;
        let min_energy_gap = report.e_pred.iter().zip(&report.e0).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
        variants.push(VariantSummary {
            variant: *kind,
            mse: report.mse,
            mre: report.mre,
            mf: report.mf,
            min_energy_gap,
        });
    }
    let summary = SeedSummary {
        seed,
        family: ctx.cfg.family.name().to_string(),
        n: ctx.cfg.n,
        test_instances: test_specs.len(),
        variants,
    };
    write_json(&ctx.seed_dir(seed).join("summary.json"), &meta, &summary)?;
    Ok(summary)
}

/// Per-provider averages at one shot count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderCurve {
    pub provider: Provider,
    pub shots: usize,
    /// Mean error over instances at `d = 1..=d_max`.
    pub mean_error: Vec<f64>,
    pub mean_fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkqdSummary {
    pub seed: u64,
    pub instance_ids: Vec<usize>,
    pub curves: Vec<ProviderCurve>,
}

impl SkqdSummary {
    pub fn curve(&self, provider: Provider, shots: usize) -> Option<&ProviderCurve> {
        self.curves.iter().find(|c| c.provider == provider && c.shots == shots)
    }
}

fn ansatz_preparation(p: &Predictor, input: &[f64]) -> Result<Preparation<f64>, RunError> {
    let theta = p.predict(input)?;
    Ok(Preparation {
        initial: Statevector::zero_state(p.config.layout.n),
        circuit: p.config.layout.circuit(&theta)?,
    })
}

pub fn skqd_seed(
    ctx: &Context,
    seed: u64,
    egate: &EgateModel<f64>,
    predictors: &BTreeMap<VariantKind, Predictor>,
) -> Result<SkqdSummary, RunError> {
    let scheme = scheme(ctx);
    let s = &ctx.cfg.skqd;
    let test_specs = ctx.cfg.test_specs()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "skqd-instances", 0));
    let ids = rand::seq::index::sample(&mut rng, test_specs.len(), s.instances.min(test_specs.len())).into_vec();
    let nn = &predictors[&VariantKind::Nnvqe];
    let eg = &predictors[&VariantKind::EgateNnvqe];
    let enc = Encoder { model: egate, scheme: &scheme };
    let per_instance = ids
        .par_iter()
        .map(|&id| {
            let spec = &test_specs[id];
            let h: Hamiltonian = build_family(spec)?;
            let sp = h.exact_spectrum(DEFAULT_DEGENERACY_TOL)?;
            let dt = default_time_step(&h)?;
            let mut records = Vec::new();
            for provider in Provider::ALL {
                let prep = match provider {
                    Provider::Random => {
                        let mut r = ChaCha8Rng::seed_from_u64(derive_seed(seed, "skqd-haar", id as u64));
                        haar_preparation(ctx.cfg.n, &mut r)
                    }
                    Provider::Nnvqe => ansatz_preparation(nn, &Instance::new(spec.clone(), &nn.config.variant, None)?.input)?,
                    Provider::EgateNnvqe => {
                        ansatz_preparation(eg, &Instance::new(spec.clone(), &eg.config.variant, Some(&enc))?.input)?
                    }
                };
                let fid = fidelity(&prep.ideal_state()?, &sp)?;
                for &shots in &s.shots {
                    let cfg = SkqdConfig {
                        d_max: s.d_max,
                        trotter_steps: s.trotter_steps,
                        shots,
                        noise: s.noise,
                        dt: Some(dt),
                    };
                    let tag = format!("skqd-{}-m{shots}", provider.label());
                    let mut r = ChaCha8Rng::seed_from_u64(derive_seed(seed, &tag, id as u64));
                    let curve = run_curve(&h, &prep, sp.ground_energy, &cfg, &mut r)?;
                    records.push(CurveRecord {
                        family: ctx.cfg.family.name().to_string(),
                        instance_id: id,
                        provider,
                        shots,
                        seed,
                        fidelity: fid,
                        curve,
                    });
                }
            }
            Ok(records)
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    let records: Vec<CurveRecord> = per_instance.into_iter().flatten().collect();
    let mut curves = Vec::new();
    for &shots in &s.shots {
        for provider in Provider::ALL {
            let rs: Vec<&CurveRecord> = records.iter().filter(|r| r.provider == provider && r.shots == shots).collect();
            let count = rs.len() as f64;
            let mean_error = (1..=s.d_max)
                .map(|d| rs.iter().map(|r| r.curve.error_at(d).unwrap_or(f64::NAN)).sum::<f64>() / count)
                .collect();
            curves.push(ProviderCurve {
                provider,
                shots,
                mean_error,
                mean_fidelity: rs.iter().map(|r| r.fidelity).sum::<f64>() / count,
            });
        }
    }
    let summary = SkqdSummary {
        seed,
        instance_ids: ids,
        curves,
    };
    let meta = ctx.meta(Some(seed));
    let dir = ctx.seed_dir(seed);
    write_csv(&dir.join("skqd_curves.csv"), &meta, &curves_csv(&records))?;
    write_json(&dir.join("skqd_summary.json"), &meta, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpFit {
    pub method: String,
    pub fit: Log2Fit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpSummary {
    pub seed: u64,
    pub rows: Vec<BpRow>,
    pub fits: Vec<BpFit>,
    pub latents: Vec<(String, usize, FrozenLatent)>,
}

impl BpSummary {
    pub fn slope(&self, method: &str) -> Option<f64> {
        self.fits.iter().find(|f| f.method == method).map(|f| f.fit.slope)
    }
}

pub fn bp_seed(ctx: &Context, seed: u64) -> Result<BpSummary, RunError> {
    let b = &ctx.cfg.bp;
    let methods = b.parsed_methods()?;
    let mut rows = Vec::new();
    let mut latents = Vec::new();
    for &n in &b.sizes {
        let h = bp_hamiltonian(n)?;
        let depth = n - 2;
        for &method in &methods {
            let latent = match method {
                BpMethod::EgateNnvqe(mode) => {
                    let tag = format!("bp-latent-{}", mode.label());
                    let l = pretrain_latent(&h, mode, b.latent_learning_rate, b.latent_max_steps, derive_seed(seed, &tag, n as u64))?;
                    if !l.converged() {
                        return Err(RunError::Failed(format!(
                            "{} encoder stopped at loss {} after {} steps for n={n}",
                            mode.label(),
                            l.final_loss,
                            l.steps
                        )));
                    }
                    latents.push((method.label(), n, l.clone()));
                    Some(l)
                }
                _ => None,
            };
            let run = BpRun {
                method,
                n,
                depth,
                trials: b.trials,
                seed: derive_seed(seed, "bp", n as u64),
            };
            let grads = first_step_gradients(&run, &h, latent.as_ref())?;
            let stats = variance_stats(&grads)?;
            rows.push(BpRow {
                method: method.label(),
                n,
                depth,
                params: run.layout().param_count(),
                mean_var: stats.mean_var,
                sd_var: stats.sd_var,
            });
        }
    }
    let fits = methods
        .iter()
        .map(|m| {
            let label = m.label();
            let points: Vec<(f64, f64)> = rows.iter().filter(|r| r.method == label).map(|r| (r.n as f64, r.mean_var)).collect();
            Ok(BpFit {
                method: label,
                fit: log2_fit(&points)?,
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    let summary = BpSummary {
        seed,
        rows,
        fits,
        latents,
    };
    let meta = ctx.meta(Some(seed));
    let dir = ctx.seed_dir(seed);
    write_csv(&dir.join("bp.csv"), &meta, &egate_core::bpdiag::bp_csv(&summary.rows))?;
    let fit_map: BTreeMap<&str, &Log2Fit> = summary.fits.iter().map(|f| (f.method.as_str(), &f.fit)).collect();
    write_json(&dir.join("bp_fit.json"), &meta, &fit_map)?;
    write_json(&dir.join("bp_summary.json"), &meta, &summary)?;
    Ok(summary)
}
