//! Experiment documents: a sparse TOML file resolved against per-family presets
//! into a fully explicit configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use egate_core::bpdiag::{BpMethod, LatentMode};
use egate_core::diffnet::StepDecay;
use egate_core::egate::{Batching, EgateConfig, Merge, Pooling};
use egate_core::pauli::{Family, FamilySpec};
use egate_core::qsim::NoiseSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// EGATE and predictor training plus test-set metrics.
    Generalization,
    /// Generalization followed by Krylov curves from each initializer.
    Skqd,
    /// First-step gradient variances across a size ladder.
    Bp,
}

/// Inclusive uniform grid over one tunable parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub param: String,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(param: &str, min: f64, max: f64, count: usize) -> Self {
        Self {
            param: param.to_string(),
            min,
            max,
            count,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        linspace(self.min, self.max, self.count)
    }
}

/// `count` evenly spaced values from `min` to `max`, both included.
pub fn linspace(min: f64, max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![min],
        _ => {
            let step = (max - min) / (count - 1) as f64;
            (0..count).map(|k| if k + 1 == count { max } else { min + step * k as f64 }).collect()
        }
    }
}

/// Cartesian product of the axes, first axis varying slowest.
pub fn grid(family: Family, n: usize, axes: &[Axis]) -> Result<Vec<FamilySpec>, ConfigError> {
    check_axes(family, axes)?;
    let mut specs = vec![Vec::<(String, f64)>::new()];
    for axis in axes {
        let vals = axis.values();
        specs = specs
            .into_iter()
            .flat_map(|prefix| {
                vals.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push((axis.param.clone(), v));
                    p
                })
            })
            .collect();
    }
    specs
        .into_iter()
        .map(|params| {
            let borrowed: Vec<(&str, f64)> = params.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            let spec = FamilySpec::new(family, n, &borrowed);
            spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            Ok(spec)
        })
        .collect()
}

fn check_axes(family: Family, axes: &[Axis]) -> Result<(), ConfigError> {
    if axes.is_empty() {
        return invalid("empty grid");
    }
    let names: BTreeSet<&str> = axes.iter().map(|a| a.param.as_str()).collect();
    let want: BTreeSet<&str> = family.param_names().iter().copied().collect();
    if names != want || names.len() != axes.len() {
        return invalid(format!("{family} grids need exactly one axis per parameter {:?}", family.param_names()));
    }
    for a in axes {
        if a.count < 2 {
            return invalid(format!("axis {} needs at least 2 points", a.param));
        }
        if !(a.min < a.max) || !a.min.is_finite() || !a.max.is_finite() {
            return invalid(format!("axis {} range [{}, {}] is empty", a.param, a.min, a.max));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    StepDecay { every: usize, factor: f64 },
}

impl Schedule {
    pub fn step_decay(self) -> Option<StepDecay> {
        match self {
            Schedule::Constant => None,
            Schedule::StepDecay { every, factor } => Some(StepDecay { every, factor }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgateSettings {
    pub layers: usize,
    pub decoder_hidden: usize,
    pub lambda: f64,
    pub beta: f64,
    pub attention_hidden: Vec<usize>,
    pub edge_hidden: Vec<usize>,
    pub merge: Merge,
    pub pooling: Pooling,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Cap on optimizer steps; 0 leaves only the epoch budget.
    pub max_steps: usize,
    pub batching: Batching,
    pub schedule: Schedule,
    pub shuffle: bool,
}

impl EgateSettings {
    pub fn model_config(&self) -> EgateConfig {
        let mut c = EgateConfig::new(self.layers, self.decoder_hidden)
            .with_merge(self.merge)
            .with_pooling(self.pooling);
        c.lambda = self.lambda;
        c.beta = self.beta;
        c.attention_hidden = self.attention_hidden.clone();
        c.edge_hidden = self.edge_hidden.clone();
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Nnvqe,
    InputExpanded,
    EgateNnvqe,
}

impl VariantKind {
    pub fn label(self) -> &'static str {
        match self {
            VariantKind::Nnvqe => "nnvqe",
            VariantKind::InputExpanded => "input_expanded",
            VariantKind::EgateNnvqe => "egate_nnvqe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSettings {
    pub hidden_layers: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub init_std: f64,
    /// Early stop on a cost change below this value; 0 runs the full budget.
    pub early_stop_tolerance: f64,
    pub variants: Vec<VariantKind>,
    /// Width of the tiled input; 0 matches the EGATE latent width.
    pub input_expanded_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkqdSettings {
    pub shots: Vec<usize>,
    pub d_max: usize,
    pub trotter_steps: usize,
    /// Test instances drawn per seed.
    pub instances: usize,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpSettings {
    pub trials: usize,
    pub sizes: Vec<usize>,
    /// Labels from `vqe`, `nnvqe`, `egate_nnvqe_dim1`, ...
    pub methods: Vec<String>,
    pub latent_learning_rate: f64,
    pub latent_max_steps: usize,
}

impl BpSettings {
    pub fn parsed_methods(&self) -> Result<Vec<BpMethod>, ConfigError> {
        self.methods.iter().map(|m| parse_method(m)).collect()
    }
}

pub fn all_bp_methods() -> Vec<BpMethod> {
    let mut v = vec![BpMethod::Vqe, BpMethod::Nnvqe];
    v.extend(LatentMode::ALL.iter().map(|&m| BpMethod::EgateNnvqe(m)));
    v
}

fn parse_method(label: &str) -> Result<BpMethod, ConfigError> {
    all_bp_methods()
        .into_iter()
        .find(|m| m.label() == label)
        .ok_or_else(|| ConfigError::Invalid(format!("unknown BP method {label}")))
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    pub family: Family,
    pub n: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub train: Vec<Axis>,
    pub test: Vec<Axis>,
    pub egate: EgateSettings,
    pub predictor: PredictorSettings,
    pub skqd: SkqdSettings,
    pub bp: BpSettings,
}

/// User document: every field optional, filled from presets.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub name: Option<String>,
    pub kind: Option<ExperimentKind>,
    pub family: Option<Family>,
    pub n: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub output_dir: Option<PathBuf>,
    pub train: Option<Vec<Axis>>,
    pub test: Option<Vec<Axis>>,
    pub egate: Option<toml::Table>,
    pub predictor: Option<toml::Table>,
    pub skqd: Option<toml::Table>,
    pub bp: Option<toml::Table>,
}

/// Layers and decoder width by chain length.
fn chain_egate_size(n: usize) -> (usize, usize) {
    match n {
        0..=4 => (5, 18),
        5..=6 => (7, 32),
        _ => (9, 55),
    }
}

fn attention_mlp() -> Vec<usize> {
    vec![16, 16]
}

pub fn preset_egate(family: Family, n: usize) -> EgateSettings {
    let (layers, decoder_hidden) = chain_egate_size(n);
    let base = EgateSettings {
        layers,
        decoder_hidden,
        lambda: 0.5,
        beta: 1.0,
        attention_hidden: attention_mlp(),
        edge_hidden: attention_mlp(),
        merge: Merge::Mean,
        pooling: Pooling::Sum,
        learning_rate: 1e-3,
        epochs: 100,
        max_steps: 0,
        batching: Batching::Full,
        schedule: Schedule::Constant,
        shuffle: true,
    };
    match family {
        Family::Xxz1d | Family::XxzZ1d => base,
        Family::XxzX1d => EgateSettings {
            epochs: 50,
            batching: Batching::Count(10),
            schedule: Schedule::StepDecay { every: 10, factor: 0.8 },
            ..base
        },
        Family::Xxz2d33 | Family::Xyz2d33 => EgateSettings {
            layers: if family == Family::Xxz2d33 { 9 } else { 5 },
            decoder_hidden: 45,
            pooling: Pooling::LinearAfterSum { target: 8 },
            epochs: 50,
            max_steps: 50,
            batching: Batching::Size(5),
            schedule: Schedule::StepDecay { every: 40, factor: 0.8 },
            ..base
        },
    }
}

pub fn preset_grids(family: Family) -> (Vec<Axis>, Vec<Axis>) {
    let pair = |a: &str, b: &str| {
        (
            vec![Axis::new(a, -3.0, 3.0, 20), Axis::new(b, -3.0, 3.0, 20)],
            vec![Axis::new(a, -10.0, 10.0, 200), Axis::new(b, -10.0, 10.0, 200)],
        )
    };
    match family {
        Family::Xxz1d => (vec![Axis::new("Jzz", -3.0, 3.0, 20)], vec![Axis::new("Jzz", -10.0, 10.0, 1000)]),
        Family::XxzX1d => pair("Jzz", "Kx"),
        Family::XxzZ1d => pair("lambda", "Delta"),
        Family::Xxz2d33 => pair("Jzz1", "Jzz2"),
        Family::Xyz2d33 => (
            vec![
                Axis::new("Jyy", -1.0, 1.0, 5),
                Axis::new("Jzz1", -2.0, 2.0, 9),
                Axis::new("Jzz2", -2.0, 2.0, 9),
            ],
            vec![
                Axis::new("Jyy", -4.0, 4.0, 20),
                Axis::new("Jzz1", -7.0, 7.0, 40),
                Axis::new("Jzz2", -7.0, 7.0, 40),
            ],
        ),
    }
}

pub fn preset_predictor(family: Family) -> PredictorSettings {
    let variants = if family == Family::Xxz1d {
        vec![VariantKind::Nnvqe, VariantKind::InputExpanded, VariantKind::EgateNnvqe]
    } else {
        vec![VariantKind::Nnvqe, VariantKind::EgateNnvqe]
    };
    PredictorSettings {
        hidden_layers: 2,
        depth: 2,
        learning_rate: 0.003,
        iterations: 200,
        init_std: 0.1,
        early_stop_tolerance: 0.0,
        variants,
        input_expanded_dim: 0,
    }
}

/// Mild depolarizing noise with a percent-level readout error.
pub const MILD_NOISE: NoiseSpec = NoiseSpec {
    p1: 1e-4,
    p2: 1e-4,
    p_readout: 1e-2,
};

pub fn preset_skqd(family: Family) -> SkqdSettings {
    SkqdSettings {
        shots: vec![25, 50],
        d_max: 10,
        trotter_steps: 10,
        instances: if family == Family::Xxz1d { 100 } else { 200 },
        noise: MILD_NOISE,
    }
}

pub fn preset_bp() -> BpSettings {
    BpSettings {
        trials: 100,
        sizes: (3..=7).collect(),
        methods: all_bp_methods().iter().map(|m| m.label()).collect(),
        latent_learning_rate: 1e-3,
        latent_max_steps: 5000,
    }
}

/// Overlays a sparse table onto a fully populated section.
fn overlay<T: Serialize + for<'de> Deserialize<'de>>(base: T, patch: Option<toml::Table>, section: &str) -> Result<T, ConfigError> {
    let Some(patch) = patch else { return Ok(base) };
    let mut table = toml::Table::try_from(&base).map_err(|e| ConfigError::Invalid(format!("[{section}]: {e}")))?;
    for (k, v) in patch {
        if !table.contains_key(&k) {
            return invalid(format!("[{section}] has no field {k}"));
        }
        table.insert(k, v);
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(format!("[{section}]: {e}")))
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn resolve(self) -> Result<ExperimentConfig, ConfigError> {
        let Some(kind) = self.kind else {
            return invalid("missing `kind` (generalization, skqd or bp)");
        };
        let family = match (kind, self.family) {
            (_, Some(f)) => f,
            (ExperimentKind::Bp, None) => Family::Xxz1d,
            (_, None) => return invalid("missing `family`"),
        };
        let n = match (kind, self.n) {
            (_, Some(n)) => n,
            (ExperimentKind::Bp, None) => 0,
            (_, None) if family.is_lattice() => 9,
            (_, None) => return invalid("missing `n`"),
        };
        let (train, test) = preset_grids(family);
        let name = self
            .name
            .unwrap_or_else(|| format!("{}-{}-n{}", kind_label(kind), family.name(), n));
        let cfg = ExperimentConfig {
            output_dir: self.output_dir.unwrap_or_else(|| PathBuf::from("runs").join(&name)),
            name,
            kind,
            family,
            n,
            seeds: self.seeds.unwrap_or_else(|| (0..10).collect()),
            train: self.train.unwrap_or(train),
            test: self.test.unwrap_or(test),
            egate: overlay(preset_egate(family, n), self.egate, "egate")?,
            predictor: overlay(preset_predictor(family), self.predictor, "predictor")?,
            skqd: overlay(preset_skqd(family), self.skqd, "skqd")?,
            bp: overlay(preset_bp(), self.bp, "bp")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn kind_label(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Generalization => "generalization",
        ExperimentKind::Skqd => "skqd",
        ExperimentKind::Bp => "bp",
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RawConfig::parse(&text)?.resolve()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return invalid("no seeds");
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return invalid("duplicate seeds");
        }
        if self.kind == ExperimentKind::Bp {
            return self.validate_bp();
        }
        FamilySpec::new(
            self.family,
            self.n,
            &self.family.param_names().iter().map(|p| (*p, 0.0)).collect::<Vec<_>>(),
        )
        .validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        check_axes(self.family, &self.train)?;
        check_axes(self.family, &self.test)?;
        let e = &self.egate;
        if e.layers == 0 || e.decoder_hidden == 0 || e.epochs == 0 {
            return invalid("[egate] layers, decoder_hidden and epochs must be positive");
        }
        if !(e.learning_rate > 0.0) {
            return invalid("[egate] learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&e.lambda) {
            return invalid("[egate] lambda must lie in [0, 1]");
        }
        if let Schedule::StepDecay { every, factor } = e.schedule {
            if every == 0 || !(factor > 0.0 && factor <= 1.0) {
                return invalid("[egate] step decay needs every > 0 and 0 < factor <= 1");
            }
        }
        let p = &self.predictor;
        if !(1..=2).contains(&p.hidden_layers) {
            return invalid("[predictor] hidden_layers must be 1 or 2");
        }
        if !(p.learning_rate > 0.0) || !(p.init_std > 0.0) || p.early_stop_tolerance < 0.0 {
            return invalid("[predictor] learning_rate and init_std must be positive, tolerance nonnegative");
        }
        if p.variants.is_empty() {
            return invalid("[predictor] no variants");
        }
        if self.kind == ExperimentKind::Skqd {
            let s = &self.skqd;
            if s.shots.is_empty() || s.shots.contains(&0) || s.d_max == 0 || s.trotter_steps == 0 || s.instances == 0 {
                return invalid("[skqd] shots, d_max, trotter_steps and instances must be positive");
            }
            s.noise.validate().map_err(|e| ConfigError::Invalid(format!("[skqd] {e}")))?;
            for v in [VariantKind::Nnvqe, VariantKind::EgateNnvqe] {
                if !p.variants.contains(&v) {
                    return invalid(format!("skqd needs the {} predictor", v.label()));
                }
            }
        }
        Ok(())
    }

    fn validate_bp(&self) -> Result<(), ConfigError> {
        let b = &self.bp;
        if b.trials < 2 {
            return invalid("[bp] trials must be at least 2");
        }
        if b.sizes.len() < 3 {
            return invalid("[bp] the fit needs at least 3 sizes");
        }
        if b.sizes.iter().any(|&n| !(3..=9).contains(&n)) {
            return invalid("[bp] sizes must lie in 3..=9");
        }
        if b.methods.is_empty() {
            return invalid("[bp] no methods");
        }
        if !(b.latent_learning_rate > 0.0) || b.latent_max_steps == 0 {
            return invalid("[bp] latent_learning_rate and latent_max_steps must be positive");
        }
        b.parsed_methods()?;
        Ok(())
    }

    /// Every effective value, in declaration order.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the resolved document with the name, output location and
    /// seed list blanked. Every seed of one experiment shares the hash however
    /// the seeds were split across invocations; files carry their seed apart.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.name = String::new();
        c.output_dir = PathBuf::new();
        c.seeds = Vec::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn train_specs(&self) -> Result<Vec<FamilySpec>, ConfigError> {
        grid(self.family, self.n, &self.train)
    }

    pub fn test_specs(&self) -> Result<Vec<FamilySpec>, ConfigError> {
        grid(self.family, self.n, &self.test)
    }
}
