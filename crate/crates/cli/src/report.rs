//! Cross-seed aggregation: mean and sample SD per metric, improvement
//! percentages, Krylov and gradient-variance plot data.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use egate_core::nnvqe::{improvement, Metric};
use egate_core::skqd::Provider;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::{read_json, write_atomic, write_csv, write_json, Meta};
use crate::config::VariantKind;
use crate::pipeline::{BpSummary, SeedSummary, SkqdSummary};
use crate::svg::{line_plot, Series};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}: {1}")]
    Parse(PathBuf, String),
    #[error("no seed results under {0:?}")]
    Empty(Vec<PathBuf>),
    #[error("results disagree: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample (n - 1) standard deviation; zero for a single value.
    pub sd: f64,
    pub count: usize,
}

pub fn mean_sd(xs: &[f64]) -> MeanSd {
    let count = xs.len();
    let mean = xs.iter().sum::<f64>() / count as f64;
    let sd = if count < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (count - 1) as f64).sqrt()
    };
    MeanSd { mean, sd, count }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantAggregate {
    pub variant: VariantKind,
    pub mse: MeanSd,
    pub mre: MeanSd,
    pub mf: MeanSd,
    /// Percent improvement of the mean over the baseline mean, per metric.
    pub improvement: BTreeMap<String, f64>,
}

impl VariantAggregate {
    pub fn metric(&self, m: Metric) -> MeanSd {
        match m {
            Metric::Mse => self.mse,
            Metric::Mre => self.mre,
            Metric::Mf => self.mf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveAggregate {
    pub provider: Provider,
    pub shots: usize,
    /// Across-seed mean and SD of the per-seed mean error at each `d`.
    pub error: Vec<MeanSd>,
    /// Fidelity averaged over every (seed, instance) pair.
    pub fidelity_pooled: f64,
    /// Fidelity averaged within each seed, then across seeds.
    pub fidelity_by_seed: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpAggregate {
    pub method: String,
    pub slope: MeanSd,
    /// `(n, mean_var across seeds)`.
    pub mean_var: Vec<(usize, MeanSd)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seeds: Vec<u64>,
    pub sd_kind: String,
    pub family: Option<String>,
    pub n: Option<usize>,
    pub variants: Vec<VariantAggregate>,
    pub skqd: Vec<CurveAggregate>,
    pub bp: Vec<BpAggregate>,
}

impl Report {
    pub fn variant(&self, v: VariantKind) -> Option<&VariantAggregate> {
        self.variants.iter().find(|a| a.variant == v)
    }
}

struct SeedResults {
    hash: String,
    generalization: Option<SeedSummary>,
    skqd: Option<SkqdSummary>,
    bp: Option<BpSummary>,
}

fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<(Meta, T)>, ReportError> {
    if !path.exists() {
        return Ok(None);
    }
    let (meta, data) = read_json(path)?;
    let v = serde_json::from_value(data).map_err(|e| ReportError::Parse(path.to_path_buf(), e.to_string()))?;
    Ok(Some((meta, v)))
}

fn seed_dirs(dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let is_seed_dir = ["summary.json", "skqd_summary.json", "bp_summary.json"]
        .iter()
        .any(|f| dir.join(f).exists());
    if is_seed_dir {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut found: Vec<(u64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let seed = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("seed-"))
            .and_then(|s| s.parse().ok());
        if let (Some(seed), true) = (seed, path.is_dir()) {
            found.push((seed, path));
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn read_seed(dir: &Path) -> Result<Option<(u64, SeedResults)>, ReportError> {
    let g = load::<SeedSummary>(&dir.join("summary.json"))?;
    let s = load::<SkqdSummary>(&dir.join("skqd_summary.json"))?;
    let b = load::<BpSummary>(&dir.join("bp_summary.json"))?;
    let metas: Vec<&Meta> = [g.as_ref().map(|x| &x.0), s.as_ref().map(|x| &x.0), b.as_ref().map(|x| &x.0)]
        .into_iter()
        .flatten()
        .collect();
    let Some(first) = metas.first() else { return Ok(None) };
    if metas.iter().any(|m| m.config_hash != first.config_hash || m.seed != first.seed) {
        return Err(ReportError::Mismatch(format!("{} mixes runs", dir.display())));
    }
    let seed = first
        .seed
        .ok_or_else(|| ReportError::Parse(dir.to_path_buf(), "seed file without a seed".into()))?;
    Ok(Some((
        seed,
        SeedResults {
            hash: first.config_hash.clone(),
            generalization: g.map(|x| x.1),
            skqd: s.map(|x| x.1),
            bp: b.map(|x| x.1),
        },
    )))
}

/// Aggregates every seed found under `dirs` (run directories or seed directories).
pub fn build_report(dirs: &[PathBuf]) -> Result<(Report, String), ReportError> {
    let mut seeds: BTreeMap<u64, SeedResults> = BTreeMap::new();
    for d in dirs {
        for sd in seed_dirs(d)? {
            if let Some((seed, r)) = read_seed(&sd)? {
                if seeds.insert(seed, r).is_some() {
                    return Err(ReportError::Mismatch(format!("seed {seed} appears twice")));
                }
            }
        }
    }
    if seeds.is_empty() {
        return Err(ReportError::Empty(dirs.to_vec()));
    }
    let hashes: BTreeSet<&str> = seeds.values().map(|r| r.hash.as_str()).collect();
    if hashes.len() > 1 {
        return Err(ReportError::Mismatch(format!("seeds come from {} different configs", hashes.len())));
    }
    let hash = seeds.values().next().map(|r| r.hash.clone()).unwrap_or_default();
    let gen: Vec<&SeedSummary> = seeds.values().filter_map(|r| r.generalization.as_ref()).collect();
    let skqd: Vec<&SkqdSummary> = seeds.values().filter_map(|r| r.skqd.as_ref()).collect();
    let bp: Vec<&BpSummary> = seeds.values().filter_map(|r| r.bp.as_ref()).collect();
    let report = Report {
        seeds: seeds.keys().copied().collect(),
        sd_kind: "sample (n - 1)".into(),
        family: gen.first().map(|s| s.family.clone()),
        n: gen.first().map(|s| s.n),
        variants: aggregate_variants(&gen)?,
        skqd: aggregate_skqd(&skqd)?,
        bp: aggregate_bp(&bp)?,
    };
    Ok((report, hash))
}

fn aggregate_variants(gen: &[&SeedSummary]) -> Result<Vec<VariantAggregate>, ReportError> {
    let Some(first) = gen.first() else { return Ok(Vec::new()) };
    let kinds: Vec<VariantKind> = first.variants.iter().map(|v| v.variant).collect();
    for s in gen {
        let k: Vec<VariantKind> = s.variants.iter().map(|v| v.variant).collect();
        if k != kinds || s.family != first.family || s.n != first.n {
            return Err(ReportError::Mismatch(format!("seed {} reports {:?} on {} n={}", s.seed, k, s.family, s.n)));
        }
    }
    let mut out: Vec<VariantAggregate> = kinds
        .iter()
        .enumerate()
        .map(|(k, &variant)| {
            let col = |f: fn(&crate::pipeline::VariantSummary) -> f64| -> Vec<f64> { gen.iter().map(|s| f(&s.variants[k])).collect() };
            VariantAggregate {
                variant,
                mse: mean_sd(&col(|v| v.mse)),
                mre: mean_sd(&col(|v| v.mre)),
                mf: mean_sd(&col(|v| v.mf)),
                improvement: BTreeMap::new(),
            }
        })
        .collect();
    if let Some(base) = out.iter().find(|a| a.variant == VariantKind::Nnvqe).cloned() {
        for a in &mut out {
            for m in Metric::ALL {
                a.improvement.insert(m.name().into(), improvement(a.metric(m).mean, base.metric(m).mean, m));
            }
        }
    }
    Ok(out)
}

fn aggregate_skqd(sk: &[&SkqdSummary]) -> Result<Vec<CurveAggregate>, ReportError> {
    let Some(first) = sk.first() else { return Ok(Vec::new()) };
    let mut out = Vec::new();
    for c in &first.curves {
        let per_seed = sk
            .iter()
            .map(|s| {
                s.curve(c.provider, c.shots)
                    .ok_or_else(|| ReportError::Mismatch(format!("seed {} lacks {} M={}", s.seed, c.provider.label(), c.shots)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let d_max = c.mean_error.len();
        if per_seed.iter().any(|p| p.mean_error.len() != d_max) {
            return Err(ReportError::Mismatch("Krylov dimensions differ across seeds".into()));
        }
        let error = (0..d_max)
            .map(|d| mean_sd(&per_seed.iter().map(|p| p.mean_error[d]).collect::<Vec<_>>()))
            .collect();
        let counts: Vec<f64> = sk.iter().map(|s| s.instance_ids.len() as f64).collect();
        let pooled = per_seed.iter().zip(&counts).map(|(p, n)| p.mean_fidelity * n).sum::<f64>() / counts.iter().sum::<f64>();
        out.push(CurveAggregate {
            provider: c.provider,
            shots: c.shots,
            error,
            fidelity_pooled: pooled,
            fidelity_by_seed: mean_sd(&per_seed.iter().map(|p| p.mean_fidelity).collect::<Vec<_>>()),
        });
    }
    Ok(out)
}

fn aggregate_bp(bp: &[&BpSummary]) -> Result<Vec<BpAggregate>, ReportError> {
    let Some(first) = bp.first() else { return Ok(Vec::new()) };
    first
        .fits
        .iter()
        .map(|f| {
            let slopes = bp
                .iter()
                .map(|s| s.slope(&f.method).ok_or_else(|| ReportError::Mismatch(format!("seed {} lacks {}", s.seed, f.method))))
                .collect::<Result<Vec<_>, _>>()?;
            let sizes: BTreeSet<usize> = first.rows.iter().filter(|r| r.method == f.method).map(|r| r.n).collect();
            let mean_var = sizes
                .into_iter()
                .map(|n| {
                    let v: Vec<f64> = bp
                        .iter()
                        .flat_map(|s| s.rows.iter().filter(|r| r.method == f.method && r.n == n).map(|r| r.mean_var))
                        .collect();
                    (n, mean_sd(&v))
                })
                .collect();
            Ok(BpAggregate {
                method: f.method.clone(),
                slope: mean_sd(&slopes),
                mean_var,
            })
        })
        .collect()
}

fn cell(m: MeanSd) -> String {
    format!("{:.4}±{:.4}", m.mean, m.sd)
}

/// Markdown table with one row per metric and an improvement column per variant.
pub fn generalization_table(r: &Report) -> String {
    let mut out = String::from("| Metric |");
    let mut rule = String::from("|---|");
    for a in &r.variants {
        out.push_str(&format!(" {} |", a.variant.label()));
        rule.push_str("---|");
        if a.variant != VariantKind::Nnvqe {
            out.push_str(" Impr. |");
            rule.push_str("---|");
        }
    }
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    for m in Metric::ALL {
        out.push_str(&format!("| {} |", m.name()));
        for a in &r.variants {
            out.push_str(&format!(" {} |", cell(a.metric(m))));
            if a.variant != VariantKind::Nnvqe {
                out.push_str(&format!(" {:.1}% |", a.improvement.get(m.name()).copied().unwrap_or(f64::NAN)));
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `report.json`, `report.md`, plot-data CSVs and SVG plots into `out`.
pub fn write_report(r: &Report, hash: &str, out: &Path) -> Result<(), ReportError> {
    let meta = Meta::new(hash, None);
    write_json(&out.join("report.json"), &meta, r)?;
    let mut md = format!(
        "# Report\n\n{}\n\nSeeds: {:?}. Spread is the {} standard deviation across seeds.\n\n",
        meta.csv_header().trim_start_matches("# ").trim_end(),
        r.seeds,
        r.sd_kind
    );
    if !r.variants.is_empty() {
        md.push_str(&format!(
            "## Generalization ({} n={})\n\n{}\n",
            r.family.as_deref().unwrap_or("?"),
            r.n.unwrap_or(0),
            generalization_table(r)
        ));
        let mut csv = String::from("variant,metric,mean,sd,seeds,improvement\n");
        for a in &r.variants {
            for m in Metric::ALL {
                let s = a.metric(m);
                let imp = a.improvement.get(m.name()).map_or(String::new(), |v| v.to_string());
                csv.push_str(&format!("{},{},{},{},{},{imp}\n", a.variant.label(), m.name(), s.mean, s.sd, s.count));
            }
        }
        write_csv(&out.join("generalization.csv"), &meta, &csv)?;
    }
    let shots: BTreeSet<usize> = r.skqd.iter().map(|c| c.shots).collect();
    if !shots.is_empty() {
        md.push_str("## SKQD\n\n| M | provider | fidelity (pooled) | fidelity (by seed) | error at d_max |\n|---|---|---|---|---|\n");
    }
    for &m in &shots {
        let mut csv = String::from("provider,d,mean,sd\n");
        let mut series = Vec::new();
        for c in r.skqd.iter().filter(|c| c.shots == m) {
            for (k, e) in c.error.iter().enumerate() {
                csv.push_str(&format!("{},{},{},{}\n", c.provider.label(), k + 1, e.mean, e.sd));
            }
            series.push(Series {
                label: format!("{} ({:.2})", c.provider.label(), c.fidelity_pooled),
                points: c.error.iter().enumerate().map(|(k, e)| ((k + 1) as f64, e.mean)).collect(),
                spread: c.error.iter().map(|e| e.sd).collect(),
            });
            let last = c.error.last().map_or(f64::NAN, |e| e.mean);
            md.push_str(&format!(
                "| {m} | {} | {:.4} | {} | {:.4e} |\n",
                c.provider.label(),
                c.fidelity_pooled,
                cell(c.fidelity_by_seed),
                last
            ));
        }
        write_csv(&out.join(format!("skqd_M{m}.csv")), &meta, &csv)?;
        let svg = line_plot(&format!("SKQD, M = {m}"), "Krylov dimension d", "relative error", &series, true);
        write_atomic(&out.join(format!("skqd_M{m}.svg")), svg.as_bytes())?;
    }
    if !r.bp.is_empty() {
        md.push_str("\n## Gradient variance\n\n| method | log2 slope |\n|---|---|\n");
        let mut csv = String::from("method,n,mean_var,sd\n");
        let mut series = Vec::new();
        for b in &r.bp {
            md.push_str(&format!("| {} | {} |\n", b.method, cell(b.slope)));
            for (n, v) in &b.mean_var {
                csv.push_str(&format!("{},{n},{},{}\n", b.method, v.mean, v.sd));
            }
            series.push(Series {
                label: format!("{} ({:.3})", b.method, b.slope.mean),
                points: b.mean_var.iter().map(|(n, v)| (*n as f64, v.mean)).collect(),
                spread: b.mean_var.iter().map(|(_, v)| v.sd).collect(),
            });
        }
        write_csv(&out.join("bp.csv"), &meta, &csv)?;
        let svg = line_plot("Gradient variance", "qubits n", "mean Var(dC/dtheta)", &series, true);
        write_atomic(&out.join("bp.svg"), svg.as_bytes())?;
    }
    write_atomic(&out.join("report.md"), md.as_bytes())?;
    Ok(())
}

/// One printed row of the 1D XXZ generalization table: means and printed
/// improvement percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureRow {
    pub hidden_layers: usize,
    pub n: usize,
    pub metric: Metric,
    pub nnvqe: f64,
    pub input_expanded: f64,
    pub input_expanded_impr: f64,
    pub egate: f64,
    pub egate_impr: f64,
}

const fn row(
    hidden_layers: usize,
    n: usize,
    metric: Metric,
    nnvqe: f64,
    input_expanded: f64,
    input_expanded_impr: f64,
    egate: f64,
    egate_impr: f64,
) -> FixtureRow {
    FixtureRow {
        hidden_layers,
        n,
        metric,
        nnvqe,
        input_expanded,
        input_expanded_impr,
        egate,
        egate_impr,
    }
}

pub const XXZ_TABLE: [FixtureRow; 18] = [
    row(1, 4, Metric::Mse, 364.04, 407.32, -11.9, 306.15, 15.9),
    row(1, 4, Metric::Mre, 0.42, 0.46, -9.5, 0.36, 14.3),
    row(1, 4, Metric::Mf, 0.55, 0.51, -7.3, 0.63, 14.6),
    row(1, 6, Metric::Mse, 802.18, 852.94, -6.3, 409.93, 48.9),
    row(1, 6, Metric::Mre, 0.45, 0.45, 0.0, 0.27, 40.0),
    row(1, 6, Metric::Mf, 0.26, 0.27, 3.8, 0.36, 38.5),
    row(1, 8, Metric::Mse, 1363.72, 1428.49, -4.7, 499.80, 63.4),
    row(1, 8, Metric::Mre, 0.42, 0.43, -2.4, 0.21, 50.0),
    row(1, 8, Metric::Mf, 0.24, 0.24, 0.0, 0.35, 45.8),
    row(2, 4, Metric::Mse, 127.37, 158.60, -24.5, 74.98, 41.1),
    row(2, 4, Metric::Mre, 0.20, 0.22, -10.0, 0.14, 30.0),
    row(2, 4, Metric::Mf, 0.79, 0.74, -6.3, 0.84, 6.3),
    row(2, 6, Metric::Mse, 308.78, 342.06, -10.8, 145.16, 53.0),
    row(2, 6, Metric::Mre, 0.24, 0.23, 4.2, 0.15, 37.5),
    row(2, 6, Metric::Mf, 0.37, 0.38, 2.7, 0.42, 13.5),
    row(2, 8, Metric::Mse, 620.77, 503.21, 18.9, 189.89, 69.4),
    row(2, 8, Metric::Mre, 0.25, 0.20, 20.0, 0.12, 52.0),
    row(2, 8, Metric::Mf, 0.33, 0.37, 12.1, 0.41, 24.2),
];

/// `(printed, recomputed)` improvement pairs for every fixture cell.
pub fn fixture_improvements(rows: &[FixtureRow]) -> Vec<(f64, f64)> {
    rows.iter()
        .flat_map(|r| {
            [
                (r.input_expanded_impr, improvement(r.input_expanded, r.nnvqe, r.metric)),
                (r.egate_impr, improvement(r.egate, r.nnvqe, r.metric)),
            ]
        })
        .collect()
}
