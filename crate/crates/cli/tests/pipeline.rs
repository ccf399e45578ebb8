use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use egate_cli::artifacts::{read_csv, read_json, Meta};
use egate_cli::config::{ExperimentConfig, RawConfig};
use egate_cli::pipeline::{self, Context, Stage};
use egate_cli::report::{build_report, mean_sd, write_report};

const MINI: &str = r#"
kind = "generalization"
family = "xxz1d"
n = 4
seeds = [0, 1, 2]

[[train]]
param = "Jzz"
min = -3.0
max = 3.0
count = 5

[[test]]
param = "Jzz"
min = -10.0
max = 10.0
count = 50
"#;

fn mini(out: &Path) -> ExperimentConfig {
    let mut cfg = RawConfig::parse(MINI).unwrap().resolve().unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn eval_stages() -> [Stage; 3] {
    [Stage::Egate, Stage::Predictors, Stage::Eval]
}

#[test]
fn mini_profile_finishes_well_inside_budget() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(mini(dir.path()));
    let start = Instant::now();
    let outcome = pipeline::run(&ctx, &eval_stages()).unwrap();
    assert!(start.elapsed() < Duration::from_secs(600), "took {:?}", start.elapsed());
    assert_eq!(outcome.completed, vec![0, 1, 2]);
    assert!(outcome.failed.is_empty());
    for s in 0..3 {
        let (meta, _) = read_json(&dir.path().join(format!("seed-{s}/summary.json"))).unwrap();
        assert_eq!(meta, Meta::new(&ctx.hash, Some(s)));
    }
}

#[test]
fn reruns_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        pipeline::run(&Context::new(mini(d.path())), &eval_stages()).unwrap();
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    let resolved = Path::new("config.resolved.toml");
    for (k, va) in &fa {
        if k == resolved {
            continue;
        }
        assert!(va == &fb[k], "{} differs", k.display());
    }
    // The echoed config differs only in where it was written.
    let strip = |v: &[u8]| -> String {
        String::from_utf8(v.to_vec())
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("output_dir"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&fa[resolved]), strip(&fb[resolved]));
}

#[test]
fn report_matches_an_independent_pass_over_raw_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(mini(dir.path()));
    pipeline::run(&ctx, &eval_stages()).unwrap();
    let (report, hash) = build_report(&[dir.path().to_path_buf()]).unwrap();
    assert_eq!(hash, ctx.hash);
    for agg in &report.variants {
        let mut per_seed: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for s in 0..3u64 {
            let path = dir.path().join(format!("seed-{s}/metrics-{}.csv", agg.variant.label()));
            let (meta, body) = read_csv(&path).unwrap();
            assert_eq!(meta.seed, Some(s));
            let mut lines = body.lines();
            let header: Vec<&str> = lines.next().unwrap().split(',').collect();
            let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
            let (sq, rel, fid) = (col("sq_err"), col("rel_err"), col("fidelity"));
            let rows: Vec<Vec<f64>> = lines
                .map(|l| l.split(',').map(|x| x.parse::<f64>().unwrap_or(f64::NAN)).collect())
                .collect();
            assert_eq!(rows.len(), 50);
            let mean = |c: usize| rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
            per_seed.entry("mse").or_default().push(mean(sq));
            per_seed.entry("mre").or_default().push(mean(rel));
            per_seed.entry("mf").or_default().push(mean(fid));
        }
        for (name, got) in [("mse", agg.mse), ("mre", agg.mre), ("mf", agg.mf)] {
            let want = mean_sd(&per_seed[name]);
            assert_eq!(want.count, got.count);
            assert!((want.mean - got.mean).abs() <= 1e-9 * want.mean.abs().max(1.0), "{name}");
            assert!((want.sd - got.sd).abs() <= 1e-9 * want.sd.abs().max(1.0), "{name}");
        }
    }
    let out = dir.path().join("report");
    write_report(&report, &hash, &out).unwrap();
    for f in ["report.json", "report.md", "generalization.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn single_seed_report_has_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mini(dir.path());
    cfg.seeds = vec![5];
    pipeline::run(&Context::new(cfg), &eval_stages()).unwrap();
    let (report, _) = build_report(&[dir.path().join("seed-5")]).unwrap();
    assert_eq!(report.seeds, vec![5]);
    for a in &report.variants {
        assert_eq!((a.mse.sd, a.mre.sd, a.mf.sd), (0.0, 0.0, 0.0));
    }
}

#[test]
fn report_rejects_runs_of_different_configs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = mini(a.path());
    ca.seeds = vec![0];
    let mut cb = mini(b.path());
    cb.seeds = vec![1];
    cb.predictor.iterations = 3;
    pipeline::run(&Context::new(ca), &eval_stages()).unwrap();
    pipeline::run(&Context::new(cb), &eval_stages()).unwrap();
    assert!(build_report(&[a.path().to_path_buf(), b.path().to_path_buf()]).is_err());
}

fn egate_bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_egate"));
    c.env_remove("EGATE_THREADS");
    c
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("c.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn dry_run_prints_the_plan_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINI);
    let out = dir.path().join("out");
    let r = egate_bin().args(["dry-run", "-c"]).arg(&cfg).arg("-o").arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(0));
    let text = String::from_utf8(r.stdout).unwrap();
    for needle in ["5 train / 50 test", "52 parameters", "seeds [0, 1, 2]", "[egate]", "epochs = 100"] {
        assert!(text.contains(needle), "{needle} missing from:\n{text}");
    }
    assert!(!out.exists());
}

#[test]
fn failing_seed_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINI);
    let out = dir.path().join("out");
    let hash = mini(&out).hash();
    // A stored encoder stamped for seed 1 that cannot be loaded.
    let bad = out.join("seed-1/egate.json");
    std::fs::create_dir_all(bad.parent().unwrap()).unwrap();
    let doc = serde_json::json!({ "meta": Meta::new(&hash, Some(1)), "data": { "model": {} } });
    std::fs::write(&bad, doc.to_string()).unwrap();

    let r = egate_bin().args(["eval", "-c"]).arg(&cfg).arg("-o").arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(2));
    assert!(out.join("seed-0/summary.json").exists());
    assert!(out.join("seed-2/summary.json").exists());
    assert!(!out.join("seed-1/summary.json").exists());
    let (_, failed) = read_json(&out.join("failures.json")).unwrap();
    let failed: Vec<(u64, String)> = serde_json::from_value(failed).unwrap();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].0, 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), MINI);
    let code = |c: &mut Command| c.output().unwrap().status.code();

    assert_eq!(code(egate_bin().arg("--help")), Some(0));
    assert_eq!(code(egate_bin().arg("--version")), Some(0));
    assert_eq!(code(egate_bin().arg("no-such-command")), Some(1));
    assert_eq!(code(egate_bin().args(["dry-run", "-c", "/nonexistent/c.toml"])), Some(1));
    // Wrong stage for the experiment kind.
    assert_eq!(code(egate_bin().args(["bp", "-c"]).arg(&good)), Some(1));
    assert_eq!(code(egate_bin().args(["skqd", "-c"]).arg(&good)), Some(1));
    assert_eq!(code(egate_bin().args(["dry-run", "-c"]).arg(&good).env("EGATE_THREADS", "zero")), Some(1));
    assert_eq!(code(egate_bin().args(["dry-run", "-c"]).arg(&good).env("EGATE_THREADS", "2")), Some(0));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "kind = \"generalization\"\nfamily = \"xxz1d\"\nn = 4\n[egate]\nwidth = 3\n").unwrap();
    assert_eq!(code(egate_bin().args(["dry-run", "-c"]).arg(&bad)), Some(1));
    std::fs::write(&bad, "kind = ").unwrap();
    assert_eq!(code(egate_bin().args(["eval", "-c"]).arg(&bad)), Some(1));

    // A report over a directory with no results is a runtime failure.
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(egate_bin().args(["report", "-o"]).arg(dir.path().join("r")).arg(&empty)), Some(2));
}

#[test]
fn gen_grid_writes_stamped_grids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINI);
    let out = dir.path().join("out");
    let r = egate_bin().args(["gen-grid", "-c"]).arg(&cfg).arg("-o").arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(0));
    let (meta, body) = read_csv(&out.join("grid_test.csv")).unwrap();
    assert_eq!(meta.seed, None);
    assert_eq!(meta.config_hash, mini(&out).hash());
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "index,family,n,Jzz");
    assert_eq!(lines.len(), 51);
    assert_eq!(lines[1], "0,xxz1d,4,-10");
    assert_eq!(lines[50], "49,xxz1d,4,10");
}

#[test]
fn stages_reuse_stored_models() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(mini(dir.path()));
    pipeline::run(&ctx, &[Stage::Egate, Stage::Predictors]).unwrap();
    let before = files(dir.path());
    pipeline::run(&ctx, &eval_stages()).unwrap();
    let after = files(dir.path());
    for (k, v) in &before {
        assert!(after[k] == *v, "{} was rewritten", k.display());
    }
    assert!(after.keys().any(|k| k.ends_with("summary.json")));
}

#[test]
fn shipped_configs_resolve() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&root).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
