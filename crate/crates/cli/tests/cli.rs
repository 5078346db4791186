use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMOKE: &str = r#"
version = 1
name = "smoke"
seeds = [0]
epochs = 10
learning_rates = ["1/8"]
algorithms = [{ optimizer = { kind = "sgd" }, quantized = true }]

[objective]
name = "quadratic"
n = 2
"#;

fn qanneal(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qanneal"))
        .args(args)
        .env("QANNEAL_OUT", out_root)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Run metadata with the wall-clock field removed.
fn timeless_json(p: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
    if let Some(m) = v.get_mut("meta").and_then(|m| m.as_object_mut()) {
        m.remove("wall_time_s");
    }
    v
}

fn all_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(all_files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn assert_same_artifacts(a: &Path, b: &Path) {
    let fa = all_files(a);
    let fb = all_files(b);
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(a).unwrap(), y.strip_prefix(b).unwrap());
        let in_runs = x.parent().is_some_and(|p| p.ends_with("runs"));
        if in_runs && x.extension().is_some_and(|e| e == "json") {
            assert_eq!(timeless_json(x), timeless_json(y), "{}", x.display());
        } else {
            assert_eq!(
                fs::read(x).unwrap(),
                fs::read(y).unwrap(),
                "{}",
                x.display()
            );
        }
    }
}

#[test]
fn optimize_minimal_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "smoke.toml", SMOKE);
    let o = qanneal(&["optimize", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("smoke");
    let csvs: Vec<_> = all_files(&out.join("runs"))
        .into_iter()
        .filter(|p| {
            p.extension().is_some_and(|e| e == "csv")
                && !p.to_string_lossy().ends_with("_epochs.csv")
        })
        .collect();
    assert_eq!(csvs.len(), 1);
    assert!(out.join("summary.json").is_file());
}

#[test]
fn rerun_and_worker_count_give_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMOKE.replace("seeds = [0]", "seeds = [0, 1, 2]").replace(
        "algorithms = [{ optimizer = { kind = \"sgd\" }, quantized = true }]",
        "algorithms = [{ optimizer = { kind = \"sgd\" }, quantized = true }, { optimizer = { kind = \"adam\" }, quantized = true }]",
    );
    let cfg = write(dir.path(), "smoke.toml", &text);
    let c = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(qanneal(
        &["optimize", "--config", c, "--out", a.to_str().unwrap()],
        dir.path()
    )
    .status
    .success());
    let o = qanneal(
        &[
            "optimize",
            "--config",
            c,
            "--out",
            b.to_str().unwrap(),
            "--jobs",
            "1",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_same_artifacts(&a, &b);
}

#[test]
fn seeds_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "smoke.toml", SMOKE);
    let o = qanneal(
        &[
            "optimize",
            "--config",
            cfg.to_str().unwrap(),
            "--seeds",
            "3..6",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = dir.path().join("smoke/runs");
    for s in 3..6 {
        assert!(runs.join(format!("QSGD_lr1-8_seed{s}.json")).is_file());
    }
    assert!(!runs.join("QSGD_lr1-8_seed0.json").exists());
}

#[test]
fn invalid_config_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &format!("{SMOKE}\nbogus_key = 3\n"));
    let o = qanneal(&["optimize", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bogus_key") && err.contains("line"), "{err}");

    let cfg = write(
        dir.path(),
        "v2.toml",
        &SMOKE.replace("version = 1", "version = 2"),
    );
    let o = qanneal(&["optimize", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("version"));
}

#[test]
fn schedule_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sched.toml",
        "version = 1\nn = 10\nhorizon = 100\n",
    );
    let o = qanneal(&["schedule", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.path().join("sched/schedule.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 101);
    assert_eq!(&rows[0][col("q_p")], "4");
    let sigma: Vec<f64> = rows
        .iter()
        .map(|x| x[col("sigma")].parse().unwrap())
        .collect();
    assert!(sigma.windows(2).all(|w| w[1] <= w[0]));
    for t in [0usize, 98] {
        let got: f64 = rows[t][col("sigma_inf")].parse().unwrap();
        let expect = 1.0e6 / (t as f64 + 2.0).ln();
        assert!((got - expect).abs() <= 1e-9 * expect);
    }
}

#[test]
fn wnh_verdicts_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let o = qanneal(&["wnh", "--samples", "1000000", "--level", "1024"], root);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(root.join("wnh-uniform/wnh_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["report"]["passed"], true);

    let constant = write(root, "constant.csv", &"0.3\n".repeat(20_000));
    let o = qanneal(
        &["wnh", "--input", constant.to_str().unwrap(), "--level", "4"],
        root,
    );
    assert_eq!(o.status.code(), Some(1));

    let empty = write(root, "empty.csv", "");
    let o = qanneal(&["wnh", "--input", empty.to_str().unwrap()], root);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("insufficient data"), "{}", stderr(&o));
}

#[test]
fn wnh_malformed_rows_skip_or_fail() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut text = String::new();
    let mut x = 0x9e37_79b9_7f4a_7c15u64;
    for _ in 0..20_000 {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        text.push_str(&format!(
            "{}\n",
            (x >> 11) as f64 / (1u64 << 53) as f64 * 50.0
        ));
    }
    text.push_str("not-a-number\n");
    let input = write(root, "mixed.csv", &text);
    let o = qanneal(&["wnh", "--input", input.to_str().unwrap()], root);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("skipped 1"));
    let o = qanneal(
        &["wnh", "--input", input.to_str().unwrap(), "--strict"],
        root,
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sde_zero_diffusion_agrees_with_gradient_descent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "zero.toml",
        r#"
version = 1
paths = 50
seed = 4

[objective]
name = "quadratic"
n = 2

[sde]
alpha = 0.125
horizon = 30
noise = { kind = "off" }
init = { kind = "uniform_box", low = -2.0, high = 2.0 }

[compare]
quantized = false
learning_rate = "1/8"
epochs = 30
grad_tol = 0.0
"#,
    );
    let o = qanneal(&["sde", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("zero");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["comparison"]["deterministic_agreement"], true);
    assert_eq!(report["seed_ledger"].as_array().unwrap().len(), 50);
    assert!(out.join("seed_ledger.csv").is_file());
}

#[test]
fn sde_double_well_reports_both_arms() {
    let dir = tempfile::tempdir().unwrap();
    let arm = |noise: &str| {
        format!(
            "alpha = 0.03125\nhorizon = 300\nsubsteps = 4\nnoise = {noise}\ninit = {{ kind = \"uniform_box\", low = 0.19, high = 3.0 }}\n"
        )
    };
    let text = format!(
        "version = 1\npaths = 200\nseed = 1\n\n[objective]\nname = \"double_well\"\n\n[sde]\n{}\n[control]\n{}",
        arm("{ kind = \"annealed\", c = 2.0 }"),
        arm("{ kind = \"constant\", sigma = 0.05 }")
    );
    let cfg = write(dir.path(), "dw.toml", &text);
    let o = qanneal(
        &["sde", "--config", cfg.to_str().unwrap(), "--seeds", "1,2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for seed in [1, 2] {
        let out = dir.path().join(format!("dw/seed_{seed}"));
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        let arms = report["arms"].as_array().unwrap();
        assert_eq!(arms.len(), 2);
        let main = arms[0]["final_global_basin_fraction"].as_f64().unwrap();
        let control = arms[1]["final_global_basin_fraction"].as_f64().unwrap();
        assert!(
            main > control + 0.2,
            "annealed {main} vs constant {control}"
        );
        assert!(out.join("seed_ledger.csv").is_file());
        let header = fs::read_to_string(out.join("control_ensemble.csv")).unwrap();
        assert!(header
            .lines()
            .next()
            .unwrap()
            .contains("global_basin_fraction"));
    }
}

#[test]
fn aggregate_rebuilds_summary_and_rejects_mixed_records() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let a = write(
        root,
        "a.toml",
        &SMOKE.replace("seeds = [0]", "seeds = [0, 1, 2]"),
    );
    let b = write(root, "b.toml", &SMOKE.replace("epochs = 10", "epochs = 11"));
    let out_a = root.join("out_a");
    let out_b = root.join("out_b");
    assert!(qanneal(
        &[
            "optimize",
            "--config",
            a.to_str().unwrap(),
            "--out",
            out_a.to_str().unwrap()
        ],
        root
    )
    .status
    .success());
    assert!(qanneal(
        &[
            "optimize",
            "--config",
            b.to_str().unwrap(),
            "--out",
            out_b.to_str().unwrap()
        ],
        root
    )
    .status
    .success());

    let again = root.join("again");
    let o = qanneal(
        &[
            "aggregate",
            out_a.to_str().unwrap(),
            "--out",
            again.to_str().unwrap(),
        ],
        root,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(out_a.join("summary.json")).unwrap(),
        fs::read(again.join("summary.json")).unwrap()
    );

    let stray = out_b.join("runs/QSGD_lr1-8_seed0.json");
    fs::copy(&stray, out_a.join("runs/stray.json")).unwrap();
    let o = qanneal(&["aggregate", out_a.to_str().unwrap()], root);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stray.json"), "{}", stderr(&o));
}

#[test]
fn shipped_configs_parse() {
    use qanneal_core::harness::{ExperimentConfig, ScheduleJob, SdeJob, WnhJob};
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for p in all_files(&dir) {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        let ok = match name.split('_').next().unwrap() {
            "schedule" => ScheduleJob::load(&p).map(|_| ()),
            "wnh" => WnhJob::load(&p).map(|_| ()),
            "sde" => SdeJob::load(&p).map(|_| ()),
            _ => ExperimentConfig::load(&p).map(|_| ()),
        };
        assert!(ok.is_ok(), "{name}: {ok:?}");
        seen += 1;
    }
    assert!(seen >= 6);
}
