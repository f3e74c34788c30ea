use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use roireg::interchange::{read_pairing, write_ddf};
use roireg::synthetic::read_ground_truth;
use roireg::{Dims, DisplacementField};

fn roireg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roireg"))
        .args(args)
        .env_remove("ROIREG_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = roireg(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "roireg {args:?}\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "run_record.json" {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn synth(extra: &[&str]) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let case = root.join("case");
        let mut args = vec!["synth", "--dims", "64,64", "--shapes", "3", "--tx", "4", "--ty", "-2", "--seed", "7"];
        args.extend_from_slice(extra);
        args.extend(["--out", s(&case)]);
        ok(&args);
        Self { _tmp: tmp, root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn matched(&self) -> PathBuf {
        let out = self.path("pairs");
        ok(&[
            "match",
            "--moving",
            s(&self.path("case/moving")),
            "--fixed",
            s(&self.path("case/fixed")),
            "--out",
            s(&out),
        ]);
        out
    }
}

#[test]
fn synth_is_deterministic_and_creates_nested_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("deep/er/a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        ok(&["synth", "--dims", "64,64", "--shapes", "3", "--tx", "4", "--ty", "-2", "--seed", "7", "--out", s(out)]);
    }
    assert!(a.join("moving/manifest.json").exists());
    assert_eq!(tree_bytes(&a), tree_bytes(&b));

    let c = tmp.path().join("c");
    ok(&["synth", "--dims", "64,64", "--seed", "8", "--out", s(&c)]);
    assert_ne!(tree_bytes(&a), tree_bytes(&c));

    let record = json(&a.join("run_record.json"));
    assert_eq!(record["command"], "synth");
    for o in record["outputs"].as_array().unwrap() {
        assert!(Path::new(o.as_str().unwrap()).exists());
    }
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(tmp.path());
    for args in [
        vec!["synth", "--dims", "0,64", "--out", out],
        vec!["synth", "--dims", "64", "--out", out],
        vec!["synth", "--dims", "64,64", "--tz", "1", "--out", out],
        vec!["synth", "--dims", "64,64", "--kinds", "star", "--out", out],
        vec!["match", "--moving", out],
        vec!["frobnicate"],
        vec!["ablate", "--moving", out, "--fixed", out, "--sweep", "epsilon", "--epsilons", "", "--out", out],
        vec!["ablate", "--moving", out, "--fixed", out, "--sweep", "k", "--k-max", "0", "--out", out],
    ] {
        assert_eq!(roireg(&args).status.code(), Some(2), "{args:?}");
    }
    assert_eq!(roireg(&["--help"]).status.code(), Some(0));
}

#[test]
fn match_recovers_permutation_and_records_defaults() {
    let fx = Fixture::synth(&[]);
    let pairs = fx.matched();
    let truth = read_ground_truth(&fx.path("case")).unwrap();
    let (pairing, spacing) = read_pairing(&pairs).unwrap();
    assert_eq!(spacing, vec![1.0, 1.0]);
    assert_eq!(pairing.len(), 3);
    for p in &pairing.pairs {
        assert_eq!(truth.pair_permutation[p.moving_index], p.fixed_index);
    }

    let record = json(&pairs.join("run_record.json"));
    let cfg = &record["config_snapshot"];
    assert_eq!(cfg["min_area"], 200);
    assert_eq!(cfg["max_area"], 7000);
    assert_eq!(cfg["max_overlap"], 0.8);
    assert_eq!(cfg["epsilon"], 0.8);
    assert_eq!(record["engine_version"], env!("CARGO_PKG_VERSION"));
    let outputs = record["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 1 + 2 * 3);
    for o in outputs {
        assert!(Path::new(o.as_str().unwrap()).exists());
    }
}

#[test]
fn threshold_of_one_finds_no_pairs() {
    let fx = Fixture::synth(&[]);
    let out = roireg(&[
        "match",
        "--moving",
        s(&fx.path("case/moving")),
        "--fixed",
        s(&fx.path("case/fixed")),
        "--epsilon",
        "1.0",
        "--out",
        s(&fx.path("none")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("K=0"));
}

#[test]
fn fit_eval_warp_pipeline() {
    let fx = Fixture::synth(&["--noise", "0.05"]);
    let pairs = fx.matched();
    let field = fx.path("ddf");
    ok(&["fit-ddf", "--pairing", s(&pairs), "--iters", "150", "--out", s(&field)]);

    let history = fs::read_to_string(field.join("loss_history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("iter,total,roi_mse,roi_dice,smoothness"));
    let totals: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(totals.len() >= 2);
    assert!(totals.last().unwrap() <= &totals[0]);

    let out = ok(&["eval", "--pairing", s(&pairs), "--ddf", s(&field)]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let keys: Vec<&String> = report.as_object().unwrap().keys().collect();
    let mut expected = vec!["dropped_rois", "mean_dice", "num_rois", "per_roi_centroid_dist", "per_roi_dice", "tre"];
    expected.sort();
    assert_eq!(keys, expected);
    assert!(report["mean_dice"].as_f64().unwrap() > 0.95);
    assert_eq!(report["num_rois"], 3);

    let before = ok(&["eval", "--pairing", s(&pairs), "--out", s(&fx.path("eval/before.json"))]);
    let before: serde_json::Value = serde_json::from_slice(&before.stdout).unwrap();
    assert_eq!(before, json(&fx.path("eval/before.json")));
    assert!(before["mean_dice"].as_f64().unwrap() < report["mean_dice"].as_f64().unwrap());

    let warped = fx.path("warped");
    ok(&[
        "warp",
        "--ddf",
        s(&field),
        "--input",
        s(&pairs.join("pair_000_fixed.raw")),
        "--mask",
        "--out",
        s(&warped),
    ]);
    let bytes = fs::read(warped.join("warped.raw")).unwrap();
    assert_eq!(bytes.len(), 64 * 64);
    assert!(bytes.iter().all(|&b| b <= 1) && bytes.contains(&1));

    let image = fx.path("case/moving/image.raw");
    ok(&["warp", "--ddf", s(&field), "--input", s(&image), "--out", s(&warped)]);
    assert_eq!(fs::read(warped.join("warped.raw")).unwrap().len(), 4 * 64 * 64);
}

#[test]
fn identity_field_changes_nothing_in_eval() {
    let fx = Fixture::synth(&[]);
    let pairs = fx.matched();
    let zero = fx.path("zero");
    write_ddf(&zero, &DisplacementField::zeros(Dims::d2(64, 64).unwrap()), &[1.0, 1.0]).unwrap();
    let plain = ok(&["eval", "--pairing", s(&pairs)]).stdout;
    let warped = ok(&["eval", "--pairing", s(&pairs), "--ddf", s(&zero)]).stdout;
    assert_eq!(plain, warped);
}

#[test]
fn roundtrip_of_integer_field_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let dims = Dims::d3(6, 7, 8).unwrap();
    let data: Vec<f64> = (0..3 * dims.len()).map(|i| ((i * 7) % 3) as f64 - 1.0).collect();
    write_ddf(tmp.path(), &DisplacementField::new(dims, data).unwrap(), &[1.0; 3]).unwrap();
    let out = ok(&["roundtrip", "--ddf", s(tmp.path())]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["max_abs_error"], 0.0);
    assert_eq!(report["integer_field"], true);
    assert_eq!(report["num_points"], 6 * 7 * 8);
}

#[test]
fn divergence_exits_1_naming_the_error() {
    let fx = Fixture::synth(&[]);
    let pairs = fx.matched();
    let out = roireg(&["fit-ddf", "--pairing", s(&pairs), "--step", "1e300", "--out", s(&fx.path("d"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NonFiniteLoss"));
}

#[test]
fn epsilon_sweep_includes_default_threshold() {
    let fx = Fixture::synth(&["--noise", "0.05"]);
    let out = fx.path("ablate");
    ok(&[
        "ablate",
        "--moving",
        s(&fx.path("case/moving")),
        "--fixed",
        s(&fx.path("case/fixed")),
        "--sweep",
        "epsilon",
        "--iters",
        "60",
        "--out",
        s(&out),
    ]);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("setting,mean_dice,tre,num_pairs"));
    let settings: Vec<String> = lines.map(|l| l.split(',').next().unwrap().to_string()).collect();
    assert!(settings.contains(&"0.8".to_string()), "{settings:?}");
}

#[test]
fn replay_reproduces_outputs_byte_for_byte() {
    let fx = Fixture::synth(&["--noise", "0.05"]);
    let pairs = fx.matched();
    let field = fx.path("ddf");
    ok(&["fit-ddf", "--pairing", s(&pairs), "--iters", "40", "--out", s(&field)]);
    for dir in [&pairs, &field] {
        let before = tree_bytes(dir);
        ok(&["replay", "--record", s(&dir.join("run_record.json"))]);
        assert_eq!(tree_bytes(dir), before, "{dir:?}");
    }
    let case = fx.path("case");
    let before = tree_bytes(&case);
    ok(&["replay", "--record", s(&case.join("run_record.json"))]);
    assert_eq!(tree_bytes(&case), before);
}

#[test]
fn thread_variable_is_validated() {
    let fx = Fixture::synth(&[]);
    let pairs = fx.matched();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_roireg"))
            .args(["eval", "--pairing", s(&pairs)])
            .env("ROIREG_THREADS", threads)
            .output()
            .unwrap()
    };
    assert_eq!(run("0").status.code(), Some(2));
    assert_eq!(run("many").status.code(), Some(2));
    let one = run("1");
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, ok(&["eval", "--pairing", s(&pairs)]).stdout);
}
