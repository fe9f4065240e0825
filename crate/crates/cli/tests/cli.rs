use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "\
encoder = pcnn
word_dim = 8
pos_dim = 2
filters = 4
widths = 2,3
batch_size = 16
epochs_rc_pre = 2
epochs_da_pre = 2
epochs_co = 3
lr_da_co = 1e-2
fn_ratio = 0.3
synth.n_relations = 4
synth.n_train = 150
synth.n_val = 40
synth.n_test = 60
";

fn fnd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fnd")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fnd(args);
    assert!(
        out.status.success(),
        "fnd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.conf");
    fs::write(&path, TINY).unwrap();
    path.display().to_string()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn synth_writes_three_deterministic_files() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth", "--seed", "5", "--override", "synth.n_train=50", "--out", d.to_str().unwrap()]);
    }
    for name in ["train.txt", "val.txt", "test.txt"] {
        let x = fs::read(a.join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_eq!(fs::read_dir(&a).unwrap().count(), 3);
}

#[test]
fn synth_rejects_invalid_spec() {
    let tmp = TempDir::new().unwrap();
    let out = fnd(&["synth", "--override", "synth.n_relations=1", "--out", tmp.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_relations"));
}

#[test]
fn inject_counts_and_guards() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&[
        "synth",
        "--override",
        "synth.n_train=400",
        "--override",
        "synth.na_fraction=0.0",
        "--out",
        data.to_str().unwrap(),
    ]);
    // Keep exactly 100 positive records.
    let train = lines(&data.join("train.txt"));
    let small = data.join("small_train.txt");
    fs::write(&small, train[..101].join("\n") + "\n").unwrap();

    let out = tmp.path().join("half");
    let stdout = ok(&["inject", small.to_str().unwrap(), "--ratio", "0.5", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("flipped 50 of 100"));
    assert_eq!(lines(&out.join("small_train.flips.tsv")).len(), 50);

    let out = tmp.path().join("zero");
    ok(&["inject", small.to_str().unwrap(), "--ratio", "0", "--out", out.to_str().unwrap()]);
    assert!(lines(&out.join("small_train.flips.tsv")).is_empty());

    let refused = fnd(&["inject", data.join("test.txt").to_str().unwrap(), "--ratio", "0.5", "--out", out.to_str().unwrap()]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("test"));
    let refused = fnd(&["inject", small.to_str().unwrap(), "--split", "test", "--out", out.to_str().unwrap()]);
    assert!(!refused.status.success());
}

fn reports(dir: &Path) -> Vec<serde_json::Value> {
    lines(&dir.join("epoch_reports.jsonl"))
        .iter()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn train_modes_follow_their_contracts() {
    let tmp = TempDir::new().unwrap();
    let conf = tiny_config(tmp.path());

    let base = tmp.path().join("base");
    ok(&["train", "--config", &conf, "--mode", "base", "--out", base.to_str().unwrap()]);
    let r = reports(&base);
    assert_eq!(r.len(), 3);
    for rep in &r {
        for key in ["reward", "baseline", "train_actions", "policy_train"] {
            assert!(rep.get(key).is_none(), "base report has {key}");
        }
    }
    assert!(!base.join("da.ckpt").exists());
    assert!(base.join("manifest.json").exists());

    let hfnd = tmp.path().join("hfnd");
    ok(&["train", "--config", &conf, "--mode", "hfnd", "--out", hfnd.to_str().unwrap()]);
    for rep in reports(&hfnd) {
        assert!(rep["reward"].is_f64());
        assert!(rep["baseline"].is_f64());
    }
    assert!(hfnd.join("da.ckpt").exists());
    let decisions = lines(&hfnd.join("decisions.tsv"));
    assert_eq!(decisions[0], "epoch\tid\taction\tlog_prob\trevised");

    let norev = tmp.path().join("norev");
    ok(&["train", "--config", &conf, "--mode", "ablation-no-revise", "--out", norev.to_str().unwrap()]);
    for rep in reports(&norev) {
        assert_eq!(rep["train_actions"]["revise"], 0);
        assert_eq!(rep["val_actions"]["revise"], 0);
    }

    let report = ok(&["report", "--run", hfnd.to_str().unwrap()]);
    assert!(report.contains("final hfnd"));
}

#[test]
fn train_rejects_bad_config_before_writing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let res = fnd(&["train", "--override", "lr_rc_co=-1", "--out", out.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(!out.exists());
    let res = fnd(&["train", "--override", "bogus=1", "--out", out.to_str().unwrap()]);
    assert!(!res.status.success());
}

#[test]
fn seed_list_runs_into_separate_directories() {
    let tmp = TempDir::new().unwrap();
    let conf = tiny_config(tmp.path());
    let out = tmp.path().join("sweep");
    ok(&[
        "train",
        "--config",
        &conf,
        "--mode",
        "base",
        "--override",
        "epochs_co=1",
        "--seeds",
        "1,2",
        "--out",
        out.to_str().unwrap(),
    ]);
    for s in [1, 2] {
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(format!("seed-{s}/manifest.json"))).unwrap()).unwrap();
        assert_eq!(m["seed"], s);
    }
}

#[test]
fn eval_on_separable_data_and_errors() {
    let tmp = TempDir::new().unwrap();
    let conf = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    ok(&["synth", "--config", &conf, "--override", "synth.n_train=600", "--out", data.to_str().unwrap()]);
    let run = tmp.path().join("run");
    ok(&[
        "train",
        "--config",
        &conf,
        "--mode",
        "base",
        "--override",
        &format!("data_dir={}", data.display()),
        "--override",
        "fn_ratio=0",
        "--override",
        "epochs_co=15",
        "--out",
        run.to_str().unwrap(),
    ]);
    let test = data.join("test.txt");
    let stdout = ok(&["eval", "--run", run.to_str().unwrap(), "--test", test.to_str().unwrap()]);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("eval_metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["f1"], 1.0, "{stdout}");

    let positive_predictions = lines(&run.join("predictions.tsv"))
        .iter()
        .filter(|l| l.split('\t').nth(1) != Some("NA"))
        .count();
    assert_eq!(lines(&run.join("pr_curve.tsv")).len(), positive_predictions);

    fs::remove_file(run.join("rc.ckpt")).unwrap();
    let res = fnd(&["eval", "--run", run.to_str().unwrap(), "--test", test.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("rc.ckpt"));
}

#[test]
fn gradcheck_passes_and_reports_planted_fault() {
    for scope in ["layers", "encoder", "classifier", "agent"] {
        let stdout = ok(&["gradcheck", "--scope", scope, "--seed", "4"]);
        assert!(stdout.contains("PASS") && !stdout.contains("FAIL"), "{stdout}");
    }
    let out = fnd(&["gradcheck", "--scope", "encoder", "--corrupt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}
