use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn genemeta(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genemeta"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A small synthetic family plus a config pointing at it.
struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(extra_train: &str) -> Workspace {
        let dir = tempfile::tempdir().unwrap();
        let out = genemeta(
            dir.path(),
            &[
                "synth", "--out", "fam", "--seed", "4", "--features", "24", "--signal-dim", "4",
                "--source-samples", "40", "--target-samples", "30",
            ],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let config = format!(
            r#"seed = 7
out = "run"

[data]
datasets = ["fam/source1.tsv", "fam/source2.tsv", "fam/source3.tsv", "fam/target.tsv"]
target = "target"

[model]
architecture = "mlp"
hidden = [8, 4]

[train]
epochs = 2
batch_size = 8
{extra_train}

[eval]
folds = 3
"#
        );
        fs::write(dir.path().join("run.toml"), config).unwrap();
        Workspace { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut full = vec!["--config", "run.toml"];
        full.extend_from_slice(args);
        genemeta(self.path(), &full)
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.path().join(rel)).unwrap()
    }
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn synth_writes_one_file_per_dataset_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = genemeta(dir.path(), &["synth", "--out", out, "--seed", "11"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "tsv"))
        .collect();
    files.sort();
    assert_eq!(files.len(), 4);
    assert!(dir.path().join("a/manifest.json").exists());
    for f in files {
        let name = f.file_name().unwrap();
        assert_eq!(fs::read(&f).unwrap(), fs::read(dir.path().join("b").join(name)).unwrap());
    }
}

#[test]
fn synth_rejects_empty_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let o = genemeta(dir.path(), &["synth", "--out", "x", "--source-samples", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn preprocess_reports_selection_and_is_idempotent() {
    let ws = Workspace::new("");
    fs::write(ws.path().join("ppi.tsv"), "G0001\tG0002\nG0003\tG0024\nG0099\tG0100\n").unwrap();
    let config = ws.read("run.toml").replace("target = \"target\"", "target = \"target\"\ninteractions = \"ppi.tsv\"");
    fs::write(ws.path().join("run.toml"), config).unwrap();

    let o = ws.run(&["preprocess"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&ws.read("run/selection_report.json")).unwrap();
    assert_eq!(report["intersection"], 24);
    assert_eq!(report["after_interactions"], 4);
    assert_eq!(ws.read("run/genes.txt"), "G0001\nG0002\nG0003\nG0024\n");
    let first = ws.read("run/preprocessed/target.tsv");
    assert!(first.starts_with("sample_id\tG0001\tG0002\tG0003\tG0024\tlabel\n"));

    let o = ws.run(&["preprocess"]);
    assert_eq!(code(&o), 0);
    assert_eq!(ws.read("run/preprocessed/target.tsv"), first);
}

#[test]
fn preprocess_disjoint_genes_is_a_user_error() {
    let ws = Workspace::new("");
    fs::write(ws.path().join("other.tsv"), "sample_id\tXYZ1\tlabel\no1\t1.0\t0\no2\t2.0\t1\n").unwrap();
    let config = ws.read("run.toml").replace("\"fam/target.tsv\"]", "\"fam/target.tsv\", \"other.tsv\"]");
    fs::write(ws.path().join("run.toml"), config).unwrap();
    let o = ws.run(&["preprocess"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("empty intersection"), "{}", stderr(&o));
}

#[test]
fn train_writes_checkpoint_and_log_deterministically() {
    let ws = Workspace::new("");
    let o = ws.run(&["train"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // 30 target samples, 3 folds: 20 training samples, batches of 8 → 3 per epoch.
    let log = ws.read("run/train_log.csv");
    assert_eq!(log.lines().count(), 1 + 2 * 3);
    assert!(ws.read("run/config.toml").contains("trainer = \"meta\""));

    let o = ws.run(&["--out", "again", "train"]);
    assert_eq!(code(&o), 0);
    assert_eq!(ws.read("run/checkpoint.json"), ws.read("again/checkpoint.json"));
    assert_eq!(log, ws.read("again/train_log.csv"));
}

#[test]
fn plain_trainer_warns_that_lambda_is_ignored() {
    let ws = Workspace::new("trainer = \"plain\"\nlambda = 0.3");
    let o = ws.run(&["train"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("ignored"), "{}", stderr(&o));

    let o = ws.run(&["train", "--trainer", "meta"]);
    assert!(!stderr(&o).contains("ignored"));
}

#[test]
fn divergence_exits_with_numerical_code() {
    let ws = Workspace::new("outer_lr = 1e300");
    let o = ws.run(&["train"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("step"), "{}", stderr(&o));
}

#[test]
fn bad_config_is_a_user_error() {
    let ws = Workspace::new("learning_rate = 0.1");
    let o = ws.run(&["train"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("learning_rate"));

    let o = genemeta(ws.path(), &["--config", "missing.toml", "train"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn evaluate_summary_has_fixed_columns() {
    let ws = Workspace::new("");
    for trainer in ["meta", "plain"] {
        let out = format!("eval_{trainer}");
        let o = ws.run(&["--out", &out, "evaluate", "--trainer", trainer]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let rows = csv_rows(&ws.read(&format!("{out}/evaluation.csv")));
        assert_eq!(rows[0], ["model", "accuracy", "f1", "precision", "recall", "prauc"]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1][0], trainer);
        let folds = csv_rows(&ws.read(&format!("{out}/cv_folds.csv")));
        assert_eq!(folds.len(), 1 + 3 + 1);
    }
}

#[test]
fn evaluate_with_more_folds_than_samples_fails() {
    let ws = Workspace::new("");
    let o = ws.run(&["evaluate", "--folds", "31"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn sweep_default_grid_and_plain_endpoint() {
    let ws = Workspace::new("epochs = 1");
    let ws_config = ws.read("run.toml").replace("epochs = 2\n", "");
    fs::write(ws.path().join("run.toml"), ws_config).unwrap();

    let o = ws.run(&["sweep"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&ws.read("run/sweep.csv"));
    assert_eq!(rows[0], ["lambda", "f1_mean", "f1_std"]);
    let lambdas: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(lambdas, ["0.1", "0.3", "0.5", "0.7", "0.9", "1.0"]);

    let o = ws.run(&["--out", "one", "sweep", "--lambdas", "1.0"]);
    assert_eq!(code(&o), 0);
    let one = csv_rows(&ws.read("one/sweep.csv"));
    let o = ws.run(&["--out", "plain", "evaluate", "--trainer", "plain"]);
    assert_eq!(code(&o), 0);
    let plain = csv_rows(&ws.read("plain/evaluation.csv"));
    assert_eq!(one[1][1], plain[1][2]);
    assert_eq!(one[1], rows[6]);
}

#[test]
fn sweep_rejects_lambda_outside_unit_interval() {
    let ws = Workspace::new("");
    let o = ws.run(&["sweep", "--lambdas", "0.5,1.5"]);
    assert_eq!(code(&o), 2);
    let o = ws.run(&["sweep", "--lambdas", "abc"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn explain_writes_attributions_and_top_k_summary() {
    let ws = Workspace::new("");
    assert_eq!(code(&ws.run(&["train"])), 0);
    let o = ws.run(&["explain", "--samples", "3", "--permutations", "50", "--top-k", "20"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ranking = csv_rows(&ws.read("run/ranking.csv"));
    assert_eq!(ranking[0], ["rank", "gene_id", "mean_abs_shap"]);
    assert_eq!(ranking.len(), 1 + 20);
    let attributions = csv_rows(&ws.read("run/attributions.csv"));
    assert_eq!(attributions[0], ["sample_id", "gene_id", "shap_value", "feature_value"]);
    assert_eq!(attributions.len(), 1 + 3 * 24);

    let o = ws.run(&["explain", "--permutations", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn explain_rejects_mismatched_checkpoint() {
    let ws = Workspace::new("");
    assert_eq!(code(&ws.run(&["train"])), 0);
    let config = ws.read("run.toml").replace("architecture = \"mlp\"", "architecture = \"cnn\"\nchannels = 4");
    fs::write(ws.path().join("run.toml"), config).unwrap();
    let o = ws.run(&["--out", "other", "explain", "--checkpoint", "run/checkpoint.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("does not match"), "{}", stderr(&o));
}
