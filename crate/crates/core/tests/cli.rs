use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use tienet::cli::{self, load_checkpoint, RunManifest, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use tienet::data::DatasetFile;
use tienet::metrics::aggregate;
use tienet::model::{parse_blocks, Mode, TieNet};

fn run(args: &[&str]) -> i32 {
    cli::run_from(std::iter::once("tienet").chain(args.iter().copied()))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join(cli::MANIFEST_FILE)).unwrap()).unwrap()
}

/// Every file a command left in `dir` appears in its manifest.
fn assert_manifest_complete(dir: &Path) {
    let listed: Vec<PathBuf> = manifest(dir).artifacts;
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        assert!(listed.contains(&p), "{} missing from manifest", p.display());
    }
    for p in &listed {
        assert!(p.exists(), "{} listed but absent", p.display());
    }
}

/// Small compact-model settings shared by the training tests.
const SMALL: [&str; 16] = [
    "--set", "model.conv_channels=[4, 4, 8]",
    "--set", "model.channels=8",
    "--set", "model.hidden=8",
    "--set", "model.word_dim=8",
    "--set", "model.attn_hidden=8",
    "--set", "model.spatial_hidden=8",
    "--set", "train.batch_size=4",
    "--set", "train.dropout=0.0",
];

fn gen_small(dir: &Path, train: usize, val: usize, test: usize) {
    let (t, v, s) = (format!("data.train={train}"), format!("data.val={val}"), format!("data.test={test}"));
    let code = run(&["gen", "--seed", "3", "--set", &t, "--set", &v, "--set", &s, "--out", path(dir)]);
    assert_eq!(code, EXIT_OK);
}

fn train(data: &Path, out: &Path, mode: &str, extra: &[&str]) -> i32 {
    let mut args = vec!["train", "--data", path(data), "--out", path(out), "--mode", mode, "--seed", "1"];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    run(&args)
}

/// Log rows without the wall-clock column.
fn log_without_time(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join(cli::LOG_FILE))
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once('\t').unwrap().0.to_string())
        .collect()
}

#[test]
fn gen_default_writes_three_splits() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["gen", "--out", path(dir.path())]), EXIT_OK);
    for (name, n) in [("train", 2000), ("val", 250), ("test", 500)] {
        let f = DatasetFile::load(&dir.path().join(format!("{name}.tsv"))).unwrap();
        assert_eq!(f.len(), n);
        assert_eq!(f.split.as_deref(), Some(name));
    }
    assert_manifest_complete(dir.path());
}

#[test]
fn gen_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_small(a.path(), 30, 5, 5);
    gen_small(b.path(), 30, 5, 5);
    for name in ["train.tsv", "val.tsv", "test.tsv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn bad_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[data]\nbogus_key = 4\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tienet"))
        .args(["gen", "--config", path(&cfg), "--out", path(&dir.path().join("o"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));

    assert_eq!(run(&["gen", "--set", "data.nope=1", "--out", path(dir.path())]), EXIT_USAGE);
    assert_eq!(run(&["gen", "--set", "data.noise=-1", "--out", path(dir.path())]), EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
}

#[test]
fn missing_dataset_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    assert_eq!(train(&missing, dir.path(), "igr", &[]), EXIT_FAILURE);
}

#[test]
fn zero_learning_rate_checkpoint_is_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("run");
    gen_small(&data, 12, 4, 4);
    assert_eq!(train(&data, &out, "igr", &["--lr", "0", "--epochs", "2"]), EXIT_OK);
    let ck = load_checkpoint(&out).unwrap();
    let fresh = TieNet::new(ck.model.config().clone(), 1).unwrap();
    assert!(ck.model.params() == fresh.params());
    assert_manifest_complete(&out);
}

#[test]
fn tiny_training_run_logs_both_losses() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data, 10, 4, 4);
    let (igr, ir) = (dir.path().join("igr"), dir.path().join("ir"));

    let t = Instant::now();
    assert_eq!(train(&data, &igr, "igr", &["--epochs", "5"]), EXIT_OK);
    assert!(t.elapsed().as_secs() < 60, "tiny run took {:?}", t.elapsed());
    assert_eq!(train(&data, &ir, "ir", &["--epochs", "2"]), EXIT_OK);

    let rows = |dir: &Path| -> Vec<Vec<f64>> {
        log_without_time(dir)[1..]
            .iter()
            .map(|l| l.split('\t').map(|x| x.parse().unwrap()).collect())
            .collect()
    };
    let igr_rows = rows(&igr);
    assert_eq!(igr_rows.len(), 5);
    assert!(igr_rows.iter().all(|r| r[1] > 0.0 && r[2] > 0.0));
    let ir_rows = rows(&ir);
    assert_eq!(ir_rows.len(), 2);
    assert!(ir_rows.iter().all(|r| r[1] > 0.0 && r[2] == 0.0));
}

#[test]
fn training_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data, 12, 4, 4);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let extra = ["--epochs", "2", "--set", "train.dropout=0.3"];
    assert_eq!(train(&data, &a, "ir", &extra), EXIT_OK);
    assert_eq!(train(&data, &b, "ir", &extra), EXIT_OK);
    for f in [cli::CHECKPOINT_FILE, cli::CONFIG_FILE, cli::VOCAB_FILE] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(log_without_time(&a), log_without_time(&b));
}

/// Parses `summary.tsv` into its header and rows of cells.
fn summary(dir: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(dir.join("summary.tsv")).unwrap();
    let mut lines = text.lines().map(|l| l.split('\t').map(String::from).collect::<Vec<_>>());
    (lines.next().unwrap(), lines.collect())
}

#[test]
fn oracle_scores_give_perfect_auc_and_dashes_for_absent_classes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    // three test records cannot cover all fifteen classes
    gen_small(&data, 4, 2, 3);
    let out = dir.path().join("eval");
    assert_eq!(run(&["eval", "--data", path(&data), "--oracle", "--out", path(&out)]), EXIT_OK);
    let (header, rows) = summary(&out);
    assert_eq!(header, ["Class", "oracle", "#"]);
    let classes = &rows[..rows.len() - 2];
    assert_eq!(classes.len(), 15);
    let mut dashes = 0;
    for row in classes {
        match row[1].as_str() {
            "--" => dashes += 1,
            cell => assert_eq!(cell, "1.0000"),
        }
    }
    assert!(dashes > 0);
    assert_eq!(rows[rows.len() - 2][1], "1.0000");
    assert_manifest_complete(&out);
}

#[test]
fn evaluation_tables_agree_with_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data, 16, 6, 40);
    let (i, r) = (dir.path().join("i"), dir.path().join("r"));
    assert_eq!(train(&data, &i, "i-baseline", &["--epochs", "1"]), EXIT_OK);
    assert_eq!(train(&data, &r, "r", &["--epochs", "1"]), EXIT_OK);
    let out = dir.path().join("eval");
    let code = run(&[
        "eval", "--data", path(&data), "--checkpoint", path(&i), "--checkpoint", path(&r), "--out", path(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let (header, rows) = summary(&out);
    // columns follow the fixed method order, not the flag order
    assert_eq!(header, ["Class", "R", "I", "#"]);
    let classes = &rows[..rows.len() - 2];
    let counts: Vec<usize> = classes.iter().map(|r| r[3].parse().unwrap()).collect();
    let m = manifest(&out);
    for (col, label) in [(1, "R"), (2, "I")] {
        let aucs: Vec<Option<f64>> = classes.iter().map(|r| r[col].parse().ok()).collect();
        let (avg, wavg) = aggregate(&aucs, &counts).unwrap();
        let cell = |v: f64| format!("{v:.4}");
        // table cells are rounded, so compare against the unrounded manifest
        assert_eq!(rows[rows.len() - 2][col], cell(m.metrics[&format!("{label}_avg")]));
        assert_eq!(rows[rows.len() - 1][col], cell(m.metrics[&format!("{label}_wavg")]));
        assert!((avg - m.metrics[&format!("{label}_avg")]).abs() < 1e-4);
        assert!((wavg - m.metrics[&format!("{label}_wavg")]).abs() < 1e-4);
    }
    assert_manifest_complete(&out);
}

#[test]
fn generate_is_deterministic_and_writes_a_valid_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data, 10, 3, 3);
    let ck = dir.path().join("igr");
    assert_eq!(train(&data, &ck, "igr", &["--epochs", "1"]), EXIT_OK);
    let (a, b) = (dir.path().join("g1"), dir.path().join("g2"));
    for out in [&a, &b] {
        let code = run(&["generate", "--checkpoint", path(&ck), "--data", path(&data), "--index", "1", "--out", path(out)]);
        assert_eq!(code, EXIT_OK);
        assert_manifest_complete(out);
    }
    for f in ["report.txt", "trace.txt", "classes.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let blocks = parse_blocks(&fs::read_to_string(a.join("trace.txt")).unwrap()).unwrap();
    let block = |name: &str| &blocks.iter().find(|(l, _)| l == name).unwrap().1;
    let (g, saliency) = (block("G"), block("g"));
    let steps = g.shape()[1];
    for i in 0..g.shape()[0] {
        assert!((g.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    for k in 0..steps {
        let map = block(&format!("a_{}", k + 1));
        assert!((map.sum() - 1.0).abs() < 1e-9);
        let col = (0..g.shape()[0]).map(|i| g.at2(i, k)).fold(f64::MIN, f64::max);
        assert_eq!(saliency.at2(0, k), col);
    }
    assert!((block("a_ws").sum() - saliency.data().iter().sum::<f64>()).abs() < 1e-9);

    // generation needs an igr checkpoint
    let ir = dir.path().join("ir");
    assert_eq!(train(&data, &ir, "ir", &["--epochs", "1"]), EXIT_OK);
    let code = run(&["generate", "--checkpoint", path(&ir), "--data", path(&data), "--out", path(&a)]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn overfit_single_sample_reproduces_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data, 1, 1, 1);
    // select on the training sample itself
    fs::copy(data.join("train.tsv"), data.join("val.tsv")).unwrap();
    let ck = dir.path().join("igr");
    let extra = ["--epochs", "400", "--lr", "0.03", "--set", "train.l2=0", "--set", "train.min_count=1"];
    assert_eq!(train(&data, &ck, "igr", &extra), EXIT_OK);
    let out = dir.path().join("gen");
    let code = run(&["generate", "--checkpoint", path(&ck), "--data", path(&data), "--split", "train", "--out", path(&out)]);
    assert_eq!(code, EXIT_OK);
    let record = &DatasetFile::load(&data.join("train.tsv")).unwrap().records[0];
    let generated = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(generated.trim(), record.report.trim());
}

#[test]
fn gradcheck_exit_code_tracks_the_result() {
    for (mode, m, seed) in [("igr", Mode::IGR, "0"), ("r", Mode::R, "0"), ("ir", Mode::IR, "4")] {
        let rows = cli::cmd_gradcheck(m, seed.parse().unwrap(), None).unwrap();
        let clean = rows.iter().all(|r| r.max_rel <= cli::GRADCHECK_TOL);
        let want = if clean { EXIT_OK } else { EXIT_FAILURE };
        assert_eq!(run(&["gradcheck", "--mode", mode, "--seed", seed]), want, "{mode} seed {seed}");
    }
    assert_eq!(run(&["gradcheck", "--corrupt-backward", "tanh"]), EXIT_FAILURE);
    assert_eq!(run(&["gradcheck", "--corrupt-backward", "no-such-op"]), EXIT_USAGE);
}
