use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = "seq_len=16\nsubjects_per_class=3\nsamples_per_subject=4\nfrequencies=1,3,5\n\
edges.0=0>2:1:0.8\nedges.1=0>3:2:0.8\nedges.2=1>4:1:0.8\n";

const CONFIG: &str = "# tiny model\nd_model=4\nn_layers=1\nd_state=2\nexpand=1\nkernels=3\n\
max_epochs=2\npatience=1\nbatch_size=8\nlr=0.01\nseeds=0\n";

fn medmamba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medmamba")).args(args).output().expect("spawn medmamba")
}

fn ok(args: &[&str]) -> String {
    let out = medmamba(args);
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(out.status.success(), "{args:?} failed\nstdout:\n{stdout}\nstderr:\n{}", String::from_utf8_lossy(&out.stderr));
    stdout
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes the tiny spec, config and dataset into `dir`.
fn setup(dir: &Path) -> (String, String) {
    fs::write(dir.join("spec.txt"), SPEC).unwrap();
    fs::write(dir.join("cfg.txt"), CONFIG).unwrap();
    let data = dir.join("d.csv");
    ok(&["gen-data", "--spec", p(&dir.join("spec.txt")), "--out", p(&data)]);
    (p(&data).to_string(), p(&dir.join("cfg.txt")).to_string())
}

fn rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn default_data_then_train_writes_run_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let msg = ok(&["gen-data", "--spec", "default", "--out", p(&data)]);
    assert!(msg.contains("1200 samples"), "{msg}");
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "d_model=4\nn_layers=1\nd_state=2\nexpand=1\nmax_epochs=1\npatience=1\nseeds=0\nbatch_size=64\n").unwrap();
    let out = dir.path().join("run");
    ok(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&out)]);
    let run = rows(&out.join("run.csv"));
    assert_eq!(run[0], "variant,seed,epoch,lr,train_loss,val_loss,val_f1,val_accuracy");
    assert_eq!(run.len(), 2);
    assert!(out.join("metrics.csv").exists());
    assert!(out.join("adjacency_0.csv").exists());
    assert!(out.join("model_seed0.ckpt").exists());
}

#[test]
fn train_is_reproducible_and_eval_reads_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["train", "--data", &data, "--config", &cfg, "--out", p(out), "--seed", "3,4", "--split", "sd"]);
    }
    let run = fs::read(a.join("run.csv")).unwrap();
    assert_eq!(run, fs::read(b.join("run.csv")).unwrap());
    let metrics = rows(&a.join("metrics.csv"));
    assert!(metrics[0].starts_with("variant,seed,best_epoch,params,accuracy"));
    assert_eq!(metrics.len(), 1 + 2 + 2);
    let adj = rows(&a.join("adjacency_0.csv"));
    assert_eq!(adj.len(), 1 + 8);
    assert_eq!(adj[0], "row,0,1,2,3,4,5,6,7");

    let ev = dir.path().join("ev");
    let text = ok(&["eval", "--model", p(&a.join("model_seed3.ckpt")), "--data", &data, "--out", p(&ev)]);
    assert!(text.contains("confusion"));
    let m = rows(&ev.join("metrics.csv"));
    assert_eq!(m[0], "accuracy,precision,recall,f1,auroc,auprc");
    assert_eq!(m.len(), 2);
}

#[test]
fn ablate_and_robustness_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let out = dir.path().join("ab");
    ok(&["ablate", "--data", &data, "--config", &cfg, "--out", p(&out), "--variant", "no-sgm,raw-only", "--seed", "0,1"]);
    // Full is always trained: 3 variants x 2 seeds.
    let m = rows(&out.join("metrics.csv"));
    assert_eq!(m.len(), 1 + 6 + 3 * 2);
    let ab = rows(&out.join("ablation.csv"));
    assert_eq!(ab.len(), 4);
    assert!(ab[1].starts_with("full,2,"));

    let rb = dir.path().join("rb");
    ok(&["robustness", "--data", &data, "--config", &cfg, "--out", p(&rb), "--protocol", "missing", "--levels", "0,0.25,0.5"]);
    let curve = rows(&rb.join("curve.csv"));
    assert_eq!(curve[0], "perturbation,seed,level,accuracy,precision,recall,f1,auroc,auprc");
    assert_eq!(curve.len(), 4);
    assert!(curve[3].starts_with("missing,0,0.5,"));
}

#[test]
fn bench_writes_one_row_per_length() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "d_model=4\nn_layers=1\nd_state=2\nchannels=3\n").unwrap();
    let text = ok(&["bench", "--T", "32,64,128", "--repeats", "1", "--config", p(&cfg), "--out", p(dir.path())]);
    assert!(text.contains("slope"));
    let bench = rows(&dir.path().join("bench.csv"));
    assert_eq!(bench[0], "T,median_seconds,ratio");
    assert_eq!(bench.len(), 4);
}

#[test]
fn gradcheck_exit_code_follows_verdict() {
    let out = medmamba(&["gradcheck"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max relative error:"), "{text}");
    let passed = text.lines().any(|l| l.starts_with("PASS"));
    assert_eq!(out.status.success(), passed, "{text}");
    let loose = medmamba(&["gradcheck", "--tol", "1"]);
    assert!(loose.status.success());
}

#[test]
fn usage_and_runtime_errors() {
    assert_eq!(medmamba(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(medmamba(&["frobnicate"]).status.code(), Some(2));
    let missing = medmamba(&["train", "--data", "/nonexistent/d.csv"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));

    let dir = tempfile::tempdir().unwrap();
    let (data, _) = setup(dir.path());
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "d_model=4\nwidth=9\n").unwrap();
    let out = medmamba(&["train", "--data", &data, "--config", p(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
