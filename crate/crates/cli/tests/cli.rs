use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SPEC: &str = "seed = 3\nleaves = 8\nparents = 2\nprofile = 60:60,60:60\n\
                    recognition_eval_per_class = 10\nqa_eval_per_class = 10\n";

fn svlr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svlr")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace { dir: TempDir::new().unwrap() };
        fs::write(ws.path("spec.txt"), SPEC).unwrap();
        let out = svlr(&["synth", "--spec", p(&ws.path("spec.txt")), "--out", p(&ws.path("corpus"))]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, name: &str, config: &str) -> Output {
        let cfg = self.path(&format!("{name}.cfg"));
        fs::write(&cfg, config).unwrap();
        svlr(&["train", "--config", p(&cfg), "--corpus", p(&self.path("corpus")), "--out", p(&self.path(name))])
    }
}

#[test]
fn gradcheck_passes_on_a_clean_build() {
    let out = svlr(&["gradcheck", "--seed", "1"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("cases passed for seed 1"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&svlr(&["gradcheck", "--sed", "1"])), 2);
    assert_eq!(code(&svlr(&["frobnicate"])), 2);
    assert_eq!(code(&svlr(&[])), 2);
    assert_eq!(code(&svlr(&["probe", "--checkpoint", "x", "--corpus", "y"])), 2);
    assert_eq!(code(&svlr(&["--help"])), 0);
}

#[test]
fn contract_errors_exit_one() {
    let ws = Workspace::new();
    let out = ws.train("typo", "arm = vqa_only\nstep = 3\n");
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key `step`"));
    let missing = svlr(&["zeroshot", "--checkpoint", p(&ws.path("none.txt")), "--corpus", p(&ws.path("corpus"))]);
    assert_eq!(code(&missing), 1);
    fs::write(ws.path("bad_spec.txt"), "leaves = 0\n").unwrap();
    let bad = svlr(&["synth", "--spec", p(&ws.path("bad_spec.txt")), "--out", p(&ws.path("bad"))]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn zero_step_training_writes_initial_checkpoint_and_metrics() {
    let ws = Workspace::new();
    let out = ws.train("init", "arm = vqa_only\nsteps = 0\n");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(ws.path("init/metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert!(lines[0].starts_with("step,"), "{}", lines[0]);
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0,"));
    let ckpt = fs::read_to_string(ws.path("init/checkpoint.txt")).unwrap();
    assert!(ckpt.starts_with("SVLR-CHECKPOINT 1"));
    assert!(ckpt.contains("meta arm vqa_only"));
}

#[test]
fn reruns_produce_identical_files() {
    let ws = Workspace::new();
    let cfg = "arm = joint_svlr\nsteps = 20\neval_every = 10\nregion_batch = 16\nquestion_batch = 8\nseeds = 4, 5\n";
    assert_eq!(code(&ws.train("a", cfg)), 0);
    assert_eq!(code(&ws.train("b", cfg)), 0);
    for f in ["seed-4/metrics.csv", "seed-4/checkpoint.txt", "seed-5/metrics.csv"] {
        let a = fs::read(ws.path("a").join(f)).unwrap();
        let b = fs::read(ws.path("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between reruns");
    }
    let ckpt = ws.path("a/seed-4/checkpoint.txt");
    let corpus = ws.path("corpus");
    for report in ["r1", "r2"] {
        let out = svlr(&["eval", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--report", p(&ws.path(report))]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["vqa_val.csv", "recognition_test.csv", "attention_sweep.csv", "attention_correlation.csv"] {
        assert_eq!(fs::read(ws.path("r1").join(f)).unwrap(), fs::read(ws.path("r2").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn eval_writes_only_into_its_report_directory() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.train("base", "arm = genome_only\nsteps = 5\nregion_batch = 16\n")), 0);
    assert_eq!(code(&ws.train("joint", "arm = joint_svlr\nsteps = 5\nregion_batch = 16\nquestion_batch = 8\n")), 0);
    let before: Vec<_> = fs::read_dir(ws.dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    let out = svlr(&[
        "eval",
        "--checkpoint",
        p(&ws.path("joint/checkpoint.txt")),
        "--baseline",
        p(&ws.path("base/checkpoint.txt")),
        "--corpus",
        p(&ws.path("corpus")),
        "--report",
        p(&ws.path("report")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut after: Vec<_> = fs::read_dir(ws.dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    after.retain(|n| !before.contains(n));
    assert_eq!(after, vec![std::ffi::OsString::from("report")]);
    let grid = fs::read_to_string(ws.path("report/transfer_grid.csv")).unwrap();
    assert!(grid.starts_with("qa_freq,recognition_freq,classes,baseline,delta,members"));
    let sweep = fs::read_to_string(ws.path("report/attention_sweep.csv")).unwrap();
    assert!(sweep.starts_with("threshold,subset,model,center"));
}

#[test]
fn zero_shot_checkpoint_beats_chance() {
    let ws = Workspace::new();
    let out = ws.train("genome", "arm = genome_only\nsteps = 600\nregion_batch = 32\neval_every = 600\n");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = ws.path("genome/checkpoint.txt");
    let corpus = ws.path("corpus");
    let out = svlr(&["eval", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--report", p(&ws.path("report"))]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("scorer ZeroShot"), "{text}");
    let acc: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("vqa_val "))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(acc > 1.0 / 6.0, "zero-shot accuracy {acc}");
    let zs = svlr(&["zeroshot", "--checkpoint", p(&ckpt), "--corpus", p(&corpus)]);
    assert_eq!(code(&zs), 0);
    assert!(stdout(&zs).contains(&format!("zero-shot vqa_val {acc:.4}")), "{}", stdout(&zs));
}

#[test]
fn probe_lists_k_neighbors_per_space() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.train("m", "arm = joint_svlr\nsteps = 2\nregion_batch = 16\nquestion_batch = 4\n")), 0);
    let words = fs::read_to_string(ws.path("corpus/vocab.txt")).unwrap();
    let first: Vec<&str> = words.lines().skip(1).take(2).map(|l| l.split(' ').next().unwrap()).collect();
    let joined = first.join(",");
    let (ckpt, corpus, report) = (ws.path("m/checkpoint.txt"), ws.path("corpus"), ws.path("probe"));
    let args = [
        "probe",
        "--checkpoint",
        p(&ckpt),
        "--corpus",
        p(&corpus),
        "--words",
        joined.as_str(),
        "--k",
        "3",
        "--report",
        p(&report),
    ];
    let out = svlr(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 4, "{text}");
    let csv = fs::read_to_string(ws.path("probe/probe.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 3);
    let unknown = svlr(&[
        "probe",
        "--checkpoint",
        p(&ws.path("m/checkpoint.txt")),
        "--corpus",
        p(&ws.path("corpus")),
        "--words",
        "no-such-word",
    ]);
    assert_eq!(code(&unknown), 1);
}
