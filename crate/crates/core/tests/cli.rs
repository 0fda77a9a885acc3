use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spdn::cli::{EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

const TOY: &str = "\
# tiny run for the command-line tests
n = 20
charset = ABCD
min_len = 1
max_len = 3
height = 32
width = 64
rectifier = false
enc_stem = 2
enc_widths = 3,3,4
hidden = 5
attn_dim = 4
embed_dim = 3
pos_dim = 3
pau_hidden = 4,3
t_max = 5
batch = 4
epochs = 1
lambda = 0.5
bench_steps = 2,4
bench_reps = 3
bench_warmup = 1
bench_images = 2
";

fn spdn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spdn")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.cfg"), TOY).unwrap();
    let o = spdn(dir.path(), &["gen-data", "--config", "toy.cfg", "--out", "data"]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    dir
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_writes_manifest_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = spdn(dir.path(), &["gen-data", "--set", "n=10", "--set", "max_len=4", "--out", "d"]);
    assert_eq!(code(&o), EXIT_OK);
    let manifest = fs::read_to_string(dir.path().join("d/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 11);
    assert!(dir.path().join("d/000009.pgm").exists());
}

#[test]
fn unknown_subcommand_and_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = spdn(dir.path(), &["bogus"]);
    assert_eq!(code(&o), EXIT_USAGE);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gen-data"));
    let o = spdn(dir.path(), &["gen-data", "--set", "nonsense=3", "--out", "d"]);
    assert_eq!(code(&o), EXIT_USAGE);
    assert!(String::from_utf8_lossy(&o.stderr).contains("valid keys"));
    let o = spdn(dir.path(), &["gen-data", "--set", "n=many", "--out", "d"]);
    assert_eq!(code(&o), EXIT_USAGE);
    assert_eq!(code(&spdn(dir.path(), &["--help"])), EXIT_OK);
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = spdn(dir.path(), &["train", "--set", "data=missing", "--out", "run"]);
    assert_eq!(code(&o), EXIT_RUNTIME);
}

#[test]
fn overrides_beat_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.cfg"), TOY).unwrap();
    let args = ["gen-data", "--config", "toy.cfg", "--set", "lambda=0", "--set", "seed=4", "--seed", "9", "--out", "d"];
    assert_eq!(code(&spdn(dir.path(), &args)), EXIT_OK);
    let cfg = fs::read_to_string(dir.path().join("d/config.cfg")).unwrap();
    assert!(cfg.lines().any(|l| l == "lambda = 0"), "{cfg}");
    assert!(cfg.lines().any(|l| l == "seed = 9"));
    assert!(cfg.lines().any(|l| l == "charset = ABCD"));
}

#[test]
fn train_eval_and_friends_stay_inside_out() {
    let dir = setup();
    let root = dir.path();
    let before = files(root);
    let run = |args: &[&str]| {
        let o = spdn(root, args);
        assert_eq!(code(&o), EXIT_OK, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["train", "--config", "toy.cfg", "--out", "serial"]);
    run(&["train", "--config", "toy.cfg", "--set", "variant=attention", "--out", "attn"]);
    run(&["eval", "--config", "toy.cfg", "--set", "checkpoint=serial/best.spdn", "--out", "eval"]);
    run(&[
        "visualize",
        "--config",
        "toy.cfg",
        "--set",
        "checkpoint=serial/best.spdn",
        "--set",
        "ids=0,1",
        "--out",
        "vis",
    ]);
    run(&["analyze-attn", "--config", "toy.cfg", "--set", "checkpoint=attn/best.spdn", "--out", "peak"]);
    run(&["bench", "--config", "toy.cfg", "--out", "bench"]);

    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("eval/eval.json")).unwrap()).unwrap();
    assert_eq!(eval["n"], 2);
    assert_eq!(eval["variant"], "serial");
    assert_eq!(fs::read_to_string(root.join("eval/predictions.tsv")).unwrap().lines().count(), 3);
    for f in ["vis/000000_input.pgm", "vis/000000.json", "vis/000001.ppm", "peak/peakedness.json", "bench/bench.json"] {
        assert!(root.join(f).exists(), "{f}");
    }
    let bench: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("bench/bench.json")).unwrap()).unwrap();
    assert_eq!(bench["flop_convention"], "mul1_add1_nl4");
    assert!(bench["analytic"]["serial"]["per_seq"]["4"].is_number());

    let o = spdn(root, &["visualize", "--config", "toy.cfg", "--set", "checkpoint=attn/best.spdn", "--out", "vis2"]);
    assert_eq!(code(&o), EXIT_USAGE);

    let outs = ["serial", "attn", "eval", "vis", "vis2", "peak", "bench"].map(|d| root.join(d));
    for f in files(root) {
        assert!(before.contains(&f) || outs.iter().any(|o| f.starts_with(o)), "unexpected write {}", f.display());
    }
}

#[test]
fn saved_config_reproduces_the_run() {
    let dir = setup();
    let root = dir.path();
    let first = spdn(root, &["train", "--config", "toy.cfg", "--set", "k=2", "--seed", "3", "--out", "a"]);
    assert_eq!(code(&first), EXIT_OK);
    let again = spdn(root, &["train", "--config", "a/config.cfg", "--out", "b"]);
    assert_eq!(code(&again), EXIT_OK);
    for f in ["config.cfg", "metrics.csv", "steps.csv", "last.spdn", "best.spdn"] {
        assert_eq!(fs::read(root.join("a").join(f)).unwrap(), fs::read(root.join("b").join(f)).unwrap(), "{f}");
    }
}
