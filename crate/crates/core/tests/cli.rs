use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dsta(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsta"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn only_run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

const SMALL: &str = "\
count = 60
[data]
val_items = 20
[train]
epochs = 1
decay_epochs = []
batch_size = 8
";

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsta(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for cmd in ["generate", "train", "eval", "bench", "gradcheck"] {
        assert!(text.contains(cmd), "{text}");
    }
    assert!(!text.contains("corrupt"));
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dsta(dir.path(), &["generate", "--count", "0"]).status.code(), Some(1));
    assert_eq!(dsta(dir.path(), &["frobnicate"]).status.code(), Some(1));
    fs::write(dir.path().join("bad.toml"), "sede = 3\n").unwrap();
    let o = dsta(dir.path(), &["--config", "bad.toml", "bench"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sede"));
    assert_eq!(dsta(dir.path(), &["--scheme", "diagonal", "bench"]).status.code(), Some(1));
}

#[test]
fn format_flag_documents_the_file_layout() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsta(dir.path(), &["generate", "--format"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("DSTA-DATASET 1"));
}

#[test]
fn missing_files_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsta(
        dir.path(),
        &["eval", "--checkpoint", "nope.ckpt", "--dataset", "nope.bin", "--out", "runs"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.ckpt"));
}

#[test]
fn gradcheck_passes_and_catches_a_broken_backward() {
    let dir = tempfile::tempdir().unwrap();
    let ok = dsta(dir.path(), &["gradcheck"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let text = stdout(&ok);
    for scheme in ["space ", "joint ", "divided "] {
        assert!(text.lines().any(|l| l.starts_with(scheme)), "{text}");
    }
    let bad = dsta(dir.path(), &["gradcheck", "--corrupt-backward", "--scheme", "joint"]);
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn bench_rows_agree_with_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsta(dir.path(), &["bench", "--repeats", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let flops = |name: &str| -> (u64, u64) {
        let l = text.lines().find(|l| l.starts_with(name)).unwrap();
        let f: Vec<&str> = l.split_whitespace().collect();
        (f[2].parse().unwrap(), f[3].parse().unwrap())
    };
    for s in ["space", "joint", "divided"] {
        let (a, c) = flops(s);
        assert_eq!(a, c);
    }
    assert!(flops("divided").0 < flops("joint").0);
}

#[test]
fn generate_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("small.toml"), SMALL).unwrap();

    let g = dsta(d, &["--config", "small.toml", "--seed", "5", "generate", "--out", "data"]);
    assert_eq!(g.status.code(), Some(0), "{}", String::from_utf8_lossy(&g.stderr));
    let gen_text = stdout(&g);
    assert!(gen_text.contains("# seed = 5"));
    let data_dir = only_run_dir(&d.join("data"));
    assert!(data_dir.file_name().unwrap().to_str().unwrap().ends_with("-seed5"));
    let echoed = fs::read_to_string(data_dir.join("config.toml")).unwrap();
    assert!(echoed.contains("[data]") && echoed.contains("seed = 5"));
    let dataset = data_dir.join("dataset.bin");

    let t = dsta(
        d,
        &["--config", "small.toml", "--seed", "5", "train", "--dataset", dataset.to_str().unwrap(), "--out", "train"],
    );
    assert_eq!(t.status.code(), Some(0), "{}", String::from_utf8_lossy(&t.stderr));
    let run = only_run_dir(&d.join("train"));
    let log = fs::read_to_string(run.join("metrics.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("step ")).count(), 5);
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch ")).count(), 1);
    assert!(run.join("best.ckpt").exists() && run.join("last.ckpt").exists());

    let ckpt = run.join("best.ckpt");
    let eval = |out: &str| {
        let o = dsta(
            d,
            &[
                "--deterministic-crops",
                "eval",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--dataset",
                dataset.to_str().unwrap(),
                "--out",
                out,
            ],
        );
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let file = fs::read_to_string(only_run_dir(&d.join(out)).join("eval.txt")).unwrap();
        (stdout(&o), file)
    };
    let (a, file_a) = eval("eval_a");
    let (_, file_b) = eval("eval_b");
    assert_eq!(file_a, file_b);
    assert!(a.ends_with(&file_a));
    let last = file_a.lines().last().unwrap();
    assert!(last.starts_with("accuracy=") && last.ends_with("total=20"), "{last}");
}
