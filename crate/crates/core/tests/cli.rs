use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dawn");

fn dawn(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("DAWN_DATA_DIR").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &[
    "--dataset", "synth", "--train-per-class", "8", "--test-per-class", "4", "--synth-size", "16", "--input-size", "16",
    "--init", "4", "--levels", "2", "--classes", "4", "--batch-size", "8", "--no-wall-time", "-q",
];

fn train_small(out: &Path, epochs: &str) -> Output {
    let mut args = vec!["train", "--epochs", epochs, "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    dawn(&args)
}

fn total_params(args: &[&str]) -> i64 {
    let mut all = vec!["params"];
    all.extend_from_slice(args);
    let o = dawn(&all);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("total")).unwrap();
    line.split_whitespace().nth(1).unwrap().replace(',', "").parse().unwrap()
}

#[test]
fn train_writes_history_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = train_small(&out, "5");
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    for f in ["best.ckpt", "final.ckpt", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn eval_matches_last_history_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(train_small(&out, "3").status.success());
    let csv = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    let test_acc: f64 = last.split(',').nth(7).unwrap().parse().unwrap();

    let o = dawn(&["eval", "--checkpoint", out.join("final.ckpt").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let acc: f64 = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((acc - test_acc).abs() < 1e-9, "{text} vs {last}");
}

#[test]
fn saved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    assert!(train_small(&first, "2").status.success());
    let second = dir.path().join("b");
    let o = dawn(&[
        "train",
        "--config",
        first.join("config.toml").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
        "-q",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["history.csv", "final.ckpt", "config.toml"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn recipe_dry_run_resolves_schedule() {
    let o = dawn(&["train", "--recipe", "cifar", "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = dawn::cli::RunConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(cfg.train.epochs, 300);
    assert_eq!(cfg.train.decay_epochs, vec![150, 255]);
    assert_eq!(cfg.train.batch_size, 64);

    let o = dawn(&["train", "--recipe", "kth", "--epochs", "100", "--dry-run"]);
    let cfg = dawn::cli::RunConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!((cfg.train.epochs, cfg.train.decay_epochs), (100, vec![30, 60]));
}

#[test]
fn usage_errors_exit_two() {
    let o = dawn(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--bogus"));
    assert_eq!(dawn(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_one_with_path() {
    let o = dawn(&["eval", "--checkpoint", "/no/such/dir/final.ckpt", "--config", "/no/such/dir/config.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/dir/"), "{}", stderr(&o));
}

#[test]
fn params_reference_and_kernel_delta() {
    let base = ["--init", "64", "--classes", "100", "--input-size", "32"];
    let with = |extra: &[&str]| {
        let mut v: Vec<&str> = base.to_vec();
        v.extend_from_slice(extra);
        total_params(&v)
    };
    assert_eq!(with(&["--levels", "0", "--k", "3", "--h", "1"]), 45_348);
    let counts: Vec<i64> = (1..=4)
        .map(|k| with(&["--levels", "3", "--k", &k.to_string(), "--h", "1"]))
        .collect();
    for pair in counts.windows(2) {
        assert_eq!(pair[1] - pair[0], 147_456);
    }
}

#[test]
fn decompose_exports_bands_around_mid_gray() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("flat.png");
    image::RgbImage::from_pixel(32, 32, image::Rgb([90, 160, 30])).save(&input).unwrap();
    let run = |scale: &str, out: &str| {
        let out = dir.path().join(out);
        let o = dawn(&[
            "decompose",
            "--input",
            input.to_str().unwrap(),
            "--weights",
            "predict",
            "--detail-scale",
            scale,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("1", "a");
    let b = run("10", "b");
    let bands = std::fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("level"))
        .count();
    assert_eq!(bands, 12);
    for level in 1..=3 {
        for band in ["lh", "hl", "hh"] {
            let img = image::open(a.join(format!("level{level}_{band}.png"))).unwrap().to_luma8();
            assert!(img.pixels().all(|p| p.0[0] == 128), "level{level}_{band}");
        }
        let name = format!("level{level}_ll.png");
        assert_eq!(
            image::open(a.join(&name)).unwrap().to_luma8(),
            image::open(b.join(&name)).unwrap().to_luma8()
        );
    }
}
