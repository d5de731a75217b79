use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eeggraph"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth(dir: &Path) -> PathBuf {
    let spec = fixture("synthetic_spec.txt");
    let out = run(&["synth", spec.to_str().unwrap(), "features.csv"], dir);
    assert!(out.status.success(), "{}", stderr(&out));
    dir.join("features.csv")
}

#[test]
fn loso_on_bundled_fixture_writes_ten_rows() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = fixture("train.cfg");
    let out = run(&["loso", "features.csv", cfg.to_str().unwrap(), "out"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("fold ")).count(), 10);
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("mean_acc=") && last.contains(" std=") && last.contains(" mean_epochs="));

    let results = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(lines.next(), Some("subject,accuracy,tp,fp,fn,tn,epochs"));
    assert_eq!(lines.count(), 10);
    for name in ["loss.csv", "config.txt", "confusion.txt"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
}

#[test]
fn identical_flags_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = fixture("train.cfg");
    let before = fs::read(dir.path().join("features.csv")).unwrap();
    for out_dir in ["a", "b"] {
        let out = run(
            &["loso", "features.csv", cfg.to_str().unwrap(), out_dir, "--seed", "5", "--epochs", "8", "--jobs", "2"],
            dir.path(),
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in ["results.csv", "loss.csv", "config.txt", "confusion.txt"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    assert_eq!(fs::read(dir.path().join("features.csv")).unwrap(), before);

    let spec = fixture("synthetic_spec.txt");
    assert!(run(&["synth", spec.to_str().unwrap(), "again.csv"], dir.path()).status.success());
    assert_eq!(fs::read(dir.path().join("again.csv")).unwrap(), before);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = fixture("train.cfg");
    let out = run(
        &[
            "loso",
            "features.csv",
            cfg.to_str().unwrap(),
            "out",
            "--lambda",
            "0.5",
            "--alpha",
            "0.02",
            "--lr",
            "0.02",
            "--epochs",
            "3",
            "--variant",
            "rgnn_no_attention",
            "--bins",
            "8",
            "--seed",
            "9",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let written = fs::read_to_string(dir.path().join("out/config.txt")).unwrap();
    for line in [
        "lambda=0.5",
        "alpha=0.02",
        "lr=0.02",
        "max_epochs=3",
        "variant=rgnn_no_attention",
        "bins=8",
        "seed=9",
    ] {
        assert!(written.lines().any(|l| l == line), "{line} missing from\n{written}");
    }
}

#[test]
fn report_prints_row_normalized_confusion() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("res")).unwrap();
    fs::write(
        dir.path().join("res/results.csv"),
        "subject,accuracy,tp,fp,fn,tn,epochs\ns01,0.75,3,1,1,3,10\ns02,1,4,0,0,4,12\n",
    )
    .unwrap();
    let out = run(&["report", "res"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let pct = text.split("percent of true class").nth(1).expect("percent table");
    let pleasure = pct.lines().find(|l| l.starts_with("pleasure")).unwrap();
    let rage = pct.lines().find(|l| l.starts_with("rage")).unwrap();
    assert_eq!(pleasure.split_whitespace().collect::<Vec<_>>(), ["pleasure", "87.50", "12.50"]);
    assert_eq!(rage.split_whitespace().collect::<Vec<_>>(), ["rage", "12.50", "87.50"]);
    assert!(text.contains("mean_acc=0.8750"));
}

#[test]
fn sweep_writes_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let grid = fixture("grid.txt");
    let out = run(
        &["sweep", "features.csv", grid.to_str().unwrap(), "sw", "--epochs", "2"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("lambda,alpha,mean_acc,std_acc"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("0,0.01,") && rows[1].starts_with("1,0.01,"));
}

#[test]
fn train_writes_checkpoint_for_holdout() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = fixture("train.cfg");
    let out = run(
        &["train", "features.csv", cfg.to_str().unwrap(), "tr", "--holdout", "s04", "--epochs", "3"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("fold s04 "));
    let ckpt = fs::read_to_string(dir.path().join("tr/checkpoint.txt")).unwrap();
    assert!(ckpt.starts_with("eeggraph-checkpoint"));

    let bad = run(
        &["train", "features.csv", cfg.to_str().unwrap(), "tr2", "--holdout", "s99"],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(4));
    assert!(stderr(&bad).contains("--holdout"));
    assert!(!dir.path().join("tr2").exists());
}

#[test]
fn featurize_raw_directory() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    fs::create_dir(&raw).unwrap();
    let header = "AF3,F7,F3,FC5,T7,P7,O1,O2,P8,T8,FC6,F4,F8,AF4,label";
    for (s, subject) in ["s01", "s02"].iter().enumerate() {
        let mut body = format!("{header}\n");
        for t in 0..512usize {
            let cells: Vec<String> = (0..14)
                .map(|c| {
                    let x = t as f64 / 128.0;
                    let v = (2.0 * std::f64::consts::PI * (3.0 + c as f64) * x).sin()
                        + 0.3 * ((t * 31 + c * 17 + s * 7) % 23) as f64 / 23.0;
                    format!("{v}")
                })
                .collect();
            body.push_str(&cells.join(","));
            body.push_str(if t < 256 { ",pleasure\n" } else { ",rage\n" });
        }
        fs::write(raw.join(format!("{subject}.csv")), body).unwrap();
    }
    let out = run(&["featurize", "raw", "feat.csv", "--adjacency", "adj.csv"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let feats = fs::read_to_string(dir.path().join("feat.csv")).unwrap();
    let head = feats.lines().next().unwrap();
    assert!(head.starts_with("subject,label,AF3_delta,AF3_theta"));
    assert_eq!(head.split(',').count(), 72);
    let subjects: std::collections::BTreeSet<&str> =
        feats.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(subjects.into_iter().collect::<Vec<_>>(), ["s01", "s02"]);
    assert!(dir.path().join("adj.csv").exists());
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["loso", "a.csv", "b.cfg", "out", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("--bogus") && err.contains("Usage"));
}

#[test]
fn missing_input_is_io_error_naming_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("train.cfg");
    let out = run(&["loso", "nowhere.csv", cfg.to_str().unwrap(), "out"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("nowhere.csv"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_values_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = fixture("train.cfg");
    let out = run(&["loso", "features.csv", cfg.to_str().unwrap(), "out", "--lr", "-1"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("lr"));

    fs::write(dir.path().join("bad.cfg"), "lambda=1\ngamma=2\n").unwrap();
    let out = run(&["loso", "features.csv", "bad.cfg", "out"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("bad.cfg") && stderr(&out).contains("gamma"));

    fs::write(dir.path().join("spec.txt"), "n_subjects=1\n").unwrap();
    let out = run(&["synth", "spec.txt", "x.csv"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("spec.txt"));
    assert!(!dir.path().join("out").exists());
    assert!(!dir.path().join("x.csv").exists());
}
