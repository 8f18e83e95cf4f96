use std::path::Path;
use std::process::{Command, Output};

use rankdehaze::imaging::RgbImage;
use rankdehaze::procedural;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rankdehaze"));
    c.env_remove("RANKDEHAZE_THREADS").env("RUST_LOG", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Small dataset, network and forest trained in `dir`.
fn fixture(dir: &Path) {
    ok(dir, &["synth", "--procedural", "--out", "d.rcds", "--patches", "120", "--per-patch", "5", "--seed", "4"]);
    ok(dir, &["train", "--dataset", "d.rcds", "--out", "m.net", "--epochs", "1", "--seed", "2"]);
    ok(dir, &["fit-rf", "--dataset", "d.rcds", "--model", "m.net", "--out", "f.rf", "--trees", "8"]);
}

fn write_image(path: &Path, seed: u64) {
    procedural::corpus(1, 40, 32, seed).remove(0).save(path).unwrap();
}

#[test]
fn help_lists_subcommands() {
    let out = bin().arg("--help").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["synth", "train", "fit-rf", "dehaze", "eval", "ablate"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn pipeline_outputs_and_sidecars() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture(dir);
    for f in ["m.net.history.csv", "m.net.train.txt", "f.rf.importance.csv"] {
        assert!(dir.join(f).exists(), "{f} not written");
    }
    let history = std::fs::read_to_string(dir.join("m.net.history.csv")).unwrap();
    assert!(history.starts_with("epoch,mean_loss,val_accuracy,lr"));
    assert_eq!(history.lines().count(), 2);

    write_image(&dir.join("in.png"), 9);
    let stdout = ok(
        dir,
        &[
            "dehaze", "--input", "in.png", "--model", "m.net", "--forest", "f.rf", "--out", "out.png",
            "--emit-transmission", "--emit-airlight", "--radius", "6",
        ],
    );
    assert!(stdout.contains("A = ("));
    let out = RgbImage::load(&dir.join("out.png")).unwrap();
    assert_eq!((out.width(), out.height()), (40, 32));
    let t = image::open(dir.join("out.transmission.png")).unwrap();
    assert!(matches!(t, image::DynamicImage::ImageLuma16(_)));
    let a: Vec<f64> = std::fs::read_to_string(dir.join("out.png.airlight.txt"))
        .unwrap()
        .split_whitespace()
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(a.len(), 3);
    assert!(a.iter().all(|v| (1e-3..=1.0).contains(v)));

    ok(dir, &["eval", "--procedural-cases", "2", "--case-size", "32", "--model", "m.net", "--forest", "f.rf", "--out", "e.csv"]);
    let csv = std::fs::read_to_string(dir.join("e.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "case,method,l1_transmission,l1_image,error");
    assert!(csv.contains("oracle") && csv.contains("no-op") && csv.contains("pipeline"));
    assert!(dir.join("e.txt").exists());
}

#[test]
fn bundle_directory_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fixture(dir);
    let cases = dir.join("cases");
    std::fs::create_dir_all(cases.join("a")).unwrap();
    write_image(&cases.join("a/clear.png"), 1);
    std::fs::write(cases.join("a/meta.txt"), "t=0.6\n").unwrap();
    ok(dir, &["eval", "--cases", "cases", "--model", "m.net", "--forest", "f.rf", "--out", "b.csv", "--radius", "4"]);
    let csv = std::fs::read_to_string(dir.join("b.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("a,oracle,0.000000,")));
}

#[test]
fn config_file_fills_arguments() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("s.cfg"), "# synth\nprocedural = true\nout = \"c.rcds\"\npatches = 30\nper_patch = 2\n").unwrap();
    let stdout = ok(dir, &["--config", "s.cfg", "synth"]);
    assert!(stdout.contains("wrote 60 samples"));
    // Flags win over the file.
    let stdout = ok(dir, &["--config", "s.cfg", "synth", "--patches", "10"]);
    assert!(stdout.contains("wrote 20 samples"));

    std::fs::write(dir.join("bad.cfg"), "procedural = true\nout = \"c.rcds\"\nbogus = 1\n").unwrap();
    let out = run(dir, &["--config", "bad.cfg", "synth"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn user_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::create_dir(dir.join("empty")).unwrap();
    std::fs::write(dir.join("junk.net"), b"not a model").unwrap();
    std::fs::write(dir.join("junk.rcds"), b"RCDS\xff\xff").unwrap();
    write_image(&dir.join("in.png"), 2);
    let cases: &[&[&str]] = &[
        &["synth", "--images", "empty", "--out", "x.rcds"],
        &["synth", "--images", "missing", "--out", "x.rcds"],
        &["synth", "--procedural", "--out", "no/such/dir/x.rcds"],
        &["synth", "--out", "x.rcds"],
        &["train", "--dataset", "junk.rcds", "--out", "m.net"],
        &["train", "--dataset", "missing.rcds", "--out", "m.net"],
        &["dehaze", "--input", "in.png", "--model", "junk.net", "--forest", "junk.net", "--out", "o.png"],
        &["ablate", "--name", "no-such-ablation"],
        &["--threads", "0", "synth", "--procedural", "--out", "x.rcds"],
    ];
    for args in cases {
        let out = run(dir, args);
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
    assert!(!dir.join("x.rcds").exists());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let read = |p: &str| std::fs::read(dir.join(p)).unwrap();
    let mut outputs: Vec<Vec<Vec<u8>>> = Vec::new();
    for threads in ["1", "3"] {
        let s = |p: &str| format!("{p}{threads}");
        let steps: Vec<Vec<String>> = vec![
            vec!["synth".into(), "--procedural".into(), "--out".into(), s("d"), "--patches".into(), "60".into()],
            vec!["train".into(), "--dataset".into(), s("d"), "--out".into(), s("m"), "--epochs".into(), "1".into()],
            vec![
                "fit-rf".into(), "--dataset".into(), s("d"), "--model".into(), s("m"), "--out".into(), s("f"),
                "--trees".into(), "6".into(),
            ],
        ];
        for step in steps {
            let out = bin().current_dir(dir).env("RANKDEHAZE_THREADS", threads).args(&step).output().unwrap();
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
        outputs.push(vec![read(&s("d")), read(&s("m")), read(&s("f"))]);
    }
    assert_eq!(outputs[0], outputs[1]);
}

