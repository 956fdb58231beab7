use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wavresnet"))
}

fn sample_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.cfg")
}

fn run(args: &[OsString]) -> Output {
    bin().args(args).output().expect("binary runs")
}

macro_rules! args {
    ($($x:expr),* $(,)?) => { vec![$(OsString::from($x)),*] };
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let o = run(&args![]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8_lossy(&o.stderr) + String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("Usage"));
}

#[test]
fn help_exits_0_and_bad_flag_exits_1() {
    assert_eq!(run(&args!["--help"]).status.code(), Some(0));
    assert_eq!(run(&args!["fbp", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&args!["frobnicate"]).status.code(), Some(1));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&args!["fbp", "-i", dir.path().join("absent.wimg"), "-o", dir.path().join("x.wimg")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_override_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.wimg");
    let o = run(&args!["phantom", "-o", s(&out), "--set", "sim.size=big"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&args!["phantom", "-o", s(&out), "--set", "nonsense"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn nsct_roundtrip_prints_relative_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("ph.wimg");
    let cfg = sample_config();
    assert!(run(&args!["phantom", "-c", s(&cfg), "-o", s(&img)]).status.success());
    let o = run(&args!["nsct", "-c", s(&cfg), "--roundtrip", s(&img)]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let value: f64 = text
        .trim()
        .rsplit(' ')
        .next()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("no number in `{text}`"));
    assert!(value < 1e-8, "{value}");
}

#[test]
fn simulation_chain_writes_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let cfg = sample_config();
    let c = s(&cfg);
    let steps: Vec<Vec<OsString>> = vec![
        args!["phantom", "-c", c, "-o", p("ph.wimg"), "--pgm", p("ph.pgm")],
        args!["project", "-c", c, "-i", p("ph.wimg"), "-o", p("sino.wimg")],
        args!["noise", "-c", c, "-i", p("sino.wimg"), "-o", p("noisy.wimg"), "--photons", "500"],
        args!["fbp", "-c", c, "-i", p("noisy.wimg"), "-o", p("fbp.wimg")],
        args!["nsct", "-c", c, "-i", p("ph.wimg"), "-o", p("coeffs.wimg")],
        args!["nsct", "--inverse", "-i", p("coeffs.wimg"), "-o", p("back.wimg")],
        args![
            "mbir", "-c", c, "-i", p("noisy.wimg"), "-o", p("tv.wimg"), "--objective", p("obj.csv"),
            "--set", "mbir.outer_iters=3",
        ],
        args!["eval", "-r", p("ph.wimg"), p("ph.wimg"), "-t", p("fbp.wimg"), p("tv.wimg"), "--csv", p("eval.csv")],
    ];
    for args in &steps {
        let o = run(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["ph.pgm", "sino.wimg.geom", "noisy.wimg.geom", "coeffs.wimg.nsct", "back.wimg", "tv.wimg"] {
        assert!(p(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(p("obj.csv")).unwrap().lines().count(), 1 + 4);
    assert!(std::fs::read_to_string(p("eval.csv")).unwrap().starts_with("slice,method"));
}

#[test]
fn train_then_denoise_on_the_sample_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let cfg = sample_config();
    let c = s(&cfg);
    let o = run(&args!["synth", "-c", c, "-o", p("data"), "--set", "sim.phantoms=2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let manifest = p("data").join("manifest.tsv");
    let o = run(&args![
        "train", "-c", c, "-m", s(&manifest), "-o", p("run"),
        "--set", "train.iterations=4", "--set", "train.log_every=2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["convergence.csv", "final.wrn1", "best.wrn1", "training.cfg"] {
        assert!(p("run").join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(p("run").join("convergence.csv")).unwrap();
    assert!(csv.starts_with("iteration,lr,train_loss,val_psnr_db,val_nrmse"));
    assert_eq!(csv.lines().count(), 1 + 2);

    let trained_cfg = p("run").join("training.cfg");
    let o = run(&args![
        "denoise", "-c", s(&trained_cfg), "-i", p("data").join("pair_001_quarter.wimg"),
        "--checkpoint", p("run").join("best.wrn1"), "-o", p("den.wimg"), "--pgm", p("den.pgm"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(p("den.wimg").exists() && p("den.pgm").exists());

    let o = run(&args![
        "compare", "-c", c, "-m", s(&manifest), "--residual", p("run").join("final.wrn1"),
        "-o", p("cmp"), "--set", "mbir.outer_iters=2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(p("cmp").join("report.csv").exists());
    assert!(p("cmp").join("diff_residual_001.pgm").exists());

    let o = run(&args![
        "denoise", "-c", c, "-i", p("den.wimg"), "--checkpoint", p("run").join("final.wrn1"),
        "-o", p("x.wimg"), "--set", "net.width=8",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let cfg = sample_config();
    let c = s(&cfg);
    let small = ["--set", "sim.size=40", "--set", "sim.views=60", "--set", "sim.phantoms=2"];
    let mut args = args!["synth", "-c", c, "-o", p("data")];
    args.extend(small.iter().map(OsString::from));
    assert!(run(&args).status.success());
    let o = run(&args![
        "train", "-c", c, "-m", p("data").join("manifest.tsv"), "-o", p("run"),
        "--set", "train.iterations=2", "--set", "train.patch_size=16", "--set", "train.coeff_scale=1e170",
        "--set", "train.input_norm=none", "--set", "nsct.directions=4,2",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
