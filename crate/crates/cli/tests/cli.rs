use std::path::Path;
use std::process::{Command, Output};

fn localdif(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_localdif"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn localdif")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const QUICK: &[&str] = &["--threads", "1", "--set", "scan.angular.azimuth=256", "--set", "scan.angular.elevation=24"];

fn quick<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    QUICK.iter().chain(extra).copied().collect()
}

#[test]
fn zero_step_fit_yields_a_reproducible_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for cmd in ["synth", "sample"] {
        let o = localdif(d, &quick(&[cmd]));
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    assert!(d.join("manifests/synth.toml").exists());
    let fit = || {
        let o = localdif(d, &quick(&["--set", "training.steps=0", "--set", "training.seed=1", "fit"]));
        assert!(o.status.success(), "fit: {}", stderr(&o));
        std::fs::read(d.join("model.ckpt")).unwrap()
    };
    let a = fit();
    let b = fit();
    assert!(!a.is_empty());
    assert!(a == b, "checkpoints differ");
}

#[test]
fn unknown_key_is_a_usage_error_with_a_suggestion() {
    let dir = tempfile::tempdir().unwrap();
    let o = localdif(dir.path(), &["--set", "grid.dleta=0.3", "validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("did you mean 'grid.delta'"), "{}", stderr(&o));
}

#[test]
fn default_configuration_validates_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = localdif(dir.path(), &["validate"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "configuration ok");
}

#[test]
fn negative_delta_is_reported_against_its_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = localdif(dir.path(), &["--set", "grid.delta=-1", "validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("error: grid.delta"), "{}", stdout(&o));
}

#[test]
fn disabling_consistency_warns_about_the_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let o = localdif(dir.path(), &["--set", "training.lambda_c=0", "validate"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("warning: training.lambda_c"), "{}", stdout(&o));
    assert!(stdout(&o).contains("ablation"));
}

#[test]
fn reference_config_spells_out_the_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let reference = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml");
    let a = localdif(dir.path(), &["show-config"]);
    let b = localdif(dir.path(), &["--config", reference.to_str().unwrap(), "show-config"]);
    assert!(a.status.success() && b.status.success(), "{}", stderr(&b));
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = localdif(dir.path(), &["--threads", "1", "sample"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
