use std::path::Path;
use std::process::{Command, Output};

use qloc_cli::{Manifest, RunError};

const CFG: &str = r#"{"seed": 7, "field": {"d": 1, "inv_eps": 16, "generator": {"type": "iid"}, "beta_scale": 8}, "subgrid": {"m": 2}}"#;

fn qloc(dir: &Path, args: &[&str], env_out: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qloc"));
    c.current_dir(dir).args(args).env_remove(qloc_cli::OUT_ENV);
    if let Some(p) = env_out {
        c.env(qloc_cli::OUT_ENV, p);
    }
    c.output().unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn output_dir_precedence() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.json");
    std::fs::write(&cfg, CFG.replace("\"seed\": 7,", "\"seed\": 7, \"output\": {\"dir\": \"from-config\"},")).unwrap();
    let cfg = cfg.to_str().unwrap();

    assert!(qloc(t.path(), &["gen", "--config", cfg], None).status.success());
    assert!(t.path().join("from-config/field.json").exists());

    let env = t.path().join("from-env");
    assert!(qloc(t.path(), &["gen", "--config", cfg], Some(&env)).status.success());
    assert!(env.join("field.json").exists());

    let out = t.path().join("from-flag");
    assert!(qloc(t.path(), &["gen", "--config", cfg, "--out", out.to_str().unwrap()], Some(&env)).status.success());
    assert!(out.join("field.json").exists());

    // same experiment, same hash, wherever it was written
    assert_eq!(manifest(&out).config_hash, manifest(&env).config_hash);
}

#[test]
fn config_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    let bad = t.path().join("bad.json");
    std::fs::write(&bad, CFG.replace("\"m\": 2", "\"m\": 2, \"bogus\": 1")).unwrap();
    let o = qloc(t.path(), &["gen", "--config", bad.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    std::fs::write(&bad, CFG.replace("\"inv_eps\": 16", "\"inv_eps\": 0")).unwrap();
    let o = qloc(t.path(), &["gen", "--config", bad.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("field.inv_eps"));

    let o = qloc(t.path(), &["gen", "--config", t.path().join("missing.json").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn manifest_is_bound_to_its_subcommand() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.json");
    std::fs::write(&cfg, CFG).unwrap();
    let a = t.path().join("a");
    assert!(qloc(t.path(), &["gen", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()], None).status.success());
    let m = a.join("manifest.json");
    let o = qloc(t.path(), &["geometry", "--config", m.to_str().unwrap(), "--out", "b"], None);
    assert_eq!(o.status.code(), Some(2));
    let o = qloc(t.path(), &["gen", "--config", m.to_str().unwrap(), "--out", "b"], None);
    assert!(o.status.success());
    assert_eq!(manifest(&a).artifacts, manifest(&t.path().join("b")).artifacts);
}

#[test]
fn seed_override_changes_hash_and_field() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.json");
    std::fs::write(&cfg, CFG).unwrap();
    let c = cfg.to_str().unwrap();
    assert!(qloc(t.path(), &["gen", "--config", c, "--out", "a"], None).status.success());
    assert!(qloc(t.path(), &["gen", "--config", c, "--out", "b", "--seed", "8"], None).status.success());
    let (ma, mb) = (manifest(&t.path().join("a")), manifest(&t.path().join("b")));
    assert_ne!(ma.config_hash, mb.config_hash);
    assert_eq!(mb.config.seed, 8);
}

#[test]
fn artifacts_carry_hash_and_units() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.json");
    std::fs::write(&cfg, CFG).unwrap();
    let out = t.path().join("o");
    assert!(qloc(t.path(), &["oracle", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None).status.success());
    let m = manifest(&out);
    for a in &m.artifacts {
        let text = std::fs::read_to_string(out.join(&a.name)).unwrap();
        assert!(text.contains(&m.config_hash), "{} lacks the config hash", a.name);
        assert!(text.contains("units"), "{} lacks units", a.name);
        assert_eq!(qloc::io::sha256_hex(text.as_bytes()), a.sha256);
    }
}

#[test]
fn exit_codes_by_error_class() {
    assert_eq!(RunError::Config(String::new()).exit_code(), 2);
    assert_eq!(RunError::Numerical(String::new()).exit_code(), 3);
}
