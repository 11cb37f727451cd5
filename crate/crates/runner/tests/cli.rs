use std::path::Path;
use std::process::{Command, Output};

use fidelity_runner::output::{RunManifest, Sidecar};

const SMALL: &[&str] = &["N=64", "ensemble=4", "T=10", "sigma=1.0", "samples=2000", "k_e=1.0"];

fn fidelity(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fidelity")).args(args).output().expect("binary runs")
}

fn run_small(command: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![command, "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    fidelity(&args)
}

fn read_manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small("fidelity", &dir.path().join("run"), &["colour=blue"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn invalid_value_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small("fidelity", &dir.path().join("run"), &["N=63"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_small("fidelity", &dir.path().join("run"), &["map=tent"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    let out = fidelity(&["classical", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_small("fidelity", &a, &[]).status.success());
    std::fs::rename(&a, &b).unwrap();
    assert!(run_small("fidelity", &a, &[]).status.success());
    let manifest = read_manifest(&a);
    for f in manifest.files.iter().filter(|f| *f != "manifest.json") {
        let same = std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
        assert!(same, "{f} differs between identical runs");
    }
    let c = dir.path().join("c");
    assert!(run_small("fidelity", &c, &["--seed", "2"]).status.success());
    assert_ne!(
        std::fs::read(a.join("fidelity.csv")).unwrap(),
        std::fs::read(c.join("fidelity.csv")).unwrap()
    );
}

#[test]
fn manifest_lists_every_file_and_each_table_has_a_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = run_small("fidelity", &out_dir, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_manifest(&out_dir);
    let mut on_disk: Vec<String> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    on_disk.sort();
    let mut listed = manifest.files.clone();
    listed.sort();
    assert_eq!(on_disk, listed);
    assert_eq!(manifest.command, "fidelity");

    let tables: Vec<&String> = manifest.files.iter().filter(|f| f.ends_with(".csv")).collect();
    assert!(!tables.is_empty());
    for f in tables {
        let stem = f.trim_end_matches(".csv");
        let meta: Sidecar =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join(format!("{stem}.meta.json"))).unwrap())
                .unwrap();
        assert_eq!(&meta.file, f);
        assert_eq!(meta.config_hash, manifest.config_hash);
        let body = std::fs::read_to_string(out_dir.join(f)).unwrap();
        let header = body.lines().next().unwrap();
        assert_eq!(header.split(',').collect::<Vec<_>>(), meta.columns);
        assert_eq!(body.lines().count() - 1, meta.rows);
    }
}

#[test]
fn json_format_writes_json_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    assert!(run_small("fidelity", &out_dir, &["--format", "json"]).status.success());
    let manifest = read_manifest(&out_dir);
    assert!(manifest.files.iter().all(|f| f.ends_with(".json")));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("fidelity.json")).unwrap()).unwrap();
    assert!(v.is_object() || v.is_array());
}

#[test]
fn flags_and_overrides_take_precedence_over_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "map = \"sawtooth\"\nK = 1.0\nN = 128\nseed = 5\nensemble = 3\nT = 5\nsigma = 0.5\nk_e = 1.0\nsamples = 2000\n",
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let out = fidelity(&[
        "fidelity",
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        out_dir.to_str().unwrap(),
        "N=64",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: Sidecar =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("fidelity.meta.json")).unwrap()).unwrap();
    assert_eq!(meta.config["seed"], 9);
    assert_eq!(meta.config["N"], 64);
    assert_eq!(meta.config["ensemble"], 3);
    assert_eq!(meta.config["map"], "sawtooth");
}

#[test]
fn every_command_runs_at_small_scale() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 8] = [
        ("fidelity", &[]),
        ("compare-sc", &["state=\"gaussian\"", "T=3"]),
        ("fgr-scan", &["sigmas=[0.5, 1.0]"]),
        ("short-time", &["sigmas=[0.5, 1.0]"]),
        ("classical", &["T=5"]),
        ("action-stats", &["T=5"]),
        ("levy", &["T=3", "bins=40", "samples=20000"]),
        ("regimes", &["sizes=[64]", "horizon=1.5"]),
    ];
    for (command, extra) in cases {
        let out_dir = dir.path().join(command);
        let out = run_small(command, &out_dir, extra);
        assert!(out.status.success(), "{command}: {}", String::from_utf8_lossy(&out.stderr));
        let manifest = read_manifest(&out_dir);
        assert_eq!(manifest.command, command);
        assert!(manifest.files.len() >= 3, "{command}: {:?}", manifest.files);
    }
}

#[test]
fn unresolvable_quadrature_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small("compare-sc", &dir.path().join("run"), &["sigma=1e9", "T=3"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("quadrature"));
}
