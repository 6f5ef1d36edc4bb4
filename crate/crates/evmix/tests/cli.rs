use std::path::Path;
use std::process::{Command, Output};

use evmix::config::{load_detector_model, ModelConfig};
use proptest::prelude::*;

fn evmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evmix")).args(args).env_remove("EVMIX_BACKEND").output().unwrap()
}

fn field(stdout: &[u8], key: &str) -> String {
    String::from_utf8_lossy(stdout)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")).map(str::to_owned))
        .unwrap_or_else(|| panic!("no {key} line"))
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> String {
    let path = dir.join(name);
    let p = path.to_str().unwrap().to_owned();
    let mut args = vec!["simulate", "--out", &p];
    args.extend_from_slice(extra);
    let out = evmix(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    p
}

#[test]
fn simulated_low_noise_state_is_entangled() {
    let dir = tempfile::tempdir().unwrap();
    let stats = simulate(dir.path(), "s.csv", &["--omega", "0.05", "--loss", "0.3"]);
    let out = evmix(&["verify", &stats]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(field(&out.stdout, "verdict"), "ENTANGLED");
}

#[test]
fn noisy_state_is_not_verified() {
    let dir = tempfile::tempdir().unwrap();
    let stats = simulate(dir.path(), "s.csv", &["--omega", "0.6"]);
    let out = evmix(&["verify", &stats]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(field(&out.stdout, "verdict"), "NOT_VERIFIED");
}

#[test]
fn margin_grows_with_noise() {
    let dir = tempfile::tempdir().unwrap();
    let margins: Vec<f64> = [0.0, 0.1, 0.2]
        .iter()
        .map(|w| {
            let s = w.to_string();
            let stats = simulate(dir.path(), &format!("{w}.csv"), &["--omega", &s, "--p-multi", "0.02"]);
            field(&evmix(&["verify", &stats]).stdout, "margin").parse().unwrap()
        })
        .collect();
    assert!(margins.windows(2).all(|w| w[0] <= w[1] + 1e-7), "{margins:?}");
}

#[test]
fn dump_problem_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let stats = simulate(dir.path(), "s.csv", &["--omega", "0.1"]);
    let dumps: Vec<String> = (0..2)
        .map(|k| {
            let d = dir.path().join(format!("dump{k}.txt"));
            evmix(&["verify", &stats, "--dump-problem", d.to_str().unwrap()]);
            std::fs::read_to_string(d).unwrap()
        })
        .collect();
    assert!(!dumps[0].is_empty());
    assert_eq!(dumps[0], dumps[1]);
}

#[test]
fn config_errors_exit_with_three() {
    assert_eq!(evmix(&["--scheme", "both", "povm-dump"]).status.code(), Some(3));
    assert_eq!(evmix(&["--backend", "simplex", "povm-dump"]).status.code(), Some(3));
    assert_eq!(evmix(&["simulate", "--omega", "1.5"]).status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "kind = \"squash-compare\"\nmodel = { scheme = \"active\", spatial_modes = 1, eta = 1.0 }\n").unwrap();
    assert_eq!(evmix(&["scan", bad.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn backend_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_evmix")).args(["povm-dump"]).env("EVMIX_BACKEND", "nope").output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let out = Command::new(env!("CARGO_BIN_EXE_evmix")).args(["povm-dump"]).env("EVMIX_BACKEND", "ipm").output().unwrap();
    assert!(out.status.success());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(root.join("models")).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        load_detector_model(&text).unwrap();
    }
    for entry in std::fs::read_dir(root.join("experiments")).unwrap() {
        evmix::config::ExperimentSpec::load(&entry.unwrap().path()).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn model_config_round_trips(passive in any::<bool>(), rows in proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, 4), 1..=4)) {
        let width = if passive { 4 } else { 2 };
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| r[..width].to_vec()).collect();
        let cfg = ModelConfig {
            scheme: if passive { "passive" } else { "active" }.into(),
            spatial_modes: rows.len(),
            eta: None,
            efficiencies: Some(rows.clone()),
            name: None,
        };
        let text = toml::to_string(&cfg).unwrap();
        let back: ModelConfig = toml::from_str(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        let model = back.model().unwrap();
        prop_assert_eq!(model.rows(), &rows[..]);
    }
}
