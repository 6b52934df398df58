use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_phasegen");

const SPEC: &str = r#"
name = "cli"
m_values = [20]
seeds = [0, 1]

[generator]
source = "random"
latent_dim = 3
hidden_dims = [8]
output_dim = 24
seed = 2

[truth]
mode = "planted_synthetic"
seed = 7

[appgd]
outer_iters = 4
inner_iters = 15
eta_in = 0.005

[apgd]
outer_iters = 4
inner_iters = 15
eta_in = 0.005

[gd]
inner_iters = 15
eta_in = 0.005
total_steps = 60
"#;

fn phasegen(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().expect("spawn phasegen")
}

fn run_to(dir: &Path, cfg: &Path, extra: &[&str]) -> String {
    let out_dir = dir.to_str().unwrap();
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out-dir", out_dir];
    args.extend_from_slice(extra);
    let out = phasegen(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::read_to_string(dir.join("results.csv")).unwrap()
}

#[test]
fn run_writes_results_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("spec.toml");
    std::fs::write(&cfg, SPEC).unwrap();

    let seq = run_to(&tmp.path().join("a"), &cfg, &["--threads", "1"]);
    let par = run_to(&tmp.path().join("b"), &cfg, &["--threads", "3"]);
    assert_eq!(seq, par);
    assert_eq!(seq.lines().count(), 1 + 3 * 2);
    assert!(tmp.path().join("a/manifest.json").exists());

    let only = run_to(&tmp.path().join("c"), &cfg, &["--solver", "apgd"]);
    assert_eq!(only.lines().count(), 3);
    assert!(only.lines().skip(1).all(|l| l.starts_with("apgd,")));
}

#[test]
fn run_rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "name = 3").unwrap();
    assert!(!phasegen(&["run", "--config", cfg.to_str().unwrap()]).status.success());
    assert!(!phasegen(&["run", "--config", "/nonexistent.toml"]).status.success());
    std::fs::write(&cfg, SPEC).unwrap();
    assert!(!phasegen(&["run", "--config", cfg.to_str().unwrap(), "--threads", "0"]).status.success());
}

fn write_images(path: &Path) {
    let imgs: Vec<Vec<u8>> = (0..3u8)
        .map(|s| (0..16u8).map(|i| i.wrapping_mul(13).wrapping_add(s * 50)).collect())
        .collect();
    std::fs::write(path, phasegen::dataset::encode_idx_images(4, 4, &imgs)).unwrap();
}

#[test]
fn train_glo_then_project() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("imgs.idx");
    write_images(&data);
    let weights = tmp.path().join("g.json");
    let report = tmp.path().join("report.json");
    let cfg = tmp.path().join("glo.toml");
    std::fs::write(
        &cfg,
        format!(
            "seed = 1\nweights_out = \"{}\"\nreport_out = \"{}\"\n\n[glo]\nlatent_dim = 2\nhidden_dims = [8]\nepochs = 20\nlr_weights = 0.01\nlr_latent = 0.01\n",
            weights.display(),
            report.display()
        ),
    )
    .unwrap();
    let out = phasegen(&["train-glo", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let g = phasegen::GeneratorNetwork::load_weights_from(&weights).unwrap();
    assert_eq!((g.latent_dim(), g.output_dim()), (2, 16));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["epoch_losses"].as_array().unwrap().len(), 20);
    assert_eq!(rep["latents"].as_array().unwrap().len(), 3);

    let target = tmp.path().join("w.txt");
    std::fs::write(&target, vec!["0.5"; 16].join(" ")).unwrap();
    let result = tmp.path().join("p.json");
    let out = phasegen(&[
        "project",
        "--weights",
        weights.to_str().unwrap(),
        "--input",
        target.to_str().unwrap(),
        "--steps",
        "50",
        "--output",
        result.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let p: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    assert_eq!(p["x"].as_array().unwrap().len(), 16);
    assert_eq!(p["z"].as_array().unwrap().len(), 2);
    assert!(p["loss"].as_f64().unwrap().is_finite());

    std::fs::write(&target, "[1, 2, 3]").unwrap();
    let out = phasegen(&["project", "--weights", weights.to_str().unwrap(), "--input", target.to_str().unwrap()]);
    assert!(!out.status.success());
}
