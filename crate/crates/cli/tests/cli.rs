use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use police::io::{model_from_json, model_to_json, region_to_json};
use police::{fold_bias, Activation, Layer, Mat, Net, Network, Reg};

fn police(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_police"))
        .current_dir(dir)
        .arg("--quiet")
        .args(args)
        .output()
        .unwrap()
}

fn write_region(dir: &Path, region: &Reg) -> PathBuf {
    let path = dir.join("region.json");
    std::fs::write(&path, region_to_json(region)).unwrap();
    path
}

fn write_model(dir: &Path, name: &str, net: &Net) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, model_to_json(net)).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn unit_box() -> Reg {
    Reg::aligned_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap()
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let region = unit_box();
    write_region(dir.path(), &region);
    let net = Network::<f64>::mlp(&[2, 16, 16, 1], Activation::Relu, 3).unwrap();
    write_model(dir.path(), "raw.json", &net);
    write_model(dir.path(), "folded.json", &fold_bias(&net, &region).unwrap());

    let ok = police(&["verify", "--model", "folded.json", "--region", "region.json"], dir.path());
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let cert: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(cert["status"], "pass");
    assert_eq!(cert["semantics"], "as_is");

    let raw = police(&["verify", "--model", "raw.json", "--region", "region.json"], dir.path());
    assert_eq!(code(&raw), 2);
    let policed = police(&["verify", "--model", "raw.json", "--region", "region.json", "--policed"], dir.path());
    assert_eq!(code(&policed), 0);

    let few = police(&["verify", "--model", "folded.json", "--region", "region.json", "--samples", "3"], dir.path());
    assert_eq!(code(&few), 3);

    let missing = police(&["verify", "--model", "nope.json", "--region", "region.json"], dir.path());
    assert_eq!(code(&missing), 1);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.json"));
}

#[test]
fn zero_step_training_is_certified() {
    let dir = tempfile::tempdir().unwrap();
    let out = police(&["--seed", "4", "train", "--preset", "fig2", "--steps", "0", "--out", "m.json", "--history", "h.csv"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("certificate Pass"));
    write_region(dir.path(), &police::demo::preset_region());
    let v = police(&["verify", "--model", "m.json", "--region", "region.json"], dir.path());
    assert_eq!(code(&v), 0);
    assert_eq!(std::fs::read_to_string(dir.path().join("h.csv")).unwrap(), "step,loss,certificate_residual\n");
}

#[test]
fn train_from_files_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&police(&["--seed", "2", "demo", "--task", "regression", "--out", "d.csv"], dir.path())), 0);
    write_region(dir.path(), &Reg::simplex(2).unwrap());
    std::fs::write(dir.path().join("cfg.json"), r#"{"steps": 20, "batch_size": 32, "checkpoint_steps": [10]}"#).unwrap();
    let base = ["train", "--config", "cfg.json", "--data", "d.csv", "--region", "region.json", "--dims", "2,16,1"];

    let full = police(&[&base[..], &["--out", "a.json"]].concat(), dir.path());
    assert_eq!(code(&full), 0, "{}", String::from_utf8_lossy(&full.stderr));

    std::fs::write(dir.path().join("cfg10.json"), r#"{"steps": 10, "batch_size": 32}"#).unwrap();
    let mut first: Vec<&str> = base.to_vec();
    first[2] = "cfg10.json";
    let half = police(&[&first[..], &["--out", "h.json", "--checkpoint", "ck.json"]].concat(), dir.path());
    assert_eq!(code(&half), 0);
    let resumed = police(&[&base[..], &["--out", "b.json", "--resume", "ck.json"]].concat(), dir.path());
    assert_eq!(code(&resumed), 0, "{}", String::from_utf8_lossy(&resumed.stderr));
    assert_eq!(
        std::fs::read(dir.path().join("a.json")).unwrap(),
        std::fs::read(dir.path().join("b.json")).unwrap()
    );

    std::fs::write(dir.path().join("bad.json"), r#"{"steps": 5, "learning_rate": 1}"#).unwrap();
    let mut bad: Vec<&str> = base.to_vec();
    bad[2] = "bad.json";
    let rejected = police(&[&bad[..], &["--out", "c.json"]].concat(), dir.path());
    assert_eq!(code(&rejected), 1);
}

#[test]
fn demo_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for (task, header) in [("classification", "x,y,label"), ("regression", "x,y,target")] {
        police(&["--seed", "9", "demo", "--task", task, "--out", "a.csv"], dir.path());
        police(&["--seed", "9", "demo", "--task", task, "--out", "b.csv"], dir.path());
        let a = std::fs::read(dir.path().join("a.csv")).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
        assert!(a.starts_with(header.as_bytes()));
    }
    assert_eq!(code(&police(&["demo", "--task", "spiral", "--out", "c.csv"], dir.path())), 1);
}

fn read_grid(path: &Path) -> Vec<[f64; 3]> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            [v[0], v[1], v[2]]
        })
        .collect()
}

#[test]
fn plot_is_affine_inside_the_region() {
    let dir = tempfile::tempdir().unwrap();
    let region = unit_box();
    write_region(dir.path(), &region);
    let net = Network::<f64>::mlp(&[2, 32, 32, 1], Activation::Relu, 6).unwrap();
    write_model(dir.path(), "raw.json", &net);
    let out = police(
        &["plot", "--model", "raw.json", "--region", "region.json", "--domain", "-2,2,-2,2", "--resolution", "41", "--classification", "--out", "p"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["p.csv", "p.pgm", "p_region.csv", "p_boundary.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(
        std::fs::read_to_string(dir.path().join("p_region.csv")).unwrap(),
        "x,y\n-1,-1\n1,-1\n1,1\n-1,1\n"
    );

    // along a chord of the box the plotted values are affine in the grid index
    let grid = read_grid(&dir.path().join("p.csv"));
    let chord: Vec<[f64; 3]> = grid.iter().copied().filter(|p| p[0] == p[1] && p[0].abs() <= 1.0).collect();
    assert!(chord.len() > 10);
    let step = chord[1][2] - chord[0][2];
    for w in chord.windows(2) {
        assert!((w[1][2] - w[0][2] - step).abs() <= 1e-6);
    }
}

#[test]
fn constant_model_renders_mid_gray() {
    let dir = tempfile::tempdir().unwrap();
    let flat = Layer::new(Mat::from_rows(&[vec![0.0, 0.0]]).unwrap(), vec![0.7], Activation::Identity).unwrap();
    write_model(dir.path(), "flat.json", &Network::new(vec![flat]).unwrap());
    let out = police(&["plot", "--model", "flat.json", "--resolution", "8", "--out", "g"], dir.path());
    assert_eq!(code(&out), 0);
    let pgm = std::fs::read(dir.path().join("g.pgm")).unwrap();
    let header = b"P5\n8 8\n255\n";
    assert!(pgm.starts_with(header));
    assert!(pgm[header.len()..].iter().all(|&g| g == 128));
    assert_eq!(pgm.len(), header.len() + 64);
}

#[test]
fn fold_command_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let region = Reg::simplex(2).unwrap();
    write_region(dir.path(), &region);
    let net = Network::<f64>::mlp(&[2, 8, 1], Activation::Abs, 1).unwrap();
    write_model(dir.path(), "raw.json", &net);
    assert_eq!(code(&police(&["fold", "--model", "raw.json", "--region", "region.json", "--out", "f.json"], dir.path())), 0);
    let folded: Net = model_from_json(&std::fs::read_to_string(dir.path().join("f.json")).unwrap()).unwrap();
    assert_eq!(folded, fold_bias(&net, &region).unwrap());
}

#[test]
fn single_bench_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = police(
        &["bench", "--config", "2,2,32", "--batch", "64", "--repeats", "10", "--warmup", "1", "--csv", "b.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("slow-down") && text.contains("same code path"));
    let csv = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(code(&police(&["bench", "--config", "2,2", "--repeats", "10"], dir.path())), 1);
}
