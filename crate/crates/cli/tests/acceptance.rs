//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use police::bench::{self, BenchConfig, Cell, SkipPolicy};
use police::demo::{self, preset, preset_region};
use police::io::{model_to_json, region_to_json};
use police::police::{majority_signs, police_kinks};
use police::train::{loss, AffineTargetSpec};
use police::verify::certify_jacobian_target;
use police::{
    certify_affine, certify_fold_equivalence, certify_sign_patterns, extract_affine, fold_bias, forward_police,
    jacobian_at, record_police, region_shift, Activation, CertifyOptions, Dataset, LossKind, Mat, Net, Network,
    OptimizerKind, Reg, Semantics, Tape, TrainConfig, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use police::gradcheck::{finite_diff_gradcheck, Probe};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn random_activation(rng: &mut ChaCha8Rng) -> Activation<f64> {
    match rng.random_range(0..3) {
        0 => Activation::Relu,
        1 => Activation::leaky_relu(rng.random_range(0.01..0.3)).unwrap(),
        _ => Activation::Abs,
    }
}

/// Random MLP with perturbed biases so that shifts are not trivially zero.
fn random_net(rng: &mut ChaCha8Rng, d: usize, max_hidden: usize, max_width: usize) -> Net {
    let hidden = rng.random_range(1..=max_hidden);
    let mut dims = vec![d];
    dims.extend((0..hidden).map(|_| rng.random_range(1..=max_width)));
    dims.push(rng.random_range(1..=3));
    let mut net = Network::mlp(&dims, random_activation(rng), rng.random()).unwrap();
    for l in 0..net.depth() {
        for b in net.bias_mut(l) {
            *b += rng.random_range(-1.0..1.0);
        }
    }
    net
}

/// Canonical simplex, random box or random simplex.
fn random_region(rng: &mut ChaCha8Rng, d: usize, variant: usize) -> Reg {
    match variant % 3 {
        0 => Reg::simplex(d).unwrap(),
        1 => {
            let lo: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..1.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.2..2.0)).collect();
            Reg::aligned_box(&lo, &hi).unwrap()
        }
        _ => {
            let verts: Vec<Vec<f64>> = (0..=d).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            Reg::from_vertices(&verts).unwrap()
        }
    }
}

fn gaussian_points(rng: &mut ChaCha8Rng, n: usize, d: usize, std: f64) -> Mat {
    let data = (0..n * d)
        .map(|_| {
            // Box-Muller keeps the test free of extra distributions
            let (u, v): (f64, f64) = (rng.random_range(f64::EPSILON..1.0), rng.random());
            std * (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
        })
        .collect();
    Mat::new(n, d, data).unwrap()
}

fn criterion_1() -> Outcome {
    let p = preset("fig1").unwrap();
    let config = TrainConfig {
        steps: 2000,
        checkpoint_steps: vec![0, 5, 50, 500, 2000],
        certify_samples: 1000,
        certify_tol: 1e-6,
        ..p.config.clone()
    };
    let data = demo::dataset(p.task, config.seed);
    let net = Network::mlp(&p.dims, p.activation, config.seed).unwrap();
    let start = Instant::now();
    let mut trainer = Trainer::new(net, preset_region(), config).unwrap();
    let history = trainer.run(&data).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let steps: Vec<usize> = history.snapshots.iter().filter(|s| s.certificate.passed).map(|s| s.step).collect();
    let worst = history
        .snapshots
        .iter()
        .filter_map(|s| s.certificate.residual())
        .fold(0.0, f64::max);
    let passed = steps == [0, 5, 50, 500, 2000] && secs <= 120.0;
    outcome(
        passed,
        format!("certified at steps {steps:?}, worst residual {worst:.2e}, {secs:.1} s for 2000 steps"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::INFINITY;
    let mut bad = 0;
    for i in 0..50 {
        let d = rng.random_range(1..=8);
        let net = random_net(&mut rng, d, 3, 64);
        let region = random_region(&mut rng, d, i);
        let report = certify_sign_patterns(&net, &region, Semantics::Policed).unwrap();
        let shift = region_shift(&net, &region).unwrap();
        let m = report.min_margin.unwrap_or(f64::INFINITY).min(shift.min_margin());
        worst = worst.min(m);
        if m < -1e-12 || report.layers.iter().any(|l| l.margin < -1e-12) {
            bad += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        bad == 0 && secs < 10.0,
        format!("50 nets, min post-shift margin {worst:.2e}, {bad} below -1e-12, {secs:.2} s"),
    )
}

fn criterion_3() -> Outcome {
    let mut worst_delta: f64 = 0.0;
    let mut worst_refold: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let d = rng.random_range(1..=6);
        let net = random_net(&mut rng, d, 3, 32);
        let region = random_region(&mut rng, d, seed as usize);
        let folded = fold_bias(&net, &region).unwrap();

        // tape train-time pass against the folded plain pass
        let report = certify_fold_equivalence(&net, &region, 100, seed).unwrap();
        worst_delta = worst_delta.max(report.max_delta);

        let inside = region.sample_barycentric(50, seed);
        let outside = gaussian_points(&mut rng, 50, d, 3.0 * region.diameter().max(1.0));
        let probes = inside.vstack(&outside).unwrap();
        let (policed, _) = forward_police(&net, &probes, &region).unwrap();
        let mut tape = Tape::new();
        let vars = net.attach(&mut tape);
        let x = tape.constant(probes.clone());
        let (out, _) = record_police(&mut tape, &net, &vars, x, &region).unwrap();
        let plain = folded.forward(&probes).unwrap();
        worst_delta = worst_delta
            .max(plain.max_abs_diff(&policed).unwrap())
            .max(plain.max_abs_diff(tape.value(out)).unwrap());

        worst_refold = worst_refold.max(region_shift(&folded, &region).unwrap().max_abs_shift());
    }
    outcome(
        worst_delta <= 1e-9 && worst_refold <= 1e-12,
        format!("20 seeds, max fold delta {worst_delta:.2e}, max second-fold shift {worst_refold:.2e}"),
    )
}

fn policed_mse(net: &Net, x: &Mat, y: &Mat, region: &Reg) -> f64 {
    let (out, _) = forward_police(net, x, region).unwrap();
    police::train::loss_value(LossKind::Mse, &out, y).unwrap()
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped, mut failed) = (0, 0, 0);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let d = rng.random_range(1..=4);
        let net = random_net(&mut rng, d, 3, 16);
        let region = random_region(&mut rng, d, seed as usize);
        let x = gaussian_points(&mut rng, 8, d, 1.5);
        let y = gaussian_points(&mut rng, 8, net.output_dim(), 1.0);

        let mut tape = Tape::new();
        let vars = net.attach(&mut tape);
        let xv = tape.constant(x.clone());
        let (out, _) = record_police(&mut tape, &net, &vars, xv, &region).unwrap();
        let l = loss(&mut tape, LossKind::Mse, out, &y).unwrap();
        let grads = tape.backward(l).unwrap();
        let analytic: Vec<Mat> = vars
            .all()
            .into_iter()
            .zip(net.params())
            .map(|(v, p)| grads.get_or_zeros(v, p.shape()))
            .collect();

        let report = finite_diff_gradcheck(
            |p| {
                let n = net.with_params(p).unwrap();
                let k = police_kinks(&n, &x, &region).unwrap();
                Probe {
                    value: policed_mse(&n, &x, &y, &region),
                    kink_distance: k.distance,
                    pattern: k.pattern,
                }
            },
            &net.params(),
            &analytic,
            1e-6,
            1e-5,
        );
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
        skipped += report.skipped.len();
        failed += usize::from(!report.passed);
    }
    outcome(
        failed == 0 && checked > 0,
        format!("20 nets, {checked} coordinates checked, {skipped} kink-adjacent skipped, max relative error {worst:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut certified = 0;
    let nets = 5;
    for seed in 0..nets {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let d = rng.random_range(1..=5);
        let net = random_net(&mut rng, d, 3, 32);
        let region = random_region(&mut rng, d, seed as usize);
        let folded = fold_bias(&net, &region).unwrap();
        let opts = CertifyOptions {
            semantics: Semantics::AsIs,
            seed,
            ..CertifyOptions::default()
        };
        if !certify_affine(&folded, &region, &opts).unwrap().passed {
            continue;
        }
        certified += 1;
        let piece = extract_affine(&folded, &region).unwrap();
        let points = region.sample_barycentric(20, seed);
        let first = jacobian_at(&folded, points.row(0)).unwrap();
        for x in points.row_iter() {
            let j = jacobian_at(&folded, x).unwrap();
            worst = worst
                .max(j.max_abs_diff(&piece.slope).unwrap())
                .max(j.max_abs_diff(&first).unwrap());
        }
    }
    outcome(
        certified == nets && worst <= 1e-8,
        format!("{certified}/{nets} nets certified, 20 interior points each, max Jacobian gap {worst:.2e}"),
    )
}

fn criterion_6() -> Outcome {
    let p = preset("fig1").unwrap();
    let config = TrainConfig {
        steps: 5000,
        checkpoint_steps: vec![0, 5, 50, 500, 1000, 2000, 3000, 4000],
        ..p.config.clone()
    };
    let data = demo::dataset(p.task, config.seed);
    let region = preset_region();
    let net = Network::mlp(&p.dims, p.activation, config.seed).unwrap();
    let mut trainer = Trainer::new(net, region.clone(), config).unwrap();
    let history = trainer.run(&data).unwrap();
    let accuracy: Vec<(usize, f64)> = history
        .snapshots
        .iter()
        .map(|s| {
            let (z, _) = forward_police(&s.net, &data.inputs, &region).unwrap();
            (s.step, demo::accuracy(&z, &data.targets))
        })
        .collect();
    let reached = accuracy.iter().find(|(_, a)| *a >= 0.95).map(|(s, _)| *s);
    let final_acc = accuracy.last().map_or(0.0, |a| a.1);
    let cls_ok = reached.is_some() && history.all_certified();

    let p = preset("fig2").unwrap();
    let data = demo::dataset(p.task, p.config.seed);
    let net = Network::mlp(&p.dims, p.activation, p.config.seed).unwrap();
    let mut trainer = Trainer::new(net, region.clone(), p.config.clone()).unwrap();
    let history2 = trainer.run(&data).unwrap();
    let (out, _) = forward_police(trainer.net(), &data.inputs, &region).unwrap();
    let (mut sum, mut n) = (0.0, 0);
    for (i, row) in data.inputs.row_iter().enumerate() {
        if !region.contains(row).unwrap() {
            sum += (out.get(i, 0) - data.targets.get(i, 0)).powi(2);
            n += 1;
        }
    }
    let outside = sum / n as f64;
    let reg_ok = outside <= 0.05 && history2.all_certified();
    outcome(
        cls_ok && reg_ok,
        format!(
            "classification accuracy >= 0.95 first at step {}, {final_acc:.3} at 5000, certificates {}; \
             regression outside-region MSE {outside:.4} after {} steps, certificates {}",
            reached.map_or("never".into(), |s| s.to_string()),
            if history.all_certified() { "all pass" } else { "FAILED" },
            p.config.steps,
            if history2.all_certified() { "all pass" } else { "FAILED" },
        ),
    )
}

fn criterion_7() -> Outcome {
    let (a, b) = ([0.7, -1.3], 0.25);
    let region = preset_region();
    // linear target inside the box, bent outside it, sampled on [-3, 3]^2
    let inputs: Mat = Reg::aligned_box(&[-3.0, -3.0], &[3.0, 3.0]).unwrap().sample_barycentric(1000, 1);
    let targets: Vec<f64> = inputs
        .row_iter()
        .map(|r| a[0] * r[0] + a[1] * r[1] + b + (r[0].abs().max(r[1].abs()) - 1.0).max(0.0))
        .collect();
    let data = Dataset::new(inputs, Mat::column_vector(targets)).unwrap();
    let config = TrainConfig {
        steps: 10000,
        batch_size: 1000,
        lr: 1e-6,
        optimizer: OptimizerKind::Sgd { momentum: 0.9 },
        checkpoint_steps: vec![],
        penalty: Some(AffineTargetSpec {
            slope: vec![a.to_vec()],
            offset: vec![b],
            anchor: None,
            weight: 1e4,
        }),
        ..TrainConfig::default()
    };
    let net = Network::mlp(&[2, 64, 64, 1], Activation::default_leaky(), 0).unwrap();
    let mut trainer = Trainer::new(net, region.clone(), config).unwrap();
    trainer.run(&data).unwrap();
    let slope = Mat::from_rows(&[a.to_vec()]).unwrap();
    let r = certify_jacobian_target(trainer.net(), &region, &slope, &[b], 1e-3).unwrap();
    let gap = r.slope_gap + r.offset_gap;
    outcome(
        gap <= 1e-3,
        format!("after 10000 steps |A-A*| {:.2e} + |b-b*| {:.2e} = {gap:.2e}", r.slope_gap, r.offset_gap),
    )
}

fn criterion_8() -> Outcome {
    // Cheap cells get more repeats: their true overhead is a few percent on a CPU.
    let skip = SkipPolicy::skip_large();
    let cells = bench::TABLE1_CONFIGS
        .iter()
        .map(|&(d, l, w)| {
            let mut cfg = BenchConfig {
                batch_size: 1024,
                warmup_iters: 3,
                ..BenchConfig::new(d, l, w)
            };
            cfg.repeats = if cfg.estimated_flops() < 1e9 { 400 } else { 30 };
            match skip.reason(&cfg) {
                Some(reason) => Cell::Skipped { config: cfg, reason },
                None => Cell::Done(bench::run_config(&cfg).unwrap()),
            }
        })
        .collect();
    let table = bench::Table { cells };
    println!("{}", table.to_text());
    let all_six = table.cells.len() == 6
        && table
            .cells
            .iter()
            .zip(bench::TABLE1_CONFIGS)
            .all(|(c, (d, l, w))| {
                let cfg = c.config();
                (cfg.input_dim, cfg.depth, cfg.width) == (d, l, w)
            });
    let done: Vec<f64> = table
        .cells
        .iter()
        .filter_map(|c| match c {
            Cell::Done(r) => Some(r.slowdown),
            Cell::Skipped { .. } => None,
        })
        .collect();
    let slower = !done.is_empty() && done.iter().all(|&s| s > 1.0);

    let region = preset_region();
    let net = Network::mlp(&[2, 256, 256, 1], Activation::Relu, 8).unwrap();
    let x = gaussian_points(&mut ChaCha8Rng::seed_from_u64(8), 512, 2, 2.0);
    let path = bench::inference_path(&net, &region, &x).unwrap();
    outcome(
        all_six && slower && path.same_trace,
        format!(
            "{} cells listed, {} timed, slowdowns {:?}, folded inference on the plain path: {}",
            table.cells.len(),
            done.len(),
            done.iter().map(|s| format!("x{s:.2}")).collect::<Vec<_>>(),
            path.same_trace
        ),
    )
}

/// A mutated net is still affine on the region iff every nonlinear unit keeps
/// one weak side over all vertices, layer by layer.
fn side_preserving(net: &Net, region: &Reg) -> bool {
    let mut v = region.vertices().clone();
    for layer in net.layers() {
        let pre = v.matmul_nt(&layer.weights).unwrap().add_row_broadcast(&layer.bias).unwrap();
        if layer.activation.is_nonlinear() {
            let signs = majority_signs(&pre);
            for p in 0..pre.rows() {
                for (k, s) in signs.iter().enumerate() {
                    if pre.get(p, k) * s < -1e-12 {
                        return false;
                    }
                }
            }
        }
        v = pre.map(|z| layer.activation.apply(z));
    }
    true
}

fn verify_exit(dir: &Path, net: &Net, region: &Reg, tag: usize) -> i32 {
    let model = dir.join(format!("m{tag}.json"));
    let reg = dir.join(format!("r{tag}.json"));
    std::fs::write(&model, model_to_json(net)).unwrap();
    std::fs::write(&reg, region_to_json(region)).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_police"))
        .args(["--quiet", "verify", "--model"])
        .arg(&model)
        .arg("--region")
        .arg(&reg)
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    status.code().unwrap_or(-1)
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut counted, mut caught, mut excluded, mut clean_pass) = (0, 0, 0, 0);
    for i in 0..200 {
        let d = rng.random_range(2..=4);
        let net = random_net(&mut rng, d, 3, 24);
        let region = random_region(&mut rng, d, i);
        let folded = fold_bias(&net, &region).unwrap();
        if i < 10 && verify_exit(dir.path(), &folded, &region, i) == 0 {
            clean_pass += 1;
        }
        let hidden: Vec<usize> = (0..folded.depth() - 1)
            .filter(|&l| folded.layer(l).activation.is_nonlinear())
            .collect();
        let layer = hidden[rng.random_range(0..hidden.len())];
        let unit = rng.random_range(0..folded.layer(layer).outputs());
        let size = rng.random_range(0.5..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let mut mutated = folded.clone();
        mutated.bias_mut(layer)[unit] += size;
        if side_preserving(&mutated, &region) {
            excluded += 1;
            continue;
        }
        counted += 1;
        if verify_exit(dir.path(), &mutated, &region, i) == 2 {
            caught += 1;
        }
    }
    let rate = caught as f64 / counted.max(1) as f64;
    outcome(
        rate >= 0.95 && clean_pass == 10,
        format!(
            "{caught}/{counted} side-changing mutations rejected with exit 2 ({:.1}%), {excluded} side-preserving excluded, \
             {clean_pass}/10 unmutated folded models pass",
            100.0 * rate
        ),
    )
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (9, criterion_9),
    ];
    let mut results: Vec<(usize, Outcome)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria.iter().map(|&(n, f)| (n, s.spawn(f))).collect();
        handles
            .into_iter()
            .map(|(n, h)| {
                let o = h
                    .join()
                    .unwrap_or_else(|_| outcome(false, "panicked".to_string()));
                (n, o)
            })
            .collect()
    });
    // timings need an otherwise idle machine
    results.push((8, criterion_8()));
    results.sort_by_key(|r| r.0);

    let mut failures = 0;
    for (n, o) in &results {
        println!("{} criterion {n}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failures += usize::from(!o.passed);
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
