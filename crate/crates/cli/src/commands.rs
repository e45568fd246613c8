use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use police::bench::{self, BenchConfig, SkipPolicy};
use police::demo::{self, Task};
use police::io::{model_from_json, model_to_json, region_from_json};
use police::train::{Checkpoint, Dataset, LossKind, TrainConfig, Trainer};
use police::verify::{certify_affine, CertifyOptions, Semantics};
use police::{fold_bias, forward_police, Activation, Net, Network, Reg};

use crate::data::{read_dataset, write_dataset};
use crate::plot::{hull_order, threads_from_env, PlotGrid};
use crate::{BenchArgs, Cli, Command, DemoArgs, FoldArgs, PlotArgs, TrainArgs, VerifyArgs};

pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Demo(a) => demo_cmd(a, cli.seed.unwrap_or(0)),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Verify(a) => verify_cmd(a, cli.seed.unwrap_or(0)),
        Command::Fold(a) => fold_cmd(a),
        Command::Plot(a) => plot_cmd(a),
        Command::Bench(a) => bench_cmd(a, cli.seed.unwrap_or(0)),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> Result<Net> {
    model_from_json(&read(path)?).with_context(|| format!("parsing model {}", path.display()))
}

fn load_region(path: &Path) -> Result<Reg> {
    region_from_json(&read(path)?).with_context(|| format!("parsing region {}", path.display()))
}

fn parse_activation(name: &str, alpha: Option<f64>) -> Result<Activation<f64>> {
    Ok(match name {
        "relu" => Activation::Relu,
        "abs" => Activation::Abs,
        "leaky_relu" => Activation::leaky_relu(alpha.unwrap_or(police::activation::DEFAULT_LEAKY_SLOPE))?,
        "identity" => bail!("hidden layers need a nonlinear activation"),
        other => bail!("unknown activation {other:?}; expected relu, leaky_relu or abs"),
    })
}

fn demo_cmd(a: DemoArgs, seed: u64) -> Result<u8> {
    let task: Task = a.task.parse()?;
    let data = demo::dataset(task, seed);
    let header: &[&str] = match task {
        Task::Classification => &["x", "y", "label"],
        Task::Regression => &["x", "y", "target"],
    };
    write_dataset(&a.out, &data, header)?;
    info!("wrote {} rows to {}", data.len(), a.out.display());
    Ok(0)
}

fn fit_summary(net: &Net, region: &Reg, data: &Dataset<f64>, loss: LossKind) -> Result<String> {
    let (out, _) = forward_police(net, &data.inputs, region)?;
    Ok(match loss {
        LossKind::BceLogits => format!("training accuracy {:.4}", demo::accuracy(&out, &data.targets)),
        LossKind::Mse => {
            let (mut sum, mut n) = (0.0, 0usize);
            for (i, row) in data.inputs.row_iter().enumerate() {
                if !region.contains(row).unwrap_or(false) {
                    sum += out.row(i).iter().zip(data.targets.row(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                    n += out.cols();
                }
            }
            let total = police::train::loss_value(LossKind::Mse, &out, &data.targets)?;
            if n > 0 {
                format!("training mse {total:.6}, outside region {:.6}", sum / n as f64)
            } else {
                format!("training mse {total:.6}")
            }
        }
    })
}

fn train_cmd(a: TrainArgs, seed: Option<u64>) -> Result<u8> {
    let preset = a.preset.as_deref().map(demo::preset).transpose()?;
    let mut cfg = match (&a.config, &preset) {
        (Some(path), _) => TrainConfig::from_json(&read(path)?).with_context(|| format!("parsing config {}", path.display()))?,
        (None, Some(p)) => p.config.clone(),
        (None, None) => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = a.steps {
        cfg.steps = n;
    }
    cfg.validate()?;

    let dims = match (&a.dims, &preset) {
        (Some(d), _) => d.clone(),
        (None, Some(p)) => p.dims.clone(),
        (None, None) => bail!("--dims is required without --preset"),
    };
    let activation = match (&a.activation, &preset) {
        (Some(name), _) => parse_activation(name, a.alpha)?,
        (None, Some(p)) => p.activation,
        (None, None) => Activation::default_leaky(),
    };
    let region = match (&a.region, &preset) {
        (Some(path), _) => load_region(path)?,
        (None, Some(_)) => demo::preset_region(),
        (None, None) => bail!("--region is required without --preset"),
    };
    let outputs = *dims.last().context("--dims is empty")?;
    let data = match (&a.data, &preset) {
        (Some(path), _) => read_dataset(path, outputs)?,
        (None, Some(p)) => demo::dataset(p.task, cfg.seed),
        (None, None) => bail!("--data is required without --preset"),
    };

    let net = Network::mlp(&dims, activation, cfg.seed)?;
    let loss = cfg.loss;
    let mut trainer = Trainer::new(net, region.clone(), cfg)?;
    if let Some(path) = &a.resume {
        let ckpt = Checkpoint::from_json(&read(path)?).with_context(|| format!("parsing checkpoint {}", path.display()))?;
        trainer.restore(&ckpt).with_context(|| format!("restoring {}", path.display()))?;
        info!("resuming at step {}", ckpt.step());
    }
    let history = trainer.run(&data)?;
    let certificate = match history.snapshots.last() {
        Some(s) if s.step == trainer.step_count() => s.certificate.clone(),
        _ => trainer.certify()?,
    };

    let net = trainer.net();
    write(&a.out, model_to_json(&fold_bias(net, &region)?))?;
    if let Some(path) = &a.raw_out {
        write(path, model_to_json(net))?;
    }
    if let Some(path) = &a.history {
        write(path, history.to_csv())?;
    }
    if let Some(path) = &a.checkpoint {
        write(path, trainer.checkpoint().to_json())?;
    }

    let failed: Vec<usize> = history.snapshots.iter().filter(|s| !s.certificate.passed).map(|s| s.step).collect();
    println!(
        "trained {} steps; final loss {}",
        trainer.step_count(),
        history.records.last().map_or("n/a".to_string(), |r| format!("{:.6}", r.loss))
    );
    println!("{}", fit_summary(net, &region, &data, loss)?);
    println!(
        "certificate {:?}: residual {:.3e}, sign margin {:.3e}, fold delta {:.3e}; checkpoints certified {}/{}",
        certificate.status,
        certificate.residual().unwrap_or(f64::NAN),
        certificate.sign_margin.unwrap_or(f64::INFINITY),
        certificate.fold_delta.unwrap_or(f64::NAN),
        history.snapshots.len() - failed.len(),
        history.snapshots.len()
    );
    if !failed.is_empty() {
        log::warn!("certificates failed at steps {failed:?}");
    }
    Ok(if certificate.passed && failed.is_empty() { 0 } else { 2 })
}

fn verify_cmd(a: VerifyArgs, seed: u64) -> Result<u8> {
    let net = load_model(&a.model)?;
    let region = load_region(&a.region)?;
    let opts = CertifyOptions {
        samples: a.samples,
        tol: a.tol,
        seed,
        probes: a.probes,
        semantics: if a.policed { Semantics::Policed } else { Semantics::AsIs },
    };
    let cert = certify_affine(&net, &region, &opts)?;
    let json = cert.to_json();
    println!("{json}");
    if let Some(path) = &a.out {
        write(path, &json)?;
    }
    for v in &cert.violations {
        log::warn!(
            "layer {} unit {} vertex {}: margin {:.3e}",
            v.layer,
            v.unit,
            v.vertex,
            v.margin
        );
    }
    Ok(cert.status.exit_code() as u8)
}

fn fold_cmd(a: FoldArgs) -> Result<u8> {
    let net = load_model(&a.model)?;
    let region = load_region(&a.region)?;
    let folded = fold_bias(&net, &region)?;
    write(&a.out, model_to_json(&folded))?;
    info!("folded model written to {}", a.out.display());
    Ok(0)
}

fn with_suffix(prefix: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn plot_cmd(a: PlotArgs) -> Result<u8> {
    let mut net = load_model(&a.model)?;
    if net.input_dim() != 2 {
        bail!("plot supports 2-D models only; {} has {} inputs", a.model.display(), net.input_dim());
    }
    let region = a.region.as_deref().map(load_region).transpose()?;
    if let Some(r) = &region {
        net = fold_bias(&net, r)?;
    }
    let grid = PlotGrid::evaluate(&net, a.domain, a.resolution, threads_from_env())?;
    write(&with_suffix(&a.out, ".csv"), grid.to_csv())?;
    write(&with_suffix(&a.out, ".pgm"), grid.to_pgm())?;
    if let Some(r) = &region {
        let mut csv = String::from("x,y\n");
        for [x, y] in hull_order(r.vertices()) {
            csv.push_str(&format!("{x},{y}\n"));
        }
        write(&with_suffix(&a.out, "_region.csv"), csv)?;
    }
    if a.classification {
        let mut csv = String::from("x0,y0,x1,y1\n");
        for s in grid.zero_level_segments() {
            csv.push_str(&format!("{},{},{},{}\n", s[0], s[1], s[2], s[3]));
        }
        write(&with_suffix(&a.out, "_boundary.csv"), csv)?;
    }
    info!("{0}x{0} grid written with prefix {1}", a.resolution, a.out.display());
    Ok(0)
}

fn bench_cmd(a: BenchArgs, seed: u64) -> Result<u8> {
    let mut skip = if a.skip_large { SkipPolicy::skip_large() } else { SkipPolicy::default() };
    if let Some(mb) = a.max_mem_mb {
        skip.max_bytes = Some(mb * 1024.0 * 1024.0);
    }
    let table = match (&a.config, a.suite.as_deref()) {
        (Some(c), None) => {
            let [d, l, w] = c[..] else {
                bail!("--config takes D,L,width");
            };
            let cfg = BenchConfig {
                batch_size: a.batch,
                repeats: a.repeats,
                warmup_iters: a.warmup,
                seed,
                ..BenchConfig::new(d, l, w)
            };
            bench::Table {
                cells: vec![bench::Cell::Done(bench::run_config(&cfg)?)],
            }
        }
        (None, None | Some("table1")) => bench::table1_suite(a.batch, a.repeats, a.warmup, skip)?,
        (None, Some(other)) => bail!("unknown suite {other:?}; only table1 is available"),
        (Some(_), Some(_)) => bail!("--config and --suite are exclusive"),
    };
    print!("{}", table.to_text());
    if let Some(path) = &a.csv {
        write(path, table.to_csv())?;
    }

    let net = Network::mlp(&[2, 64, 64, 1], Activation::Relu, seed)?;
    let region = Reg::simplex(2)?;
    let x = region.sample_barycentric(256, seed);
    let path = bench::inference_path(&net, &region, &x)?;
    println!(
        "folded inference: {} ({} recorded ops, {:.3} ms vs {:.3} ms unfolded)",
        if path.same_trace { "same code path as the unconstrained network" } else { "DIFFERENT code path" },
        path.ops,
        path.folded_ms,
        path.original_ms
    );
    Ok(if path.same_trace { 0 } else { 1 })
}
