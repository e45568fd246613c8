//! Forward+backward timing of unconstrained versus constrained training steps.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::Network;
use crate::police::{fold_bias, record_police};
use crate::region::Region;
use crate::tape::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchRegion {
    Simplex,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchConfig {
    pub input_dim: usize,
    /// Number of weight layers.
    pub depth: usize,
    pub width: usize,
    pub batch_size: usize,
    pub repeats: usize,
    pub warmup_iters: usize,
    pub region: BenchRegion,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(input_dim: usize, depth: usize, width: usize) -> Self {
        Self {
            input_dim,
            depth,
            width,
            batch_size: 1024,
            repeats: 1024,
            warmup_iters: 8,
            region: BenchRegion::Simplex,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.depth == 0 || self.width == 0 || self.batch_size == 0 {
            return Err(Error::Config("bench dimensions must be positive".into()));
        }
        if self.repeats < 10 {
            return Err(Error::Config(format!("{} repeats requested, at least 10 needed", self.repeats)));
        }
        Ok(())
    }

    /// Layer sizes: `depth − 1` hidden layers of `width`, one output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat_n(self.width, self.depth - 1));
        dims.push(1);
        dims
    }

    fn num_vertices(&self) -> usize {
        match self.region {
            BenchRegion::Simplex => self.input_dim + 1,
            BenchRegion::Box => 1usize.checked_shl(self.input_dim as u32).unwrap_or(usize::MAX),
        }
    }

    /// Rough peak bytes held by one constrained step: tape values plus gradients.
    pub fn estimated_bytes(&self) -> f64 {
        let (n, p) = (self.batch_size as f64, self.num_vertices() as f64);
        let dims = self.dims();
        let per_layer: f64 = dims
            .windows(2)
            .map(|w| (3.0 * n + 8.0 * p) * w[1] as f64 + 2.0 * (w[0] * w[1]) as f64)
            .sum();
        2.0 * 8.0 * (per_layer + (n + p) * self.input_dim as f64)
    }

    /// Floating-point operations of one constrained forward+backward step.
    pub fn estimated_flops(&self) -> f64 {
        let rows = (self.batch_size + self.num_vertices()) as f64;
        let macs: f64 = self.dims().windows(2).map(|w| (w[0] * w[1]) as f64).sum();
        6.0 * rows * macs
    }
}

/// Layouts of the six timing configurations: `(D, L, width)`.
pub const TABLE1_CONFIGS: [(usize, usize, usize); 6] = [
    (2, 2, 256),
    (2, 4, 64),
    (2, 4, 4096),
    (784, 2, 1024),
    (784, 8, 1024),
    (3072, 6, 4096),
];

/// Published reference timings (ms, GPU): `(unconstrained, constrained, slowdown)`.
pub const TABLE1_REFERENCE: [(f64, f64, f64); 6] = [
    (0.9, 4.3, 4.5),
    (1.3, 7.7, 5.7),
    (27.9, 40.3, 1.4),
    (0.9, 5.2, 5.5),
    (3.1, 20.4, 6.6),
    (51.9, 202.2, 3.9),
];

/// Published slowdown range.
pub const REFERENCE_ENVELOPE: (f64, f64) = (1.4, 6.6);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub std_ms: f64,
}

impl Timing {
    fn from_samples(ms: &[f64]) -> Self {
        let n = ms.len() as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            mean_ms: mean,
            std_ms: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub config: BenchConfig,
    pub unconstrained: Timing,
    pub policed: Timing,
    pub slowdown: f64,
}

/// Gradient buffers that every timed backward pass adds into.
struct Accumulator {
    grads: Vec<Matrix<f64>>,
}

impl Accumulator {
    fn new(net: &Network<f64>) -> Self {
        Self {
            grads: net.params().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
        }
    }

    fn step(&mut self, net: &Network<f64>, x: &Matrix<f64>, region: Option<&Region<f64>>) -> Result<()> {
        let mut tape = Tape::new();
        let vars = net.attach(&mut tape);
        let xv = tape.constant(x.clone());
        let out = match region {
            Some(r) => record_police(&mut tape, net, &vars, xv, r)?.0,
            None => net.record_forward(&mut tape, &vars, xv)?,
        };
        let loss = tape.mean_square(out);
        let grads = tape.backward(loss)?;
        for (acc, v) in self.grads.iter_mut().zip(vars.all()) {
            if let Some(g) = grads.get(v) {
                acc.add_assign(g);
            }
        }
        Ok(())
    }
}

fn bench_region(cfg: &BenchConfig) -> Result<Region<f64>> {
    match cfg.region {
        BenchRegion::Simplex => Region::simplex(cfg.input_dim),
        BenchRegion::Box => Region::aligned_box(&vec![-1.0; cfg.input_dim], &vec![1.0; cfg.input_dim]),
    }
}

/// Times one forward+backward step with and without the constraint.
///
/// The two variants alternate within each repeat, so clock drift and frequency
/// scaling hit both alike.
pub fn run_config(cfg: &BenchConfig) -> Result<BenchResult> {
    cfg.validate()?;
    let net = Network::mlp(&cfg.dims(), Activation::Relu, cfg.seed)?;
    let region = bench_region(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xbe4c);
    let data = (0..cfg.batch_size * cfg.input_dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let x = Matrix::new(cfg.batch_size, cfg.input_dim, data)?;

    let mut plain = Accumulator::new(&net);
    let mut policed = Accumulator::new(&net);
    for _ in 0..cfg.warmup_iters {
        plain.step(&net, &x, None)?;
        policed.step(&net, &x, Some(&region))?;
    }
    let mut plain_ms = Vec::with_capacity(cfg.repeats);
    let mut policed_ms = Vec::with_capacity(cfg.repeats);
    for _ in 0..cfg.repeats {
        let t = Instant::now();
        plain.step(&net, &x, None)?;
        plain_ms.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        policed.step(&net, &x, Some(&region))?;
        policed_ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let unconstrained = Timing::from_samples(&plain_ms);
    let policed = Timing::from_samples(&policed_ms);
    Ok(BenchResult {
        config: *cfg,
        unconstrained,
        policed,
        slowdown: policed.mean_ms / unconstrained.mean_ms,
    })
}

/// Limits for skipping configurations before they run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SkipPolicy {
    pub max_bytes: Option<f64>,
    /// Cap on estimated floating-point work per timed step.
    pub max_flops: Option<f64>,
}

impl SkipPolicy {
    /// Skips anything over 2 GiB or 2·10^10 flops per step.
    pub fn skip_large() -> Self {
        Self {
            max_bytes: Some(2.0 * 1024.0 * 1024.0 * 1024.0),
            max_flops: Some(2e10),
        }
    }

    /// Why `cfg` would be skipped, if it would.
    pub fn reason(&self, cfg: &BenchConfig) -> Option<String> {
        if let Some(max) = self.max_bytes {
            let need = cfg.estimated_bytes();
            if need > max {
                return Some(format!("needs ~{:.1} GiB, limit {:.1} GiB", need / 1073741824.0, max / 1073741824.0));
            }
        }
        if let Some(max) = self.max_flops {
            let need = cfg.estimated_flops();
            if need > max {
                return Some(format!("~{:.1} GFLOP per step, limit {:.1}", need / 1e9, max / 1e9));
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Cell {
    Done(BenchResult),
    Skipped { config: BenchConfig, reason: String },
}

impl Cell {
    pub fn config(&self) -> &BenchConfig {
        match self {
            Cell::Done(r) => &r.config,
            Cell::Skipped { config, .. } => config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub cells: Vec<Cell>,
}

/// Runs the six reference configurations with shared batch size and repeat count.
pub fn table1_suite(batch_size: usize, repeats: usize, warmup: usize, skip: SkipPolicy) -> Result<Table> {
    let mut cells = Vec::with_capacity(TABLE1_CONFIGS.len());
    for &(d, l, w) in &TABLE1_CONFIGS {
        let cfg = BenchConfig {
            batch_size,
            repeats,
            warmup_iters: warmup,
            ..BenchConfig::new(d, l, w)
        };
        cfg.validate()?;
        if let Some(reason) = skip.reason(&cfg) {
            log::info!("skipping D={d} L={l} width={w}: {reason}");
            cells.push(Cell::Skipped { config: cfg, reason });
            continue;
        }
        log::info!("timing D={d} L={l} width={w}");
        cells.push(Cell::Done(run_config(&cfg)?));
    }
    Ok(Table { cells })
}

impl Table {
    /// `D,L,width,unconstrained_ms_mean,unconstrained_ms_std,policed_ms_mean,policed_ms_std,slowdown`;
    /// skipped rows leave the timing columns empty.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("D,L,width,unconstrained_ms_mean,unconstrained_ms_std,policed_ms_mean,policed_ms_std,slowdown\n");
        for cell in &self.cells {
            let c = cell.config();
            match cell {
                Cell::Done(r) => writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    c.input_dim,
                    c.depth,
                    c.width,
                    r.unconstrained.mean_ms,
                    r.unconstrained.std_ms,
                    r.policed.mean_ms,
                    r.policed.std_ms,
                    r.slowdown
                ),
                Cell::Skipped { .. } => writeln!(out, "{},{},{},,,,,", c.input_dim, c.depth, c.width),
            }
            .expect("write to string");
        }
        out
    }

    /// Columns per configuration, rows for the two timings and the slowdown,
    /// followed by the reference rows.
    pub fn to_text(&self) -> String {
        let head = |label: &str, f: &dyn Fn(&Cell, usize) -> String| {
            let mut line = format!("{label:<22}");
            for (i, cell) in self.cells.iter().enumerate() {
                line.push_str(&format!("|{:>16}", f(cell, i)));
            }
            line.push('\n');
            line
        };
        let timing = |t: &Timing| format!("{:.2}±{:.2}", t.mean_ms, t.std_ms);
        let mut out = String::new();
        out += &head("input dim. D", &|c, _| c.config().input_dim.to_string());
        out += &head("depth L", &|c, _| c.config().depth.to_string());
        out += &head("width", &|c, _| c.config().width.to_string());
        out += &format!("{}\n", "-".repeat(22 + 17 * self.cells.len()));
        out += &head("no constr. (ms)", &|c, _| match c {
            Cell::Done(r) => timing(&r.unconstrained),
            Cell::Skipped { .. } => "skipped".into(),
        });
        out += &head("constrained (ms)", &|c, _| match c {
            Cell::Done(r) => timing(&r.policed),
            Cell::Skipped { .. } => "skipped".into(),
        });
        out += &head("slow-down", &|c, _| match c {
            Cell::Done(r) => format!("x{:.2}", r.slowdown),
            Cell::Skipped { .. } => "-".into(),
        });
        let reference = |i: usize| {
            TABLE1_CONFIGS
                .iter()
                .position(|&(d, l, w)| {
                    let c = self.cells[i].config();
                    (c.input_dim, c.depth, c.width) == (d, l, w)
                })
                .map(|k| TABLE1_REFERENCE[k])
        };
        out += &head("reference slow-down", &|_, i| match reference(i) {
            Some((_, _, s)) => format!("x{s:.1}"),
            None => "-".into(),
        });
        let (lo, hi) = REFERENCE_ENVELOPE;
        out += &format!("reference envelope: x{lo} to x{hi} (GPU, batch 1024; not comparable in absolute terms)\n");
        for cell in &self.cells {
            if let Cell::Skipped { config, reason } = cell {
                out += &format!(
                    "skipped D={} L={} width={}: {reason}\n",
                    config.input_dim, config.depth, config.width
                );
            }
        }
        out
    }
}

/// Outcome of the inference-path comparison between a network and its folded copy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferencePath {
    /// Operation sequence and shapes of the recorded forward pass are identical.
    pub same_trace: bool,
    pub ops: usize,
    pub original_ms: f64,
    pub folded_ms: f64,
}

/// Records the plain forward pass of `net` and of its folded copy and compares the operation traces.
pub fn inference_path(net: &Network<f64>, region: &Region<f64>, x: &Matrix<f64>) -> Result<InferencePath> {
    let folded = fold_bias(net, region)?;
    let trace = |n: &Network<f64>| -> Result<Vec<(&'static str, (usize, usize))>> {
        let mut tape = Tape::new();
        let vars = n.attach(&mut tape);
        let xv = tape.constant(x.clone());
        n.record_forward(&mut tape, &vars, xv)?;
        Ok(tape.trace())
    };
    let a = trace(net)?;
    let b = trace(&folded)?;
    let time = |n: &Network<f64>| -> Result<f64> {
        let t = Instant::now();
        for _ in 0..5 {
            std::hint::black_box(n.forward(x)?);
        }
        Ok(t.elapsed().as_secs_f64() * 1e3 / 5.0)
    };
    Ok(InferencePath {
        same_trace: a == b,
        ops: a.len(),
        original_ms: time(net)?,
        folded_ms: time(&folded)?,
    })
}
