//! Function grids over a 2-D domain, rendered as CSV, PGM and level-set segments.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use police::{Mat, Net};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl std::str::FromStr for Domain {
    type Err = anyhow::Error;

    /// `x_min,x_max,y_min,y_max`
    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<f64> = s.split(',').map(|p| p.trim().parse()).collect::<Result<_, _>>()?;
        let [x_min, x_max, y_min, y_max] = v[..] else {
            bail!("domain needs four numbers x_min,x_max,y_min,y_max, got {s:?}");
        };
        if !(x_min < x_max && y_min < y_max) {
            bail!("domain bounds out of order: {s:?}");
        }
        Ok(Self { x_min, x_max, y_min, y_max })
    }
}

/// `resolution × resolution` network outputs; row 0 is `y_min`.
#[derive(Debug, Clone)]
pub struct PlotGrid {
    pub domain: Domain,
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl PlotGrid {
    pub fn x(&self, i: usize) -> f64 {
        let d = self.domain;
        d.x_min + (d.x_max - d.x_min) * i as f64 / (self.resolution - 1) as f64
    }

    pub fn y(&self, j: usize) -> f64 {
        let d = self.domain;
        d.y_min + (d.y_max - d.y_min) * j as f64 / (self.resolution - 1) as f64
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.resolution + i]
    }

    /// Evaluates output 0 of `net` on the grid, rows split across threads.
    pub fn evaluate(net: &Net, domain: Domain, resolution: usize, threads: usize) -> Result<Self> {
        if resolution < 2 {
            bail!("resolution must be at least 2, got {resolution}");
        }
        if net.input_dim() != 2 {
            bail!("plotting needs a model with 2 inputs, this one has {}", net.input_dim());
        }
        let mut grid = PlotGrid {
            domain,
            resolution,
            values: vec![0.0; resolution * resolution],
        };
        let rows_per = resolution.div_ceil(threads.max(1));
        let shape = grid.clone();
        std::thread::scope(|scope| -> Result<()> {
            let handles: Vec<_> = grid
                .values
                .chunks_mut(rows_per * resolution)
                .enumerate()
                .map(|(chunk, out)| {
                    let shape = &shape;
                    scope.spawn(move || -> Result<()> {
                        let first = chunk * rows_per;
                        let rows = out.len() / resolution;
                        let mut pts = Vec::with_capacity(2 * out.len());
                        for j in first..first + rows {
                            for i in 0..resolution {
                                pts.extend([shape.x(i), shape.y(j)]);
                            }
                        }
                        let y = net.forward(&Mat::new(out.len(), 2, pts)?)?;
                        for (o, r) in out.iter_mut().zip(y.row_iter()) {
                            *o = r[0];
                        }
                        Ok(())
                    })
                })
                .collect();
            for h in handles {
                h.join().expect("grid worker panicked")?;
            }
            Ok(())
        })?;
        Ok(grid)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,value\n");
        for j in 0..self.resolution {
            for i in 0..self.resolution {
                writeln!(out, "{},{},{}", self.x(i), self.y(j), self.at(i, j)).unwrap();
            }
        }
        out
    }

    /// Binary 8-bit PGM, min-max scaled, top row at `y_max`. A constant grid is mid-gray.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let n = self.resolution;
        let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
        for j in (0..n).rev() {
            for i in 0..n {
                let v = self.at(i, j);
                let g = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() } else { 128.0 };
                out.push(g as u8);
            }
        }
        out
    }

    /// Segments of the zero level set by marching squares, as `x0,y0,x1,y1` rows.
    pub fn zero_level_segments(&self) -> Vec<[f64; 4]> {
        let n = self.resolution;
        let mut segs = Vec::new();
        let cross = |a: (f64, f64, f64), b: (f64, f64, f64)| {
            let t = a.2 / (a.2 - b.2);
            (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
        };
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                // corners counter-clockwise from bottom-left
                let c = [
                    (self.x(i), self.y(j), self.at(i, j)),
                    (self.x(i + 1), self.y(j), self.at(i + 1, j)),
                    (self.x(i + 1), self.y(j + 1), self.at(i + 1, j + 1)),
                    (self.x(i), self.y(j + 1), self.at(i, j + 1)),
                ];
                let mut hits = Vec::with_capacity(4);
                for e in 0..4 {
                    let (a, b) = (c[e], c[(e + 1) % 4]);
                    if (a.2 > 0.0) != (b.2 > 0.0) {
                        hits.push(cross(a, b));
                    }
                }
                match hits.len() {
                    2 => segs.push([hits[0].0, hits[0].1, hits[1].0, hits[1].1]),
                    4 => {
                        // saddle: pair edges by the sign at the cell centre
                        let centre = c.iter().map(|p| p.2).sum::<f64>() / 4.0;
                        let (p, q) = if (centre > 0.0) == (c[0].2 > 0.0) { ((0, 1), (2, 3)) } else { ((3, 0), (1, 2)) };
                        for (a, b) in [p, q] {
                            segs.push([hits[a].0, hits[a].1, hits[b].0, hits[b].1]);
                        }
                    }
                    _ => {}
                }
            }
        }
        segs
    }
}

/// Polygon vertices in counter-clockwise order around their centroid.
pub fn hull_order(vertices: &Mat) -> Vec<[f64; 2]> {
    let pts: Vec<[f64; 2]> = vertices.row_iter().map(|r| [r[0], r[1]]).collect();
    let n = pts.len().max(1) as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let mut sorted = pts;
    sorted.sort_by(|a, b| {
        let ta = (a[1] - cy).atan2(a[0] - cx);
        let tb = (b[1] - cy).atan2(b[0] - cx);
        ta.total_cmp(&tb)
    });
    sorted
}

pub fn threads_from_env() -> usize {
    let default = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("POLICE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n >= 1 => n,
        _ => default,
    }
}
