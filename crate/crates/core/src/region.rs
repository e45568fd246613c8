//! Convex polytopes described by their vertices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Largest dimension accepted by [`Region::aligned_box`]; bounds the corner count at 2^20.
pub const MAX_BOX_DIM: usize = 20;

/// Slack for closed-form membership tests.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    /// Origin plus the canonical basis vectors.
    Simplex,
    /// All `2^D` corners of an axis-aligned box.
    Box,
    /// Two-dimensional vertex list of unknown structure.
    Polygon,
    General,
}

/// Convex hull of a `P × D` vertex matrix. Row order carries no meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct Region<T> {
    vertices: Matrix<T>,
    kind: RegionKind,
}

impl<T: Scalar> Region<T> {
    pub fn from_vertices(vertices: &[Vec<T>]) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::Validation("region needs at least one vertex".into()));
        }
        Self::from_matrix(Matrix::from_rows(vertices)?)
    }

    pub fn from_matrix(vertices: Matrix<T>) -> Result<Self> {
        if vertices.rows() == 0 || vertices.cols() == 0 {
            return Err(Error::Validation(format!(
                "region needs at least one vertex of positive dimension, got {}x{}",
                vertices.rows(),
                vertices.cols()
            )));
        }
        if !vertices.is_finite() {
            return Err(Error::Validation("region vertices must be finite".into()));
        }
        let kind = if vertices.cols() == 2 {
            RegionKind::Polygon
        } else {
            RegionKind::General
        };
        Ok(Self { vertices, kind })
    }

    /// Standard `d`-simplex: the origin and the `d` unit vectors.
    pub fn simplex(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Validation("simplex dimension must be at least 1".into()));
        }
        let mut v = Matrix::zeros(d + 1, d);
        for i in 0..d {
            v.set(i + 1, i, T::one());
        }
        Ok(Self {
            vertices: v,
            kind: RegionKind::Simplex,
        })
    }

    /// Axis-aligned box `[lo, hi]` given by its `2^D` corners.
    pub fn aligned_box(lo: &[T], hi: &[T]) -> Result<Self> {
        let d = lo.len();
        if d == 0 || hi.len() != d {
            return Err(Error::Validation(format!(
                "box bounds must be nonempty and equally long, got {} and {}",
                d,
                hi.len()
            )));
        }
        if d > MAX_BOX_DIM {
            return Err(Error::Validation(format!(
                "box dimension {d} exceeds the limit of {MAX_BOX_DIM}"
            )));
        }
        if let Some(i) = (0..d).find(|&i| !(lo[i] < hi[i]) || !lo[i].is_finite() || !hi[i].is_finite()) {
            return Err(Error::Validation(format!(
                "box bounds need lo < hi, coordinate {i} has {} and {}",
                lo[i], hi[i]
            )));
        }
        let corners = 1usize << d;
        let mut data = Vec::with_capacity(corners * d);
        for mask in 0..corners {
            data.extend((0..d).map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }));
        }
        Ok(Self {
            vertices: Matrix::from_raw(corners, d, data),
            kind: RegionKind::Box,
        })
    }

    /// Re-tags the region when its vertex set is exactly a standard simplex or a box corner set.
    pub fn classify(mut self) -> Self {
        let (p, d) = self.vertices.shape();
        if p == d + 1 {
            let mut seen = vec![false; d + 1];
            let all_unit = self.vertices.row_iter().all(|row| {
                let ones: Vec<usize> = (0..d).filter(|&i| row[i] == T::one()).collect();
                let zeros = row.iter().filter(|&&x| x == T::zero()).count();
                let slot = match (ones.as_slice(), zeros) {
                    ([], z) if z == d => 0,
                    ([i], z) if z == d - 1 => i + 1,
                    _ => return false,
                };
                !std::mem::replace(&mut seen[slot], true)
            });
            if all_unit {
                self.kind = RegionKind::Simplex;
                return self;
            }
        }
        if d <= MAX_BOX_DIM && p == 1 << d {
            let (lo, hi) = self.bounds();
            if (0..d).all(|i| lo[i] < hi[i]) {
                let mut masks: Vec<usize> = Vec::with_capacity(p);
                let ok = self.vertices.row_iter().all(|row| {
                    let mut mask = 0;
                    for i in 0..d {
                        if row[i] == hi[i] {
                            mask |= 1 << i;
                        } else if row[i] != lo[i] {
                            return false;
                        }
                    }
                    masks.push(mask);
                    true
                });
                masks.sort_unstable();
                masks.dedup();
                if ok && masks.len() == p {
                    self.kind = RegionKind::Box;
                }
            }
        }
        self
    }

    pub fn vertices(&self) -> &Matrix<T> {
        &self.vertices
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.rows()
    }

    pub fn dim(&self) -> usize {
        self.vertices.cols()
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }

    /// Componentwise minimum and maximum over the vertices.
    pub fn bounds(&self) -> (Vec<T>, Vec<T>) {
        let mut lo = self.vertices.row(0).to_vec();
        let mut hi = lo.clone();
        for row in self.vertices.row_iter() {
            for (i, &x) in row.iter().enumerate() {
                lo[i] = lo[i].min(x);
                hi[i] = hi[i].max(x);
            }
        }
        (lo, hi)
    }

    pub fn centroid(&self) -> Vec<T> {
        let p = T::from_usize(self.num_vertices()).unwrap();
        self.vertices.column_sums().into_iter().map(|s| s / p).collect()
    }

    /// Largest distance between two vertices; bounding-box diagonal for very large vertex sets.
    pub fn diameter(&self) -> T {
        let p = self.num_vertices();
        if self.kind == RegionKind::Box || p > 4096 {
            let (lo, hi) = self.bounds();
            return lo.iter().zip(&hi).map(|(&a, &b)| (b - a) * (b - a)).sum::<T>().sqrt();
        }
        let mut best = T::zero();
        for i in 0..p {
            for j in i + 1..p {
                let d2: T = self
                    .vertices
                    .row(i)
                    .iter()
                    .zip(self.vertices.row(j))
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                best = best.max(d2);
            }
        }
        best.sqrt()
    }

    /// `n × P` matrix of flat-Dirichlet barycentric weights.
    pub fn sample_weights(&self, n: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
        let p = self.num_vertices();
        let mut data = Vec::with_capacity(n * p);
        for _ in 0..n {
            let draws: Vec<f64> = (0..p).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            data.extend(draws.into_iter().map(|e| T::of(e / total)));
        }
        Matrix::from_raw(n, p, data)
    }

    /// `n` points `Vᵀα` with `α` flat-Dirichlet; deterministic per seed.
    pub fn sample_barycentric(&self, n: usize, seed: u64) -> Matrix<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with(&self, n: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
        self.sample_weights(n, rng)
            .matmul(&self.vertices)
            .expect("weights have one column per vertex")
    }

    /// Closed-form membership for simplex and box regions.
    pub fn contains(&self, x: &[T]) -> Result<bool> {
        if x.len() != self.dim() {
            return Err(Error::dims("contains", (1, x.len()), self.vertices.shape()));
        }
        let tol = T::of(MEMBERSHIP_TOL);
        match self.kind {
            RegionKind::Box => {
                let (lo, hi) = self.bounds();
                Ok(x.iter().zip(lo.iter().zip(&hi)).all(|(&v, (&l, &h))| {
                    v >= l - tol * l.abs().max(T::one()) && v <= h + tol * h.abs().max(T::one())
                }))
            }
            RegionKind::Simplex => {
                let rest = T::one() - x.iter().copied().sum::<T>();
                Ok(rest >= -tol && x.iter().all(|&v| v >= -tol))
            }
            RegionKind::Polygon | RegionKind::General => Err(Error::Unsupported(
                "membership in a general polytope needs a linear program".into(),
            )),
        }
    }

    /// Same region with vertex rows reordered; `order[i]` is the source row of row `i`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.num_vertices()).collect::<Vec<_>>() {
            return Err(Error::Validation("vertex order is not a permutation".into()));
        }
        Ok(Self {
            vertices: self.vertices.select_rows(order),
            kind: self.kind,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_list_examples() {
        let tri = Region::from_vertices(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!((tri.num_vertices(), tri.dim()), (3, 2));
        assert_eq!(tri.kind(), RegionKind::Polygon);
        let point = Region::from_vertices(&[vec![5.0, 5.0]]).unwrap();
        assert_eq!(point.num_vertices(), 1);
        let dup = Region::from_vertices(&[vec![1.0], vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(dup.kind(), RegionKind::General);
    }

    #[test]
    fn vertex_list_errors() {
        assert!(Region::<f64>::from_vertices(&[]).is_err());
        assert!(Region::from_vertices(&[vec![0.0, 1.0], vec![2.0]]).is_err());
        assert!(Region::from_vertices(&[vec![f64::INFINITY]]).is_err());
    }

    #[test]
    fn simplex_examples() {
        let s = Region::<f64>::simplex(2).unwrap();
        assert_eq!(s.vertices().data(), &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(Region::<f64>::simplex(784).unwrap().num_vertices(), 785);
        assert_eq!(Region::<f64>::simplex(1).unwrap().vertices().data(), &[0.0, 1.0]);
        assert!(Region::<f64>::simplex(0).is_err());
    }

    #[test]
    fn box_examples() {
        let b = Region::aligned_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(b.num_vertices(), 4);
        let seg = Region::aligned_box(&[0.0], &[2.0]).unwrap();
        assert_eq!(seg.vertices().data(), &[0.0, 2.0]);
        assert!(Region::aligned_box(&[0.0; 21], &[1.0; 21]).is_err());
        assert!(Region::aligned_box(&[0.0, 1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn membership_examples() {
        let b = Region::aligned_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!(b.contains(&[0.0, 0.0]).unwrap());
        assert!(!b.contains(&[0.0, 1.5]).unwrap());
        let s = Region::<f64>::simplex(2).unwrap();
        assert!(!s.contains(&[0.6, 0.6]).unwrap());
        for v in s.vertices().row_iter() {
            assert!(s.contains(v).unwrap());
        }
        let tri = Region::from_vertices(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert!(matches!(tri.contains(&[0.1, 0.1]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn sampling_examples() {
        let point = Region::from_vertices(&[vec![5.0, -2.0]]).unwrap();
        let s = point.sample_barycentric(10, 3);
        assert!(s.row_iter().all(|r| r == [5.0, -2.0]));

        let seg = Region::aligned_box(&[0.0], &[2.0]).unwrap();
        assert!(seg.sample_barycentric(1000, 9).data().iter().all(|&x| (0.0..=2.0).contains(&x)));

        assert_eq!(seg.sample_barycentric(5, 1), seg.sample_barycentric(5, 1));
    }

    #[test]
    fn sample_mean_approaches_vertex_centroid() {
        let tri = Region::from_vertices(&[vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, 1.5]]).unwrap();
        let n = 100_000;
        let s = tri.sample_barycentric(n, 42);
        let mean: Vec<f64> = s.column_sums().iter().map(|x| x / n as f64).collect();
        let centroid = tri.centroid();
        for (m, c) in mean.iter().zip(&centroid) {
            assert!((m - c).abs() < 0.02, "mean {mean:?} centroid {centroid:?}");
        }
    }

    #[test]
    fn samples_pass_membership() {
        let regions = [
            Region::<f64>::simplex(3).unwrap(),
            Region::aligned_box(&[-1.0, 0.5, 2.0], &[1.0, 0.75, 4.0]).unwrap(),
        ];
        for r in &regions {
            for seed in 0..10 {
                let s = r.sample_barycentric(10_000, seed);
                assert!(s.row_iter().all(|x| r.contains(x).unwrap()));
            }
        }
    }

    #[test]
    fn classify_recognises_canonical_sets() {
        let s = Region::from_vertices(&[vec![0.0, 1.0], vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(s.classify().kind(), RegionKind::Simplex);
        let b = Region::from_vertices(&[vec![1.0, -1.0], vec![-1.0, -1.0], vec![1.0, 1.0], vec![-1.0, 1.0]]).unwrap();
        assert_eq!(b.classify().kind(), RegionKind::Box);
        let quad = Region::from_vertices(&[vec![1.0, -1.0], vec![-1.0, -1.0], vec![1.0, 1.0], vec![-1.0, 2.0]]).unwrap();
        assert_eq!(quad.classify().kind(), RegionKind::Polygon);
    }

    #[test]
    fn diameter_of_simplex_and_box() {
        assert!((Region::<f64>::simplex(2).unwrap().diameter() - 2f64.sqrt()).abs() < 1e-15);
        let b = Region::aligned_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!((b.diameter() - 8f64.sqrt()).abs() < 1e-15);
    }
}
