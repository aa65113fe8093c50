use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::field::MetricSpaceSpec;

/// Row-major `f64` matrix backing coordinate and signal blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape("matrix", &[rows, cols], &[data.len()]));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Coordinate block `M` of a pair set. Never touched by diffusion.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateSet(Matrix);

/// Signal block `Y` of a pair set.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalSet(Matrix);

macro_rules! matrix_newtype {
    ($t:ident) => {
        impl $t {
            pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
                Matrix::new(rows, dim, data).map($t)
            }

            pub fn from_matrix(m: Matrix) -> Self {
                $t(m)
            }

            pub fn zeros(rows: usize, dim: usize) -> Self {
                $t(Matrix::zeros(rows, dim))
            }

            pub fn len(&self) -> usize {
                self.0.rows()
            }

            pub fn is_empty(&self) -> bool {
                self.0.rows() == 0
            }

            pub fn dim(&self) -> usize {
                self.0.cols()
            }

            pub fn row(&self, i: usize) -> &[f64] {
                self.0.row(i)
            }

            pub fn data(&self) -> &[f64] {
                self.0.data()
            }

            pub fn data_mut(&mut self) -> &mut [f64] {
                self.0.data_mut()
            }

            pub fn matrix(&self) -> &Matrix {
                &self.0
            }

            pub fn select(&self, indices: &[usize]) -> Self {
                $t(self.0.select_rows(indices))
            }
        }
    };
}

matrix_newtype!(CoordinateSet);
matrix_newtype!(SignalSet);

impl SignalSet {
    /// Standard normal signals of the given shape.
    pub fn standard_normal(rows: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let data = (0..rows * dim)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        SignalSet(Matrix {
            rows,
            cols: dim,
            data,
        })
    }

    pub fn check_same_shape(&self, other: &SignalSet, op: &'static str) -> Result<()> {
        if self.len() != other.len() || self.dim() != other.dim() {
            return Err(Error::shape(
                op,
                &[self.len(), self.dim()],
                &[other.len(), other.dim()],
            ));
        }
        Ok(())
    }
}

/// Row-stacked coordinate–signal pairs `[M, Y_t]` at diffusion step `t`
/// (`t = 0` is clean data).
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub coords: CoordinateSet,
    pub signals: SignalSet,
    pub t: usize,
}

pub type ContextSet = PairSet;
pub type QuerySet = PairSet;

impl PairSet {
    pub fn new(coords: CoordinateSet, signals: SignalSet, t: usize) -> Result<Self> {
        if coords.len() != signals.len() {
            return Err(Error::shape("pair_set", &[coords.len()], &[signals.len()]));
        }
        Ok(PairSet { coords, signals, t })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> PairSet {
        PairSet {
            coords: self.coords.select(indices),
            signals: self.signals.select(indices),
            t: self.t,
        }
    }

    /// Same coordinates, new signals at step `t`.
    pub fn with_signals(&self, signals: SignalSet, t: usize) -> Result<PairSet> {
        PairSet::new(self.coords.clone(), signals, t)
    }
}

/// One field: its full coordinate–signal table over a metric space.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub space: MetricSpaceSpec,
    pub coords: CoordinateSet,
    pub signals: SignalSet,
}

impl FieldSample {
    pub fn new(space: MetricSpaceSpec, coords: CoordinateSet, signals: SignalSet) -> Result<Self> {
        if coords.len() != signals.len() {
            return Err(Error::shape("field", &[coords.len()], &[signals.len()]));
        }
        if coords.dim() != space.coord_dim() {
            return Err(Error::shape("field", &[space.coord_dim()], &[coords.dim()]));
        }
        Ok(FieldSample {
            space,
            coords,
            signals,
        })
    }

    /// Pairs a signal block with the canonical coordinates of `space`.
    pub fn on_space(space: MetricSpaceSpec, signals: SignalSet) -> Result<Self> {
        let coords = space.coordinates()?;
        FieldSample::new(space, coords, signals)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn signal_dim(&self) -> usize {
        self.signals.dim()
    }

    pub fn pairs(&self) -> PairSet {
        PairSet {
            coords: self.coords.clone(),
            signals: self.signals.clone(),
            t: 0,
        }
    }
}

/// Draws context and query subsets of a field at `t = 0`.
///
/// Each subset is uniform without replacement. With `disjoint = false` the
/// two are drawn independently and may overlap.
pub fn subsample_pairs(
    field: &FieldSample,
    n_context: usize,
    n_query: usize,
    disjoint: bool,
    rng: &mut impl Rng,
) -> Result<(ContextSet, QuerySet)> {
    let n = field.len();
    if n_context == 0 || n_query == 0 {
        return Err(Error::contract("pair counts must be at least 1"));
    }
    let too_many = if disjoint {
        n_context + n_query > n
    } else {
        n_context > n || n_query > n
    };
    if too_many {
        return Err(Error::contract(format!(
            "requested {n_context} context and {n_query} query pairs from a field of {n} points"
        )));
    }
    let (ctx_idx, qry_idx) = if disjoint {
        let all = index::sample(rng, n, n_context + n_query).into_vec();
        (all[..n_context].to_vec(), all[n_context..].to_vec())
    } else {
        (
            index::sample(rng, n, n_context).into_vec(),
            index::sample(rng, n, n_query).into_vec(),
        )
    };
    let pairs = field.pairs();
    Ok((pairs.select(&ctx_idx), pairs.select(&qry_idx)))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn field() -> FieldSample {
        let space = MetricSpaceSpec::Grid2d {
            height: 3,
            width: 4,
        };
        let signals = SignalSet::new(12, 1, (0..12).map(|v| v as f64).collect()).unwrap();
        FieldSample::on_space(space, signals).unwrap()
    }

    fn sorted_rows(p: &PairSet) -> Vec<Vec<u64>> {
        let mut rows: Vec<Vec<u64>> = (0..p.len())
            .map(|i| {
                p.coords
                    .row(i)
                    .iter()
                    .chain(p.signals.row(i))
                    .map(|v| v.to_bits())
                    .collect()
            })
            .collect();
        rows.sort();
        rows
    }

    #[test]
    fn full_subsets_are_permutations_of_the_field() {
        let f = field();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (c, q) = subsample_pairs(&f, 12, 12, false, &mut rng).unwrap();
        assert_eq!(sorted_rows(&c), sorted_rows(&f.pairs()));
        assert_eq!(sorted_rows(&q), sorted_rows(&f.pairs()));
    }

    #[test]
    fn single_context_row_and_determinism() {
        let f = field();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            subsample_pairs(&f, 1, 5, false, &mut rng).unwrap()
        };
        let (c, q) = draw();
        assert_eq!(c.len(), 1);
        assert_eq!(q.len(), 5);
        assert_eq!(draw(), (c, q));
    }

    #[test]
    fn oversized_requests_are_rejected() {
        let f = field();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(subsample_pairs(&f, 13, 1, false, &mut rng).is_err());
        assert!(subsample_pairs(&f, 0, 1, false, &mut rng).is_err());
        assert!(subsample_pairs(&f, 8, 8, true, &mut rng).is_err());
    }

    #[test]
    fn disjoint_sampling_shares_no_rows() {
        let f = field();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (c, q) = subsample_pairs(&f, 6, 6, true, &mut rng).unwrap();
        let cs = sorted_rows(&c);
        assert!(sorted_rows(&q).iter().all(|r| !cs.contains(r)));
    }
}
