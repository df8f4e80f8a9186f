//! Particle ensembles: `N` points in `R^d`, stored row-major.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// A finite set of particles representing an (evolving) distribution.
///
/// Rows are particles. Every entry is finite; this is checked on
/// construction and after every in-place update performed by the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    positions: Array2<f64>,
}

impl ParticleEnsemble {
    pub fn new(positions: Array2<f64>) -> Result<Self> {
        if positions.ncols() == 0 {
            return Err(Error::invalid("particles must have dimension >= 1"));
        }
        if let Some((row, _)) = positions
            .outer_iter()
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid(format!(
                "particle {row} has a non-finite coordinate"
            )));
        }
        let positions = positions.as_standard_layout().into_owned();
        Ok(Self { positions })
    }

    /// Builds an ensemble from a flat row-major buffer.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "buffer of length {} is not a whole number of {dim}-dimensional points",
                data.len()
            )));
        }
        let n = data.len() / dim;
        let positions =
            Array2::from_shape_vec((n, dim), data).map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(positions)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("cannot infer dimension of an ensemble with no rows"))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::invalid(format!(
                    "row {i} has {} coordinates, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(dim, data)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            positions: Array2::zeros((0, dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn positions(&self) -> &Array2<f64> {
        &self.positions
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.positions.view()
    }

    pub fn into_positions(self) -> Array2<f64> {
        self.positions
    }

    /// The `i`-th particle as a contiguous slice.
    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.as_slice()[i * d..(i + 1) * d]
    }

    pub fn as_slice(&self) -> &[f64] {
        self.positions
            .as_slice()
            .expect("ensemble storage is always standard layout")
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.as_slice().chunks_exact(self.dim().max(1))
    }

    /// Sample mean per coordinate. `None` for an empty ensemble.
    pub fn mean(&self) -> Option<Vec<f64>> {
        self.positions.mean_axis(Axis(0)).map(|m| m.to_vec())
    }

    /// Gathers the given rows into a new matrix.
    pub fn select(&self, rows: &[usize]) -> Array2<f64> {
        self.positions.select(Axis(0), rows)
    }

    pub(crate) fn positions_mut(&mut self) -> &mut Array2<f64> {
        &mut self.positions
    }
}
