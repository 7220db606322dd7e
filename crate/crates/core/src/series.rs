//! Flat storage for time-indexed blocks of fixed dimension.

use crate::num::Real;

/// A sequence of `dim`-vectors stored contiguously (node-major).
#[derive(Debug, Clone, PartialEq)]
pub struct VecSeries<R: Real> {
    dim: usize,
    data: Vec<R>,
}

impl<R: Real> VecSeries<R> {
    pub fn zeros(dim: usize, n_nodes: usize) -> Self {
        Self {
            dim,
            data: vec![R::zero(); dim * n_nodes],
        }
    }

    pub fn from_data(dim: usize, data: Vec<R>) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "series shape mismatch");
        Self { dim, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn node(&self, k: usize) -> &[R] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    #[inline]
    pub fn node_mut(&mut self, k: usize) -> &mut [R] {
        &mut self.data[k * self.dim..(k + 1) * self.dim]
    }

    #[inline]
    pub fn data(&self) -> &[R] {
        &self.data
    }

    /// Euclidean norm of node `k`.
    #[inline]
    pub fn node_norm(&self, k: usize) -> R {
        self.node(k)
            .iter()
            .map(|&x| x * x)
            .fold(R::zero(), |s, x| s + x)
            .sqrt()
    }

    pub fn reverse_nodes(&mut self) {
        let dim = self.dim;
        let n = self.n_nodes();
        for k in 0..n / 2 {
            for i in 0..dim {
                self.data.swap(k * dim + i, (n - 1 - k) * dim + i);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Euclidean norm of a slice.
#[inline]
pub fn norm2<R: Real>(v: &[R]) -> R {
    v.iter()
        .map(|&x| x * x)
        .fold(R::zero(), |s, x| s + x)
        .sqrt()
}
