//! Truncated Gaussian-kernel density.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::distance::DistanceMatrix;

const PARALLEL_THRESHOLD: usize = 128;

/// Per-sample density and the density-descending visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityVector {
    pub rho: Vec<f64>,
    /// Sample indices by decreasing density, ties by ascending index.
    pub ordering: Vec<usize>,
}

impl DensityVector {
    /// Builds the ordering for an existing density vector.
    pub fn from_rho(rho: Vec<f64>) -> Self {
        let mut ordering: Vec<usize> = (0..rho.len()).collect();
        ordering.sort_by(|&a, &b| density_order(&rho, a, b));
        Self { rho, ordering }
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// Position of every sample within `ordering`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut rank = vec![0; self.len()];
        for (pos, &i) in self.ordering.iter().enumerate() {
            rank[i] = pos;
        }
        rank
    }
}

/// Higher density first; equal densities by ascending index.
pub fn density_order(rho: &[f64], a: usize, b: usize) -> Ordering {
    rho[b].total_cmp(&rho[a]).then(a.cmp(&b))
}

/// `rho[i] = sum over j != i with d(i, j) <= d_rd of exp(-(d(i, j) / d_rd)^2)`.
pub fn compute_density(d: &DistanceMatrix, d_rd: f64) -> DensityVector {
    let n = d.len();
    let row_density = |i: usize| -> f64 {
        d.row(i)
            .iter()
            .enumerate()
            .filter(|&(j, &dij)| j != i && dij <= d_rd)
            .map(|(_, &dij)| {
                let r = dij / d_rd;
                (-(r * r)).exp()
            })
            .sum()
    };
    let rho: Vec<f64> = if n >= PARALLEL_THRESHOLD {
        (0..n).into_par_iter().map(row_density).collect()
    } else {
        (0..n).map(row_density).collect()
    };
    DensityVector::from_rho(rho)
}
