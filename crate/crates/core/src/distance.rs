//! Dense pairwise distances and the 3-nearest-neighbour base distance.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

/// Rows below this count are computed serially.
const PARALLEL_THRESHOLD: usize = 128;

/// Number of neighbours averaged by [`base_distance`].
pub const BASE_NEIGHBOURS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`, clamped to `[0, 2]`.
    Cosine,
    Manhattan,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
            Metric::Manhattan => "manhattan",
        }
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                match (na > 0.0, nb > 0.0) {
                    (false, false) => 0.0,
                    (true, true) => (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0),
                    _ => 1.0,
                }
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "cosine" | "cosine-distance" => Ok(Metric::Cosine),
            "manhattan" | "l1" => Ok(Metric::Manhattan),
            other => Err(Error::param("metric", format!("unknown metric `{other}`"))),
        }
    }
}

/// Symmetric N x N matrix of non-negative distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
    metric: Metric,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// All pairwise distances between the rows of `x`.
///
/// Every entry is computed independently, so the parallel path produces the
/// same bits as the serial one.
pub fn pairwise_distances(x: &FeatureMatrix, metric: Metric) -> DistanceMatrix {
    let n = x.len();
    let mut data = vec![0.0; n * n];
    let fill = |(i, row): (usize, &mut [f64])| {
        let a = x.row(i);
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = if i == j { 0.0 } else { metric.distance(a, x.row(j)) };
        }
    };
    if n >= PARALLEL_THRESHOLD {
        data.par_chunks_mut(n.max(1)).enumerate().for_each(fill);
    } else {
        data.chunks_mut(n.max(1)).enumerate().for_each(fill);
    }
    DistanceMatrix { n, data, metric }
}

/// Mean over samples of the mean distance to their three nearest neighbours.
///
/// With fewer than four samples the `N - 1` available neighbours are used.
pub fn base_distance(d: &DistanceMatrix) -> Result<f64> {
    let n = d.len();
    if n < 2 {
        return Err(Error::input("base distance needs at least two samples"));
    }
    let k = BASE_NEIGHBOURS.min(n - 1);
    let mut total = 0.0;
    let mut nearest = Vec::with_capacity(k + 1);
    for i in 0..n {
        nearest.clear();
        for (j, &v) in d.row(i).iter().enumerate() {
            if j == i {
                continue;
            }
            // keep the k smallest seen so far, sorted ascending
            if nearest.len() < k || v < nearest[k - 1] {
                let pos = nearest.partition_point(|&x| x <= v);
                nearest.insert(pos, v);
                nearest.truncate(k);
            }
        }
        total += nearest.iter().sum::<f64>() / k as f64;
    }
    Ok(total / n as f64)
}
