//! Label-noise selection from forest structure and density.
//!
//! A sample is a candidate when its tree holds fewer than `n_min` samples
//! (cluster-size criterion) or when its node sits at depth `>= n_d` within the
//! bottom `n_l` depth layers of its tree (depth-layer criterion). Candidates
//! are kept only if they rank among the lowest-density `p_d` fraction of the
//! class, so at most `ceil(p_d * N_class)` samples per class are flagged.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::format_f64;
use crate::density::DensityVector;
use crate::error::{Error, Result};
use crate::forest::CLForest;
use crate::params::NoiseParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseReason {
    ClusterSize,
    DepthLayer,
}

impl NoiseReason {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseReason::ClusterSize => "cluster_size",
            NoiseReason::DepthLayer => "depth_layer",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "cluster_size" => Ok(NoiseReason::ClusterSize),
            "depth_layer" => Ok(NoiseReason::DepthLayer),
            other => Err(Error::input(format!("unknown noise reason `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEntry {
    pub id: String,
    pub class: usize,
    pub reason: NoiseReason,
    /// Fraction of the class ranked strictly below this sample by density.
    pub density_percentile: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub entries: Vec<NoiseEntry>,
}

impl NoiseReport {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn flagged_ids(&self) -> HashSet<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn count_in_class(&self, class: usize) -> usize {
        self.entries.iter().filter(|e| e.class == class).count()
    }

    pub fn merge(&mut self, other: NoiseReport) {
        self.entries.extend(other.entries);
    }

    /// `id,reason,density_percentile` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "reason", "density_percentile"])?;
        for e in &self.entries {
            w.write_record([e.id.as_str(), e.reason.as_str(), &format_f64(e.density_percentile)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV export; the class of each entry is not stored there and
    /// comes back as 0.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let cell = rec.get(2).unwrap_or("");
            entries.push(NoiseEntry {
                id: rec.get(0).unwrap_or("").to_string(),
                class: 0,
                reason: NoiseReason::parse(rec.get(1).unwrap_or(""))?,
                density_percentile: cell
                    .parse()
                    .map_err(|_| Error::input(format!("invalid percentile `{cell}`")))?,
            });
        }
        Ok(Self { entries })
    }
}

/// Structural criteria only (cluster size or depth layer), per local sample.
pub fn noise_candidates(f: &CLForest, p: &NoiseParams) -> Vec<Option<NoiseReason>> {
    let mut out = vec![None; f.num_samples()];
    for &root in f.roots() {
        let nodes = f.tree_nodes(root);
        let size: usize = nodes.iter().map(|&n| f.node(n).members.len()).sum();
        let max_depth = nodes.iter().map(|&n| f.node(n).depth).max().unwrap_or(0);
        for &n in &nodes {
            let node = f.node(n);
            let reason = if size < p.n_min {
                Some(NoiseReason::ClusterSize)
            } else if p.n_l > 0 && node.depth >= p.n_d && node.depth + p.n_l > max_depth {
                Some(NoiseReason::DepthLayer)
            } else {
                None
            };
            for &m in &node.members {
                out[m] = reason;
            }
        }
    }
    out
}

/// Density percentile of each sample: ascending-density rank over N, ties by
/// ascending index.
pub fn density_percentiles(rho: &[f64]) -> Vec<f64> {
    let n = rho.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rho[a].total_cmp(&rho[b]).then(a.cmp(&b)));
    let mut pct = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        pct[i] = rank as f64 / n as f64;
    }
    pct
}

/// Flags noise within one class forest.
pub fn select_noise(f: &CLForest, rho: &DensityVector, p: &NoiseParams) -> Result<NoiseReport> {
    p.validate()?;
    if rho.len() != f.num_samples() {
        return Err(Error::input(format!(
            "density has {} entries, forest has {} samples",
            rho.len(),
            f.num_samples()
        )));
    }
    let candidates = noise_candidates(f, p);
    let pct = density_percentiles(&rho.rho);
    let entries = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, reason)| {
            let reason = (*reason)?;
            (pct[i] < p.p_d).then(|| NoiseEntry {
                id: f.samples()[i].clone(),
                class: f.class(),
                reason,
                density_percentile: pct[i],
            })
        })
        .collect();
    Ok(NoiseReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{CoarseNode, ForestParams};

    fn params() -> ForestParams {
        ForestParams {
            d_rd: 1.0,
            d_rn: 1.0,
            leader: Default::default(),
            metric: Default::default(),
        }
    }

    /// Tree 0: chain of four singleton nodes (samples 0..4, depths 0..3).
    /// Tree 1: one node with samples 4 and 5.
    fn forest() -> CLForest {
        let mut nodes: Vec<CoarseNode> = (0..4)
            .map(|i| CoarseNode {
                id: i,
                prototype: i,
                members: vec![i],
                leader: i.checked_sub(1),
                children: if i < 3 { vec![i + 1] } else { vec![] },
                depth: i,
            })
            .collect();
        nodes.push(CoarseNode {
            id: 4,
            prototype: 4,
            members: vec![4, 5],
            leader: None,
            children: vec![],
            depth: 0,
        });
        CLForest::from_parts(0, params(), (0..6).map(|i| format!("s{i}")).collect(), nodes).unwrap()
    }

    fn rho(values: &[f64]) -> DensityVector {
        DensityVector::from_rho(values.to_vec())
    }

    #[test]
    fn zero_percentile_flags_nothing() {
        let p = NoiseParams { n_min: 10, p_d: 0.0, ..Default::default() };
        let r = select_noise(&forest(), &rho(&[1.0; 6]), &p).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn small_tree_flagged_by_size() {
        let p = NoiseParams { n_min: 3, n_d: 0, n_l: 0, p_d: 1.0 };
        let r = select_noise(&forest(), &rho(&[5.0, 4.0, 3.0, 2.0, 1.0, 1.0]), &p).unwrap();
        let ids: Vec<&str> = r.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, vec!["s4", "s5"]);
        assert!(r.entries.iter().all(|e| e.reason == NoiseReason::ClusterSize));
    }

    #[test]
    fn last_layer_with_one_layer() {
        let p = NoiseParams { n_min: 0, n_d: 0, n_l: 1, p_d: 1.0 };
        let c = noise_candidates(&forest(), &p);
        // bottom layer of tree 0 is sample 3; tree 1 is a single layer
        assert_eq!(
            c,
            vec![
                None,
                None,
                None,
                Some(NoiseReason::DepthLayer),
                Some(NoiseReason::DepthLayer),
                Some(NoiseReason::DepthLayer)
            ]
        );
        // start depth excludes the shallow single-node tree
        let p = NoiseParams { n_d: 2, n_l: 2, ..p };
        let c = noise_candidates(&forest(), &p);
        assert_eq!(c.iter().filter(|r| r.is_some()).count(), 2);
        assert!(c[2].is_some() && c[3].is_some());
    }

    #[test]
    fn oversized_layer_count_takes_whole_tree() {
        let p = NoiseParams { n_min: 0, n_d: 0, n_l: 50, p_d: 1.0 };
        assert!(noise_candidates(&forest(), &p).iter().all(Option::is_some));
    }

    #[test]
    fn density_cap_keeps_lowest() {
        let p = NoiseParams { n_min: 10, n_d: 0, n_l: 0, p_d: 0.34 };
        // every sample is a candidate; ceil(0.34 * 6) = 3 lowest densities
        let r = select_noise(&forest(), &rho(&[0.5, 0.1, 0.9, 0.1, 0.0, 3.0]), &p).unwrap();
        let ids: HashSet<String> = r.flagged_ids();
        assert_eq!(ids, ["s4", "s1", "s3"].iter().map(|s| s.to_string()).collect());
    }

    #[test]
    fn csv_round_trip() {
        let p = NoiseParams { n_min: 3, n_d: 0, n_l: 0, p_d: 1.0 };
        let r = select_noise(&forest(), &rho(&[5.0, 4.0, 3.0, 2.0, 1.0, 1.0]), &p).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(NoiseReport::read_csv(buf.as_slice()).unwrap(), r);
    }
}
