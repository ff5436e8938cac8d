//! Attribute-balanced sampling weights over leading forests.
//!
//! Every root-to-leaf path of a tree is treated as one implicit attribute.
//! Path weights come from the power-law resampling rule
//! `p_j = n_j^q / sum_i n_i^q` over per-path sample counts. A path spreads
//! its weight evenly over its coarse nodes; a node that lies on several
//! paths sums those shares and divides by its repetition count, and its
//! members split the result equally. The class-local weights are then
//! normalized, and an environment scales each class by its own class-level
//! resampling probability.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{format_f64, FeatureMatrix};
use crate::error::{Error, Result};
use crate::forest::CLForest;
use crate::params::EnvParams;

/// Root-to-leaf node sequences and how many paths visit each node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSet {
    pub paths: Vec<Vec<usize>>,
    /// Indexed by node id.
    pub repetition: Vec<usize>,
}

impl PathSet {
    fn from_paths(paths: Vec<Vec<usize>>, num_nodes: usize) -> Self {
        let mut repetition = vec![0; num_nodes];
        for path in &paths {
            for &n in path {
                repetition[n] += 1;
            }
        }
        Self { paths, repetition }
    }
}

/// Enumerates every root-to-leaf path, roots in order, children in order.
pub fn generate_paths(f: &CLForest) -> PathSet {
    let mut paths = Vec::new();
    for &root in f.roots() {
        let mut stack = vec![vec![root]];
        while let Some(path) = stack.pop() {
            let last = *path.last().expect("paths are never empty");
            let children = &f.node(last).children;
            if children.is_empty() {
                paths.push(path);
            } else {
                for &c in children.iter().rev() {
                    let mut next = path.clone();
                    next.push(c);
                    stack.push(next);
                }
            }
        }
    }
    PathSet::from_paths(paths, f.nodes().len())
}

/// `p_j = n_j^q / sum_i n_i^q`.
pub fn resample_probs(counts: &[usize], q: f64) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::input("resampling needs at least one group"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::param("q", format!("must lie in [0, 1], got {q}")));
    }
    if counts.contains(&0) {
        return Err(Error::input("resampling group counts must be >= 1"));
    }
    let powered: Vec<f64> = counts.iter().map(|&n| (n as f64).powf(q)).collect();
    let total: f64 = powered.iter().sum();
    Ok(powered.into_iter().map(|p| p / total).collect())
}

/// Intermediate quantities of the attribute weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeWeights {
    pub paths: PathSet,
    /// Sample count of each path.
    pub path_counts: Vec<usize>,
    /// Resampling probability of each path.
    pub path_weights: Vec<f64>,
    /// Summed path shares per node, before the repetition penalty.
    pub accumulated: Vec<f64>,
    /// Node weight after dividing by repetition, before the member split.
    pub node_weights: Vec<f64>,
    /// Per-sample weight before normalization (local sample order).
    pub raw: Vec<f64>,
    /// Per-sample weight normalized to sum to one.
    pub normalized: Vec<f64>,
}

/// Class-local attribute weights of a forest's samples.
pub fn attribute_weights(f: &CLForest, q_attr: f64) -> Result<SampleWeights> {
    let detail = attribute_weights_detailed(f, q_attr, &[])?;
    Ok(SampleWeights {
        scope: WeightScope::Class(f.class()),
        ids: f.samples().to_vec(),
        weights: detail.normalized,
    })
}

/// Attribute weights with every intermediate exposed.
///
/// `excluded` lists local sample indices removed before weighting: they get
/// weight zero, path counts and member splits skip them, nodes left without
/// active members drop out of their paths, and paths that become empty or
/// duplicate an earlier path are removed.
pub fn attribute_weights_detailed(
    f: &CLForest,
    q_attr: f64,
    excluded: &[usize],
) -> Result<AttributeWeights> {
    let mut active = vec![true; f.num_samples()];
    for &i in excluded {
        *active
            .get_mut(i)
            .ok_or_else(|| Error::input(format!("excluded sample {i} out of range")))? = false;
    }
    let active_members: Vec<Vec<usize>> = f
        .nodes()
        .iter()
        .map(|n| n.members.iter().copied().filter(|&m| active[m]).collect())
        .collect();

    let full = generate_paths(f);
    let paths = if excluded.is_empty() {
        full
    } else {
        let mut seen = HashSet::new();
        let pruned = full
            .paths
            .into_iter()
            .map(|p| {
                p.into_iter()
                    .filter(|&n| !active_members[n].is_empty())
                    .collect::<Vec<_>>()
            })
            .filter(|p| !p.is_empty() && seen.insert(p.clone()))
            .collect();
        PathSet::from_paths(pruned, f.nodes().len())
    };
    if paths.paths.is_empty() {
        return Err(Error::EmptyClass(f.class()));
    }

    let path_counts: Vec<usize> = paths
        .paths
        .iter()
        .map(|p| p.iter().map(|&n| active_members[n].len()).sum())
        .collect();
    let path_weights = resample_probs(&path_counts, q_attr)?;

    let mut accumulated = vec![0.0; f.nodes().len()];
    for (path, &w) in paths.paths.iter().zip(&path_weights) {
        let share = w / path.len() as f64;
        for &n in path {
            accumulated[n] += share;
        }
    }
    let node_weights: Vec<f64> = accumulated
        .iter()
        .zip(&paths.repetition)
        .map(|(&a, &r)| if r == 0 { 0.0 } else { a / r as f64 })
        .collect();

    let mut raw = vec![0.0; f.num_samples()];
    for (n, members) in active_members.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let per_member = node_weights[n] / members.len() as f64;
        for &m in members {
            raw[m] = per_member;
        }
    }
    let total: f64 = raw.iter().sum();
    let normalized = raw.iter().map(|w| w / total).collect();
    Ok(AttributeWeights {
        paths,
        path_counts,
        path_weights,
        accumulated,
        node_weights,
        raw,
        normalized,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScope {
    Class(usize),
    Global,
}

/// Sampling probabilities keyed by sample id; sums to one within its scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights {
    pub scope: WeightScope,
    pub ids: Vec<String>,
    pub weights: Vec<f64>,
}

impl SampleWeights {
    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_weight_csv(writer, &self.ids, &self.weights)
    }
}

/// Writes `id,weight` rows with 17 significant digits.
pub fn write_weight_csv<W: Write>(writer: W, ids: &[String], weights: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "weight"])?;
    for (id, v) in ids.iter().zip(weights) {
        w.write_record([id.as_str(), &format_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `id,weight` rows.
pub fn read_weight_csv<R: std::io::Read>(reader: R) -> Result<(Vec<String>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut ids = Vec::new();
    let mut weights = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        ids.push(rec.get(0).unwrap_or("").to_string());
        let cell = rec.get(1).unwrap_or("");
        weights.push(
            cell.parse()
                .map_err(|_| Error::input(format!("invalid weight `{cell}`")))?,
        );
    }
    Ok((ids, weights))
}

/// One resampled view of the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub env_id: usize,
    pub params: EnvParams,
    /// Sorted ids carrying zero weight.
    pub excluded: Vec<String>,
    /// Global weights in sample order.
    pub weights: SampleWeights,
    /// Class label -> total probability mass.
    pub class_mass: BTreeMap<usize, f64>,
}

/// Global environment weights in the concatenated order of `forests`.
///
/// Forests must belong to distinct classes. `excluded` holds sample ids.
pub fn environment_from_forests(
    env_id: usize,
    forests: &[&CLForest],
    env: EnvParams,
    excluded: &HashSet<String>,
) -> Result<Environment> {
    env.validate()?;
    let mut seen_classes = HashSet::new();
    let mut all_ids: HashSet<&str> = HashSet::new();
    for f in forests {
        if !seen_classes.insert(f.class()) {
            return Err(Error::input(format!("two forests for class {}", f.class())));
        }
        for id in f.samples() {
            if !all_ids.insert(id) {
                return Err(Error::input(format!("sample `{id}` appears in two forests")));
            }
        }
    }
    if let Some(id) = excluded.iter().find(|id| !all_ids.contains(id.as_str())) {
        return Err(Error::UnknownSample(id.clone()));
    }
    if forests.is_empty() {
        return Err(Error::input("environment needs at least one forest"));
    }

    let mut class_excluded = Vec::with_capacity(forests.len());
    let mut class_sizes = Vec::with_capacity(forests.len());
    for f in forests {
        let local: Vec<usize> = f
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, id)| excluded.contains(*id))
            .map(|(i, _)| i)
            .collect();
        let active = f.num_samples() - local.len();
        if active == 0 {
            return Err(Error::EmptyClass(f.class()));
        }
        class_sizes.push(active);
        class_excluded.push(local);
    }
    let class_probs = resample_probs(&class_sizes, env.q_cls)?;

    let mut ids = Vec::new();
    let mut weights = Vec::new();
    let mut class_mass = BTreeMap::new();
    for ((f, local_excluded), &p) in forests.iter().zip(&class_excluded).zip(&class_probs) {
        let detail = attribute_weights_detailed(f, env.q_attr, local_excluded)?;
        ids.extend(f.samples().iter().cloned());
        weights.extend(detail.normalized.iter().map(|w| p * w));
        class_mass.insert(f.class(), p);
    }
    let mut excluded: Vec<String> = excluded.iter().cloned().collect();
    excluded.sort();
    Ok(Environment {
        env_id,
        params: env,
        excluded,
        weights: SampleWeights {
            scope: WeightScope::Global,
            ids,
            weights,
        },
        class_mass,
    })
}

/// Global environment weights ordered like the rows of `matrix`.
///
/// Every class in `matrix` needs a forest, and the forests must cover exactly
/// the matrix samples with matching labels.
pub fn build_environment(
    env_id: usize,
    matrix: &FeatureMatrix,
    forests: &[CLForest],
    env: EnvParams,
    excluded: &HashSet<String>,
) -> Result<Environment> {
    let labels = matrix.require_labels()?;
    let by_class: HashMap<usize, &CLForest> = forests.iter().map(|f| (f.class(), f)).collect();
    let mut ordered = Vec::new();
    for c in matrix.classes() {
        ordered.push(
            *by_class
                .get(&c)
                .ok_or_else(|| Error::input(format!("no forest for class {c}")))?,
        );
    }
    let covered: usize = forests.iter().map(|f| f.num_samples()).sum();
    if covered != matrix.len() || ordered.len() != forests.len() {
        return Err(Error::input(format!(
            "forests cover {covered} samples, feature matrix has {}",
            matrix.len()
        )));
    }
    let mut env = environment_from_forests(env_id, &ordered, env, excluded)?;

    let mut reordered = vec![0.0; matrix.len()];
    for (id, w) in env.weights.ids.iter().zip(&env.weights.weights) {
        let i = matrix
            .index_of(id)
            .ok_or_else(|| Error::UnknownSample(id.clone()))?;
        let class = ordered
            .iter()
            .find(|f| f.local_index(id).is_some())
            .map(|f| f.class());
        if class != Some(labels[i]) {
            return Err(Error::input(format!("sample `{id}` is in the forest of another class")));
        }
        reordered[i] = *w;
    }
    env.weights.ids = matrix.ids().to_vec();
    env.weights.weights = reordered;
    Ok(env)
}

/// Draws i.i.d. sample indices with replacement from fixed weights.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(weights: &[f64], seed: u64) -> Result<Self> {
        let dist = WeightedIndex::new(weights)
            .map_err(|e| Error::input(format!("cannot sample from weights: {e}")))?;
        Ok(Self {
            dist,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn draw(&mut self, batch_size: usize) -> Vec<usize> {
        (0..batch_size)
            .map(|_| self.dist.sample(&mut self.rng))
            .collect()
    }
}

/// `batch_size` sample ids drawn from `env` with replacement.
pub fn draw_batch(env: &Environment, batch_size: usize, seed: u64) -> Result<Vec<String>> {
    if batch_size == 0 {
        return Err(Error::param("batch_size", "must be >= 1"));
    }
    let mut sampler = BatchSampler::new(&env.weights.weights, seed)?;
    Ok(sampler
        .draw(batch_size)
        .into_iter()
        .map(|i| env.weights.ids[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::worked_example_forest;
    use crate::forest::{CoarseNode, ForestParams};

    fn chain(class: usize, ids: &[&str]) -> CLForest {
        let k = ids.len();
        let nodes = (0..k)
            .map(|i| CoarseNode {
                id: i,
                prototype: i,
                members: vec![i],
                leader: i.checked_sub(1),
                children: if i + 1 < k { vec![i + 1] } else { vec![] },
                depth: i,
            })
            .collect();
        CLForest::from_parts(
            class,
            ForestParams {
                d_rd: 1.0,
                d_rn: 1.0,
                leader: Default::default(),
                metric: Default::default(),
            },
            ids.iter().map(|s| s.to_string()).collect(),
            nodes,
        )
        .unwrap()
    }

    #[test]
    fn resample_rules() {
        let p = resample_probs(&[7, 2, 5], 0.0).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert_eq!(resample_probs(&[3, 1], 1.0).unwrap(), vec![0.75, 0.25]);
        let p = resample_probs(&[4, 1], 0.5).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(resample_probs(&[], 0.5).is_err());
        assert!(resample_probs(&[1, 0], 0.5).is_err());
    }

    #[test]
    fn worked_example_paths() {
        let f = worked_example_forest();
        let ps = generate_paths(&f);
        assert_eq!(ps.paths.len(), 3);
        let lens: Vec<usize> = ps.paths.iter().map(Vec::len).collect();
        assert_eq!(lens, vec![5, 4, 5]);
        assert_eq!(ps.repetition[0], 3);
        assert_eq!(ps.repetition[5], 2);
    }

    #[test]
    fn worked_example_raw_weights() {
        let f = worked_example_forest();
        let w = attribute_weights_detailed(&f, 0.0, &[]).unwrap();
        assert!((w.raw[0] - 13.0 / 180.0).abs() < 1e-12);
        assert!((w.node_weights[5] - 3.0 / 40.0).abs() < 1e-12);
        assert!((w.raw[5] - 3.0 / 80.0).abs() < 1e-12);
        assert!((w.raw[6] - 3.0 / 80.0).abs() < 1e-12);
        assert!((w.normalized.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_path_is_uniform() {
        let f = chain(0, &["a", "b", "c", "d"]);
        let w = attribute_weights(&f, 0.0).unwrap();
        assert!(w.weights.iter().all(|v| (v - 0.25).abs() < 1e-12));
        let ps = generate_paths(&chain(0, &["x"]));
        assert_eq!(ps.paths, vec![vec![0]]);
        assert_eq!(ps.repetition, vec![1]);
    }

    #[test]
    fn environment_class_masses() {
        let a = chain(0, &["a0", "a1", "a2", "a3"]);
        let b = chain(1, &["b0"]);
        let none = HashSet::new();
        let env = environment_from_forests(0, &[&a, &b], EnvParams::BALANCED, &none).unwrap();
        assert!((env.class_mass[&0] - 0.5).abs() < 1e-12);
        assert!((env.weights.weights[4] - 0.5).abs() < 1e-12);

        let env = environment_from_forests(1, &[&a, &b], EnvParams::new(1.0, 0.0).unwrap(), &none).unwrap();
        assert!(env.weights.weights.iter().all(|w| (w - 0.2).abs() < 1e-12));
    }

    #[test]
    fn exclusion_zeroes_and_renormalizes() {
        let a = chain(0, &["a0", "a1", "a2", "a3"]);
        let b = chain(1, &["b0", "b1"]);
        let excluded: HashSet<String> = ["a3".to_string(), "b0".to_string()].into();
        let env = environment_from_forests(0, &[&a, &b], EnvParams::IID, &excluded).unwrap();
        let w = &env.weights.weights;
        assert_eq!(w[3], 0.0);
        assert_eq!(w[4], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // q_cls = 1 over active sizes [3, 1]
        assert!((env.class_mass[&0] - 0.75).abs() < 1e-12);

        let all: HashSet<String> = ["b0".to_string(), "b1".to_string()].into();
        assert!(matches!(
            environment_from_forests(0, &[&a, &b], EnvParams::IID, &all),
            Err(Error::EmptyClass(1))
        ));
        let unknown: HashSet<String> = ["zz".to_string()].into();
        assert!(environment_from_forests(0, &[&a, &b], EnvParams::IID, &unknown).is_err());
    }

    #[test]
    fn batches_are_deterministic() {
        let a = chain(0, &["a0", "a1", "a2"]);
        let env = environment_from_forests(0, &[&a], EnvParams::BALANCED, &HashSet::new()).unwrap();
        assert_eq!(draw_batch(&env, 50, 9).unwrap(), draw_batch(&env, 50, 9).unwrap());
        assert!(draw_batch(&env, 0, 9).is_err());

        let excluded: HashSet<String> = ["a0".to_string(), "a2".to_string()].into();
        let env = environment_from_forests(0, &[&a], EnvParams::BALANCED, &excluded).unwrap();
        assert!(draw_batch(&env, 20, 1).unwrap().iter().all(|id| id == "a1"));
    }

    #[test]
    fn weight_csv_round_trip() {
        let a = chain(0, &["a0", "a1", "a2"]);
        let w = attribute_weights(&a, 0.0).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let (ids, weights) = read_weight_csv(buf.as_slice()).unwrap();
        assert_eq!(ids, w.ids);
        assert_eq!(weights, w.weights);
    }
}
