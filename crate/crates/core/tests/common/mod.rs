//! Brute-force oracles and generators shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cogforest::loss::{Center, CenterRef, CenterSet, LossOutput};
use cogforest::train::synth::{generate, SynthConfig};
use cogforest::train::LinearClassifier;
use cogforest::{
    build_clf, mcl, mctl, run_cognisance, run_cognisance_plus, toy_models, Batch, CLForest, DensityVector,
    EnvParams, FeatureMatrix, LeaderRadius, Metric, Radii, TrainConfig,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random single-class rows; `quantize` snaps coordinates to a coarse grid
/// so that distance and density ties occur.
pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize, quantize: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let v: f64 = rng.random_range(0.0..10.0);
                    if quantize {
                        v.round()
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect()
}

pub fn class_matrix(rows: Vec<Vec<f64>>, class: usize) -> FeatureMatrix {
    let n = rows.len();
    FeatureMatrix::new(FeatureMatrix::sequential_ids(n), rows, Some(vec![class; n])).unwrap()
}

pub struct Instance {
    pub rows: Vec<Vec<f64>>,
    pub matrix: FeatureMatrix,
    pub radii: Radii,
}

pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize) -> Instance {
    let n = rng.random_range(1..=max_n);
    let dim = rng.random_range(1..=4);
    let quantize = rng.random_bool(0.3);
    let rows = random_rows(rng, n, dim, quantize);
    let d_rd = rng.random_range(0.3..6.0);
    let d_rn = rng.random_range(0.1..3.0);
    let leader = if rng.random_bool(0.25) {
        LeaderRadius::Node
    } else {
        LeaderRadius::Density
    };
    Instance {
        matrix: class_matrix(rows.clone(), 0),
        rows,
        radii: Radii::new(d_rd, d_rn).unwrap().with_leader(leader),
    }
}

pub fn random_forest(rng: &mut ChaCha8Rng, max_n: usize) -> (Instance, CLForest, DensityVector) {
    let inst = random_instance(rng, max_n);
    let built = build_clf(&inst.matrix, inst.radii, Metric::Euclidean).unwrap();
    (inst, built.forest, built.density)
}

pub fn oracle_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let t = a[k] - b[k];
        s += t * t;
    }
    s.sqrt()
}

pub fn oracle_distances(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i][j] = oracle_distance(&rows[i], &rows[j]);
            }
        }
    }
    d
}

pub fn oracle_density(d: &[Vec<f64>], d_rd: f64) -> Vec<f64> {
    let n = d.len();
    let mut rho = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && d[i][j] <= d_rd {
                let r = d[i][j] / d_rd;
                rho[i] += (-(r * r)).exp();
            }
        }
    }
    rho
}

/// Full sort of every row instead of a partial selection.
pub fn oracle_base_distance(d: &[Vec<f64>]) -> f64 {
    let n = d.len();
    let k = 3.min(n - 1);
    let mut total = 0.0;
    for (i, row) in d.iter().enumerate() {
        let mut others: Vec<f64> = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
        others.sort_by(f64::total_cmp);
        total += others[..k].iter().sum::<f64>() / k as f64;
    }
    total / n as f64
}

/// Density-descending order with ascending-index ties, by insertion sort.
pub fn oracle_order(rho: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = Vec::new();
    for i in 0..rho.len() {
        let mut pos = order.len();
        while pos > 0 && rho[order[pos - 1]] < rho[i] {
            pos -= 1;
        }
        order.insert(pos, i);
    }
    order
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleNode {
    pub prototype: usize,
    pub members: Vec<usize>,
    pub leader: Option<usize>,
    pub depth: usize,
}

/// Forest construction written directly from the pseudocode.
pub fn oracle_clf(rows: &[Vec<f64>], d_rd: f64, d_rn: f64, leader_radius: f64) -> Vec<OracleNode> {
    let d = oracle_distances(rows);
    let rho = oracle_density(&d, d_rd);
    let order = oracle_order(&rho);
    let mut visited: HashSet<usize> = HashSet::new();
    let mut nodes: Vec<OracleNode> = Vec::new();
    for &s in &order {
        if visited.contains(&s) {
            continue;
        }
        let mut members = vec![s];
        visited.insert(s);
        for j in 0..rows.len() {
            if !visited.contains(&j) && d[s][j] <= d_rn {
                members.push(j);
                visited.insert(j);
            }
        }
        members.sort_unstable();
        let mut leader = None;
        let mut best = f64::INFINITY;
        for (k, node) in nodes.iter().enumerate() {
            let dist = d[s][node.prototype];
            if dist <= leader_radius && dist < best {
                best = dist;
                leader = Some(k);
            }
        }
        let depth = leader.map_or(0, |l: usize| nodes[l].depth + 1);
        nodes.push(OracleNode {
            prototype: s,
            members,
            leader,
            depth,
        });
    }
    nodes
}

pub fn forest_as_oracle(f: &CLForest) -> Vec<OracleNode> {
    f.nodes()
        .iter()
        .map(|n| OracleNode {
            prototype: n.prototype,
            members: n.members.clone(),
            leader: n.leader,
            depth: n.depth,
        })
        .collect()
}

/// Structural invariants of a built forest; returns the first violation.
pub fn check_forest_invariants(f: &CLForest, rho: &DensityVector, rows: &[Vec<f64>], radii: Radii) -> Result<(), String> {
    let n = rows.len();
    let rank = rho.ranks();
    let mut owner = vec![None; n];
    for node in f.nodes() {
        for &m in &node.members {
            if owner[m].is_some() {
                return Err(format!("sample {m} in two nodes"));
            }
            owner[m] = Some(node.id);
            if rank[m] < rank[node.prototype] {
                return Err(format!("node {} member {m} denser than prototype", node.id));
            }
            if oracle_distance(&rows[m], &rows[node.prototype]) > radii.d_rn {
                return Err(format!("node {} member {m} outside d_rn", node.id));
            }
        }
        if !node.members.contains(&node.prototype) {
            return Err(format!("node {} lacks its prototype", node.id));
        }
        if let Some(l) = node.leader {
            let lp = f.node(l).prototype;
            if rank[lp] >= rank[node.prototype] {
                return Err(format!("node {} leader not denser", node.id));
            }
            if oracle_distance(&rows[lp], &rows[node.prototype]) > radii.leader_search_radius() {
                return Err(format!("node {} leader beyond search radius", node.id));
            }
            if f.node(l).depth + 1 != node.depth || !f.node(l).children.contains(&node.id) {
                return Err(format!("node {} depth or child link broken", node.id));
            }
        } else if node.depth != 0 || !f.roots().contains(&node.id) {
            return Err(format!("leaderless node {} is not a depth-0 root", node.id));
        }
        // acyclic: walking leaders reaches a root within node-count steps
        let mut cur = node.id;
        let mut steps = 0;
        while let Some(l) = f.node(cur).leader {
            cur = l;
            steps += 1;
            if steps > f.nodes().len() {
                return Err(format!("leader cycle through node {}", node.id));
            }
        }
    }
    if owner.iter().any(Option::is_none) {
        return Err("some sample is in no node".into());
    }
    let total: usize = f.roots().iter().map(|&r| f.tree_size(r)).sum();
    if total != n {
        return Err(format!("trees hold {total} samples, expected {n}"));
    }
    Ok(())
}

/// 100 inliers in a ball of radius 0.4 plus five far, mutually distant
/// singletons (ids `out0`..`out4`).
pub fn planted_outliers() -> (FeatureMatrix, Vec<String>) {
    let mut r = rng(99);
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    while rows.len() < 100 {
        let p = [r.random_range(-0.4..0.4), r.random_range(-0.4..0.4)];
        if p[0] * p[0] + p[1] * p[1] <= 0.16 {
            ids.push(format!("in{}", rows.len()));
            rows.push(p.to_vec());
        }
    }
    let outliers: Vec<String> = (0..5).map(|k| format!("out{k}")).collect();
    for (k, id) in outliers.iter().enumerate() {
        let angle = k as f64 * std::f64::consts::TAU / 5.0;
        ids.push(id.clone());
        rows.push(vec![20.0 * angle.cos(), 20.0 * angle.sin()]);
    }
    let n = rows.len();
    (FeatureMatrix::new(ids, rows, Some(vec![0; n])).unwrap(), outliers)
}

/// Radii for the planted-outlier fixture: one node for the ball.
pub fn planted_radii() -> Radii {
    Radii::new(1.0, 1.0).unwrap()
}

pub struct RandomBatch {
    pub features: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub refs: Vec<CenterRef>,
    pub centers: CenterSet,
    pub classifier: LinearClassifier,
    pub alpha: f64,
    pub margin: f64,
}

impl RandomBatch {
    pub fn batch(&self) -> Batch<'_> {
        Batch {
            features: &self.features,
            dim: self.dim,
            labels: &self.labels,
            centers: &self.refs,
        }
    }

    pub fn eval(&self, features: &[f64], triplet: bool) -> LossOutput {
        let batch = Batch {
            features,
            ..self.batch()
        };
        if triplet {
            mctl(&batch, &self.centers, &self.classifier, self.alpha, self.margin).unwrap()
        } else {
            mcl(&batch, &self.centers, &self.classifier, self.alpha).unwrap()
        }
    }

    /// Distance to the kinks of the norm and hinge terms.
    fn singularity_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for (i, (&label, &r)) in self.labels.iter().zip(&self.refs).enumerate() {
            let f = &self.features[i * self.dim..(i + 1) * self.dim];
            let dp = oracle_distance(f, &self.centers.get(r).unwrap().vector);
            let mut negs: Vec<f64> = self
                .centers
                .classes
                .iter()
                .filter(|(&c, _)| c != label)
                .flat_map(|(_, cs)| cs.iter().map(|c| oracle_distance(f, &c.vector)))
                .collect();
            negs.sort_by(f64::total_cmp);
            gap = gap.min(dp).min(negs[0]).min((dp - negs[0] + self.margin).abs());
            if negs.len() > 1 {
                gap = gap.min(negs[1] - negs[0]);
            }
        }
        gap
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng) -> RandomBatch {
    loop {
        let dim = rng.random_range(2..=6);
        let classes = rng.random_range(2..=4);
        let size = rng.random_range(1..=8);
        let mut centers = CenterSet::default();
        for c in 0..classes {
            let k = rng.random_range(1..=3);
            let list = (0..k)
                .map(|t| Center {
                    tree_root_id: t,
                    vector: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
                })
                .collect();
            centers.classes.insert(c, list);
        }
        let labels: Vec<usize> = (0..size).map(|_| rng.random_range(0..classes)).collect();
        let refs: Vec<CenterRef> = labels
            .iter()
            .map(|&c| CenterRef {
                class: c,
                index: rng.random_range(0..centers.count(c)),
            })
            .collect();
        let features = (0..size * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut classifier = LinearClassifier::new(dim, classes, rng.random()).unwrap();
        for w in &mut classifier.weights {
            *w *= 30.0;
        }
        let b = RandomBatch {
            features,
            dim,
            labels,
            refs,
            centers,
            classifier,
            alpha: rng.random_range(0.1..2.0),
            margin: rng.random_range(0.0..1.0),
        };
        if b.singularity_gap() > 1e-2 {
            return b;
        }
    }
}

/// Largest component-wise relative error between the analytic feature
/// gradient and central differences with step `h`. Components are compared
/// relative to `max(|analytic|, |numeric|, 1e-3)`.
pub fn max_gradient_error(b: &RandomBatch, triplet: bool, h: f64) -> f64 {
    let analytic = b.eval(&b.features, triplet).grad;
    let mut worst: f64 = 0.0;
    for k in 0..b.features.len() {
        let mut plus = b.features.clone();
        let mut minus = b.features.clone();
        plus[k] += h;
        minus[k] -= h;
        let numeric = (b.eval(&plus, triplet).breakdown.total - b.eval(&minus, triplet).breakdown.total) / (2.0 * h);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-3);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    worst
}

pub struct ToyComparison {
    pub first_mcl: f64,
    pub last_mcl: f64,
    pub two_env_accuracy: f64,
    pub iid_accuracy: f64,
}

/// The two-environment run and the single i.i.d.-environment baseline on
/// the default synthetic data.
pub fn toy_comparison(seed: u64, epochs: usize) -> ToyComparison {
    let data = generate(&SynthConfig {
        seed,
        ..Default::default()
    })
    .unwrap();
    let run = |envs: Vec<EnvParams>| {
        let cfg = TrainConfig {
            envs,
            seed,
            epochs,
            ..Default::default()
        };
        let (e, c) = toy_models(2, 2, 2, seed).unwrap();
        run_cognisance(&data.train, Some(&data.heldout), e, c, &cfg).unwrap().history
    };
    let two = run(EnvParams::default_pair());
    let iid = run(vec![EnvParams::IID]);
    let main: Vec<_> = two.main_records().collect();
    ToyComparison {
        first_mcl: main[0].total,
        last_mcl: main.last().unwrap().total,
        two_env_accuracy: main.last().unwrap().heldout_accuracy.unwrap(),
        iid_accuracy: iid.main_records().last().unwrap().heldout_accuracy.unwrap(),
    }
}

/// (recovered planted ids, planted count) after a noise-aware run with
/// default noise parameters on data with 10% planted noise.
pub fn toy_noise_recall(seed: u64) -> (usize, usize) {
    let data = generate(&SynthConfig {
        seed,
        noise_fraction: 0.1,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::plus()
    };
    let (e, c) = toy_models(2, 2, 2, seed).unwrap();
    let out = run_cognisance_plus(&data.train, Some(&data.heldout), e, c, &cfg).unwrap();
    let flagged = out.state.noise.flagged_ids();
    let planted = data.noise_ids();
    (planted.iter().filter(|id| flagged.contains(*id)).count(), planted.len())
}
