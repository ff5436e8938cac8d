//! Coarse-grained leading forests.
//!
//! Samples are visited in order of decreasing density. Each unvisited sample
//! becomes the prototype of a new coarse node that swallows every other
//! unvisited sample within `d_rn`. The node is then attached to a leader: the
//! nearest previously created node whose prototype lies within the leader
//! search radius (`d_rd` by default). Every earlier node precedes the current
//! prototype in the density ordering, so its prototype is denser under the
//! index tie-break. Nodes without a leader become tree roots.
//!
//! Node members and prototypes are indices into the forest's own sample list
//! (`samples`), which records the sample ids of the class in input order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::density::{compute_density, DensityVector};
use crate::distance::{base_distance, pairwise_distances, DistanceMatrix, Metric};
use crate::error::{Error, Result};
use crate::params::{ClfParams, LeaderRadius, Radii};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseNode {
    pub id: usize,
    /// Local index of the densest member.
    pub prototype: usize,
    /// Local member indices in ascending order (includes the prototype).
    pub members: Vec<usize>,
    pub leader: Option<usize>,
    pub children: Vec<usize>,
    /// Edges from the tree root.
    pub depth: usize,
}

/// Parameters a forest was built with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub d_rd: f64,
    pub d_rn: f64,
    #[serde(default)]
    pub leader: LeaderRadius,
    #[serde(default)]
    pub metric: Metric,
}

impl ForestParams {
    pub fn radii(&self) -> Result<Radii> {
        Radii::new(self.d_rd, self.d_rn).map(|r| r.with_leader(self.leader))
    }
}

/// A coarse-grained leading forest over the samples of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ForestDoc", into = "ForestDoc")]
pub struct CLForest {
    class: usize,
    params: ForestParams,
    samples: Vec<String>,
    nodes: Vec<CoarseNode>,
    roots: Vec<usize>,
    membership: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ForestDoc {
    class: usize,
    params: ForestParams,
    samples: Vec<String>,
    nodes: Vec<CoarseNode>,
    roots: Vec<usize>,
}

impl From<CLForest> for ForestDoc {
    fn from(f: CLForest) -> Self {
        ForestDoc {
            class: f.class,
            params: f.params,
            samples: f.samples,
            nodes: f.nodes,
            roots: f.roots,
        }
    }
}

impl TryFrom<ForestDoc> for CLForest {
    type Error = Error;

    fn try_from(doc: ForestDoc) -> Result<Self> {
        CLForest::from_parts(doc.class, doc.params, doc.samples, doc.nodes)
    }
}

impl CLForest {
    /// Assembles a forest from explicit nodes, checking structural consistency
    /// and recomputing the root list and membership map.
    ///
    /// `children` and `depth` must agree with the leader links; node ids must
    /// equal their position.
    pub fn from_parts(
        class: usize,
        params: ForestParams,
        samples: Vec<String>,
        nodes: Vec<CoarseNode>,
    ) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::input("forest has no samples"));
        }
        let mut membership = vec![usize::MAX; n];
        for (pos, node) in nodes.iter().enumerate() {
            if node.id != pos {
                return Err(Error::input(format!("node at position {pos} has id {}", node.id)));
            }
            if !node.members.contains(&node.prototype) {
                return Err(Error::input(format!("node {pos}: prototype is not a member")));
            }
            if !node.members.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::input(format!("node {pos}: members must be strictly ascending")));
            }
            for &m in &node.members {
                if m >= n {
                    return Err(Error::input(format!("node {pos}: member {m} out of range")));
                }
                if membership[m] != usize::MAX {
                    return Err(Error::input(format!("sample {m} belongs to two nodes")));
                }
                membership[m] = pos;
            }
        }
        if let Some(m) = membership.iter().position(|&v| v == usize::MAX) {
            return Err(Error::input(format!("sample `{}` belongs to no node", samples[m])));
        }
        let mut roots = Vec::new();
        for node in &nodes {
            match node.leader {
                None => {
                    if node.depth != 0 {
                        return Err(Error::input(format!("root {} has depth {}", node.id, node.depth)));
                    }
                    roots.push(node.id);
                }
                Some(l) => {
                    let leader = nodes
                        .get(l)
                        .ok_or_else(|| Error::input(format!("node {}: leader {l} missing", node.id)))?;
                    if leader.depth + 1 != node.depth {
                        return Err(Error::input(format!("node {}: depth inconsistent with leader", node.id)));
                    }
                    if !leader.children.contains(&node.id) {
                        return Err(Error::input(format!("node {l} does not list child {}", node.id)));
                    }
                }
            }
            for &c in &node.children {
                if nodes.get(c).and_then(|child| child.leader) != Some(node.id) {
                    return Err(Error::input(format!("node {}: child {c} does not point back", node.id)));
                }
            }
        }
        // depth = leader depth + 1 on every edge makes leader chains strictly
        // decreasing in depth, hence acyclic and ending at a root.
        if roots.is_empty() {
            return Err(Error::input("forest has no root"));
        }
        Ok(Self {
            class,
            params,
            samples,
            nodes,
            roots,
            membership,
        })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    /// Sample ids, indexed by local sample index.
    pub fn samples(&self) -> &[String] {
        &self.samples
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn nodes(&self) -> &[CoarseNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &CoarseNode {
        &self.nodes[id]
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn num_trees(&self) -> usize {
        self.roots.len()
    }

    /// Node id containing local sample `i`.
    pub fn node_of(&self, i: usize) -> usize {
        self.membership[i]
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    /// Root node id of the tree containing `node`.
    pub fn root_of(&self, mut node: usize) -> usize {
        while let Some(l) = self.nodes[node].leader {
            node = l;
        }
        node
    }

    /// Root node id of the tree holding each node.
    pub fn node_roots(&self) -> Vec<usize> {
        let mut out = vec![0; self.nodes.len()];
        // leaders always have smaller depth; process by depth
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by_key(|&i| self.nodes[i].depth);
        for i in order {
            out[i] = match self.nodes[i].leader {
                None => i,
                Some(l) => out[l],
            };
        }
        out
    }

    /// Node ids of the tree rooted at `root`, in pre-order.
    pub fn tree_nodes(&self, root: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n].children.iter().rev());
        }
        out
    }

    /// Number of samples in the tree rooted at `root`.
    pub fn tree_size(&self, root: usize) -> usize {
        self.tree_nodes(root)
            .iter()
            .map(|&n| self.nodes[n].members.len())
            .sum()
    }

    pub fn tree_max_depth(&self, root: usize) -> usize {
        self.tree_nodes(root)
            .iter()
            .map(|&n| self.nodes[n].depth)
            .max()
            .unwrap_or(0)
    }

    pub fn local_index(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s == id)
    }

    pub fn stats(&self) -> ForestStats {
        forest_stats(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Creates the coarse nodes from precomputed distances and densities.
pub fn assemble_forest(
    class: usize,
    samples: Vec<String>,
    d: &DistanceMatrix,
    density: &DensityVector,
    radii: Radii,
) -> Result<CLForest> {
    let n = d.len();
    if n == 0 || samples.len() != n || density.len() != n {
        return Err(Error::input("forest inputs disagree in length or are empty"));
    }
    let leader_radius = radii.leader_search_radius();
    let mut visited = vec![false; n];
    let mut nodes: Vec<CoarseNode> = Vec::new();
    for &i in &density.ordering {
        if visited[i] {
            continue;
        }
        let members: Vec<usize> = (0..n)
            .filter(|&j| j == i || (!visited[j] && d.get(i, j) <= radii.d_rn))
            .collect();
        for &m in &members {
            visited[m] = true;
        }

        let mut leader: Option<(usize, f64)> = None;
        for node in &nodes {
            let dist = d.get(i, node.prototype);
            if dist <= leader_radius && leader.is_none_or(|(_, best)| dist < best) {
                leader = Some((node.id, dist));
            }
        }

        let id = nodes.len();
        let depth = match leader {
            Some((l, _)) => {
                nodes[l].children.push(id);
                nodes[l].depth + 1
            }
            None => 0,
        };
        nodes.push(CoarseNode {
            id,
            prototype: i,
            members,
            leader: leader.map(|(l, _)| l),
            children: Vec::new(),
            depth,
        });
    }
    let params = ForestParams {
        d_rd: radii.d_rd,
        d_rn: radii.d_rn,
        leader: radii.leader,
        metric: d.metric(),
    };
    CLForest::from_parts(class, params, samples, nodes)
}

/// A forest together with the densities it was built from.
#[derive(Debug, Clone)]
pub struct BuiltForest {
    pub forest: CLForest,
    pub density: DensityVector,
}

/// Builds the forest of one class from its feature rows.
///
/// Fails when `x` carries labels from more than one class.
pub fn build_clf(x: &FeatureMatrix, radii: Radii, metric: Metric) -> Result<BuiltForest> {
    let class = match x.classes().as_slice() {
        [] => 0,
        [c] => *c,
        many => {
            return Err(Error::input(format!(
                "forest input mixes {} classes; build one forest per class",
                many.len()
            )))
        }
    };
    let d = pairwise_distances(x, metric);
    let density = compute_density(&d, radii.d_rd);
    let forest = assemble_forest(class, x.ids().to_vec(), &d, &density, radii)?;
    Ok(BuiltForest { forest, density })
}

/// Resolves `params` against the whole matrix, then builds one forest per
/// class (ascending label order). Classes are built in parallel.
pub fn build_class_forests(
    x: &FeatureMatrix,
    params: &ClfParams,
    metric: Metric,
) -> Result<(Radii, Vec<BuiltForest>)> {
    x.require_labels()?;
    let radii = resolve_global(x, params, metric)?;
    let forests = x
        .classes()
        .par_iter()
        .map(|&c| build_clf(&x.subset(&x.class_indices(c))?, radii, metric))
        .collect::<Result<Vec<_>>>()?;
    Ok((radii, forests))
}

/// Resolves base-distance multiples over all samples of `x`.
pub fn resolve_global(x: &FeatureMatrix, params: &ClfParams, metric: Metric) -> Result<Radii> {
    params.validate()?;
    if params.needs_base_distance() {
        let base = base_distance(&pairwise_distances(x, metric))?;
        params.resolve_with_base(base)
    } else {
        params.resolve_with_base(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestStats {
    pub class: usize,
    pub samples: usize,
    pub trees: usize,
    pub nodes: usize,
    pub max_depth: usize,
    /// Root-to-leaf paths, i.e. leaf nodes.
    pub paths: usize,
    /// Coarse-node member count -> number of nodes.
    pub node_sizes: BTreeMap<usize, usize>,
    /// Tree sample count -> number of trees.
    pub tree_sizes: BTreeMap<usize, usize>,
}

pub fn forest_stats(f: &CLForest) -> ForestStats {
    let mut node_sizes = BTreeMap::new();
    for node in f.nodes() {
        *node_sizes.entry(node.members.len()).or_insert(0) += 1;
    }
    let mut tree_sizes = BTreeMap::new();
    for &r in f.roots() {
        *tree_sizes.entry(f.tree_size(r)).or_insert(0) += 1;
    }
    ForestStats {
        class: f.class(),
        samples: f.num_samples(),
        trees: f.num_trees(),
        nodes: f.nodes().len(),
        max_depth: f.nodes().iter().map(|n| n.depth).max().unwrap_or(0),
        paths: f.nodes().iter().filter(|n| n.children.is_empty()).count(),
        node_sizes,
        tree_sizes,
    }
}
