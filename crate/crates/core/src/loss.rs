//! Multi-center losses.
//!
//! Each tree of a class forest contributes one center, initialised from the
//! feature vector of the tree root's prototype. The multi-center loss adds
//! `alpha * ||f_i - C(x_i)||_2` (unsquared) to the classification loss, where
//! `C(x_i)` is the center of the tree holding sample `i`. The triplet variant
//! replaces the pull term with
//! `max(0, ||f_i - C_p|| - ||f_i - C_n|| + margin)`, `C_n` being the nearest
//! center of any other class.
//!
//! Kernels return batch sums and the gradient with respect to every feature
//! coefficient. At `||f - C|| < NORM_EPS` the gradient of the norm is taken
//! as zero; an inactive or exactly-zero hinge contributes no gradient.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::forest::CLForest;

/// Below this distance the norm gradient is defined as zero.
pub const NORM_EPS: f64 = 1e-12;

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Center {
    /// Node id of the tree root in the class forest.
    pub tree_root_id: usize,
    pub vector: Vec<f64>,
}

/// Per-class centers, one per forest tree.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CenterSet {
    pub classes: BTreeMap<usize, Vec<Center>>,
}

/// Identifies one center in a [`CenterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CenterRef {
    pub class: usize,
    pub index: usize,
}

impl CenterSet {
    pub fn get(&self, r: CenterRef) -> Option<&Center> {
        self.classes.get(&r.class).and_then(|c| c.get(r.index))
    }

    pub fn count(&self, class: usize) -> usize {
        self.classes.get(&class).map_or(0, Vec::len)
    }

    pub fn dim(&self) -> Option<usize> {
        self.classes.values().flatten().next().map(|c| c.vector.len())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// One center per tree: the features of the root prototype sample.
pub fn extract_centers(forests: &[CLForest], x: &FeatureMatrix) -> Result<CenterSet> {
    let mut classes = BTreeMap::new();
    for f in forests {
        let mut centers = Vec::with_capacity(f.num_trees());
        for &root in f.roots() {
            let id = &f.samples()[f.node(root).prototype];
            let row = x
                .index_of(id)
                .ok_or_else(|| Error::UnknownSample(id.clone()))?;
            centers.push(Center {
                tree_root_id: root,
                vector: x.row(row).to_vec(),
            });
        }
        if classes.insert(f.class(), centers).is_some() {
            return Err(Error::input(format!("two forests for class {}", f.class())));
        }
    }
    Ok(CenterSet { classes })
}

/// Sample id -> center of the tree containing it.
#[derive(Debug, Clone)]
pub struct CenterIndex {
    by_id: HashMap<String, CenterRef>,
}

impl CenterIndex {
    pub fn new(forests: &[CLForest], centers: &CenterSet) -> Result<Self> {
        let mut by_id = HashMap::new();
        for f in forests {
            let class_centers = centers
                .classes
                .get(&f.class())
                .ok_or_else(|| Error::input(format!("no centers for class {}", f.class())))?;
            let node_roots = f.node_roots();
            for (local, id) in f.samples().iter().enumerate() {
                let root = node_roots[f.node_of(local)];
                let index = class_centers
                    .iter()
                    .position(|c| c.tree_root_id == root)
                    .ok_or_else(|| {
                        Error::input(format!("class {}: no center for tree {root}", f.class()))
                    })?;
                by_id.insert(
                    id.clone(),
                    CenterRef {
                        class: f.class(),
                        index,
                    },
                );
            }
        }
        Ok(Self { by_id })
    }

    pub fn get(&self, id: &str) -> Result<CenterRef> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownSample(id.to_string()))
    }
}

/// The center of the tree containing sample `id`.
pub fn assign_center(id: &str, forests: &[CLForest], centers: &CenterSet) -> Result<CenterRef> {
    for f in forests {
        if let Some(local) = f.local_index(id) {
            let root = f.root_of(f.node_of(local));
            let index = centers
                .classes
                .get(&f.class())
                .and_then(|cs| cs.iter().position(|c| c.tree_root_id == root))
                .ok_or_else(|| Error::input(format!("class {}: no center for tree {root}", f.class())))?;
            return Ok(CenterRef {
                class: f.class(),
                index,
            });
        }
    }
    Err(Error::UnknownSample(id.to_string()))
}

/// A classification loss evaluated on one feature vector.
pub trait ClassLoss {
    /// Loss value and its gradient with respect to `feature`.
    fn loss_and_grad(&self, feature: &[f64], label: usize) -> (f64, Vec<f64>);
}

/// Softmax cross-entropy on a logit vector; returns the loss and dL/dlogits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls_term: f64,
    pub ifl_term: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    /// d total / d features, row-major like the batch.
    pub grad: Vec<f64>,
}

/// Features, labels and assigned centers of a batch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    /// Row-major, `labels.len()` rows of width `dim`.
    pub features: &'a [f64],
    pub dim: usize,
    pub labels: &'a [usize],
    pub centers: &'a [CenterRef],
}

impl<'a> Batch<'a> {
    fn validate(&self, centers: &CenterSet) -> Result<()> {
        let n = self.labels.len();
        if self.centers.len() != n {
            return Err(Error::input("batch needs one center per sample"));
        }
        if self.features.len() != n * self.dim {
            return Err(Error::Dimension {
                expected: n * self.dim,
                got: self.features.len(),
            });
        }
        for (&label, &r) in self.labels.iter().zip(self.centers) {
            let c = centers
                .get(r)
                .ok_or_else(|| Error::input(format!("unknown center {r:?}")))?;
            if r.class != label {
                return Err(Error::input(format!(
                    "sample of class {label} assigned a center of class {}",
                    r.class
                )));
            }
            if c.vector.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    got: c.vector.len(),
                });
            }
        }
        Ok(())
    }

    fn row(&self, i: usize) -> &'a [f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(Error::param("alpha", format!("must be finite and >= 0, got {alpha}")))
    }
}

/// `f - c` and its euclidean norm.
fn offset(f: &[f64], c: &[f64]) -> (Vec<f64>, f64) {
    let diff: Vec<f64> = f.iter().zip(c).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    (diff, norm)
}

/// Adds `scale * diff / norm` to `out`, or nothing below [`NORM_EPS`].
fn add_unit(out: &mut [f64], diff: &[f64], norm: f64, scale: f64) {
    if norm < NORM_EPS {
        return;
    }
    for (o, d) in out.iter_mut().zip(diff) {
        *o += scale * d / norm;
    }
}

fn add_cls(batch: &Batch, cls: &dyn ClassLoss, grad: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for (i, &label) in batch.labels.iter().enumerate() {
        let (l, g) = cls.loss_and_grad(batch.row(i), label);
        total += l;
        for (o, v) in grad[i * batch.dim..(i + 1) * batch.dim].iter_mut().zip(g) {
            *o += v;
        }
    }
    total
}

/// Multi-center loss: `sum_i L_cls(f_i) + alpha * ||f_i - C(x_i)||_2`.
pub fn mcl(batch: &Batch, centers: &CenterSet, cls: &dyn ClassLoss, alpha: f64) -> Result<LossOutput> {
    check_alpha(alpha)?;
    batch.validate(centers)?;
    let mut grad = vec![0.0; batch.features.len()];
    let cls_term = add_cls(batch, cls, &mut grad);
    let mut ifl_term = 0.0;
    for (i, &r) in batch.centers.iter().enumerate() {
        let c = &centers.get(r).expect("validated").vector;
        let (diff, norm) = offset(batch.row(i), c);
        ifl_term += norm;
        add_unit(&mut grad[i * batch.dim..(i + 1) * batch.dim], &diff, norm, alpha);
    }
    Ok(LossOutput {
        breakdown: LossBreakdown {
            total: cls_term + alpha * ifl_term,
            cls_term,
            ifl_term,
            alpha,
        },
        grad,
    })
}

/// Nearest center of a class other than `label`.
fn nearest_negative<'c>(centers: &'c CenterSet, label: usize, f: &[f64]) -> Option<&'c [f64]> {
    centers
        .classes
        .iter()
        .filter(|(&c, _)| c != label)
        .flat_map(|(_, cs)| cs.iter())
        .map(|c| (offset(f, &c.vector).1, c.vector.as_slice()))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, v)| v)
}

/// Multi-center triplet loss:
/// `sum_i L_cls(f_i) + alpha * max(0, ||f_i - C_p|| - ||f_i - C_n|| + margin)`.
pub fn mctl(
    batch: &Batch,
    centers: &CenterSet,
    cls: &dyn ClassLoss,
    alpha: f64,
    margin: f64,
) -> Result<LossOutput> {
    check_alpha(alpha)?;
    batch.validate(centers)?;
    if centers.classes.values().filter(|cs| !cs.is_empty()).count() < 2 {
        return Err(Error::input("triplet loss needs centers from at least two classes"));
    }
    let mut grad = vec![0.0; batch.features.len()];
    let cls_term = add_cls(batch, cls, &mut grad);
    let mut ifl_term = 0.0;
    for (i, (&r, &label)) in batch.centers.iter().zip(batch.labels).enumerate() {
        let f = batch.row(i);
        let pos = &centers.get(r).expect("validated").vector;
        let neg = nearest_negative(centers, label, f)
            .ok_or_else(|| Error::input(format!("no negative center for class {label}")))?;
        let (dp, np) = offset(f, pos);
        let (dn, nn) = offset(f, neg);
        let hinge = np - nn + margin;
        if hinge > 0.0 {
            ifl_term += hinge;
            let g = &mut grad[i * batch.dim..(i + 1) * batch.dim];
            add_unit(g, &dp, np, alpha);
            add_unit(g, &dn, nn, -alpha);
        }
    }
    Ok(LossOutput {
        breakdown: LossBreakdown {
            total: cls_term + alpha * ifl_term,
            cls_term,
            ifl_term,
            alpha,
        },
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `0.5 * ||f - t_label||^2` with targets `t_k = k * 1`.
    struct Quadratic;

    impl ClassLoss for Quadratic {
        fn loss_and_grad(&self, f: &[f64], label: usize) -> (f64, Vec<f64>) {
            let t = label as f64;
            let g: Vec<f64> = f.iter().map(|v| v - t).collect();
            (0.5 * g.iter().map(|v| v * v).sum::<f64>(), g)
        }
    }

    fn two_class_centers() -> CenterSet {
        CenterSet {
            classes: BTreeMap::from([
                (0, vec![Center { tree_root_id: 0, vector: vec![0.0, 0.0] }]),
                (
                    1,
                    vec![
                        Center { tree_root_id: 0, vector: vec![4.0, 0.0] },
                        Center { tree_root_id: 3, vector: vec![0.0, 4.0] },
                    ],
                ),
            ]),
        }
    }

    #[test]
    fn zero_distance_gives_zero_ifl() {
        let centers = two_class_centers();
        let features = [0.0, 0.0, 4.0, 0.0];
        let refs = [CenterRef { class: 0, index: 0 }, CenterRef { class: 1, index: 0 }];
        let batch = Batch { features: &features, dim: 2, labels: &[0, 1], centers: &refs };
        let out = mcl(&batch, &centers, &Quadratic, 0.5).unwrap();
        assert_eq!(out.breakdown.ifl_term, 0.0);
        assert_eq!(out.breakdown.total, out.breakdown.cls_term);
    }

    #[test]
    fn alpha_zero_is_classification_only() {
        let centers = two_class_centers();
        let features = [1.0, 2.0];
        let refs = [CenterRef { class: 0, index: 0 }];
        let batch = Batch { features: &features, dim: 2, labels: &[0], centers: &refs };
        let out = mcl(&batch, &centers, &Quadratic, 0.0).unwrap();
        assert_eq!(out.breakdown.total, out.breakdown.cls_term);
        assert!((out.breakdown.ifl_term - 5f64.sqrt()).abs() < 1e-15);
        assert_eq!(out.grad, vec![1.0, 2.0]);
        assert!(mcl(&batch, &centers, &Quadratic, -1.0).is_err());
    }

    #[test]
    fn inactive_and_boundary_hinges() {
        let centers = two_class_centers();
        let refs = [CenterRef { class: 0, index: 0 }];
        // closer to own center
        let f = [1.0, 0.0];
        let batch = Batch { features: &f, dim: 2, labels: &[0], centers: &refs };
        let out = mctl(&batch, &centers, &Quadratic, 1.0, 0.0).unwrap();
        assert_eq!(out.breakdown.ifl_term, 0.0);
        assert_eq!(out.grad, Quadratic.loss_and_grad(&f, 0).1);
        // equidistant from C_p = (0,0) and C_n = (4,0)
        let f = [2.0, 0.0];
        let batch = Batch { features: &f, dim: 2, labels: &[0], centers: &refs };
        let out = mctl(&batch, &centers, &Quadratic, 1.0, 0.0).unwrap();
        assert_eq!(out.breakdown.ifl_term, 0.0);
        assert_eq!(out.grad, Quadratic.loss_and_grad(&f, 0).1);
    }

    #[test]
    fn negative_center_is_nearest_other_class() {
        let centers = two_class_centers();
        let refs = [CenterRef { class: 0, index: 0 }];
        // nearest negative is (0,4): hinge = 3 - 1 = 2
        let f = [0.0, 3.0];
        let batch = Batch { features: &f, dim: 2, labels: &[0], centers: &refs };
        let out = mctl(&batch, &centers, &Quadratic, 1.0, 0.0).unwrap();
        assert!((out.breakdown.ifl_term - 2.0).abs() < 1e-15);
    }

    #[test]
    fn triplet_needs_two_classes_and_dims_must_match() {
        let mut centers = two_class_centers();
        centers.classes.remove(&1);
        let refs = [CenterRef { class: 0, index: 0 }];
        let f = [1.0, 1.0];
        let batch = Batch { features: &f, dim: 2, labels: &[0], centers: &refs };
        assert!(mctl(&batch, &centers, &Quadratic, 1.0, 0.0).is_err());
        let f3 = [1.0, 1.0, 1.0];
        let bad = Batch { features: &f3, dim: 3, labels: &[0], centers: &refs };
        assert!(matches!(mcl(&bad, &centers, &Quadratic, 1.0), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cross_entropy_is_stable() {
        let (l, g) = softmax_cross_entropy(&[1000.0, 0.0], 0);
        assert!(l.abs() < 1e-12);
        assert!(g.iter().all(|v| v.is_finite()));
        let (l, _) = softmax_cross_entropy(&[0.0, 0.0], 1);
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }
}
