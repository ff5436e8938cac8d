//! Python bindings: forest construction, sampling weights, noise selection,
//! the loss kernels and a toy training demo.
//!
//! Arrays cross the boundary as nested lists and are copied once.

#![allow(clippy::too_many_arguments)]

use std::collections::{BTreeMap, HashMap, HashSet};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use cogforest::loss::{Center, CenterRef, CenterSet};
use cogforest::sampler::{attribute_weights_detailed, environment_from_forests, generate_paths};
use cogforest::train::synth::{generate, SynthConfig};
use cogforest::train::LinearClassifier;
use cogforest::{
    build_class_forests, compute_density, pairwise_distances, run_cognisance, run_cognisance_plus, toy_models,
    Batch, CLForest, ClfParams, EnvParams, FeatureMatrix, Metric, NoiseParams, TrainConfig,
};

fn to_py(e: cogforest::Error) -> PyErr {
    match e {
        cogforest::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(features: Vec<Vec<f64>>, labels: Option<Vec<usize>>, ids: Option<Vec<String>>) -> PyResult<FeatureMatrix> {
    let ids = ids.unwrap_or_else(|| FeatureMatrix::sequential_ids(features.len()));
    FeatureMatrix::new(ids, features, labels).map_err(to_py)
}

/// Read-only handle to one class forest.
#[pyclass(name = "Forest", frozen)]
struct PyForest {
    inner: CLForest,
}

#[pymethods]
impl PyForest {
    #[getter]
    fn label(&self) -> usize {
        self.inner.class()
    }

    #[getter]
    fn samples(&self) -> Vec<String> {
        self.inner.samples().to_vec()
    }

    #[getter]
    fn num_trees(&self) -> usize {
        self.inner.num_trees()
    }

    /// Node id of every tree root.
    fn roots(&self) -> Vec<usize> {
        self.inner.roots().to_vec()
    }

    /// Node id of every sample, in sample order.
    fn membership(&self) -> Vec<usize> {
        self.inner.membership().to_vec()
    }

    /// Root-to-leaf node id sequences.
    fn paths(&self) -> Vec<Vec<usize>> {
        generate_paths(&self.inner).paths
    }

    /// `(prototype, members, leader, depth)` per node.
    fn nodes(&self) -> Vec<(usize, Vec<usize>, Option<usize>, usize)> {
        self.inner
            .nodes()
            .iter()
            .map(|n| (n.prototype, n.members.clone(), n.leader, n.depth))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CLForest::from_json(text).map_err(to_py)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Forest(label={}, samples={}, trees={}, nodes={})",
            self.inner.class(),
            self.inner.num_samples(),
            self.inner.num_trees(),
            self.inner.nodes().len()
        )
    }
}

/// One forest per class, in ascending label order.
#[pyfunction]
#[pyo3(signature = (features, labels, d_rd, d_rn, metric = "euclidean", base_multiples = false, ids = None))]
fn build_clf(
    py: Python<'_>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    d_rd: f64,
    d_rn: f64,
    metric: &str,
    base_multiples: bool,
    ids: Option<Vec<String>>,
) -> PyResult<Vec<PyForest>> {
    let x = matrix(features, Some(labels), ids)?;
    let metric: Metric = metric.parse().map_err(to_py)?;
    let params = if base_multiples {
        ClfParams::base_multiples(d_rd, d_rn)
    } else {
        ClfParams::absolute(d_rd, d_rn)
    };
    let (_, built) = py.detach(|| build_class_forests(&x, &params, metric)).map_err(to_py)?;
    Ok(built.into_iter().map(|b| PyForest { inner: b.forest }).collect())
}

/// Class-local weights of one forest as `(ids, weights)`.
#[pyfunction]
#[pyo3(signature = (forest, q_attr, raw = false))]
fn attribute_weights(forest: &PyForest, q_attr: f64, raw: bool) -> PyResult<(Vec<String>, Vec<f64>)> {
    EnvParams::new(1.0, q_attr).map_err(to_py)?;
    let w = attribute_weights_detailed(&forest.inner, q_attr, &[]).map_err(to_py)?;
    Ok((forest.inner.samples().to_vec(), if raw { w.raw } else { w.normalized }))
}

/// Environment weights ordered by `ids`, or by integer sample id when the
/// forests were built without explicit ids.
#[pyfunction]
#[pyo3(signature = (forests, q_cls, q_attr, excluded = None, ids = None))]
fn sampler_weights(
    forests: Vec<PyRef<'_, PyForest>>,
    q_cls: f64,
    q_attr: f64,
    excluded: Option<Vec<String>>,
    ids: Option<Vec<String>>,
) -> PyResult<Vec<f64>> {
    let refs: Vec<&CLForest> = forests.iter().map(|f| &f.inner).collect();
    let excluded: HashSet<String> = excluded.unwrap_or_default().into_iter().collect();
    let env = EnvParams::new(q_cls, q_attr).map_err(to_py)?;
    let e = environment_from_forests(0, &refs, env, &excluded).map_err(to_py)?;
    let by_id: HashMap<&str, f64> = e
        .weights
        .ids
        .iter()
        .map(String::as_str)
        .zip(e.weights.weights.iter().copied())
        .collect();
    let order = match ids {
        Some(ids) => ids,
        None => FeatureMatrix::sequential_ids(by_id.len()),
    };
    if order.len() != by_id.len() {
        return Err(PyValueError::new_err(format!(
            "{} ids given, forests hold {} samples",
            order.len(),
            by_id.len()
        )));
    }
    order
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| PyValueError::new_err(format!("unknown sample `{id}`")))
        })
        .collect()
}

/// Noise entries `(id, reason, density_percentile)` for one forest.
/// `features` holds the forest's samples in forest order.
#[pyfunction]
#[pyo3(signature = (forest, features, n_min = 3, n_d = 2, n_l = 1, p_d = 0.1))]
fn select_noise(
    py: Python<'_>,
    forest: &PyForest,
    features: Vec<Vec<f64>>,
    n_min: usize,
    n_d: usize,
    n_l: usize,
    p_d: f64,
) -> PyResult<Vec<(String, String, f64)>> {
    let f = &forest.inner;
    if features.len() != f.num_samples() {
        return Err(PyValueError::new_err(format!(
            "{} feature rows for a forest of {} samples",
            features.len(),
            f.num_samples()
        )));
    }
    let x = matrix(features, None, Some(f.samples().to_vec()))?;
    let p = NoiseParams { n_min, n_d, n_l, p_d };
    let report = py
        .detach(|| {
            let params = f.params();
            let rho = compute_density(&pairwise_distances(&x, params.metric), params.d_rd);
            cogforest::select_noise(f, &rho, &p)
        })
        .map_err(to_py)?;
    Ok(report
        .entries
        .into_iter()
        .map(|e| (e.id, e.reason.as_str().to_string(), e.density_percentile))
        .collect())
}

fn center_set(centers: BTreeMap<usize, Vec<Vec<f64>>>) -> CenterSet {
    CenterSet {
        classes: centers
            .into_iter()
            .map(|(c, list)| {
                let list = list
                    .into_iter()
                    .enumerate()
                    .map(|(k, vector)| Center {
                        tree_root_id: k,
                        vector,
                    })
                    .collect();
                (c, list)
            })
            .collect(),
    }
}

fn kernel(
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    assignments: Vec<usize>,
    centers: BTreeMap<usize, Vec<Vec<f64>>>,
    classifier_weights: Vec<Vec<f64>>,
    classifier_bias: Vec<f64>,
    alpha: f64,
    margin: Option<f64>,
) -> PyResult<(f64, f64, f64, Vec<Vec<f64>>)> {
    let dim = features.first().map_or(0, Vec::len);
    if features.iter().any(|r| r.len() != dim) || classifier_weights.iter().any(|r| r.len() != dim) {
        return Err(PyValueError::new_err("ragged feature or classifier rows"));
    }
    if classifier_bias.len() != classifier_weights.len() {
        return Err(PyValueError::new_err("classifier bias and weights disagree"));
    }
    let classifier = LinearClassifier {
        feature_dim: dim,
        num_classes: classifier_weights.len(),
        weights: classifier_weights.concat(),
        bias: classifier_bias,
    };
    if labels.iter().any(|&l| l >= classifier.num_classes) {
        return Err(PyValueError::new_err("label outside the classifier's range"));
    }
    let refs: Vec<CenterRef> = labels
        .iter()
        .zip(&assignments)
        .map(|(&class, &index)| CenterRef { class, index })
        .collect();
    let flat = features.concat();
    let centers = center_set(centers);
    let batch = Batch {
        features: &flat,
        dim,
        labels: &labels,
        centers: &refs,
    };
    let out = match margin {
        None => cogforest::mcl(&batch, &centers, &classifier, alpha),
        Some(m) => cogforest::mctl(&batch, &centers, &classifier, alpha, m),
    }
    .map_err(to_py)?;
    let grad = out.grad.chunks(dim.max(1)).map(<[f64]>::to_vec).collect();
    let b = out.breakdown;
    Ok((b.total, b.cls_term, b.ifl_term, grad))
}

/// Multi-center loss with a linear softmax head.
/// Returns `(total, cls_term, ifl_term, d total / d features)`.
#[pyfunction]
#[pyo3(signature = (features, labels, assignments, centers, classifier_weights, classifier_bias, alpha = 0.5))]
fn mcl(
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    assignments: Vec<usize>,
    centers: BTreeMap<usize, Vec<Vec<f64>>>,
    classifier_weights: Vec<Vec<f64>>,
    classifier_bias: Vec<f64>,
    alpha: f64,
) -> PyResult<(f64, f64, f64, Vec<Vec<f64>>)> {
    kernel(features, labels, assignments, centers, classifier_weights, classifier_bias, alpha, None)
}

/// Multi-center triplet loss; arguments as for `mcl` plus `margin`.
#[pyfunction]
#[pyo3(signature = (features, labels, assignments, centers, classifier_weights, classifier_bias, alpha = 0.5, margin = 0.0))]
fn mctl(
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    assignments: Vec<usize>,
    centers: BTreeMap<usize, Vec<Vec<f64>>>,
    classifier_weights: Vec<Vec<f64>>,
    classifier_bias: Vec<f64>,
    alpha: f64,
    margin: f64,
) -> PyResult<(f64, f64, f64, Vec<Vec<f64>>)> {
    kernel(features, labels, assignments, centers, classifier_weights, classifier_bias, alpha, Some(margin))
}

/// Trains the toy model on generated data, prints one line per epoch and
/// returns the history as a list of dicts.
#[pyfunction]
#[pyo3(signature = (epochs = 20, seed = 7, plus = false, quiet = false))]
fn demo_train(py: Python<'_>, epochs: usize, seed: u64, plus: bool, quiet: bool) -> PyResult<Vec<Py<PyAny>>> {
    let history = py
        .detach(|| -> cogforest::Result<_> {
            let data = generate(&SynthConfig {
                seed,
                noise_fraction: if plus { 0.1 } else { 0.0 },
                ..Default::default()
            })?;
            let base = if plus { TrainConfig::plus() } else { TrainConfig::default() };
            let cfg = TrainConfig { epochs, seed, ..base };
            let (e, c) = toy_models(2, 2, 2, seed)?;
            let out = if plus {
                run_cognisance_plus(&data.train, Some(&data.heldout), e, c, &cfg)?
            } else {
                run_cognisance(&data.train, Some(&data.heldout), e, c, &cfg)?
            };
            Ok(out.history)
        })
        .map_err(to_py)?;
    let json = py.import("json")?;
    let mut records = Vec::with_capacity(history.records.len());
    for r in &history.records {
        if !quiet {
            println!(
                "epoch {:>2} {:?} total {:.6} cls {:.6} ifl {:.6} trees {:?} flagged {}",
                r.epoch, r.phase, r.total, r.cls, r.ifl, r.trees_per_class, r.flagged_noise
            );
        }
        let text = serde_json_string(r)?;
        records.push(json.call_method1("loads", (text,))?.unbind());
    }
    Ok(records)
}

fn serde_json_string(r: &cogforest::train::EpochRecord) -> PyResult<String> {
    let mut buf = Vec::new();
    cogforest::TrainHistory { records: vec![r.clone()] }
        .write_jsonl(&mut buf)
        .map_err(to_py)?;
    String::from_utf8(buf)
        .map(|s| s.trim_end().to_string())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn cogforest_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyForest>()?;
    m.add_function(wrap_pyfunction!(build_clf, m)?)?;
    m.add_function(wrap_pyfunction!(attribute_weights, m)?)?;
    m.add_function(wrap_pyfunction!(sampler_weights, m)?)?;
    m.add_function(wrap_pyfunction!(select_noise, m)?)?;
    m.add_function(wrap_pyfunction!(mcl, m)?)?;
    m.add_function(wrap_pyfunction!(mctl, m)?)?;
    m.add_function(wrap_pyfunction!(demo_train, m)?)?;
    Ok(())
}
