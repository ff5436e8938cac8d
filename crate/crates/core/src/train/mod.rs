//! Iterative environment-construction training.
//!
//! After `warmup_epochs` of plain classification training, per-class forests
//! are built on the current features, one center is read from every tree, and
//! one sampling environment is built per balance-factor pair. Each epoch then
//! alternates whole batches from every environment, stepping on the
//! classification loss plus the multi-center (or triplet) term, and every
//! `refresh_period` epochs the forests, centers and environments are rebuilt
//! from the updated features. With noise parameters set, every rebuild also
//! selects noise samples, which get zero weight until the next rebuild.

pub mod model;
pub mod synth;

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::density::DensityVector;
use crate::distance::{base_distance, pairwise_distances, Metric};
use crate::error::{Error, Result};
use crate::forest::{build_clf, CLForest};
use crate::loss::{extract_centers, mcl, mctl, Batch, CenterIndex, CenterRef, CenterSet, DEFAULT_ALPHA};
use crate::noise::{select_noise, NoiseReport};
use crate::params::{ClfParams, EnvParams, NoiseParams, Radii};
use crate::sampler::{build_environment, BatchSampler, Environment};

pub use model::{make_toy_extractor, Classifier, FeatureExtractor, LinearClassifier, LinearExtractor};

/// Radius used when every sample coincides with its neighbours.
const DEGENERATE_RADIUS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mcl,
    Mctl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub refresh_period: usize,
    pub envs: Vec<EnvParams>,
    pub alpha: f64,
    /// Hinge margin of the triplet loss; 0 reproduces the plain hinge.
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub clf: ClfParams,
    pub metric: Metric,
    pub noise: Option<NoiseParams>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 2,
            epochs: 20,
            refresh_period: 1,
            envs: EnvParams::default_pair(),
            alpha: DEFAULT_ALPHA,
            margin: 0.0,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 7,
            loss: LossKind::Mcl,
            clf: ClfParams::base_multiples(3.0, 1.0),
            metric: Metric::Euclidean,
            noise: None,
        }
    }
}

impl TrainConfig {
    /// Defaults for the noise-aware variant: triplet loss plus default noise thresholds.
    pub fn plus() -> Self {
        Self {
            loss: LossKind::Mctl,
            noise: Some(NoiseParams::default()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be >= 1"));
        }
        if self.refresh_period == 0 {
            return Err(Error::param("refresh_period", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        if self.envs.is_empty() {
            return Err(Error::param("envs", "need at least one environment"));
        }
        for e in &self.envs {
            e.validate()?;
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be > 0"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::param("alpha", "must be >= 0"));
        }
        if !self.margin.is_finite() {
            return Err(Error::param("margin", "must be finite"));
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        self.clf.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Main,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvLoss {
    pub env_id: usize,
    pub q_cls: f64,
    pub q_attr: f64,
    pub total: f64,
    pub cls: f64,
    pub ifl: f64,
    pub steps: usize,
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub env_losses: Vec<EnvLoss>,
    /// Sums over environments.
    pub total: f64,
    pub cls: f64,
    pub ifl: f64,
    pub trees_per_class: BTreeMap<usize, usize>,
    pub centers_per_class: BTreeMap<usize, usize>,
    pub flagged_noise: usize,
    pub refreshed: bool,
    pub degenerate: bool,
    pub heldout_accuracy: Option<f64>,
    pub heldout_balanced_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn main_records(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Main)
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut writer, r)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { records })
    }
}

/// Forests, centers, noise and environments derived from one feature snapshot.
#[derive(Debug, Clone)]
pub struct RefreshState {
    pub features: FeatureMatrix,
    pub radii: Radii,
    pub degenerate: bool,
    pub forests: Vec<CLForest>,
    pub densities: Vec<DensityVector>,
    pub centers: CenterSet,
    /// Center of every training sample, in row order.
    pub center_refs: Vec<CenterRef>,
    pub noise: NoiseReport,
    pub envs: Vec<Environment>,
}

impl RefreshState {
    fn trees_per_class(&self) -> BTreeMap<usize, usize> {
        self.forests.iter().map(|f| (f.class(), f.num_trees())).collect()
    }

    fn centers_per_class(&self) -> BTreeMap<usize, usize> {
        self.centers.classes.iter().map(|(&c, v)| (c, v.len())).collect()
    }
}

pub struct TrainOutcome<E, C> {
    pub extractor: E,
    pub classifier: C,
    pub history: TrainHistory,
    /// State from the last rebuild.
    pub state: RefreshState,
}

/// Toy extractor and classifier used by the CLI, the bindings and the tests.
/// Both are seeded with `seed`.
pub fn toy_models(
    input_dim: usize,
    feature_dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<(LinearExtractor, LinearClassifier)> {
    Ok((
        make_toy_extractor(input_dim, feature_dim, seed)?,
        LinearClassifier::new(feature_dim, num_classes, seed)?,
    ))
}

/// Current features of every training row.
pub fn extract_features<E: FeatureExtractor>(extractor: &E, inputs: &FeatureMatrix) -> Result<FeatureMatrix> {
    if inputs.dim() != extractor.input_dim() {
        return Err(Error::Dimension {
            expected: extractor.input_dim(),
            got: inputs.dim(),
        });
    }
    let values = inputs.rows().flat_map(|r| extractor.forward(r)).collect();
    inputs.with_values(values, extractor.feature_dim())
}

/// Rebuilds forests, centers, optional noise and environments from the
/// extractor's current features.
pub fn refresh<E: FeatureExtractor>(
    extractor: &E,
    inputs: &FeatureMatrix,
    cfg: &TrainConfig,
    noise: Option<&NoiseParams>,
) -> Result<RefreshState> {
    let features = extract_features(extractor, inputs)?;
    let mut degenerate = false;
    let radii = if cfg.clf.needs_base_distance() {
        let base = base_distance(&pairwise_distances(&features, cfg.metric))?;
        if base > 0.0 {
            cfg.clf.resolve_with_base(base)?
        } else {
            degenerate = true;
            Radii::new(DEGENERATE_RADIUS, DEGENERATE_RADIUS)?.with_leader(cfg.clf.leader)
        }
    } else {
        cfg.clf.resolve_with_base(0.0)?
    };

    let built = features
        .classes()
        .par_iter()
        .map(|&c| build_clf(&features.subset(&features.class_indices(c))?, radii, cfg.metric))
        .collect::<Result<Vec<_>>>()?;
    let (forests, densities): (Vec<_>, Vec<_>) = built.into_iter().map(|b| (b.forest, b.density)).unzip();

    let centers = extract_centers(&forests, &features)?;
    let index = CenterIndex::new(&forests, &centers)?;
    let center_refs = features
        .ids()
        .iter()
        .map(|id| index.get(id))
        .collect::<Result<Vec<_>>>()?;

    let mut report = NoiseReport::default();
    if let Some(p) = noise {
        for (f, rho) in forests.iter().zip(&densities) {
            report.merge(select_noise(f, rho, p)?);
        }
    }
    let excluded: HashSet<String> = report.flagged_ids();
    let envs = cfg
        .envs
        .iter()
        .enumerate()
        .map(|(id, &e)| build_environment(id, &features, &forests, e, &excluded))
        .collect::<Result<Vec<_>>>()?;

    Ok(RefreshState {
        features,
        radii,
        degenerate,
        forests,
        densities,
        centers,
        center_refs,
        noise: report,
        envs,
    })
}

/// Held-out accuracy and mean per-class recall.
pub fn evaluate<E: FeatureExtractor, C: Classifier>(
    extractor: &E,
    classifier: &C,
    heldout: &FeatureMatrix,
) -> Result<(f64, f64)> {
    let labels = heldout.require_labels()?;
    let mut correct = 0usize;
    let mut per_class: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (row, &y) in heldout.rows().zip(labels) {
        let hit = classifier.predict(&extractor.forward(row)) == y;
        correct += usize::from(hit);
        let e = per_class.entry(y).or_default();
        e.0 += usize::from(hit);
        e.1 += 1;
    }
    let acc = correct as f64 / heldout.len() as f64;
    let balanced = per_class.values().map(|&(h, n)| h as f64 / n as f64).sum::<f64>() / per_class.len() as f64;
    Ok((acc, balanced))
}

struct Trainer<'a, E, C> {
    extractor: E,
    classifier: C,
    inputs: &'a FeatureMatrix,
    labels: &'a [usize],
    cfg: &'a TrainConfig,
    grad_e: Vec<f64>,
    grad_c: Vec<f64>,
}

#[derive(Default)]
struct StepLoss {
    total: f64,
    cls: f64,
    ifl: f64,
}

impl<'a, E: FeatureExtractor, C: Classifier> Trainer<'a, E, C> {
    fn apply(&mut self, idx: &[usize], features: &[f64], grad_f: &[f64]) {
        let dim = self.extractor.feature_dim();
        self.grad_e.iter_mut().for_each(|g| *g = 0.0);
        self.grad_c.iter_mut().for_each(|g| *g = 0.0);
        for (k, &i) in idx.iter().enumerate() {
            let f = &features[k * dim..(k + 1) * dim];
            self.extractor
                .accumulate_grad(self.inputs.row(i), &grad_f[k * dim..(k + 1) * dim], &mut self.grad_e);
            self.classifier.accumulate_grad(f, self.labels[i], &mut self.grad_c);
        }
        let lr = self.cfg.learning_rate / idx.len() as f64;
        self.extractor.apply_update(&self.grad_e, lr);
        self.classifier.apply_update(&self.grad_c, lr);
    }

    fn forward_batch(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().flat_map(|&i| self.extractor.forward(self.inputs.row(i))).collect()
    }

    fn warmup_step(&mut self, idx: &[usize]) -> StepLoss {
        let features = self.forward_batch(idx);
        let dim = self.extractor.feature_dim();
        let mut grad_f = Vec::with_capacity(features.len());
        let mut cls = 0.0;
        for (k, &i) in idx.iter().enumerate() {
            let (l, g) = self.classifier.loss_and_grad(&features[k * dim..(k + 1) * dim], self.labels[i]);
            cls += l;
            grad_f.extend(g);
        }
        self.apply(idx, &features, &grad_f);
        StepLoss { total: cls, cls, ifl: 0.0 }
    }

    fn main_step(&mut self, idx: &[usize], state: &RefreshState) -> Result<StepLoss> {
        let features = self.forward_batch(idx);
        let labels: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        let refs: Vec<CenterRef> = idx.iter().map(|&i| state.center_refs[i]).collect();
        let batch = Batch {
            features: &features,
            dim: self.extractor.feature_dim(),
            labels: &labels,
            centers: &refs,
        };
        let out = match self.cfg.loss {
            LossKind::Mcl => mcl(&batch, &state.centers, &self.classifier, self.cfg.alpha)?,
            LossKind::Mctl => mctl(&batch, &state.centers, &self.classifier, self.cfg.alpha, self.cfg.margin)?,
        };
        self.apply(idx, &features, &out.grad);
        Ok(StepLoss {
            total: out.breakdown.total,
            cls: out.breakdown.cls_term,
            ifl: out.breakdown.ifl_term,
        })
    }
}

fn validate_inputs<'a>(inputs: &'a FeatureMatrix, cfg: &TrainConfig) -> Result<&'a [usize]> {
    cfg.validate()?;
    let labels = inputs.require_labels()?;
    if inputs.classes().len() < 2 {
        return Err(Error::input("training needs at least two classes"));
    }
    Ok(labels)
}

/// Runs the training loop without noise selection.
pub fn run_cognisance<E: FeatureExtractor, C: Classifier>(
    inputs: &FeatureMatrix,
    heldout: Option<&FeatureMatrix>,
    extractor: E,
    classifier: C,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<E, C>> {
    run(inputs, heldout, extractor, classifier, cfg, None)
}

/// Runs the training loop with noise selection after every rebuild.
pub fn run_cognisance_plus<E: FeatureExtractor, C: Classifier>(
    inputs: &FeatureMatrix,
    heldout: Option<&FeatureMatrix>,
    extractor: E,
    classifier: C,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<E, C>> {
    let noise = cfg
        .noise
        .ok_or_else(|| Error::param("noise", "noise parameters are required"))?;
    run(inputs, heldout, extractor, classifier, cfg, Some(noise))
}

fn run<E: FeatureExtractor, C: Classifier>(
    inputs: &FeatureMatrix,
    heldout: Option<&FeatureMatrix>,
    extractor: E,
    classifier: C,
    cfg: &TrainConfig,
    noise: Option<NoiseParams>,
) -> Result<TrainOutcome<E, C>> {
    let labels = validate_inputs(inputs, cfg)?;
    if classifier.num_classes() <= *labels.iter().max().expect("non-empty") {
        return Err(Error::input("classifier has fewer outputs than the data has classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps = inputs.len().div_ceil(cfg.batch_size);
    let mut t = Trainer {
        grad_e: vec![0.0; extractor.num_params()],
        grad_c: vec![0.0; classifier.num_params()],
        extractor,
        classifier,
        inputs,
        labels,
        cfg,
    };
    let mut history = TrainHistory::default();
    let eval = |t: &Trainer<E, C>| -> Result<(Option<f64>, Option<f64>)> {
        match heldout {
            Some(h) => evaluate(&t.extractor, &t.classifier, h).map(|(a, b)| (Some(a), Some(b))),
            None => Ok((None, None)),
        }
    };

    let uniform = vec![1.0; inputs.len()];
    for epoch in 0..cfg.warmup_epochs {
        let mut sampler = BatchSampler::new(&uniform, rng.next_u64())?;
        let mut loss = StepLoss::default();
        for _ in 0..steps {
            let s = t.warmup_step(&sampler.draw(cfg.batch_size));
            loss.total += s.total;
            loss.cls += s.cls;
        }
        let (acc, bal) = eval(&t)?;
        history.records.push(EpochRecord {
            epoch,
            phase: Phase::Warmup,
            env_losses: vec![EnvLoss {
                env_id: 0,
                q_cls: 1.0,
                q_attr: 1.0,
                total: loss.total,
                cls: loss.cls,
                ifl: 0.0,
                steps,
            }],
            total: loss.total,
            cls: loss.cls,
            ifl: 0.0,
            trees_per_class: BTreeMap::new(),
            centers_per_class: BTreeMap::new(),
            flagged_noise: 0,
            refreshed: false,
            degenerate: false,
            heldout_accuracy: acc,
            heldout_balanced_accuracy: bal,
        });
    }

    // first build starts from an empty noise list
    let mut state = refresh(&t.extractor, inputs, cfg, None)?;
    for epoch in 0..cfg.epochs {
        let mut samplers = state
            .envs
            .iter()
            .map(|e| BatchSampler::new(&e.weights.weights, rng.next_u64()))
            .collect::<Result<Vec<_>>>()?;
        let mut env_losses: Vec<EnvLoss> = state
            .envs
            .iter()
            .map(|e| EnvLoss {
                env_id: e.env_id,
                q_cls: e.params.q_cls,
                q_attr: e.params.q_attr,
                total: 0.0,
                cls: 0.0,
                ifl: 0.0,
                steps,
            })
            .collect();
        for _ in 0..steps {
            for (sampler, acc) in samplers.iter_mut().zip(env_losses.iter_mut()) {
                let s = t.main_step(&sampler.draw(cfg.batch_size), &state)?;
                acc.total += s.total;
                acc.cls += s.cls;
                acc.ifl += s.ifl;
            }
        }
        let refreshed = (epoch + 1) % cfg.refresh_period == 0;
        let degenerate = state.degenerate;
        if refreshed {
            state = refresh(&t.extractor, inputs, cfg, noise.as_ref())?;
        }
        let (acc, bal) = eval(&t)?;
        history.records.push(EpochRecord {
            epoch: cfg.warmup_epochs + epoch,
            phase: Phase::Main,
            total: env_losses.iter().map(|e| e.total).sum(),
            cls: env_losses.iter().map(|e| e.cls).sum(),
            ifl: env_losses.iter().map(|e| e.ifl).sum(),
            env_losses,
            trees_per_class: state.trees_per_class(),
            centers_per_class: state.centers_per_class(),
            flagged_noise: state.noise.len(),
            refreshed,
            degenerate: degenerate || state.degenerate,
            heldout_accuracy: acc,
            heldout_balanced_accuracy: bal,
        });
    }
    Ok(TrainOutcome {
        extractor: t.extractor,
        classifier: t.classifier,
        history,
        state,
    })
}
