//! Seeded two-attribute Gaussian toy data with optional planted label noise.
//!
//! Every class has a majority and a minority attribute blob in a 2-D input
//! space. The blobs are placed so that a boundary fitted to the majority
//! blobs alone misclassifies part of the minority ones. Planted noise points
//! keep their class label but sit on a far ring around the origin, away from
//! every blob. The held-out split has the same number of samples in every
//! (class, attribute) cell and no noise.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{format_f64, FeatureMatrix};
use crate::error::{Error, Result};

/// Blob centers indexed by `[class][attribute]`.
const CENTERS: [[[f64; 2]; 2]; 2] = [[[-1.5, 0.0], [0.5, 3.0]], [[1.5, 0.0], [3.5, 3.0]]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Clean samples per class (two classes).
    pub class_sizes: [usize; 2],
    /// Fraction of each class drawn from its minority attribute blob.
    pub minority_fraction: f64,
    /// Per-dimension standard deviation of every blob.
    pub spread: f64,
    /// Planted noise as a fraction of each class's final size.
    pub noise_fraction: f64,
    /// Held-out samples per (class, attribute) cell.
    pub heldout_per_cell: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            class_sizes: [300, 100],
            minority_fraction: 0.1,
            spread: 0.6,
            noise_fraction: 0.0,
            heldout_per_cell: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: FeatureMatrix,
    /// Ground-truth attribute per training sample (`None` for planted noise).
    pub train_attributes: Vec<Option<usize>>,
    pub train_noise: Vec<bool>,
    pub heldout: FeatureMatrix,
    pub heldout_attributes: Vec<usize>,
}

impl SynthData {
    pub fn noise_ids(&self) -> Vec<String> {
        self.train
            .ids()
            .iter()
            .zip(&self.train_noise)
            .filter(|(_, &n)| n)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Training CSV with trailing `attribute,noise` ground-truth columns.
    pub fn write_train_csv<W: Write>(&self, writer: W) -> Result<()> {
        let attrs: Vec<String> = self
            .train_attributes
            .iter()
            .map(|a| a.map(|a| a.to_string()).unwrap_or_default())
            .collect();
        let noise: Vec<String> = self.train_noise.iter().map(|&n| u8::from(n).to_string()).collect();
        write_with_truth(&self.train, &attrs, &noise, writer)
    }

    pub fn write_heldout_csv<W: Write>(&self, writer: W) -> Result<()> {
        let attrs: Vec<String> = self.heldout_attributes.iter().map(|a| a.to_string()).collect();
        let noise = vec!["0".to_string(); attrs.len()];
        write_with_truth(&self.heldout, &attrs, &noise, writer)
    }
}

fn write_with_truth<W: Write>(m: &FeatureMatrix, attrs: &[String], noise: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..m.dim()).map(|k| format!("f{k}")));
    header.extend(["attribute".to_string(), "noise".to_string()]);
    w.write_record(&header)?;
    for i in 0..m.len() {
        let mut rec = vec![m.id(i).to_string(), m.label(i).map(|l| l.to_string()).unwrap_or_default()];
        rec.extend(m.row(i).iter().map(|v| format_f64(*v)));
        rec.push(attrs[i].clone());
        rec.push(noise[i].clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    if !(0.0..1.0).contains(&cfg.noise_fraction) {
        return Err(Error::param("noise_fraction", "must lie in [0, 1)"));
    }
    if !(0.0..=1.0).contains(&cfg.minority_fraction) {
        return Err(Error::param("minority_fraction", "must lie in [0, 1]"));
    }
    if !(cfg.spread.is_finite() && cfg.spread > 0.0) {
        return Err(Error::param("spread", "must be > 0"));
    }
    if cfg.class_sizes.contains(&0) {
        return Err(Error::param("class_sizes", "every class needs samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let blob = Normal::new(0.0, cfg.spread).expect("valid spread");

    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut attrs = Vec::new();
    let mut noise = Vec::new();
    for (class, &clean) in cfg.class_sizes.iter().enumerate() {
        let minority = (clean as f64 * cfg.minority_fraction).round() as usize;
        for k in 0..clean {
            let attr = usize::from(k >= clean - minority);
            let c = CENTERS[class][attr];
            rows.push(vec![c[0] + blob.sample(&mut rng), c[1] + blob.sample(&mut rng)]);
            labels.push(class);
            attrs.push(Some(attr));
            noise.push(false);
        }
        // noise / (clean + noise) = fraction
        let planted = (clean as f64 * cfg.noise_fraction / (1.0 - cfg.noise_fraction)).round() as usize;
        for _ in 0..planted {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let radius = rng.random_range(8.0..14.0);
            rows.push(vec![0.75 + radius * angle.cos(), 1.0 + radius * angle.sin()]);
            labels.push(class);
            attrs.push(None);
            noise.push(true);
        }
    }
    for i in 0..rows.len() {
        ids.push(format!("tr{i}"));
    }
    let train = FeatureMatrix::new(ids, rows, Some(labels))?;

    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut heldout_attributes = Vec::new();
    for (class, centers) in CENTERS.iter().enumerate() {
        for (attr, c) in centers.iter().enumerate() {
            for _ in 0..cfg.heldout_per_cell {
                ids.push(format!("te{}", ids.len()));
                rows.push(vec![c[0] + blob.sample(&mut rng), c[1] + blob.sample(&mut rng)]);
                labels.push(class);
                heldout_attributes.push(attr);
            }
        }
    }
    let heldout = FeatureMatrix::new(ids, rows, Some(labels))?;
    Ok(SynthData {
        train,
        train_attributes: attrs,
        train_noise: noise,
        heldout,
        heldout_attributes,
    })
}
