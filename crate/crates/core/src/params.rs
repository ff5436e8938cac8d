//! Parameter blocks for forest construction, environments and noise selection.

use serde::{Deserialize, Serialize};

use crate::distance::{base_distance, DistanceMatrix};
use crate::error::{Error, Result};

/// A radius given either in metric units or as a multiple of the base distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Radius {
    Absolute(f64),
    BaseMultiple(f64),
}

impl Radius {
    fn validate(self, name: &'static str) -> Result<()> {
        let v = match self {
            Radius::Absolute(v) | Radius::BaseMultiple(v) => v,
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::param(name, format!("must be finite and > 0, got {v}")))
        }
    }

    fn resolve(self, base: f64) -> f64 {
        match self {
            Radius::Absolute(v) => v,
            Radius::BaseMultiple(m) => m * base,
        }
    }
}

/// Which radius bounds the leader search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaderRadius {
    /// Search within the density radius `d_rd`.
    #[default]
    Density,
    /// Search within the coarse-node radius `d_rn`.
    Node,
}

/// Forest construction parameters as supplied by the user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClfParams {
    pub d_rd: Radius,
    pub d_rn: Radius,
    #[serde(default)]
    pub leader: LeaderRadius,
}

impl ClfParams {
    pub fn absolute(d_rd: f64, d_rn: f64) -> Self {
        Self {
            d_rd: Radius::Absolute(d_rd),
            d_rn: Radius::Absolute(d_rn),
            leader: LeaderRadius::Density,
        }
    }

    pub fn base_multiples(d_rd: f64, d_rn: f64) -> Self {
        Self {
            d_rd: Radius::BaseMultiple(d_rd),
            d_rn: Radius::BaseMultiple(d_rn),
            leader: LeaderRadius::Density,
        }
    }

    pub fn with_leader(mut self, leader: LeaderRadius) -> Self {
        self.leader = leader;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.d_rd.validate("d_rd")?;
        self.d_rn.validate("d_rn")
    }

    pub fn needs_base_distance(&self) -> bool {
        matches!(self.d_rd, Radius::BaseMultiple(_)) || matches!(self.d_rn, Radius::BaseMultiple(_))
    }

    /// Converts to absolute radii, computing the base distance from `d` only
    /// when a multiple is present.
    pub fn resolve(&self, d: &DistanceMatrix) -> Result<Radii> {
        self.validate()?;
        let base = if self.needs_base_distance() {
            base_distance(d)?
        } else {
            0.0
        };
        self.resolve_with_base(base)
    }

    /// Converts to absolute radii using a precomputed base distance.
    pub fn resolve_with_base(&self, base: f64) -> Result<Radii> {
        self.validate()?;
        Radii::new(self.d_rd.resolve(base), self.d_rn.resolve(base)).map(|r| r.with_leader(self.leader))
    }
}

/// Absolute radii used by the forest builder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Radii {
    pub d_rd: f64,
    pub d_rn: f64,
    #[serde(default)]
    pub leader: LeaderRadius,
}

impl Radii {
    pub fn new(d_rd: f64, d_rn: f64) -> Result<Self> {
        for (name, v) in [("d_rd", d_rd), ("d_rn", d_rn)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("resolved radius must be > 0, got {v}")));
            }
        }
        Ok(Self {
            d_rd,
            d_rn,
            leader: LeaderRadius::Density,
        })
    }

    pub fn with_leader(mut self, leader: LeaderRadius) -> Self {
        self.leader = leader;
        self
    }

    pub fn leader_search_radius(&self) -> f64 {
        match self.leader {
            LeaderRadius::Density => self.d_rd,
            LeaderRadius::Node => self.d_rn,
        }
    }
}

/// Class-wise and attribute-wise balance factors of one environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub q_cls: f64,
    pub q_attr: f64,
}

impl EnvParams {
    pub fn new(q_cls: f64, q_attr: f64) -> Result<Self> {
        let p = Self { q_cls, q_attr };
        p.validate()?;
        Ok(p)
    }

    /// Plain i.i.d. sampling.
    pub const IID: EnvParams = EnvParams { q_cls: 1.0, q_attr: 1.0 };
    /// Fully class- and attribute-balanced sampling.
    pub const BALANCED: EnvParams = EnvParams { q_cls: 0.0, q_attr: 0.0 };

    /// The two-environment default: i.i.d. and fully balanced.
    pub fn default_pair() -> Vec<EnvParams> {
        vec![Self::IID, Self::BALANCED]
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("q_cls", self.q_cls)?;
        check_unit("q_attr", self.q_attr)
    }
}

/// Noise selection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Trees with fewer samples than this are flagged entirely.
    pub n_min: usize,
    /// Minimum node depth (edges from the root) for the layer criterion.
    pub n_d: usize,
    /// Number of bottom depth-layers eligible under the layer criterion.
    pub n_l: usize,
    /// Fraction of each class, lowest density first, that may be flagged.
    pub p_d: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            n_min: 3,
            n_d: 2,
            n_l: 1,
            p_d: 0.1,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        check_unit("p_d", self.p_d)
    }
}

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(name, format!("must lie in [0, 1], got {v}")))
    }
}
