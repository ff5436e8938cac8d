//! Flat training config file merged under the command-line flags.

use std::path::Path;

use serde::Deserialize;

use cogforest::train::LossKind;
use cogforest::{ClfParams, EnvParams, LeaderRadius, Metric, NoiseParams, Radius, TrainConfig};

use crate::{CliError, CliResult, TrainArgs};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    plus: Option<bool>,
    warmup_epochs: Option<usize>,
    epochs: Option<usize>,
    refresh_period: Option<usize>,
    envs: Option<String>,
    alpha: Option<f64>,
    margin: Option<f64>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    loss: Option<String>,
    d_rd: Option<f64>,
    d_rn: Option<f64>,
    absolute_radii: Option<bool>,
    metric: Option<String>,
    leader_radius: Option<String>,
    n_min: Option<usize>,
    n_d: Option<usize>,
    n_l: Option<usize>,
    p_d: Option<f64>,
    feature_dim: Option<usize>,
}

impl TrainFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }
}

pub struct Resolved {
    pub cfg: TrainConfig,
    pub plus: bool,
    pub feature_dim: Option<usize>,
}

pub fn parse_envs(text: &str) -> CliResult<Vec<EnvParams>> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let parts: Vec<&str> = pair.split(',').map(str::trim).collect();
            let [c, a] = parts.as_slice() else {
                return Err(CliError::usage(format!("environment `{pair}` is not `q_cls,q_attr`")));
            };
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| CliError::usage(format!("invalid balance factor `{s}`")))
            };
            Ok(EnvParams::new(num(c)?, num(a)?)?)
        })
        .collect()
}

pub fn parse_metric(s: &str) -> CliResult<Metric> {
    s.parse().map_err(|_| CliError::usage(format!("unknown metric `{s}`")))
}

pub fn parse_leader(s: &str) -> CliResult<LeaderRadius> {
    match s {
        "density" => Ok(LeaderRadius::Density),
        "node" => Ok(LeaderRadius::Node),
        other => Err(CliError::usage(format!("unknown leader radius `{other}`"))),
    }
}

fn parse_loss(s: &str) -> CliResult<LossKind> {
    match s {
        "mcl" => Ok(LossKind::Mcl),
        "mctl" => Ok(LossKind::Mctl),
        other => Err(CliError::usage(format!("unknown loss `{other}`"))),
    }
}

pub fn resolve(args: &TrainArgs) -> CliResult<Resolved> {
    let file = match &args.config {
        Some(p) => TrainFile::load(p)?,
        None => TrainFile::default(),
    };
    let plus = args.plus || file.plus.unwrap_or(false);
    let base = if plus { TrainConfig::plus() } else { TrainConfig::default() };

    let envs = match args.envs.as_deref().or(file.envs.as_deref()) {
        Some(s) => parse_envs(s)?,
        None => base.envs.clone(),
    };
    let loss = match args.loss.as_deref().or(file.loss.as_deref()) {
        Some(s) => parse_loss(s)?,
        None => base.loss,
    };
    let metric = match args.metric.as_deref().or(file.metric.as_deref()) {
        Some(s) => parse_metric(s)?,
        None => base.metric,
    };
    let leader = match args.leader_radius.as_deref().or(file.leader_radius.as_deref()) {
        Some(s) => parse_leader(s)?,
        None => base.clf.leader,
    };
    let absolute = args.absolute_radii || file.absolute_radii.unwrap_or(false);
    let (def_rd, def_rn) = match (base.clf.d_rd, base.clf.d_rn) {
        (Radius::BaseMultiple(a), Radius::BaseMultiple(b)) | (Radius::Absolute(a), Radius::Absolute(b)) => (a, b),
        _ => unreachable!("default radii share a kind"),
    };
    let d_rd = args.d_rd.or(file.d_rd).unwrap_or(def_rd);
    let d_rn = args.d_rn.or(file.d_rn).unwrap_or(def_rn);
    let clf = if absolute {
        ClfParams::absolute(d_rd, d_rn)
    } else {
        ClfParams::base_multiples(d_rd, d_rn)
    }
    .with_leader(leader);

    let noise = if plus {
        let d = NoiseParams::default();
        Some(NoiseParams {
            n_min: args.n_min.or(file.n_min).unwrap_or(d.n_min),
            n_d: args.n_d.or(file.n_d).unwrap_or(d.n_d),
            n_l: args.n_l.or(file.n_l).unwrap_or(d.n_l),
            p_d: args.p_d.or(file.p_d).unwrap_or(d.p_d),
        })
    } else {
        None
    };

    let cfg = TrainConfig {
        warmup_epochs: args.warmup_epochs.or(file.warmup_epochs).unwrap_or(base.warmup_epochs),
        epochs: args.epochs.or(file.epochs).unwrap_or(base.epochs),
        refresh_period: args.refresh_period.or(file.refresh_period).unwrap_or(base.refresh_period),
        envs,
        alpha: args.alpha.or(file.alpha).unwrap_or(base.alpha),
        margin: args.margin.or(file.margin).unwrap_or(base.margin),
        learning_rate: args.learning_rate.or(file.learning_rate).unwrap_or(base.learning_rate),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(base.batch_size),
        seed: args.seed.or(file.seed).unwrap_or(base.seed),
        loss,
        clf,
        metric,
        noise,
    };
    cfg.validate()?;
    Ok(Resolved {
        cfg,
        plus,
        feature_dim: args.feature_dim.or(file.feature_dim),
    })
}
