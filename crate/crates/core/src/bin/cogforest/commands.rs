use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;

use cogforest::sampler::{attribute_weights_detailed, environment_from_forests, write_weight_csv};
use cogforest::train::synth::{generate, SynthConfig};
use cogforest::{
    build_class_forests, build_environment, compute_density, pairwise_distances, run_cognisance,
    run_cognisance_plus, select_noise, toy_models, CLForest, ClfParams, EnvParams, FeatureMatrix, NoiseParams,
    NoiseReport,
};

use crate::config::{parse_leader, parse_metric, resolve};
use crate::{BuildArgs, CliError, CliResult, LeaderArg, NoiseArgs, SynthArgs, TrainArgs, WeightsArgs};

/// Reading a user-supplied file: every failure is an input error.
fn input<T>(path: &Path, r: cogforest::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn load_features(path: &Path) -> CliResult<FeatureMatrix> {
    input(path, FeatureMatrix::load(path))
}

fn load_forests(paths: &[std::path::PathBuf]) -> CliResult<Vec<CLForest>> {
    paths.iter().map(|p| input(p, CLForest::load(p))).collect()
}

fn load_excluded(path: Option<&Path>) -> CliResult<HashSet<String>> {
    match path {
        None => Ok(HashSet::new()),
        Some(p) => {
            let file = File::open(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            Ok(input(p, NoiseReport::read_csv(file))?.flagged_ids())
        }
    }
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

/// Checks that every forest sample exists in `x` under the forest's class.
fn check_forest_ids(f: &CLForest, x: &FeatureMatrix) -> CliResult<Vec<usize>> {
    f.samples()
        .iter()
        .map(|id| {
            let i = x
                .index_of(id)
                .ok_or_else(|| CliError::usage(format!("forest sample `{id}` is not in the feature file")))?;
            match x.label(i) {
                Some(l) if l != f.class() => Err(CliError::usage(format!(
                    "sample `{id}` has label {l} but sits in the forest of class {}",
                    f.class()
                ))),
                _ => Ok(i),
            }
        })
        .collect()
}

pub fn build(a: BuildArgs) -> CliResult<()> {
    let x = load_features(&a.features)?;
    x.require_labels()?;
    let metric = parse_metric(&a.metric)?;
    let leader = parse_leader(match a.leader_radius {
        LeaderArg::Density => "density",
        LeaderArg::Node => "node",
    })?;
    let params = if a.base_multiples {
        ClfParams::base_multiples(a.d_rd, a.d_rn)
    } else {
        ClfParams::absolute(a.d_rd, a.d_rn)
    }
    .with_leader(leader);
    let (radii, built) = build_class_forests(&x, &params, metric)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let mut out = std::io::stdout().lock();
    for b in &built {
        let f = &b.forest;
        let path = a.out_dir.join(format!("forest_class{}.json", f.class()));
        f.save(&path)?;
        let line = json!({
            "file": path.display().to_string(),
            "d_rd": radii.d_rd,
            "d_rn": radii.d_rn,
            "stats": f.stats(),
        });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn weights(a: WeightsArgs) -> CliResult<()> {
    let forests = load_forests(&a.forests)?;
    let excluded = load_excluded(a.exclude.as_deref())?;
    let features = a.features.as_deref().map(load_features).transpose()?;
    if let Some(x) = &features {
        for f in &forests {
            check_forest_ids(f, x)?;
        }
    }

    let (ids, weights) = match a.q_cls {
        Some(q_cls) => {
            if a.raw {
                return Err(CliError::usage("--raw applies to class-local weights only"));
            }
            let env = EnvParams::new(q_cls, a.q_attr)?;
            let env = match &features {
                Some(x) => build_environment(0, x, &forests, env, &excluded)?,
                None => {
                    let refs: Vec<&CLForest> = forests.iter().collect();
                    environment_from_forests(0, &refs, env, &excluded)?
                }
            };
            (env.weights.ids, env.weights.weights)
        }
        None => {
            let [f] = forests.as_slice() else {
                return Err(CliError::usage("class-local weights take exactly one forest; pass --q-cls for several"));
            };
            EnvParams::new(1.0, a.q_attr)?;
            let known: HashSet<&str> = f.samples().iter().map(String::as_str).collect();
            if let Some(id) = excluded.iter().find(|id| !known.contains(id.as_str())) {
                return Err(CliError::usage(format!("excluded sample `{id}` is not in the forest")));
            }
            let local: Vec<usize> = (0..f.num_samples())
                .filter(|&i| excluded.contains(&f.samples()[i]))
                .collect();
            let detail = attribute_weights_detailed(f, a.q_attr, &local)?;
            let w = if a.raw { detail.raw } else { detail.normalized };
            (f.samples().to_vec(), w)
        }
    };
    let mut out = output(a.out.as_deref())?;
    write_weight_csv(&mut out, &ids, &weights)?;
    out.flush()?;
    Ok(())
}

pub fn noise(a: NoiseArgs) -> CliResult<()> {
    let p = NoiseParams {
        n_min: a.n_min,
        n_d: a.n_d,
        n_l: a.n_l,
        p_d: a.p_d,
    };
    p.validate()?;
    let forests = load_forests(&a.forests)?;
    let x = load_features(&a.features)?;
    let mut report = NoiseReport::default();
    for f in &forests {
        let rows = check_forest_ids(f, &x)?;
        let sub = x.subset(&rows)?;
        let params = f.params();
        let rho = compute_density(&pairwise_distances(&sub, params.metric), params.d_rd);
        report.merge(select_noise(f, &rho, &p)?);
    }
    let mut out = output(a.out.as_deref())?;
    report.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let resolved = resolve(&a)?;
    let cfg = &resolved.cfg;
    let x = load_features(&a.features)?;
    let heldout = a.heldout.as_deref().map(load_features).transpose()?;
    let labels = x.require_labels()?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let feature_dim = resolved.feature_dim.unwrap_or(x.dim());
    let (extractor, classifier) = toy_models(x.dim(), feature_dim, num_classes, cfg.seed)?;
    let out = if resolved.plus {
        run_cognisance_plus(&x, heldout.as_ref(), extractor, classifier, cfg)?
    } else {
        run_cognisance(&x, heldout.as_ref(), extractor, classifier, cfg)?
    };

    std::fs::create_dir_all(&a.out_dir)?;
    let model = json!({
        "plus": resolved.plus,
        "config": cfg,
        "extractor": out.extractor,
        "classifier": out.classifier,
    });
    std::fs::write(a.out_dir.join("model.json"), serde_json::to_string_pretty(&model).map_err(cogforest::Error::from)?)?;
    out.history
        .write_jsonl(BufWriter::new(File::create(a.out_dir.join("history.jsonl"))?))?;
    if resolved.plus {
        out.state
            .noise
            .write_csv(BufWriter::new(File::create(a.out_dir.join("noise.csv"))?))?;
    }

    let mut stdout = std::io::stdout().lock();
    for r in &out.history.records {
        let acc = r.heldout_accuracy.map(cogforest::data::format_f64).unwrap_or_else(|| "-".into());
        writeln!(
            stdout,
            "epoch {} {:?} total {} cls {} ifl {} flagged {} acc {acc}",
            r.epoch,
            r.phase,
            cogforest::data::format_f64(r.total),
            cogforest::data::format_f64(r.cls),
            cogforest::data::format_f64(r.ifl),
            r.flagged_noise,
        )?;
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let sizes: Vec<usize> = a
        .class_sizes
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::usage(format!("invalid class sizes `{}`", a.class_sizes)))?;
    let [c0, c1] = sizes.as_slice() else {
        return Err(CliError::usage("--class-sizes takes exactly two counts"));
    };
    let data = generate(&SynthConfig {
        seed: a.seed,
        class_sizes: [*c0, *c1],
        minority_fraction: a.minority_fraction,
        spread: a.spread,
        noise_fraction: a.noise_fraction,
        heldout_per_cell: a.heldout_per_cell,
    })?;
    data.write_train_csv(BufWriter::new(File::create(&a.out)?))?;
    data.write_heldout_csv(BufWriter::new(File::create(&a.heldout_out)?))?;
    Ok(())
}
