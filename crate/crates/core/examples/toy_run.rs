//! Toy runs on the synthetic Gaussian data: two environments vs the i.i.d.
//! baseline, then the noise-aware variant with planted noise.

use cogforest::train::synth::{generate, SynthConfig};
use cogforest::train::{make_toy_extractor, run_cognisance, run_cognisance_plus, LinearClassifier, TrainConfig};
use cogforest::EnvParams;

fn main() -> cogforest::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let data = generate(&SynthConfig { seed, ..Default::default() })?;
    let run = |envs: Vec<EnvParams>| -> cogforest::Result<_> {
        let cfg = TrainConfig { envs, seed, ..Default::default() };
        let out = run_cognisance(
            &data.train,
            Some(&data.heldout),
            make_toy_extractor(2, 2, seed)?,
            LinearClassifier::new(2, 2, seed)?,
            &cfg,
        )?;
        Ok(out.history)
    };
    let two = run(EnvParams::default_pair())?;
    let iid = run(vec![EnvParams::IID])?;
    for (name, h) in [("two-env", &two), ("iid", &iid)] {
        let main: Vec<_> = h.main_records().collect();
        let last = main.last().unwrap();
        println!(
            "{name}: first mcl {:.4} last mcl {:.4} acc {:.4} balanced {:.4}",
            main[0].total,
            last.total,
            last.heldout_accuracy.unwrap(),
            last.heldout_balanced_accuracy.unwrap()
        );
    }

    let noisy = generate(&SynthConfig { seed, noise_fraction: 0.1, ..Default::default() })?;
    let cfg = TrainConfig { seed, ..TrainConfig::plus() };
    let out = run_cognisance_plus(
        &noisy.train,
        Some(&noisy.heldout),
        make_toy_extractor(2, 2, seed)?,
        LinearClassifier::new(2, 2, seed)?,
        &cfg,
    )?;
    let planted = noisy.noise_ids();
    let flagged = out.state.noise.flagged_ids();
    let hit = planted.iter().filter(|id| flagged.contains(*id)).count();
    println!("plus: flagged {} planted {} recovered {hit}", flagged.len(), planted.len());
    Ok(())
}
