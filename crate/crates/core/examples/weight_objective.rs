//! The weight objective on its own.
//!
//! Three draws of a group parameter are weighted so that conditioning on
//! them stands in for the hyperparameter draws they came with. The objective
//! and its gradient are exposed for inspection; `optimize_weights` climbs it.

use stump_fungus::models::normal::{self, NormalKernel};
use stump_fungus::stump::{
    optimize_weights, HyperSampleSet, OptimizerConfig, ProposalConfig, StumpMeta,
    WeightObjective, WeightedSampleSet,
};

fn main() -> stump_fungus::Result<()> {
    let kernel = NormalKernel::default();
    let set = WeightedSampleSet::new(
        normal::MODEL_ID,
        vec![vec![-0.5], vec![0.4], vec![1.6]],
        false,
        1,
        StumpMeta { seed: 0, n_hyper: 0, created: None },
    )?;
    // (mu, sigma) draws, here on a grid around (0.5, 1)
    let taus = (0..200)
        .map(|i| vec![0.5 + 0.02 * (i % 20) as f64 - 0.2, 0.8 + 0.04 * (i / 20) as f64])
        .collect();
    let hyper = HyperSampleSet::uniform(taus)?;

    let objective = WeightObjective::importance_normalized(
        &set,
        &hyper,
        &kernel,
        &ProposalConfig::default(),
        5,
    )?;
    let ones = vec![1.0; 3];
    let (value, grad) = objective.value_and_gradient(&ones)?;
    println!("at w = 1: objective {value:.4}, gradient {grad:.4?}");

    let (fitted, report) = optimize_weights(&set, &objective, &OptimizerConfig::default())?;
    println!(
        "after {} iterations: objective {:.4}, weights {:.3?}, normalizer ESS {:.0}",
        report.iterations,
        report.final_objective,
        fitted.weights(),
        report.normalizer_ess
    );
    Ok(())
}
