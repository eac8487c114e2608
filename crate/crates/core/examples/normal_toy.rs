//! Conditioning on a weighted sample set instead of the data it stands in for.
//!
//! `mu` and `sigma` are fitted to ten observations. A second sample of ten
//! points, drawn from the predictive, gets weights chosen so that
//! conditioning on it stochastically recovers the first posterior.

use stump_fungus::hmc::HmcConfig;
use stump_fungus::studies::{normal_study, StumpConfig};

fn main() -> stump_fungus::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let r = normal_study(&HmcConfig::default(), &StumpConfig::default(), seed)?;

    println!("weights:");
    for w in &r.weights {
        print!(" {w:.3}");
    }
    println!();
    println!(
        "optimizer: {} iterations, objective {:.3} -> {:.3}",
        r.optimization.iterations, r.optimization.initial_objective, r.optimization.final_objective
    );
    println!("KS against conditioning on the data itself");
    println!("             mu      sigma");
    println!("fitted   {:>7.4} {:>9.4}", r.ks_weighted[0], r.ks_weighted[1]);
    println!("w = 1    {:>7.4} {:>9.4}", r.ks_unweighted[0], r.ks_unweighted[1]);
    Ok(())
}
