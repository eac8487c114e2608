//! Tumor incidence in 71 groups of rats.
//!
//! A stump built from the first 70 experiments is reused for all 71: each
//! experiment is refitted with only its own rate and the two hyperparameters.

use stump_fungus::data::RatsData;
use stump_fungus::hmc::HmcConfig;
use stump_fungus::studies::{rats_study, variance, StumpConfig};

fn main() -> stump_fungus::Result<()> {
    let data = RatsData::bundled();
    let r = rats_study(&data, 70, &HmcConfig::default(), &StumpConfig::default(), 1)?;

    println!(" g   y/n     unpooled  hier    stump");
    for (g, &(n, y)) in data.rows().iter().enumerate().step_by(7) {
        println!(
            "{g:>2} {y:>3}/{n:<3} {:>8.3} {:>7.3} {:>7.3}",
            r.unpooled_means[g], r.hier_means[g], r.sf_means[g]
        );
    }
    println!(
        "\nvariance of means: unpooled {:.5}, hierarchical {:.5}",
        variance(&r.unpooled_means),
        variance(&r.hier_means)
    );
    println!("stump within 0.05 of hierarchical: {:.0}%", 100.0 * r.agreement(0.05));
    println!(
        "wall time: hierarchical {:.2} s, one stump fit {:.3} s",
        r.hier_seconds, r.sf_seconds
    );
    Ok(())
}
