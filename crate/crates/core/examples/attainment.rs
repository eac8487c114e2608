//! Cross-classified regression at a reduced size: 500 pupils in 20 primary
//! and 6 secondary schools.
//!
//! Each secondary school is held out and refitted from a per-component stump
//! of the others, with 10 and with 20 stump samples. This takes a few minutes
//! in release mode.

use stump_fungus::hmc::HmcConfig;
use stump_fungus::models::attain::AttainKernel;
use stump_fungus::studies::{attain_study, reduced_attainment, StumpConfig};

fn main() -> stump_fungus::Result<()> {
    let data = reduced_attainment(1)?;
    // a flat prior on the log scales leaves the full fit with a funnel the
    // sampler cannot cross
    let kernel = AttainKernel::with_scale_prior(-1.0, 1.0);
    let r = attain_study(&data, &kernel, &[10, 20], &HmcConfig::default(), &StumpConfig::default(), 1)?;

    println!("median KS over secondary-school parameters");
    for ((m, ks), t) in r.sizes.iter().zip(&r.median_ks_sf).zip(&r.sf_seconds) {
        println!("  stump M = {m:<3} {ks:.4}   ({t:.2} s per school)");
    }
    println!("  fixed hyper    {:.4}", r.median_ks_eb);
    println!("hierarchical fit: {:.2} s", r.hier_seconds);
    Ok(())
}
