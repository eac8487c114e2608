//! Six boxes of marbles, one left out at a time.
//!
//! The held-out box is fitted against a ten-point stump of the others and,
//! for contrast, with the box-level mean fixed at its point estimate. Both
//! are scored by KS distance to the full hierarchical posterior.
//!
//!     cargo run --release --example marbles -- [seed]

use stump_fungus::data::MarblesData;
use stump_fungus::hmc::HmcConfig;
use stump_fungus::studies::{marbles_study, StumpConfig};

fn main() -> stump_fungus::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let data = MarblesData::synthesize(
        seed,
        &MarblesData::DEFAULT_WHITE,
        MarblesData::MARBLES_PER_BOX,
        5,
    )?;
    for (b, (w, k)) in data.counts().iter().enumerate() {
        println!("box {b}: {w} white, {k} black");
    }

    let r = marbles_study(&data, &HmcConfig::default(), &StumpConfig::default(), seed)?;
    println!("\nbox   KS stump   KS fixed p0");
    for c in &r.per_box {
        println!("{:>3} {:>10.4} {:>13.4}", c.group, c.ks_sf, c.ks_eb);
    }
    println!("med {:>10.4} {:>13.4}", r.median_ks_sf, r.median_ks_eb);
    Ok(())
}
