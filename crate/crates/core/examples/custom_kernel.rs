//! The stump-and-fungus pattern for a model of your own.
//!
//! Counts at a number of sites follow Poisson rates with a lognormal spread.
//! Fit all sites but one, compress the site-level posterior into a weighted
//! stump, then fit the remaining site against the stump alone and compare
//! with the full fit.

use stump_fungus::ad::Real;
use stump_fungus::diagnostics::ks_two_sample;
use stump_fungus::dist::normal_lpdf;
use stump_fungus::hmc::{run_chain, HmcConfig};
use stump_fungus::models::{GroupLikelihood, Hierarchical, StumpFungus};
use stump_fungus::space::{ParameterSpace, TransformKind};
use stump_fungus::studies::{build_stump, StumpConfig};
use stump_fungus::stump::GroupKernel;

#[derive(Clone)]
struct LogNormalRates {
    hyper: ParameterSpace,
    group: ParameterSpace,
}

impl GroupKernel for LogNormalRates {
    fn hyper_space(&self) -> &ParameterSpace {
        &self.hyper
    }
    fn group_space(&self) -> &ParameterSpace {
        &self.group
    }
    fn log_hyperprior<R: Real>(&self, tau: &[R]) -> R {
        // weakly informative on ln s; a flat one makes a funnel
        normal_lpdf(tau[1], R::from_f64(0.0), R::from_f64(1.0)) - tau[1]
    }
    fn log_factor<R: Real>(&self, _f: usize, theta: &[R], tau: &[R]) -> R {
        normal_lpdf(theta[0], tau[0], tau[1].exp())
    }
}

struct Counts(Vec<Vec<u64>>);

impl GroupLikelihood for Counts {
    fn group_count(&self) -> usize {
        self.0.len()
    }
    fn log_likelihood<R: Real>(&self, g: usize, theta: &[R]) -> R {
        let rate = theta[0].exp();
        R::sum(self.0[g].iter().map(|&y| theta[0] * y as f64 - rate))
    }
}

fn main() -> stump_fungus::Result<()> {
    let kernel = LogNormalRates {
        hyper: ParameterSpace::new(vec![
            ("m", 1, TransformKind::Identity),
            ("s", 1, TransformKind::LogPositive),
        ])?,
        group: ParameterSpace::new(vec![("log_rate", 1, TransformKind::Identity)])?,
    };
    let counts = || {
        Counts(vec![
            vec![3, 5, 2, 4],
            vec![0, 1, 1],
            vec![7, 9, 6, 8, 10],
            vec![2, 2, 3],
            vec![4, 6],
            vec![1, 3, 2, 2],
            vec![5, 4, 6],
        ])
    };
    let new_site = 6;
    let hmc = HmcConfig { seed: 3, ..HmcConfig::default() };

    let training = Hierarchical::with_groups(kernel.clone(), counts(), (0..new_site).collect())?;
    let post = run_chain(&training, &hmc)?;
    let (stump, report) = build_stump(
        &kernel,
        "counts",
        &post,
        &training.hyper_columns(),
        &training.group_columns(),
        false,
        &StumpConfig::default(),
        11,
    )?;
    println!("stump weights after {} iterations:", report.iterations);
    for (x, w) in stump.samples().iter().zip(stump.weights()) {
        println!("  log_rate {:>7.3}  weight {w:>6.3}", x[0]);
    }

    let sf = StumpFungus::new("counts", kernel.clone(), &stump, Some((counts(), new_site)))?;
    let sf_post = run_chain(&sf, &hmc)?;
    let full = Hierarchical::new(kernel, counts())?;
    let full_post = run_chain(&full, &hmc)?;

    let name = format!("log_rate[{new_site}]");
    let a = sf_post.column_by_name(&name).expect("fungus column");
    let b = full_post.column_by_name(&name).expect("full column");
    println!(
        "{name}: stump fit {:.2} s, full fit {:.2} s, KS {:.4}",
        sf_post.wall_time_seconds,
        full_post.wall_time_seconds,
        ks_two_sample(&a, &b)?
    );
    Ok(())
}
