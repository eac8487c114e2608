//! Sampling a hand-written model.
//!
//! A model only states its parameter space and a log density generic over
//! the scalar type; gradients come from the tape.

use stump_fungus::ad::Real;
use stump_fungus::diagnostics::summarize;
use stump_fungus::dist::normal_lpdf;
use stump_fungus::hmc::{run_chain, HmcConfig};
use stump_fungus::model::{check_gradient, Model};
use stump_fungus::space::{ParameterSpace, TransformKind};

/// Exponential waiting times with a Gamma(2, 1) prior on the rate, plus an
/// unrelated standard normal for company.
struct Waiting {
    times: Vec<f64>,
    space: ParameterSpace,
}

impl Model for Waiting {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_real<R: Real>(&self, v: &[R]) -> R {
        let rate = v[0].exp();
        let n = self.times.len() as f64;
        let total: f64 = self.times.iter().sum();
        // Gamma(2, 1) prior, the likelihood, and the log transform's Jacobian
        rate.ln() - rate + rate.ln() * n - rate * total
            + self.space.log_jacobian_real(v)
            + normal_lpdf(v[1], R::from_f64(0.0), R::from_f64(1.0))
    }
}

fn main() -> stump_fungus::Result<()> {
    let model = Waiting {
        times: vec![0.8, 2.1, 0.3, 1.7, 0.9, 0.4, 1.2],
        space: ParameterSpace::new(vec![
            ("rate", 1, TransformKind::LogPositive),
            ("z", 1, TransformKind::Identity),
        ])?,
    };
    println!("gradient check: {:.1e}", check_gradient(&model, &[0.1, -0.3], 1e-5)?);

    let post = run_chain(&model, &HmcConfig { seed: 7, ..HmcConfig::default() })?;
    println!(
        "accept {:.2}, step {:.3}, {} divergences",
        post.accept_rate, post.step_size, post.divergences
    );
    // conjugate: rate | times ~ Gamma(2 + 7, 1 + 7.4)
    println!("exact rate mean {:.4}", 9.0 / 8.4);
    for s in summarize(&post)? {
        println!("{:<5} mean {:.4} sd {:.4} [{:.3}, {:.3}]", s.name, s.mean, s.sd, s.q05, s.q95);
    }
    Ok(())
}
