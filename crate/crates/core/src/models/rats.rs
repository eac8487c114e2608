//! Tumor incidence across experiments, binomial counts with beta-distributed
//! rates and `p(alpha, beta) ~ (alpha + beta)^(-5/2)`.

use crate::ad::Real;
use crate::data::RatsData;
use crate::dist::{beta_lpdf_logit, binomial_logit_lpmf};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::space::{ParameterSpace, TransformKind};
use crate::stump::{GroupKernel, WeightedSampleSet};

use super::{GroupLikelihood, Hierarchical, StumpFungus};

pub const MODEL_ID: &str = "rats";

#[derive(Clone, Debug)]
pub struct RatsKernel {
    hyper: ParameterSpace,
    group: ParameterSpace,
}

impl Default for RatsKernel {
    fn default() -> Self {
        RatsKernel {
            hyper: ParameterSpace::new(vec![
                ("alpha", 1, TransformKind::LogPositive),
                ("beta", 1, TransformKind::LogPositive),
            ])
            .expect("static space"),
            group: ParameterSpace::new(vec![("p", 1, TransformKind::LogitUnit)])
                .expect("static space"),
        }
    }
}

impl GroupKernel for RatsKernel {
    fn hyper_space(&self) -> &ParameterSpace {
        &self.hyper
    }
    fn group_space(&self) -> &ParameterSpace {
        &self.group
    }
    fn log_hyperprior<R: Real>(&self, tau: &[R]) -> R {
        -((tau[0].exp() + tau[1].exp()).ln() * 2.5)
    }
    fn log_factor<R: Real>(&self, _f: usize, theta: &[R], tau: &[R]) -> R {
        beta_lpdf_logit(theta[0], tau[0].exp(), tau[1].exp())
    }
}

#[derive(Clone, Debug)]
pub struct RatsLikelihood {
    rows: Vec<(u64, u64)>,
}

impl RatsLikelihood {
    pub fn new(data: &RatsData) -> Self {
        RatsLikelihood {
            rows: data.rows().to_vec(),
        }
    }
}

impl GroupLikelihood for RatsLikelihood {
    fn group_count(&self) -> usize {
        self.rows.len()
    }
    fn log_likelihood<R: Real>(&self, group: usize, theta: &[R]) -> R {
        let (n, y) = self.rows[group];
        binomial_logit_lpmf(y, n, theta[0])
    }
}

pub type RatsHier = Hierarchical<RatsKernel, RatsLikelihood>;
pub type RatsSf = StumpFungus<RatsKernel, RatsLikelihood>;

pub fn rats_hier(data: &RatsData) -> Result<RatsHier> {
    Hierarchical::new(RatsKernel::default(), RatsLikelihood::new(data))
}

/// `(alpha, beta, p_g)` with experiment `g` of `data` as the fungus.
pub fn rats_sf(stump: &WeightedSampleSet, data: &RatsData, g: usize) -> Result<RatsSf> {
    StumpFungus::new(
        MODEL_ID,
        RatsKernel::default(),
        stump,
        Some((RatsLikelihood::new(data), g)),
    )
}

/// One experiment on its own: `p ~ Beta(1, 1)`, `y ~ Binomial(n, p)`.
#[derive(Clone, Debug)]
pub struct RatsUnpooled {
    n: u64,
    y: u64,
    space: ParameterSpace,
}

pub fn rats_unpooled(n: u64, y: u64) -> Result<RatsUnpooled> {
    if y > n {
        return Err(Error::InvalidData(format!("y = {y} exceeds n = {n}")));
    }
    Ok(RatsUnpooled {
        n,
        y,
        space: ParameterSpace::new(vec![("p", 1, TransformKind::LogitUnit)])
            .expect("static space"),
    })
}

impl Model for RatsUnpooled {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }
    fn log_density_real<R: Real>(&self, v: &[R]) -> R {
        binomial_logit_lpmf(self.y, self.n, v[0]) + self.space.log_jacobian_real(v)
    }
}
