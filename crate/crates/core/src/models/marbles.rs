//! Boxes of marbles with a shared white-fraction prior.
//!
//! `p0 ~ Uniform(0, 1)`, `p_b | p0 ~ Beta(K p0, K (1 - p0))` with `K` marbles
//! per box, and each draw from box `b` is white with probability `p_b`.

use crate::ad::Real;
use crate::data::MarblesData;
use crate::dist::beta_lpdf_logit;
use crate::error::{Error, Result};
use crate::space::{ParameterSpace, TransformKind};
use crate::stump::{GroupKernel, WeightedSampleSet};

use super::{EmpiricalBayes, GroupLikelihood, Hierarchical, StumpFungus};

pub const MODEL_ID: &str = "marbles";

#[derive(Clone, Debug)]
pub struct MarblesKernel {
    concentration: f64,
    hyper: ParameterSpace,
    group: ParameterSpace,
}

impl MarblesKernel {
    pub fn new(marbles_per_box: usize) -> Self {
        MarblesKernel {
            concentration: marbles_per_box as f64,
            hyper: ParameterSpace::new(vec![("p0", 1, TransformKind::LogitUnit)])
                .expect("static space"),
            group: ParameterSpace::new(vec![("p", 1, TransformKind::LogitUnit)])
                .expect("static space"),
        }
    }
}

impl GroupKernel for MarblesKernel {
    fn hyper_space(&self) -> &ParameterSpace {
        &self.hyper
    }
    fn group_space(&self) -> &ParameterSpace {
        &self.group
    }
    fn log_hyperprior<R: Real>(&self, _tau: &[R]) -> R {
        R::from_f64(0.0)
    }
    fn log_factor<R: Real>(&self, _f: usize, theta: &[R], tau: &[R]) -> R {
        let k = self.concentration;
        beta_lpdf_logit(theta[0], tau[0].sigmoid() * k, (-tau[0]).sigmoid() * k)
    }
}

/// White and black counts per box.
#[derive(Clone, Debug)]
pub struct MarblesLikelihood {
    counts: Vec<(u32, u32)>,
}

impl MarblesLikelihood {
    pub fn new(data: &MarblesData) -> Self {
        MarblesLikelihood {
            counts: data.counts(),
        }
    }
}

impl GroupLikelihood for MarblesLikelihood {
    fn group_count(&self) -> usize {
        self.counts.len()
    }
    fn log_likelihood<R: Real>(&self, group: usize, theta: &[R]) -> R {
        let (white, black) = self.counts[group];
        let mut acc = R::from_f64(0.0);
        if white > 0 {
            acc += theta[0].log_sigmoid() * white as f64;
        }
        if black > 0 {
            acc += (-theta[0]).log_sigmoid() * black as f64;
        }
        acc
    }
}

pub type MarblesHier = Hierarchical<MarblesKernel, MarblesLikelihood>;
pub type MarblesEb = EmpiricalBayes<MarblesKernel, MarblesLikelihood>;
pub type MarblesSf = StumpFungus<MarblesKernel, MarblesLikelihood>;

pub fn marbles_hier(data: &MarblesData) -> Result<MarblesHier> {
    Hierarchical::new(
        MarblesKernel::new(data.marbles_per_box()),
        MarblesLikelihood::new(data),
    )
}

/// Hierarchical model over a subset of the boxes.
pub fn marbles_hier_subset(data: &MarblesData, boxes: Vec<usize>) -> Result<MarblesHier> {
    Hierarchical::with_groups(
        MarblesKernel::new(data.marbles_per_box()),
        MarblesLikelihood::new(data),
        boxes,
    )
}

/// Every box with `p0` fixed.
pub fn marbles_eb(data: &MarblesData, p0_fixed: f64) -> Result<MarblesEb> {
    marbles_eb_subset(data, (0..data.boxes()).collect(), p0_fixed)
}

pub fn marbles_eb_subset(data: &MarblesData, boxes: Vec<usize>, p0_fixed: f64) -> Result<MarblesEb> {
    if !(p0_fixed > 0.0 && p0_fixed < 1.0) {
        return Err(Error::Config(format!("p0 = {p0_fixed} is outside (0, 1)")));
    }
    EmpiricalBayes::new(
        MarblesKernel::new(data.marbles_per_box()),
        MarblesLikelihood::new(data),
        boxes,
        &[p0_fixed],
    )
}

/// `(p0, p_b)` with box `b`'s draws as the fungus.
pub fn marbles_sf(stump: &WeightedSampleSet, data: &MarblesData, b: usize) -> Result<MarblesSf> {
    StumpFungus::new(
        MODEL_ID,
        MarblesKernel::new(data.marbles_per_box()),
        stump,
        Some((MarblesLikelihood::new(data), b)),
    )
}
