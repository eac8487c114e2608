//! Cross-classified linear regression of attainment on `(1, cc, vrq)`.
//!
//! Each pupil belongs to a secondary school, a sex and a primary school.
//! Every one of these hierarchies gives each of its groups a coefficient
//! vector and a log scale, and the likelihood multiplies one normal density
//! of the response per hierarchy. Given the data the three hierarchies are
//! therefore independent, and a new secondary school only involves the
//! secondary-school hierarchy.

use crate::ad::Real;
use crate::data::{AttainData, AttainRow};
use crate::dist::{normal_lpdf, normal_lpdf_log_scale};
use crate::error::Result;
use crate::space::{ParameterSpace, TransformKind};
use crate::stump::{GroupKernel, WeightedSampleSet};

use super::{EmpiricalBayes, GroupLikelihood, Hierarchical, Stacked, StumpFungus};

pub const MODEL_ID: &str = "attain";

/// Hierarchy prefixes in layout order.
pub const HIERARCHIES: [&str; 3] = ["sid.", "sex.", "pid."];

/// Index of the secondary-school hierarchy.
pub const SECONDARY: usize = 0;

/// `beta_k ~ Normal(mu_beta_k, sigma_beta_k)`, `ln sigma ~ Normal(mu_sigma,
/// sigma_sigma)`, flat prior on the means. The log scales are flat by
/// default or, with [`AttainKernel::with_scale_prior`], normal.
#[derive(Clone, Debug)]
pub struct AttainKernel {
    hyper: ParameterSpace,
    group: ParameterSpace,
    scale_prior: Option<(f64, f64)>,
}

impl AttainKernel {
    /// `ln sigma_beta_k, ln sigma_sigma ~ Normal(mean, sd)`.
    pub fn with_scale_prior(mean: f64, sd: f64) -> Self {
        AttainKernel {
            scale_prior: Some((mean, sd)),
            ..Self::default()
        }
    }
}

impl Default for AttainKernel {
    fn default() -> Self {
        AttainKernel {
            scale_prior: None,
            hyper: ParameterSpace::new(vec![
                ("mu_beta", 3, TransformKind::Identity),
                ("sigma_beta", 3, TransformKind::LogPositive),
                ("mu_sigma", 1, TransformKind::Identity),
                ("sigma_sigma", 1, TransformKind::LogPositive),
            ])
            .expect("static space"),
            group: ParameterSpace::new(vec![
                ("beta", 3, TransformKind::Identity),
                ("log_sigma", 1, TransformKind::Identity),
            ])
            .expect("static space"),
        }
    }
}

impl GroupKernel for AttainKernel {
    fn hyper_space(&self) -> &ParameterSpace {
        &self.hyper
    }
    fn group_space(&self) -> &ParameterSpace {
        &self.group
    }
    fn factor_count(&self) -> usize {
        4
    }
    fn log_hyperprior<R: Real>(&self, tau: &[R]) -> R {
        // densities in sigma: a density q in ln sigma is q / sigma in sigma
        let scales = [tau[3], tau[4], tau[5], tau[7]];
        R::sum(scales.iter().map(|&u| match self.scale_prior {
            None => -u,
            Some((m, sd)) => normal_lpdf(u, R::from_f64(m), R::from_f64(sd)) - u,
        }))
    }
    fn log_factor<R: Real>(&self, f: usize, theta: &[R], tau: &[R]) -> R {
        if f < 3 {
            normal_lpdf_log_scale(theta[f], tau[f], tau[3 + f])
        } else {
            normal_lpdf_log_scale(theta[3], tau[6], tau[7])
        }
    }
}

/// Pupils grouped by one hierarchy's membership.
#[derive(Clone, Debug)]
pub struct AttainLikelihood {
    members: Vec<Vec<([f64; 3], f64)>>,
}

impl AttainLikelihood {
    /// `hierarchy` indexes [`HIERARCHIES`].
    pub fn new(data: &AttainData, hierarchy: usize) -> Self {
        let count = group_count(data, hierarchy);
        let mut members = vec![Vec::new(); count];
        for r in data.rows() {
            members[membership(r, hierarchy)].push((r.x(), r.attain));
        }
        AttainLikelihood { members }
    }

    pub fn pupils(&self, group: usize) -> usize {
        self.members[group].len()
    }
}

fn group_count(data: &AttainData, hierarchy: usize) -> usize {
    match hierarchy {
        0 => data.secondary(),
        1 => AttainData::SEXES,
        _ => data.primary(),
    }
}

fn membership(r: &AttainRow, hierarchy: usize) -> usize {
    match hierarchy {
        0 => r.sid,
        1 => r.sex,
        _ => r.pid,
    }
}

impl GroupLikelihood for AttainLikelihood {
    fn group_count(&self) -> usize {
        self.members.len()
    }
    fn log_likelihood<R: Real>(&self, group: usize, theta: &[R]) -> R {
        R::sum(self.members[group].iter().map(|&(x, y)| {
            let mean = theta[0] * x[0] + theta[1] * x[1] + theta[2] * x[2];
            normal_lpdf_log_scale(R::from_f64(y), mean, theta[3])
        }))
    }
}

pub type AttainHierarchy = Hierarchical<AttainKernel, AttainLikelihood>;
pub type AttainHier = Stacked<AttainHierarchy>;
pub type AttainEb = EmpiricalBayes<AttainKernel, AttainLikelihood>;
pub type AttainSf = StumpFungus<AttainKernel, AttainLikelihood>;

/// All three hierarchies with every group; 24 hyperparameters.
pub fn attain_hier(data: &AttainData) -> Result<AttainHier> {
    attain_hier_without(data, None, &AttainKernel::default())
}

/// As [`attain_hier`] with one secondary school left out of the model.
pub fn attain_hier_without(
    data: &AttainData,
    school: Option<usize>,
    kernel: &AttainKernel,
) -> Result<AttainHier> {
    let parts = (0..3)
        .map(|h| {
            let lik = AttainLikelihood::new(data, h);
            let groups = (0..lik.group_count())
                .filter(|&g| !(h == SECONDARY && Some(g) == school))
                .collect();
            Ok((
                HIERARCHIES[h].to_string(),
                Hierarchical::with_groups(kernel.clone(), lik, groups)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Stacked::new(parts)
}

/// Columns of a hierarchy's hyperparameters within [`attain_hier`]'s layout.
pub fn hyper_columns(model: &AttainHier, hierarchy: usize) -> Vec<usize> {
    let off = model.offset(hierarchy);
    model.parts()[hierarchy]
        .hyper_columns()
        .into_iter()
        .map(|c| c + off)
        .collect()
}

/// Columns of every group of a hierarchy within [`attain_hier`]'s layout.
pub fn group_columns(model: &AttainHier, hierarchy: usize) -> Vec<Vec<usize>> {
    let off = model.offset(hierarchy);
    model.parts()[hierarchy]
        .group_columns()
        .into_iter()
        .map(|cols| cols.into_iter().map(|c| c + off).collect())
        .collect()
}

/// Secondary school `school` with the hierarchy's hyperparameters fixed
/// (constrained coordinates, [`AttainKernel`] order).
pub fn attain_eb(
    data: &AttainData,
    school: usize,
    fixed: &[f64],
    kernel: &AttainKernel,
) -> Result<AttainEb> {
    EmpiricalBayes::new(
        kernel.clone(),
        AttainLikelihood::new(data, SECONDARY),
        vec![school],
        fixed,
    )
}

/// Secondary-school hyperparameters conditioned on a per-component stump,
/// with school `school`'s pupils as the fungus.
pub fn attain_sf(
    stump: &WeightedSampleSet,
    data: &AttainData,
    school: usize,
    kernel: &AttainKernel,
) -> Result<AttainSf> {
    StumpFungus::new(
        MODEL_ID,
        kernel.clone(),
        stump,
        Some((AttainLikelihood::new(data, SECONDARY), school)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AttainSizes;
    use crate::model::{check_gradient, Model};

    #[test]
    fn full_size_parameter_count() {
        let data = AttainData::synthesize(0, AttainSizes::default()).unwrap();
        let m = attain_hier(&data).unwrap();
        assert_eq!(m.space().dim(), (19 + 2 + 148) * 4 + 24);
        assert_eq!(m.space().names()[0], "sid.mu_beta[0]");
    }

    #[test]
    fn leaving_out_a_school_drops_its_block() {
        let data = AttainData::synthesize(0, AttainSizes::reduced()).unwrap();
        let full = attain_hier(&data).unwrap();
        let loo = attain_hier_without(&data.without_secondary(2), Some(2), &AttainKernel::default()).unwrap();
        assert_eq!(full.space().dim() - loo.space().dim(), 4);
        assert!(!loo.space().names().iter().any(|n| n.starts_with("sid.beta[2]")));
        assert_eq!(group_columns(&loo, SECONDARY).len(), 5);
        assert_eq!(hyper_columns(&loo, 2)[0], loo.offset(2));
    }

    #[test]
    fn one_group_is_bayesian_regression() {
        // with tau fixed and one group, the beta posterior is a regression
        // posterior: the log density is quadratic in beta
        let data = AttainData::synthesize(3, AttainSizes {
            pupils: 40,
            primary: 1,
            secondary: 1,
        })
        .unwrap();
        let tau = [0.0, 0.0, 0.0, 10.0, 10.0, 10.0, 0.0, 10.0];
        let m = attain_eb(&data, 0, &tau, &AttainKernel::default()).unwrap();
        let f = |b: f64| Model::log_density_real::<f64>(&m, &[b, 0.1, 0.2, 0.0]);
        let (a, b, c) = (f(-1.0), f(0.0), f(1.0));
        let second = a - 2.0 * b + c;
        for x in [-2.0, 0.5, 3.0] {
            let quad = b + (c - a) / 2.0 * x + second / 2.0 * x * x;
            assert!((f(x) - quad).abs() < 1e-9);
        }
    }

    #[test]
    fn gradients() {
        let data = AttainData::synthesize(1, AttainSizes {
            pupils: 60,
            primary: 4,
            secondary: 3,
        })
        .unwrap();
        let m = attain_hier(&data).unwrap();
        let v: Vec<f64> = (0..m.space().dim())
            .map(|i| ((i * 5) % 9) as f64 * 0.1 - 0.4)
            .collect();
        assert!(check_gradient(&m, &v, 1e-5).unwrap() <= 1e-5);
    }
}
