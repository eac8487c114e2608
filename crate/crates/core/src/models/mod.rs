//! Generic model roles built from a [`GroupKernel`] and a [`GroupLikelihood`],
//! plus the shipped case studies.
//!
//! * [`Hierarchical`]: hyperparameters and every listed group, fitted jointly.
//! * [`EmpiricalBayes`]: hyperparameters fixed, groups fitted independently.
//! * [`StumpFungus`]: hyperparameters conditioned on a weighted sample set,
//!   plus one new group and its data.

pub mod attain;
pub mod marbles;
pub mod normal;
pub mod rats;

use crate::ad::Real;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::space::ParameterSpace;
use crate::stump::{GroupKernel, PreparedStump, WeightedSampleSet};

/// Observations split by group. `theta` is in unconstrained coordinates of the
/// kernel's group space.
pub trait GroupLikelihood: Send + Sync {
    fn group_count(&self) -> usize;
    fn log_likelihood<R: Real>(&self, group: usize, theta: &[R]) -> R;
}

/// Likelihood with no groups, for models that condition only on a stump.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoData;

impl GroupLikelihood for NoData {
    fn group_count(&self) -> usize {
        0
    }
    fn log_likelihood<R: Real>(&self, _group: usize, _theta: &[R]) -> R {
        R::from_f64(0.0)
    }
}

/// Names of group `g`'s block: `name[g]`.
fn group_block(space: &ParameterSpace, g: usize) -> Result<ParameterSpace> {
    space.map_names(|n| format!("{n}[{g}]"))
}

fn check_groups(groups: &[usize], available: usize) -> Result<()> {
    if let Some(&g) = groups.iter().find(|&&g| g >= available) {
        return Err(Error::InvalidData(format!(
            "group {g} out of range (have {available})"
        )));
    }
    let mut sorted = groups.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidData("groups listed twice".into()));
    }
    Ok(())
}

fn to_real<R: Real>(v: &[f64]) -> Vec<R> {
    v.iter().map(|&x| R::from_f64(x)).collect()
}

/// Layout `[tau | theta_{g_1} | theta_{g_2} | ...]`.
pub struct Hierarchical<K, L> {
    kernel: K,
    likelihood: L,
    groups: Vec<usize>,
    space: ParameterSpace,
}

impl<K: GroupKernel, L: GroupLikelihood> Hierarchical<K, L> {
    pub fn new(kernel: K, likelihood: L) -> Result<Self> {
        let groups = (0..likelihood.group_count()).collect();
        Self::with_groups(kernel, likelihood, groups)
    }

    /// Only the listed groups of `likelihood` enter the model. Names keep the
    /// original group indices.
    pub fn with_groups(kernel: K, likelihood: L, groups: Vec<usize>) -> Result<Self> {
        check_groups(&groups, likelihood.group_count())?;
        let blocks = groups
            .iter()
            .map(|&g| group_block(kernel.group_space(), g))
            .collect::<Result<Vec<_>>>()?;
        let space =
            ParameterSpace::join(std::iter::once(kernel.hyper_space()).chain(blocks.iter()))?;
        Ok(Hierarchical {
            kernel,
            likelihood,
            groups,
            space,
        })
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn likelihood(&self) -> &L {
        &self.likelihood
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn hyper_columns(&self) -> Vec<usize> {
        (0..self.kernel.hyper_space().dim()).collect()
    }

    /// Columns of every included group, in `groups()` order.
    pub fn group_columns(&self) -> Vec<Vec<usize>> {
        let h = self.kernel.hyper_space().dim();
        let d = self.kernel.group_space().dim();
        (0..self.groups.len())
            .map(|i| (h + i * d..h + (i + 1) * d).collect())
            .collect()
    }

    /// Columns of original group `g`, if included.
    pub fn columns_of(&self, g: usize) -> Option<Vec<usize>> {
        let i = self.groups.iter().position(|&x| x == g)?;
        Some(self.group_columns().swap_remove(i))
    }
}

impl<K: GroupKernel, L: GroupLikelihood> Model for Hierarchical<K, L> {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_real<R: Real>(&self, v: &[R]) -> R {
        let hs = self.kernel.hyper_space();
        let gs = self.kernel.group_space();
        let (tau, rest) = v.split_at(hs.dim());
        let mut acc = self.kernel.log_hyperprior(tau) + hs.log_jacobian_real(tau);
        for (theta, &g) in rest.chunks(gs.dim()).zip(&self.groups) {
            acc += self.kernel.log_group_density(theta, tau)
                + gs.log_jacobian_real(theta)
                + self.likelihood.log_likelihood(g, theta);
        }
        acc
    }
}

/// Groups fitted with the hyperparameters held at a point estimate.
pub struct EmpiricalBayes<K, L> {
    kernel: K,
    likelihood: L,
    groups: Vec<usize>,
    tau: Vec<f64>,
    space: ParameterSpace,
}

impl<K: GroupKernel, L: GroupLikelihood> EmpiricalBayes<K, L> {
    /// `tau` is given in constrained coordinates.
    pub fn new(kernel: K, likelihood: L, groups: Vec<usize>, tau: &[f64]) -> Result<Self> {
        check_groups(&groups, likelihood.group_count())?;
        if groups.is_empty() {
            return Err(Error::InvalidData("no groups to fit".into()));
        }
        let hs = kernel.hyper_space();
        if tau.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("fixed hyperparameters must be finite".into()));
        }
        for (t, &x) in hs.transforms().iter().zip(tau) {
            let inside = match t {
                crate::space::TransformKind::Identity => true,
                crate::space::TransformKind::LogPositive => x > 0.0,
                crate::space::TransformKind::LogitUnit => x > 0.0 && x < 1.0,
            };
            if !inside {
                return Err(Error::Config(format!(
                    "fixed hyperparameter {x} is outside its support"
                )));
            }
        }
        let tau = hs.to_unconstrained(tau)?;
        let blocks = groups
            .iter()
            .map(|&g| group_block(kernel.group_space(), g))
            .collect::<Result<Vec<_>>>()?;
        let space = ParameterSpace::join(blocks.iter())?;
        Ok(EmpiricalBayes {
            kernel,
            likelihood,
            groups,
            tau,
            space,
        })
    }

    pub fn columns_of(&self, g: usize) -> Option<Vec<usize>> {
        let i = self.groups.iter().position(|&x| x == g)?;
        let d = self.kernel.group_space().dim();
        Some((i * d..(i + 1) * d).collect())
    }
}

impl<K: GroupKernel, L: GroupLikelihood> Model for EmpiricalBayes<K, L> {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_real<R: Real>(&self, v: &[R]) -> R {
        let gs = self.kernel.group_space();
        let tau: Vec<R> = to_real(&self.tau);
        let mut acc = R::from_f64(0.0);
        for (theta, &g) in v.chunks(gs.dim()).zip(&self.groups) {
            acc += self.kernel.log_group_density(theta, &tau)
                + gs.log_jacobian_real(theta)
                + self.likelihood.log_likelihood(g, theta);
        }
        acc
    }
}

/// Layout `[tau | theta_new]`, or just `[tau]` without a fungus.
pub struct StumpFungus<K, L> {
    kernel: K,
    stump: PreparedStump,
    fungus: Option<(L, usize)>,
    space: ParameterSpace,
}

impl<K: GroupKernel, L: GroupLikelihood> StumpFungus<K, L> {
    /// `fungus` pairs a likelihood with the group of it that is new. Fails
    /// when the stump was built for a different model.
    pub fn new(
        model_id: &str,
        kernel: K,
        stump: &WeightedSampleSet,
        fungus: Option<(L, usize)>,
    ) -> Result<Self> {
        if stump.model_id != model_id {
            return Err(Error::ModelMismatch {
                stump: stump.model_id.clone(),
                model: model_id.to_string(),
            });
        }
        let prepared = PreparedStump::new(stump, &kernel)?;
        let space = match &fungus {
            None => kernel.hyper_space().clone(),
            Some((lik, g)) => {
                check_groups(&[*g], lik.group_count())?;
                kernel
                    .hyper_space()
                    .concat(&group_block(kernel.group_space(), *g)?, "")?
            }
        };
        Ok(StumpFungus {
            kernel,
            stump: prepared,
            fungus,
            space,
        })
    }

    pub fn hyper_columns(&self) -> Vec<usize> {
        (0..self.kernel.hyper_space().dim()).collect()
    }

    /// Columns of the new group's parameters; empty without a fungus.
    pub fn fungus_columns(&self) -> Vec<usize> {
        if self.fungus.is_none() {
            return Vec::new();
        }
        let h = self.kernel.hyper_space().dim();
        (h..h + self.kernel.group_space().dim()).collect()
    }
}

impl<K: GroupKernel, L: GroupLikelihood> Model for StumpFungus<K, L> {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_real<R: Real>(&self, v: &[R]) -> R {
        let hs = self.kernel.hyper_space();
        let (tau, theta) = v.split_at(hs.dim());
        let mut acc = self.kernel.log_hyperprior(tau)
            + hs.log_jacobian_real(tau)
            + self.stump.log_density(&self.kernel, tau);
        if let Some((lik, g)) = &self.fungus {
            acc += self.kernel.log_group_density(theta, tau)
                + self.kernel.group_space().log_jacobian_real(theta)
                + lik.log_likelihood(*g, theta);
        }
        acc
    }
}

/// Independent models side by side, each under a name prefix.
pub struct Stacked<M> {
    parts: Vec<M>,
    offsets: Vec<usize>,
    space: ParameterSpace,
}

impl<M: Model> Stacked<M> {
    pub fn new(parts: Vec<(String, M)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Space("nothing to stack".into()));
        }
        let spaces: Vec<ParameterSpace> =
            parts.iter().map(|(p, m)| m.space().prefixed(p)).collect();
        let space = ParameterSpace::join(spaces.iter())?;
        let mut offsets = Vec::with_capacity(parts.len() + 1);
        let mut off = 0;
        for (_, m) in &parts {
            offsets.push(off);
            off += m.space().dim();
        }
        offsets.push(off);
        Ok(Stacked {
            parts: parts.into_iter().map(|(_, m)| m).collect(),
            offsets,
            space,
        })
    }

    pub fn parts(&self) -> &[M] {
        &self.parts
    }

    /// Offset of part `i`'s first coordinate.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }
}

impl<M: Model> Model for Stacked<M> {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_real<R: Real>(&self, v: &[R]) -> R {
        R::sum(
            self.parts
                .iter()
                .enumerate()
                .map(|(i, m)| m.log_density_real(&v[self.offsets[i]..self.offsets[i + 1]])),
        )
    }
}
