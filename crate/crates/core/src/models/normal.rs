//! Inferring the mean and scale of a normal from ten observations.

use crate::ad::Real;
use crate::dist::normal_lpdf;
use crate::error::Result;
use crate::model::Model;
use crate::space::{ParameterSpace, TransformKind};
use crate::stump::{GroupKernel, StumpMeta, WeightedSampleSet};

use super::{NoData, StumpFungus};

pub const MODEL_ID: &str = "normal";

/// Observations the posterior is fitted to.
pub const Y: [f64; 10] = [-1.33, -0.61, -0.20, 0.34, 0.71, 1.23, 1.45, 1.47, 1.83, 2.05];

/// A second sample from the posterior predictive, used as the weighted set.
pub const Y_TILDE: [f64; 10] = [-2.77, -1.80, -0.71, -0.62, 0.31, 0.38, 0.43, 0.70, 1.66, 2.6];

/// `x ~ Normal(mu, sigma)` with a flat prior on `(mu, ln sigma)`.
#[derive(Clone, Debug)]
pub struct NormalKernel {
    hyper: ParameterSpace,
    group: ParameterSpace,
}

impl Default for NormalKernel {
    fn default() -> Self {
        NormalKernel {
            hyper: ParameterSpace::new(vec![
                ("mu", 1, TransformKind::Identity),
                ("sigma", 1, TransformKind::LogPositive),
            ])
            .expect("static space"),
            group: ParameterSpace::new(vec![("x", 1, TransformKind::Identity)])
                .expect("static space"),
        }
    }
}

impl GroupKernel for NormalKernel {
    fn hyper_space(&self) -> &ParameterSpace {
        &self.hyper
    }
    fn group_space(&self) -> &ParameterSpace {
        &self.group
    }
    fn log_hyperprior<R: Real>(&self, tau: &[R]) -> R {
        // flat in ln sigma is 1/sigma in sigma
        -tau[1]
    }
    fn log_factor<R: Real>(&self, _f: usize, theta: &[R], tau: &[R]) -> R {
        normal_lpdf(theta[0], tau[0], tau[1].exp())
    }
}

/// Deterministic conditioning on a fixed data vector.
#[derive(Clone, Debug)]
pub struct NormalModel {
    kernel: NormalKernel,
    data: Vec<f64>,
}

impl NormalModel {
    pub fn new(data: Vec<f64>) -> Self {
        NormalModel {
            kernel: NormalKernel::default(),
            data,
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

impl Model for NormalModel {
    fn space(&self) -> &ParameterSpace {
        &self.kernel.hyper
    }

    fn log_density_real<R: Real>(&self, v: &[R]) -> R {
        // flat prior on (mu, ln sigma): nothing beyond the likelihood
        let sigma = v[1].exp();
        R::sum(
            self.data
                .iter()
                .map(|&y| normal_lpdf(R::from_f64(y), v[0], sigma)),
        )
    }
}

/// The model conditioned on `Y`, with `Y` and `Y_TILDE`.
pub fn normal_toy() -> (NormalModel, Vec<f64>, Vec<f64>) {
    (NormalModel::new(Y.to_vec()), Y.to_vec(), Y_TILDE.to_vec())
}

/// `Y_TILDE` as a unit-weight sample set.
pub fn surrogate_set() -> WeightedSampleSet {
    WeightedSampleSet::new(
        MODEL_ID,
        Y_TILDE.iter().map(|&y| vec![y]).collect(),
        false,
        1,
        StumpMeta {
            seed: 0,
            n_hyper: 0,
            created: None,
        },
    )
    .expect("static set")
}

/// Hyperparameters conditioned stochastically on a weighted set of points.
pub fn normal_stochastic(set: &WeightedSampleSet) -> Result<StumpFungus<NormalKernel, NoData>> {
    StumpFungus::new(MODEL_ID, NormalKernel::default(), set, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_gradient;

    #[test]
    fn unit_weights_match_deterministic_conditioning() {
        let set = WeightedSampleSet::new(
            MODEL_ID,
            Y.iter().map(|&y| vec![y]).collect(),
            false,
            1,
            surrogate_set().meta,
        )
        .unwrap();
        let sf = normal_stochastic(&set).unwrap();
        let (det, _, _) = normal_toy();
        for v in [[0.3, -0.2], [1.0, 0.4], [-2.0, 1.5]] {
            let a = Model::log_density_real::<f64>(&sf, &v);
            let b = Model::log_density_real::<f64>(&det, &v);
            assert!((a - b).abs() < 1e-10, "{a} {b}");
        }
    }

    #[test]
    fn gradients() {
        let (m, _, _) = normal_toy();
        assert!(check_gradient(&m, &[0.5, 0.1], 1e-5).unwrap() <= 1e-5);
        let sf = normal_stochastic(&surrogate_set()).unwrap();
        assert!(check_gradient(&sf, &[0.5, 0.1], 1e-5).unwrap() <= 1e-5);
    }
}
