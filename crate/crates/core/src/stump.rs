//! Weighted sample sets standing in for the group-parameter posterior.
//!
//! A hierarchical fit on training data yields draws of every group's
//! parameters and of the hyperparameters. [`draw_sample_set`] picks `M` of
//! the group draws; [`optimize_weights`] then chooses one weight per draw
//! (or per independent component of a draw) so that conditioning the
//! hyperparameters on the weighted set, via [`log_stoch_cond`], reproduces
//! their training posterior as closely as possible in KL divergence.
//!
//! Two estimators of the objective are available through [`WeightObjective`]:
//!
//! * [`WeightObjective::sample_normalized`] normalizes the conditioned
//!   density over the posterior hyperparameter draws themselves. This is
//!   what [`s_hat_full`], [`s_hat_uniform`] and [`grad_s_hat`] compute. Its
//!   supremum is always at weights that make the conditioned density flat
//!   across the draws (`w = 0` in general), so running the ascent to
//!   convergence on it flattens the conditioned posterior.
//! * [`WeightObjective::importance_normalized`] estimates the normalizing
//!   integral by importance sampling from a Student-t fitted to the draws,
//!   which gives a consistent estimate of the KL objective. The case
//!   studies use this one.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::ad::Real;
use crate::error::{Error, Result};
use crate::hmc::PosteriorSamples;
use crate::space::ParameterSpace;

/// Conditional density `D(theta | tau)` of one group's parameters, plus the
/// hyperprior `H(tau)`.
///
/// Densities are with respect to the *constrained* coordinates of each
/// space, while arguments are passed in unconstrained coordinates so that
/// implementations can stay numerically stable near support boundaries.
pub trait GroupKernel: Send + Sync {
    fn hyper_space(&self) -> &ParameterSpace;
    fn group_space(&self) -> &ParameterSpace;

    /// Number of factors `D` splits into when components of `theta` are
    /// independent given `tau`. Per-component weighting puts one weight on
    /// each factor of each sample.
    fn factor_count(&self) -> usize {
        1
    }

    /// `ln H(tau)`; improper priors are fine.
    fn log_hyperprior<R: Real>(&self, tau: &[R]) -> R;

    /// Factor `factor` of `ln D(theta | tau)`.
    fn log_factor<R: Real>(&self, factor: usize, theta: &[R], tau: &[R]) -> R;

    fn log_group_density<R: Real>(&self, theta: &[R], tau: &[R]) -> R {
        R::sum((0..self.factor_count()).map(|f| self.log_factor(f, theta, tau)))
    }
}

/// `w * l`, with zero weight silencing an infinite log density.
#[inline]
fn weighted(w: f64, l: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * l
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StumpMeta {
    pub seed: u64,
    /// Number of hyperparameter draws the weights were optimized against.
    #[serde(rename = "N")]
    pub n_hyper: usize,
    pub created: Option<String>,
}

/// `M` group-parameter draws (constrained coordinates) and their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSampleSet {
    pub model_id: String,
    samples: Vec<Vec<f64>>,
    weights: Vec<f64>,
    per_component: bool,
    factors: usize,
    pub meta: StumpMeta,
}

impl WeightedSampleSet {
    /// A set with every weight equal to one. `factors` is the number of
    /// weights per sample when `per_component` is set, and is ignored
    /// otherwise.
    pub fn new(
        model_id: impl Into<String>,
        samples: Vec<Vec<f64>>,
        per_component: bool,
        factors: usize,
        meta: StumpMeta,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::SampleSet("at least one sample is required".into()));
        }
        let d = samples[0].len();
        if d == 0 || samples.iter().any(|s| s.len() != d) {
            return Err(Error::SampleSet("samples must share a nonzero width".into()));
        }
        if samples.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::SampleSet("samples must be finite".into()));
        }
        let factors = if per_component { factors.max(1) } else { 1 };
        let weights = vec![1.0; samples.len() * factors];
        Ok(WeightedSampleSet {
            model_id: model_id.into(),
            samples,
            weights,
            per_component,
            factors,
            meta,
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::SampleSet("weights must be finite".into()));
        }
        self.weights = weights;
        Ok(self)
    }

    /// Same samples with one unit weight per factor.
    pub fn into_per_component(self, factors: usize) -> Self {
        let factors = factors.max(1);
        WeightedSampleSet {
            weights: vec![1.0; self.samples.len() * factors],
            per_component: true,
            factors,
            ..self
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    /// Row-major: sample `j`, factor `f` sits at `j * factors + f`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn per_component(&self) -> bool {
        self.per_component
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    fn check_kernel<K: GroupKernel>(&self, kernel: &K) -> Result<()> {
        let d = kernel.group_space().dim();
        if self.samples[0].len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: self.samples[0].len(),
            });
        }
        if self.per_component && self.factors != kernel.factor_count() {
            return Err(Error::SampleSet(format!(
                "set has {} weights per sample, kernel has {} factors",
                self.factors,
                kernel.factor_count()
            )));
        }
        Ok(())
    }
}

/// Samples converted once to unconstrained coordinates, for repeated
/// evaluation inside a log density.
#[derive(Clone, Debug)]
pub struct PreparedStump {
    samples_u: Vec<Vec<f64>>,
    weights: Vec<f64>,
    per_component: bool,
    factors: usize,
}

impl PreparedStump {
    pub fn new<K: GroupKernel>(set: &WeightedSampleSet, kernel: &K) -> Result<Self> {
        set.check_kernel(kernel)?;
        let space = kernel.group_space();
        let samples_u = set
            .samples
            .iter()
            .map(|s| space.to_unconstrained(s))
            .collect::<Result<_>>()?;
        Ok(PreparedStump {
            samples_u,
            weights: set.weights.clone(),
            per_component: set.per_component,
            factors: set.factors,
        })
    }

    /// `sum_j w_j ln D(theta_j | tau)`, or the per-factor analogue.
    pub fn log_density<R: Real, K: GroupKernel>(&self, kernel: &K, tau: &[R]) -> R {
        let mut acc = R::from_f64(0.0);
        for (j, s) in self.samples_u.iter().enumerate() {
            let theta: Vec<R> = s.iter().map(|&x| R::from_f64(x)).collect();
            if self.per_component {
                for f in 0..self.factors {
                    let w = self.weights[j * self.factors + f];
                    if w != 0.0 {
                        acc += kernel.log_factor(f, &theta, tau) * w;
                    }
                }
            } else {
                let w = self.weights[j];
                if w != 0.0 {
                    acc += kernel.log_group_density(&theta, tau) * w;
                }
            }
        }
        acc
    }

    /// Conditional log densities of every weighted term at `tau`, laid out
    /// like the weights.
    fn terms<K: GroupKernel>(&self, kernel: &K, tau: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.weights.len());
        for s in &self.samples_u {
            if self.per_component {
                out.extend((0..self.factors).map(|f| kernel.log_factor(f, s, tau)));
            } else {
                out.push(kernel.log_group_density(s, tau));
            }
        }
        out
    }
}

/// Stochastic conditioning log density of the weighted set at hyperparameter
/// `tau` (unconstrained coordinates).
pub fn log_stoch_cond<R: Real, K: GroupKernel>(
    set: &WeightedSampleSet,
    tau: &[R],
    kernel: &K,
) -> Result<R> {
    Ok(PreparedStump::new(set, kernel)?.log_density(kernel, tau))
}

/// Draws `m` distinct (group, draw) pairs uniformly: a group uniformly, then
/// one of its posterior draws uniformly. `groups[g]` lists the columns of
/// `posterior` holding group `g`'s parameters.
pub fn draw_sample_set(
    posterior: &PosteriorSamples,
    groups: &[Vec<usize>],
    m: usize,
    seed: u64,
    model_id: &str,
) -> Result<WeightedSampleSet> {
    if m == 0 {
        return Err(Error::SampleSet("stump size must be at least 1".into()));
    }
    if groups.is_empty() {
        return Err(Error::SampleSet("no groups to draw from".into()));
    }
    let n = posterior.n_draws();
    let available = groups.len() * n;
    if m > available {
        return Err(Error::SampleSet(format!(
            "requested {m} samples but only {available} distinct draws exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // every group has the same number of draws, so uniform over pairs is the
    // same as uniform group then uniform draw
    let picks = index::sample(&mut rng, available, m);
    let samples = picks
        .iter()
        .map(|k| {
            let (g, d) = (k / n, k % n);
            let row = posterior.row(d);
            groups[g].iter().map(|&c| row[c]).collect()
        })
        .collect();
    WeightedSampleSet::new(
        model_id,
        samples,
        false,
        1,
        StumpMeta {
            seed,
            n_hyper: 0,
            created: None,
        },
    )
}

/// Hyperparameter draws (constrained coordinates) with `ln p(tau_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperSampleSet {
    pub taus: Vec<Vec<f64>>,
    pub log_prior: Vec<f64>,
}

impl HyperSampleSet {
    pub fn new(taus: Vec<Vec<f64>>, log_prior: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::SampleSet("no hyperparameter draws".into()));
        }
        if log_prior.len() != taus.len() {
            return Err(Error::Dimension {
                expected: taus.len(),
                got: log_prior.len(),
            });
        }
        if taus.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::SampleSet("hyperparameter draws must be finite".into()));
        }
        Ok(HyperSampleSet { taus, log_prior })
    }

    /// Draws with a constant (zero) log prior.
    pub fn uniform(taus: Vec<Vec<f64>>) -> Result<Self> {
        let n = taus.len();
        Self::new(taus, vec![0.0; n])
    }

    /// Takes the hyperparameter columns of a posterior, thinned evenly to at
    /// most `max_draws` rows, and scores them under the kernel's hyperprior.
    pub fn from_posterior<K: GroupKernel>(
        posterior: &PosteriorSamples,
        columns: &[usize],
        max_draws: usize,
        kernel: &K,
    ) -> Result<Self> {
        let total = posterior.n_draws();
        let n = max_draws.min(total).max(1);
        let space = kernel.hyper_space();
        let mut taus = Vec::with_capacity(n);
        let mut log_prior = Vec::with_capacity(n);
        for i in 0..n {
            let row = posterior.row(i * total / n);
            let tau: Vec<f64> = columns.iter().map(|&c| row[c]).collect();
            let u = space.to_unconstrained(&tau)?;
            log_prior.push(kernel.log_hyperprior(&u));
            taus.push(tau);
        }
        Self::new(taus, log_prior)
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }
}

/// Student-t importance proposal over unconstrained hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalConfig {
    /// Defaults to 2500 per hyperparameter dimension.
    pub draws: Option<usize>,
    pub dof: f64,
    /// Multiplies the fitted standard deviations.
    pub scale: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            draws: None,
            dof: 5.0,
            scale: 1.2,
        }
    }
}

struct StudentT {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    chol_inv: DMatrix<f64>,
    log_norm: f64,
    dof: f64,
}

impl StudentT {
    fn fit(points: &[Vec<f64>], dof: f64, scale: f64) -> Result<Self> {
        let d = points[0].len();
        let n = points.len() as f64;
        let mut mean = DVector::zeros(d);
        for p in points {
            mean += DVector::from_column_slice(p);
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for p in points {
            let x = DVector::from_column_slice(p) - &mean;
            cov += &x * x.transpose();
        }
        cov /= (n - 1.0).max(1.0);
        let ridge = 1e-9 * (cov.trace() / d as f64).max(1e-12);
        for i in 0..d {
            cov[(i, i)] += ridge;
        }
        cov *= scale * scale;
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Optimization("hyperparameter covariance is singular".into()))?
            .l();
        let chol_inv = chol
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Optimization("hyperparameter covariance is singular".into()))?;
        let log_det_half: f64 = (0..d).map(|i| chol[(i, i)].ln()).sum();
        let df = d as f64;
        let log_norm = ln_gamma((dof + df) / 2.0)
            - ln_gamma(dof / 2.0)
            - 0.5 * df * (dof * std::f64::consts::PI).ln()
            - log_det_half;
        Ok(StudentT {
            mean,
            chol,
            chol_inv,
            log_norm,
            dof,
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.mean.len();
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let chi2: f64 = ChiSquared::new(self.dof).expect("positive dof").sample(rng);
        let x = &self.mean + (&self.chol * z) * (self.dof / chi2).sqrt();
        x.iter().copied().collect()
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.mean.len() as f64;
        let r = &self.chol_inv * (DVector::from_column_slice(x) - &self.mean);
        let maha = r.norm_squared();
        self.log_norm - 0.5 * (self.dof + d) * (maha / self.dof).ln_1p()
    }
}

/// Concave objective in the weights:
/// `sum_i (a_i + l_i . w) - N * logsumexp_k(b_k + l'_k . w) + c`.
///
/// `l_i` are the conditional log densities at the posterior hyperparameter
/// draws; `l'_k` and `b_k` define the normalizing sum.
#[derive(Clone, Debug)]
pub struct WeightObjective {
    n: usize,
    k: usize,
    ell: Vec<f64>,
    offsets: Vec<f64>,
    norm: Option<(Vec<f64>, Vec<f64>)>,
    constant: f64,
}

fn ell_matrix<K: GroupKernel>(
    stump: &PreparedStump,
    kernel: &K,
    taus_u: &[Vec<f64>],
) -> Vec<f64> {
    taus_u
        .par_iter()
        .flat_map_iter(|tau| stump.terms(kernel, tau))
        .collect()
}

impl WeightObjective {
    /// The estimator that normalizes over the posterior draws themselves,
    /// with `a_i = b_i = ln p(tau_i)` taken from `hyper`.
    pub fn sample_normalized<K: GroupKernel>(
        set: &WeightedSampleSet,
        hyper: &HyperSampleSet,
        kernel: &K,
    ) -> Result<Self> {
        let stump = PreparedStump::new(set, kernel)?;
        let space = kernel.hyper_space();
        let taus_u = hyper
            .taus
            .iter()
            .map(|t| space.to_unconstrained(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(WeightObjective {
            n: hyper.len(),
            k: set.weights.len(),
            ell: ell_matrix(&stump, kernel, &taus_u),
            offsets: hyper.log_prior.clone(),
            norm: None,
            constant: 0.0,
        })
    }

    /// KL objective with the normalizer `ln Z(w) = ln int H(tau) exp(sum_j
    /// w_j l_j(tau)) dtau` estimated by importance sampling from a Student-t
    /// fitted to the unconstrained hyperparameter draws.
    pub fn importance_normalized<K: GroupKernel>(
        set: &WeightedSampleSet,
        hyper: &HyperSampleSet,
        kernel: &K,
        proposal: &ProposalConfig,
        seed: u64,
    ) -> Result<Self> {
        let draws = proposal
            .draws
            .unwrap_or(2500 * kernel.hyper_space().dim());
        if draws == 0 || proposal.dof <= 0.0 || proposal.scale <= 0.0 {
            return Err(Error::Config("invalid importance proposal".into()));
        }
        let mut obj = Self::sample_normalized(set, hyper, kernel)?;
        let stump = PreparedStump::new(set, kernel)?;
        let space = kernel.hyper_space();
        let taus_u = hyper
            .taus
            .iter()
            .map(|t| space.to_unconstrained(t))
            .collect::<Result<Vec<_>>>()?;
        let dist = StudentT::fit(&taus_u, proposal.dof, proposal.scale)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a9e_0000_0001);
        let draws: Vec<Vec<f64>> = (0..draws).map(|_| dist.sample(&mut rng)).collect();
        let offsets: Vec<f64> = draws
            .iter()
            .map(|u| {
                kernel.log_hyperprior(u) + space.log_jacobian_real(u.as_slice()) - dist.log_pdf(u)
            })
            .collect();
        let norm_ell = ell_matrix(&stump, kernel, &draws);
        obj.norm = Some((norm_ell, offsets));
        obj.constant = obj.n as f64 * (draws.len() as f64).ln();
        Ok(obj)
    }

    /// Number of hyperparameter draws `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight_count(&self) -> usize {
        self.k
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.k {
            return Err(Error::Dimension {
                expected: self.k,
                got: w.len(),
            });
        }
        Ok(())
    }

    fn scores(ell: &[f64], offsets: &[f64], k: usize, w: &[f64]) -> Vec<f64> {
        ell.chunks(k)
            .zip(offsets)
            .map(|(row, a)| a + row.iter().zip(w).map(|(&l, &wi)| weighted(wi, l)).sum::<f64>())
            .collect()
    }

    /// Effective sample size of the normalizing sum's softmax weights at
    /// `w`. Small values mean the normalizer rests on a few terms and the
    /// objective estimate is unreliable there.
    pub fn normalizer_ess(&self, w: &[f64]) -> Result<f64> {
        self.check(w)?;
        let s = match &self.norm {
            None => Self::scores(&self.ell, &self.offsets, self.k, w),
            Some((ell, b)) => Self::scores(ell, b, self.k, w),
        };
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::DegenerateSupport);
        }
        let p: Vec<f64> = s.iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = p.iter().sum();
        Ok(sum * sum / p.iter().map(|x| x * x).sum::<f64>())
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        Ok(self.value_and_gradient_inner(w, false)?.0)
    }

    pub fn value_and_gradient(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.value_and_gradient_inner(w, true)
    }

    fn value_and_gradient_inner(&self, w: &[f64], want_grad: bool) -> Result<(f64, Vec<f64>)> {
        self.check(w)?;
        let k = self.k;
        let s = Self::scores(&self.ell, &self.offsets, k, w);
        let (norm_ell, norm_s) = match &self.norm {
            None => (&self.ell, s.clone()),
            Some((ell, b)) => (ell, Self::scores(ell, b, k, w)),
        };
        let max = norm_s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            return Err(Error::DegenerateSupport);
        }
        let sum_exp: f64 = norm_s.iter().map(|x| (x - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let n = self.n as f64;
        let value = s.iter().sum::<f64>() - n * lse + self.constant;
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        let mut grad = vec![0.0; k];
        for row in self.ell.chunks(k) {
            for (g, &l) in grad.iter_mut().zip(row) {
                *g += l;
            }
        }
        for (row, &sc) in norm_ell.chunks(k).zip(&norm_s) {
            let p = (sc - max).exp() / sum_exp;
            if p == 0.0 {
                continue;
            }
            for (g, &l) in grad.iter_mut().zip(row) {
                *g -= n * p * l;
            }
        }
        Ok((value, grad))
    }
}

/// `S-hat(w)` at the set's weights, using `ln p(tau_i)` from `hyper`.
pub fn s_hat_full<K: GroupKernel>(
    set: &WeightedSampleSet,
    hyper: &HyperSampleSet,
    kernel: &K,
) -> Result<f64> {
    WeightObjective::sample_normalized(set, hyper, kernel)?.value(set.weights())
}

/// `S-hat(w)` under a constant hyperprior.
pub fn s_hat_uniform<K: GroupKernel>(
    set: &WeightedSampleSet,
    hyper: &HyperSampleSet,
    kernel: &K,
) -> Result<f64> {
    let flat = HyperSampleSet::uniform(hyper.taus.clone())?;
    s_hat_full(set, &flat, kernel)
}

/// Gradient of [`s_hat_full`] with respect to the weights.
pub fn grad_s_hat<K: GroupKernel>(
    set: &WeightedSampleSet,
    hyper: &HyperSampleSet,
    kernel: &K,
) -> Result<Vec<f64>> {
    Ok(WeightObjective::sample_normalized(set, hyper, kernel)?
        .value_and_gradient(set.weights())?
        .1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    /// Defaults to `1e-3 / N`.
    pub learning_rate: Option<f64>,
    pub momentum: f64,
    pub max_iters: usize,
    /// Defaults to `1e-6 * N`.
    pub grad_tol: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: None,
            momentum: 0.9,
            max_iters: 5000,
            grad_tol: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationReport {
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
    pub backtracks: usize,
    /// See [`WeightObjective::normalizer_ess`], at the returned weights.
    pub normalizer_ess: f64,
}

const MAX_BACKTRACKS: usize = 10;

/// Gradient ascent with momentum from `w = 1`. Returns the best iterate
/// seen, so the objective never ends below its value at `w = 1`.
pub fn optimize_weights(
    set: &WeightedSampleSet,
    objective: &WeightObjective,
    config: &OptimizerConfig,
) -> Result<(WeightedSampleSet, OptimizationReport)> {
    if objective.n() < 2 {
        return Err(Error::Optimization(
            "at least two hyperparameter draws are required".into(),
        ));
    }
    if objective.weight_count() != set.weights.len() {
        return Err(Error::Dimension {
            expected: set.weights.len(),
            got: objective.weight_count(),
        });
    }
    let n = objective.n() as f64;
    let mut lr = config.learning_rate.unwrap_or(1e-3 / n);
    let tol = config.grad_tol.unwrap_or(1e-6 * n);
    let mut w = vec![1.0; set.weights.len()];
    let (f0, mut grad) = objective.value_and_gradient(&w)?;
    if !f0.is_finite() {
        return Err(Error::Optimization("objective is not finite at w = 1".into()));
    }
    let mut best = (f0, w.clone());
    let mut velocity = vec![0.0; w.len()];
    let mut backtracks = 0;
    let mut iterations = 0;
    let inf_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut converged = inf_norm(&grad) <= tol;
    while !converged && iterations < config.max_iters {
        for (v, g) in velocity.iter_mut().zip(&grad) {
            *v = config.momentum * *v + lr * g;
        }
        let candidate: Vec<f64> = w.iter().zip(&velocity).map(|(a, b)| a + b).collect();
        let step = objective
            .value_and_gradient(&candidate)
            .ok()
            .filter(|(f, g)| f.is_finite() && g.iter().all(|x| x.is_finite()));
        let Some((f, g)) = step else {
            backtracks += 1;
            if backtracks > MAX_BACKTRACKS {
                return Err(Error::Optimization(
                    "objective stayed non-finite after repeated step halving".into(),
                ));
            }
            lr *= 0.5;
            velocity.iter_mut().for_each(|v| *v = 0.0);
            continue;
        };
        iterations += 1;
        w = candidate;
        grad = g;
        if f > best.0 {
            best = (f, w.clone());
        }
        converged = inf_norm(&grad) <= tol;
    }
    let report = OptimizationReport {
        initial_objective: f0,
        final_objective: best.0,
        iterations,
        final_grad_norm: inf_norm(&grad),
        converged,
        backtracks,
        normalizer_ess: objective.normalizer_ess(&best.1)?,
    };
    let mut out = set.clone().with_weights(best.1)?;
    out.meta.n_hyper = objective.n();
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{beta_lpdf_logit, normal_lpdf};
    use crate::space::TransformKind;
    use proptest::prelude::*;
    use rand::Rng;

    /// Beta(a, b) kernel on a unit-interval group parameter, with
    /// tau = (a, b) positive.
    struct BetaKernel {
        hyper: ParameterSpace,
        group: ParameterSpace,
    }

    impl BetaKernel {
        fn new() -> Self {
            BetaKernel {
                hyper: ParameterSpace::new(vec![("ab", 2, TransformKind::LogPositive)]).unwrap(),
                group: ParameterSpace::new(vec![("p", 1, TransformKind::LogitUnit)]).unwrap(),
            }
        }
    }

    impl GroupKernel for BetaKernel {
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
            beta_lpdf_logit(theta[0], tau[0].exp(), tau[1].exp())
        }
    }

    /// Two independent normal components, each with its own (mean, log sd).
    struct PairKernel {
        hyper: ParameterSpace,
        group: ParameterSpace,
    }

    impl PairKernel {
        fn new() -> Self {
            PairKernel {
                hyper: ParameterSpace::new(vec![
                    ("mu", 2, TransformKind::Identity),
                    ("sd", 2, TransformKind::LogPositive),
                ])
                .unwrap(),
                group: ParameterSpace::new(vec![("x", 2, TransformKind::Identity)]).unwrap(),
            }
        }
    }

    impl GroupKernel for PairKernel {
        fn hyper_space(&self) -> &ParameterSpace {
            &self.hyper
        }
        fn group_space(&self) -> &ParameterSpace {
            &self.group
        }
        fn factor_count(&self) -> usize {
            2
        }
        fn log_hyperprior<R: Real>(&self, tau: &[R]) -> R {
            -(tau[2] + tau[3])
        }
        fn log_factor<R: Real>(&self, f: usize, theta: &[R], tau: &[R]) -> R {
            normal_lpdf(theta[f], tau[f], tau[2 + f].exp())
        }
    }

    fn meta() -> StumpMeta {
        StumpMeta {
            seed: 0,
            n_hyper: 0,
            created: None,
        }
    }

    fn beta_set(ps: &[f64]) -> WeightedSampleSet {
        WeightedSampleSet::new("beta", ps.iter().map(|&p| vec![p]).collect(), false, 1, meta())
            .unwrap()
    }

    #[test]
    fn zero_weights_condition_on_nothing() {
        let k = BetaKernel::new();
        let set = beta_set(&[0.3, 0.7]).with_weights(vec![0.0, 0.0]).unwrap();
        let v: f64 = log_stoch_cond(&set, &[0.5f64, 0.1], &k).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn beta_two_two_example() {
        let k = BetaKernel::new();
        let set = beta_set(&[0.3, 0.7]);
        let tau = [2f64.ln(), 2f64.ln()];
        let v: f64 = log_stoch_cond(&set, &tau, &k).unwrap();
        let expect = 2.0 * (6.0 * 0.3 * 0.7f64).ln();
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 0.462_223_4).abs() < 1e-7);
    }

    #[test]
    fn doubling_weights_doubles_value() {
        let k = BetaKernel::new();
        let set = beta_set(&[0.2, 0.45, 0.9]).with_weights(vec![0.3, -1.2, 2.5]).unwrap();
        let twice = set.clone().with_weights(vec![0.6, -2.4, 5.0]).unwrap();
        let tau = [0.4f64, -0.3];
        let a: f64 = log_stoch_cond(&set, &tau, &k).unwrap();
        let b: f64 = log_stoch_cond(&twice, &tau, &k).unwrap();
        assert_eq!(2.0 * a, b);
    }

    fn hyper_grid(n: usize) -> HyperSampleSet {
        let taus = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                vec![1.0 + 3.0 * t, 2.0 + (5.0 * t).sin().abs() * 4.0]
            })
            .collect();
        HyperSampleSet::uniform(taus).unwrap()
    }

    #[test]
    fn single_hyper_draw_gives_zero() {
        let k = BetaKernel::new();
        let set = beta_set(&[0.2, 0.6]).with_weights(vec![3.0, -0.5]).unwrap();
        let hyper = HyperSampleSet::new(vec![vec![2.0, 3.0]], vec![-1.7]).unwrap();
        assert_eq!(s_hat_full(&set, &hyper, &k).unwrap(), 0.0);
        assert_eq!(s_hat_uniform(&set, &hyper, &k).unwrap(), 0.0);
        assert_eq!(grad_s_hat(&set, &hyper, &k).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_weights_give_minus_n_log_n() {
        let k = BetaKernel::new();
        let set = beta_set(&[0.2, 0.6]).with_weights(vec![0.0, 0.0]).unwrap();
        let hyper = hyper_grid(9);
        let v = s_hat_uniform(&set, &hyper, &k).unwrap();
        assert!((v + 9.0 * 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_log_prior_full_equals_uniform() {
        let k = BetaKernel::new();
        let set = beta_set(&[0.2, 0.6, 0.35]);
        let hyper = hyper_grid(12);
        assert_eq!(
            s_hat_full(&set, &hyper, &k).unwrap(),
            s_hat_uniform(&set, &hyper, &k).unwrap()
        );
    }

    #[test]
    fn constant_terms_have_zero_gradient() {
        // kernel independent of tau for sample 1 only: density of p under
        // Beta(a, b) at fixed (a, b) where tau varies only through a
        // coordinate it ignores is emulated with identical hyper draws
        let k = BetaKernel::new();
        let set = beta_set(&[0.2, 0.6]);
        let hyper = HyperSampleSet::uniform(vec![vec![2.0, 3.0]; 5]).unwrap();
        let g = grad_s_hat(&set, &hyper, &k).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-9), "{g:?}");
    }

    #[test]
    fn optimizer_keeps_unit_weights_when_gradient_vanishes() {
        let k = BetaKernel::new();
        let set = beta_set(&[0.2, 0.6]);
        let hyper = HyperSampleSet::uniform(vec![vec![2.0, 3.0]; 5]).unwrap();
        let obj = WeightObjective::sample_normalized(&set, &hyper, &k).unwrap();
        let (out, report) = optimize_weights(&set, &obj, &OptimizerConfig::default()).unwrap();
        assert_eq!(out.weights(), &[1.0, 1.0]);
        assert!(report.converged);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn optimizer_needs_two_hyper_draws() {
        let k = BetaKernel::new();
        let set = beta_set(&[0.2]);
        let hyper = HyperSampleSet::uniform(vec![vec![2.0, 3.0]]).unwrap();
        let obj = WeightObjective::sample_normalized(&set, &hyper, &k).unwrap();
        assert!(optimize_weights(&set, &obj, &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn degenerate_support_is_an_error() {
        struct Never(ParameterSpace, ParameterSpace);
        impl GroupKernel for Never {
            fn hyper_space(&self) -> &ParameterSpace {
                &self.0
            }
            fn group_space(&self) -> &ParameterSpace {
                &self.1
            }
            fn log_hyperprior<R: Real>(&self, _t: &[R]) -> R {
                R::from_f64(0.0)
            }
            fn log_factor<R: Real>(&self, _f: usize, _th: &[R], _t: &[R]) -> R {
                R::from_f64(f64::NEG_INFINITY)
            }
        }
        let sp = ParameterSpace::new(vec![("x", 1, TransformKind::Identity)]).unwrap();
        let k = Never(sp.clone(), sp);
        let set = WeightedSampleSet::new("n", vec![vec![0.0]], false, 1, meta()).unwrap();
        let hyper = HyperSampleSet::uniform(vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(
            s_hat_uniform(&set, &hyper, &k),
            Err(Error::DegenerateSupport)
        ));
    }

    fn posterior_grid(groups: usize, draws: usize) -> PosteriorSamples {
        let names = (0..groups).map(|g| format!("p[{g}]")).collect();
        let rows = (0..draws)
            .map(|d| (0..groups).map(|g| (g * draws + d) as f64).collect())
            .collect();
        PosteriorSamples::from_rows(names, rows).unwrap()
    }

    #[test]
    fn drawing_everything_returns_the_full_set() {
        let post = posterior_grid(3, 4);
        let groups: Vec<Vec<usize>> = (0..3).map(|g| vec![g]).collect();
        let set = draw_sample_set(&post, &groups, 12, 7, "m").unwrap();
        let mut got: Vec<f64> = set.samples().iter().map(|s| s[0]).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, (0..12).map(|x| x as f64).collect::<Vec<_>>());
        assert!(set.weights().iter().all(|&w| w == 1.0));
        assert!(draw_sample_set(&post, &groups, 13, 7, "m").is_err());
    }

    #[test]
    fn drawing_is_deterministic() {
        let post = posterior_grid(5, 100);
        let groups: Vec<Vec<usize>> = (0..5).map(|g| vec![g]).collect();
        let a = draw_sample_set(&post, &groups, 10, 99, "m").unwrap();
        let b = draw_sample_set(&post, &groups, 10, 99, "m").unwrap();
        assert_eq!(a, b);
    }

    fn fd_gradient(obj: &WeightObjective, w: &[f64]) -> Vec<f64> {
        (0..w.len())
            .map(|j| {
                let h = 1e-5 * w[j].abs().max(1.0);
                let mut up = w.to_vec();
                let mut dn = w.to_vec();
                up[j] += h;
                dn[j] -= h;
                (obj.value(&up).unwrap() - obj.value(&dn).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
            .fold(0.0, f64::max)
    }

    #[test]
    fn importance_gradient_matches_finite_differences() {
        let k = PairKernel::new();
        let set = WeightedSampleSet::new(
            "pair",
            vec![vec![0.1, -0.4], vec![0.7, 0.2], vec![-0.3, 0.5]],
            true,
            2,
            meta(),
        )
        .unwrap();
        let taus: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let t = i as f64 / 40.0;
                vec![0.2 * t, -0.1 + 0.3 * t, 0.5 + 0.3 * (7.0 * t).sin().abs(), 0.6 + 0.2 * t]
            })
            .collect();
        let hyper = HyperSampleSet::uniform(taus).unwrap();
        let prop = ProposalConfig {
            draws: Some(200),
            ..ProposalConfig::default()
        };
        let obj = WeightObjective::importance_normalized(&set, &hyper, &k, &prop, 4).unwrap();
        let w = [0.8, 1.1, 0.9, 1.3, 0.7, 1.0];
        let (_, g) = obj.value_and_gradient(&w).unwrap();
        assert!(rel_err(&g, &fd_gradient(&obj, &w)) <= 1e-5);
    }

    #[test]
    fn optimization_recovers_posterior_on_normal_toy() {
        // tau = (mu, sigma) draws on a grid around a known target; the set is
        // shifted, so ascent must move the weights away from one
        let k = PairKernel::new();
        let set = WeightedSampleSet::new(
            "pair",
            vec![vec![-1.0, 0.0], vec![0.5, 1.0], vec![2.0, -1.0], vec![1.0, 0.3]],
            true,
            2,
            meta(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let taus: Vec<Vec<f64>> = (0..400)
            .map(|_| {
                let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                vec![
                    0.8 + 0.2 * z[0],
                    0.1 + 0.2 * z[1],
                    (0.0 + 0.2 * z[2]).exp(),
                    (0.1 + 0.2 * z[3]).exp(),
                ]
            })
            .collect();
        let hyper = HyperSampleSet::uniform(taus).unwrap();
        let obj = WeightObjective::importance_normalized(
            &set,
            &hyper,
            &k,
            &ProposalConfig {
                draws: Some(400),
                ..ProposalConfig::default()
            },
            3,
        )
        .unwrap();
        let (out, report) = optimize_weights(&set, &obj, &OptimizerConfig::default()).unwrap();
        assert!(report.final_objective >= report.initial_objective);
        assert!(obj.value(out.weights()).unwrap() >= obj.value(&[1.0; 8]).unwrap());
        assert_ne!(out.weights(), set.weights());
        assert_eq!(out.meta.n_hyper, 400);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn gradient_matches_fd_joint(
            m in 1usize..=5,
            n in 2usize..=20,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = BetaKernel::new();
            let ps: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..0.95)).collect();
            let w: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..2.0)).collect();
            let taus = (0..n).map(|_| vec![rng.random_range(0.5..5.0), rng.random_range(0.5..5.0)]).collect();
            let lp = (0..n).map(|_| rng.random_range(-3.0..0.0)).collect();
            let hyper = HyperSampleSet::new(taus, lp).unwrap();
            let set = beta_set(&ps).with_weights(w.clone()).unwrap();
            let obj = WeightObjective::sample_normalized(&set, &hyper, &k).unwrap();
            let g = grad_s_hat(&set, &hyper, &k).unwrap();
            prop_assert!(rel_err(&g, &fd_gradient(&obj, &w)) <= 1e-5);
        }

        #[test]
        fn gradient_matches_fd_per_component(
            m in 1usize..=5,
            n in 2usize..=20,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = PairKernel::new();
            let samples = (0..m).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
            let w: Vec<f64> = (0..2 * m).map(|_| rng.random_range(-1.0..2.0)).collect();
            let taus = (0..n).map(|_| vec![
                rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5),
                rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)]).collect();
            let hyper = HyperSampleSet::uniform(taus).unwrap();
            let set = WeightedSampleSet::new("pair", samples, true, 2, meta()).unwrap()
                .with_weights(w.clone()).unwrap();
            let obj = WeightObjective::sample_normalized(&set, &hyper, &k).unwrap();
            let g = grad_s_hat(&set, &hyper, &k).unwrap();
            prop_assert!(rel_err(&g, &fd_gradient(&obj, &w)) <= 1e-5);
        }

        #[test]
        fn constant_prior_cancels(
            m in 1usize..=5,
            n in 1usize..=20,
            c in -50.0f64..50.0,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = BetaKernel::new();
            let ps: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..0.95)).collect();
            let w: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..2.0)).collect();
            let taus: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.5..5.0), rng.random_range(0.5..5.0)]).collect();
            let hyper = HyperSampleSet::new(taus, vec![c; n]).unwrap();
            let set = beta_set(&ps).with_weights(w).unwrap();
            let full = s_hat_full(&set, &hyper, &k).unwrap();
            let uni = s_hat_uniform(&set, &hyper, &k).unwrap();
            prop_assert!((full - uni).abs() <= 1e-12 * uni.abs().max(1.0), "{} {}", full, uni);
        }

        #[test]
        fn stoch_cond_is_linear(a in -3.0f64..3.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = BetaKernel::new();
            let ps: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..0.95)).collect();
            let w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..2.0)).collect();
            let tau = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let base = beta_set(&ps);
            let f1: f64 = log_stoch_cond(&base.clone().with_weights(w.clone()).unwrap(), &tau, &k).unwrap();
            let scaled: Vec<f64> = w.iter().map(|x| a * x).collect();
            let fa: f64 = log_stoch_cond(&base.with_weights(scaled).unwrap(), &tau, &k).unwrap();
            prop_assert!((fa - a * f1).abs() <= 1e-12 * (a * f1).abs().max(1.0));
        }

        #[test]
        fn ascent_never_ends_below_start(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = BetaKernel::new();
            let ps: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..0.95)).collect();
            let taus = (0..15).map(|_| vec![rng.random_range(0.5..5.0), rng.random_range(0.5..5.0)]).collect();
            let hyper = HyperSampleSet::uniform(taus).unwrap();
            let set = beta_set(&ps);
            let obj = WeightObjective::sample_normalized(&set, &hyper, &k).unwrap();
            let cfg = OptimizerConfig { max_iters: 200, ..OptimizerConfig::default() };
            let (out, report) = optimize_weights(&set, &obj, &cfg).unwrap();
            prop_assert!(obj.value(out.weights()).unwrap() >= obj.value(&[1.0; 3]).unwrap());
            prop_assert!(report.final_objective >= report.initial_objective);
        }
    }
}
