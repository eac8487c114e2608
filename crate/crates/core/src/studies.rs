//! End-to-end case studies: fit, build a stump, fit new groups, compare.
//!
//! Each study returns plain numbers so that examples, tests and the command
//! line can report them in their own way.

use rayon::prelude::*;

use crate::data::{AttainData, AttainSizes, MarblesData, RatsData};
use crate::diagnostics::{ks_two_sample, median};
use crate::error::Result;
use crate::hmc::{run_chain, HmcConfig, PosteriorSamples};
use crate::model::Target;
use crate::models::{attain, marbles, normal, rats};
use crate::stump::{
    draw_sample_set, optimize_weights, GroupKernel, HyperSampleSet, OptimizationReport,
    OptimizerConfig, ProposalConfig, WeightObjective, WeightedSampleSet,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ObjectiveKind {
    /// Importance-sampled normalizer; see [`WeightObjective::importance_normalized`].
    #[default]
    Importance,
    /// Normalizer over the posterior draws; see [`WeightObjective::sample_normalized`].
    SampleNormalized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StumpConfig {
    /// Number of samples `M`.
    pub size: usize,
    /// Hyperparameter draws `N` the weights are fitted against.
    pub hyper_draws: usize,
    pub objective: ObjectiveKind,
    pub proposal: ProposalConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for StumpConfig {
    fn default() -> Self {
        StumpConfig {
            size: 10,
            hyper_draws: 2000,
            objective: ObjectiveKind::Importance,
            proposal: ProposalConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Derives an independent seed for sub-task `tag` of a run seeded `seed`.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws `config.size` group samples from a training posterior and fits
/// their weights against its hyperparameter draws.
#[allow(clippy::too_many_arguments)]
pub fn build_stump<K: GroupKernel>(
    kernel: &K,
    model_id: &str,
    posterior: &PosteriorSamples,
    hyper_columns: &[usize],
    group_columns: &[Vec<usize>],
    per_component: bool,
    config: &StumpConfig,
    seed: u64,
) -> Result<(WeightedSampleSet, OptimizationReport)> {
    let mut set = draw_sample_set(posterior, group_columns, config.size, seed, model_id)?;
    if per_component {
        set = set.into_per_component(kernel.factor_count());
    }
    fit_weights(kernel, &set, posterior, hyper_columns, config, sub_seed(seed, 1))
}

/// Fits the weights of an existing sample set against the hyperparameter
/// draws in `hyper_columns` of `posterior`.
pub fn fit_weights<K: GroupKernel>(
    kernel: &K,
    set: &WeightedSampleSet,
    posterior: &PosteriorSamples,
    hyper_columns: &[usize],
    config: &StumpConfig,
    seed: u64,
) -> Result<(WeightedSampleSet, OptimizationReport)> {
    let hyper =
        HyperSampleSet::from_posterior(posterior, hyper_columns, config.hyper_draws, kernel)?;
    let objective = match config.objective {
        ObjectiveKind::Importance => {
            WeightObjective::importance_normalized(set, &hyper, kernel, &config.proposal, seed)?
        }
        ObjectiveKind::SampleNormalized => WeightObjective::sample_normalized(set, &hyper, kernel)?,
    };
    optimize_weights(set, &objective, &config.optimizer)
}

fn columns(post: &PosteriorSamples, cols: &[usize]) -> Vec<Vec<f64>> {
    cols.iter().map(|&c| post.column(c)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fit(model: &dyn Target, hmc: &HmcConfig, seed: u64) -> Result<PosteriorSamples> {
    run_chain(model, &HmcConfig { seed, ..hmc.clone() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalReport {
    /// KS of `(mu, sigma)` against deterministic conditioning.
    pub ks_weighted: [f64; 2],
    pub ks_unweighted: [f64; 2],
    pub weights: Vec<f64>,
    pub optimization: OptimizationReport,
}

/// Posterior of `(mu, sigma)` from `Y`, versus conditioning on `Y_TILDE`
/// with fitted and with unit weights.
pub fn normal_study(hmc: &HmcConfig, stump: &StumpConfig, seed: u64) -> Result<NormalReport> {
    let (model, _, _) = normal::normal_toy();
    let kernel = normal::NormalKernel::default();
    let reference = fit(&model, hmc, sub_seed(seed, 0))?;
    let set = normal::surrogate_set();
    let (weighted, optimization) =
        fit_weights(&kernel, &set, &reference, &[0, 1], stump, sub_seed(seed, 1))?;
    let ks = |set: &WeightedSampleSet, tag| -> Result<[f64; 2]> {
        let post = fit(&normal::normal_stochastic(set)?, hmc, sub_seed(seed, tag))?;
        Ok([
            ks_two_sample(&post.column(0), &reference.column(0))?,
            ks_two_sample(&post.column(1), &reference.column(1))?,
        ])
    };
    Ok(NormalReport {
        ks_weighted: ks(&weighted, 2)?,
        ks_unweighted: ks(&set, 3)?,
        weights: weighted.weights().to_vec(),
        optimization,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupComparison {
    pub group: usize,
    pub ks_sf: f64,
    pub ks_eb: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarblesReport {
    pub per_box: Vec<GroupComparison>,
    pub median_ks_sf: f64,
    pub median_ks_eb: f64,
}

/// Leaves each box out in turn: the other boxes train a hierarchical model,
/// and the held-out box is fitted by stump-and-fungus and by empirical Bayes
/// with `p0` at its training posterior mean. Both are compared with the
/// hierarchical posterior of that box on all the data.
pub fn marbles_study(
    data: &MarblesData,
    hmc: &HmcConfig,
    stump: &StumpConfig,
    seed: u64,
) -> Result<MarblesReport> {
    let full = marbles::marbles_hier(data)?;
    let reference = fit(&full, hmc, sub_seed(seed, 0))?;
    let per_box = (0..data.boxes())
        .into_par_iter()
        .map(|b| -> Result<GroupComparison> {
            let tag = 10 * (b as u64 + 1);
            let others: Vec<usize> = (0..data.boxes()).filter(|&x| x != b).collect();
            let train = marbles::marbles_hier_subset(data, others)?;
            let post = fit(&train, hmc, sub_seed(seed, tag))?;
            let (set, _) = build_stump(
                train.kernel(),
                marbles::MODEL_ID,
                &post,
                &train.hyper_columns(),
                &train.group_columns(),
                false,
                stump,
                sub_seed(seed, tag + 1),
            )?;
            let sf = fit(&marbles::marbles_sf(&set, data, b)?, hmc, sub_seed(seed, tag + 2))?;
            let p0 = mean(&post.column(0));
            let eb = fit(
                &marbles::marbles_eb_subset(data, vec![b], p0)?,
                hmc,
                sub_seed(seed, tag + 3),
            )?;
            let truth = reference.column(full.columns_of(b).expect("box in model")[0]);
            Ok(GroupComparison {
                group: b,
                ks_sf: ks_two_sample(&sf.column(1), &truth)?,
                ks_eb: ks_two_sample(&eb.column(0), &truth)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sf: Vec<f64> = per_box.iter().map(|c| c.ks_sf).collect();
    let eb: Vec<f64> = per_box.iter().map(|c| c.ks_eb).collect();
    Ok(MarblesReport {
        median_ks_sf: median(&sf)?,
        median_ks_eb: median(&eb)?,
        per_box,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatsReport {
    pub hier_means: Vec<f64>,
    pub unpooled_means: Vec<f64>,
    pub sf_means: Vec<f64>,
    pub hier_seconds: f64,
    pub sf_seconds: f64,
    pub stump: WeightedSampleSet,
}

impl RatsReport {
    /// Fraction of groups whose stump-and-fungus mean is within `tol` of the
    /// hierarchical mean.
    pub fn agreement(&self, tol: f64) -> f64 {
        let close = self
            .sf_means
            .iter()
            .zip(&self.hier_means)
            .filter(|(a, b)| (*a - *b).abs() <= tol)
            .count();
        close as f64 / self.sf_means.len() as f64
    }
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// The first `training` experiments train the stump; every experiment is
/// then fitted as a fungus and compared with a hierarchical fit of all of
/// them and with independent unpooled fits. Timings compare the full
/// hierarchical fit with one fungus fit run on its own.
pub fn rats_study(
    data: &RatsData,
    training: usize,
    hmc: &HmcConfig,
    stump: &StumpConfig,
    seed: u64,
) -> Result<RatsReport> {
    let full = rats::rats_hier(data)?;
    let reference = fit(&full, hmc, sub_seed(seed, 0))?;
    let hier_means: Vec<f64> = full
        .group_columns()
        .iter()
        .map(|c| mean(&reference.column(c[0])))
        .collect();
    let unpooled_means = data
        .rows()
        .par_iter()
        .enumerate()
        .map(|(g, &(n, y))| {
            let post = fit(&rats::rats_unpooled(n, y)?, hmc, sub_seed(seed, 1000 + g as u64))?;
            Ok(mean(&post.column(0)))
        })
        .collect::<Result<Vec<_>>>()?;
    let train = rats::rats_hier(&data.head(training))?;
    let post = fit(&train, hmc, sub_seed(seed, 1))?;
    let (set, _) = build_stump(
        train.kernel(),
        rats::MODEL_ID,
        &post,
        &train.hyper_columns(),
        &train.group_columns(),
        false,
        stump,
        sub_seed(seed, 2),
    )?;
    let sf_means = (0..data.len())
        .into_par_iter()
        .map(|g| {
            let post = fit(&rats::rats_sf(&set, data, g)?, hmc, sub_seed(seed, 2000 + g as u64))?;
            Ok(mean(&post.column(2)))
        })
        .collect::<Result<Vec<_>>>()?;
    let last = data.len() - 1;
    let timed = fit(&rats::rats_sf(&set, data, last)?, hmc, sub_seed(seed, 3))?;
    Ok(RatsReport {
        hier_means,
        unpooled_means,
        sf_means,
        hier_seconds: reference.wall_time_seconds,
        sf_seconds: timed.wall_time_seconds,
        stump: set,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttainReport {
    /// Stump sizes, in the order of `median_ks_sf`.
    pub sizes: Vec<usize>,
    /// Per size, KS of every secondary-school parameter of every school.
    pub ks_sf: Vec<Vec<f64>>,
    pub ks_eb: Vec<f64>,
    pub median_ks_sf: Vec<f64>,
    pub median_ks_eb: f64,
    pub hier_seconds: f64,
    /// Per size, median wall time of the fungus fits.
    pub sf_seconds: Vec<f64>,
}

/// Leaves each secondary school out in turn. The stump is per-component and
/// covers the secondary-school hierarchy only; empirical Bayes fixes that
/// hierarchy's hyperparameters at their training posterior means.
pub fn attain_study(
    data: &AttainData,
    kernel: &attain::AttainKernel,
    sizes: &[usize],
    hmc: &HmcConfig,
    stump: &StumpConfig,
    seed: u64,
) -> Result<AttainReport> {
    let full = attain::attain_hier_without(data, None, kernel)?;
    let reference = fit(&full, hmc, sub_seed(seed, 0))?;
    let ref_groups = attain::group_columns(&full, attain::SECONDARY);
    let schools: Vec<usize> = (0..data.secondary()).collect();
    struct PerSchool {
        sf: Vec<Vec<f64>>,
        eb: Vec<f64>,
        seconds: Vec<f64>,
    }
    let per_school = schools
        .par_iter()
        .map(|&s| -> Result<PerSchool> {
            let tag = 100 * (s as u64 + 1);
            let train = attain::attain_hier_without(&data.without_secondary(s), Some(s), kernel)?;
            let post = fit(&train, hmc, sub_seed(seed, tag))?;
            let hyper_cols = attain::hyper_columns(&train, attain::SECONDARY);
            let group_cols = attain::group_columns(&train, attain::SECONDARY);
            let truth = columns(&reference, &ref_groups[s]);
            let ks_cols = |post: &PosteriorSamples, cols: &[usize]| -> Result<Vec<f64>> {
                cols.iter()
                    .zip(&truth)
                    .map(|(&c, t)| ks_two_sample(&post.column(c), t))
                    .collect()
            };
            let mut sf = Vec::new();
            let mut seconds = Vec::new();
            for (i, &m) in sizes.iter().enumerate() {
                let cfg = StumpConfig {
                    size: m,
                    ..stump.clone()
                };
                let t = tag + 10 * (i as u64 + 1);
                let (set, _) = build_stump(
                    kernel,
                    attain::MODEL_ID,
                    &post,
                    &hyper_cols,
                    &group_cols,
                    true,
                    &cfg,
                    sub_seed(seed, t),
                )?;
                let model = attain::attain_sf(&set, data, s, kernel)?;
                let sf_post = fit(&model, hmc, sub_seed(seed, t + 1))?;
                sf.push(ks_cols(&sf_post, &model.fungus_columns())?);
                seconds.push(sf_post.wall_time_seconds);
            }
            let tau: Vec<f64> = hyper_cols.iter().map(|&c| mean(&post.column(c))).collect();
            let eb_post = fit(&attain::attain_eb(data, s, &tau, kernel)?, hmc, sub_seed(seed, tag + 1))?;
            let eb = ks_cols(&eb_post, &[0, 1, 2, 3])?;
            Ok(PerSchool { sf, eb, seconds })
        })
        .collect::<Result<Vec<_>>>()?;
    let ks_sf: Vec<Vec<f64>> = (0..sizes.len())
        .map(|i| per_school.iter().flat_map(|p| p.sf[i].clone()).collect())
        .collect();
    let ks_eb: Vec<f64> = per_school.iter().flat_map(|p| p.eb.clone()).collect();
    let median_ks_sf = ks_sf.iter().map(|v| median(v)).collect::<Result<Vec<_>>>()?;
    let sf_seconds = (0..sizes.len())
        .map(|i| median(&per_school.iter().map(|p| p.seconds[i]).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    Ok(AttainReport {
        sizes: sizes.to_vec(),
        median_ks_eb: median(&ks_eb)?,
        ks_sf,
        ks_eb,
        median_ks_sf,
        hier_seconds: reference.wall_time_seconds,
        sf_seconds,
    })
}

/// Synthetic attainment data at the reduced scale used by the study.
pub fn reduced_attainment(seed: u64) -> Result<AttainData> {
    AttainData::synthesize(seed, AttainSizes::reduced())
}
