//! The `stump-fungus` command line.
//!
//! Every command reads its inputs, runs with the given seed and writes its
//! result atomically, so the same invocation always produces the same bytes.
//! Wall times are only written with `--timing`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{write_atomic, AttainData, AttainSizes, MarblesData, RatsData};
use crate::diagnostics::{emit_ks_data, emit_plot_data, summarize, KsReport, TimingReport};
use crate::error::{Error, Result};
use crate::hmc::{run_chain, HmcConfig, PosteriorSamples};
use crate::io::{load_stump, save_stump, to_json_string, PosteriorFile};
use crate::model::Target;
use crate::models::attain::{self, AttainKernel, AttainLikelihood};
use crate::models::marbles::{self, MarblesKernel, MarblesLikelihood};
use crate::models::normal::{self, NormalModel};
use crate::models::rats::{self, RatsKernel, RatsLikelihood};
use crate::models::{EmpiricalBayes, GroupLikelihood, Hierarchical};
use crate::stump::{GroupKernel, OptimizationReport, ProposalConfig, WeightedSampleSet};
use crate::studies::{build_stump, fit_weights, sub_seed, ObjectiveKind, StumpConfig};

#[derive(Parser, Debug)]
#[command(
    name = "stump-fungus",
    version,
    about = "Fit hierarchical models, compress them into stumps, fit new groups fast"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    #[arg(long, global = true, value_enum)]
    model: Option<ModelKind>,
    /// Data CSV. Rats defaults to the bundled table; normal has fixed data.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 1000)]
    burnin: usize,
    #[arg(long, global = true, default_value_t = 5000)]
    draws: usize,
    #[arg(long = "stump-size", global = true, default_value_t = 10)]
    stump_size: usize,
    #[arg(long, global = true, default_value_t = 16)]
    leapfrog: usize,
    /// Record wall times in posterior files.
    #[arg(long, global = true)]
    timing: bool,
    /// Attainment: flat priors on the log scales instead of Normal(-1, 1).
    #[arg(long = "flat-scale-prior", global = true)]
    flat_scale_prior: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Normal,
    Marbles,
    Rats,
    Attain,
}

#[derive(Args, Debug)]
#[group(multiple = false)]
struct GroupSel {
    #[arg(long)]
    group: Option<usize>,
    #[arg(long = "all-groups")]
    all_groups: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Hierarchical fit, optionally with one group left out.
    FitHier {
        #[arg(long)]
        exclude: Option<usize>,
    },
    /// Independent fits of rats experiments, one file with every `p[g]`.
    FitUnpooled {
        #[command(flatten)]
        groups: GroupSel,
    },
    /// Groups with the hyperparameters fixed.
    FitEb {
        #[command(flatten)]
        groups: GroupSel,
        /// Take the hyperparameters as posterior means from this fit.
        #[arg(long, conflicts_with = "hyper")]
        posterior: Option<PathBuf>,
        /// Constrained hyperparameters, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        hyper: Option<Vec<f64>>,
    },
    /// Draw a sample set from a hierarchical fit and optimize its weights.
    MakeStump {
        /// Training fit from `fit-hier`; fitted here when absent.
        #[arg(long)]
        posterior: Option<PathBuf>,
        /// Group left out of the training fit.
        #[arg(long)]
        exclude: Option<usize>,
        #[arg(long = "hyper-draws", default_value_t = 2000)]
        hyper_draws: usize,
        /// Importance draws; 2500 per hyperparameter by default.
        #[arg(long = "proposal-draws")]
        proposal_draws: Option<usize>,
        #[arg(long, value_enum, default_value_t = Objective::Importance)]
        objective: Objective,
    },
    /// Stump-and-fungus fit of new groups.
    ///
    /// With `--all-groups`, `--out` is a directory that receives one
    /// `group-<g>.json` per group.
    FitFungus {
        #[arg(long)]
        stump: PathBuf,
        #[command(flatten)]
        groups: GroupSel,
    },
    /// KS statistics between the marginals two posterior files share.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write `name,ks` rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Times a hierarchical fit against a single-group stump-and-fungus fit.
    Bench {
        /// Group fitted as the fungus; the last one by default.
        #[arg(long)]
        group: Option<usize>,
        /// Use this stump instead of building one.
        #[arg(long)]
        stump: Option<PathBuf>,
    },
    /// Write synthetic data.
    Synth {
        /// Attainment at 500 pupils, 20 primary and 6 secondary schools.
        #[arg(long)]
        reduced: bool,
        #[arg(long = "draws-per-box", default_value_t = 5)]
        draws_per_box: usize,
    },
    /// Histogram and ECDF CSVs for every marginal, into the `--out` directory.
    Plot { posterior: PathBuf },
    /// Mean, sd and quantiles per marginal, as CSV.
    Summarize { posterior: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Objective {
    Importance,
    Sample,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Outcome<T> {
    Err(Failure::Usage(msg.into()))
}

/// Parses `args` (program name first) and runs the command. Returns 0 on
/// success, 1 on a usage error and 2 when the command itself fails.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match thread_pool() {
        Ok(Some(pool)) => pool.install(|| dispatch(&cli)),
        Ok(None) => dispatch(&cli),
        Err(f) => Err(f),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("\nFor more information, try '--help'.");
            1
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// A pool capped at `SF_THREADS` workers, if set.
fn thread_pool() -> Outcome<Option<rayon::ThreadPool>> {
    let Ok(v) = std::env::var("SF_THREADS") else {
        return Ok(None);
    };
    let n: usize = match v.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => return usage(format!("SF_THREADS must be a positive integer, got `{v}`")),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map(Some)
        .map_err(|e| Failure::Run(Error::Config(format!("thread pool: {e}"))))
}

enum Dataset {
    Normal,
    Marbles(MarblesData),
    Rats(RatsData),
    Attain(AttainData),
}

impl Dataset {
    fn id(&self) -> &'static str {
        match self {
            Dataset::Normal => normal::MODEL_ID,
            Dataset::Marbles(_) => marbles::MODEL_ID,
            Dataset::Rats(_) => rats::MODEL_ID,
            Dataset::Attain(_) => attain::MODEL_ID,
        }
    }

    fn groups(&self) -> usize {
        match self {
            Dataset::Normal => 0,
            Dataset::Marbles(d) => d.boxes(),
            Dataset::Rats(d) => d.len(),
            Dataset::Attain(d) => d.secondary(),
        }
    }

    fn check_group(&self, g: usize) -> Outcome<()> {
        if g >= self.groups() {
            return usage(format!(
                "group {g} out of range: the {} data have {} groups",
                self.id(),
                self.groups()
            ));
        }
        Ok(())
    }
}

struct Ctx<'a> {
    g: &'a Global,
    hmc: HmcConfig,
    kernel: AttainKernel,
}

impl<'a> Ctx<'a> {
    fn new(g: &'a Global) -> Self {
        let kernel = if g.flat_scale_prior {
            AttainKernel::default()
        } else {
            AttainKernel::with_scale_prior(-1.0, 1.0)
        };
        Ctx {
            g,
            hmc: HmcConfig {
                leapfrog_steps: g.leapfrog,
                burn_in: g.burnin,
                draws: g.draws,
                seed: g.seed,
                ..HmcConfig::default()
            },
            kernel,
        }
    }

    fn model(&self) -> Outcome<ModelKind> {
        match self.g.model {
            Some(m) => Ok(m),
            None => usage("--model is required"),
        }
    }

    fn out(&self) -> Outcome<&Path> {
        match &self.g.out {
            Some(p) => Ok(p),
            None => usage("--out is required"),
        }
    }

    fn load(&self) -> Outcome<Dataset> {
        let data = self.g.data.as_deref();
        Ok(match (self.model()?, data) {
            (ModelKind::Normal, None) => Dataset::Normal,
            (ModelKind::Normal, Some(_)) => return usage("the normal model has fixed data"),
            (ModelKind::Rats, None) => Dataset::Rats(RatsData::bundled()),
            (ModelKind::Rats, Some(p)) => Dataset::Rats(RatsData::load(p)?),
            (ModelKind::Marbles, Some(p)) => Dataset::Marbles(MarblesData::load(p)?),
            (ModelKind::Attain, Some(p)) => Dataset::Attain(AttainData::load(p)?),
            (m, None) => return usage(format!("--data is required for {m:?}").to_lowercase()),
        })
    }

    fn hmc(&self, seed: u64) -> HmcConfig {
        HmcConfig {
            seed,
            ..self.hmc.clone()
        }
    }

    fn save(&self, path: &Path, id: &str, post: &PosteriorSamples, seed: u64) -> Result<()> {
        PosteriorFile::new(id, post, &self.hmc(seed), self.g.timing).save(path)
    }
}

fn sample(model: &dyn Target, hmc: &HmcConfig) -> Result<PosteriorSamples> {
    run_chain(model, hmc)
}

/// Attainment fits of the secondary-school hierarchy alone carry its prefix
/// so that they line up with the full model's names.
fn with_prefix(mut post: PosteriorSamples, prefix: &str) -> PosteriorSamples {
    for n in &mut post.names {
        n.insert_str(0, prefix);
    }
    post
}

fn others(n: usize, exclude: Option<usize>) -> Vec<usize> {
    (0..n).filter(|&g| Some(g) != exclude).collect()
}

fn selected(ds: &Dataset, sel: &GroupSel) -> Outcome<Vec<usize>> {
    match (sel.group, sel.all_groups) {
        (Some(g), _) => {
            ds.check_group(g)?;
            Ok(vec![g])
        }
        (None, true) => Ok((0..ds.groups()).collect()),
        (None, false) => usage("one of --group or --all-groups is required"),
    }
}

fn dispatch(cli: &Cli) -> Outcome<()> {
    let ctx = Ctx::new(&cli.global);
    match &cli.command {
        Command::FitHier { exclude } => fit_hier(&ctx, *exclude),
        Command::FitUnpooled { groups } => fit_unpooled(&ctx, groups),
        Command::FitEb {
            groups,
            posterior,
            hyper,
        } => fit_eb(&ctx, groups, posterior.as_deref(), hyper.as_deref()),
        Command::MakeStump {
            posterior,
            exclude,
            hyper_draws,
            proposal_draws,
            objective,
        } => {
            let cfg = StumpConfig {
                size: ctx.g.stump_size,
                hyper_draws: *hyper_draws,
                objective: match objective {
                    Objective::Importance => ObjectiveKind::Importance,
                    Objective::Sample => ObjectiveKind::SampleNormalized,
                },
                proposal: ProposalConfig {
                    draws: *proposal_draws,
                    ..ProposalConfig::default()
                },
                ..StumpConfig::default()
            };
            make_stump(&ctx, posterior.as_deref(), *exclude, &cfg)
        }
        Command::FitFungus { stump, groups } => fit_fungus(&ctx, stump, groups),
        Command::Compare { a, b, csv } => compare(&ctx, a, b, csv.as_deref()),
        Command::Bench { group, stump } => bench(&ctx, *group, stump.as_deref()),
        Command::Synth {
            reduced,
            draws_per_box,
        } => synth(&ctx, *reduced, *draws_per_box),
        Command::Plot { posterior } => {
            let post = PosteriorFile::load(posterior)?.samples()?;
            for p in emit_plot_data(&post, ctx.out()?)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Summarize { posterior } => {
            let post = PosteriorFile::load(posterior)?.samples()?;
            let mut body = String::from("name,mean,sd,q05,q50,q95\n");
            for s in summarize(&post)? {
                writeln!(body, "{},{},{},{},{},{}", s.name, s.mean, s.sd, s.q05, s.q50, s.q95)
                    .expect("string write");
            }
            emit(&ctx, &body)
        }
    }
}

/// Writes `body` to `--out` if given, else prints it.
fn emit(ctx: &Ctx, body: &str) -> Outcome<()> {
    match &ctx.g.out {
        Some(p) => write_atomic(p, body.as_bytes())?,
        None => print!("{body}"),
    }
    Ok(())
}

/// The training hierarchical model and its fit, plus what a stump needs.
struct HierFit {
    post: PosteriorSamples,
    hyper_columns: Vec<usize>,
    group_columns: Vec<Vec<usize>>,
}

/// A hierarchical model with the columns of the hierarchy a stump covers.
type HierModel = (Box<dyn Target>, Vec<usize>, Vec<Vec<usize>>);

fn hier_model(ctx: &Ctx, ds: &Dataset, exclude: Option<usize>) -> Result<HierModel> {
    Ok(match ds {
        Dataset::Normal => (
            Box::new(NormalModel::new(normal::Y.to_vec())),
            vec![0, 1],
            Vec::new(),
        ),
        Dataset::Marbles(d) => {
            let m = marbles::marbles_hier_subset(d, others(d.boxes(), exclude))?;
            let (h, g) = (m.hyper_columns(), m.group_columns());
            (Box::new(m), h, g)
        }
        Dataset::Rats(d) => {
            let m = Hierarchical::with_groups(
                RatsKernel::default(),
                RatsLikelihood::new(d),
                others(d.len(), exclude),
            )?;
            let (h, g) = (m.hyper_columns(), m.group_columns());
            (Box::new(m), h, g)
        }
        Dataset::Attain(d) => {
            let m = match exclude {
                Some(s) => attain::attain_hier_without(&d.without_secondary(s), Some(s), &ctx.kernel)?,
                None => attain::attain_hier_without(d, None, &ctx.kernel)?,
            };
            let h = attain::hyper_columns(&m, attain::SECONDARY);
            let g = attain::group_columns(&m, attain::SECONDARY);
            (Box::new(m), h, g)
        }
    })
}

fn hier_id(ds: &Dataset) -> String {
    format!("{}-hier", ds.id())
}

fn run_hier(ctx: &Ctx, ds: &Dataset, exclude: Option<usize>, seed: u64) -> Result<HierFit> {
    let (model, hyper_columns, group_columns) = hier_model(ctx, ds, exclude)?;
    Ok(HierFit {
        post: sample(model.as_ref(), &ctx.hmc(seed))?,
        hyper_columns,
        group_columns,
    })
}

fn fit_hier(ctx: &Ctx, exclude: Option<usize>) -> Outcome<()> {
    let ds = ctx.load()?;
    if let Some(g) = exclude {
        ds.check_group(g)?;
    }
    let out = ctx.out()?;
    let fit = run_hier(ctx, &ds, exclude, ctx.g.seed)?;
    ctx.save(out, &hier_id(&ds), &fit.post, ctx.g.seed)?;
    Ok(())
}

fn fit_unpooled(ctx: &Ctx, sel: &GroupSel) -> Outcome<()> {
    if ctx.model()? != ModelKind::Rats {
        return usage("fit-unpooled is only defined for --model rats");
    }
    let ds = ctx.load()?;
    let Dataset::Rats(d) = &ds else {
        return usage("fit-unpooled is only defined for --model rats");
    };
    let groups = selected(&ds, sel)?;
    let out = ctx.out()?;
    use rayon::prelude::*;
    let cols = groups
        .par_iter()
        .map(|&g| {
            let (n, y) = d.rows()[g];
            let post = sample(&rats::rats_unpooled(n, y)?, &ctx.hmc(sub_seed(ctx.g.seed, g as u64)))?;
            Ok(post.column(0))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = (0..ctx.g.draws)
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    let names = groups.iter().map(|g| format!("p[{g}]")).collect();
    let post = PosteriorSamples::from_rows(names, rows)?;
    ctx.save(out, "rats-unpooled", &post, ctx.g.seed)?;
    Ok(())
}

fn eb_model<K, L>(kernel: K, lik: L, groups: Vec<usize>, tau: &[f64]) -> Result<Box<dyn Target>>
where
    K: GroupKernel,
    L: GroupLikelihood,
    EmpiricalBayes<K, L>: Target + 'static,
{
    Ok(Box::new(EmpiricalBayes::new(kernel, lik, groups, tau)?))
}

fn hyper_names(ctx: &Ctx, ds: &Dataset) -> Vec<String> {
    match ds {
        Dataset::Normal => vec!["mu".into(), "sigma".into()],
        Dataset::Marbles(d) => MarblesKernel::new(d.marbles_per_box()).hyper_space().names(),
        Dataset::Rats(_) => RatsKernel::default().hyper_space().names(),
        Dataset::Attain(_) => ctx
            .kernel
            .hyper_space()
            .names()
            .into_iter()
            .map(|n| format!("{}{n}", attain::HIERARCHIES[attain::SECONDARY]))
            .collect(),
    }
}

fn fit_eb(ctx: &Ctx, sel: &GroupSel, posterior: Option<&Path>, hyper: Option<&[f64]>) -> Outcome<()> {
    let ds = ctx.load()?;
    if matches!(ds, Dataset::Normal) {
        return usage("fit-eb needs a grouped model");
    }
    let groups = selected(&ds, sel)?;
    let out = ctx.out()?;
    let names = hyper_names(ctx, &ds);
    let tau = match (posterior, hyper) {
        (_, Some(h)) => h.to_vec(),
        (Some(p), None) => {
            let post = PosteriorFile::load(p)?.samples()?;
            names
                .iter()
                .map(|n| match post.index_of(n) {
                    Some(j) => Ok(post.column_mean(j)),
                    None => Err(Error::InvalidData(format!(
                        "{}: no column `{n}`",
                        p.display()
                    ))),
                })
                .collect::<Result<Vec<_>>>()?
        }
        (None, None) => return usage("one of --posterior or --hyper is required"),
    };
    if tau.len() != names.len() {
        return usage(format!(
            "--hyper needs {} values ({})",
            names.len(),
            names.join(", ")
        ));
    }
    let model = match &ds {
        Dataset::Normal => unreachable!("rejected above"),
        Dataset::Marbles(d) => eb_model(
            MarblesKernel::new(d.marbles_per_box()),
            MarblesLikelihood::new(d),
            groups,
            &tau,
        )?,
        Dataset::Rats(d) => eb_model(RatsKernel::default(), RatsLikelihood::new(d), groups, &tau)?,
        Dataset::Attain(d) => eb_model(
            ctx.kernel.clone(),
            AttainLikelihood::new(d, attain::SECONDARY),
            groups,
            &tau,
        )?,
    };
    let mut post = sample(model.as_ref(), &ctx.hmc(ctx.g.seed))?;
    if matches!(ds, Dataset::Attain(_)) {
        post = with_prefix(post, attain::HIERARCHIES[attain::SECONDARY]);
    }
    ctx.save(out, &format!("{}-eb", ds.id()), &post, ctx.g.seed)?;
    Ok(())
}

fn stump_from(
    ctx: &Ctx,
    ds: &Dataset,
    fit: &HierFit,
    cfg: &StumpConfig,
    seed: u64,
) -> Result<(WeightedSampleSet, OptimizationReport)> {
    let id = ds.id();
    let (hc, gc, post) = (&fit.hyper_columns, &fit.group_columns, &fit.post);
    let (mut set, report) = match ds {
        Dataset::Normal => {
            let set = normal::surrogate_set();
            fit_weights(&normal::NormalKernel::default(), &set, post, hc, cfg, seed)?
        }
        Dataset::Marbles(d) => build_stump(
            &MarblesKernel::new(d.marbles_per_box()),
            id,
            post,
            hc,
            gc,
            false,
            cfg,
            seed,
        )?,
        Dataset::Rats(_) => build_stump(&RatsKernel::default(), id, post, hc, gc, false, cfg, seed)?,
        Dataset::Attain(_) => build_stump(&ctx.kernel, id, post, hc, gc, true, cfg, seed)?,
    };
    set.meta.seed = seed;
    set.meta.created = std::env::var("SOURCE_DATE_EPOCH").ok();
    Ok((set, report))
}

fn make_stump(ctx: &Ctx, posterior: Option<&Path>, exclude: Option<usize>, cfg: &StumpConfig) -> Outcome<()> {
    let ds = ctx.load()?;
    if let Some(g) = exclude {
        ds.check_group(g)?;
    }
    let out = ctx.out()?;
    let fit = match posterior {
        None => run_hier(ctx, &ds, exclude, sub_seed(ctx.g.seed, 0))?,
        Some(p) => {
            let file = PosteriorFile::load(p)?;
            let (model, hyper_columns, group_columns) = hier_model(ctx, &ds, exclude)?;
            let expected = model.space().names();
            if file.model_id != hier_id(&ds) || file.names != expected {
                return Err(Failure::Run(Error::InvalidData(format!(
                    "{}: not a {} fit of these data with --exclude {:?}",
                    p.display(),
                    hier_id(&ds),
                    exclude
                ))));
            }
            HierFit {
                post: file.samples()?,
                hyper_columns,
                group_columns,
            }
        }
    };
    let (set, report) = stump_from(ctx, &ds, &fit, cfg, sub_seed(ctx.g.seed, 1))?;
    save_stump(&set, out)?;
    eprintln!(
        "objective {:.6} -> {:.6} in {} iterations (converged: {}, normalizer ESS {:.1})",
        report.initial_objective,
        report.final_objective,
        report.iterations,
        report.converged,
        report.normalizer_ess
    );
    Ok(())
}

fn fungus_model(ctx: &Ctx, ds: &Dataset, stump: &WeightedSampleSet, g: usize) -> Result<Box<dyn Target>> {
    Ok(match ds {
        Dataset::Normal => Box::new(normal::normal_stochastic(stump)?),
        Dataset::Marbles(d) => Box::new(marbles::marbles_sf(stump, d, g)?),
        Dataset::Rats(d) => Box::new(rats::rats_sf(stump, d, g)?),
        Dataset::Attain(d) => Box::new(attain::attain_sf(stump, d, g, &ctx.kernel)?),
    })
}

fn run_fungus(ctx: &Ctx, ds: &Dataset, stump: &WeightedSampleSet, g: usize, seed: u64) -> Result<PosteriorSamples> {
    let post = sample(fungus_model(ctx, ds, stump, g)?.as_ref(), &ctx.hmc(seed))?;
    Ok(match ds {
        Dataset::Attain(_) => with_prefix(post, attain::HIERARCHIES[attain::SECONDARY]),
        _ => post,
    })
}

fn fit_fungus(ctx: &Ctx, stump_path: &Path, sel: &GroupSel) -> Outcome<()> {
    let ds = ctx.load()?;
    let stump = load_stump(stump_path)?;
    let out = ctx.out()?;
    let id = format!("{}-fungus", ds.id());
    if matches!(ds, Dataset::Normal) {
        if sel.group.is_some() || sel.all_groups {
            return usage("the normal model has no groups");
        }
        let post = run_fungus(ctx, &ds, &stump, 0, ctx.g.seed)?;
        ctx.save(out, &id, &post, ctx.g.seed)?;
        return Ok(());
    }
    let groups = selected(&ds, sel)?;
    if !sel.all_groups {
        let post = run_fungus(ctx, &ds, &stump, groups[0], ctx.g.seed)?;
        ctx.save(out, &id, &post, ctx.g.seed)?;
        return Ok(());
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    use rayon::prelude::*;
    groups.par_iter().try_for_each(|&g| -> Result<()> {
        let seed = sub_seed(ctx.g.seed, g as u64);
        let post = run_fungus(ctx, &ds, &stump, g, seed)?;
        ctx.save(&out.join(format!("group-{g}.json")), &id, &post, seed)
    })?;
    Ok(())
}

fn compare(ctx: &Ctx, a: &Path, b: &Path, csv: Option<&Path>) -> Outcome<()> {
    let pa = PosteriorFile::load(a)?.samples()?;
    let pb = PosteriorFile::load(b)?.samples()?;
    let report = KsReport::compare(&pa, &pb)?;
    if let Some(p) = csv {
        emit_ks_data(&report, p)?;
    }
    match &ctx.g.out {
        Some(p) => write_atomic(p, to_json_string(&report).as_bytes())?,
        None => {
            for (n, k) in &report.per_marginal {
                println!("{n:<24} {k:.4}");
            }
            println!("{:<24} {:.4}", "median", report.median_ks);
        }
    }
    Ok(())
}

fn bench(ctx: &Ctx, group: Option<usize>, stump_path: Option<&Path>) -> Outcome<()> {
    let ds = ctx.load()?;
    if matches!(ds, Dataset::Normal) {
        return usage("bench needs a grouped model");
    }
    let g = group.unwrap_or(ds.groups() - 1);
    ds.check_group(g)?;
    let seed = ctx.g.seed;
    let full = run_hier(ctx, &ds, None, sub_seed(seed, 0))?;
    let stump = match stump_path {
        Some(p) => load_stump(p)?,
        None => {
            let train = run_hier(ctx, &ds, Some(g), sub_seed(seed, 1))?;
            let cfg = StumpConfig {
                size: ctx.g.stump_size,
                ..StumpConfig::default()
            };
            stump_from(ctx, &ds, &train, &cfg, sub_seed(seed, 2))?.0
        }
    };
    let sf = run_fungus(ctx, &ds, &stump, g, sub_seed(seed, 3))?;
    let report = |label: String, post: &PosteriorSamples, tag| TimingReport {
        label,
        wall_time_seconds: post.wall_time_seconds,
        burn_in: ctx.g.burnin,
        draws: ctx.g.draws,
        seed: sub_seed(seed, tag),
    };
    let reports = vec![
        report(hier_id(&ds), &full.post, 0),
        report(format!("{}-fungus[{g}]", ds.id()), &sf, 3),
    ];
    let body = serde_json::to_string_pretty(&reports).expect("in-memory serialization") + "\n";
    emit(ctx, &body)?;
    eprintln!(
        "fungus / hierarchical wall time: {:.3}",
        sf.wall_time_seconds / full.post.wall_time_seconds
    );
    Ok(())
}

fn synth(ctx: &Ctx, reduced: bool, draws_per_box: usize) -> Outcome<()> {
    let out = ctx.out()?;
    let seed = ctx.g.seed;
    match ctx.model()? {
        ModelKind::Marbles => MarblesData::synthesize(
            seed,
            &MarblesData::DEFAULT_WHITE,
            MarblesData::MARBLES_PER_BOX,
            draws_per_box,
        )?
        .save(out)?,
        ModelKind::Attain => {
            let sizes = if reduced {
                AttainSizes::reduced()
            } else {
                AttainSizes::default()
            };
            AttainData::synthesize(seed, sizes)?.save(out)?
        }
        ModelKind::Rats => RatsData::bundled().save(out)?,
        ModelKind::Normal => return usage("the normal model has fixed data"),
    }
    Ok(())
}
