use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bmfa_core::experiments::{run_coverage, run_error_curve, CoverageConfig, ErrorCurveConfig};
use bmfa_core::gaussian::{mse_bound_for_model, GaussianPosterior};
use bmfa_core::observations::{RowClass, RowTarget};
use bmfa_core::ppc::{posterior_predictive, ppc_pvalues, rank_uncertainty, write_rank_csv, PpcRow};
use bmfa_core::project::{Loaded, Project};
use bmfa_core::sampler::map::{map_estimate, MapConfig};
use bmfa_core::sampler::{nuts_sample, PosteriorSamples, SamplerConfig};
use bmfa_core::{Error, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde_json::json;

#[derive(Parser)]
#[command(name = "bmfa", version, about = "Bayesian material flow analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Project file (TOML).
    project: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SamplerFlags {
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    tune: Option<usize>,
    #[arg(long)]
    target_accept: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the project, build the graph, and compile the model.
    Validate { project: PathBuf },
    /// Write the elicited prior of every variable.
    Elicit(Common),
    /// Closed-form posterior of the conjugate model.
    FitGaussian(Common),
    /// Posterior mode of the full model, with row residuals.
    FitMap(Common),
    /// Draw from the full posterior with NUTS.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampler: SamplerFlags,
    },
    /// Posterior predictive p-values from the draws in the output directory.
    Ppc(Common),
    /// Variables ranked by posterior HDI width.
    Rank(Common),
    /// Mean squared error bound of the conjugate posterior mean at the truth.
    Bound(Common),
    /// Simulation studies.
    Experiment {
        #[command(subcommand)]
        which: Experiment,
    },
}

#[derive(Subcommand)]
enum Experiment {
    /// Error of point estimates as data rows are added one at a time.
    Rmse(Common),
    /// Frequentist coverage of posterior HDIs over resampled datasets.
    Coverage {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampler: SamplerFlags,
    },
}

fn load(path: &Path) -> Result<Loaded> {
    Project::from_path(path)?.load()
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(out)?;
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn write_json(out: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(out.join(name), text)?;
    Ok(())
}

fn sampler_config(base: &SamplerConfig, seed: Option<u64>, flags: &SamplerFlags) -> Result<SamplerConfig> {
    let mut c = base.clone();
    if let Some(s) = seed {
        c.seed = s;
    }
    if let Some(v) = flags.chains {
        c.chains = v;
    }
    if let Some(v) = flags.draws {
        c.draws = v;
    }
    if let Some(v) = flags.tune {
        c.tune = v;
    }
    if let Some(v) = flags.target_accept {
        c.target_accept = v;
    }
    c.validate()?;
    Ok(c)
}

fn read_draws(out: &Path) -> Result<PosteriorSamples> {
    let path = out.join("draws.csv");
    let file = File::open(&path).map_err(|_| {
        Error::Project(format!("{} not found; run `bmfa sample` first", path.display()))
    })?;
    PosteriorSamples::read_csv(file)
}

fn validate(path: &Path) -> Result<()> {
    let l = load(path)?;
    println!(
        "p={} variables, {} data rows, {} balance rows",
        l.model.n_params(),
        l.data.len(),
        l.balance.len()
    );
    for row in &l.balance {
        if let RowTarget::MassBalance { process } = &row.target {
            let stock = if l.graph.index().stock(process).is_some() { "stock" } else { "no stock" };
            println!(
                "  balance {process}: {} in, {} out, {stock}",
                l.graph.inflows(process).count(),
                l.graph.outflows(process).count()
            );
        }
    }
    Ok(())
}

fn elicit(c: &Common) -> Result<()> {
    let l = load(&c.project)?;
    let prior = l.prior()?;
    let mut w = csv::Writer::from_writer(create(&c.out, "priors.csv")?);
    w.write_record(["variable", "mu", "sigma", "upper"])?;
    for (i, name) in l.names().iter().enumerate() {
        let upper = if prior.is_flow(i) { prior.upper.to_string() } else { String::new() };
        w.write_record([name.clone(), prior.mu[i].to_string(), prior.sigma[i].to_string(), upper])?;
    }
    w.flush()?;
    Ok(())
}

fn fit_gaussian(c: &Common) -> Result<()> {
    let l = load(&c.project)?;
    let post = GaussianPosterior::from_model(&l.prior()?, &l.model)?;
    let p = post.mean.len();
    let cov: Vec<Vec<f64>> = (0..p).map(|i| post.cov.row(i).iter().copied().collect()).collect();
    let negative: Vec<serde_json::Value> = post
        .negative_mass(l.graph.index())
        .into_iter()
        .map(|(variable, probability)| json!({ "variable": variable, "probability": probability }))
        .collect();
    write_json(
        &c.out,
        "gaussian.json",
        &json!({
            "variables": l.names(),
            "mean": post.mean.as_slice(),
            "sd": post.sd().as_slice(),
            "cov": cov,
            "negative_mass": negative,
        }),
    )
}

fn fit_map(c: &Common) -> Result<()> {
    let l = load(&c.project)?;
    let posterior = l.posterior()?;
    let res = map_estimate(&posterior, None, &MapConfig::default())?;
    let p = l.model.n_params();
    let theta = &res.theta[..p];
    let fitted = l.model.row_means(theta)?;
    let tau: Vec<f64> = if res.theta.len() > p {
        res.theta[p..].to_vec()
    } else {
        l.model.tau.iter().copied().collect()
    };
    let residuals: Vec<serde_json::Value> = (0..l.model.n_rows())
        .map(|r| {
            json!({
                "row": r,
                "label": l.model.labels[r],
                "observed": l.model.y[r],
                "fitted": fitted[r],
                "residual": l.model.y[r] - fitted[r],
                "tau": tau[r],
            })
        })
        .collect();
    let names = l.names();
    write_json(
        &c.out,
        "map.json",
        &json!({
            "variables": names,
            "mode": theta,
            "log_density": res.log_density,
            "iterations": res.iterations,
            "grad_norm": res.grad_norm,
            "at_bound": res.at_bound.iter().filter(|&&i| i < p).map(|&i| names[i].clone()).collect::<Vec<_>>(),
            "residuals": residuals,
        }),
    )
}

fn sample(c: &Common, flags: &SamplerFlags) -> Result<()> {
    let l = load(&c.project)?;
    let config = sampler_config(&l.project.sampler, c.seed, flags)?;
    let posterior = l.posterior()?;
    let samples = nuts_sample(&posterior, &config)?;
    samples.write_csv(create(&c.out, "draws.csv")?)?;
    samples.write_stats_csv(create(&c.out, "sample_stats.csv")?)?;
    write_json(&c.out, "stats.json", &samples.stats_json())?;
    let mut w = csv::Writer::from_writer(create(&c.out, "rhat.csv")?);
    w.write_record(["variable", "mean", "sd", "mcse", "ess", "rhat"])?;
    for s in samples.summary() {
        w.write_record([
            s.name,
            s.mean.to_string(),
            s.sd.to_string(),
            s.mcse.to_string(),
            s.ess.to_string(),
            s.rhat.map(|r| r.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let div = samples.divergences();
    if div > 0 {
        eprintln!("warning: {div} divergent transitions");
    }
    if let Some(r) = samples.max_rhat().filter(|r| *r > 1.01) {
        eprintln!("warning: max split R-hat {r:.3}");
    }
    Ok(())
}

fn ppc(c: &Common) -> Result<()> {
    let l = load(&c.project)?;
    let samples = read_draws(&c.out)?;
    let tau: Vec<f64> = l.model.tau.iter().copied().collect();
    let seed = c.seed.unwrap_or(l.project.sampler.seed);
    let reps = posterior_predictive(&samples, &l.model, &tau, l.flow_obs_upper(), seed)?;
    let report = ppc_pvalues(&reps)?;
    report.write_csv(create(&c.out, "ppc.csv")?)?;
    reps.write_long_csv(create(&c.out, "ppc_replicates.csv")?)?;
    for r in report.rows.iter().filter(|r| r.extreme) {
        println!("extreme: {} (p = {:.3})", r.label, r.pvalue);
    }
    let worst = report
        .rows
        .iter()
        .filter(|r| r.class == RowClass::MassBalance)
        .fold(None, |best: Option<&PpcRow>, r| match best {
            Some(b) if b.extremeness() >= r.extremeness() => Some(b),
            _ => Some(r),
        });
    if let Some(r) = worst {
        println!("least consistent balance: {} (p = {:.3})", r.label, r.pvalue);
    }
    Ok(())
}

fn rank(c: &Common) -> Result<()> {
    load(&c.project)?;
    let samples = read_draws(&c.out)?;
    let entries = rank_uncertainty(&samples)?;
    write_rank_csv(&entries, create(&c.out, "rank.csv")?)
}

fn bound(c: &Common) -> Result<()> {
    let l = load(&c.project)?;
    let study = l.study()?;
    let model = bmfa_core::observations::compile(&l.graph, &{
        let mut rows = study.balance.clone();
        rows.extend(study.data.iter().cloned());
        rows
    })?;
    let truth = DVector::from_vec(study.truth.clone());
    let report = mse_bound_for_model(&truth, &l.prior()?, &model)?;
    write_json(&c.out, "bound.json", &serde_json::to_value(&report)?)
}

fn experiment_seed(l: &Loaded, c: &Common) -> u64 {
    c.seed.unwrap_or(l.project.sampler.seed)
}

fn rmse(c: &Common) -> Result<()> {
    let l = load(&c.project)?;
    let study = l.study()?;
    let exp = l.project.experiment.clone().unwrap_or_default();
    let config = ErrorCurveConfig {
        runs: exp.runs,
        seed: experiment_seed(&l, c),
        ridge_lambda: exp.ridge_lambda,
        ..Default::default()
    };
    let curve = run_error_curve(&study, &config)?;
    curve.write_csv(create(&c.out, "error_curve.csv")?)
}

fn coverage(c: &Common, flags: &SamplerFlags) -> Result<()> {
    let l = load(&c.project)?;
    let study = l.study()?;
    let exp = l.project.experiment.clone().unwrap_or_default();
    let seed = experiment_seed(&l, c);
    let config = CoverageConfig {
        replications: exp.replications,
        batch: exp.batch,
        seed,
        mass: exp.mass,
        sampler: sampler_config(&l.project.sampler, Some(seed), flags)?,
        misfit: exp.misfit,
    };
    let table = run_coverage(&study, &config)?;
    table.write_csv(create(&c.out, "coverage.csv")?)?;
    if table.divergences > 0 {
        eprintln!("warning: {} divergent transitions across all fits", table.divergences);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Validate { project } => validate(project),
        Command::Elicit(c) => elicit(c),
        Command::FitGaussian(c) => fit_gaussian(c),
        Command::FitMap(c) => fit_map(c),
        Command::Sample { common, sampler } => sample(common, sampler),
        Command::Ppc(c) => ppc(c),
        Command::Rank(c) => rank(c),
        Command::Bound(c) => bound(c),
        Command::Experiment { which } => match which {
            Experiment::Rmse(c) => rmse(c),
            Experiment::Coverage { common, sampler } => coverage(common, sampler),
        },
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
