//! Simulation studies: error curves as data are added one row at a time,
//! and frequentist coverage of posterior HDIs over resampled datasets.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::Posterior;
use crate::error::{Error, Result};
use crate::fixtures;
use crate::gaussian::{ridge_estimate, GaussianPosterior};
use crate::graph::SystemGraph;
use crate::observations::{balance_rows, compile, ObservationRow, RowClass};
use crate::ppc::{hdi, DEFAULT_MASS};
use crate::priors::{elicit_zinc, PriorSpec, ZincMode};
use crate::sampler::map::{map_estimate, MapConfig};
use crate::sampler::{nuts_sample, SamplerConfig};
use crate::special::sample_truncated_normal;

/// Everything a study needs: the system, its ground truth, the data rows in
/// their declared order, the balance rows, and the candidate priors.
#[derive(Clone, Debug)]
pub struct Study {
    pub graph: SystemGraph,
    /// Truth in variable-index order.
    pub truth: Vec<f64>,
    pub data: Vec<ObservationRow>,
    pub balance: Vec<ObservationRow>,
    pub priors: Vec<(ZincMode, PriorSpec)>,
    pub flow_obs_upper: f64,
}

impl Study {
    pub fn validate(&self) -> Result<()> {
        let p = self.graph.index().len();
        if self.truth.len() != p {
            return Err(Error::Dimension(format!("truth has {} values for {p} variables", self.truth.len())));
        }
        for (_, prior) in &self.priors {
            if prior.len() != p {
                return Err(Error::Dimension(format!("prior covers {} of {p} variables", prior.len())));
            }
        }
        let mut all = self.balance.clone();
        all.extend(self.data.iter().cloned());
        compile(&self.graph, &all)?;
        Ok(())
    }

    fn compile_first(&self, rows: &[ObservationRow]) -> Result<crate::observations::CompiledModel> {
        let mut all = self.balance.clone();
        all.extend(rows.iter().cloned());
        compile(&self.graph, &all)
    }
}

/// Prior replaced by a deliberately mis-centered one: mode `offset_sds`
/// standard deviations from the truth, with sd `sigma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Misfit {
    pub variable: String,
    pub offset_sds: f64,
    pub sigma: f64,
}

pub fn apply_misfit(prior: &PriorSpec, graph: &SystemGraph, truth: &[f64], misfits: &[Misfit]) -> Result<PriorSpec> {
    let mut out = prior.clone();
    for m in misfits {
        let i = graph
            .index()
            .position(&m.variable)
            .ok_or_else(|| Error::Project(format!("misfit variable {} is not in the system", m.variable)))?;
        out.mu[i] = truth[i] + m.offset_sds * m.sigma;
        out.sigma[i] = m.sigma;
    }
    PriorSpec::new(out.mu, out.sigma, out.n_stocks, out.upper)
}

/// The built-in zinc-like study: one datum per variable at the truth,
/// every row (including balances) at noise `tau`, and priors elicited from
/// the true values in both zinc modes.
pub fn zinc_like_study(tau: f64) -> Result<Study> {
    let z = fixtures::zinc_like();
    let graph = SystemGraph::build(&z.system)?;
    let truth = z.theta(&graph);
    let index = graph.index();
    let reported: Vec<Option<f64>> = truth.iter().map(|v| Some(*v)).collect();
    let priors = [ZincMode::Weakly, ZincMode::Uninformative]
        .into_iter()
        .map(|mode| Ok((mode, elicit_zinc(index, mode, &reported, &[], fixtures::ZINC_MEAN_ABS, 1e4)?)))
        .collect::<Result<Vec<_>>>()?;
    let balance = balance_rows(&graph, &Default::default(), tau)?;
    Ok(Study {
        data: z.data_rows(tau),
        graph,
        truth,
        balance,
        priors,
        flow_obs_upper: 1e4,
    })
}

/// The misfit used by the zinc-like coverage study. Extraction from the
/// Lithosphere is overstated by 90 along the path Lithosphere -> Production
/// -> Production stock, so every balance row still holds at the prior mean
/// and only data on these three variables can expose the error.
pub fn zinc_like_misfits() -> Vec<Misfit> {
    [
        ("S:Lithosphere", -3.0),
        ("U:Lithosphere->Production", 3.0),
        ("S:Production", 3.0),
    ]
    .iter()
    .map(|&(v, k)| Misfit {
        variable: v.into(),
        offset_sds: k,
        sigma: 30.0,
    })
    .collect()
}

/// Seed for work item `(a, b)` derived from a base seed (splitmix64).
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Mode of the full truncated model.
    Map,
    /// Closed-form conjugate posterior mean.
    Gaussian,
    /// Ridge regression without a prior.
    Ridge,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Map => "map",
            Self::Gaussian => "gaussian",
            Self::Ridge => "ridge",
        }
    }
}

fn mode_str(m: Option<ZincMode>) -> &'static str {
    match m {
        Some(ZincMode::Weakly) => "weakly",
        Some(ZincMode::Uninformative) => "uninformative",
        None => "none",
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorCurveConfig {
    pub runs: usize,
    pub seed: u64,
    /// Ridge penalty expressed as an equivalent prior variance.
    pub ridge_lambda: f64,
    pub methods: Vec<Method>,
}

impl Default for ErrorCurveConfig {
    fn default() -> Self {
        Self {
            runs: 50,
            seed: 0,
            ridge_lambda: 40.0,
            methods: vec![Method::Map, Method::Gaussian, Method::Ridge],
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvePoint {
    pub method: Method,
    pub prior: Option<ZincMode>,
    pub k: usize,
    pub mean_rmse: f64,
    pub se_rmse: f64,
    pub mean_max_error: f64,
    pub se_max_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorCurve {
    pub runs: usize,
    pub n_data: usize,
    pub points: Vec<CurvePoint>,
}

impl ErrorCurve {
    /// Points of one method/prior combination, ordered by `k`.
    pub fn series(&self, method: Method, prior: Option<ZincMode>) -> Vec<&CurvePoint> {
        self.points
            .iter()
            .filter(|p| p.method == method && p.prior == prior)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "prior", "k", "mean_rmse", "se_rmse", "mean_max_error", "se_max_error"])?;
        for p in &self.points {
            out.write_record([
                p.method.as_str().to_string(),
                mode_str(p.prior).to_string(),
                p.k.to_string(),
                p.mean_rmse.to_string(),
                p.se_rmse.to_string(),
                p.mean_max_error.to_string(),
                p.se_max_error.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn errors(est: &[f64], truth: &[f64]) -> (f64, f64) {
    let mut sq = 0.0;
    let mut max = 0.0f64;
    for (a, b) in est.iter().zip(truth) {
        let d = (a - b).abs();
        sq += d * d;
        max = max.max(d);
    }
    ((sq / truth.len() as f64).sqrt(), max)
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Ridge on rows scaled by their noise, so heteroscedastic rows are
/// weighted as the likelihood would.
fn weighted_ridge(model: &crate::observations::CompiledModel, lambda: f64) -> Result<DVector<f64>> {
    let n = model.n_rows();
    let p = model.n_params();
    let x = DMatrix::from_fn(n, p, |r, c| model.x[(r, c)] / model.tau[r]);
    let y = DVector::from_fn(n, |r, _| model.y[r] / model.tau[r]);
    ridge_estimate(&x, &y, 1.0, lambda)
}

type Combo = (Method, Option<ZincMode>);

fn combos(study: &Study, methods: &[Method]) -> Vec<(Combo, Option<usize>)> {
    let mut out = Vec::new();
    for &m in methods {
        if m == Method::Ridge {
            out.push(((m, None), None));
        } else {
            for (j, (mode, _)) in study.priors.iter().enumerate() {
                out.push(((m, Some(*mode)), Some(j)));
            }
        }
    }
    out
}

/// For `runs` random orderings of the data rows, add rows one at a time and
/// record RMSE and maximum absolute error of each point estimate against
/// the truth. Ordering `r` comes from stream `r` of a generator seeded
/// with `seed`.
pub fn run_error_curve(study: &Study, config: &ErrorCurveConfig) -> Result<ErrorCurve> {
    study.validate()?;
    if config.runs == 0 {
        return Err(Error::Project("error curve needs at least one run".into()));
    }
    let n = study.data.len();
    let combos = combos(study, &config.methods);
    let map_config = MapConfig::default();

    // per run: [combo][k] -> (rmse, max)
    let per_run = (0..config.runs)
        .into_par_iter()
        .map(|r| -> Result<Vec<Vec<(f64, f64)>>> {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(r as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut out = vec![Vec::with_capacity(n + 1); combos.len()];
            for k in 0..=n {
                let rows: Vec<ObservationRow> = order[..k].iter().map(|&i| study.data[i].clone()).collect();
                let model = study.compile_first(&rows)?;
                for (c, ((method, _), prior_idx)) in combos.iter().enumerate() {
                    let est: Vec<f64> = match (method, prior_idx) {
                        (Method::Ridge, _) => weighted_ridge(&model, config.ridge_lambda)?.iter().copied().collect(),
                        (Method::Gaussian, Some(j)) => GaussianPosterior::from_model(&study.priors[*j].1, &model)?
                            .mean
                            .iter()
                            .copied()
                            .collect(),
                        (Method::Map, Some(j)) => {
                            let post = Posterior::with_model_noise(study.priors[*j].1.clone(), &model, study.flow_obs_upper)?;
                            map_estimate(&post, None, &map_config)?.theta
                        }
                        _ => unreachable!("prior-based methods carry a prior index"),
                    };
                    out[c].push(errors(&est, &study.truth));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::new();
    for (c, ((method, prior), _)) in combos.iter().enumerate() {
        for k in 0..=n {
            let rmse: Vec<f64> = per_run.iter().map(|run| run[c][k].0).collect();
            let max: Vec<f64> = per_run.iter().map(|run| run[c][k].1).collect();
            let (mean_rmse, se_rmse) = mean_se(&rmse);
            let (mean_max_error, se_max_error) = mean_se(&max);
            points.push(CurvePoint {
                method: *method,
                prior: *prior,
                k,
                mean_rmse,
                se_rmse,
                mean_max_error,
                se_max_error,
            });
        }
    }
    Ok(ErrorCurve {
        runs: config.runs,
        n_data: n,
        points,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    pub replications: usize,
    pub batch: usize,
    pub seed: u64,
    pub mass: f64,
    pub sampler: SamplerConfig,
    pub misfit: Vec<Misfit>,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            replications: 300,
            batch: 5,
            seed: 0,
            mass: DEFAULT_MASS,
            sampler: SamplerConfig {
                draws: 1000,
                tune: 1000,
                ..Default::default()
            },
            misfit: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverageCell {
    pub variable: String,
    pub prior: ZincMode,
    pub batch: usize,
    /// Percent of replications whose HDI contains the truth.
    pub coverage: f64,
    /// Standard error of `coverage`, in percent.
    pub se: f64,
    pub mean_width: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverageTable {
    pub replications: usize,
    pub batches: Vec<usize>,
    /// Variables given a mis-centered prior.
    pub misfit: Vec<String>,
    pub divergences: usize,
    pub cells: Vec<CoverageCell>,
}

impl CoverageTable {
    pub fn cell(&self, variable: &str, prior: ZincMode, batch: usize) -> Option<&CoverageCell> {
        self.cells
            .iter()
            .find(|c| c.variable == variable && c.prior == prior && c.batch == batch)
    }

    /// One row per variable, prior, and batch size.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["variable", "prior", "batch", "coverage", "se", "mean_width"])?;
        for c in &self.cells {
            out.write_record([
                c.variable.clone(),
                mode_str(Some(c.prior)).to_string(),
                c.batch.to_string(),
                c.coverage.to_string(),
                c.se.to_string(),
                c.mean_width.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Cumulative batch sizes `b, 2b, ...`, ending at `n`.
pub fn batch_sizes(n: usize, batch: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..).map(|k| k * batch).take_while(|&s| s < n).collect();
    out.push(n);
    out
}

/// Draw one dataset from the likelihood at the truth: flow rows truncated
/// to `[0, upper]`, all other data rows normal.
pub fn resample_data<R: rand::Rng + ?Sized>(
    study: &Study,
    rng: &mut R,
) -> Result<Vec<ObservationRow>> {
    let model = compile(&study.graph, &study.data)?;
    let means = model.row_means(&study.truth)?;
    Ok(study
        .data
        .iter()
        .zip(&means)
        .map(|(row, &m)| {
            let mut row = row.clone();
            row.value = if row.class() == RowClass::Flow {
                sample_truncated_normal(rng, m, row.noise_sd, 0.0, study.flow_obs_upper)
            } else {
                let e: f64 = StandardNormal.sample(rng);
                m + row.noise_sd * e
            };
            row
        })
        .collect())
}

/// For `replications` datasets drawn at the truth, fit the full model with
/// NUTS at each cumulative batch size and each prior, and tabulate how
/// often each variable's HDI contains its true value.
pub fn run_coverage(study: &Study, config: &CoverageConfig) -> Result<CoverageTable> {
    study.validate()?;
    if config.replications == 0 || config.batch == 0 {
        return Err(Error::Project("coverage needs replications and batch of at least 1".into()));
    }
    if study.data.iter().any(|r| r.class() == RowClass::Ratio) {
        return Err(Error::Project("coverage resampling supports stock and flow rows only".into()));
    }
    let p = study.truth.len();
    let batches = batch_sizes(study.data.len(), config.batch);
    let priors: Vec<(ZincMode, PriorSpec)> = study
        .priors
        .iter()
        .map(|(m, prior)| Ok((*m, apply_misfit(prior, &study.graph, &study.truth, &config.misfit)?)))
        .collect::<Result<_>>()?;
    let names = study.graph.index().names();

    // per replication: [prior][batch][variable] -> (covered, width); plus divergences
    let per_rep = (0..config.replications)
        .into_par_iter()
        .map(|r| -> Result<(Vec<Vec<Vec<(bool, f64)>>>, usize)> {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(r as u64);
            let data = resample_data(study, &mut rng)?;
            let mut divergences = 0;
            let mut out = Vec::with_capacity(priors.len());
            for (j, (_, prior)) in priors.iter().enumerate() {
                let mut per_batch = Vec::with_capacity(batches.len());
                for (b, &size) in batches.iter().enumerate() {
                    let model = study.compile_first(&data[..size])?;
                    let post = Posterior::with_model_noise(prior.clone(), &model, study.flow_obs_upper)?
                        .with_names(names.clone())?;
                    let sampler = SamplerConfig {
                        seed: derive_seed(config.seed, r as u64, (j * batches.len() + b) as u64),
                        ..config.sampler.clone()
                    };
                    let samples = nuts_sample(&post, &sampler)?;
                    divergences += samples.divergences();
                    let cells = (0..p)
                        .map(|v| {
                            let h = hdi(&samples.column(v), config.mass)?;
                            Ok((h.contains(study.truth[v]), h.width()))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    per_batch.push(cells);
                }
                out.push(per_batch);
            }
            Ok((out, divergences))
        })
        .collect::<Result<Vec<_>>>()?;

    let reps = config.replications as f64;
    let mut cells = Vec::new();
    for (j, (mode, _)) in priors.iter().enumerate() {
        for (b, &size) in batches.iter().enumerate() {
            for v in 0..p {
                let hits = per_rep.iter().filter(|(rep, _)| rep[j][b][v].0).count() as f64;
                let width = per_rep.iter().map(|(rep, _)| rep[j][b][v].1).sum::<f64>() / reps;
                let c = hits / reps;
                cells.push(CoverageCell {
                    variable: names[v].clone(),
                    prior: *mode,
                    batch: size,
                    coverage: 100.0 * c,
                    se: 100.0 * (c * (1.0 - c) / reps).sqrt(),
                    mean_width: width,
                });
            }
        }
    }
    Ok(CoverageTable {
        replications: config.replications,
        batches,
        misfit: config.misfit.iter().map(|m| m.variable.clone()).collect(),
        divergences: per_rep.iter().map(|(_, d)| d).sum(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{empirical_mse, mse_bound_for_model};

    #[test]
    fn zinc_study_is_consistent() {
        let s = zinc_like_study(1.0).unwrap();
        s.validate().unwrap();
        assert_eq!(s.data.len(), 20);
        assert_eq!(s.priors.len(), 2);
    }

    #[test]
    fn zero_data_ordering_of_methods() {
        let s = zinc_like_study(1.0).unwrap();
        let cfg = ErrorCurveConfig {
            runs: 1,
            ..Default::default()
        };
        let curve = run_error_curve(&s, &cfg).unwrap();
        let first = |m, p| curve.series(m, p)[0].mean_rmse;
        let weak = first(Method::Map, Some(ZincMode::Weakly));
        let uninf = first(Method::Map, Some(ZincMode::Uninformative));
        let ridge = first(Method::Ridge, None);
        assert!(weak < uninf && uninf < ridge, "{weak} {uninf} {ridge}");
        // ridge with no data and zero-valued balances is the zero vector
        let rms = (s.truth.iter().map(|v| v * v).sum::<f64>() / 20.0).sqrt();
        assert!((ridge - rms).abs() < 1e-9);
    }

    #[test]
    fn full_information_limit() {
        let mut s = zinc_like_study(1e-3).unwrap();
        for (_, p) in s.priors.iter_mut() {
            p.upper = 1e4;
        }
        let cfg = ErrorCurveConfig {
            runs: 2,
            ..Default::default()
        };
        let curve = run_error_curve(&s, &cfg).unwrap();
        for p in curve.points.iter().filter(|p| p.k == 20) {
            assert!(p.mean_rmse < 1e-2, "{:?}", p);
        }
        assert_eq!(curve.series(Method::Map, Some(ZincMode::Weakly)).len(), 21);
    }

    #[test]
    fn gaussian_mse_within_bound_along_the_curve() {
        let s = zinc_like_study(1.0).unwrap();
        let theta = DVector::from_vec(s.truth.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (_, prior) in &s.priors {
            for k in [0, 5, 12, 20] {
                let model = s.compile_first(&s.data[..k]).unwrap();
                let bound = mse_bound_for_model(&theta, prior, &model).unwrap();
                let emp = empirical_mse(&theta, &prior.mean_vector(), &prior.covariance(), &model.x, 1.0, 2000, &mut rng)
                    .unwrap();
                assert!(emp <= bound.bound_value, "k={k}: {emp} > {}", bound.bound_value);
            }
        }
    }

    #[test]
    fn batches() {
        assert_eq!(batch_sizes(20, 5), vec![5, 10, 15, 20]);
        assert_eq!(batch_sizes(7, 5), vec![5, 7]);
        assert_eq!(batch_sizes(3, 5), vec![3]);
    }

    #[test]
    fn resampled_flows_stay_in_support() {
        let s = zinc_like_study(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            for row in resample_data(&s, &mut rng).unwrap() {
                if row.class() == RowClass::Flow {
                    assert!(row.value >= 0.0);
                }
            }
        }
    }

    #[test]
    fn misfit_moves_the_prior() {
        let s = zinc_like_study(1.0).unwrap();
        let m = apply_misfit(&s.priors[0].1, &s.graph, &s.truth, &zinc_like_misfits()).unwrap();
        let i = s.graph.index().position("S:Lithosphere").unwrap();
        assert_eq!(m.mu[i], -13.0 - 90.0);
        assert_eq!(m.sigma[i], 30.0);
        let bad = [Misfit {
            variable: "S:Nowhere".into(),
            offset_sds: 1.0,
            sigma: 1.0,
        }];
        assert!(apply_misfit(&s.priors[0].1, &s.graph, &s.truth, &bad).is_err());
    }

    #[test]
    fn zinc_misfit_keeps_balances() {
        let s = zinc_like_study(1.0).unwrap();
        let index = s.graph.index();
        let mut shifted = DVector::from_vec(s.truth.clone());
        for m in zinc_like_misfits() {
            shifted[index.position(&m.variable).unwrap()] += m.offset_sds * m.sigma;
        }
        let model = compile(&s.graph, &s.balance).unwrap();
        let residual = &model.x * &shifted;
        assert!(residual.amax() < 1e-9, "{residual}");
    }

    #[test]
    fn small_coverage_run_is_reproducible() {
        let s = zinc_like_study(1.0).unwrap();
        let cfg = CoverageConfig {
            replications: 3,
            batch: 10,
            seed: 4,
            sampler: SamplerConfig {
                draws: 200,
                tune: 200,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = run_coverage(&s, &cfg).unwrap();
        let b = run_coverage(&s, &cfg).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert_eq!(a.cells.len(), 2 * 2 * 20);
        assert!(a.cells.iter().all(|c| (0.0..=100.0).contains(&c.coverage)));
    }
}
