//! NUTS sampling with warmup adaptation, run over independent chains.

pub mod adapt;
pub mod diagnostics;
pub mod map;
pub mod nuts;

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::LogDensity;
use crate::error::{Error, Result};
use adapt::{find_reasonable_step_size, DualAveraging, MetricAdaptation};
use nuts::State;

const INIT_RETRIES: usize = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Start at the prior mode; jitter only if that point is not finite.
    PriorMode,
    /// Prior mode plus uniform(-1, 1) noise per unconstrained coordinate.
    #[default]
    Jittered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub draws: usize,
    pub tune: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    pub init: InitMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 2,
            draws: 10_000,
            tune: 2_000,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 0,
            init: InitMode::Jittered,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::Project(format!("sampler: {reason}")));
        if self.chains == 0 {
            return bad("chains must be at least 1");
        }
        if self.draws == 0 {
            return bad("draws must be at least 1");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0, 1)");
        }
        if self.max_tree_depth == 0 {
            return bad("max_tree_depth must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DrawStats {
    pub divergent: bool,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub energy: f64,
    pub step_size: f64,
    pub accept_stat: f64,
}

#[derive(Clone, Debug)]
pub struct ChainOutput {
    /// Constrained draws, `draws[d][v]`.
    pub draws: Vec<Vec<f64>>,
    /// Empty when the chain was loaded from a draws file.
    pub stats: Vec<DrawStats>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub warmup_divergences: usize,
}

impl ChainOutput {
    fn from_draws(draws: Vec<Vec<f64>>) -> Self {
        Self {
            draws,
            stats: Vec::new(),
            step_size: f64::NAN,
            inv_metric: Vec::new(),
            warmup_divergences: 0,
        }
    }
}

/// Central-difference check of the gradient at the starting point.
fn smoke_gradient_check<D: LogDensity + ?Sized>(density: &D, z: &[f64]) -> std::result::Result<(), String> {
    let dim = z.len();
    let mut grad = vec![0.0; dim];
    density
        .log_density_and_grad(z, &mut grad)
        .map_err(|e| e.to_string())?;
    let mut scratch = vec![0.0; dim];
    let mut x = z.to_vec();
    for i in 0..dim {
        let h = 1e-5 * z[i].abs().max(1.0);
        x[i] = z[i] + h;
        let fp = density.log_density_and_grad(&x, &mut scratch).map_err(|e| e.to_string())?;
        x[i] = z[i] - h;
        let fm = density.log_density_and_grad(&x, &mut scratch).map_err(|e| e.to_string())?;
        x[i] = z[i];
        let fd = (fp - fm) / (2.0 * h);
        if !fd.is_finite() {
            continue;
        }
        let scale = 1.0 + grad[i].abs().max(fd.abs());
        if (fd - grad[i]).abs() > 1e-3 * scale {
            return Err(format!(
                "gradient check failed for coordinate {i}: analytic {} vs numeric {fd}",
                grad[i]
            ));
        }
    }
    Ok(())
}

fn initial_state<D: LogDensity + ?Sized>(
    density: &D,
    rng: &mut ChaCha8Rng,
    mode: InitMode,
) -> std::result::Result<State, String> {
    let base = density.initial_point();
    if mode == InitMode::PriorMode {
        let s = State::new(density, base.clone());
        if s.logp.is_finite() {
            return Ok(s);
        }
    }
    for _ in 0..INIT_RETRIES {
        let q: Vec<f64> = base.iter().map(|b| b + rng.random_range(-1.0..1.0)).collect();
        let s = State::new(density, q);
        if s.logp.is_finite() {
            return Ok(s);
        }
    }
    Err(format!("log density not finite at initialization after {INIT_RETRIES} jittered retries"))
}

fn run_chain<D: LogDensity + ?Sized>(density: &D, config: &SamplerConfig, chain: usize) -> Result<ChainOutput> {
    let fail = |reason: String| Error::Sampler { chain, reason };
    let relabel = |e: Error| match e {
        Error::Sampler { reason, .. } => fail(reason),
        other => fail(other.to_string()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(chain as u64));
    let mut state = initial_state(density, &mut rng, config.init).map_err(fail)?;
    smoke_gradient_check(density, &state.q).map_err(fail)?;

    let dim = state.q.len();
    let mut inv_metric = vec![1.0; dim];
    let mut eps = find_reasonable_step_size(density, &mut rng, &state, 1.0, &inv_metric).map_err(relabel)?;
    let mut step = DualAveraging::new(config.target_accept);
    step.restart(eps);
    let mut metric = MetricAdaptation::new(config.tune, dim);

    let mut warmup_divergences = 0;
    for _ in 0..config.tune {
        let t = nuts::transition(density, &mut rng, &mut state, eps, &inv_metric, config.max_tree_depth);
        warmup_divergences += usize::from(t.divergent);
        eps = step.learn(t.accept_stat);
        if metric.learn(&mut inv_metric, &state.q) {
            eps = find_reasonable_step_size(density, &mut rng, &state, eps, &inv_metric).map_err(relabel)?;
            step.restart(eps);
        }
    }
    if config.tune > 0 {
        if warmup_divergences == config.tune {
            return Err(fail("every warmup transition diverged".into()));
        }
        eps = step.final_step_size();
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(fail(format!("adapted step size is {eps}")));
    }

    let mut draws = Vec::with_capacity(config.draws);
    let mut stats = Vec::with_capacity(config.draws);
    for _ in 0..config.draws {
        let t = nuts::transition(density, &mut rng, &mut state, eps, &inv_metric, config.max_tree_depth);
        draws.push(density.constrain(&state.q));
        stats.push(DrawStats {
            divergent: t.divergent,
            tree_depth: t.tree_depth,
            n_leapfrog: t.n_leapfrog,
            energy: t.energy,
            step_size: eps,
            accept_stat: t.accept_stat,
        });
    }
    Ok(ChainOutput {
        draws,
        stats,
        step_size: eps,
        inv_metric,
        warmup_divergences,
    })
}

/// Run `config.chains` independent NUTS chains; chain `c` is seeded with
/// `seed + c`.
pub fn nuts_sample<D: LogDensity + ?Sized>(density: &D, config: &SamplerConfig) -> Result<PosteriorSamples> {
    config.validate()?;
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(density, config, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSamples::new(density.param_names(), chains))
}

#[derive(Clone, Debug, Serialize)]
pub struct VariableSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub mcse: f64,
    pub ess: f64,
    pub rhat: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PosteriorSamples {
    pub names: Vec<String>,
    pub chains: Vec<ChainOutput>,
    /// Absent for a single chain.
    pub rhat: Option<Vec<f64>>,
    pub ess: Vec<f64>,
}

impl PosteriorSamples {
    pub fn new(names: Vec<String>, chains: Vec<ChainOutput>) -> Self {
        let mut s = Self {
            names,
            chains,
            rhat: None,
            ess: Vec::new(),
        };
        s.ess = (0..s.dim())
            .map(|v| {
                let cols = s.chain_columns(v);
                let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
                diagnostics::ess(&refs)
            })
            .collect();
        if s.n_chains() >= 2 {
            let draws: Vec<Vec<Vec<f64>>> = s.chains.iter().map(|c| c.draws.clone()).collect();
            s.rhat = diagnostics::rhat_all(&draws).ok();
        }
        s
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn chain_columns(&self, v: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.draws.iter().map(|d| d[v]).collect())
            .collect()
    }

    /// All draws of variable `v`, chains concatenated in order.
    pub fn column(&self, v: usize) -> Vec<f64> {
        self.chains
            .iter()
            .flat_map(|c| c.draws.iter().map(move |d| d[v]))
            .collect()
    }

    /// Every draw across chains, in chain order.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.chains.iter().flat_map(|c| c.draws.iter().map(|d| d.as_slice()))
    }

    pub fn mean(&self, v: usize) -> f64 {
        let col = self.column(v);
        col.iter().sum::<f64>() / col.len() as f64
    }

    pub fn sd(&self, v: usize) -> f64 {
        let col = self.column(v);
        let m = col.iter().sum::<f64>() / col.len() as f64;
        (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (col.len() as f64 - 1.0)).sqrt()
    }

    pub fn mcse(&self, v: usize) -> f64 {
        let cols = self.chain_columns(v);
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        diagnostics::mcse(&refs)
    }

    pub fn divergences(&self) -> usize {
        self.chains
            .iter()
            .map(|c| c.stats.iter().filter(|s| s.divergent).count())
            .sum()
    }

    pub fn max_rhat(&self) -> Option<f64> {
        self.rhat
            .as_ref()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn summary(&self) -> Vec<VariableSummary> {
        (0..self.dim())
            .map(|v| VariableSummary {
                name: self.names[v].clone(),
                mean: self.mean(v),
                sd: self.sd(v),
                mcse: self.mcse(v),
                ess: self.ess[v],
                rhat: self.rhat.as_ref().map(|r| r[v]),
            })
            .collect()
    }

    /// One row per draw: `chain,draw,<variable names>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.names.iter().cloned());
        out.write_record(&header)?;
        for (c, chain) in self.chains.iter().enumerate() {
            for (d, draw) in chain.draws.iter().enumerate() {
                let mut rec = vec![c.to_string(), d.to_string()];
                rec.extend(draw.iter().map(|x| x.to_string()));
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Per-draw sampler statistics: `chain,draw,divergent,tree_depth,...`.
    pub fn write_stats_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "chain",
            "draw",
            "divergent",
            "tree_depth",
            "n_leapfrog",
            "energy",
            "step_size",
            "accept_stat",
        ])?;
        for (c, chain) in self.chains.iter().enumerate() {
            for (d, s) in chain.stats.iter().enumerate() {
                out.write_record([
                    c.to_string(),
                    d.to_string(),
                    u8::from(s.divergent).to_string(),
                    s.tree_depth.to_string(),
                    s.n_leapfrog.to_string(),
                    s.energy.to_string(),
                    s.step_size.to_string(),
                    s.accept_stat.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Chain-level statistics and per-variable summaries.
    pub fn stats_json(&self) -> serde_json::Value {
        let chains: Vec<serde_json::Value> = self
            .chains
            .iter()
            .map(|c| {
                let n = c.stats.len().max(1) as f64;
                serde_json::json!({
                    "draws": c.draws.len(),
                    "step_size": c.step_size,
                    "inv_metric": c.inv_metric,
                    "divergences": c.stats.iter().filter(|s| s.divergent).count(),
                    "warmup_divergences": c.warmup_divergences,
                    "mean_tree_depth": c.stats.iter().map(|s| s.tree_depth as f64).sum::<f64>() / n,
                    "mean_accept_stat": c.stats.iter().map(|s| s.accept_stat).sum::<f64>() / n,
                })
            })
            .collect();
        serde_json::json!({
            "chains": chains,
            "divergences": self.divergences(),
            "max_rhat": self.max_rhat(),
            "variables": self.summary(),
        })
    }

    /// Load draws written by [`PosteriorSamples::write_csv`].
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "chain" || &header[1] != "draw" {
            return Err(Error::Project("draws file must start with chain,draw columns".into()));
        }
        let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let mut chains: Vec<Vec<Vec<f64>>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let c: usize = rec[0]
                .parse()
                .map_err(|_| Error::Project(format!("bad chain index {:?}", &rec[0])))?;
            let draw = rec
                .iter()
                .skip(2)
                .map(|s| s.parse::<f64>().map_err(|_| Error::Project(format!("bad draw value {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if draw.len() != names.len() {
                return Err(Error::Dimension(format!("draw row has {} values, header {}", draw.len(), names.len())));
            }
            if c >= chains.len() {
                chains.resize_with(c + 1, Vec::new);
            }
            chains[c].push(draw);
        }
        if chains.iter().all(|c| c.is_empty()) {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        let chains = chains.into_iter().filter(|c| !c.is_empty()).map(ChainOutput::from_draws).collect();
        Ok(Self::new(names, chains))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Posterior;
    use crate::fixtures;
    use crate::gaussian::GaussianPosterior;
    use crate::graph::SystemGraph;
    use crate::observations::compile;

    struct Normal {
        dim: usize,
        rho: f64,
    }

    impl LogDensity for Normal {
        fn dim(&self) -> usize {
            self.dim
        }
        fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
            if self.rho == 0.0 {
                let mut lp = 0.0;
                for i in 0..self.dim {
                    grad[i] = -z[i];
                    lp -= 0.5 * z[i] * z[i];
                }
                return Ok(lp);
            }
            // bivariate with unit variances and correlation rho
            let r = self.rho;
            let k = 1.0 / (1.0 - r * r);
            grad[0] = -k * (z[0] - r * z[1]);
            grad[1] = -k * (z[1] - r * z[0]);
            Ok(-0.5 * k * (z[0] * z[0] - 2.0 * r * z[0] * z[1] + z[1] * z[1]))
        }
    }

    fn config(draws: usize, tune: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            draws,
            tune,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn standard_normal_10d() {
        let s = nuts_sample(&Normal { dim: 10, rho: 0.0 }, &config(10_000, 1000, 7)).unwrap();
        assert_eq!(s.n_draws(), 20_000);
        for v in 0..10 {
            let m = s.mean(v);
            assert!(m.abs() < 4.0 * s.mcse(v), "mean {m} mcse {}", s.mcse(v));
            let var = s.sd(v).powi(2);
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
        assert!(s.max_rhat().unwrap() < 1.01);
    }

    #[test]
    fn correlated_2d() {
        let s = nuts_sample(&Normal { dim: 2, rho: 0.9 }, &config(2000, 1000, 3)).unwrap();
        assert_eq!(s.divergences(), 0);
        assert!(s.max_rhat().unwrap() < 1.01);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let d = Normal { dim: 3, rho: 0.0 };
        let a = nuts_sample(&d, &config(200, 100, 11)).unwrap();
        let b = nuts_sample(&d, &config(200, 100, 11)).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        let c = nuts_sample(&d, &config(200, 100, 12)).unwrap();
        let mut z = Vec::new();
        c.write_csv(&mut z).unwrap();
        assert_ne!(x, z);
    }

    #[test]
    fn csv_round_trip() {
        let s = nuts_sample(&Normal { dim: 2, rho: 0.0 }, &config(50, 0, 1)).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let t = PosteriorSamples::read_csv(buf.as_slice()).unwrap();
        assert_eq!(t.n_chains(), 2);
        for c in 0..2 {
            assert_eq!(t.chains[c].draws, s.chains[c].draws);
        }
    }

    #[test]
    fn conjugate_match_and_support() {
        let g = SystemGraph::build(&fixtures::si_example_system()).unwrap();
        let (rows, prior) = fixtures::si_conjugate(&g).unwrap();
        let m = compile(&g, &rows).unwrap();
        let gauss = GaussianPosterior::from_model(&prior, &m).unwrap();
        let sd = gauss.sd();
        for v in 2..12 {
            assert!(gauss.mean[v] > 5.0 * sd[v]);
        }
        let upper = prior.upper;
        let post = Posterior::with_model_noise(prior, &m, upper).unwrap();
        let s = nuts_sample(&post, &config(2000, 1000, 5)).unwrap();
        assert_eq!(s.n_draws(), 4000);
        for v in 0..12 {
            let err = (s.mean(v) - gauss.mean[v]).abs();
            assert!(err < 4.0 * s.mcse(v), "{}: {err} vs mcse {}", s.names[v], s.mcse(v));
            assert!((s.sd(v) / sd[v] - 1.0).abs() < 0.1, "{}", s.names[v]);
        }
        for d in s.iter_draws() {
            assert!(d[2..].iter().all(|u| *u > 0.0 && *u < upper));
        }
    }

    #[test]
    fn invalid_config() {
        let d = Normal { dim: 1, rho: 0.0 };
        assert!(nuts_sample(&d, &SamplerConfig { chains: 0, ..Default::default() }).is_err());
        assert!(nuts_sample(&d, &SamplerConfig { target_accept: 1.0, ..Default::default() }).is_err());
    }

    struct Broken;

    impl LogDensity for Broken {
        fn dim(&self) -> usize {
            1
        }
        fn log_density_and_grad(&self, _: &[f64], _: &mut [f64]) -> Result<f64> {
            Ok(f64::NAN)
        }
    }

    #[test]
    fn non_finite_init_fails_with_chain_context() {
        match nuts_sample(&Broken, &config(10, 10, 0)) {
            Err(Error::Sampler { reason, .. }) => assert!(reason.contains("initialization")),
            other => panic!("{other:?}"),
        }
    }
}
