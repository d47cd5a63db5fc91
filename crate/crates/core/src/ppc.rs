//! Highest density intervals, posterior predictive checks, and uncertainty
//! ranking.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::observations::{CompiledModel, RowClass};
use crate::sampler::PosteriorSamples;
use crate::special::sample_truncated_normal;

pub const DEFAULT_MASS: f64 = 0.95;
pub const MIN_HDI_SAMPLES: usize = 50;
pub const MIN_REPLICATES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HdiInterval {
    pub lower: f64,
    pub upper: f64,
    pub mass: f64,
    /// The sample looks multimodal; the single window may then cover
    /// low-density gaps.
    pub multimodal: bool,
}

impl HdiInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Number of sorted samples a `mass` window must span.
fn window_len(n: usize, mass: f64) -> usize {
    // guard against mass * n landing a hair above an integer
    (((mass * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite { block: "samples" });
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Shortest contiguous window of the sorted sample holding `ceil(mass * N)`
/// points. Ties go to the leftmost window.
pub fn hdi(samples: &[f64], mass: f64) -> Result<HdiInterval> {
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(Error::Dimension(format!("interval mass {mass} outside (0, 1]")));
    }
    let n = samples.len();
    if n < MIN_HDI_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_HDI_SAMPLES,
            got: n,
        });
    }
    let s = sorted(samples)?;
    let k = window_len(n, mass);
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for i in 0..=n - k {
        let w = s[i + k - 1] - s[i];
        if w < best_width {
            best_width = w;
            best = i;
        }
    }
    Ok(HdiInterval {
        lower: s[best],
        upper: s[best + k - 1],
        mass,
        multimodal: looks_multimodal(&s),
    })
}

/// Peak count on a smoothed histogram of the central 99% of a sorted
/// sample. Two peaks count only if the valley between them drops below
/// half the smaller one.
fn looks_multimodal(s: &[f64]) -> bool {
    const BINS: usize = 40;
    let n = s.len();
    let lo = s[n / 200];
    let hi = s[n - 1 - n / 200];
    if !(hi > lo) {
        return false;
    }
    let mut counts = [0.0f64; BINS];
    for &x in s {
        if x < lo || x > hi {
            continue;
        }
        let b = (((x - lo) / (hi - lo)) * BINS as f64) as usize;
        counts[b.min(BINS - 1)] += 1.0;
    }
    let smooth: Vec<f64> = (0..BINS)
        .map(|i| {
            let a = i.saturating_sub(1);
            let b = (i + 1).min(BINS - 1);
            counts[a..=b].iter().sum::<f64>() / (b - a + 1) as f64
        })
        .collect();
    let top = smooth.iter().copied().fold(0.0, f64::max);
    let mut peak: Option<f64> = None;
    let mut valley = f64::INFINITY;
    for i in 0..BINS {
        let left = if i == 0 { 0.0 } else { smooth[i - 1] };
        let right = if i + 1 == BINS { 0.0 } else { smooth[i + 1] };
        let h = smooth[i];
        if let Some(p) = peak {
            valley = valley.min(h);
            if h > left && h >= right && h >= 0.2 * top && valley < 0.5 * p.min(h) {
                return true;
            }
            if h > p {
                peak = Some(h);
                valley = h;
            }
        } else if h > left && h >= right && h >= 0.2 * top {
            peak = Some(h);
            valley = h;
        }
    }
    false
}

/// Replicated data: one replicate vector per posterior draw.
#[derive(Clone, Debug)]
pub struct Replicates {
    pub labels: Vec<String>,
    pub classes: Vec<RowClass>,
    pub observed: Vec<f64>,
    /// `values[d][r]`: draw `d`, row `r`.
    pub values: Vec<Vec<f64>>,
}

impl Replicates {
    pub fn n_draws(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[r]).collect()
    }

    /// Long format `row,label,draw,value` for plotting.
    pub fn write_long_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["row", "label", "draw", "value"])?;
        for (d, v) in self.values.iter().enumerate() {
            for (r, x) in v.iter().enumerate() {
                out.write_record([r.to_string(), self.labels[r].clone(), d.to_string(), x.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Simulate one replicate of every observation row per posterior draw:
/// normal for most rows, truncated to `[0, flow_obs_upper]` for flow rows.
///
/// When the samples carry one trailing noise column per row (inverse-gamma
/// mode) each draw uses its own `tau`; otherwise `tau` is used. Draw `d`
/// uses stream `d` of a generator seeded with `seed`, so the output does
/// not depend on thread scheduling.
pub fn posterior_predictive(
    samples: &PosteriorSamples,
    model: &CompiledModel,
    tau: &[f64],
    flow_obs_upper: f64,
    seed: u64,
) -> Result<Replicates> {
    let p = model.n_params();
    let n = model.n_rows();
    let per_draw_tau = samples.dim() == p + n && n > 0;
    if samples.dim() != p && !per_draw_tau {
        return Err(Error::Dimension(format!(
            "samples have {} columns, model has {p} variables and {n} rows",
            samples.dim()
        )));
    }
    if !per_draw_tau && tau.len() != n {
        return Err(Error::Dimension(format!("{} noise values for {n} rows", tau.len())));
    }
    let draws: Vec<&[f64]> = samples.iter_draws().collect();
    if draws.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let values = draws
        .par_iter()
        .enumerate()
        .map(|(d, draw)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(d as u64);
            let means = model.row_means(&draw[..p])?;
            let rep = (0..n)
                .map(|r| {
                    let t = if per_draw_tau { draw[p + r] } else { tau[r] };
                    if model.classes[r] == RowClass::Flow {
                        sample_truncated_normal(&mut rng, means[r], t, 0.0, flow_obs_upper)
                    } else {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        means[r] + t * e
                    }
                })
                .collect();
            Ok(rep)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(Replicates {
        labels: model.labels.clone(),
        classes: model.classes.clone(),
        observed: model.y.iter().copied().collect(),
        values,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PpcRow {
    pub row: usize,
    pub label: String,
    pub class: RowClass,
    pub observed: f64,
    pub hdi_lo: f64,
    pub hdi_hi: f64,
    pub pvalue: f64,
    pub extreme: bool,
}

impl PpcRow {
    /// Distance of the p-value from 0.5.
    pub fn extremeness(&self) -> f64 {
        (self.pvalue - 0.5).abs()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PpcReport {
    pub n_replicates: usize,
    pub rows: Vec<PpcRow>,
}

impl PpcReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["row", "label", "observed", "hdi_lo", "hdi_hi", "pvalue", "extreme"])?;
        for r in &self.rows {
            out.write_record([
                r.row.to_string(),
                r.label.clone(),
                r.observed.to_string(),
                r.hdi_lo.to_string(),
                r.hdi_hi.to_string(),
                r.pvalue.to_string(),
                r.extreme.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Fraction of replicates at or above the observed value.
pub fn pvalue(replicates: &[f64], observed: f64) -> f64 {
    replicates.iter().filter(|&&x| x >= observed).count() as f64 / replicates.len() as f64
}

/// Per-row Bayesian p-values with 95% replicate HDIs; a row is extreme when
/// its p-value is below 0.05 or above 0.95.
pub fn ppc_pvalues(replicates: &Replicates) -> Result<PpcReport> {
    let n = replicates.n_draws();
    if n < MIN_REPLICATES {
        return Err(Error::TooFewSamples {
            needed: MIN_REPLICATES,
            got: n,
        });
    }
    let rows = (0..replicates.observed.len())
        .map(|r| {
            let col = replicates.row(r);
            let h = hdi(&col, DEFAULT_MASS)?;
            let obs = replicates.observed[r];
            let p = pvalue(&col, obs);
            Ok(PpcRow {
                row: r,
                label: replicates.labels[r].clone(),
                class: replicates.classes[r],
                observed: obs,
                hdi_lo: h.lower,
                hdi_hi: h.upper,
                pvalue: p,
                extreme: !(0.05..=0.95).contains(&p),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PpcReport {
        n_replicates: n,
        rows,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RankEntry {
    pub variable: String,
    pub index: usize,
    pub width: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Model variables by descending 95% HDI width; noise columns (`tau:*`)
/// are skipped. Equal widths keep their original order.
pub fn rank_uncertainty(samples: &PosteriorSamples) -> Result<Vec<RankEntry>> {
    if samples.n_draws() == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut entries = (0..samples.dim())
        .filter(|&v| !samples.names[v].starts_with("tau:"))
        .map(|v| {
            let h = hdi(&samples.column(v), DEFAULT_MASS)?;
            Ok(RankEntry {
                variable: samples.names[v].clone(),
                index: v,
                width: h.width(),
                lower: h.lower,
                upper: h.upper,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| b.width.total_cmp(&a.width));
    Ok(entries)
}

pub fn write_rank_csv<W: Write>(entries: &[RankEntry], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rank", "variable", "width", "lower", "upper"])?;
    for (k, e) in entries.iter().enumerate() {
        out.write_record([
            (k + 1).to_string(),
            e.variable.clone(),
            e.width.to_string(),
            e.lower.to_string(),
            e.upper.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Long format `variable,chain,draw,value` of every draw, for plotting.
pub fn write_draws_long_csv<W: Write>(samples: &PosteriorSamples, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["variable", "chain", "draw", "value"])?;
    for v in 0..samples.dim() {
        for (c, col) in samples.chain_columns(v).iter().enumerate() {
            for (d, x) in col.iter().enumerate() {
                out.write_record([samples.names[v].clone(), c.to_string(), d.to_string(), x.to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
