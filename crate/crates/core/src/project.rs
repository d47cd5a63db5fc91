//! TOML project files: system, observations, priors, sampler settings, and
//! an optional experiment section in one document.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::density::Posterior;
use crate::error::{Error, Result};
use crate::experiments::{Misfit, Study};
use crate::graph::{SystemGraph, SystemSpec};
use crate::observations::{balance_rows, compile, CompiledModel, ObservationRow, RatioForm, RowKind};
use crate::priors::{
    elicit_aluminium, elicit_zinc, inverse_gamma_noise, plug_in_tau, NoisePriorSpec, PriorSpec, ZincMode,
    DEFAULT_UPPER,
};
use crate::sampler::SamplerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationKind {
    Stock,
    Flow,
    Ratio,
}

/// One data row. Stocks name a `process`; flows and ratios name `from` and
/// `to`. Without `tau` the plug-in noise for the row's magnitude is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationEntry {
    pub kind: ObservationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    /// Observed value; the transfer coefficient for ratio rows.
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<RatioForm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceSection {
    pub tau: f64,
    /// Child processes whose balance is not enforced.
    pub exclude: BTreeSet<String>,
}

impl Default for BalanceSection {
    fn default() -> Self {
        Self {
            tau: 0.5,
            exclude: BTreeSet::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    #[default]
    Aluminium,
    ZincWeak,
    ZincUninformative,
    Explicit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    #[default]
    PlugIn,
    InverseGamma,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalParams {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub mode: PriorMode,
    /// Upper truncation bound of every flow prior.
    pub upper: f64,
    /// Upper truncation bound of flow observations; defaults to `upper`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow_obs_upper: Option<f64>,
    /// Typical magnitude for uninformative zinc priors; defaults to the
    /// mean absolute reported value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_abs: Option<f64>,
    pub noise: NoiseMode,
    /// Reported values by variable name. Direct stock and flow observations
    /// fill in any variable not listed here.
    pub reported: BTreeMap<String, f64>,
    /// Stock signs for uninformative zinc priors.
    pub signs: BTreeMap<String, f64>,
    /// Per-variable priors; in explicit mode every variable needs one.
    pub variables: BTreeMap<String, NormalParams>,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            mode: PriorMode::default(),
            upper: DEFAULT_UPPER,
            flow_obs_upper: None,
            mean_abs: None,
            noise: NoiseMode::default(),
            reported: BTreeMap::new(),
            signs: BTreeMap::new(),
            variables: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Ground truth by variable name; defaults to the reported values.
    pub truth: BTreeMap<String, f64>,
    /// Replaces every row's noise SD, balances included.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub runs: usize,
    pub replications: usize,
    pub batch: usize,
    pub ridge_lambda: f64,
    pub mass: f64,
    pub misfit: Vec<Misfit>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            truth: BTreeMap::new(),
            tau: None,
            runs: 50,
            replications: 300,
            batch: 5,
            ridge_lambda: 40.0,
            mass: crate::ppc::DEFAULT_MASS,
            misfit: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Project {
    /// Carried as metadata only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
    pub system: SystemSpec,
    #[serde(default)]
    pub observations: Vec<ObservationEntry>,
    #[serde(default)]
    pub balance: BalanceSection,
    #[serde(default)]
    pub priors: PriorSection,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
}

/// A project with its graph built and rows compiled.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub project: Project,
    pub graph: SystemGraph,
    pub data: Vec<ObservationRow>,
    pub balance: Vec<ObservationRow>,
    /// Balance rows first, then data rows in file order.
    pub model: CompiledModel,
}

impl Project {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Project(e.to_string().trim_end().to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Project(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Project(m) => Error::Project(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Project(e.to_string()))
    }

    pub fn data_rows(&self) -> Result<Vec<ObservationRow>> {
        self.observations
            .iter()
            .enumerate()
            .map(|(i, o)| o.to_row(i))
            .collect()
    }

    pub fn load(self) -> Result<Loaded> {
        self.sampler.validate()?;
        let graph = SystemGraph::build(&self.system)?;
        let data = self.data_rows()?;
        for b in &self.balance.exclude {
            graph.process(b)?;
        }
        let balance = balance_rows(&graph, &self.balance.exclude, self.balance.tau)?;
        let mut all = balance.clone();
        all.extend(data.iter().cloned());
        let model = compile(&graph, &all)?;
        Ok(Loaded {
            project: self,
            graph,
            data,
            balance,
            model,
        })
    }
}

fn need(field: &Option<String>, name: &str, row: usize) -> Result<String> {
    field.clone().ok_or_else(|| Error::InvalidRow {
        row,
        reason: format!("missing `{name}`"),
    })
}

impl ObservationEntry {
    fn to_row(&self, row: usize) -> Result<ObservationRow> {
        let bad = |reason: &str| Error::InvalidRow {
            row,
            reason: reason.to_string(),
        };
        if !self.value.is_finite() {
            return Err(bad("value is not finite"));
        }
        let mut out = match self.kind {
            ObservationKind::Stock => {
                if self.from.is_some() || self.to.is_some() {
                    return Err(bad("stock rows take `process`, not `from`/`to`"));
                }
                ObservationRow::stock(need(&self.process, "process", row)?, self.value, 0.0)
            }
            ObservationKind::Flow | ObservationKind::Ratio => {
                if self.process.is_some() {
                    return Err(bad("flow and ratio rows take `from`/`to`, not `process`"));
                }
                let (from, to) = (need(&self.from, "from", row)?, need(&self.to, "to", row)?);
                if self.kind == ObservationKind::Flow {
                    ObservationRow::flow(from, to, self.value, 0.0)
                } else {
                    ObservationRow::ratio(from, to, self.value, self.form.unwrap_or_default(), 0.0)
                }
            }
        };
        if self.form.is_some() && self.kind != ObservationKind::Ratio {
            return Err(bad("`form` applies to ratio rows only"));
        }
        out.noise_sd = match self.tau {
            Some(t) if t > 0.0 && t.is_finite() => t,
            Some(t) => return Err(bad(&format!("tau {t} must be positive"))),
            None => plug_in_tau(out.class(), self.value),
        };
        Ok(out)
    }
}

impl Loaded {
    pub fn names(&self) -> Vec<String> {
        self.graph.index().names()
    }

    pub fn flow_obs_upper(&self) -> f64 {
        self.project.priors.flow_obs_upper.unwrap_or(self.project.priors.upper)
    }

    fn lookup(&self, map: &BTreeMap<String, f64>, what: &str) -> Result<Vec<Option<f64>>> {
        let idx = self.graph.index();
        for k in map.keys() {
            if idx.position(k).is_none() {
                return Err(Error::Project(format!("{what}: unknown variable `{k}`")));
            }
        }
        Ok(idx.names().iter().map(|n| map.get(n).copied()).collect())
    }

    /// Reported value per variable: the `reported` table, then direct
    /// observations of single variables.
    pub fn reported(&self) -> Result<Vec<Option<f64>>> {
        let mut out = self.lookup(&self.project.priors.reported, "priors.reported")?;
        let idx = self.graph.index();
        for row in &self.data {
            let i = match row.kind(&self.graph)? {
                RowKind::StockObs => match &row.target {
                    crate::observations::RowTarget::Stock { process } => idx.stock(process),
                    _ => None,
                },
                RowKind::FlowObs => match &row.target {
                    crate::observations::RowTarget::Flow { from, to } => idx.flow(from, to),
                    _ => None,
                },
                _ => None,
            };
            if let Some(i) = i {
                out[i].get_or_insert(row.value);
            }
        }
        Ok(out)
    }

    fn mean_abs(&self, reported: &[Option<f64>]) -> Result<f64> {
        if let Some(m) = self.project.priors.mean_abs {
            return Ok(m);
        }
        let vals: Vec<f64> = reported.iter().flatten().map(|v| v.abs()).collect();
        if vals.is_empty() {
            return Err(Error::InvalidPrior("mean_abs is required when nothing is reported".into()));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    fn zinc(&self, mode: ZincMode, reported: &[Option<f64>]) -> Result<PriorSpec> {
        let signs = self.lookup(&self.project.priors.signs, "priors.signs")?;
        let q = self.graph.index().n_stocks();
        elicit_zinc(
            self.graph.index(),
            mode,
            reported,
            &signs[..q],
            self.mean_abs(reported)?,
            self.project.priors.upper,
        )
    }

    /// Prior from the configured elicitation rule, with per-variable
    /// overrides applied last.
    pub fn prior(&self) -> Result<PriorSpec> {
        let p = &self.project.priors;
        let idx = self.graph.index();
        let reported = self.reported()?;
        let base = match p.mode {
            PriorMode::Aluminium => elicit_aluminium(idx, &reported, p.upper)?,
            PriorMode::ZincWeak => self.zinc(ZincMode::Weakly, &reported)?,
            PriorMode::ZincUninformative => self.zinc(ZincMode::Uninformative, &reported)?,
            PriorMode::Explicit => {
                let missing: Vec<String> = idx
                    .names()
                    .into_iter()
                    .filter(|n| !p.variables.contains_key(n))
                    .collect();
                if !missing.is_empty() {
                    return Err(Error::InvalidPrior(format!(
                        "explicit priors missing for {}",
                        missing.join(", ")
                    )));
                }
                PriorSpec::new(vec![0.0; idx.len()], vec![1.0; idx.len()], idx.n_stocks(), p.upper)?
            }
        };
        let mut mu = base.mu;
        let mut sigma = base.sigma;
        for (name, np) in &p.variables {
            let i = idx
                .position(name)
                .ok_or_else(|| Error::Project(format!("priors.variables: unknown variable `{name}`")))?;
            mu[i] = np.mu;
            sigma[i] = np.sigma;
        }
        PriorSpec::new(mu, sigma, idx.n_stocks(), p.upper)
    }

    pub fn noise(&self) -> NoisePriorSpec {
        match self.project.priors.noise {
            NoiseMode::PlugIn => NoisePriorSpec::PlugIn {
                tau: self.model.tau.iter().copied().collect(),
            },
            NoiseMode::InverseGamma => inverse_gamma_noise(&self.model),
        }
    }

    pub fn posterior(&self) -> Result<Posterior> {
        Posterior::new(self.prior()?, &self.model, &self.noise(), self.flow_obs_upper())?.with_names(self.names())
    }

    /// Study for the experiment commands: truth from `experiment.truth` or
    /// the reported values, priors elicited from the truth in both zinc
    /// modes.
    pub fn study(&self) -> Result<Study> {
        let exp = self.project.experiment.clone().unwrap_or_default();
        let truth_map = if exp.truth.is_empty() {
            self.reported()?
        } else {
            self.lookup(&exp.truth, "experiment.truth")?
        };
        let idx = self.graph.index();
        let missing: Vec<String> = truth_map
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(i, _)| idx.name(i))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Project(format!("no true value for {}", missing.join(", "))));
        }
        let truth: Vec<f64> = truth_map.iter().flatten().copied().collect();
        let priors = [ZincMode::Weakly, ZincMode::Uninformative]
            .into_iter()
            .map(|m| Ok((m, self.zinc(m, &truth_map)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut data = self.data.clone();
        let mut balance = self.balance.clone();
        if let Some(t) = exp.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::NonPositive(t));
            }
            for r in data.iter_mut().chain(balance.iter_mut()) {
                r.noise_sd = t;
            }
        }
        let study = Study {
            graph: self.graph.clone(),
            truth,
            data,
            balance,
            priors,
            flow_obs_upper: self.flow_obs_upper(),
        };
        study.validate()?;
        Ok(study)
    }
}
