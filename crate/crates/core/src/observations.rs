//! Data and physical constraints as typed rows, compiled into the design
//! matrix `X`, observation vector `Y`, noise vector `tau`, and the
//! transfer-coefficient ratio specs.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ProcessKind, SystemGraph, VariableIndex};

/// How a transfer-coefficient row enters the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioForm {
    /// `U_ij / sum_k U_ik = alpha`
    #[default]
    Nonlinear,
    /// `U_ij - alpha * sum_k U_ik = 0`
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RowTarget {
    /// Change in stock of a child, or of a parent (sum over children).
    Stock { process: String },
    /// Flow between two processes; parents expand to their children.
    Flow { from: String, to: String },
    /// Mass balance of one child process.
    MassBalance { process: String },
    /// Share of `from`'s total outflow carried by the arc `from -> to`.
    Ratio {
        from: String,
        to: String,
        alpha: f64,
        form: RatioForm,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowKind {
    StockObs,
    FlowObs,
    AggregateObs,
    MassBalance,
    Ratio,
}

/// Which likelihood block a compiled row feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowClass {
    /// Normal likelihood on a linear stock combination.
    Stock,
    /// Truncated-normal likelihood on a linear flow combination.
    Flow,
    MassBalance,
    /// Transfer coefficient, either linearized (in `X`) or nonlinear.
    Ratio,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRow {
    pub target: RowTarget,
    /// Observed value; 0 for mass-balance rows, alpha for ratio rows.
    pub value: f64,
    pub noise_sd: f64,
}

impl ObservationRow {
    pub fn stock(process: impl Into<String>, value: f64, noise_sd: f64) -> Self {
        Self {
            target: RowTarget::Stock {
                process: process.into(),
            },
            value,
            noise_sd,
        }
    }

    pub fn flow(from: impl Into<String>, to: impl Into<String>, value: f64, noise_sd: f64) -> Self {
        Self {
            target: RowTarget::Flow {
                from: from.into(),
                to: to.into(),
            },
            value,
            noise_sd,
        }
    }

    pub fn ratio(
        from: impl Into<String>,
        to: impl Into<String>,
        alpha: f64,
        form: RatioForm,
        noise_sd: f64,
    ) -> Self {
        Self {
            target: RowTarget::Ratio {
                from: from.into(),
                to: to.into(),
                alpha,
                form,
            },
            value: alpha,
            noise_sd,
        }
    }

    pub fn kind(&self, graph: &SystemGraph) -> Result<RowKind> {
        let is_parent = |id: &str| -> Result<bool> {
            Ok(graph.process(id)?.kind == ProcessKind::Parent)
        };
        Ok(match &self.target {
            RowTarget::Stock { process } => {
                if is_parent(process)? {
                    RowKind::AggregateObs
                } else {
                    RowKind::StockObs
                }
            }
            RowTarget::Flow { from, to } => {
                if is_parent(from)? || is_parent(to)? {
                    RowKind::AggregateObs
                } else {
                    RowKind::FlowObs
                }
            }
            RowTarget::MassBalance { .. } => RowKind::MassBalance,
            RowTarget::Ratio { .. } => RowKind::Ratio,
        })
    }

    pub fn class(&self) -> RowClass {
        match &self.target {
            RowTarget::Stock { .. } => RowClass::Stock,
            RowTarget::Flow { .. } => RowClass::Flow,
            RowTarget::MassBalance { .. } => RowClass::MassBalance,
            RowTarget::Ratio { .. } => RowClass::Ratio,
        }
    }

    /// Short human-readable row label used in reports.
    pub fn label(&self) -> String {
        match &self.target {
            RowTarget::Stock { process } => format!("stock:{process}"),
            RowTarget::Flow { from, to } => format!("flow:{from}->{to}"),
            RowTarget::MassBalance { process } => format!("balance:{process}"),
            RowTarget::Ratio { from, to, .. } => format!("ratio:{from}->{to}"),
        }
    }
}

/// Nonlinear transfer-coefficient row: `theta[numerator] / sum(theta[denominator])`.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioSpec {
    pub numerator: usize,
    /// All outflows of the source process; contains `numerator`.
    pub denominator: Vec<usize>,
    pub alpha: f64,
}

/// Threshold under which a ratio denominator counts as degenerate.
pub const RATIO_EPS: f64 = 1e-12;

/// `U_ij / sum_k U_ik` at `theta`.
pub fn eval_ratio(theta: &[f64], spec: &RatioSpec) -> Result<f64> {
    let denom: f64 = spec.denominator.iter().map(|&k| theta[k]).sum();
    if denom <= RATIO_EPS {
        return Err(Error::DegenerateRatio(denom));
    }
    Ok(theta[spec.numerator] / denom)
}

/// Mass-balance row for one child: `S_i - sum U_ji + sum U_ik = 0`.
pub fn mass_balance_row(graph: &SystemGraph, child: &str, noise_sd: f64) -> Result<ObservationRow> {
    let p = graph.process(child)?;
    if p.kind != ProcessKind::Child {
        return Err(Error::NotChild(child.to_string()));
    }
    Ok(ObservationRow {
        target: RowTarget::MassBalance {
            process: child.to_string(),
        },
        value: 0.0,
        noise_sd,
    })
}

/// Observation of a flow where at least one endpoint is a parent.
pub fn aggregate_row(
    graph: &SystemGraph,
    from: &str,
    to: &str,
    value: f64,
    noise_sd: f64,
) -> Result<ObservationRow> {
    let row = ObservationRow::flow(from, to, value, noise_sd);
    if row.kind(graph)? != RowKind::AggregateObs {
        return Err(Error::InvalidRow {
            row: 0,
            reason: format!("{from}->{to} joins two child processes; use a flow row"),
        });
    }
    linear_coefficients(graph, &row)?;
    Ok(row)
}

/// Mass-balance rows for every child that owns at least one variable,
/// except those in `exclude`.
pub fn balance_rows(
    graph: &SystemGraph,
    exclude: &BTreeSet<String>,
    noise_sd: f64,
) -> Result<Vec<ObservationRow>> {
    let idx = graph.index();
    let mut rows = Vec::new();
    for p in graph.children() {
        if exclude.contains(&p.id) {
            continue;
        }
        let touches = idx.stock(&p.id).is_some()
            || graph.outflows(&p.id).next().is_some()
            || graph.inflows(&p.id).next().is_some();
        if touches {
            rows.push(mass_balance_row(graph, &p.id, noise_sd)?);
        }
    }
    Ok(rows)
}

/// Sparse coefficients of a row that is linear in theta.
///
/// Nonlinear ratio rows are rejected; linear ratio rows give `(1 - alpha)` on
/// the numerator arc and `-alpha` on its sibling outflows.
pub fn linear_coefficients(graph: &SystemGraph, row: &ObservationRow) -> Result<Vec<(usize, f64)>> {
    let idx = graph.index();
    let mut out = Vec::new();
    match &row.target {
        RowTarget::Stock { process } => {
            for c in graph.expand(process)? {
                if let Some(i) = idx.stock(&c) {
                    out.push((i, 1.0));
                }
            }
            if out.is_empty() {
                return Err(Error::NoStock(process.clone()));
            }
        }
        RowTarget::Flow { from, to } => {
            let src = graph.expand(from)?;
            let dst = graph.expand(to)?;
            for j in &src {
                for k in &dst {
                    if let Some(i) = idx.flow(j, k) {
                        out.push((i, 1.0));
                    }
                }
            }
            if out.is_empty() {
                let both_children = src.len() == 1 && dst.len() == 1 && src != dst;
                return Err(if both_children && graph.process(from)?.kind == ProcessKind::Child
                    && graph.process(to)?.kind == ProcessKind::Child
                {
                    Error::UnknownArc(from.clone(), to.clone())
                } else {
                    Error::NoConstituentArcs(from.clone(), to.clone())
                });
            }
        }
        RowTarget::MassBalance { process } => {
            if graph.process(process)?.kind != ProcessKind::Child {
                return Err(Error::NotChild(process.clone()));
            }
            if let Some(i) = idx.stock(process) {
                out.push((i, 1.0));
            }
            for a in graph.inflows(process) {
                out.push((idx.flow(&a.from, &a.to).unwrap(), -1.0));
            }
            for a in graph.outflows(process) {
                out.push((idx.flow(&a.from, &a.to).unwrap(), 1.0));
            }
        }
        RowTarget::Ratio {
            from,
            to,
            alpha,
            form,
        } => {
            let spec = ratio_spec(graph, from, to, *alpha)?;
            if *form == RatioForm::Nonlinear {
                return Err(Error::NonlinearRows);
            }
            for &k in &spec.denominator {
                let c = if k == spec.numerator { 1.0 - alpha } else { -alpha };
                out.push((k, c));
            }
        }
    }
    out.sort_by_key(|&(i, _)| i);
    Ok(out)
}

fn ratio_spec(graph: &SystemGraph, from: &str, to: &str, alpha: f64) -> Result<RatioSpec> {
    let idx = graph.index();
    let numerator = idx
        .flow(from, to)
        .ok_or_else(|| Error::UnknownArc(from.to_string(), to.to_string()))?;
    let denominator = graph
        .outflows(from)
        .map(|a| idx.flow(&a.from, &a.to).unwrap())
        .collect();
    Ok(RatioSpec {
        numerator,
        denominator,
        alpha,
    })
}

/// The assembled regression model `Y = [X theta; R(theta)] + eps`.
///
/// Rows `0..n_linear()` are linear and live in `x`; the remaining rows are
/// the nonlinear ratio rows, in input order.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledModel {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub tau: DVector<f64>,
    /// Reported value of each source row (alpha for ratio rows, even when
    /// linearized and `y` is 0).
    pub values: Vec<f64>,
    pub classes: Vec<RowClass>,
    pub ratio_specs: Vec<RatioSpec>,
    /// For each compiled row, the position of its source in the input list.
    pub provenance: Vec<usize>,
    pub labels: Vec<String>,
}

impl CompiledModel {
    pub fn n_params(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_linear(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_linear(&self) -> bool {
        self.ratio_specs.is_empty()
    }

    /// Mean of every row at `theta`: `X theta` followed by `R(theta)`.
    pub fn row_means(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let t = DVector::from_column_slice(theta);
        let mut out: Vec<f64> = (&self.x * t).iter().copied().collect();
        for spec in &self.ratio_specs {
            out.push(eval_ratio(theta, spec)?);
        }
        Ok(out)
    }

    /// Design matrix audit export: one CSV line per compiled row.
    pub fn write_csv<W: Write>(&self, index: &VariableIndex, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec![
            "row".to_string(),
            "label".into(),
            "class".into(),
            "y".into(),
            "tau".into(),
        ];
        header.extend(index.names());
        wtr.write_record(&header)?;
        let n_lin = self.n_linear();
        for r in 0..self.n_rows() {
            let class = serde_json::to_value(self.classes[r])?;
            let mut rec = vec![
                r.to_string(),
                self.labels[r].clone(),
                class.as_str().unwrap_or_default().to_string(),
                self.y[r].to_string(),
                self.tau[r].to_string(),
            ];
            if r < n_lin {
                rec.extend(self.x.row(r).iter().map(|v| v.to_string()));
            } else {
                let spec = &self.ratio_specs[r - n_lin];
                rec.extend((0..self.n_params()).map(|i| {
                    if i == spec.numerator {
                        "num".to_string()
                    } else if spec.denominator.contains(&i) {
                        "den".to_string()
                    } else {
                        String::new()
                    }
                }));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn validate(graph: &SystemGraph, i: usize, row: &ObservationRow) -> Result<()> {
    let bad = |reason: String| Error::InvalidRow { row: i, reason };
    if !(row.noise_sd > 0.0 && row.noise_sd.is_finite()) {
        return Err(bad(format!("noise sd must be positive, got {}", row.noise_sd)));
    }
    if !row.value.is_finite() {
        return Err(bad("value is not finite".into()));
    }
    match &row.target {
        RowTarget::MassBalance { .. } if row.value != 0.0 => {
            Err(bad("mass-balance rows carry value 0".into()))
        }
        RowTarget::Flow { .. } if row.value < 0.0 => {
            Err(bad(format!("flow observation {} is negative", row.value)))
        }
        RowTarget::Ratio { from, alpha, .. } => {
            if !(*alpha > 0.0 && *alpha <= 1.0) {
                return Err(bad(format!("transfer coefficient {alpha} outside (0, 1]")));
            }
            if row.value != *alpha {
                return Err(bad("ratio row value must equal its coefficient".into()));
            }
            if graph.outflows(from).next().is_none() {
                return Err(bad(format!("`{from}` has no outflows")));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Assemble rows into a [`CompiledModel`], preserving input order within the
/// linear and the nonlinear blocks.
pub fn compile(graph: &SystemGraph, rows: &[ObservationRow]) -> Result<CompiledModel> {
    let p = graph.index().len();
    let mut lin: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
    let mut nonlin: Vec<(usize, RatioSpec)> = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        validate(graph, i, row)?;
        match &row.target {
            RowTarget::Ratio {
                from,
                to,
                alpha,
                form: RatioForm::Nonlinear,
            } => nonlin.push((i, ratio_spec(graph, from, to, *alpha)?)),
            _ => {
                let coefs = linear_coefficients(graph, row)?;
                if coefs.iter().all(|&(_, c)| c == 0.0) {
                    return Err(Error::EmptyRow(i));
                }
                lin.push((i, coefs));
            }
        }
    }

    let n_lin = lin.len();
    let n = n_lin + nonlin.len();
    let mut x = DMatrix::zeros(n_lin, p);
    let mut y = DVector::zeros(n);
    let mut tau = DVector::zeros(n);
    let mut values = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (r, (i, coefs)) in lin.iter().enumerate() {
        for &(j, c) in coefs {
            if j >= p {
                return Err(Error::Dimension(format!("column {j} >= p = {p}")));
            }
            x[(r, j)] += c;
        }
        let row = &rows[*i];
        y[r] = match row.target {
            RowTarget::Ratio { .. } => 0.0,
            _ => row.value,
        };
        tau[r] = row.noise_sd;
        values.push(row.value);
        classes.push(row.class());
        provenance.push(*i);
        labels.push(row.label());
    }
    let mut ratio_specs = Vec::with_capacity(nonlin.len());
    for (r, (i, spec)) in nonlin.into_iter().enumerate() {
        let row = &rows[i];
        y[n_lin + r] = row.value;
        tau[n_lin + r] = row.noise_sd;
        values.push(row.value);
        classes.push(RowClass::Ratio);
        provenance.push(i);
        labels.push(row.label());
        ratio_specs.push(spec);
    }
    Ok(CompiledModel {
        x,
        y,
        tau,
        values,
        classes,
        ratio_specs,
        provenance,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn si() -> SystemGraph {
        SystemGraph::build(&fixtures::si_example_system()).unwrap()
    }

    #[test]
    fn si_design_matrix() {
        let g = si();
        let m = compile(&g, &fixtures::si_example_rows(1.0)).unwrap();
        #[rustfmt::skip]
        let expected: [[f64; 12]; 5] = [
            [0., 0., 1., 0., 0., 0., 0., 0., 0., 0., 0., 0.],
            [1., 1., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0.],
            [0., 0., 0., 0., 0., 0., 0., 0., 0., 1., 1., 1.],
            [0., 0., 0., 1., 1., 1., 1., 1., 1., 0., 0., 0.],
            [0., 0., 0., 0., 1., 0., 1., 0., 0., 0., 0., 0.],
        ];
        assert_eq!(m.x.shape(), (5, 12));
        for r in 0..5 {
            for c in 0..12 {
                assert_eq!(m.x[(r, c)], expected[r][c], "({r},{c})");
            }
        }
        assert_eq!(m.y.as_slice(), &[1.7, 11.6, 2.3, 10.4, 5.8]);
    }

    #[test]
    fn balance_row_for_process_four() {
        let g = si();
        let row = mass_balance_row(&g, "4", 0.5).unwrap();
        let coefs = linear_coefficients(&g, &row).unwrap();
        let idx = g.index();
        let mut expected = vec![(idx.stock("4").unwrap(), 1.0)];
        for j in ["1", "2", "3"] {
            expected.push((idx.flow(j, "4").unwrap(), -1.0));
            expected.push((idx.flow("4", j).unwrap(), 1.0));
        }
        expected.sort_by_key(|e| e.0);
        assert_eq!(coefs, expected);
        assert!(matches!(
            mass_balance_row(&g, "B", 0.5),
            Err(Error::NotChild(_))
        ));
    }

    #[test]
    fn balance_rows_trivial_systems() {
        use crate::graph::{ProcessSpec, SystemSpec};
        let g = SystemGraph::build(&SystemSpec {
            processes: vec![ProcessSpec::child("s", true)],
            flows: vec![],
        })
        .unwrap();
        let rows = balance_rows(&g, &BTreeSet::new(), 0.5).unwrap();
        assert_eq!(linear_coefficients(&g, &rows[0]).unwrap(), vec![(0, 1.0)]);

        let g = SystemGraph::build(&SystemSpec {
            processes: vec![
                ProcessSpec::child("a", false),
                ProcessSpec::child("m", false),
                ProcessSpec::child("b", false),
            ],
            flows: vec![["a".into(), "m".into()], ["m".into(), "b".into()]],
        })
        .unwrap();
        let row = mass_balance_row(&g, "m", 0.5).unwrap();
        let idx = g.index();
        assert_eq!(
            linear_coefficients(&g, &row).unwrap(),
            vec![(idx.flow("a", "m").unwrap(), -1.0), (idx.flow("m", "b").unwrap(), 1.0)]
        );
    }

    #[test]
    fn aggregate_rows() {
        let g = si();
        let idx = g.index();
        let cols = |row: &ObservationRow| -> Vec<String> {
            linear_coefficients(&g, row)
                .unwrap()
                .iter()
                .map(|&(i, _)| idx.name(i))
                .collect()
        };
        let r = aggregate_row(&g, "B", "C", 10.4, 1.0).unwrap();
        assert_eq!(
            cols(&r),
            ["U:1->4", "U:1->5", "U:2->4", "U:2->5", "U:3->4", "U:3->5"]
        );
        assert_eq!(cols(&aggregate_row(&g, "A", "5", 5.8, 1.0).unwrap()), ["U:1->5", "U:2->5"]);
        assert_eq!(
            cols(&aggregate_row(&g, "4", "B", 2.3, 1.0).unwrap()),
            ["U:4->1", "U:4->2", "U:4->3"]
        );
        assert!(matches!(
            aggregate_row(&g, "C", "C", 1.0, 1.0),
            Err(Error::NoConstituentArcs(..))
        ));
        assert!(aggregate_row(&g, "1", "3", 1.0, 1.0).is_err());
    }

    #[test]
    fn empty_and_ratio_only_models() {
        let g = si();
        let m = compile(&g, &[]).unwrap();
        assert_eq!((m.n_rows(), m.n_linear(), m.n_params()), (0, 0, 12));

        let r = ObservationRow::ratio("1", "3", 0.25, RatioForm::Nonlinear, 0.025);
        let m = compile(&g, &[r]).unwrap();
        assert_eq!(m.n_linear(), 0);
        assert_eq!(m.ratio_specs.len(), 1);
        assert_eq!(m.y[0], 0.25);
        let idx = g.index();
        assert_eq!(m.ratio_specs[0].numerator, idx.flow("1", "3").unwrap());
        assert_eq!(m.ratio_specs[0].denominator.len(), 3);
    }

    #[test]
    fn linear_ratio_row() {
        let g = si();
        let r = ObservationRow::ratio("1", "3", 0.25, RatioForm::Linear, 0.1);
        let m = compile(&g, &[r]).unwrap();
        let idx = g.index();
        assert_eq!(m.x[(0, idx.flow("1", "3").unwrap())], 0.75);
        assert_eq!(m.x[(0, idx.flow("1", "4").unwrap())], -0.25);
        assert_eq!(m.x[(0, idx.flow("1", "5").unwrap())], -0.25);
        assert_eq!(m.y[0], 0.0);
    }

    #[test]
    fn eval_ratio_cases() {
        let spec = RatioSpec {
            numerator: 0,
            denominator: vec![0, 1, 2],
            alpha: 0.25,
        };
        assert_eq!(eval_ratio(&[2.0, 3.0, 3.0], &spec).unwrap(), 0.25);
        let single = RatioSpec {
            numerator: 1,
            denominator: vec![1],
            alpha: 1.0,
        };
        assert_eq!(eval_ratio(&[0.0, 123.4], &single).unwrap(), 1.0);
        assert!(matches!(
            eval_ratio(&[0.0, 0.0, 0.0], &spec),
            Err(Error::DegenerateRatio(_))
        ));
    }

    #[test]
    fn synthetic_split_round_trip() {
        // build theta from a chosen coefficient and recover it
        let g = si();
        let idx = g.index();
        let alpha = 0.37;
        let total = 12.5;
        let mut theta = vec![0.0; idx.len()];
        let num = idx.flow("1", "4").unwrap();
        theta[num] = alpha * total;
        theta[idx.flow("1", "3").unwrap()] = 0.4 * (1.0 - alpha) * total;
        theta[idx.flow("1", "5").unwrap()] = 0.6 * (1.0 - alpha) * total;
        let m = compile(&g, &[ObservationRow::ratio("1", "4", alpha, RatioForm::Nonlinear, 0.04)])
            .unwrap();
        let got = eval_ratio(&theta, &m.ratio_specs[0]).unwrap();
        assert!((got - alpha).abs() < 1e-14);
    }

    #[test]
    fn invalid_rows() {
        let g = si();
        let bad_tau = ObservationRow::flow("1", "3", 1.0, 0.0);
        assert!(matches!(compile(&g, &[bad_tau]), Err(Error::InvalidRow { .. })));
        let bad_alpha = ObservationRow::ratio("1", "3", 1.5, RatioForm::Nonlinear, 0.1);
        assert!(compile(&g, &[bad_alpha]).is_err());
        let mut mb = mass_balance_row(&g, "1", 0.5).unwrap();
        mb.value = 1.0;
        assert!(compile(&g, &[mb]).is_err());
        let missing = ObservationRow::flow("1", "2", 1.0, 0.1);
        assert!(matches!(compile(&g, &[missing]), Err(Error::UnknownArc(..))));
        let no_stock = ObservationRow::stock("A", 1.0, 0.1);
        assert!(matches!(compile(&g, &[no_stock]), Err(Error::NoStock(_))));
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let g = si();
        let m = compile(&g, &fixtures::si_example_rows(1.0)).unwrap();
        let mut buf = Vec::new();
        m.write_csv(g.index(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("row,label,class,y,tau,S:4,S:5,U:1->3"));
    }
}
