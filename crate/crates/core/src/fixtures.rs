//! Small built-in systems used by tests, the acceptance suite, and the CLI
//! examples.

use crate::graph::{ProcessSpec, SystemGraph, SystemSpec};
use crate::observations::{balance_rows, mass_balance_row, ObservationRow};
use crate::priors::PriorSpec;
use crate::error::Result;

fn arcs(pairs: &[(&str, &str)]) -> Vec<[String; 2]> {
    pairs
        .iter()
        .map(|(a, b)| [a.to_string(), b.to_string()])
        .collect()
}

/// Five children, parents `A = {1,2}`, `B = {A,3}`, `C = {4,5}`, stocks on
/// 4 and 5.
pub fn si_example_system() -> SystemSpec {
    SystemSpec {
        processes: vec![
            ProcessSpec::child("1", false),
            ProcessSpec::child("2", false),
            ProcessSpec::child("3", false),
            ProcessSpec::child("4", true),
            ProcessSpec::child("5", true),
            ProcessSpec::parent("A", ["1", "2"]),
            ProcessSpec::parent("B", ["A", "3"]),
            ProcessSpec::parent("C", ["4", "5"]),
        ],
        flows: arcs(&[
            ("1", "3"),
            ("1", "4"),
            ("1", "5"),
            ("2", "4"),
            ("2", "5"),
            ("3", "4"),
            ("3", "5"),
            ("4", "1"),
            ("4", "2"),
            ("4", "3"),
        ]),
    }
}

/// The five data rows of the example: `U_{1,3}`, `S_C`, `U_{4,B}`,
/// `U_{B,C}`, `U_{A,5}`.
pub fn si_example_rows(noise_sd: f64) -> Vec<ObservationRow> {
    vec![
        ObservationRow::flow("1", "3", 1.7, noise_sd),
        ObservationRow::stock("C", 11.6, noise_sd),
        ObservationRow::flow("4", "B", 2.3, noise_sd),
        ObservationRow::flow("B", "C", 10.4, noise_sd),
        ObservationRow::flow("A", "5", 5.8, noise_sd),
    ]
}

/// Large-flow variant of the example for conjugate checks: data generated
/// from a balanced state whose flows are all at least 40, flow priors
/// `N(50, 8^2)` on `[0, 1e6]`, so the lower truncation is negligible and
/// the posterior is effectively Gaussian.
pub fn si_conjugate(graph: &SystemGraph) -> Result<(Vec<ObservationRow>, PriorSpec)> {
    let mut rows = vec![
        ObservationRow::flow("1", "3", 40.0, 1.0),
        ObservationRow::stock("C", 0.0, 1.0),
        ObservationRow::flow("4", "B", 280.0, 1.0),
        ObservationRow::flow("B", "C", 280.0, 1.0),
        ObservationRow::flow("A", "5", 90.0, 1.0),
    ];
    rows.extend(balance_rows(graph, &Default::default(), 0.5)?);
    let prior = PriorSpec::uniform(graph.index(), (0.0, 200.0), (50.0, 8.0), 1e6)?;
    Ok((rows, prior))
}

/// A zinc-cycle-shaped system with 20 variables and a mass-balanced ground
/// truth whose mean absolute value is 3.6575.
pub struct ZincLike {
    pub system: SystemSpec,
    /// `(variable name, true value)` in the order data are added.
    pub truth: Vec<(String, f64)>,
}

pub const ZINC_MEAN_ABS: f64 = 3.6575;

pub fn zinc_like() -> ZincLike {
    let system = SystemSpec {
        processes: vec![
            ProcessSpec::child("Lithosphere", true),
            ProcessSpec::child("Production", true),
            ProcessSpec::child("F&M", false),
            ProcessSpec::child("Use", true),
            ProcessSpec::child("WM", false),
            ProcessSpec::child("Environment", true),
            ProcessSpec::child("ImportExport", true),
            ProcessSpec::child("Unknown", true),
        ],
        flows: arcs(&[
            ("Lithosphere", "Production"),
            ("Production", "ImportExport"),
            ("ImportExport", "F&M"),
            ("ImportExport", "WM"),
            ("Production", "F&M"),
            ("Production", "Environment"),
            ("Production", "Unknown"),
            ("Unknown", "WM"),
            ("F&M", "Use"),
            ("F&M", "WM"),
            ("Use", "WM"),
            ("WM", "Production"),
            ("WM", "F&M"),
            ("WM", "Environment"),
        ]),
    };
    let truth = [
        ("S:Use", 6.9),
        ("U:Production->ImportExport", 1.5),
        ("S:Environment", 4.95),
        ("U:WM->Production", 1.1),
        ("U:ImportExport->WM", 0.3),
        ("U:Unknown->WM", 0.5),
        ("U:Lithosphere->Production", 13.0),
        ("S:Production", 2.35),
        ("U:Production->F&M", 8.0),
        ("U:WM->Environment", 2.8),
        ("U:F&M->Use", 9.4),
        ("S:Unknown", -0.4),
        ("U:Production->Unknown", 0.1),
        ("U:F&M->WM", 1.0),
        ("U:Use->WM", 2.5),
        ("U:WM->F&M", 0.4),
        ("S:ImportExport", -0.8),
        ("S:Lithosphere", -13.0),
        ("U:ImportExport->F&M", 2.0),
        ("U:Production->Environment", 2.15),
    ]
    .iter()
    .map(|(n, v)| (n.to_string(), *v))
    .collect();
    ZincLike { system, truth }
}

impl ZincLike {
    /// Truth as a parameter vector in index order.
    pub fn theta(&self, graph: &SystemGraph) -> Vec<f64> {
        let idx = graph.index();
        let mut theta = vec![0.0; idx.len()];
        for (name, v) in &self.truth {
            theta[idx.position(name).expect("fixture variable")] = *v;
        }
        theta
    }

    /// One direct observation per variable, valued at the truth, in
    /// data-addition order.
    pub fn data_rows(&self, noise_sd: f64) -> Vec<ObservationRow> {
        self.truth
            .iter()
            .map(|(name, v)| row_for_variable(name, *v, noise_sd))
            .collect()
    }
}

/// Direct observation row for a variable named `S:<p>` or `U:<a>-><b>`.
pub fn row_for_variable(name: &str, value: f64, noise_sd: f64) -> ObservationRow {
    if let Some(p) = name.strip_prefix("S:") {
        ObservationRow::stock(p, value, noise_sd)
    } else {
        let (a, b) = name
            .strip_prefix("U:")
            .and_then(|s| s.split_once("->"))
            .expect("variable name");
        ObservationRow::flow(a, b, value, noise_sd)
    }
}

/// Chain `Source -> Remelt -> Semi -> Sink` where `Remelt` receives 7.1 but
/// ships 9.3. Stocks sit only on the two ends.
pub fn imbalance_system() -> SystemSpec {
    SystemSpec {
        processes: vec![
            ProcessSpec::child("Source", true),
            ProcessSpec::child("Remelt", false),
            ProcessSpec::child("Semi", false),
            ProcessSpec::child("Sink", true),
        ],
        flows: arcs(&[("Source", "Remelt"), ("Remelt", "Semi"), ("Semi", "Sink")]),
    }
}

/// Observed flows at 10% noise followed by the four balance rows
/// (`Source`, `Remelt`, `Semi`, `Sink`) at 0.5.
pub fn imbalance_rows(graph: &SystemGraph) -> Result<Vec<ObservationRow>> {
    let mut rows = vec![
        ObservationRow::flow("Source", "Remelt", 7.1, 0.71),
        ObservationRow::flow("Remelt", "Semi", 9.3, 0.93),
        ObservationRow::flow("Semi", "Sink", 9.3, 0.93),
    ];
    for p in ["Source", "Remelt", "Semi", "Sink"] {
        rows.push(mass_balance_row(graph, p, 0.5)?);
    }
    Ok(rows)
}
