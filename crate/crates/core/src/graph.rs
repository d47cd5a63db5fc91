//! System graph: child and parent processes, flow arcs, and the canonical
//! variable index.
//!
//! Only child processes carry variables. Parents are sets of children; any
//! depth of containment in the input is flattened to that two-level view at
//! build time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One process as written in a system definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stock: bool,
    /// Direct subprocesses; may name other parents. `Some` marks a parent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub children: Option<Vec<String>>,
}

impl ProcessSpec {
    pub fn child(id: impl Into<String>, stock: bool) -> Self {
        Self {
            id: id.into(),
            stock,
            children: None,
        }
    }

    pub fn parent<S: Into<String>>(id: impl Into<String>, children: impl IntoIterator<Item = S>) -> Self {
        Self {
            id: id.into(),
            stock: false,
            children: Some(children.into_iter().map(Into::into).collect()),
        }
    }

    fn direct_children(&self) -> &[String] {
        self.children.as_deref().unwrap_or(&[])
    }
}

/// Parsed system definition, before validation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub processes: Vec<ProcessSpec>,
    /// Flow arcs as `[from, to]` pairs of child ids.
    #[serde(default)]
    pub flows: Vec<[String; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProcessKind {
    Child,
    Parent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Process {
    pub id: String,
    pub kind: ProcessKind,
    /// Flattened child set; empty for child processes.
    pub children: BTreeSet<String>,
    /// For parents: true when any child has a stock.
    pub has_stock: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowArc {
    pub from: String,
    pub to: String,
}

impl FlowArc {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
        }
    }
}

impl fmt::Display for FlowArc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

/// Position of every inferred variable in the parameter vector.
///
/// Stocks come first, then flows, each block sorted lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct VariableIndex {
    stocks: Vec<String>,
    flows: Vec<FlowArc>,
    stock_pos: BTreeMap<String, usize>,
    flow_pos: BTreeMap<FlowArc, usize>,
}

impl VariableIndex {
    fn new(mut stocks: Vec<String>, mut flows: Vec<FlowArc>) -> Self {
        stocks.sort();
        flows.sort();
        let stock_pos = stocks
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let q = stocks.len();
        let flow_pos = flows
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), q + i))
            .collect();
        Self {
            stocks,
            flows,
            stock_pos,
            flow_pos,
        }
    }

    /// Total number of variables, `p`.
    pub fn len(&self) -> usize {
        self.stocks.len() + self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of stock variables, `q`.
    pub fn n_stocks(&self) -> usize {
        self.stocks.len()
    }

    pub fn n_flows(&self) -> usize {
        self.flows.len()
    }

    pub fn stocks(&self) -> &[String] {
        &self.stocks
    }

    pub fn flows(&self) -> &[FlowArc] {
        &self.flows
    }

    pub fn stock(&self, process: &str) -> Option<usize> {
        self.stock_pos.get(process).copied()
    }

    pub fn flow(&self, from: &str, to: &str) -> Option<usize> {
        self.flow_pos.get(&FlowArc::new(from, to)).copied()
    }

    pub fn is_flow(&self, i: usize) -> bool {
        i >= self.stocks.len()
    }

    /// Output name: `S:<process>` or `U:<from>-><to>`.
    pub fn name(&self, i: usize) -> String {
        if i < self.stocks.len() {
            format!("S:{}", self.stocks[i])
        } else {
            format!("U:{}", self.flows[i - self.stocks.len()])
        }
    }

    pub fn names(&self) -> Vec<String> {
        (0..self.len()).map(|i| self.name(i)).collect()
    }

    /// Inverse of [`VariableIndex::name`].
    pub fn position(&self, name: &str) -> Option<usize> {
        if let Some(id) = name.strip_prefix("S:") {
            self.stock(id)
        } else if let Some(arc) = name.strip_prefix("U:") {
            let (from, to) = arc.split_once("->")?;
            self.flow(from, to)
        } else {
            None
        }
    }
}

/// Validated, immutable MFA system.
#[derive(Clone, Debug)]
pub struct SystemGraph {
    processes: BTreeMap<String, Process>,
    /// Declaration order of processes, kept for reporting.
    order: Vec<String>,
    index: VariableIndex,
}

impl SystemGraph {
    pub fn build(spec: &SystemSpec) -> Result<Self> {
        let mut direct: BTreeMap<&str, &ProcessSpec> = BTreeMap::new();
        for p in &spec.processes {
            if direct.insert(p.id.as_str(), p).is_some() {
                return Err(Error::DuplicateProcess(p.id.clone()));
            }
        }

        let mut parent_of: BTreeMap<&str, &str> = BTreeMap::new();
        for p in &spec.processes {
            if matches!(&p.children, Some(c) if c.is_empty()) {
                return Err(Error::EmptyParent(p.id.clone()));
            }
            for c in p.direct_children() {
                if !direct.contains_key(c.as_str()) {
                    return Err(Error::UnknownProcess(c.clone()));
                }
                if c == &p.id {
                    return Err(Error::ContainmentCycle(c.clone()));
                }
                if let Some(prev) = parent_of.insert(c.as_str(), p.id.as_str()) {
                    return Err(Error::MultipleParents {
                        child: c.clone(),
                        first: prev.to_string(),
                        second: p.id.clone(),
                    });
                }
            }
        }
        // With at most one parent per node, a cycle shows up as a walk up the
        // parent chain that revisits a node.
        for start in direct.keys() {
            let mut seen = BTreeSet::new();
            let mut cur = *start;
            while let Some(&up) = parent_of.get(cur) {
                if !seen.insert(up) {
                    return Err(Error::ContainmentCycle(up.to_string()));
                }
                cur = up;
            }
        }

        let mut processes = BTreeMap::new();
        for p in &spec.processes {
            let is_parent = p.children.is_some();
            let children = if is_parent {
                let mut out = BTreeSet::new();
                flatten(&direct, &p.id, &mut out);
                out
            } else {
                BTreeSet::new()
            };
            if is_parent && p.stock {
                return Err(Error::Project(format!(
                    "parent process `{}` cannot carry its own stock flag",
                    p.id
                )));
            }
            let has_stock = if is_parent {
                children.iter().any(|c| direct[c.as_str()].stock)
            } else {
                p.stock
            };
            processes.insert(
                p.id.clone(),
                Process {
                    id: p.id.clone(),
                    kind: if is_parent {
                        ProcessKind::Parent
                    } else {
                        ProcessKind::Child
                    },
                    children,
                    has_stock,
                },
            );
        }
        let mut arcs = BTreeSet::new();
        for [from, to] in &spec.flows {
            for end in [from, to] {
                match processes.get(end) {
                    None => return Err(Error::UnknownProcess(end.clone())),
                    Some(p) if p.kind == ProcessKind::Parent => {
                        return Err(Error::ParentEndpoint {
                            from: from.clone(),
                            to: to.clone(),
                            endpoint: end.clone(),
                        })
                    }
                    _ => {}
                }
            }
            if from == to {
                return Err(Error::SelfLoop(from.clone()));
            }
            if !arcs.insert(FlowArc::new(from.clone(), to.clone())) {
                return Err(Error::DuplicateArc(from.clone(), to.clone()));
            }
        }

        let stocks = processes
            .values()
            .filter(|p| p.kind == ProcessKind::Child && p.has_stock)
            .map(|p| p.id.clone())
            .collect();
        let index = VariableIndex::new(stocks, arcs.into_iter().collect());
        let order = spec.processes.iter().map(|p| p.id.clone()).collect();
        Ok(Self {
            processes,
            order,
            index,
        })
    }

    pub fn index(&self) -> &VariableIndex {
        &self.index
    }

    pub fn process(&self, id: &str) -> Result<&Process> {
        self.processes
            .get(id)
            .ok_or_else(|| Error::UnknownProcess(id.to_string()))
    }

    /// Processes in declaration order.
    pub fn processes(&self) -> impl Iterator<Item = &Process> {
        self.order.iter().map(move |id| &self.processes[id])
    }

    /// Child processes in declaration order.
    pub fn children(&self) -> impl Iterator<Item = &Process> {
        self.processes().filter(|p| p.kind == ProcessKind::Child)
    }

    /// `{id}` for a child, the flattened child set for a parent.
    pub fn expand(&self, id: &str) -> Result<BTreeSet<String>> {
        let p = self.process(id)?;
        Ok(match p.kind {
            ProcessKind::Child => BTreeSet::from([p.id.clone()]),
            ProcessKind::Parent => p.children.clone(),
        })
    }

    /// Arcs leaving child `id`.
    pub fn outflows(&self, id: &str) -> impl Iterator<Item = &FlowArc> {
        let id = id.to_string();
        self.index.flows().iter().filter(move |a| a.from == id)
    }

    /// Arcs entering child `id`.
    pub fn inflows(&self, id: &str) -> impl Iterator<Item = &FlowArc> {
        let id = id.to_string();
        self.index.flows().iter().filter(move |a| a.to == id)
    }
}

fn flatten(direct: &BTreeMap<&str, &ProcessSpec>, id: &str, out: &mut BTreeSet<String>) {
    let p = direct[id];
    match &p.children {
        None => {
            out.insert(p.id.clone());
        }
        Some(children) => {
            for c in children {
                flatten(direct, c, out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::si_example_system as si_example;

    #[test]
    fn si_example_ordering() {
        let g = SystemGraph::build(&si_example()).unwrap();
        let names = g.index().names();
        assert_eq!(
            names,
            [
                "S:4", "S:5", "U:1->3", "U:1->4", "U:1->5", "U:2->4", "U:2->5", "U:3->4",
                "U:3->5", "U:4->1", "U:4->2", "U:4->3"
            ]
        );
        assert_eq!(g.index().n_stocks(), 2);
        for (i, n) in names.iter().enumerate() {
            assert_eq!(g.index().position(n), Some(i));
        }
    }

    #[test]
    fn expand_parents() {
        let g = SystemGraph::build(&si_example()).unwrap();
        let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(g.expand("B").unwrap(), set(&["1", "2", "3"]));
        assert_eq!(g.expand("C").unwrap(), set(&["4", "5"]));
        assert_eq!(g.expand("3").unwrap(), set(&["3"]));
        assert!(g.process("C").unwrap().has_stock);
        assert!(!g.process("A").unwrap().has_stock);
        assert!(matches!(g.expand("Z"), Err(Error::UnknownProcess(_))));
        // a child set expands to itself
        for c in g.expand("B").unwrap() {
            assert_eq!(g.expand(&c).unwrap(), set(&[c.as_str()]));
        }
    }

    #[test]
    fn minimal_graphs() {
        let one = SystemSpec {
            processes: vec![ProcessSpec::child("x", true)],
            flows: vec![],
        };
        let g = SystemGraph::build(&one).unwrap();
        assert_eq!((g.index().len(), g.index().n_stocks()), (1, 1));

        let two = SystemSpec {
            processes: vec![ProcessSpec::child("a", false), ProcessSpec::child("b", false)],
            flows: vec![["a".into(), "b".into()], ["b".into(), "a".into()]],
        };
        let g = SystemGraph::build(&two).unwrap();
        assert_eq!((g.index().len(), g.index().n_stocks()), (2, 0));
    }

    #[test]
    fn rejects_bad_graphs() {
        let mut s = si_example();
        s.flows.push(["A".into(), "4".into()]);
        assert!(matches!(
            SystemGraph::build(&s),
            Err(Error::ParentEndpoint { endpoint, .. }) if endpoint == "A"
        ));

        let mut s = si_example();
        s.processes.push(ProcessSpec::child("1", false));
        assert!(matches!(
            SystemGraph::build(&s),
            Err(Error::DuplicateProcess(_))
        ));

        let mut s = si_example();
        s.flows.push(["2".into(), "2".into()]);
        assert!(matches!(SystemGraph::build(&s), Err(Error::SelfLoop(_))));

        let mut s = si_example();
        s.flows.push(["1".into(), "3".into()]);
        assert!(matches!(
            SystemGraph::build(&s),
            Err(Error::DuplicateArc(..))
        ));

        let mut s = si_example();
        s.processes.push(ProcessSpec::parent("D", Vec::<String>::new()));
        assert!(matches!(SystemGraph::build(&s), Err(Error::EmptyParent(_))));

        let mut s = si_example();
        s.processes[7].children.as_mut().unwrap().push("1".into());
        assert!(matches!(
            SystemGraph::build(&s),
            Err(Error::MultipleParents { .. })
        ));

        let mut s = si_example();
        s.processes[5].stock = true;
        assert!(SystemGraph::build(&s).is_err());
    }

    #[test]
    fn containment_cycle() {
        let spec = SystemSpec {
            processes: vec![ProcessSpec::parent("P", ["Q"]), ProcessSpec::parent("Q", ["P"])],
            flows: vec![],
        };
        assert!(matches!(
            SystemGraph::build(&spec),
            Err(Error::ContainmentCycle(_))
        ));
    }
}
