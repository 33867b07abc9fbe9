//! In-memory representation of a thinging-machine model.
//!
//! A model is a named tree of machines. Each machine carries state
//! declarations, stages and submachines; flow and trigger arcs connect
//! stages across the whole tree. Declaration order is significant
//! everywhere and is preserved by every operation in this crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Action, Expr, Record, ThingTemplate};
use crate::path::StagePath;

/// The five TM stage kinds. Arrive and accept are merged into `Receive`;
/// the set is closed by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Create,
    Process,
    Release,
    Transfer,
    Receive,
}

impl StageKind {
    pub const ALL: [StageKind; 5] = [
        StageKind::Create,
        StageKind::Process,
        StageKind::Release,
        StageKind::Transfer,
        StageKind::Receive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageKind::Create => "create",
            StageKind::Process => "process",
            StageKind::Release => "release",
            StageKind::Transfer => "transfer",
            StageKind::Receive => "receive",
        }
    }

    pub fn from_name(s: &str) -> Option<StageKind> {
        StageKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Legal intra-machine flow steps, `(src kind, dst kind)`.
///
/// The table is data so that it can be amended without touching the
/// validator or simulator.
pub const STAGE_ADJACENCY: [(StageKind, StageKind); 8] = [
    (StageKind::Transfer, StageKind::Receive),
    (StageKind::Receive, StageKind::Process),
    (StageKind::Receive, StageKind::Release),
    (StageKind::Process, StageKind::Release),
    (StageKind::Process, StageKind::Create),
    (StageKind::Create, StageKind::Process),
    (StageKind::Create, StageKind::Release),
    (StageKind::Release, StageKind::Transfer),
];

pub fn adjacency_allows(src: StageKind, dst: StageKind) -> bool {
    STAGE_ADJACENCY.contains(&(src, dst))
}

/// A guarded exit of a stage. The target references one of the stage's
/// outgoing flow arcs by destination path; `actions` run when the branch
/// is taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub guard: Expr,
    pub target: StagePath,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub kind: StageKind,
    /// Unconditional actions, applied in declaration order on every visit.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<Action>,
    /// Guarded exits, evaluated top-down; the first true guard wins.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub branches: Vec<Branch>,
}

impl Stage {
    pub fn new(kind: StageKind, name: &str) -> Stage {
        Stage {
            name: name.to_string(),
            kind,
            actions: Vec::new(),
            branches: Vec::new(),
        }
    }
}

/// A named piece of per-machine state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateDecl {
    /// Integer counter with an initial value (>= 0 by convention).
    Counter { name: String, init: i64 },
    /// Set of attribute records with optional seed rows.
    Table { name: String, rows: Vec<Record> },
    /// Ordered list of predicate records consulted first-match. A record
    /// matches when all its fields other than `action` equal the probe's;
    /// an `action` of `"deny"` makes the match negative.
    Rules { name: String, rows: Vec<Record> },
}

impl StateDecl {
    pub fn name(&self) -> &str {
        match self {
            StateDecl::Counter { name, .. }
            | StateDecl::Table { name, .. }
            | StateDecl::Rules { name, .. } => name,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            StateDecl::Counter { .. } => "counter",
            StateDecl::Table { .. } => "table",
            StateDecl::Rules { .. } => "rules",
        }
    }
}

/// A thimac: a machine that things flow through, possibly containing
/// submachines. A machine may have zero stages (a pure container).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub state: Vec<StateDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub submachines: Vec<Machine>,
}

impl Machine {
    pub fn new(name: &str) -> Machine {
        Machine {
            name: name.to_string(),
            state: Vec::new(),
            stages: Vec::new(),
            submachines: Vec::new(),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn submachine(&self, name: &str) -> Option<&Machine> {
        self.submachines.iter().find(|m| m.name == name)
    }
}

/// Solid arrow: conceptual movement of a thing between two stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowArc {
    pub src: StagePath,
    pub dst: StagePath,
}

/// Dashed arrow: transformation of one flow into another. The destination
/// must be a create or transfer stage; `template` describes the thing the
/// new flow starts with (absent: a derived copy of the triggering thing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerArc {
    pub src: StagePath,
    pub dst: StagePath,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<ThingTemplate>,
}

/// Identifies a flow arc by its position in `Model::flows`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArcId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub name: String,
    pub machines: Vec<Machine>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flows: Vec<FlowArc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub triggers: Vec<TriggerArc>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("name `{name}` already used under `{parent}`")]
    DuplicateName { parent: String, name: String },
    #[error("unknown parent machine `{0}`")]
    UnknownParent(String),
    #[error("unknown path `{0}`")]
    UnknownPath(String),
}

impl Model {
    pub fn new(name: &str) -> Model {
        Model {
            name: name.to_string(),
            machines: Vec::new(),
            flows: Vec::new(),
            triggers: Vec::new(),
        }
    }

    fn machine_at_mut(&mut self, path: &StagePath) -> Option<&mut Machine> {
        let mut segs = path.segments().iter();
        let first = segs.next()?;
        let mut current = self.machines.iter_mut().find(|m| &m.name == first)?;
        for seg in segs {
            current = current.submachines.iter_mut().find(|m| &m.name == seg)?;
        }
        Some(current)
    }

    /// Looks up the machine at `path`, if any.
    pub fn machine_at(&self, path: &StagePath) -> Option<&Machine> {
        let mut segs = path.segments().iter();
        let first = segs.next()?;
        let mut current = self.machines.iter().find(|m| &m.name == first)?;
        for seg in segs {
            current = current.submachines.iter().find(|m| &m.name == seg)?;
        }
        Some(current)
    }

    /// Looks up the stage at `path`, if any.
    pub fn stage_at(&self, path: &StagePath) -> Option<&Stage> {
        let parent = path.parent()?;
        self.machine_at(&parent)?.stage(path.last())
    }

    /// Inserts `decl` under `parent` (or at top level) and returns its path.
    pub fn add_machine(
        &mut self,
        parent: Option<&StagePath>,
        decl: Machine,
    ) -> Result<StagePath, ModelError> {
        match parent {
            None => {
                if self.machines.iter().any(|m| m.name == decl.name) {
                    return Err(ModelError::DuplicateName {
                        parent: self.name.clone(),
                        name: decl.name,
                    });
                }
                let path = StagePath::root(&decl.name);
                self.machines.push(decl);
                Ok(path)
            }
            Some(p) => {
                let parent_machine = self
                    .machine_at_mut(p)
                    .ok_or_else(|| ModelError::UnknownParent(p.to_string()))?;
                if parent_machine
                    .submachines
                    .iter()
                    .any(|m| m.name == decl.name)
                {
                    return Err(ModelError::DuplicateName {
                        parent: p.to_string(),
                        name: decl.name,
                    });
                }
                let path = p.child(&decl.name);
                parent_machine.submachines.push(decl);
                Ok(path)
            }
        }
    }

    /// Appends a flow arc between two existing stages, preserving
    /// declaration order.
    pub fn add_flow(&mut self, src: StagePath, dst: StagePath) -> Result<ArcId, ModelError> {
        for p in [&src, &dst] {
            if self.stage_at(p).is_none() {
                return Err(ModelError::UnknownPath(p.to_string()));
            }
        }
        self.flows.push(FlowArc { src, dst });
        Ok(ArcId(self.flows.len() - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_machine_first_insertion() {
        let mut m = Model::new("m");
        let path = m.add_machine(None, Machine::new("asa")).unwrap();
        assert_eq!(path.to_string(), "asa");
        assert!(m.machine_at(&path).is_some());
    }

    #[test]
    fn add_machine_nested_and_duplicate() {
        let mut m = Model::new("m");
        let asa = m.add_machine(None, Machine::new("asa")).unwrap();
        let ingress = m.add_machine(Some(&asa), Machine::new("ingress")).unwrap();
        assert_eq!(ingress.to_string(), "asa.ingress");
        assert!(m.machine_at(&ingress).is_some());

        let err = m
            .add_machine(Some(&asa), Machine::new("ingress"))
            .unwrap_err();
        assert!(matches!(err, ModelError::DuplicateName { .. }));
    }

    #[test]
    fn add_machine_unknown_parent() {
        let mut m = Model::new("m");
        let ghost = StagePath::root("ghost");
        let err = m.add_machine(Some(&ghost), Machine::new("x")).unwrap_err();
        assert_eq!(err, ModelError::UnknownParent("ghost".into()));
    }

    #[test]
    fn add_flow_requires_resolvable_endpoints() {
        let mut m = Model::new("m");
        let a = m.add_machine(None, Machine::new("a")).unwrap();
        {
            let machine = m.machine_at_mut(&a).unwrap();
            machine.stages.push(Stage::new(StageKind::Release, "out"));
            machine.stages.push(Stage::new(StageKind::Transfer, "xfer"));
        }
        let id = m
            .add_flow(a.child("out"), a.child("xfer"))
            .expect("release -> transfer within one machine");
        assert_eq!(id, ArcId(0));

        let err = m
            .add_flow("nope.x".parse().unwrap(), a.child("out"))
            .unwrap_err();
        assert_eq!(err, ModelError::UnknownPath("nope.x".into()));
    }

    #[test]
    fn adjacency_table_is_exactly_the_legal_set() {
        assert!(adjacency_allows(StageKind::Transfer, StageKind::Receive));
        assert!(adjacency_allows(StageKind::Release, StageKind::Transfer));
        assert!(adjacency_allows(StageKind::Process, StageKind::Create));
        assert!(!adjacency_allows(StageKind::Release, StageKind::Process));
        assert!(!adjacency_allows(StageKind::Process, StageKind::Process));
        assert!(!adjacency_allows(StageKind::Transfer, StageKind::Transfer));
        // 8 legal pairs out of 25.
        let legal = StageKind::ALL
            .iter()
            .flat_map(|&a| StageKind::ALL.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| adjacency_allows(a, b))
            .count();
        assert_eq!(legal, 8);
    }
}
