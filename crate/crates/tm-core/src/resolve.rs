//! Path resolution and the arc/store index built over an immutable model.
//!
//! `ResolvedModel` never fails to build: dangling arc endpoints are kept as
//! unresolved slots for the validator to report. Consumers that require a
//! clean model (the simulator) check validation first.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{Machine, Model, Stage, StateDecl, TriggerArc};
use crate::path::StagePath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MachineId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StageId(pub usize);

#[derive(Debug)]
pub struct MachineInfo<'m> {
    pub machine: &'m Machine,
    pub path: StagePath,
    pub parent: Option<MachineId>,
    pub depth: usize,
}

#[derive(Debug)]
pub struct StageInfo<'m> {
    pub stage: &'m Stage,
    pub path: StagePath,
    pub machine: MachineId,
}

/// A resolved stage handle.
#[derive(Debug, Clone, Copy)]
pub struct StageRef<'m> {
    pub id: StageId,
    pub stage: &'m Stage,
    pub machine: MachineId,
}

/// A flow or trigger arc with endpoints looked up. Unresolvable endpoints
/// stay `None`.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedArc {
    pub src: Option<StageId>,
    pub dst: Option<StageId>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResolveError {
    #[error("unknown path `{0}`")]
    UnknownPath(String),
    #[error("`{0}` names a machine, not a stage")]
    PathIsMachine(String),
}

#[derive(Debug)]
pub struct ResolvedModel<'m> {
    pub model: &'m Model,
    machines: Vec<MachineInfo<'m>>,
    stages: Vec<StageInfo<'m>>,
    stage_index: HashMap<String, StageId>,
    machine_index: HashMap<String, MachineId>,
    pub flows: Vec<ResolvedArc>,
    pub triggers: Vec<ResolvedArc>,
    flows_out: Vec<Vec<usize>>,
    flows_in: Vec<Vec<usize>>,
    triggers_out: Vec<Vec<usize>>,
}

impl<'m> ResolvedModel<'m> {
    pub fn new(model: &'m Model) -> ResolvedModel<'m> {
        let mut rm = ResolvedModel {
            model,
            machines: Vec::new(),
            stages: Vec::new(),
            stage_index: HashMap::new(),
            machine_index: HashMap::new(),
            flows: Vec::new(),
            triggers: Vec::new(),
            flows_out: Vec::new(),
            flows_in: Vec::new(),
            triggers_out: Vec::new(),
        };
        for machine in &model.machines {
            let path = StagePath::root(&machine.name);
            rm.index_machine(machine, path, None, 1);
        }
        rm.flows_out = vec![Vec::new(); rm.stages.len()];
        rm.flows_in = vec![Vec::new(); rm.stages.len()];
        rm.triggers_out = vec![Vec::new(); rm.stages.len()];
        for (i, arc) in model.flows.iter().enumerate() {
            let src = rm.stage_id(&arc.src);
            let dst = rm.stage_id(&arc.dst);
            if let Some(s) = src {
                rm.flows_out[s.0].push(i);
            }
            if let Some(d) = dst {
                rm.flows_in[d.0].push(i);
            }
            rm.flows.push(ResolvedArc { src, dst });
        }
        for (i, arc) in model.triggers.iter().enumerate() {
            let src = rm.stage_id(&arc.src);
            let dst = rm.stage_id(&arc.dst);
            if let Some(s) = src {
                rm.triggers_out[s.0].push(i);
            }
            rm.triggers.push(ResolvedArc { src, dst });
        }
        rm
    }

    fn index_machine(
        &mut self,
        machine: &'m Machine,
        path: StagePath,
        parent: Option<MachineId>,
        depth: usize,
    ) {
        let id = MachineId(self.machines.len());
        // First declaration wins on duplicates; the validator reports them.
        self.machine_index.entry(path.to_string()).or_insert(id);
        self.machines.push(MachineInfo {
            machine,
            path: path.clone(),
            parent,
            depth,
        });
        for stage in &machine.stages {
            let sid = StageId(self.stages.len());
            let spath = path.child(&stage.name);
            self.stage_index.entry(spath.to_string()).or_insert(sid);
            self.stages.push(StageInfo {
                stage,
                path: spath,
                machine: id,
            });
        }
        for sub in &machine.submachines {
            let sub_path = path.child(&sub.name);
            self.index_machine(sub, sub_path, Some(id), depth + 1);
        }
    }

    pub fn machines(&self) -> &[MachineInfo<'m>] {
        &self.machines
    }

    pub fn stages(&self) -> &[StageInfo<'m>] {
        &self.stages
    }

    pub fn machine(&self, id: MachineId) -> &MachineInfo<'m> {
        &self.machines[id.0]
    }

    pub fn stage(&self, id: StageId) -> &StageInfo<'m> {
        &self.stages[id.0]
    }

    pub fn stage_id(&self, path: &StagePath) -> Option<StageId> {
        self.stage_index.get(&path.to_string()).copied()
    }

    pub fn machine_id(&self, path: &StagePath) -> Option<MachineId> {
        self.machine_index.get(&path.to_string()).copied()
    }

    /// Resolves `path` to a stage. Pure; the unique stage or an error.
    pub fn resolve(&self, path: &StagePath) -> Result<StageRef<'m>, ResolveError> {
        if let Some(id) = self.stage_id(path) {
            let info = self.stage(id);
            return Ok(StageRef {
                id,
                stage: info.stage,
                machine: info.machine,
            });
        }
        if self.machine_id(path).is_some() {
            return Err(ResolveError::PathIsMachine(path.to_string()));
        }
        Err(ResolveError::UnknownPath(path.to_string()))
    }

    /// Like [`resolve`](Self::resolve) but from text; syntax errors count as
    /// unknown paths.
    pub fn resolve_str(&self, s: &str) -> Result<StageRef<'m>, ResolveError> {
        let path: StagePath = s
            .parse()
            .map_err(|_| ResolveError::UnknownPath(s.to_string()))?;
        self.resolve(&path)
    }

    /// Outgoing flow arc indices of a stage, in declaration order.
    pub fn flows_out(&self, id: StageId) -> &[usize] {
        &self.flows_out[id.0]
    }

    /// Incoming flow arc indices of a stage, in declaration order.
    pub fn flows_in(&self, id: StageId) -> &[usize] {
        &self.flows_in[id.0]
    }

    /// Outgoing trigger arc indices of a stage, in declaration order.
    pub fn triggers_out(&self, id: StageId) -> &[usize] {
        &self.triggers_out[id.0]
    }

    pub fn trigger(&self, idx: usize) -> &'m TriggerArc {
        &self.model.triggers[idx]
    }

    /// Finds the store `name` visible from `machine`: the machine's own
    /// declarations first, then each ancestor in turn.
    pub fn resolve_store(
        &self,
        machine: MachineId,
        name: &str,
    ) -> Option<(MachineId, &'m StateDecl)> {
        let mut current = Some(machine);
        while let Some(id) = current {
            let info = self.machine(id);
            if let Some(decl) = info.machine.state.iter().find(|d| d.name() == name) {
                return Some((id, decl));
            }
            current = info.parent;
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StageKind;

    fn sample() -> Model {
        let mut m = Model::new("m");
        let asa = m.add_machine(None, Machine::new("asa")).unwrap();
        let ingress = m.add_machine(Some(&asa), Machine::new("ingress")).unwrap();
        {
            let machine = m.machines[0].submachines.get_mut(0).unwrap();
            machine.stages.push(Stage::new(StageKind::Transfer, "in"));
            machine.stages.push(Stage::new(StageKind::Receive, "recv"));
        }
        m.add_flow(ingress.child("in"), ingress.child("recv"))
            .unwrap();
        m
    }

    #[test]
    fn resolves_stages_and_rejects_machines() {
        let m = sample();
        let rm = ResolvedModel::new(&m);
        let r = rm.resolve_str("asa.ingress.recv").unwrap();
        assert_eq!(r.stage.kind, StageKind::Receive);

        assert_eq!(
            rm.resolve_str("asa.ingress"),
            Err(ResolveError::PathIsMachine("asa.ingress".into()))
        );
        assert_eq!(
            rm.resolve_str(""),
            Err(ResolveError::UnknownPath("".into()))
        );
        assert_eq!(
            rm.resolve_str("asa.nope"),
            Err(ResolveError::UnknownPath("asa.nope".into()))
        );
    }

    #[test]
    fn path_round_trip_for_every_stage() {
        let m = sample();
        let rm = ResolvedModel::new(&m);
        for info in rm.stages() {
            let r = rm.resolve(&info.path).unwrap();
            assert!(std::ptr::eq(r.stage, info.stage));
        }
    }

    #[test]
    fn arc_endpoints_and_out_lists() {
        let m = sample();
        let rm = ResolvedModel::new(&m);
        let arc = rm.flows[0];
        let src = arc.src.unwrap();
        assert_eq!(rm.flows_out(src), &[0]);
        assert_eq!(rm.flows_in(arc.dst.unwrap()), &[0]);
    }

    #[test]
    fn store_scope_walks_ancestors() {
        let mut m = sample();
        m.machines[0].state.push(StateDecl::Counter {
            name: "shared".into(),
            init: 0,
        });
        let rm = ResolvedModel::new(&m);
        let inner = rm.machine_id(&"asa.ingress".parse().unwrap()).unwrap();
        let (owner, decl) = rm.resolve_store(inner, "shared").unwrap();
        assert_eq!(rm.machine(owner).path.to_string(), "asa");
        assert_eq!(decl.kind_name(), "counter");
        assert!(rm.resolve_store(inner, "ghost").is_none());
    }
}
