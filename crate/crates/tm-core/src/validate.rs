//! Structural well-formedness checks, reported as coded diagnostics.
//!
//! Codes are stable API; message text is not. Errors make a model
//! unsimulatable; warnings flag suspicious but legal structure (terminal
//! sinks are legitimate in flow models, so reachability problems warn
//! rather than fail).

use std::collections::{HashSet, VecDeque};

use serde::Serialize;

use crate::expr::{Action, Expr};
use crate::model::{adjacency_allows, Machine, Model, StageKind, StateDecl};
use crate::resolve::{MachineId, ResolvedModel, StageId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum DiagCode {
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
    V7,
    V8,
    V9,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub code: DiagCode,
    pub severity: Severity,
    /// Stage or machine path the problem anchors to.
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }

    /// One-line JSON form for tooling.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("diagnostics serialize infallibly")
    }
}

/// Checks `model` against rules V1–V9. Deterministic: diagnostics are
/// ordered by rule, then by declaration order. An empty list means valid.
pub fn validate(model: &Model) -> Vec<Diagnostic> {
    let rm = ResolvedModel::new(model);
    validate_resolved(&rm)
}

pub fn validate_resolved(rm: &ResolvedModel) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    check_v1_v2(rm, &mut diags);
    check_v3(rm.model, &mut diags);
    check_v4(rm, &mut diags);
    check_v5(rm, &mut diags);
    check_v6(rm, &mut diags);
    check_v7(rm, &mut diags);
    check_v8(rm, &mut diags);
    check_v9(rm, &mut diags);
    diags
}

fn error(diags: &mut Vec<Diagnostic>, code: DiagCode, path: impl ToString, message: String) {
    diags.push(Diagnostic {
        code,
        severity: Severity::Error,
        path: path.to_string(),
        message,
    });
}

fn warning(diags: &mut Vec<Diagnostic>, code: DiagCode, path: impl ToString, message: String) {
    diags.push(Diagnostic {
        code,
        severity: Severity::Warning,
        path: path.to_string(),
        message,
    });
}

/// V1: intra-machine flows must follow the stage-adjacency table.
/// V2: boundary-crossing flows must pass through transfer stages — one
/// boundary per endpoint: sibling machines hop transfer→transfer, a parent
/// enters a child's transfer, a child exits through its own transfer.
fn check_v1_v2(rm: &ResolvedModel, diags: &mut Vec<Diagnostic>) {
    let mut v2 = Vec::new();
    for (i, arc) in rm.flows.iter().enumerate() {
        let (Some(src), Some(dst)) = (arc.src, arc.dst) else {
            continue; // dangling endpoints are V5's business
        };
        let s = rm.stage(src);
        let d = rm.stage(dst);
        let flow = &rm.model.flows[i];
        if s.machine == d.machine {
            if !adjacency_allows(s.stage.kind, d.stage.kind) {
                error(
                    diags,
                    DiagCode::V1,
                    &s.path,
                    format!(
                        "flow {} -> {}: {} -> {} is not a legal stage step",
                        flow.src,
                        flow.dst,
                        s.stage.kind.name(),
                        d.stage.kind.name()
                    ),
                );
            }
            continue;
        }
        let sp = rm.machine(s.machine).parent;
        let dp = rm.machine(d.machine).parent;
        let legal = if sp == dp {
            // Sibling machines (including two top-level machines).
            s.stage.kind == StageKind::Transfer && d.stage.kind == StageKind::Transfer
        } else if dp == Some(s.machine) {
            // Into a child: the child's boundary is crossed.
            matches!(s.stage.kind, StageKind::Release | StageKind::Transfer)
                && d.stage.kind == StageKind::Transfer
        } else if sp == Some(d.machine) {
            // Out to the parent: our own boundary is crossed.
            s.stage.kind == StageKind::Transfer
                && matches!(d.stage.kind, StageKind::Receive | StageKind::Transfer)
        } else {
            false
        };
        if !legal {
            v2.push(Diagnostic {
                code: DiagCode::V2,
                severity: Severity::Error,
                path: s.path.to_string(),
                message: format!(
                    "flow {} -> {} crosses a machine boundary without a transfer stage on each crossed boundary",
                    flow.src, flow.dst
                ),
            });
        }
    }
    diags.extend(v2);
}

/// V3: duplicate or shadowed names.
fn check_v3(model: &Model, diags: &mut Vec<Diagnostic>) {
    let mut seen = HashSet::new();
    for machine in &model.machines {
        if !seen.insert(machine.name.clone()) {
            error(
                diags,
                DiagCode::V3,
                &machine.name,
                format!("duplicate top-level machine name `{}`", machine.name),
            );
        }
    }
    fn walk(
        machine: &Machine,
        path: String,
        inherited_stores: &HashSet<String>,
        diags: &mut Vec<Diagnostic>,
    ) {
        let mut members = HashSet::new();
        for stage in &machine.stages {
            if !members.insert(stage.name.clone()) {
                error(
                    diags,
                    DiagCode::V3,
                    format!("{path}.{}", stage.name),
                    format!("duplicate stage name `{}` in `{path}`", stage.name),
                );
            }
        }
        for sub in &machine.submachines {
            if !members.insert(sub.name.clone()) {
                error(
                    diags,
                    DiagCode::V3,
                    format!("{path}.{}", sub.name),
                    format!(
                        "name `{}` in `{path}` shadows a sibling stage or machine",
                        sub.name
                    ),
                );
            }
        }
        let mut stores = HashSet::new();
        for decl in &machine.state {
            if !stores.insert(decl.name().to_string()) {
                error(
                    diags,
                    DiagCode::V3,
                    &path,
                    format!("duplicate state name `{}` in `{path}`", decl.name()),
                );
            } else if inherited_stores.contains(decl.name()) {
                error(
                    diags,
                    DiagCode::V3,
                    &path,
                    format!(
                        "state `{}` in `{path}` shadows a declaration in an enclosing machine",
                        decl.name()
                    ),
                );
            }
        }
        let mut next_inherited = inherited_stores.clone();
        next_inherited.extend(stores);
        for sub in &machine.submachines {
            walk(sub, format!("{path}.{}", sub.name), &next_inherited, diags);
        }
    }
    for machine in &model.machines {
        walk(machine, machine.name.clone(), &HashSet::new(), diags);
    }
}

/// V4: branch coverage. A process/create stage with two or more outgoing
/// flows needs exhaustive, ordered guards; branch targets must name real
/// outgoing flows; overlapping or dead guards warn.
fn check_v4(rm: &ResolvedModel, diags: &mut Vec<Diagnostic>) {
    for (sid, info) in rm.stages().iter().enumerate() {
        let stage = info.stage;
        let out_dsts: Vec<String> = rm
            .flows_out(StageId(sid))
            .iter()
            .map(|&i| rm.model.flows[i].dst.to_string())
            .collect();

        // Branch targets must reference outgoing flow arcs (any stage kind).
        for branch in &stage.branches {
            if !out_dsts.contains(&branch.target.to_string()) {
                error(
                    diags,
                    DiagCode::V4,
                    &info.path,
                    format!(
                        "branch targets `{}`, which is not an outgoing flow of `{}`",
                        branch.target, info.path
                    ),
                );
            }
        }

        if matches!(stage.kind, StageKind::Process | StageKind::Create) && out_dsts.len() >= 2 {
            if stage.branches.is_empty() {
                error(
                    diags,
                    DiagCode::V4,
                    &info.path,
                    format!(
                        "{} stage `{}` has {} outgoing flows but no branch guards",
                        stage.kind.name(),
                        info.path,
                        out_dsts.len()
                    ),
                );
            } else {
                for dst in &out_dsts {
                    if !stage.branches.iter().any(|b| &b.target.to_string() == dst) {
                        error(
                            diags,
                            DiagCode::V4,
                            &info.path,
                            format!(
                                "outgoing flow to `{dst}` is not covered by any branch of `{}`",
                                info.path
                            ),
                        );
                    }
                }
                if !stage.branches.iter().any(|b| b.guard.is_lit_true()) {
                    error(
                        diags,
                        DiagCode::V4,
                        &info.path,
                        format!(
                            "branches of `{}` are not exhaustive: no `when true` fallback",
                            info.path
                        ),
                    );
                }
            }
        }

        // Overlap warnings apply wherever branches appear.
        for (i, a) in stage.branches.iter().enumerate() {
            for b in stage.branches.iter().skip(i + 1) {
                if a.guard == b.guard {
                    warning(
                        diags,
                        DiagCode::V4,
                        &info.path,
                        format!("overlapping guards in `{}`: duplicate condition", info.path),
                    );
                }
            }
            if a.guard.is_lit_true() && i + 1 < stage.branches.len() {
                warning(
                    diags,
                    DiagCode::V4,
                    &info.path,
                    format!(
                        "branch {} of `{}` is unreachable after a `when true` branch",
                        i + 2,
                        info.path
                    ),
                );
            }
        }
    }
}

/// V5: dangling paths in arcs and branch targets.
fn check_v5(rm: &ResolvedModel, diags: &mut Vec<Diagnostic>) {
    let mut check = |path: &crate::path::StagePath, what: &str, diags: &mut Vec<Diagnostic>| {
        if rm.stage_id(path).is_some() {
            return;
        }
        let detail = if rm.machine_id(path).is_some() {
            "names a machine, not a stage"
        } else {
            "does not resolve"
        };
        error(
            diags,
            DiagCode::V5,
            path,
            format!("{what} `{path}` {detail}"),
        );
    };
    for flow in &rm.model.flows {
        check(&flow.src, "flow source", diags);
        check(&flow.dst, "flow destination", diags);
    }
    for trigger in &rm.model.triggers {
        check(&trigger.src, "trigger source", diags);
        check(&trigger.dst, "trigger destination", diags);
    }
    for info in rm.stages() {
        for branch in &info.stage.branches {
            check(&branch.target, "branch target", diags);
        }
    }
}

/// V6: triggers must start a flow, so their destination is a create or
/// transfer stage.
fn check_v6(rm: &ResolvedModel, diags: &mut Vec<Diagnostic>) {
    for (i, arc) in rm.triggers.iter().enumerate() {
        let Some(dst) = arc.dst else { continue };
        let kind = rm.stage(dst).stage.kind;
        if !matches!(kind, StageKind::Create | StageKind::Transfer) {
            let trigger = &rm.model.triggers[i];
            error(
                diags,
                DiagCode::V6,
                &trigger.dst,
                format!(
                    "trigger {} -> {} targets a {} stage; triggers must target create or transfer",
                    trigger.src,
                    trigger.dst,
                    kind.name()
                ),
            );
        }
    }
}

/// V7: every counter, table and rules reference in actions and guards must
/// resolve (lexically: own machine, then ancestors) to a store of the
/// right kind.
fn check_v7(rm: &ResolvedModel, diags: &mut Vec<Diagnostic>) {
    #[derive(Clone, Copy, PartialEq)]
    enum Want {
        Counter,
        Table,
        TableOrRules,
    }

    fn check_store(
        rm: &ResolvedModel,
        machine: MachineId,
        name: &str,
        want: Want,
        at: &str,
        what: &str,
        diags: &mut Vec<Diagnostic>,
    ) {
        match rm.resolve_store(machine, name) {
            None => error(
                diags,
                DiagCode::V7,
                at,
                format!("{what} references undeclared store `{name}`"),
            ),
            Some((_, decl)) => {
                let ok = match want {
                    Want::Counter => matches!(decl, StateDecl::Counter { .. }),
                    Want::Table => matches!(decl, StateDecl::Table { .. }),
                    Want::TableOrRules => {
                        matches!(decl, StateDecl::Table { .. } | StateDecl::Rules { .. })
                    }
                };
                if !ok {
                    let wanted = match want {
                        Want::Counter => "a counter",
                        Want::Table => "a table",
                        Want::TableOrRules => "a table or rules store",
                    };
                    error(
                        diags,
                        DiagCode::V7,
                        at,
                        format!(
                            "{what} references `{name}`, which is {} {}, not {wanted}",
                            article(decl.kind_name()),
                            decl.kind_name()
                        ),
                    );
                }
            }
        }
    }

    fn article(s: &str) -> &'static str {
        if s.starts_with(['a', 'e', 'i', 'o', 'u']) {
            "an"
        } else {
            "a"
        }
    }

    fn walk_expr(
        rm: &ResolvedModel,
        machine: MachineId,
        expr: &Expr,
        at: &str,
        what: &str,
        diags: &mut Vec<Diagnostic>,
    ) {
        match expr {
            Expr::Counter { name } => {
                check_store(rm, machine, name, Want::Counter, at, what, diags)
            }
            Expr::In { record, store } => {
                check_store(rm, machine, store, Want::TableOrRules, at, what, diags);
                for value in record.values() {
                    walk_expr(rm, machine, value, at, what, diags);
                }
            }
            Expr::Cmp { lhs, rhs, .. } | Expr::And { lhs, rhs } | Expr::Or { lhs, rhs } => {
                walk_expr(rm, machine, lhs, at, what, diags);
                walk_expr(rm, machine, rhs, at, what, diags);
            }
            Expr::Not { inner } => walk_expr(rm, machine, inner, at, what, diags),
            Expr::Attr { .. } | Expr::Lit { .. } => {}
        }
    }

    fn walk_action(
        rm: &ResolvedModel,
        machine: MachineId,
        action: &Action,
        at: &str,
        diags: &mut Vec<Diagnostic>,
    ) {
        match action {
            Action::Incr { counter } => check_store(
                rm,
                machine,
                counter,
                Want::Counter,
                at,
                &format!("action `incr {counter}`"),
                diags,
            ),
            Action::Insert { table, record } => {
                check_store(
                    rm,
                    machine,
                    table,
                    Want::Table,
                    at,
                    &format!("action `insert {table}`"),
                    diags,
                );
                for value in record.values() {
                    walk_expr(rm, machine, value, at, "insert record", diags);
                }
            }
            Action::Set { value, .. } => walk_expr(rm, machine, value, at, "set action", diags),
            Action::Log { message } => walk_expr(rm, machine, message, at, "log action", diags),
            Action::Drop | Action::Nop => {}
        }
    }

    for info in rm.stages() {
        let at = info.path.to_string();
        for action in &info.stage.actions {
            walk_action(rm, info.machine, action, &at, diags);
        }
        for branch in &info.stage.branches {
            walk_expr(rm, info.machine, &branch.guard, &at, "branch guard", diags);
            for action in &branch.actions {
                walk_action(rm, info.machine, action, &at, diags);
            }
        }
    }
    // Trigger guards and templates evaluate in the source stage's scope.
    for (i, arc) in rm.triggers.iter().enumerate() {
        let Some(src) = arc.src else { continue };
        let machine = rm.stage(src).machine;
        let trigger = &rm.model.triggers[i];
        let at = trigger.src.to_string();
        if let Some(guard) = &trigger.guard {
            walk_expr(rm, machine, guard, &at, "trigger guard", diags);
        }
        if let Some(template) = &trigger.template {
            for value in template.attrs.values() {
                walk_expr(rm, machine, value, &at, "trigger template", diags);
            }
        }
    }
}

/// V8: a receive stage that no transfer stage feeds can never see input.
fn check_v8(rm: &ResolvedModel, diags: &mut Vec<Diagnostic>) {
    for (sid, info) in rm.stages().iter().enumerate() {
        if info.stage.kind != StageKind::Receive {
            continue;
        }
        let fed = rm.flows_in(StageId(sid)).iter().any(|&i| {
            rm.flows[i]
                .src
                .map(|s| rm.stage(s).stage.kind == StageKind::Transfer)
                .unwrap_or(false)
        });
        if !fed {
            warning(
                diags,
                DiagCode::V8,
                &info.path,
                format!(
                    "receive stage `{}` has no incoming transfer-originated flow",
                    info.path
                ),
            );
        }
    }
}

/// V9: stages unreachable (over flow arcs) from any transfer or create
/// stage can never be visited.
fn check_v9(rm: &ResolvedModel, diags: &mut Vec<Diagnostic>) {
    let mut reached: HashSet<StageId> = HashSet::new();
    let mut queue: VecDeque<StageId> = VecDeque::new();
    for (sid, info) in rm.stages().iter().enumerate() {
        if matches!(info.stage.kind, StageKind::Transfer | StageKind::Create) {
            let id = StageId(sid);
            if reached.insert(id) {
                queue.push_back(id);
            }
        }
    }
    while let Some(id) = queue.pop_front() {
        for &i in rm.flows_out(id) {
            if let Some(dst) = rm.flows[i].dst {
                if reached.insert(dst) {
                    queue.push_back(dst);
                }
            }
        }
    }
    for (sid, info) in rm.stages().iter().enumerate() {
        if !reached.contains(&StageId(sid)) {
            warning(
                diags,
                DiagCode::V9,
                &info.path,
                format!(
                    "stage `{}` is unreachable from any transfer or create stage",
                    info.path
                ),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;

    fn codes(diags: &[Diagnostic]) -> Vec<DiagCode> {
        diags.iter().map(|d| d.code).collect()
    }

    fn errors(diags: &[Diagnostic]) -> Vec<DiagCode> {
        diags.iter().filter(|d| d.is_error()).map(|d| d.code).collect()
    }

    #[test]
    fn clean_pipeline_validates_empty() {
        let text = r#"
model "ok" {
  machine a {
    stage transfer t_in
    stage receive r
    stage process p
    stage release done
    stage transfer t_out
    flow t_in -> r
    flow r -> p
    flow p -> done
    flow done -> t_out
  }
  machine b {
    stage transfer t_in
    stage receive r
    stage release done
    flow t_in -> r
    flow r -> done
  }
  flow a.t_out -> b.t_in
}
"#;
        let m = parse(text).unwrap();
        assert_eq!(validate(&m), Vec::new());
    }

    #[test]
    fn v1_illegal_intra_machine_step() {
        let text = r#"
model "bad" {
  machine a {
    stage transfer t_in
    stage receive r
    stage release done
    stage process p
    flow t_in -> r
    flow r -> done
    flow done -> p
    flow p -> done
  }
}
"#;
        let m = parse(text).unwrap();
        let diags = validate(&m);
        assert_eq!(errors(&diags), vec![DiagCode::V1]);
        assert!(diags[0].message.contains("release -> process"));
    }

    #[test]
    fn v2_boundary_without_transfer() {
        let text = r#"
model "bad" {
  machine a {
    stage transfer t_in
    stage receive r
    stage release done
    flow t_in -> r
    flow r -> done
  }
  machine b {
    stage transfer t_in
    stage receive r
    flow t_in -> r
  }
  flow a.done -> b.r
}
"#;
        let m = parse(text).unwrap();
        assert_eq!(errors(&validate(&m)), vec![DiagCode::V2]);
    }

    #[test]
    fn v2_parent_child_hops_are_legal() {
        let text = r#"
model "ok" {
  machine p {
    stage transfer t_in
    stage transfer t_out
    machine c {
      stage transfer t_in
      stage receive r
      stage release done
      stage transfer t_out
      flow t_in -> r
      flow r -> done
      flow done -> t_out
    }
    flow t_in -> c.t_in
    flow c.t_out -> t_out
  }
}
"#;
        let m = parse(text).unwrap();
        assert_eq!(errors(&validate(&m)), vec![]);
    }

    #[test]
    fn v3_duplicates_detected_structurally() {
        let mut m = parse("model \"m\" { machine a { stage process p stage release q flow p -> q } }").unwrap();
        m.machines[0].stages[1].name = "p".into();
        let diags = validate(&m);
        assert!(errors(&diags).contains(&DiagCode::V3));
    }

    #[test]
    fn v4_uncovered_fork() {
        let text = r#"
model "m" {
  machine a {
    stage transfer t
    stage receive r
    stage process p
    stage release x
    stage release y
    flow t -> r
    flow r -> p
    flow p -> x
    flow p -> y
  }
}
"#;
        let m = parse(text).unwrap();
        let diags = validate(&m);
        assert_eq!(errors(&diags), vec![DiagCode::V4]);
        assert!(diags[0].message.contains("no branch guards"));
    }

    #[test]
    fn v4_missing_fallback_and_dead_branch_warning() {
        let text = r#"
model "m" {
  machine a {
    stage transfer t
    stage receive r
    stage process p {
      when thing.x = 1 -> x
      when thing.x = 2 -> y
    }
    stage release x
    stage release y
    flow t -> r
    flow r -> p
    flow p -> x
    flow p -> y
  }
}
"#;
        let m = parse(text).unwrap();
        let diags = validate(&m);
        assert_eq!(errors(&diags), vec![DiagCode::V4]);
        assert!(diags.iter().any(|d| d.message.contains("not exhaustive")));
    }

    #[test]
    fn v5_dangling_arc_and_branch() {
        let text = r#"
model "m" {
  machine a {
    stage transfer t
    stage receive r
    flow t -> r
  }
  flow a.t -> a.ghost
  trigger a.missing -> a.t
}
"#;
        let m = parse(text).unwrap();
        let diags = validate(&m);
        assert_eq!(errors(&diags), vec![DiagCode::V5, DiagCode::V5]);
    }

    #[test]
    fn v6_trigger_into_process() {
        let text = r#"
model "m" {
  machine a {
    stage transfer t
    stage receive r
    stage process p
    flow t -> r
    flow r -> p
  }
  trigger a.p -> a.p
}
"#;
        let m = parse(text).unwrap();
        assert_eq!(errors(&validate(&m)), vec![DiagCode::V6]);
    }

    #[test]
    fn v7_unknown_and_miskinded_stores() {
        let text = r#"
model "m" {
  machine a {
    state table t
    stage transfer x
    stage receive r
    stage process p {
      incr ghost
      incr t
    }
    flow x -> r
    flow r -> p
  }
}
"#;
        let m = parse(text).unwrap();
        let diags = validate(&m);
        assert_eq!(errors(&diags), vec![DiagCode::V7, DiagCode::V7]);
        assert!(diags[0].message.contains("undeclared store `ghost`"));
        assert!(diags[1].message.contains("not a counter"));
    }

    #[test]
    fn v8_unfed_receive_warns() {
        let text = r#"
model "m" {
  machine a {
    stage receive lonely
    stage process p
    flow lonely -> p
  }
}
"#;
        let m = parse(text).unwrap();
        let diags = validate(&m);
        assert!(diags.iter().all(|d| !d.is_error()));
        assert!(codes(&diags).contains(&DiagCode::V8));
        // lonely is also unreachable from any transfer/create.
        assert!(codes(&diags).contains(&DiagCode::V9));
    }

    #[test]
    fn validation_is_idempotent() {
        let text = "model \"m\" { machine a { stage receive lonely stage process p flow lonely -> p } }";
        let m = parse(text).unwrap();
        assert_eq!(validate(&m), validate(&m));
    }

    #[test]
    fn diagnostics_serialize_as_json_lines() {
        let m = parse("model \"m\" { machine a { stage receive lonely } }").unwrap();
        let diags = validate(&m);
        let line = diags[0].to_json_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["code"], "V8");
        assert_eq!(v["severity"], "warning");
        assert_eq!(v["path"], "a.lonely");
    }
}
