//! Canonical serializer for models: 2-space indent, one declaration per
//! line, declaration order preserved, all flows emitted at model level
//! with absolute paths. Output is byte-deterministic, so
//! `serialize(parse(serialize(m))) == serialize(m)`.

use std::fmt::Write;

use crate::expr::{Action, Expr, Record, RecordExpr, Value};
use crate::model::{Machine, Model, StateDecl};

/// Renders `model` in canonical form. Total on valid models; output always
/// ends with a newline and uses LF line endings.
pub fn serialize(model: &Model) -> String {
    let mut out = String::new();
    let _ = write!(out, "model \"{}\" {{\n", escape(&model.name));
    for machine in &model.machines {
        write_machine(&mut out, machine, 1);
    }
    for flow in &model.flows {
        let _ = writeln!(out, "  flow {} -> {}", flow.src, flow.dst);
    }
    for trigger in &model.triggers {
        let _ = write!(out, "  trigger {} -> {}", trigger.src, trigger.dst);
        if let Some(guard) = &trigger.guard {
            let _ = write!(out, " when {}", expr_string(guard));
        }
        if let Some(template) = &trigger.template {
            let _ = write!(
                out,
                " emit {} {}",
                template.thing_type,
                record_expr_string(&template.attrs)
            );
        }
        out.push('\n');
    }
    out.push_str("}\n");
    out
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_machine(out: &mut String, machine: &Machine, level: usize) {
    indent(out, level);
    let _ = writeln!(out, "machine {} {{", machine.name);
    for decl in &machine.state {
        indent(out, level + 1);
        match decl {
            StateDecl::Counter { name, init } => {
                let _ = writeln!(out, "state counter {name} = {init}");
            }
            StateDecl::Table { name, rows } => {
                if rows.is_empty() {
                    let _ = writeln!(out, "state table {name}");
                } else {
                    let _ = writeln!(out, "state table {name} = {}", record_list_string(rows));
                }
            }
            StateDecl::Rules { name, rows } => {
                let _ = writeln!(out, "state rules {name} = {}", record_list_string(rows));
            }
        }
    }
    for stage in &machine.stages {
        indent(out, level + 1);
        let _ = write!(out, "stage {} {}", stage.kind.name(), stage.name);
        if stage.actions.is_empty() && stage.branches.is_empty() {
            out.push('\n');
            continue;
        }
        out.push_str(" {\n");
        for action in &stage.actions {
            indent(out, level + 2);
            let _ = writeln!(out, "{}", action_string(action));
        }
        for branch in &stage.branches {
            indent(out, level + 2);
            let _ = write!(
                out,
                "when {} -> {}",
                expr_string(&branch.guard),
                branch.target
            );
            if !branch.actions.is_empty() {
                let actions: Vec<String> = branch.actions.iter().map(action_string).collect();
                let _ = write!(out, " do {}", actions.join(", "));
            }
            out.push('\n');
        }
        indent(out, level + 1);
        out.push_str("}\n");
    }
    for sub in &machine.submachines {
        write_machine(out, sub, level + 1);
    }
    indent(out, level);
    out.push_str("}\n");
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}

fn value_string(v: &Value) -> String {
    match v {
        Value::Str(s) => format!("\"{}\"", escape(s)),
        Value::Int(i) => i.to_string(),
        Value::Bool(b) => b.to_string(),
    }
}

fn record_string(record: &Record) -> String {
    let fields: Vec<String> = record
        .iter()
        .map(|(k, v)| format!("{k}: {}", value_string(v)))
        .collect();
    format!("{{{}}}", fields.join(", "))
}

fn record_list_string(rows: &[Record]) -> String {
    let items: Vec<String> = rows.iter().map(record_string).collect();
    format!("[{}]", items.join(", "))
}

fn record_expr_string(record: &RecordExpr) -> String {
    let fields: Vec<String> = record
        .iter()
        .map(|(k, v)| format!("{k}: {}", expr_string(v)))
        .collect();
    format!("{{{}}}", fields.join(", "))
}

pub(crate) fn action_string(action: &Action) -> String {
    match action {
        Action::Incr { counter } => format!("incr {counter}"),
        Action::Insert { table, record } => {
            format!("insert {table} {}", record_expr_string(record))
        }
        Action::Set { attr, value } => format!("set thing.{attr} = {}", expr_string(value)),
        Action::Drop => "drop".to_string(),
        Action::Log { message } => format!("log {}", expr_string(message)),
        Action::Nop => "nop".to_string(),
    }
}

// Precedence levels used to keep parentheses minimal: or(1) < and(2) <
// not(3) < comparison/membership(4) < primary(5).
fn prec(expr: &Expr) -> u8 {
    match expr {
        Expr::Or { .. } => 1,
        Expr::And { .. } => 2,
        Expr::Not { .. } => 3,
        Expr::Cmp { .. } | Expr::In { .. } => 4,
        Expr::Attr { .. } | Expr::Lit { .. } | Expr::Counter { .. } => 5,
    }
}

pub(crate) fn expr_string(expr: &Expr) -> String {
    expr_prec(expr, 0)
}

fn expr_prec(expr: &Expr, min: u8) -> String {
    let rendered = match expr {
        Expr::Attr { attr } => format!("thing.{attr}"),
        Expr::Lit { value } => value_string(value),
        Expr::Counter { name } => name.clone(),
        Expr::Cmp { op, lhs, rhs } => format!(
            "{} {} {}",
            expr_prec(lhs, 5),
            op.symbol(),
            expr_prec(rhs, 5)
        ),
        Expr::In { record, store } => format!("{} in {store}", record_expr_string(record)),
        Expr::And { lhs, rhs } => format!("{} and {}", expr_prec(lhs, 2), expr_prec(rhs, 3)),
        Expr::Or { lhs, rhs } => format!("{} or {}", expr_prec(lhs, 1), expr_prec(rhs, 2)),
        Expr::Not { inner } => format!("not {}", expr_prec(inner, 3)),
    };
    if prec(expr) < min {
        format!("({rendered})")
    } else {
        rendered
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;

    #[test]
    fn empty_model_canonical_form() {
        let m = Model::new("m");
        assert_eq!(serialize(&m), "model \"m\" {\n}\n");
    }

    #[test]
    fn round_trip_is_structural_identity() {
        let text = r#"
model "rt" {
  machine a {
    state counter n = 3
    state table t = [{x: 1}, {y: "s"}]
    state rules r = [{action: "deny"}]
    stage transfer t_in
    stage receive r_in
    stage process p {
      incr n
      set thing.flag = true
      when thing.x = 1 and not (thing.y = 2) -> out do log "one", nop
      when true -> out
    }
    stage release out
    flow t_in -> r_in
    flow r_in -> p
    flow p -> out
  }
  trigger a.p -> a.t_in when thing.x > 0 or n < 5 emit note {v: thing.x}
}
"#;
        let m1 = parse(text).unwrap();
        let canon = serialize(&m1);
        let m2 = parse(&canon).unwrap();
        assert_eq!(m1, m2);
        // Canonicalization is a fixpoint.
        assert_eq!(canon, serialize(&m2));
    }

    #[test]
    fn parens_are_preserved_where_they_matter() {
        let t = "model \"m\" { machine a { stage process p { when (thing.a = 1 or thing.b = 2) and thing.c = 3 -> q } stage release q flow p -> q } }";
        let m = parse(t).unwrap();
        let out = serialize(&m);
        assert!(out.contains("(thing.a = 1 or thing.b = 2) and thing.c = 3"));
        assert_eq!(parse(&out).unwrap(), m);
    }

    #[test]
    fn string_escapes_round_trip() {
        let m = parse("model \"a\\\"b\\\\c\" { }").unwrap();
        assert_eq!(m.name, "a\"b\\c");
        let out = serialize(&m);
        assert_eq!(parse(&out).unwrap().name, "a\"b\\c");
    }
}
