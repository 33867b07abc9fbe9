//! Guard expressions, action descriptions and thing templates.
//!
//! Expressions are evaluated by the simulator against a flowing thing and
//! the state stores in scope; here they are plain data. Values come in three
//! types only: strings, integers and booleans.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A runtime value. Everything a thing attribute, store cell or literal can
/// hold.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "boolean",
            Value::Int(_) => "integer",
            Value::Str(_) => "string",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

/// An attribute record: field name to value, canonically key-sorted.
pub type Record = BTreeMap<String, Value>;

/// An attribute record whose field values are still expressions. Used in
/// membership tests, `insert` actions and trigger templates.
pub type RecordExpr = BTreeMap<String, Expr>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    /// Whether the operator orders its operands (integers only) rather than
    /// testing equality.
    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

/// A guard expression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expr {
    /// `thing.<attr>` — attribute of the flowing thing.
    Attr { attr: String },
    /// Literal string, integer or boolean.
    Lit { value: Value },
    /// Binary comparison.
    Cmp {
        op: CmpOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    /// `{f: e, ...} in store` — membership in a table or rules store.
    In { record: RecordExpr, store: String },
    And { lhs: Box<Expr>, rhs: Box<Expr> },
    Or { lhs: Box<Expr>, rhs: Box<Expr> },
    Not { inner: Box<Expr> },
    /// Bare identifier — reads a counter store.
    Counter { name: String },
}

impl Expr {
    pub fn lit_bool(b: bool) -> Expr {
        Expr::Lit {
            value: Value::Bool(b),
        }
    }

    pub fn is_lit_true(&self) -> bool {
        matches!(
            self,
            Expr::Lit {
                value: Value::Bool(true)
            }
        )
    }
}

/// A side-effect description attached to a stage or branch. Applying these
/// is the simulator's job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    /// Increment a counter store by one.
    Incr { counter: String },
    /// Insert a record into a table store (set semantics).
    Insert { table: String, record: RecordExpr },
    /// Overwrite an attribute of the flowing thing.
    Set { attr: String, value: Expr },
    /// Consume the flowing thing at the current stage.
    Drop,
    /// Append a log event to the trace.
    Log { message: Expr },
    /// Explicit no-op.
    Nop,
}

/// Blueprint for the thing a trigger instantiates at its destination.
/// Attribute initializers are evaluated against the triggering thing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThingTemplate {
    pub thing_type: String,
    pub attrs: RecordExpr,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_ordering_and_display() {
        assert_eq!(Value::Int(3).to_string(), "3");
        assert_eq!(Value::Str("x".into()).to_string(), "x");
        assert_eq!(Value::Bool(true).to_string(), "true");
    }

    #[test]
    fn literal_true_detection() {
        assert!(Expr::lit_bool(true).is_lit_true());
        assert!(!Expr::lit_bool(false).is_lit_true());
        assert!(!Expr::Counter { name: "x".into() }.is_lit_true());
    }

    #[test]
    fn value_json_is_untagged() {
        assert_eq!(serde_json::to_string(&Value::Int(5)).unwrap(), "5");
        assert_eq!(serde_json::to_string(&Value::Bool(false)).unwrap(), "false");
        assert_eq!(
            serde_json::to_string(&Value::Str("syn".into())).unwrap(),
            "\"syn\""
        );
        let v: Value = serde_json::from_str("true").unwrap();
        assert_eq!(v, Value::Bool(true));
        let v: Value = serde_json::from_str("12").unwrap();
        assert_eq!(v, Value::Int(12));
    }
}
