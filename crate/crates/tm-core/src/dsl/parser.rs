//! Recursive-descent parser for `.tm` model text.
//!
//! Paths written inside a machine body are resolved relative to that
//! machine first, then as absolute paths; the parsed model only ever
//! carries absolute paths. Flows declared inside machines are hoisted to
//! the model's flow list in textual order.

use std::collections::HashSet;

use serde::Serialize;

use crate::expr::{Action, CmpOp, Expr, Record, RecordExpr, ThingTemplate, Value};
use crate::model::{Branch, FlowArc, Machine, Model, Stage, StageKind, StateDecl, TriggerArc};
use crate::path::StagePath;

use super::lexer::{lex, SourceSpan, Token, TokenKind};

/// Maximum machine nesting; guards the recursive parser's stack.
const MAX_NESTING: usize = 64;
/// Maximum expression nesting.
const MAX_EXPR_DEPTH: usize = 128;
/// Diagnostics are capped; parsing stops once the list is full.
const MAX_DIAGS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParseDiagnostic {
    pub span: SourceSpan,
    pub message: String,
    /// Token descriptions that would have been accepted at `span`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub expected: Vec<String>,
}

/// Parses model text. On success the model's declaration order equals
/// textual order; on failure every diagnostic carries a source span.
pub fn parse(text: &str) -> Result<Model, Vec<ParseDiagnostic>> {
    let tokens = match lex(text) {
        Ok(tokens) => tokens,
        Err(e) => {
            return Err(vec![ParseDiagnostic {
                span: e.span,
                message: e.message,
                expected: Vec::new(),
            }])
        }
    };
    let mut parser = Parser {
        tokens,
        pos: 0,
        diags: Vec::new(),
        pending_flows: Vec::new(),
    };
    let model = parser.parse_model();
    if parser.diags.is_empty() {
        let mut model = model.expect("no diagnostics implies a model");
        absolutize_paths(&mut model, parser.pending_flows);
        Ok(model)
    } else {
        Err(parser.diags)
    }
}

struct PendingFlow {
    context: Option<StagePath>,
    src: StagePath,
    dst: StagePath,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    diags: Vec<ParseDiagnostic>,
    pending_flows: Vec<PendingFlow>,
}

impl Parser {
    fn peek(&self) -> &TokenKind {
        &self.tokens[self.pos].kind
    }

    fn peek_span(&self) -> SourceSpan {
        self.tokens[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let tok = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek(), TokenKind::Eof)
    }

    fn full(&self) -> bool {
        self.diags.len() >= MAX_DIAGS
    }

    fn error(&mut self, span: SourceSpan, message: impl Into<String>, expected: Vec<&str>) {
        if !self.full() {
            self.diags.push(ParseDiagnostic {
                span,
                message: message.into(),
                expected: expected.into_iter().map(str::to_string).collect(),
            });
        }
    }

    fn error_here(&mut self, message: impl Into<String>, expected: Vec<&str>) {
        let span = self.peek_span();
        let found = self.peek().describe();
        let message = format!("{}, found {found}", message.into());
        self.error(span, message, expected);
    }

    /// Is the current token the identifier `word`?
    fn at_word(&self, word: &str) -> bool {
        matches!(self.peek(), TokenKind::Ident(s) if s == word)
    }

    fn eat_word(&mut self, word: &str) -> bool {
        if self.at_word(word) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, word: &str) -> bool {
        if self.eat_word(word) {
            true
        } else {
            self.error_here(format!("expected `{word}`"), vec![word]);
            false
        }
    }

    fn expect_ident(&mut self, what: &str) -> Option<String> {
        if let TokenKind::Ident(s) = self.peek() {
            let s = s.clone();
            self.bump();
            Some(s)
        } else {
            self.error_here(format!("expected {what}"), vec!["identifier"]);
            None
        }
    }

    fn expect_token(&mut self, kind: TokenKind, what: &str) -> bool {
        if self.peek() == &kind {
            self.bump();
            true
        } else {
            self.error_here(format!("expected {what}"), vec![what]);
            false
        }
    }

    /// Skips tokens until a plausible statement start. Brace depth is
    /// tracked so that a closing brace of the current block is left for
    /// the caller.
    fn sync(&mut self, starters: &[&str]) {
        let mut depth = 0usize;
        loop {
            match self.peek() {
                TokenKind::Eof => return,
                TokenKind::LBrace => {
                    depth += 1;
                    self.bump();
                }
                TokenKind::RBrace => {
                    if depth == 0 {
                        return;
                    }
                    depth -= 1;
                    self.bump();
                }
                TokenKind::Ident(s) if depth == 0 && starters.iter().any(|w| w == s) => return,
                _ => {
                    self.bump();
                }
            }
        }
    }

    fn parse_model(&mut self) -> Option<Model> {
        self.expect_word("model");
        let name = match self.peek() {
            TokenKind::Str(s) => {
                let s = s.clone();
                self.bump();
                s
            }
            _ => {
                self.error_here("expected model name string", vec!["string literal"]);
                String::new()
            }
        };
        let mut model = Model::new(&name);
        if !self.expect_token(TokenKind::LBrace, "`{`") {
            return None;
        }
        let mut names: HashSet<String> = HashSet::new();
        loop {
            if self.full() {
                return None;
            }
            match self.peek().clone() {
                TokenKind::RBrace => {
                    self.bump();
                    break;
                }
                TokenKind::Eof => {
                    self.error_here("expected `}` closing the model", vec!["}"]);
                    return None;
                }
                TokenKind::Ident(word) => match word.as_str() {
                    "machine" => {
                        if let Some(machine) = self.parse_machine(None, 1) {
                            if !names.insert(machine.name.clone()) {
                                let span = self.peek_span();
                                self.error(
                                    span,
                                    format!("duplicate machine name `{}`", machine.name),
                                    vec![],
                                );
                            }
                            model.machines.push(machine);
                        } else {
                            self.sync(&["machine", "flow", "trigger"]);
                        }
                    }
                    "flow" => {
                        if !self.parse_flow(None) {
                            self.sync(&["machine", "flow", "trigger"]);
                        }
                    }
                    "trigger" => match self.parse_trigger() {
                        Some(t) => model.triggers.push(t),
                        None => self.sync(&["machine", "flow", "trigger"]),
                    },
                    _ => {
                        self.error_here(
                            "expected `machine`, `flow` or `trigger`",
                            vec!["machine", "flow", "trigger"],
                        );
                        self.bump();
                        self.sync(&["machine", "flow", "trigger"]);
                    }
                },
                _ => {
                    self.error_here(
                        "expected `machine`, `flow` or `trigger`",
                        vec!["machine", "flow", "trigger"],
                    );
                    self.bump();
                    self.sync(&["machine", "flow", "trigger"]);
                }
            }
        }
        if !self.at_eof() {
            self.error_here("expected end of input after model", vec!["end of input"]);
        }
        Some(model)
    }

    /// `parent` is the absolute path of the enclosing machine, if any.
    fn parse_machine(&mut self, parent: Option<&StagePath>, depth: usize) -> Option<Machine> {
        self.expect_word("machine");
        let name_span = self.peek_span();
        let name = self.expect_ident("machine name")?;
        if depth > MAX_NESTING {
            self.error(name_span, "machine nesting too deep", vec![]);
            return None;
        }
        let path = match parent {
            Some(p) => p.child(&name),
            None => StagePath::root(&name),
        };
        let mut machine = Machine::new(&name);
        if !self.expect_token(TokenKind::LBrace, "`{`") {
            return None;
        }
        // Stages and submachines share a namespace: both are path segments.
        let mut member_names: HashSet<String> = HashSet::new();
        let mut state_names: HashSet<String> = HashSet::new();
        loop {
            if self.full() {
                return None;
            }
            match self.peek().clone() {
                TokenKind::RBrace => {
                    self.bump();
                    break;
                }
                TokenKind::Eof => {
                    self.error_here(
                        &format!("expected `}}` closing machine `{name}`"),
                        vec!["}"],
                    );
                    return None;
                }
                TokenKind::Ident(word) => match word.as_str() {
                    "state" => {
                        let span = self.peek_span();
                        match self.parse_state() {
                            Some(decl) => {
                                if !state_names.insert(decl.name().to_string()) {
                                    self.error(
                                        span,
                                        format!("duplicate state name `{}`", decl.name()),
                                        vec![],
                                    );
                                }
                                machine.state.push(decl);
                            }
                            None => self.sync(&["state", "stage", "machine", "flow"]),
                        }
                    }
                    "stage" => {
                        let span = self.peek_span();
                        match self.parse_stage() {
                            Some(stage) => {
                                if !member_names.insert(stage.name.clone()) {
                                    self.error(
                                        span,
                                        format!("duplicate name `{}` in machine `{name}`", stage.name),
                                        vec![],
                                    );
                                }
                                machine.stages.push(stage);
                            }
                            None => self.sync(&["state", "stage", "machine", "flow"]),
                        }
                    }
                    "machine" => {
                        let span = self.peek_span();
                        match self.parse_machine(Some(&path), depth + 1) {
                            Some(sub) => {
                                if !member_names.insert(sub.name.clone()) {
                                    self.error(
                                        span,
                                        format!("duplicate name `{}` in machine `{name}`", sub.name),
                                        vec![],
                                    );
                                }
                                machine.submachines.push(sub);
                            }
                            None => self.sync(&["state", "stage", "machine", "flow"]),
                        }
                    }
                    "flow" => {
                        if !self.parse_flow(Some(&path)) {
                            self.sync(&["state", "stage", "machine", "flow"]);
                        }
                    }
                    _ => {
                        self.error_here(
                            "expected `state`, `stage`, `machine` or `flow`",
                            vec!["state", "stage", "machine", "flow"],
                        );
                        self.bump();
                        self.sync(&["state", "stage", "machine", "flow"]);
                    }
                },
                _ => {
                    self.error_here(
                        "expected `state`, `stage`, `machine` or `flow`",
                        vec!["state", "stage", "machine", "flow"],
                    );
                    self.bump();
                    self.sync(&["state", "stage", "machine", "flow"]);
                }
            }
        }
        Some(machine)
    }

    fn parse_state(&mut self) -> Option<StateDecl> {
        self.expect_word("state");
        let kind_span = self.peek_span();
        let kind = self.expect_ident("state kind")?;
        match kind.as_str() {
            "counter" => {
                let name = self.expect_ident("counter name")?;
                if !self.expect_token(TokenKind::Eq, "`=`") {
                    return None;
                }
                if let TokenKind::Int(v) = *self.peek() {
                    self.bump();
                    Some(StateDecl::Counter { name, init: v })
                } else {
                    self.error_here("expected integer initial value", vec!["integer literal"]);
                    None
                }
            }
            "table" => {
                let name = self.expect_ident("table name")?;
                let rows = if self.peek() == &TokenKind::Eq {
                    self.bump();
                    self.parse_record_list()?
                } else {
                    Vec::new()
                };
                Some(StateDecl::Table { name, rows })
            }
            "rules" => {
                let name = self.expect_ident("rules name")?;
                if !self.expect_token(TokenKind::Eq, "`=`") {
                    return None;
                }
                let rows = self.parse_record_list()?;
                Some(StateDecl::Rules { name, rows })
            }
            other => {
                self.error(
                    kind_span,
                    format!("unknown state kind `{other}`"),
                    vec!["counter", "table", "rules"],
                );
                None
            }
        }
    }

    fn parse_record_list(&mut self) -> Option<Vec<Record>> {
        if !self.expect_token(TokenKind::LBracket, "`[`") {
            return None;
        }
        let mut rows = Vec::new();
        if self.peek() == &TokenKind::RBracket {
            self.bump();
            return Some(rows);
        }
        loop {
            let span = self.peek_span();
            let record = self.parse_record_expr()?;
            rows.push(self.literal_record(record, span)?);
            match self.peek() {
                TokenKind::Comma => {
                    self.bump();
                }
                TokenKind::RBracket => {
                    self.bump();
                    return Some(rows);
                }
                _ => {
                    self.error_here("expected `,` or `]`", vec![",", "]"]);
                    return None;
                }
            }
        }
    }

    /// State seed rows must be fully literal.
    fn literal_record(&mut self, record: RecordExpr, span: SourceSpan) -> Option<Record> {
        let mut out = Record::new();
        for (field, expr) in record {
            match expr {
                Expr::Lit { value } => {
                    out.insert(field, value);
                }
                _ => {
                    self.error(
                        span,
                        format!("state record field `{field}` must be a literal value"),
                        vec![],
                    );
                    return None;
                }
            }
        }
        Some(out)
    }

    fn parse_record_expr(&mut self) -> Option<RecordExpr> {
        if !self.expect_token(TokenKind::LBrace, "`{`") {
            return None;
        }
        let mut record = RecordExpr::new();
        if self.peek() == &TokenKind::RBrace {
            self.bump();
            return Some(record);
        }
        loop {
            let field_span = self.peek_span();
            let field = self.expect_ident("record field name")?;
            if !self.expect_token(TokenKind::Colon, "`:`") {
                return None;
            }
            let value = self.parse_expr(0)?;
            if record.insert(field.clone(), value).is_some() {
                self.error(
                    field_span,
                    format!("duplicate record field `{field}`"),
                    vec![],
                );
            }
            match self.peek() {
                TokenKind::Comma => {
                    self.bump();
                }
                TokenKind::RBrace => {
                    self.bump();
                    return Some(record);
                }
                _ => {
                    self.error_here("expected `,` or `}`", vec![",", "}"]);
                    return None;
                }
            }
        }
    }

    fn parse_stage(&mut self) -> Option<Stage> {
        self.expect_word("stage");
        let kind_span = self.peek_span();
        let kind_word = self.expect_ident("stage kind")?;
        let kind = match StageKind::from_name(&kind_word) {
            Some(k) => k,
            None => {
                self.error(
                    kind_span,
                    format!("unknown stage kind `{kind_word}`"),
                    vec!["create", "process", "release", "transfer", "receive"],
                );
                return None;
            }
        };
        let name = self.expect_ident("stage name")?;
        let mut stage = Stage::new(kind, &name);
        if self.peek() != &TokenKind::LBrace {
            return Some(stage);
        }
        self.bump();
        loop {
            if self.full() {
                return None;
            }
            match self.peek().clone() {
                TokenKind::RBrace => {
                    self.bump();
                    return Some(stage);
                }
                TokenKind::Eof => {
                    self.error_here(
                        &format!("expected `}}` closing stage `{name}`"),
                        vec!["}"],
                    );
                    return None;
                }
                TokenKind::Ident(word) if word == "when" => match self.parse_branch() {
                    Some(branch) => stage.branches.push(branch),
                    None => return None,
                },
                _ => match self.parse_action() {
                    Some(action) => stage.actions.push(action),
                    None => return None,
                },
            }
        }
    }

    fn parse_branch(&mut self) -> Option<Branch> {
        self.expect_word("when");
        let guard = self.parse_expr(0)?;
        if !self.expect_token(TokenKind::Arrow, "`->`") {
            return None;
        }
        let target = self.parse_path()?;
        let mut actions = Vec::new();
        if self.eat_word("do") {
            loop {
                actions.push(self.parse_action()?);
                if self.peek() == &TokenKind::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        Some(Branch {
            guard,
            target,
            actions,
        })
    }

    fn parse_action(&mut self) -> Option<Action> {
        let span = self.peek_span();
        let word = match self.peek() {
            TokenKind::Ident(s) => s.clone(),
            _ => {
                self.error_here(
                    "expected an action or `when`",
                    vec!["incr", "insert", "set", "drop", "log", "nop", "when"],
                );
                return None;
            }
        };
        match word.as_str() {
            "incr" => {
                self.bump();
                let counter = self.expect_ident("counter name")?;
                Some(Action::Incr { counter })
            }
            "insert" => {
                self.bump();
                let table = self.expect_ident("table name")?;
                let record = self.parse_record_expr()?;
                Some(Action::Insert { table, record })
            }
            "set" => {
                self.bump();
                self.expect_word("thing");
                if !self.expect_token(TokenKind::Dot, "`.`") {
                    return None;
                }
                let attr = self.expect_ident("attribute name")?;
                if !self.expect_token(TokenKind::Eq, "`=`") {
                    return None;
                }
                let value = self.parse_expr(0)?;
                Some(Action::Set { attr, value })
            }
            "drop" => {
                self.bump();
                Some(Action::Drop)
            }
            "log" => {
                self.bump();
                let message = self.parse_expr(0)?;
                Some(Action::Log { message })
            }
            "nop" => {
                self.bump();
                Some(Action::Nop)
            }
            other => {
                self.error(
                    span,
                    format!("unknown action `{other}`"),
                    vec!["incr", "insert", "set", "drop", "log", "nop", "when"],
                );
                None
            }
        }
    }

    fn parse_flow(&mut self, context: Option<&StagePath>) -> bool {
        self.expect_word("flow");
        let Some(src) = self.parse_path() else {
            return false;
        };
        if !self.expect_token(TokenKind::Arrow, "`->`") {
            return false;
        }
        let Some(dst) = self.parse_path() else {
            return false;
        };
        self.pending_flows.push(PendingFlow {
            context: context.cloned(),
            src,
            dst,
        });
        true
    }

    fn parse_trigger(&mut self) -> Option<TriggerArc> {
        self.expect_word("trigger");
        let src = self.parse_path()?;
        if !self.expect_token(TokenKind::Arrow, "`->`") {
            return None;
        }
        let dst = self.parse_path()?;
        let guard = if self.eat_word("when") {
            Some(self.parse_expr(0)?)
        } else {
            None
        };
        let template = if self.eat_word("emit") {
            let thing_type = self.expect_ident("thing type")?;
            let attrs = self.parse_record_expr()?;
            Some(ThingTemplate { thing_type, attrs })
        } else {
            None
        };
        Some(TriggerArc {
            src,
            dst,
            guard,
            template,
        })
    }

    fn parse_path(&mut self) -> Option<StagePath> {
        let first = self.expect_ident("a path")?;
        let mut segments = vec![first];
        while self.peek() == &TokenKind::Dot {
            self.bump();
            segments.push(self.expect_ident("a path segment")?);
        }
        Some(StagePath::new(segments).expect("identifier segments"))
    }

    // Expressions. Precedence: or < and < not < comparison/membership.

    fn parse_expr(&mut self, depth: usize) -> Option<Expr> {
        if depth > MAX_EXPR_DEPTH {
            let span = self.peek_span();
            self.error(span, "expression nesting too deep", vec![]);
            return None;
        }
        let mut lhs = self.parse_and(depth + 1)?;
        while self.at_word("or") {
            self.bump();
            let rhs = self.parse_and(depth + 1)?;
            self.check_bool_operand("or", &lhs);
            self.check_bool_operand("or", &rhs);
            lhs = Expr::Or {
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Some(lhs)
    }

    fn parse_and(&mut self, depth: usize) -> Option<Expr> {
        let mut lhs = self.parse_not(depth + 1)?;
        while self.at_word("and") {
            self.bump();
            let rhs = self.parse_not(depth + 1)?;
            self.check_bool_operand("and", &lhs);
            self.check_bool_operand("and", &rhs);
            lhs = Expr::And {
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Some(lhs)
    }

    fn parse_not(&mut self, depth: usize) -> Option<Expr> {
        if depth > MAX_EXPR_DEPTH {
            let span = self.peek_span();
            self.error(span, "expression nesting too deep", vec![]);
            return None;
        }
        if self.at_word("not") {
            self.bump();
            let inner = self.parse_not(depth + 1)?;
            self.check_bool_operand("not", &inner);
            return Some(Expr::Not {
                inner: Box::new(inner),
            });
        }
        self.parse_cmp(depth + 1)
    }

    fn parse_cmp(&mut self, depth: usize) -> Option<Expr> {
        // A record operand is only legal as the left side of `in`.
        if self.peek() == &TokenKind::LBrace {
            let record = self.parse_record_expr()?;
            if !self.expect_word("in") {
                return None;
            }
            let store = self.expect_ident("store name")?;
            return Some(Expr::In { record, store });
        }
        let lhs = self.parse_primary(depth + 1)?;
        let op = match self.peek() {
            TokenKind::Eq => CmpOp::Eq,
            TokenKind::Ne => CmpOp::Ne,
            TokenKind::Lt => CmpOp::Lt,
            TokenKind::Le => CmpOp::Le,
            TokenKind::Gt => CmpOp::Gt,
            TokenKind::Ge => CmpOp::Ge,
            TokenKind::Ident(s) if s == "in" => {
                let span = self.peek_span();
                self.error(
                    span,
                    "membership requires a record on the left, e.g. `{f: thing.f} in store`",
                    vec![],
                );
                return None;
            }
            _ => return Some(lhs),
        };
        let op_span = self.peek_span();
        self.bump();
        let rhs = self.parse_primary(depth + 1)?;
        self.check_cmp(op, &lhs, &rhs, op_span);
        Some(Expr::Cmp {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        })
    }

    fn parse_primary(&mut self, depth: usize) -> Option<Expr> {
        match self.peek().clone() {
            TokenKind::Int(v) => {
                self.bump();
                Some(Expr::Lit {
                    value: Value::Int(v),
                })
            }
            TokenKind::Str(s) => {
                self.bump();
                Some(Expr::Lit {
                    value: Value::Str(s),
                })
            }
            TokenKind::LParen => {
                self.bump();
                let inner = self.parse_expr(depth + 1)?;
                if !self.expect_token(TokenKind::RParen, "`)`") {
                    return None;
                }
                Some(inner)
            }
            TokenKind::Ident(word) => match word.as_str() {
                "true" | "false" => {
                    self.bump();
                    Some(Expr::lit_bool(word == "true"))
                }
                "thing" => {
                    self.bump();
                    if !self.expect_token(TokenKind::Dot, "`.`") {
                        return None;
                    }
                    let attr = self.expect_ident("attribute name")?;
                    Some(Expr::Attr { attr })
                }
                _ => {
                    self.bump();
                    Some(Expr::Counter { name: word })
                }
            },
            _ => {
                self.error_here(
                    "expected an expression",
                    vec!["literal", "thing.<attr>", "counter name", "(", "{"],
                );
                None
            }
        }
    }

    // Static type checks: every expression whose type is statically known
    // must be used consistently. Thing attributes are unknown until run
    // time and unify with anything.

    fn check_bool_operand(&mut self, op: &str, expr: &Expr) {
        if let Some(t) = static_type(expr) {
            if t != "boolean" {
                let span = self.peek_span();
                self.error(span, format!("`{op}` requires boolean operands, got {t}"), vec![]);
            }
        }
    }

    fn check_cmp(&mut self, op: CmpOp, lhs: &Expr, rhs: &Expr, span: SourceSpan) {
        let lt = static_type(lhs);
        let rt = static_type(rhs);
        if let (Some(a), Some(b)) = (lt, rt) {
            if a != b {
                self.error(span, format!("cannot compare {a} with {b}"), vec![]);
                return;
            }
        }
        if op.is_ordering() {
            for t in [lt, rt].into_iter().flatten() {
                if t != "integer" {
                    self.error(
                        span,
                        format!("`{}` orders integers, got {t}", op.symbol()),
                        vec![],
                    );
                    return;
                }
            }
        }
    }
}

fn static_type(expr: &Expr) -> Option<&'static str> {
    match expr {
        Expr::Attr { .. } => None,
        Expr::Lit { value } => Some(value.type_name()),
        Expr::Cmp { .. } | Expr::In { .. } | Expr::And { .. } | Expr::Or { .. } | Expr::Not { .. } => {
            Some("boolean")
        }
        Expr::Counter { .. } => Some("integer"),
    }
}

/// Rewrites every relative path to its absolute form: a path written inside
/// a machine resolves against that machine first, then against the model
/// root. Unresolvable paths keep the machine-relative reading so that the
/// validator points at the most likely intent.
fn absolutize_paths(model: &mut Model, pending: Vec<PendingFlow>) {
    let mut stage_paths: HashSet<String> = HashSet::new();
    fn collect(machine: &Machine, path: &StagePath, out: &mut HashSet<String>) {
        for stage in &machine.stages {
            out.insert(path.child(&stage.name).to_string());
        }
        for sub in &machine.submachines {
            collect(sub, &path.child(&sub.name), out);
        }
    }
    for machine in &model.machines {
        collect(machine, &StagePath::root(&machine.name), &mut stage_paths);
    }

    let absolutize = |raw: &StagePath, context: Option<&StagePath>| -> StagePath {
        match context {
            None => raw.clone(),
            Some(ctx) => {
                let joined = ctx.join(raw);
                if stage_paths.contains(&joined.to_string()) {
                    joined
                } else if stage_paths.contains(&raw.to_string()) {
                    raw.clone()
                } else {
                    joined
                }
            }
        }
    };

    for flow in pending {
        let src = absolutize(&flow.src, flow.context.as_ref());
        let dst = absolutize(&flow.dst, flow.context.as_ref());
        model.flows.push(FlowArc { src, dst });
    }

    fn fix_branches(
        machine: &mut Machine,
        path: &StagePath,
        absolutize: &dyn Fn(&StagePath, Option<&StagePath>) -> StagePath,
    ) {
        for stage in &mut machine.stages {
            for branch in &mut stage.branches {
                branch.target = absolutize(&branch.target, Some(path));
            }
        }
        for sub in &mut machine.submachines {
            let sub_path = path.child(&sub.name);
            fix_branches(sub, &sub_path, absolutize);
        }
    }
    for machine in &mut model.machines {
        let path = StagePath::root(&machine.name);
        fix_branches(machine, &path, &absolutize);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_model() {
        let m = parse("model \"m\" { }").unwrap();
        assert_eq!(m.name, "m");
        assert!(m.machines.is_empty());
        assert!(m.flows.is_empty());
    }

    #[test]
    fn generic_five_stage_machine() {
        let text = r#"
model "generic" {
  machine tm {
    stage transfer transfer_in
    stage receive receive
    stage process process
    stage create create
    stage release release
    flow transfer_in -> receive
    flow receive -> process
    flow receive -> release
    flow process -> release
    flow process -> create
    flow create -> process
    flow create -> release
    flow release -> transfer_in
  }
}
"#;
        let m = parse(text).unwrap();
        assert_eq!(m.machines.len(), 1);
        assert_eq!(m.machines[0].stages.len(), 5);
        assert_eq!(m.flows.len(), 8);
        // Nested flows are hoisted with absolute paths.
        assert_eq!(m.flows[0].src.to_string(), "tm.transfer_in");
        assert_eq!(m.flows[7].dst.to_string(), "tm.transfer_in");
    }

    #[test]
    fn unknown_stage_kind_is_rejected() {
        let err = parse("model \"m\" { machine a { stage flip x } }").unwrap_err();
        assert!(err[0].message.contains("unknown stage kind `flip`"));
        assert!(err[0].expected.contains(&"create".to_string()));
        assert_eq!(err[0].span.line, 1);
    }

    #[test]
    fn branch_and_actions_parse() {
        let text = r#"
model "m" {
  machine a {
    state counter hits = 0
    state rules acl = [{dst: "web", action: "permit"}, {action: "deny"}]
    stage process check {
      nop
      when {dst: thing.dst} in acl -> ok do incr hits
      when true -> bad do log "deny", drop
    }
    stage release ok
    stage release bad
    flow check -> ok
    flow check -> bad
  }
}
"#;
        let m = parse(text).unwrap();
        let stage = &m.machines[0].stages[0];
        assert_eq!(stage.actions, vec![Action::Nop]);
        assert_eq!(stage.branches.len(), 2);
        assert_eq!(stage.branches[0].target.to_string(), "a.ok");
        assert!(stage.branches[1].guard.is_lit_true());
        assert_eq!(stage.branches[1].actions.len(), 2);
    }

    #[test]
    fn duplicate_names_are_diagnosed() {
        let err = parse("model \"m\" { machine a { stage process x stage release x } }")
            .unwrap_err();
        assert!(err.iter().any(|d| d.message.contains("duplicate name `x`")));
    }

    #[test]
    fn type_mismatch_is_diagnosed() {
        let err = parse(
            "model \"m\" { machine a { stage process p { when 1 = \"x\" -> q } stage release q flow p -> q } }",
        )
        .unwrap_err();
        assert!(err.iter().any(|d| d.message.contains("cannot compare integer with string")));

        let err = parse(
            "model \"m\" { machine a { stage process p { when \"a\" < \"b\" -> q } stage release q flow p -> q } }",
        )
        .unwrap_err();
        assert!(err.iter().any(|d| d.message.contains("orders integers")));

        let err = parse(
            "model \"m\" { machine a { stage process p { when 1 and true -> q } stage release q flow p -> q } }",
        )
        .unwrap_err();
        assert!(err.iter().any(|d| d.message.contains("requires boolean operands")));
    }

    #[test]
    fn triggers_parse_with_guard_and_template() {
        let text = r#"
model "m" {
  machine a {
    stage process p
    stage create born
  }
  trigger a.p -> a.born when not (thing.ok = "yes") emit log_entry {src: thing.src, n: 1}
}
"#;
        let m = parse(text).unwrap();
        assert_eq!(m.triggers.len(), 1);
        let t = &m.triggers[0];
        assert!(t.guard.is_some());
        let template = t.template.as_ref().unwrap();
        assert_eq!(template.thing_type, "log_entry");
        assert_eq!(template.attrs.len(), 2);
    }

    #[test]
    fn diagnostics_never_panic_on_garbage() {
        for text in ["", "model", "model \"m\"", "model \"m\" {", "}{", "model \"m\" { machine }"] {
            let _ = parse(text);
        }
    }

    #[test]
    fn state_rows_must_be_literal() {
        let err =
            parse("model \"m\" { machine a { state table t = [{x: thing.y}] } }").unwrap_err();
        assert!(err[0].message.contains("must be a literal"));
    }
}
