//! The `.tm` model language: parser, canonical serializer and JSON
//! interchange.
//!
//! Grammar sketch (comments run `#` to end of line, identifiers are
//! `[a-zA-Z_][a-zA-Z0-9_]*`):
//!
//! ```text
//! model   := "model" STRING "{" item* "}"
//! item    := machine | flow | trigger
//! machine := "machine" IDENT "{" (state | stage | machine | flow)* "}"
//! state   := "state" ("counter" IDENT "=" INT
//!                    | "table" IDENT ("=" record_list)?
//!                    | "rules" IDENT "=" record_list)
//! stage   := "stage" KIND IDENT block?     KIND: create|process|release|transfer|receive
//! block   := "{" (action | branch)* "}"
//! branch  := "when" expr "->" path ("do" action ("," action)*)?
//! action  := "incr" IDENT | "insert" IDENT record
//!          | "set" "thing" "." IDENT "=" expr | "drop" | "log" expr | "nop"
//! flow    := "flow" path "->" path
//! trigger := "trigger" path "->" path ("when" expr)? ("emit" IDENT record)?
//! path    := IDENT ("." IDENT)*
//! record  := "{" (IDENT ":" expr ("," IDENT ":" expr)*)? "}"
//! expr    := or-combination of comparisons (= != < <= > >=), membership
//!            (record "in" IDENT), "not", attribute reads (thing.f),
//!            counter reads (bare IDENT) and literals
//! ```
//!
//! Both the parser and the serializer are pure functions.

mod json;
mod lexer;
mod parser;
mod printer;

pub use json::{export_json, import_json, JsonError, JSON_SCHEMA_VERSION};
pub use lexer::SourceSpan;
pub use parser::{parse, ParseDiagnostic};
pub use printer::serialize;

pub(crate) use printer::{action_string, expr_string};
