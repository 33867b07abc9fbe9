//! Dotted paths addressing machines and stages inside a model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A dotted address into the machine tree, e.g. `asa.ingress.arrive_wire`.
///
/// Every segment names a machine except (possibly) the last, which may name
/// a stage. Whether a path points at a machine or a stage is decided by
/// resolution against a concrete model, not by the path itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct StagePath {
    segments: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathSyntaxError {
    #[error("path is empty")]
    Empty,
    #[error("invalid path segment `{0}`")]
    BadSegment(String),
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl StagePath {
    pub fn new(segments: Vec<String>) -> Result<Self, PathSyntaxError> {
        if segments.is_empty() {
            return Err(PathSyntaxError::Empty);
        }
        for s in &segments {
            if !is_ident(s) {
                return Err(PathSyntaxError::BadSegment(s.clone()));
            }
        }
        Ok(StagePath { segments })
    }

    /// Builds a single-segment path. Panics on a non-identifier segment;
    /// intended for literals in code and tests.
    pub fn root(name: &str) -> Self {
        StagePath::new(vec![name.to_string()]).expect("valid identifier")
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn last(&self) -> &str {
        self.segments.last().expect("paths are nonempty")
    }

    /// The path without its final segment, or `None` for a root path.
    pub fn parent(&self) -> Option<StagePath> {
        if self.segments.len() <= 1 {
            None
        } else {
            Some(StagePath {
                segments: self.segments[..self.segments.len() - 1].to_vec(),
            })
        }
    }

    /// Returns a new path with `name` appended.
    pub fn child(&self, name: &str) -> StagePath {
        let mut segments = self.segments.clone();
        segments.push(name.to_string());
        StagePath { segments }
    }

    /// Joins `suffix` onto this path.
    pub fn join(&self, suffix: &StagePath) -> StagePath {
        let mut segments = self.segments.clone();
        segments.extend(suffix.segments.iter().cloned());
        StagePath { segments }
    }

    pub fn starts_with(&self, prefix: &StagePath) -> bool {
        self.segments.len() >= prefix.segments.len()
            && self.segments[..prefix.segments.len()] == prefix.segments[..]
    }
}

impl fmt::Display for StagePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.segments.join("."))
    }
}

impl FromStr for StagePath {
    type Err = PathSyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(PathSyntaxError::Empty);
        }
        StagePath::new(s.split('.').map(str::to_string).collect())
    }
}

impl Serialize for StagePath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for StagePath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
