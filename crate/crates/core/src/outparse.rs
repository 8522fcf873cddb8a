//! Deterministic parser and serializer for the structured point-list output
//! format `[(u, v, Z), ...]`.
//!
//! Parsing is total: any input yields either a `PointList` or a structured
//! error. The first well-formed bracketed list in the text is used; prose
//! around it and any later lists are ignored. Negative integers are rejected
//! at the grammar level, so a list containing them is not considered
//! well-formed and scanning continues past it.

use crate::camera::PointTarget;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no well-formed point list found in response")]
    ParseFailure,
    #[error("tuple {index} = ({u}, {v}, {z}) violates the target ranges")]
    RangeViolation {
        index: usize,
        u: u128,
        v: u128,
        z: u128,
    },
}

/// An ordered, possibly empty list of point targets.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PointList {
    pub points: Vec<PointTarget>,
}

impl PointList {
    pub fn new(points: Vec<PointTarget>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, b: u8) -> bool {
        self.skip_ws();
        if self.pos < self.bytes.len() && self.bytes[self.pos] == b {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    /// Nonnegative decimal integer; saturates far above any valid range.
    fn integer(&mut self) -> Option<u128> {
        self.skip_ws();
        let start = self.pos;
        let mut value: u128 = 0;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            value = value
                .saturating_mul(10)
                .saturating_add((self.bytes[self.pos] - b'0') as u128);
            self.pos += 1;
        }
        (self.pos > start).then_some(value)
    }

    fn tuple(&mut self) -> Option<(u128, u128, u128)> {
        if !self.eat(b'(') {
            return None;
        }
        let u = self.integer()?;
        if !self.eat(b',') {
            return None;
        }
        let v = self.integer()?;
        if !self.eat(b',') {
            return None;
        }
        let z = self.integer()?;
        self.eat(b')').then_some((u, v, z))
    }

    /// A complete bracketed list starting at the current position.
    fn list(&mut self) -> Option<Vec<(u128, u128, u128)>> {
        if !self.eat(b'[') {
            return None;
        }
        let mut tuples = Vec::new();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Some(tuples);
        }
        loop {
            tuples.push(self.tuple()?);
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                }
                Some(b']') => {
                    self.pos += 1;
                    return Some(tuples);
                }
                _ => return None,
            }
        }
    }
}

/// Extract the first well-formed point list from arbitrary model output.
///
/// A grammatically valid list whose integers fall outside the target ranges is
/// a `RangeViolation` for the whole response, not a reason to keep scanning.
pub fn parse_points(text: &str) -> Result<PointList, ParseError> {
    let bytes = text.as_bytes();
    for start in 0..bytes.len() {
        if bytes[start] != b'[' {
            continue;
        }
        let mut cursor = Cursor { bytes, pos: start };
        if let Some(tuples) = cursor.list() {
            let mut points = Vec::with_capacity(tuples.len());
            for (index, (u, v, z)) in tuples.into_iter().enumerate() {
                if u >= 1000 || v >= 1000 || z > u32::MAX as u128 {
                    return Err(ParseError::RangeViolation { index, u, v, z });
                }
                points.push(PointTarget {
                    u: u as u16,
                    v: v as u16,
                    z_mm: z as u32,
                });
            }
            return Ok(PointList { points });
        }
    }
    Err(ParseError::ParseFailure)
}

/// Canonical rendering: `[(u, v, Z), (u, v, Z)]` with a single space after commas.
pub fn serialize_points(list: &PointList) -> String {
    let body = list
        .points
        .iter()
        .map(|p| format!("({}, {}, {})", p.u, p.v, p.z_mm))
        .collect::<Vec<_>>()
        .join(", ");
    format!("[{body}]")
}
