//! Serialized stencil cache keyed by canonical patch configuration.
//!
//! Each record stores the solved stencil for one configuration class: either
//! the coefficients of a half-edge 1-form row (one weight per local coarse
//! edge of the patch) or the four 2-form rows of a face system (one weight
//! per local coarse face, for the three corner children and the center
//! child). Keys are the canonical patch encodings, so records transfer to any
//! isomorphic configuration by the stored labeling. The committed table holds
//! the classes met on the benchmark meshes whose weights are exactly
//! rational; classes with symbolic Loop weights are solved at runtime and
//! cached in memory.
//!
//! # Expected invariants
//! - Parsing then serializing a table reproduces it byte for byte (records
//!   are kept sorted by key).
//! - Builtin records equal what the constraint solver produces for the same
//!   key; external tables are trusted as-is and corruption surfaces in the
//!   commutation checks of `verify`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::sync::OnceLock;

use super::symval::SymVal;

/// One solved configuration class.
#[derive(Debug, Clone, PartialEq)]
pub enum StencilRecord {
    /// Half-edge 1-form row: weights per local coarse edge.
    Half(Vec<(usize, SymVal)>),
    /// Face-system 2-form rows: weights per local coarse face, for children
    /// `[corner0, corner1, corner2, center]`.
    Face([Vec<(usize, SymVal)>; 4]),
}

/// Stencil records keyed by canonical patch encoding.
#[derive(Debug, Clone, Default)]
pub struct StencilTable {
    records: BTreeMap<String, StencilRecord>,
    /// External tables bypass the builtin-consistency expectations; their
    /// entries are trusted at build time.
    pub external: bool,
}

const HEADER: &str = "# subdforms stencil table v1";

impl StencilTable {
    pub fn empty() -> Self {
        StencilTable::default()
    }

    /// The table compiled into the crate.
    pub fn builtin() -> StencilTable {
        static BUILTIN: OnceLock<StencilTable> = OnceLock::new();
        BUILTIN
            .get_or_init(|| {
                StencilTable::parse(include_str!("wang_table.txt"))
                    .expect("builtin stencil table parses")
            })
            .clone()
    }

    /// Loads an external table; its records override builtin solving and are
    /// trusted without re-derivation.
    pub fn from_path(path: &Path) -> io::Result<StencilTable> {
        let text = std::fs::read_to_string(path)?;
        let mut table = StencilTable::parse(&text)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        table.external = true;
        Ok(table)
    }

    pub fn parse(text: &str) -> Result<StencilTable, String> {
        let mut records = BTreeMap::new();
        let mut current: Option<(String, StencilRecord)> = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: &str| format!("line {}: {}", ln + 1, m);
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("half") => {
                    if let Some((k, r)) = current.take() {
                        records.insert(k, r);
                    }
                    let key = parts.next().ok_or_else(|| err("missing key"))?;
                    current = Some((key.to_string(), StencilRecord::Half(Vec::new())));
                }
                Some("face") => {
                    if let Some((k, r)) = current.take() {
                        records.insert(k, r);
                    }
                    let key = parts.next().ok_or_else(|| err("missing key"))?;
                    current = Some((
                        key.to_string(),
                        StencilRecord::Face([Vec::new(), Vec::new(), Vec::new(), Vec::new()]),
                    ));
                }
                Some("e") => {
                    let le: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err("bad edge index"))?;
                    let val = parts
                        .next()
                        .and_then(SymVal::from_table_string)
                        .ok_or_else(|| err("bad value"))?;
                    match current.as_mut() {
                        Some((_, StencilRecord::Half(rows))) => rows.push((le, val)),
                        _ => return Err(err("edge entry outside half record")),
                    }
                }
                Some("w") => {
                    let t: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err("bad child index"))?;
                    let lf: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err("bad face index"))?;
                    let val = parts
                        .next()
                        .and_then(SymVal::from_table_string)
                        .ok_or_else(|| err("bad value"))?;
                    if t > 3 {
                        return Err(err("child index out of range"));
                    }
                    match current.as_mut() {
                        Some((_, StencilRecord::Face(rows))) => rows[t].push((lf, val)),
                        _ => return Err(err("weight entry outside face record")),
                    }
                }
                Some(tok) => return Err(err(&format!("unknown token `{tok}`"))),
                None => {}
            }
        }
        if let Some((k, r)) = current.take() {
            records.insert(k, r);
        }
        Ok(StencilTable {
            records,
            external: false,
        })
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for (key, rec) in &self.records {
            match rec {
                StencilRecord::Half(rows) => {
                    let _ = writeln!(out, "half {key}");
                    for (le, v) in rows {
                        let _ = writeln!(out, "e {le} {}", v.to_table_string());
                    }
                }
                StencilRecord::Face(rows) => {
                    let _ = writeln!(out, "face {key}");
                    for (t, row) in rows.iter().enumerate() {
                        for (lf, v) in row {
                            let _ = writeln!(out, "w {t} {lf} {}", v.to_table_string());
                        }
                    }
                }
            }
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<&StencilRecord> {
        self.records.get(key)
    }

    pub fn insert(&mut self, key: String, record: StencilRecord) {
        self.records.insert(key, record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records whose weights are all exactly rational (the only ones the
    /// committed table ships).
    pub fn rational_subset(&self) -> StencilTable {
        let records = self
            .records
            .iter()
            .filter(|(_, rec)| match rec {
                StencilRecord::Half(rows) => rows.iter().all(|(_, v)| v.is_rational()),
                StencilRecord::Face(rows) => rows
                    .iter()
                    .all(|row| row.iter().all(|(_, v)| v.is_rational())),
            })
            .map(|(k, r)| (k.clone(), r.clone()))
            .collect();
        StencilTable {
            records,
            external: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let mut t = StencilTable::empty();
        t.insert(
            "half|0=i6,1=i6,2=i6:III".into(),
            StencilRecord::Half(vec![
                (0, SymVal::from_ratio(3, 8)),
                (2, SymVal::from_ratio(-1, 8).add(&SymVal::beta_term(5, num::BigRational::new(1.into(), 2.into())))),
            ]),
        );
        t.insert(
            "face|0=i6,1=i6,2=i6:III".into(),
            StencilRecord::Face([
                vec![(0, SymVal::from_ratio(1, 1))],
                vec![(0, SymVal::from_ratio(1, 1))],
                vec![(0, SymVal::from_ratio(1, 1))],
                vec![(0, SymVal::from_ratio(1, 1))],
            ]),
        );
        let text = t.serialize();
        let back = StencilTable::parse(&text).unwrap();
        assert_eq!(back.serialize(), text);
        assert_eq!(back.len(), 2);
        let rational = back.rational_subset();
        assert_eq!(rational.len(), 1, "the β(5) record is not rational");
    }
}
