//! TSV readers.
//!
//! Interactions: `user<TAB>item<TAB>timestamp` (Unix seconds).
//! Attributes: `item<TAB>v1,v2,...` (dense) or `item<TAB>tag;tag;...` (multi-hot).
//! Blank lines and lines starting with `#` are skipped.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use super::dataset::{AttributeKind, AttributeSource, InteractionDataset, RawInteraction};
use crate::error::{Error, Result};

fn lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let f = std::fs::File::open(path)?;
    Ok(std::io::BufReader::new(f).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

fn skip(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

pub fn parse_interactions<R: BufRead>(reader: R) -> Result<Vec<RawInteraction>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if skip(&line) {
            continue;
        }
        out.push(parse_interaction_line(&line, i + 1)?);
    }
    Ok(out)
}

fn parse_interaction_line(line: &str, n: usize) -> Result<RawInteraction> {
    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
    if fields.len() != 3 {
        return Err(Error::Parse {
            line: n,
            message: format!("expected 3 tab-separated fields, found {}", fields.len()),
        });
    }
    let timestamp: i64 = fields[2].trim().parse().map_err(|_| Error::Parse {
        line: n,
        message: format!("invalid timestamp `{}`", fields[2]),
    })?;
    if timestamp < 0 {
        return Err(Error::Parse {
            line: n,
            message: "timestamp must be non-negative".into(),
        });
    }
    if fields[0].is_empty() || fields[1].is_empty() {
        return Err(Error::Parse {
            line: n,
            message: "empty user or item token".into(),
        });
    }
    Ok(RawInteraction {
        user: fields[0].to_string(),
        item: fields[1].to_string(),
        timestamp,
    })
}

pub fn load_interactions(path: &Path) -> Result<Vec<RawInteraction>> {
    let mut out = Vec::new();
    for (n, line) in lines(path)? {
        let line = line?;
        if skip(&line) {
            continue;
        }
        out.push(parse_interaction_line(&line, n)?);
    }
    Ok(out)
}

pub fn load_attributes(path: &Path, kind: AttributeKind) -> Result<AttributeSource> {
    let mut dense = HashMap::new();
    let mut tags = HashMap::new();
    for (n, line) in lines(path)? {
        let line = line?;
        if skip(&line) {
            continue;
        }
        let (item, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: n,
            message: "expected `item<TAB>values`".into(),
        })?;
        match kind {
            AttributeKind::Dense => {
                let values = rest
                    .split(',')
                    .map(|v| {
                        v.trim().parse::<f64>().map_err(|_| Error::Parse {
                            line: n,
                            message: format!("invalid attribute value `{v}`"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                dense.insert(item.to_string(), values);
            }
            AttributeKind::MultiHot => {
                let t = rest
                    .split(';')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(String::from)
                    .collect();
                tags.insert(item.to_string(), t);
            }
        }
    }
    Ok(match kind {
        AttributeKind::Dense => AttributeSource::Dense(dense),
        AttributeKind::MultiHot => AttributeSource::Tags(tags),
    })
}

/// Reads interactions and optional attributes and runs preprocessing.
pub fn load_dataset(
    interactions: &Path,
    attributes: Option<(&Path, AttributeKind)>,
) -> Result<InteractionDataset> {
    let raw = load_interactions(interactions)?;
    if raw.is_empty() {
        return Err(Error::Data(format!("{} contains no interactions", interactions.display())));
    }
    let attrs = match attributes {
        Some((p, kind)) => load_attributes(p, kind)?,
        None => AttributeSource::None,
    };
    InteractionDataset::from_raw(&raw, &attrs)
}
