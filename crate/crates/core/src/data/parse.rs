use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Behavior, DataError, InteractionRecord};

/// Maps raw behavior tokens in a log to [`Behavior`] values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorTable {
    tokens: BTreeMap<String, Behavior>,
}

impl Default for BehaviorTable {
    fn default() -> Self {
        Self::from_pairs([
            ("pv", Behavior::Click),
            ("buy", Behavior::Purchase),
            ("cart", Behavior::Cart),
            ("fav", Behavior::Favorite),
        ])
    }
}

impl BehaviorTable {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, Behavior)>) -> Self {
        Self {
            tokens: pairs
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }

    pub fn lookup(&self, token: &str) -> Option<Behavior> {
        self.tokens.get(token).copied()
    }

    /// Token used when writing a behavior back out. Picks the smallest token
    /// mapping to `behavior` so output is stable.
    pub fn token_for(&self, behavior: Behavior) -> Option<&str> {
        self.tokens
            .iter()
            .find(|(_, b)| **b == behavior)
            .map(|(k, _)| k.as_str())
    }
}

/// Column layout is fixed: `user_id,item_id,category_id,behavior,timestamp`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogFormat {
    pub behaviors: BehaviorTable,
}

/// Parses a header-less CSV interaction log, preserving row order.
pub fn parse_interactions<R: Read>(
    source: R,
    format: &LogFormat,
) -> Result<Vec<InteractionRecord>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut out = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(DataError::MalformedRow {
                    line,
                    reason: e.to_string(),
                })
            }
        }
        let line = row.position().map(|p| p.line()).unwrap_or(line);
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        if row.len() != 5 {
            return Err(DataError::MalformedRow {
                line,
                reason: format!("expected 5 columns, found {}", row.len()),
            });
        }
        let int = |idx: usize, name: &str| -> Result<u64, DataError> {
            row[idx].trim().parse::<u64>().map_err(|e| DataError::MalformedRow {
                line,
                reason: format!("{name} {:?}: {e}", &row[idx]),
            })
        };
        let token = row[3].trim();
        let behavior = format
            .behaviors
            .lookup(token)
            .ok_or_else(|| DataError::UnknownBehavior {
                line,
                token: token.to_string(),
            })?;
        out.push(InteractionRecord {
            user_id: int(0, "user_id")?,
            item_id: int(1, "item_id")?,
            category_id: int(2, "category_id")?,
            behavior,
            timestamp: int(4, "timestamp")?,
        });
    }
    Ok(out)
}

/// Writes records in the same layout `parse_interactions` reads.
pub fn write_interactions<W: Write>(
    sink: W,
    records: &[InteractionRecord],
    format: &LogFormat,
) -> Result<(), DataError> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    for r in records {
        let token = format.behaviors.token_for(r.behavior).ok_or_else(|| {
            DataError::InvalidConfig(format!("no token configured for {:?}", r.behavior))
        })?;
        writer.write_record([
            r.user_id.to_string(),
            r.item_id.to_string(),
            r.category_id.to_string(),
            token.to_string(),
            r.timestamp.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
