use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::parse::{write_interactions, LogFormat};
use super::{Behavior, DataError, DatasetSplit, InteractionRecord, PartitionConfig, Session};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub users: usize,
    pub sessions: usize,
    pub clicks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub config: PartitionConfig,
    pub input_clicks: usize,
    pub dropped_clicks: usize,
    pub new_users: usize,
    pub stages: BTreeMap<String, StageCounts>,
    pub transactional_records: usize,
    /// File name to lowercase hex SHA-256 of its bytes.
    pub hashes: BTreeMap<String, String>,
}

fn session_records<'a>(sessions: impl Iterator<Item = &'a Session>) -> Vec<InteractionRecord> {
    sessions
        .flat_map(|s| {
            s.clicks.iter().map(move |c| InteractionRecord {
                user_id: s.user_id,
                item_id: c.item_id,
                category_id: c.category_id,
                behavior: Behavior::Click,
                timestamp: c.timestamp,
            })
        })
        .collect()
}

fn counts<'a>(sessions: impl Iterator<Item = &'a Session> + Clone) -> StageCounts {
    let users: std::collections::BTreeSet<u64> = sessions.clone().map(|s| s.user_id).collect();
    StageCounts {
        users: users.len(),
        sessions: sessions.clone().count(),
        clicks: sessions.map(Session::len).sum(),
    }
}

/// Writes one CSV per stage (same schema as the input log) and `manifest.json`.
pub fn write_split(
    dir: &Path,
    split: &DatasetSplit,
    cfg: &PartitionConfig,
    format: &LogFormat,
) -> Result<SplitManifest, DataError> {
    fs::create_dir_all(dir)?;
    let stages: [(&str, Vec<InteractionRecord>); 4] = [
        ("global_train.csv", session_records(split.global_train.iter())),
        (
            "personal_train.csv",
            session_records(split.personal_train.values().flatten()),
        ),
        ("test.csv", session_records(split.test.values().flatten())),
        ("transactional.csv", split.transactional.clone()),
    ];
    let mut hashes = BTreeMap::new();
    for (name, records) in &stages {
        let mut buf = Vec::new();
        write_interactions(&mut buf, records, format)?;
        hashes.insert(name.to_string(), hex::encode(Sha256::digest(&buf)));
        fs::write(dir.join(name), buf)?;
    }
    let mut stage_counts = BTreeMap::new();
    stage_counts.insert("global_train".to_string(), counts(split.global_train.iter()));
    stage_counts.insert(
        "personal_train".to_string(),
        counts(split.personal_train.values().flatten()),
    );
    stage_counts.insert("test".to_string(), counts(split.test.values().flatten()));
    let manifest = SplitManifest {
        config: cfg.clone(),
        input_clicks: split.input_clicks,
        dropped_clicks: split.dropped_clicks,
        new_users: split.new_users.len(),
        stages: stage_counts,
        transactional_records: split.transactional.len(),
        hashes,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}
