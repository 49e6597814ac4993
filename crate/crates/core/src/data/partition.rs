use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::session::{sessionize, Click, Session};
use super::{Behavior, DataError, InteractionRecord};

/// How the minimum-click filter is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinClicksScope {
    /// Drop users whose total click count is below the minimum.
    #[default]
    PerUser,
    /// Drop individual sessions shorter than the minimum.
    PerSession,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    /// Clicks at or after this instant are kept on the device.
    pub t_device: u64,
    /// Clicks at or after this instant are test-only.
    pub t_test: u64,
    pub idle_threshold_secs: u64,
    pub min_user_clicks: usize,
    pub min_clicks_scope: MinClicksScope,
    pub new_user_quantile: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            t_device: 1_512_057_600,
            t_test: 1_512_230_400,
            idle_threshold_secs: 706,
            min_user_clicks: 12,
            min_clicks_scope: MinClicksScope::PerUser,
            new_user_quantile: 0.9,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.t_device >= self.t_test {
            return Err(DataError::InvalidConfig(format!(
                "t_device ({}) must precede t_test ({})",
                self.t_device, self.t_test
            )));
        }
        if self.idle_threshold_secs == 0 {
            return Err(DataError::InvalidConfig(
                "idle_threshold_secs must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.new_user_quantile) {
            return Err(DataError::InvalidConfig(format!(
                "new_user_quantile {} outside [0, 1]",
                self.new_user_quantile
            )));
        }
        Ok(())
    }
}

/// Sessions routed to the three stages, plus every transactional record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub global_train: Vec<Session>,
    pub personal_train: BTreeMap<u64, Vec<Session>>,
    pub test: BTreeMap<u64, Vec<Session>>,
    pub transactional: Vec<InteractionRecord>,
    /// Users whose clicks may never reach the global model.
    pub new_users: BTreeSet<u64>,
    pub input_clicks: usize,
    pub dropped_clicks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Global,
    Personal,
    Test,
}

fn stage_of(ts: u64, cfg: &PartitionConfig) -> Stage {
    if ts < cfg.t_device {
        Stage::Global
    } else if ts < cfg.t_test {
        Stage::Personal
    } else {
        Stage::Test
    }
}

impl DatasetSplit {
    pub fn global_clicks(&self) -> usize {
        self.global_train.iter().map(Session::len).sum()
    }

    pub fn personal_clicks(&self) -> usize {
        self.personal_train.values().flatten().map(Session::len).sum()
    }

    pub fn test_clicks(&self) -> usize {
        self.test.values().flatten().map(Session::len).sum()
    }

    /// Every user with at least one session in any stage, ascending.
    pub fn users(&self) -> BTreeSet<u64> {
        self.global_train
            .iter()
            .map(|s| s.user_id)
            .chain(self.personal_train.keys().copied())
            .chain(self.test.keys().copied())
            .collect()
    }

    /// Items clicked in either training stage.
    pub fn train_items(&self) -> BTreeSet<u64> {
        self.global_train
            .iter()
            .chain(self.personal_train.values().flatten())
            .flat_map(|s| s.items())
            .collect()
    }

    /// Every item id appearing anywhere in the split, clicks or transactions.
    pub fn all_items(&self) -> BTreeSet<u64> {
        self.global_train
            .iter()
            .chain(self.personal_train.values().flatten())
            .chain(self.test.values().flatten())
            .flat_map(|s| s.items())
            .chain(self.transactional.iter().map(|r| r.item_id))
            .collect()
    }

    /// Global-stage sessions belonging to `user_id`, in stored order.
    pub fn global_sessions_of(&self, user_id: u64) -> Vec<&Session> {
        self.global_train
            .iter()
            .filter(|s| s.user_id == user_id)
            .collect()
    }

    fn per_user_clicks(&self) -> BTreeMap<u64, usize> {
        let mut counts = BTreeMap::new();
        for s in self
            .global_train
            .iter()
            .chain(self.personal_train.values().flatten())
            .chain(self.test.values().flatten())
        {
            *counts.entry(s.user_id).or_insert(0) += s.len();
        }
        counts
    }
}

/// Routes clicks to stages using half-open intervals `[.., t_device)`,
/// `[t_device, t_test)`, `[t_test, ..)`. Sessions crossing a boundary are cut
/// there. Transactional records are copied whatever their timestamp.
pub fn partition_temporal(
    records: &[InteractionRecord],
    cfg: &PartitionConfig,
) -> Result<DatasetSplit, DataError> {
    partition_temporal_with(records, cfg, |b| b == Behavior::Click)
}

/// Like [`partition_temporal`] but with a custom choice of which behaviors
/// form the session sequences (used by the transactional-only ablation).
pub fn partition_temporal_with(
    records: &[InteractionRecord],
    cfg: &PartitionConfig,
    sequence_event: impl Fn(Behavior) -> bool,
) -> Result<DatasetSplit, DataError> {
    cfg.validate()?;
    let mut per_user: BTreeMap<u64, Vec<Click>> = BTreeMap::new();
    let mut split = DatasetSplit::default();
    for r in records {
        if sequence_event(r.behavior) {
            per_user.entry(r.user_id).or_default().push(Click {
                item_id: r.item_id,
                category_id: r.category_id,
                timestamp: r.timestamp,
            });
            split.input_clicks += 1;
        }
        if r.behavior.is_transactional() {
            split.transactional.push(*r);
        }
    }
    for (user, clicks) in per_user {
        for session in sessionize(user, &clicks, cfg.idle_threshold_secs) {
            for (stage, piece) in cut_at_boundaries(session, cfg) {
                match stage {
                    Stage::Global => split.global_train.push(piece),
                    Stage::Personal => split.personal_train.entry(user).or_default().push(piece),
                    Stage::Test => split.test.entry(user).or_default().push(piece),
                }
            }
        }
    }
    Ok(split)
}

fn cut_at_boundaries(session: Session, cfg: &PartitionConfig) -> Vec<(Stage, Session)> {
    let mut pieces: Vec<(Stage, Session)> = Vec::new();
    for click in session.clicks {
        let stage = stage_of(click.timestamp, cfg);
        match pieces.last_mut() {
            Some((s, piece)) if *s == stage => piece.clicks.push(click),
            _ => pieces.push((
                stage,
                Session {
                    user_id: session.user_id,
                    clicks: vec![click],
                },
            )),
        }
    }
    pieces
}

/// Applies the dataset filters in order: length-1 sessions, the minimum-click
/// rule, then test clicks on items never seen in either training stage.
pub fn filter_dataset(mut split: DatasetSplit, cfg: &PartitionConfig) -> DatasetSplit {
    let mut dropped = 0usize;
    let mut keep = |sessions: &mut Vec<Session>, pred: &dyn Fn(&Session) -> bool| {
        sessions.retain(|s| {
            let ok = pred(s);
            if !ok {
                dropped += s.len();
            }
            ok
        });
    };

    let min_len = match cfg.min_clicks_scope {
        MinClicksScope::PerUser => 2,
        MinClicksScope::PerSession => cfg.min_user_clicks.max(2),
    };
    keep(&mut split.global_train, &|s| s.len() >= min_len);
    for sessions in split.personal_train.values_mut() {
        keep(sessions, &|s| s.len() >= min_len);
    }
    for sessions in split.test.values_mut() {
        keep(sessions, &|s| s.len() >= min_len);
    }

    if cfg.min_clicks_scope == MinClicksScope::PerUser {
        let counts = split.per_user_clicks();
        let too_few: HashSet<u64> = counts
            .into_iter()
            .filter(|&(_, n)| n < cfg.min_user_clicks)
            .map(|(u, _)| u)
            .collect();
        keep(&mut split.global_train, &|s| !too_few.contains(&s.user_id));
        for sessions in split.personal_train.values_mut() {
            keep(sessions, &|s| !too_few.contains(&s.user_id));
        }
        for sessions in split.test.values_mut() {
            keep(sessions, &|s| !too_few.contains(&s.user_id));
        }
    }

    let vocab = split.train_items();
    for sessions in split.test.values_mut() {
        let mut rebuilt = Vec::with_capacity(sessions.len());
        for s in sessions.drain(..) {
            let before = s.len();
            let kept: Vec<Click> = s
                .clicks
                .into_iter()
                .filter(|c| vocab.contains(&c.item_id))
                .collect();
            dropped += before - kept.len();
            // Removing a click can open a gap wider than the idle threshold.
            for piece in sessionize(s.user_id, &kept, cfg.idle_threshold_secs) {
                if piece.len() >= min_len {
                    rebuilt.push(piece);
                } else {
                    dropped += piece.len();
                }
            }
        }
        *sessions = rebuilt;
    }

    split.personal_train.retain(|_, v| !v.is_empty());
    split.test.retain(|_, v| !v.is_empty());
    split.dropped_clicks += dropped;
    split
}

/// Empirical quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Partitions users into (old, new) by mean click timestamp. Users whose mean
/// lies strictly above the `quantile_threshold` quantile of all means are new.
pub fn split_users(
    records: &[InteractionRecord],
    quantile_threshold: f64,
) -> (BTreeSet<u64>, BTreeSet<u64>) {
    let mut sums: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.behavior == Behavior::Click) {
        let e = sums.entry(r.user_id).or_insert((0.0, 0));
        e.0 += r.timestamp as f64;
        e.1 += 1;
    }
    if sums.is_empty() {
        return (BTreeSet::new(), BTreeSet::new());
    }
    let means: Vec<(u64, f64)> = sums
        .into_iter()
        .map(|(u, (s, n))| (u, s / n as f64))
        .collect();
    let mut sorted: Vec<f64> = means.iter().map(|&(_, m)| m).collect();
    sorted.sort_by(f64::total_cmp);
    let cut = quantile(&sorted, quantile_threshold);
    let mut old = BTreeSet::new();
    let mut new = BTreeSet::new();
    for (u, m) in means {
        if m > cut {
            new.insert(u);
        } else {
            old.insert(u);
        }
    }
    (old, new)
}

/// Marks `new_users` and removes their global-stage sessions.
pub fn apply_cohorts(mut split: DatasetSplit, new_users: BTreeSet<u64>) -> DatasetSplit {
    let mut dropped = 0;
    split.global_train.retain(|s| {
        let keep = !new_users.contains(&s.user_id);
        if !keep {
            dropped += s.len();
        }
        keep
    });
    split.dropped_clicks += dropped;
    split.new_users = new_users;
    split
}

/// Full pipeline: cohort split, temporal partition, cohort exclusion, filters.
pub fn prepare_split(
    records: &[InteractionRecord],
    cfg: &PartitionConfig,
) -> Result<DatasetSplit, DataError> {
    let (_, new_users) = split_users(records, cfg.new_user_quantile);
    let split = partition_temporal(records, cfg)?;
    Ok(filter_dataset(apply_cohorts(split, new_users), cfg))
}
