use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Click {
    pub item_id: u64,
    pub category_id: u64,
    pub timestamp: u64,
}

/// An ordered run of one user's clicks with no idle gap above the threshold.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Session {
    pub user_id: u64,
    pub clicks: Vec<Click>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.clicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = u64> + '_ {
        self.clicks.iter().map(|c| c.item_id)
    }

    pub fn start(&self) -> Option<u64> {
        self.clicks.first().map(|c| c.timestamp)
    }
}

/// Splits one user's clicks into sessions. A new session starts exactly when
/// the gap to the previous click exceeds `idle_threshold_secs`.
///
/// Input need not be sorted; a stable sort by timestamp is applied first.
pub fn sessionize(user_id: u64, clicks: &[Click], idle_threshold_secs: u64) -> Vec<Session> {
    let mut sorted = clicks.to_vec();
    sorted.sort_by_key(|c| c.timestamp);
    let mut sessions: Vec<Session> = Vec::new();
    let mut current: Vec<Click> = Vec::new();
    for click in sorted {
        if let Some(prev) = current.last() {
            if click.timestamp - prev.timestamp > idle_threshold_secs {
                sessions.push(Session {
                    user_id,
                    clicks: std::mem::take(&mut current),
                });
            }
        }
        current.push(click);
    }
    if !current.is_empty() {
        sessions.push(Session {
            user_id,
            clicks: current,
        });
    }
    sessions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clicks(ts: &[u64]) -> Vec<Click> {
        ts.iter()
            .enumerate()
            .map(|(i, &t)| Click {
                item_id: i as u64,
                category_id: 0,
                timestamp: t,
            })
            .collect()
    }

    fn stamps(sessions: &[Session]) -> Vec<Vec<u64>> {
        sessions
            .iter()
            .map(|s| s.clicks.iter().map(|c| c.timestamp).collect())
            .collect()
    }

    #[test]
    fn gap_above_threshold_splits() {
        let s = sessionize(1, &clicks(&[0, 700, 1500]), 706);
        assert_eq!(stamps(&s), vec![vec![0, 700], vec![1500]]);
    }

    #[test]
    fn gap_equal_to_threshold_joins() {
        let s = sessionize(1, &clicks(&[0, 706]), 706);
        assert_eq!(stamps(&s), vec![vec![0, 706]]);
    }

    #[test]
    fn single_click() {
        let s = sessionize(1, &clicks(&[0]), 10);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].len(), 1);
    }

    #[test]
    fn empty_input() {
        assert!(sessionize(1, &[], 706).is_empty());
    }

    #[test]
    fn unsorted_input_is_sorted_stably() {
        let mut c = clicks(&[50, 10, 10, 2000]);
        c[1].item_id = 7;
        c[2].item_id = 8;
        let s = sessionize(3, &c, 706);
        assert_eq!(stamps(&s), vec![vec![10, 10, 50], vec![2000]]);
        assert_eq!(s[0].clicks[0].item_id, 7);
        assert_eq!(s[0].clicks[1].item_id, 8);
        assert!(s.iter().all(|x| x.user_id == 3));
    }
}
