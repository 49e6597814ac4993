//! Item-based collaborative filtering over purchase records, used to narrow
//! the scoring universe to a per-user candidate set.
//!
//! `sim(m, b)` is the cosine between item columns of the binary user-item
//! purchase matrix, and the click probability estimate is
//! `p(k, m) = sum_b sim(m, b) x(k, b) / sum_b |sim(m, b)|`, with `b` ranging
//! over the (optionally k-nearest) neighbors of `m`.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Behavior, InteractionRecord};

#[derive(Debug, Error, PartialEq)]
pub enum CfError {
    #[error("record for user {user_id} item {item_id} is {behavior:?}, not a purchase")]
    NotPurchase {
        user_id: u64,
        item_id: u64,
        behavior: Behavior,
    },
    #[error("unknown user {0}")]
    UnknownUser(u64),
    #[error("unknown item {0}")]
    UnknownItem(u64),
    #[error("invalid candidate selection: {0}")]
    InvalidSelection(String),
}

/// Binary purchase matrix with both row and column access.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InteractionMatrix {
    users: Vec<u64>,
    items: Vec<u64>,
    user_index: HashMap<u64, usize>,
    item_index: HashMap<u64, usize>,
    /// Sorted user indices per item.
    columns: Vec<Vec<u32>>,
    /// Sorted item indices per user.
    rows: Vec<Vec<u32>>,
}

pub fn build_matrix(purchases: &[InteractionRecord]) -> Result<InteractionMatrix, CfError> {
    InteractionMatrix::with_universe(purchases, [], [])
}

impl InteractionMatrix {
    /// Builds the matrix over the union of the given users/items and those
    /// appearing in `purchases`. Indices follow ascending id order.
    pub fn with_universe(
        purchases: &[InteractionRecord],
        users: impl IntoIterator<Item = u64>,
        items: impl IntoIterator<Item = u64>,
    ) -> Result<Self, CfError> {
        if let Some(r) = purchases.iter().find(|r| r.behavior != Behavior::Purchase) {
            return Err(CfError::NotPurchase {
                user_id: r.user_id,
                item_id: r.item_id,
                behavior: r.behavior,
            });
        }
        let users: BTreeSet<u64> = users
            .into_iter()
            .chain(purchases.iter().map(|r| r.user_id))
            .collect();
        let items: BTreeSet<u64> = items
            .into_iter()
            .chain(purchases.iter().map(|r| r.item_id))
            .collect();
        let users: Vec<u64> = users.into_iter().collect();
        let items: Vec<u64> = items.into_iter().collect();
        let user_index: HashMap<u64, usize> = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let item_index: HashMap<u64, usize> = items.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        let mut pairs: BTreeSet<(u32, u32)> = BTreeSet::new();
        for r in purchases {
            pairs.insert((user_index[&r.user_id] as u32, item_index[&r.item_id] as u32));
        }
        let mut columns = vec![Vec::new(); items.len()];
        let mut rows = vec![Vec::new(); users.len()];
        for (u, m) in pairs {
            rows[u as usize].push(m);
            columns[m as usize].push(u);
        }
        Ok(Self {
            users,
            items,
            user_index,
            item_index,
            columns,
            rows,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn items(&self) -> &[u64] {
        &self.items
    }

    pub fn users(&self) -> &[u64] {
        &self.users
    }

    /// Column `i_m` as a dense 0/1 vector over users.
    pub fn column(&self, item_id: u64) -> Option<Vec<u8>> {
        let m = *self.item_index.get(&item_id)?;
        let mut col = vec![0u8; self.users.len()];
        for &u in &self.columns[m] {
            col[u as usize] = 1;
        }
        Some(col)
    }

    pub fn entry(&self, user_id: u64, item_id: u64) -> Option<u8> {
        let u = *self.user_index.get(&user_id)?;
        let m = *self.item_index.get(&item_id)? as u32;
        Some(self.rows[u].binary_search(&m).is_ok() as u8)
    }

    fn sim_idx(&self, a: usize, b: usize) -> f64 {
        let (ca, cb) = (&self.columns[a], &self.columns[b]);
        if ca.is_empty() || cb.is_empty() {
            return 0.0;
        }
        let co = sorted_intersection(ca, cb);
        co as f64 / (ca.len() as f64 * cb.len() as f64).sqrt()
    }
}

fn sorted_intersection(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Cosine similarity between two item columns; 0 if either column is empty.
pub fn item_similarity(matrix: &InteractionMatrix, m: u64, b: u64) -> Result<f64, CfError> {
    let mi = *matrix.item_index.get(&m).ok_or(CfError::UnknownItem(m))?;
    let bi = *matrix.item_index.get(&b).ok_or(CfError::UnknownItem(b))?;
    Ok(matrix.sim_idx(mi, bi))
}

/// Candidate-set size rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSelection {
    /// All items with `p > threshold`.
    Threshold(f64),
    /// The top `ceil(q * M)` items.
    Proportion(f64),
}

impl Default for CandidateSelection {
    fn default() -> Self {
        CandidateSelection::Proportion(0.1)
    }
}

impl CandidateSelection {
    pub fn validate(&self) -> Result<(), CfError> {
        match *self {
            CandidateSelection::Threshold(p) if !(0.0..=1.0).contains(&p) => Err(
                CfError::InvalidSelection(format!("threshold {p} outside [0, 1]")),
            ),
            CandidateSelection::Proportion(q) if !(q > 0.0 && q <= 1.0) => Err(
                CfError::InvalidSelection(format!("proportion {q} outside (0, 1]")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub user_id: u64,
    /// Item ids in descending score order, ties by ascending id.
    pub items: Vec<u64>,
    pub scores: Vec<f64>,
    pub selection: CandidateSelection,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Precomputed neighbor lists over an [`InteractionMatrix`].
#[derive(Debug, Clone)]
pub struct CandidateFilter {
    matrix: InteractionMatrix,
    /// Per item: neighbors with nonzero similarity, ascending item index.
    neighbors: Vec<Vec<(u32, f64)>>,
}

impl CandidateFilter {
    /// `k_neighbors = None` uses every item as a neighbor.
    pub fn new(matrix: InteractionMatrix, k_neighbors: Option<usize>) -> Self {
        let n = matrix.n_items();
        let mut co: Vec<HashMap<u32, u32>> = vec![HashMap::new(); n];
        for row in &matrix.rows {
            for &a in row {
                for &b in row {
                    *co[a as usize].entry(b).or_insert(0) += 1;
                }
            }
        }
        let neighbors = co
            .into_iter()
            .enumerate()
            .map(|(a, counts)| {
                let na = matrix.columns[a].len() as f64;
                let mut list: Vec<(u32, f64)> = counts
                    .into_iter()
                    .map(|(b, c)| {
                        let nb = matrix.columns[b as usize].len() as f64;
                        (b, c as f64 / (na * nb).sqrt())
                    })
                    .collect();
                if let Some(k) = k_neighbors {
                    if list.len() > k {
                        list.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
                        list.truncate(k);
                    }
                }
                list.sort_by_key(|&(b, _)| b);
                list
            })
            .collect();
        Self { matrix, neighbors }
    }

    pub fn from_records(
        purchases: &[InteractionRecord],
        users: impl IntoIterator<Item = u64>,
        items: impl IntoIterator<Item = u64>,
        k_neighbors: Option<usize>,
    ) -> Result<Self, CfError> {
        Ok(Self::new(
            InteractionMatrix::with_universe(purchases, users, items)?,
            k_neighbors,
        ))
    }

    pub fn matrix(&self) -> &InteractionMatrix {
        &self.matrix
    }

    fn prob_idx(&self, row: &[u32], m: usize) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for &(b, s) in &self.neighbors[m] {
            if row.binary_search(&b).is_ok() {
                num += s;
            }
            den += s.abs();
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    pub fn predict_click_prob(&self, user_id: u64, item_id: u64) -> Result<f64, CfError> {
        let u = *self
            .matrix
            .user_index
            .get(&user_id)
            .ok_or(CfError::UnknownUser(user_id))?;
        let m = *self
            .matrix
            .item_index
            .get(&item_id)
            .ok_or(CfError::UnknownItem(item_id))?;
        Ok(self.prob_idx(&self.matrix.rows[u], m))
    }

    /// `p(k, m)` for every item, in item-index order.
    pub fn scores_for_user(&self, user_id: u64) -> Result<Vec<f64>, CfError> {
        let u = *self
            .matrix
            .user_index
            .get(&user_id)
            .ok_or(CfError::UnknownUser(user_id))?;
        let row = &self.matrix.rows[u];
        Ok((0..self.matrix.n_items()).map(|m| self.prob_idx(row, m)).collect())
    }

    pub fn candidate_set(
        &self,
        user_id: u64,
        selection: CandidateSelection,
    ) -> Result<CandidateSet, CfError> {
        selection.validate()?;
        let scores = self.scores_for_user(user_id)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        // ascending index is ascending id
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let keep = match selection {
            CandidateSelection::Threshold(p) => order.iter().take_while(|&&m| scores[m] > p).count(),
            CandidateSelection::Proportion(q) => {
                ((q * scores.len() as f64).ceil() as usize).min(scores.len())
            }
        };
        order.truncate(keep);
        Ok(CandidateSet {
            user_id,
            items: order.iter().map(|&m| self.matrix.items[m]).collect(),
            scores: order.iter().map(|&m| scores[m]).collect(),
            selection,
        })
    }
}

/// One-shot probability estimate with every item as a neighbor.
pub fn predict_click_prob(
    matrix: &InteractionMatrix,
    user_id: u64,
    item_id: u64,
) -> Result<f64, CfError> {
    CandidateFilter::new(matrix.clone(), None).predict_click_prob(user_id, item_id)
}

/// One-shot candidate set with every item as a neighbor.
pub fn candidate_set(
    matrix: &InteractionMatrix,
    user_id: u64,
    selection: CandidateSelection,
) -> Result<CandidateSet, CfError> {
    CandidateFilter::new(matrix.clone(), None).candidate_set(user_id, selection)
}

/// Writes `user_id,item_id,score,rank` rows (rank starts at 1).
pub fn write_candidates<W: Write>(sink: W, sets: &[CandidateSet]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(sink);
    writeln!(w, "user_id,item_id,score,rank")?;
    for set in sets {
        for (rank, (item, score)) in set.items.iter().zip(&set.scores).enumerate() {
            writeln!(w, "{},{},{},{}", set.user_id, item, score, rank + 1)?;
        }
    }
    w.flush()
}
