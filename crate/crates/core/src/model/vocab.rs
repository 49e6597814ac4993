use std::collections::{BTreeSet, HashMap};

use crate::data::Session;

/// Dense, sorted mapping between raw item ids and model row indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ItemVocab {
    ids: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl ItemVocab {
    pub fn from_items(items: &BTreeSet<u64>) -> Self {
        let ids: Vec<u64> = items.iter().copied().collect();
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Self { ids, index }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, item_id: u64) -> Option<usize> {
        self.index.get(&item_id).copied()
    }

    pub fn id_of(&self, index: usize) -> u64 {
        self.ids[index]
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Encodes a session, or `None` if any item is outside the vocabulary.
    pub fn encode(&self, session: &Session) -> Option<Vec<usize>> {
        session.items().map(|i| self.index_of(i)).collect()
    }

    /// Encodes sessions, silently skipping any with unknown items.
    pub fn encode_all<'a>(&self, sessions: impl IntoIterator<Item = &'a Session>) -> Vec<Vec<usize>> {
        sessions.into_iter().filter_map(|s| self.encode(s)).collect()
    }
}
