//! Content-addressed grid store for the gateway.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::grid::{GridField, Minutes};

#[derive(Debug, Clone, Default)]
pub struct BlobStore {
    blobs: BTreeMap<String, (Minutes, Arc<GridField>)>,
    pinned: BTreeSet<String>,
}

impl BlobStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, grid: GridField, now: Minutes) -> String {
        let hash = grid.content_hash().0;
        self.blobs
            .entry(hash.clone())
            .and_modify(|e| e.0 = now)
            .or_insert((now, Arc::new(grid)));
        hash
    }

    pub fn get(&self, hash: &str) -> Option<Arc<GridField>> {
        self.blobs.get(hash).map(|(_, g)| Arc::clone(g))
    }

    pub fn pin(&mut self, hash: &str) {
        self.pinned.insert(hash.to_string());
    }

    pub fn unpin_all(&mut self) {
        self.pinned.clear();
    }

    /// Drops unpinned blobs last touched before `now − window`.
    pub fn retain(&mut self, now: Minutes, window: Minutes) {
        let cutoff = now.saturating_sub(window);
        let pinned = &self.pinned;
        self.blobs.retain(|h, (t, _)| *t >= cutoff || pinned.contains(h));
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn hashes(&self) -> impl Iterator<Item = &String> {
        self.blobs.keys()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retain_keeps_pinned_and_recent() {
        let mut b = BlobStore::new();
        let old = b.put(GridField::filled(2, 2, 1.0, 0, 1.0), 0);
        let pinned = b.put(GridField::filled(2, 2, 1.0, 0, 2.0), 0);
        let new = b.put(GridField::filled(2, 2, 1.0, 0, 3.0), 50);
        b.pin(&pinned);
        b.retain(50, 15);
        assert!(b.get(&old).is_none());
        assert!(b.get(&pinned).is_some());
        assert!(b.get(&new).is_some());
    }
}
