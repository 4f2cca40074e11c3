//! Version history of every path's authoritative record, kept alongside the
//! servers so checkers can decide what a client was allowed to observe.

use std::collections::HashMap;

use crate::namespace::{MetadataRecord, NamespaceTree, Path};
use crate::SimTime;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionEntry {
    pub version: u64,
    pub time: SimTime,
    /// `None` once the path was removed.
    pub record: Option<MetadataRecord>,
    /// Recursive write that produced this version, if any.
    pub write: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct History {
    next_version: u64,
    paths: HashMap<Path, Vec<VersionEntry>>,
    multi: HashMap<u64, HashMap<Path, u64>>,
}

impl History {
    /// Every existing path starts at version 0.
    pub fn from_tree(tree: &NamespaceTree) -> Self {
        let mut paths = HashMap::with_capacity(tree.len());
        for (p, r) in tree.iter() {
            paths.insert(
                p.clone(),
                vec![VersionEntry {
                    version: 0,
                    time: 0,
                    record: Some(*r),
                    write: None,
                }],
            );
        }
        Self {
            next_version: 1,
            paths,
            multi: HashMap::new(),
        }
    }

    pub fn commit(
        &mut self,
        p: &Path,
        time: SimTime,
        record: Option<MetadataRecord>,
        write: Option<u64>,
    ) -> u64 {
        let version = self.next_version;
        self.next_version += 1;
        self.paths.entry(p.clone()).or_default().push(VersionEntry {
            version,
            time,
            record,
            write,
        });
        if let Some(w) = write {
            self.multi.entry(w).or_default().insert(p.clone(), version);
        }
        version
    }

    pub fn current(&self, p: &Path) -> Option<&VersionEntry> {
        self.paths.get(p).and_then(|v| v.last())
    }

    pub fn current_version(&self, p: &Path) -> u64 {
        self.current(p).map_or(0, |e| e.version)
    }

    /// Most recent record `p` had while it existed.
    pub fn last_record(&self, p: &Path) -> Option<MetadataRecord> {
        self.paths.get(p)?.iter().rev().find_map(|e| e.record)
    }

    /// Entry for `version` of `p` and the time it was superseded.
    pub fn lookup(&self, p: &Path, version: u64) -> Option<(&VersionEntry, Option<SimTime>)> {
        let list = self.paths.get(p)?;
        let i = list.binary_search_by_key(&version, |e| e.version).ok()?;
        Some((&list[i], list.get(i + 1).map(|e| e.time)))
    }

    /// Versions of `p` committed after `version`.
    pub fn later(&self, p: &Path, version: u64) -> &[VersionEntry] {
        match self.paths.get(p) {
            Some(list) => {
                let i = list.partition_point(|e| e.version <= version);
                &list[i..]
            }
            None => &[],
        }
    }

    /// Paths a recursive write touched, with the version it gave each.
    pub fn multi_write(&self, write: u64) -> Option<&HashMap<Path, u64>> {
        self.multi.get(&write)
    }

    pub fn commits(&self) -> u64 {
        self.next_version - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::namespace::Principal;

    #[test]
    fn versions_and_intervals() {
        let p = Path::parse("/a").unwrap();
        let mut t = NamespaceTree::default();
        t.insert(
            p.clone(),
            MetadataRecord::file(0o644, Principal::new(1, 1), 0),
        )
        .unwrap();
        let mut h = History::from_tree(&t);
        assert_eq!(h.current_version(&p), 0);
        let v1 = h.commit(&p, 50, None, Some(7));
        assert_eq!(h.current_version(&p), v1);
        let (e, until) = h.lookup(&p, 0).unwrap();
        assert!(e.record.is_some());
        assert_eq!(until, Some(50));
        assert_eq!(h.later(&p, 0).len(), 1);
        assert_eq!(h.multi_write(7).unwrap()[&p], v1);
    }
}
