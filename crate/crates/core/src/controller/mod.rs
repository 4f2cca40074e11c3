//! Cache controller: path-aware admission and eviction, token allocation
//! and distribution, and write blocking while entries are installed.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::hashing::{HashKey, PathHasher, Token, TokenAllocator};
use crate::history::History;
use crate::namespace::{NamespaceTree, Path};
use crate::protocol::{
    ControlAck, ControlToServer, ControlToSwitch, SwitchToControl, TokenGrant, VersionedRecord,
};
use crate::server::place_path;
use crate::switch::AdmitEntry;
use crate::SimTime;

mod driver;

pub use driver::{ControlLoop, LOOP_OWNER};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControllerError {
    #[error("admission of {path} aborted: {reason}")]
    AdmissionAborted { path: String, reason: String },
    #[error("nothing left to evict")]
    NothingEvictable,
    #[error("path closure violated: {0}")]
    ClosureViolated(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CachedEntry {
    pub slot: u32,
    pub key: HashKey,
    pub token: Token,
    pub generation: u64,
    pub children: usize,
}

/// The controller's view of the cached sub-forest.
#[derive(Debug, Clone, Default)]
pub struct CachedForest {
    entries: BTreeMap<Path, CachedEntry>,
}

impl CachedForest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, p: &Path) -> bool {
        self.entries.contains_key(p)
    }

    pub fn get(&self, p: &Path) -> Option<&CachedEntry> {
        self.entries.get(p)
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Path, &CachedEntry)> {
        self.entries.iter()
    }

    /// Inserts `p`; its parent must already be present unless `p` is the root.
    pub fn insert(&mut self, p: Path, mut e: CachedEntry) -> Result<(), ControllerError> {
        if let Some(parent) = p.parent() {
            let pe = self.entries.get_mut(&parent).ok_or_else(|| {
                ControllerError::ClosureViolated(format!("{p} inserted before {parent}"))
            })?;
            pe.children += 1;
        }
        e.children = 0;
        self.entries.insert(p, e);
        Ok(())
    }

    /// Removes `p`, which must have no cached children.
    pub fn remove(&mut self, p: &Path) -> Result<CachedEntry, ControllerError> {
        let e = *self
            .entries
            .get(p)
            .ok_or_else(|| ControllerError::ClosureViolated(format!("{p} is not cached")))?;
        if e.children > 0 {
            return Err(ControllerError::ClosureViolated(format!(
                "{p} still has cached descendants"
            )));
        }
        self.entries.remove(p);
        if let Some(parent) = p.parent() {
            if let Some(pe) = self.entries.get_mut(&parent) {
                pe.children -= 1;
            }
        }
        Ok(e)
    }

    /// Every cached path has its parent cached, child counts agree.
    pub fn check_closure(&self) -> Result<(), ControllerError> {
        let mut counts: HashMap<&Path, usize> = HashMap::new();
        for p in self.entries.keys() {
            if let Some(parent) = p.parent() {
                if !self.entries.contains_key(&parent) {
                    return Err(ControllerError::ClosureViolated(format!(
                        "{p} cached without {parent}"
                    )));
                }
                *counts
                    .entry(self.entries.get_key_value(&parent).unwrap().0)
                    .or_default() += 1;
            }
        }
        for (p, e) in &self.entries {
            if e.children != counts.get(p).copied().unwrap_or(0) {
                return Err(ControllerError::ClosureViolated(format!(
                    "child count of {p} is stale"
                )));
            }
        }
        Ok(())
    }
}

fn rank_key(p: &Path, freq: u32) -> (u32, Reverse<usize>, Path) {
    (freq, Reverse(p.depth()), p.clone())
}

/// Picks eviction candidates: repeatedly the least-reported cached path
/// with no cached descendants, plus its ancestors that are left without
/// cached children, until `2 * need` paths are listed. Paths in `protected`
/// and the root are never listed.
pub fn select_eviction_candidates(
    forest: &CachedForest,
    reported: &HashMap<Path, u32>,
    need: usize,
    protected: &BTreeSet<Path>,
) -> Vec<Path> {
    let mut out = Vec::new();
    if need == 0 {
        return out;
    }
    let mut children: HashMap<&Path, usize> = forest.iter().map(|(p, e)| (p, e.children)).collect();
    let mut picked: BTreeSet<Path> = BTreeSet::new();
    while out.len() < 2 * need {
        let best = forest
            .paths()
            .filter(|p| {
                !p.is_root() && !protected.contains(*p) && !picked.contains(*p) && children[*p] == 0
            })
            .min_by_key(|p| rank_key(p, reported.get(*p).copied().unwrap_or(0)));
        let Some(leaf) = best.cloned() else {
            break;
        };
        let mut cur = leaf;
        loop {
            picked.insert(cur.clone());
            out.push(cur.clone());
            let parent = cur.parent().unwrap();
            let c = children.get_mut(&parent).unwrap();
            *c -= 1;
            if parent.is_root() || protected.contains(&parent) || *c != 0 {
                break;
            }
            cur = parent;
        }
    }
    out
}

/// Evicts from `candidates` by live frequency until `free + evicted >= need`.
/// Each evicted leaf is followed by its ancestors that lose their last cached
/// child. Returns victims in removal order (descendants first).
pub fn evict_until_space(
    forest: &CachedForest,
    candidates: &[Path],
    live: &HashMap<Path, u32>,
    free: usize,
    need: usize,
    protected: &BTreeSet<Path>,
) -> Vec<Path> {
    let mut victims = Vec::new();
    let mut children: HashMap<&Path, usize> = forest.iter().map(|(p, e)| (p, e.children)).collect();
    let mut gone: BTreeSet<Path> = BTreeSet::new();
    let mut free = free;
    while free < need {
        let best = candidates
            .iter()
            .filter(|p| forest.contains(p) && !gone.contains(*p) && children[*p] == 0)
            .min_by_key(|p| rank_key(p, live.get(*p).copied().unwrap_or(0)));
        let Some(leaf) = best.cloned() else {
            break;
        };
        let mut cur = leaf;
        loop {
            gone.insert(cur.clone());
            victims.push(cur.clone());
            free += 1;
            let parent = cur.parent().unwrap();
            let c = children.get_mut(&parent).unwrap();
            *c -= 1;
            if parent.is_root() || protected.contains(&parent) || *c != 0 {
                break;
            }
            cur = parent;
        }
    }
    victims
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub capacity: usize,
    pub n_servers: usize,
    pub hasher: PathHasher,
    pub control_timeout_ns: SimTime,
    pub max_retries: u32,
    pub cms_threshold: u16,
}

#[derive(Debug, Clone)]
pub enum ControllerAction {
    ToServer { server: usize, msg: ControlToServer },
    ToSwitch(ControlToSwitch),
    ArmTimeout { msg: u64, at: SimTime },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Fetching,
    ReadingLive,
    BlockingVictims,
    Evicting,
    RemovingTokens,
    Admitting,
    Distributing,
}

#[derive(Debug, Clone)]
struct PendingMsg {
    server: usize,
    msg: ControlToServer,
    retries: u32,
    abortable: bool,
}

#[derive(Debug, Clone)]
struct Admission {
    path: Path,
    to_admit: Vec<Path>,
    protected: BTreeSet<Path>,
    block_id: u64,
    evict_block: u64,
    phase: Phase,
    records: HashMap<Path, VersionedRecord>,
    candidates: Vec<Path>,
    victims: Vec<Path>,
    switch_msg: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ControllerStats {
    pub hot_reports: u64,
    pub admissions: u64,
    pub admitted_paths: u64,
    pub evictions: u64,
    pub evicted_paths: u64,
    pub aborted: u64,
    pub inversions: u64,
    pub pulls: u64,
    pub retransmissions: u64,
}

pub struct Controller {
    cfg: ControllerConfig,
    forest: CachedForest,
    slot_paths: HashMap<u32, Path>,
    free_slots: BTreeSet<u32>,
    tokens: TokenAllocator,
    reported: HashMap<Path, u32>,
    queue: VecDeque<Path>,
    queued: BTreeSet<Path>,
    current: Option<Admission>,
    pending: BTreeMap<u64, PendingMsg>,
    next_msg: u64,
    next_generation: u64,
    pull_msg: Option<u64>,
    pub log: Vec<String>,
    pub stats: ControllerStats,
    pub violations: Vec<String>,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Self {
        let mut forest = CachedForest::default();
        let root_key = cfg.hasher.hash_level(&Path::root());
        forest
            .insert(
                Path::root(),
                CachedEntry {
                    slot: 0,
                    key: root_key,
                    token: Token::ROOT,
                    generation: 0,
                    children: 0,
                },
            )
            .unwrap();
        let mut tokens = TokenAllocator::new();
        tokens.allocate(&Path::root(), root_key).unwrap();
        let mut slot_paths = HashMap::new();
        slot_paths.insert(0, Path::root());
        Self {
            free_slots: (1..cfg.capacity as u32).collect(),
            cfg,
            forest,
            slot_paths,
            tokens,
            reported: HashMap::new(),
            queue: VecDeque::new(),
            queued: BTreeSet::new(),
            current: None,
            pending: BTreeMap::new(),
            next_msg: 0,
            next_generation: 1,
            pull_msg: None,
            log: Vec::new(),
            stats: ControllerStats::default(),
            violations: Vec::new(),
        }
    }

    pub fn forest(&self) -> &CachedForest {
        &self.forest
    }

    pub fn free_capacity(&self) -> usize {
        self.free_slots.len()
    }

    pub fn reported(&self) -> &HashMap<Path, u32> {
        &self.reported
    }

    pub fn set_reported(&mut self, p: Path, f: u32) {
        self.reported.insert(p, f);
    }

    pub fn is_busy(&self) -> bool {
        self.current.is_some()
            || !self.queue.is_empty()
            || !self.pending.is_empty()
            || self.pull_msg.is_some()
    }

    fn fresh_msg(&mut self) -> u64 {
        self.next_msg += 1;
        self.next_msg
    }

    fn log_line(&mut self, now: SimTime, action: &str, paths: &[Path]) {
        let tokens: Vec<String> = paths
            .iter()
            .map(|p| {
                self.tokens
                    .token_of(p)
                    .map_or("0".into(), |t| t.0.to_string())
            })
            .collect();
        let slots: Vec<String> = paths
            .iter()
            .map(|p| {
                self.forest
                    .get(p)
                    .map_or("-".into(), |e| e.slot.to_string())
            })
            .collect();
        let names: Vec<String> = paths.iter().map(|p| p.to_string()).collect();
        self.log.push(format!(
            "{now}\t{action}\t{}\t{}\t{}",
            names.join(","),
            tokens.join(","),
            slots.join(",")
        ));
    }

    fn check_closure(&mut self) {
        if let Err(e) = self.forest.check_closure() {
            self.violations.push(e.to_string());
        }
    }

    /// Fills the cache with the given files (hottest first) and their
    /// ancestors while capacity lasts. Returns the switch entries and the
    /// server token grants.
    pub fn preload(
        &mut self,
        files: &[Path],
        tree: &NamespaceTree,
        history: &History,
    ) -> (Vec<AdmitEntry>, Vec<TokenGrant>) {
        let mut entries = Vec::new();
        let mut grants = Vec::new();
        for f in files {
            if !tree.contains(f) {
                continue;
            }
            let todo: Vec<Path> = f
                .levels()
                .into_iter()
                .skip(1)
                .filter(|l| !self.forest.contains(l))
                .collect();
            if todo.is_empty() {
                continue;
            }
            if todo.len() > self.free_slots.len() {
                break;
            }
            for p in todo {
                let key = self.cfg.hasher.hash_level(&p);
                let Ok(token) = self.tokens.allocate(&p, key) else {
                    break;
                };
                let record = *tree.get(&p).unwrap();
                let (entry, grant) = self.install_entry(
                    &p,
                    key,
                    token,
                    VersionedRecord {
                        record,
                        version: history.current_version(&p),
                    },
                );
                entries.push(entry);
                grants.push(grant);
            }
        }
        self.check_closure();
        (entries, grants)
    }

    fn install_entry(
        &mut self,
        p: &Path,
        key: HashKey,
        token: Token,
        value: VersionedRecord,
    ) -> (AdmitEntry, TokenGrant) {
        let slot = self.free_slots.pop_first().expect("capacity checked");
        let generation = self.next_generation;
        self.next_generation += 1;
        self.forest
            .insert(
                p.clone(),
                CachedEntry {
                    slot,
                    key,
                    token,
                    generation,
                    children: 0,
                },
            )
            .expect("ancestors installed first");
        self.slot_paths.insert(slot, p.clone());
        (
            AdmitEntry {
                path: p.clone(),
                key,
                token,
                slot,
                generation,
                value,
            },
            TokenGrant {
                path: p.clone(),
                token,
                generation,
            },
        )
    }

    // ---- event handlers ----------------------------------------------

    pub fn on_switch(&mut self, m: SwitchToControl, now: SimTime) -> Vec<ControllerAction> {
        let mut out = Vec::new();
        match m {
            SwitchToControl::HotReport(p) => {
                self.stats.hot_reports += 1;
                let in_flight = self.current.as_ref().is_some_and(|a| a.path == p);
                if !in_flight && self.queued.insert(p.clone()) {
                    self.queue.push_back(p);
                }
                self.maybe_start(now, &mut out);
            }
            SwitchToControl::Pulled { msg, counts } => {
                if self.pull_msg == Some(msg) {
                    self.pull_msg = None;
                    self.stats.pulls += 1;
                    self.reported.clear();
                    for (slot, c) in counts {
                        if let Some(p) = self.slot_paths.get(&slot) {
                            self.reported.insert(p.clone(), c);
                        }
                    }
                }
            }
            SwitchToControl::Frequencies { msg, counts } => {
                let Some(adm) = self.current.as_mut() else {
                    return out;
                };
                if adm.phase != Phase::ReadingLive || adm.switch_msg != msg {
                    return out;
                }
                let live: HashMap<Path, u32> = adm.candidates.iter().cloned().zip(counts).collect();
                let need = adm.to_admit.len();
                let victims = evict_until_space(
                    &self.forest,
                    &adm.candidates,
                    &live,
                    self.free_slots.len(),
                    need,
                    &adm.protected,
                );
                let hot = victims
                    .iter()
                    .filter(|v| live.get(*v).copied().unwrap_or(0) > self.cfg.cms_threshold as u32)
                    .count();
                if victims.is_empty() {
                    self.abort(now, "no evictable candidates", &mut out);
                    return out;
                }
                let adm = self.current.as_mut().unwrap();
                adm.victims = victims.clone();
                adm.phase = Phase::BlockingVictims;
                let block_id = adm.evict_block;
                if hot > 0 {
                    self.stats.inversions += 1;
                    self.log_line(now, "inversion", &victims);
                }
                for s in 0..self.cfg.n_servers {
                    let msg = self.fresh_msg();
                    self.send_server(
                        s,
                        ControlToServer::Block {
                            msg,
                            block_id,
                            paths: victims.clone(),
                        },
                        false,
                        now,
                        &mut out,
                    );
                }
            }
            SwitchToControl::Done { msg } => {
                let Some(adm) = self.current.as_ref() else {
                    return out;
                };
                if adm.switch_msg != msg {
                    return out;
                }
                match adm.phase {
                    Phase::Evicting => {
                        let victims = adm.victims.clone();
                        let evict_block = adm.evict_block;
                        self.current.as_mut().unwrap().phase = Phase::RemovingTokens;
                        for s in 0..self.cfg.n_servers {
                            let msg = self.fresh_msg();
                            self.send_server(
                                s,
                                ControlToServer::Remove {
                                    msg,
                                    paths: victims.clone(),
                                    unblock: Some(evict_block),
                                },
                                false,
                                now,
                                &mut out,
                            );
                        }
                    }
                    Phase::Admitting => {
                        let grants: Vec<TokenGrant> = adm
                            .to_admit
                            .iter()
                            .map(|p| {
                                let e = self.forest.get(p).unwrap();
                                TokenGrant {
                                    path: p.clone(),
                                    token: e.token,
                                    generation: e.generation,
                                }
                            })
                            .collect();
                        let block_id = adm.block_id;
                        self.current.as_mut().unwrap().phase = Phase::Distributing;
                        for s in 0..self.cfg.n_servers {
                            let msg = self.fresh_msg();
                            self.send_server(
                                s,
                                ControlToServer::Install {
                                    msg,
                                    grants: grants.clone(),
                                    unblock: Some(block_id),
                                },
                                false,
                                now,
                                &mut out,
                            );
                        }
                    }
                    _ => {}
                }
            }
        }
        out
    }

    pub fn on_server_ack(&mut self, ack: ControlAck, now: SimTime) -> Vec<ControllerAction> {
        let mut out = Vec::new();
        let Some(pm) = self.pending.remove(&ack.msg) else {
            return out;
        };
        if let (Some(adm), ControlToServer::FetchAndBlock { .. }) = (self.current.as_mut(), &pm.msg)
        {
            for (p, v) in ack.records {
                if let Some(v) = v {
                    adm.records.insert(p, v);
                }
            }
        }
        let still_waiting = self
            .pending
            .values()
            .any(|m| m.server != usize::MAX && !Self::is_cleanup(&m.msg));
        if !still_waiting {
            self.advance(now, &mut out);
        }
        out
    }

    fn is_cleanup(m: &ControlToServer) -> bool {
        matches!(m, ControlToServer::Unblock { .. })
    }

    pub fn on_timeout(&mut self, msg: u64, now: SimTime) -> Vec<ControllerAction> {
        let mut out = Vec::new();
        let Some(pm) = self.pending.get_mut(&msg) else {
            return out;
        };
        pm.retries += 1;
        if pm.abortable && pm.retries > self.cfg.max_retries {
            self.abort(now, "control channel timeout", &mut out);
            return out;
        }
        self.stats.retransmissions += 1;
        let (server, m) = (pm.server, pm.msg.clone());
        out.push(ControllerAction::ToServer { server, msg: m });
        out.push(ControllerAction::ArmTimeout {
            msg,
            at: now + self.cfg.control_timeout_ns,
        });
        out
    }

    /// Starts a periodic frequency pull.
    pub fn on_pull_timer(&mut self, _now: SimTime) -> Vec<ControllerAction> {
        let msg = self.fresh_msg();
        self.pull_msg = Some(msg);
        vec![ControllerAction::ToSwitch(ControlToSwitch::PullAndReset {
            msg,
        })]
    }

    fn send_server(
        &mut self,
        server: usize,
        m: ControlToServer,
        abortable: bool,
        now: SimTime,
        out: &mut Vec<ControllerAction>,
    ) {
        let id = m.msg_id();
        self.pending.insert(
            id,
            PendingMsg {
                server,
                msg: m.clone(),
                retries: 0,
                abortable,
            },
        );
        out.push(ControllerAction::ToServer { server, msg: m });
        out.push(ControllerAction::ArmTimeout {
            msg: id,
            at: now + self.cfg.control_timeout_ns,
        });
    }

    fn maybe_start(&mut self, now: SimTime, out: &mut Vec<ControllerAction>) {
        while self.current.is_none() {
            let Some(p) = self.queue.pop_front() else {
                return;
            };
            self.queued.remove(&p);
            let to_admit: Vec<Path> = p
                .levels()
                .into_iter()
                .skip(1)
                .filter(|l| !self.forest.contains(l))
                .collect();
            if to_admit.is_empty() {
                out.push(ControllerAction::ToSwitch(ControlToSwitch::ReportDone(p)));
                continue;
            }
            if to_admit.len() >= self.cfg.capacity {
                self.stats.aborted += 1;
                self.log_line(now, "abort", &[p.clone()]);
                out.push(ControllerAction::ToSwitch(ControlToSwitch::ReportDone(p)));
                continue;
            }
            let block_id = self.fresh_msg();
            let evict_block = self.fresh_msg();
            let protected: BTreeSet<Path> = p.ancestors().collect();
            self.current = Some(Admission {
                path: p,
                to_admit: to_admit.clone(),
                protected,
                block_id,
                evict_block,
                phase: Phase::Fetching,
                records: HashMap::new(),
                candidates: Vec::new(),
                victims: Vec::new(),
                switch_msg: 0,
            });
            for s in 0..self.cfg.n_servers {
                let fetch: Vec<Path> = to_admit
                    .iter()
                    .filter(|q| place_path(q, self.cfg.n_servers) == s)
                    .cloned()
                    .collect();
                let msg = self.fresh_msg();
                self.send_server(
                    s,
                    ControlToServer::FetchAndBlock {
                        msg,
                        block_id,
                        block: to_admit.clone(),
                        fetch,
                    },
                    true,
                    now,
                    out,
                );
            }
        }
    }

    fn abort(&mut self, now: SimTime, reason: &str, out: &mut Vec<ControllerAction>) {
        let Some(adm) = self.current.take() else {
            return;
        };
        self.stats.aborted += 1;
        self.log_line(now, &format!("abort:{reason}"), &[adm.path.clone()]);
        let ids: Vec<u64> = self.pending.keys().copied().collect();
        for id in ids {
            self.pending.remove(&id);
        }
        for s in 0..self.cfg.n_servers {
            for b in [adm.block_id, adm.evict_block] {
                let msg = self.fresh_msg();
                self.send_server(
                    s,
                    ControlToServer::Unblock { msg, block_id: b },
                    false,
                    now,
                    out,
                );
            }
        }
        self.maybe_start(now, out);
    }

    /// Moves the current admission forward once all server acks are in.
    fn advance(&mut self, now: SimTime, out: &mut Vec<ControllerAction>) {
        let Some(adm) = self.current.as_ref() else {
            self.maybe_start(now, out);
            return;
        };
        match adm.phase {
            Phase::Fetching => {
                if adm.to_admit.iter().any(|p| !adm.records.contains_key(p)) {
                    self.abort(now, "path no longer exists", out);
                    return;
                }
                let feasible = adm.to_admit.iter().all(|p| {
                    let key = self.cfg.hasher.hash_level(p);
                    let mut probe = self.tokens.clone();
                    probe.allocate(p, key).is_ok()
                });
                if !feasible {
                    self.abort(now, "token space exhausted", out);
                    return;
                }
                self.make_room(now, out);
            }
            Phase::BlockingVictims => {
                let victims = adm.victims.clone();
                let mut entries = Vec::new();
                for v in &victims {
                    match self.forest.remove(v) {
                        Ok(e) => {
                            self.free_slots.insert(e.slot);
                            self.slot_paths.remove(&e.slot);
                            entries.push((e.key, e.token));
                        }
                        Err(e) => self.violations.push(e.to_string()),
                    }
                }
                self.stats.evictions += 1;
                self.stats.evicted_paths += victims.len() as u64;
                self.log_line(now, "evict", &victims);
                self.check_closure();
                let msg = self.fresh_msg();
                let adm = self.current.as_mut().unwrap();
                adm.phase = Phase::Evicting;
                adm.switch_msg = msg;
                out.push(ControllerAction::ToSwitch(ControlToSwitch::Evict {
                    msg,
                    entries,
                }));
            }
            Phase::RemovingTokens => self.make_room(now, out),
            Phase::Distributing => {
                let adm = self.current.take().unwrap();
                self.stats.admissions += 1;
                self.stats.admitted_paths += adm.to_admit.len() as u64;
                self.log_line(now, "admit", &adm.to_admit);
                out.push(ControllerAction::ToSwitch(ControlToSwitch::ReportDone(
                    adm.path,
                )));
                self.maybe_start(now, out);
            }
            Phase::ReadingLive | Phase::Evicting | Phase::Admitting => {}
        }
    }

    fn make_room(&mut self, now: SimTime, out: &mut Vec<ControllerAction>) {
        let adm = self.current.as_ref().unwrap();
        let need = adm.to_admit.len();
        let free = self.free_slots.len();
        if free >= need {
            self.admit(now, out);
            return;
        }
        let candidates =
            select_eviction_candidates(&self.forest, &self.reported, need - free, &adm.protected);
        if candidates.is_empty() {
            self.abort(now, "nothing evictable", out);
            return;
        }
        let slots: Vec<u32> = candidates
            .iter()
            .map(|p| self.forest.get(p).unwrap().slot)
            .collect();
        let msg = self.fresh_msg();
        let evict_block = self.fresh_msg();
        let adm = self.current.as_mut().unwrap();
        adm.candidates = candidates;
        adm.phase = Phase::ReadingLive;
        adm.switch_msg = msg;
        adm.evict_block = evict_block;
        out.push(ControllerAction::ToSwitch(
            ControlToSwitch::ReadFrequencies { msg, slots },
        ));
    }

    fn admit(&mut self, _now: SimTime, out: &mut Vec<ControllerAction>) {
        let adm = self.current.as_ref().unwrap().clone();
        let mut entries = Vec::new();
        for p in &adm.to_admit {
            let key = self.cfg.hasher.hash_level(p);
            let token = match self.tokens.allocate(p, key) {
                Ok(t) => t,
                Err(e) => {
                    self.violations.push(e.to_string());
                    return;
                }
            };
            let (entry, _) = self.install_entry(p, key, token, adm.records[p]);
            entries.push(entry);
        }
        self.check_closure();
        let msg = self.fresh_msg();
        let a = self.current.as_mut().unwrap();
        a.phase = Phase::Admitting;
        a.switch_msg = msg;
        out.push(ControllerAction::ToSwitch(ControlToSwitch::Admit {
            msg,
            entries,
        }));
    }
}

#[cfg(test)]
mod tests;
