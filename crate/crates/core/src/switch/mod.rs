//! The programmable switch: cache lookup through the hash-token table,
//! per-level read resolution with recirculation, lock counters, validation
//! state, hot-path detection and the server sequence-number protocol.

pub mod registers;

use std::collections::{HashMap, HashSet, VecDeque};

use thiserror::Error;

use crate::hashing::{HashKey, Token};
use crate::namespace::{check_single_read, check_traverse, MetadataRecord, OpError, OpReply, Path};
use crate::protocol::{
    lock_index, ClientRequest, ClientResponse, DescendantUpdate, ForwardedRequest, Invalidation,
    LockMode, LockRef, Observation, PacketStats, ServedBy, ServerMsg, ServerReply, ServerToSwitch,
    SwitchToServer, VersionedRecord, LOCK_ARRAYS,
};
use crate::server::place_path;
use crate::SimTime;

use registers::{AccessTracker, CountMinSketch, LockCounters, LockError, RegArray, ValueRegisters};

#[derive(Debug, Clone)]
pub struct SwitchConfig {
    pub capacity: usize,
    pub cms_threshold: u16,
    pub lock_mode: LockMode,
    pub n_servers: usize,
    pub traversal_ns: SimTime,
    pub cross_pipe_redirect: bool,
    /// When false every request is forwarded untouched.
    pub caching: bool,
    pub fidelity_check: bool,
    pub starvation_threshold: u32,
    pub trace_traversals: bool,
    pub root: MetadataRecord,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        Self {
            capacity: 8192,
            cms_threshold: 10,
            lock_mode: LockMode::Multi,
            n_servers: 1,
            traversal_ns: 200,
            cross_pipe_redirect: true,
            caching: true,
            fidelity_check: false,
            starvation_threshold: 10_000,
            trace_traversals: false,
            root: crate::namespace::NamespaceTree::default()
                .get(&Path::root())
                .copied()
                .unwrap(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SwitchError {
    #[error("slot {0} is occupied")]
    SlotOccupied(u32),
    #[error("slot {0} is out of range")]
    SlotOutOfRange(u32),
    #[error("entry ({key:#018x}, {token}) is already installed")]
    DuplicateEntry { key: u64, token: u8 },
    #[error("entry ({key:#018x}, {token}) is not installed")]
    UnknownEntry { key: u64, token: u8 },
}

/// Bookkeeping for one occupied cache slot. `path` and `version` are shadow
/// state used only by the correctness checkers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotInfo {
    pub key: HashKey,
    pub token: Token,
    pub generation: u64,
    pub path: Path,
    pub version: u64,
    /// Writes that invalidated this slot and have not revalidated it.
    pub pending_writes: u32,
}

#[derive(Debug, Clone)]
pub struct AdmitEntry {
    pub path: Path,
    pub key: HashKey,
    pub token: Token,
    pub slot: u32,
    pub generation: u64,
    pub value: VersionedRecord,
}

/// A read travelling through the pipeline.
#[derive(Debug, Clone)]
pub struct ReadPacket {
    pub id: u64,
    pub fwd: ForwardedRequest,
    pub next_level: usize,
    /// Held counters with the deepest level each one guards.
    pub units: Vec<(LockRef, usize)>,
    pub observed: Vec<Observation>,
}

/// A write performing its lock check.
#[derive(Debug, Clone)]
pub struct WritePacket {
    pub id: u64,
    pub fwd: ForwardedRequest,
    pub next_target: usize,
    pub last_poll: SimTime,
    pub starving: bool,
}

#[derive(Debug, Clone)]
pub enum Recirc {
    Entry(ClientRequest),
    Read(ReadPacket),
    Write(WritePacket),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Waiter {
    Write(u64),
    Fifo(usize),
}

#[derive(Debug, Clone)]
pub enum SwitchAction {
    ToServer {
        server: usize,
        msg: SwitchToServer,
    },
    ToClient(ClientResponse),
    /// Re-inject after one traversal time.
    Recirculate(Box<Recirc>),
    Wake {
        at: SimTime,
        waiter: Waiter,
    },
    HotReport(Path),
}

#[derive(Debug, Clone)]
enum Mutation {
    Reply(ServerReply, usize),
    Update(DescendantUpdate),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SwitchStats {
    pub traversals: u64,
    pub hits: u64,
    pub misses: u64,
    pub forwarded_invalid: u64,
    pub hot_reports: u64,
    pub accepted_seq: u64,
    pub duplicate_seq: u64,
    pub out_of_window_seq: u64,
    pub acks_sent: u64,
    pub lock_decrements_from_server: u64,
    pub cache_writes: u64,
    pub starved_writes: u64,
    pub update_wait_polls: u64,
}

pub struct Switch {
    cfg: SwitchConfig,
    values: ValueRegisters,
    locks: LockCounters,
    freq: Vec<u32>,
    cms: CountMinSketch,
    expected_seq: Vec<u8>,
    table: HashMap<(HashKey, Token), u32>,
    slots: Vec<Option<SlotInfo>>,
    pending_reports: HashSet<Path>,
    fifo: Vec<VecDeque<Mutation>>,
    fifo_blocked: Vec<bool>,
    barrier_applied: HashMap<u64, u32>,
    barrier_waiter: HashMap<u64, usize>,
    lock_waiters: HashMap<LockRef, Vec<(Waiter, SimTime)>>,
    parked: HashMap<u64, WritePacket>,
    fifo_origin: Vec<SimTime>,
    tracker: AccessTracker,
    next_packet: u64,
    pub stats: SwitchStats,
    pub violations: Vec<String>,
    pub trace: Vec<String>,
}

impl Switch {
    pub fn new(cfg: SwitchConfig) -> Self {
        let n = cfg.n_servers.max(1);
        Self {
            values: ValueRegisters::new(cfg.capacity),
            locks: LockCounters::default(),
            freq: vec![0; cfg.capacity],
            cms: CountMinSketch::default(),
            expected_seq: vec![0; n],
            table: HashMap::new(),
            slots: vec![None; cfg.capacity],
            pending_reports: HashSet::new(),
            fifo: vec![VecDeque::new(); n],
            fifo_blocked: vec![false; n],
            barrier_applied: HashMap::new(),
            barrier_waiter: HashMap::new(),
            lock_waiters: HashMap::new(),
            parked: HashMap::new(),
            fifo_origin: vec![0; n],
            tracker: AccessTracker::default(),
            next_packet: 0,
            stats: SwitchStats::default(),
            violations: Vec::new(),
            trace: Vec::new(),
            cfg,
        }
    }

    pub fn config(&self) -> &SwitchConfig {
        &self.cfg
    }

    // ---- inspection -------------------------------------------------

    pub fn cache_lookup(&self, key: HashKey, token: Token) -> Option<u32> {
        if !token.is_valid() {
            return None;
        }
        self.table.get(&(key, token)).copied()
    }

    pub fn slot(&self, slot: u32) -> Option<&SlotInfo> {
        self.slots.get(slot as usize).and_then(Option::as_ref)
    }

    pub fn slot_valid(&self, slot: u32) -> bool {
        self.slot(slot).is_some_and(|s| s.pending_writes == 0)
    }

    pub fn slot_record(&self, slot: u32) -> Option<MetadataRecord> {
        self.slot(slot)?;
        self.values.read(slot as usize).ok()
    }

    pub fn occupied_slots(&self) -> impl Iterator<Item = (u32, &SlotInfo)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (i as u32, s)))
    }

    pub fn cached_count(&self) -> usize {
        self.table.len()
    }

    pub fn lock_count(&self, l: LockRef) -> u16 {
        self.locks.get(l)
    }

    pub fn nonzero_locks(&self) -> Vec<(LockRef, u16)> {
        self.locks.nonzero()
    }

    pub fn expected_seq(&self, server: usize) -> u8 {
        self.expected_seq[server]
    }

    pub fn cms_estimate(&self, key: HashKey) -> u16 {
        self.cms.estimate(key)
    }

    pub fn fidelity_violations(&self) -> u64 {
        self.tracker.violations
    }

    /// True once nothing is waiting inside the switch.
    pub fn is_idle(&self) -> bool {
        self.parked.is_empty() && self.fifo.iter().all(VecDeque::is_empty)
    }

    pub fn pending_report_count(&self) -> usize {
        self.pending_reports.len()
    }

    // ---- controller interface ----------------------------------------

    pub fn admit(&mut self, entries: &[AdmitEntry]) -> Result<(), SwitchError> {
        for e in entries {
            if e.slot as usize >= self.slots.len() {
                return Err(SwitchError::SlotOutOfRange(e.slot));
            }
            if self.slots[e.slot as usize].is_some() {
                return Err(SwitchError::SlotOccupied(e.slot));
            }
            if self.table.contains_key(&(e.key, e.token)) {
                return Err(SwitchError::DuplicateEntry {
                    key: e.key.0,
                    token: e.token.0,
                });
            }
        }
        for e in entries {
            let s = e.slot as usize;
            self.values.write(s, &e.value.record);
            self.freq[s] = 0;
            self.slots[s] = Some(SlotInfo {
                key: e.key,
                token: e.token,
                generation: e.generation,
                path: e.path.clone(),
                version: e.value.version,
                pending_writes: 0,
            });
            self.table.insert((e.key, e.token), e.slot);
        }
        Ok(())
    }

    pub fn evict(&mut self, entries: &[(HashKey, Token)]) -> Result<Vec<u32>, SwitchError> {
        for (k, t) in entries {
            if !self.table.contains_key(&(*k, *t)) {
                return Err(SwitchError::UnknownEntry {
                    key: k.0,
                    token: t.0,
                });
            }
        }
        let mut freed = Vec::new();
        for kt in entries {
            let slot = self.table.remove(kt).unwrap();
            self.slots[slot as usize] = None;
            self.values.clear(slot as usize);
            self.freq[slot as usize] = 0;
            freed.push(slot);
        }
        Ok(freed)
    }

    pub fn read_frequencies(&self, slots: &[u32]) -> Vec<u32> {
        slots.iter().map(|&s| self.freq[s as usize]).collect()
    }

    /// Every occupied slot with its access count.
    pub fn pull_frequencies(&self) -> Vec<(u32, u32)> {
        self.occupied_slots()
            .map(|(s, _)| (s, self.freq[s as usize]))
            .collect()
    }

    pub fn reset_sketch(&mut self) {
        self.cms.reset();
        self.freq.fill(0);
        self.pending_reports.clear();
    }

    pub fn report_done(&mut self, p: &Path) {
        self.pending_reports.remove(p);
    }

    // ---- data plane --------------------------------------------------

    fn begin_traversal(&mut self) {
        self.stats.traversals += 1;
        self.tracker.begin();
    }

    fn touch(&mut self, a: RegArray) {
        if self.cfg.fidelity_check || self.cfg.trace_traversals {
            self.tracker.touch(a);
        }
    }

    fn end_traversal(&mut self, now: SimTime, pkt: u64, what: &str, cursor: usize) {
        if self.cfg.trace_traversals {
            let arrays: Vec<String> = self
                .tracker
                .touched()
                .iter()
                .map(|a| a.to_string())
                .collect();
            self.trace.push(format!(
                "{now}\t{pkt}\t{what}\t{cursor}\t{}",
                arrays.join(",")
            ));
        }
    }

    fn route(&self, req: &ClientRequest) -> usize {
        place_path(&req.op.target, self.cfg.n_servers)
    }

    fn forward(&self, fwd: ForwardedRequest, out: &mut Vec<SwitchAction>) {
        out.push(SwitchAction::ToServer {
            server: self.route(&fwd.req),
            msg: SwitchToServer::Request(fwd),
        });
    }

    /// A request arriving from a client port.
    pub fn on_client_request(&mut self, req: ClientRequest, now: SimTime) -> Vec<SwitchAction> {
        let mut out = Vec::new();
        if !self.cfg.caching {
            self.forward(
                ForwardedRequest {
                    req,
                    held: Vec::new(),
                    invalidated: Vec::new(),
                    stats: PacketStats::default(),
                    switch_arrival: now,
                },
                &mut out,
            );
            return out;
        }
        if self.cfg.cross_pipe_redirect {
            out.push(SwitchAction::Recirculate(Box::new(Recirc::Entry(req))));
        } else {
            self.ingress(req, now, PacketStats::default(), &mut out);
        }
        out
    }

    pub fn on_recirculate(&mut self, r: Recirc, now: SimTime) -> Vec<SwitchAction> {
        let mut out = Vec::new();
        match r {
            Recirc::Entry(req) => {
                let stats = PacketStats {
                    cross_pipe: 1,
                    ..PacketStats::default()
                };
                self.ingress(req, now, stats, &mut out);
            }
            Recirc::Read(pkt) => self.read_traversal(pkt, now, &mut out),
            Recirc::Write(pkt) => self.write_lock_check(pkt, now, &mut out),
        }
        out
    }

    fn ingress(
        &mut self,
        req: ClientRequest,
        now: SimTime,
        stats: PacketStats,
        out: &mut Vec<SwitchAction>,
    ) {
        let fwd = ForwardedRequest {
            req,
            held: Vec::new(),
            invalidated: Vec::new(),
            stats,
            switch_arrival: now,
        };
        if fwd.req.op.kind.is_single_read() {
            self.start_read(fwd, now, out);
        } else if fwd.req.op.kind.is_write() {
            self.start_write(fwd, now, out);
        } else {
            self.begin_traversal();
            self.forward(fwd, out);
        }
    }

    fn new_packet_id(&mut self) -> u64 {
        self.next_packet += 1;
        self.next_packet
    }

    fn start_read(&mut self, fwd: ForwardedRequest, now: SimTime, out: &mut Vec<SwitchAction>) {
        self.begin_traversal();
        let id = self.new_packet_id();
        let d = fwd.req.op.target.depth();
        if fwd.req.keys.len() != d + 1 || fwd.req.tokens.len() != d + 1 {
            self.stats.misses += 1;
            self.forward(fwd, out);
            return;
        }
        if d == 0 {
            let root = self.cfg.root;
            let result = check_single_read(fwd.req.op.kind, &root, fwd.req.principal)
                .map(|()| OpReply::Record(root));
            self.stats.hits += 1;
            self.respond(
                fwd,
                result,
                Some(0),
                vec![Observation {
                    path: Path::root(),
                    version: 0,
                }],
                out,
            );
            self.end_traversal(now, id, "read", 0);
            return;
        }
        if self
            .cache_lookup(fwd.req.keys[d], fwd.req.tokens[d])
            .is_none()
        {
            self.stats.misses += 1;
            self.count_miss(&fwd.req.op.target, fwd.req.keys[d], out);
            self.forward(fwd, out);
            self.end_traversal(now, id, "read-miss", d);
            return;
        }
        self.stats.hits += 1;
        let mut units = Vec::new();
        if d >= 2 {
            match self.cfg.lock_mode {
                LockMode::Multi => {
                    for l in 1..=d.min(LOCK_ARRAYS) {
                        let guards = if l < LOCK_ARRAYS { l } else { d };
                        units.push((lock_index(l, &fwd.req.keys), guards));
                    }
                }
                LockMode::Single => units.push((lock_index(1, &fwd.req.keys), d)),
            }
        }
        for (l, _) in &units {
            self.touch(RegArray::Lock(l.array));
            if let Err(e) = self.locks.increment(*l) {
                self.violations.push(e.to_string());
            }
        }
        let pkt = ReadPacket {
            id,
            fwd,
            next_level: 1,
            units,
            observed: Vec::new(),
        };
        self.resolve_level(pkt, now, out);
    }

    fn count_miss(&mut self, target: &Path, key: HashKey, out: &mut Vec<SwitchAction>) {
        for r in 0..registers::CMS_ROWS {
            self.touch(RegArray::Cms(r as u8));
        }
        let est = self.cms.update(key);
        if est > self.cfg.cms_threshold && self.pending_reports.insert(target.clone()) {
            self.stats.hot_reports += 1;
            out.push(SwitchAction::HotReport(target.clone()));
        }
    }

    fn read_traversal(&mut self, mut pkt: ReadPacket, now: SimTime, out: &mut Vec<SwitchAction>) {
        self.begin_traversal();
        let i = pkt.next_level;
        let mut keep = Vec::with_capacity(pkt.units.len());
        for (l, guards) in std::mem::take(&mut pkt.units) {
            if guards < i {
                self.release(l, now, out);
            } else {
                keep.push((l, guards));
            }
        }
        pkt.units = keep;
        self.resolve_level(pkt, now, out);
    }

    fn release_all(&mut self, pkt: &mut ReadPacket, now: SimTime, out: &mut Vec<SwitchAction>) {
        for (l, _) in std::mem::take(&mut pkt.units) {
            self.release(l, now, out);
        }
    }

    fn resolve_level(&mut self, mut pkt: ReadPacket, now: SimTime, out: &mut Vec<SwitchAction>) {
        let i = pkt.next_level;
        let d = pkt.fwd.req.op.target.depth();
        let who = pkt.fwd.req.principal;
        let slot = self.cache_lookup(pkt.fwd.req.keys[i], pkt.fwd.req.tokens[i]);
        self.touch(RegArray::Valid);
        let Some(slot) = slot.filter(|&s| self.slot_valid(s)) else {
            self.stats.forwarded_invalid += 1;
            let mut fwd = pkt.fwd;
            fwd.held = pkt.units.iter().map(|(l, _)| *l).collect();
            self.end_traversal(now, pkt.id, "read-fwd", i);
            self.forward(fwd, out);
            return;
        };
        let info = self.slots[slot as usize].as_ref().unwrap();
        pkt.observed.push(Observation {
            path: info.path.clone(),
            version: info.version,
        });
        let record = self.values.read(slot as usize);
        let words = match &record {
            Ok(r) => r.encoded_len() / 4,
            Err(_) => 1,
        };
        for w in 0..words {
            self.touch(RegArray::Value(w as u8));
        }
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                self.violations.push(format!("slot {slot}: {e}"));
                self.release_all(&mut pkt, now, out);
                self.respond(pkt.fwd, Err(OpError::NotFound), None, pkt.observed, out);
                return;
            }
        };
        if i < d {
            if let Err(e) = check_traverse(&record, who) {
                self.release_all(&mut pkt, now, out);
                self.end_traversal(now, pkt.id, "read-deny", i);
                self.respond(pkt.fwd, Err(e), None, pkt.observed, out);
                return;
            }
            self.end_traversal(now, pkt.id, "read", i);
            pkt.next_level += 1;
            pkt.fwd.stats.resolution += 1;
            out.push(SwitchAction::Recirculate(Box::new(Recirc::Read(pkt))));
            return;
        }
        self.touch(RegArray::Freq);
        self.freq[slot as usize] = self.freq[slot as usize].saturating_add(1);
        let version = self.slots[slot as usize].as_ref().unwrap().version;
        let result =
            check_single_read(pkt.fwd.req.op.kind, &record, who).map(|()| OpReply::Record(record));
        self.release_all(&mut pkt, now, out);
        self.end_traversal(now, pkt.id, "read-done", i);
        self.respond(pkt.fwd, result, Some(version), pkt.observed, out);
    }

    fn respond(
        &self,
        fwd: ForwardedRequest,
        result: Result<OpReply, OpError>,
        version: Option<u64>,
        observed: Vec<Observation>,
        out: &mut Vec<SwitchAction>,
    ) {
        out.push(SwitchAction::ToClient(ClientResponse {
            id: fwd.req.id,
            attempt: fwd.req.attempt,
            op: fwd.req.op.kind,
            target: fwd.req.op.target,
            result,
            tokens: Vec::new(),
            stats: fwd.stats,
            served_by: ServedBy::Switch,
            switch_arrival: fwd.switch_arrival,
            version,
            observed,
        }));
    }

    fn release(&mut self, l: LockRef, now: SimTime, out: &mut Vec<SwitchAction>) {
        self.touch(RegArray::Lock(l.array));
        match self.locks.decrement(l) {
            Ok(0) => self.wake_lock_waiters(l, now, out),
            Ok(_) => {}
            Err(e @ LockError::Underflow(_)) | Err(e @ LockError::Overflow(_)) => {
                self.violations.push(e.to_string())
            }
        }
    }

    fn wake_lock_waiters(&mut self, l: LockRef, now: SimTime, out: &mut Vec<SwitchAction>) {
        let Some(waiters) = self.lock_waiters.remove(&l) else {
            return;
        };
        let step = self.cfg.traversal_ns.max(1);
        for (w, origin) in waiters {
            // Next polling instant on the waiter's recirculation grid.
            let k = (now.saturating_sub(origin)).div_ceil(step).max(1);
            out.push(SwitchAction::Wake {
                at: origin + k * step,
                waiter: w,
            });
        }
    }

    /// Index of the first target at or after `from` that is cached and not
    /// already invalidated by this packet.
    fn next_cached_target(&self, fwd: &ForwardedRequest, from: usize) -> Option<usize> {
        (from..fwd.req.writes.len()).find(|&j| {
            let t = &fwd.req.writes[j];
            if t.path.is_root() {
                return false;
            }
            match self.cache_lookup(t.key, t.token) {
                Some(slot) => {
                    let generation = self.slots[slot as usize].as_ref().unwrap().generation;
                    !fwd.invalidated.iter().any(|inv| {
                        inv.key == t.key && inv.token == t.token && inv.generation == generation
                    })
                }
                None => false,
            }
        })
    }

    fn start_write(&mut self, fwd: ForwardedRequest, now: SimTime, out: &mut Vec<SwitchAction>) {
        self.begin_traversal();
        let id = self.new_packet_id();
        match self.next_cached_target(&fwd, 0) {
            None => {
                self.end_traversal(now, id, "write-fwd", 0);
                self.forward(fwd, out);
            }
            Some(j) => {
                self.end_traversal(now, id, "write", 0);
                let mut pkt = WritePacket {
                    id,
                    fwd,
                    next_target: j,
                    last_poll: now,
                    starving: false,
                };
                pkt.fwd.stats.lock_wait += 1;
                out.push(SwitchAction::Recirculate(Box::new(Recirc::Write(pkt))));
            }
        }
    }

    fn write_lock_check(
        &mut self,
        mut pkt: WritePacket,
        now: SimTime,
        out: &mut Vec<SwitchAction>,
    ) {
        self.begin_traversal();
        let j = pkt.next_target;
        let target = pkt.fwd.req.writes[j].clone();
        let Some(slot) = self.cache_lookup(target.key, target.token) else {
            self.advance_write(pkt, j + 1, now, out);
            return;
        };
        self.touch(RegArray::Lock(target.lock.array));
        if self.locks.get(target.lock) > 0 {
            pkt.last_poll = now;
            self.end_traversal(now, pkt.id, "write-wait", j);
            self.lock_waiters
                .entry(target.lock)
                .or_default()
                .push((Waiter::Write(pkt.id), now));
            self.parked.insert(pkt.id, pkt);
            return;
        }
        self.touch(RegArray::Valid);
        let info = self.slots[slot as usize].as_mut().unwrap();
        info.pending_writes += 1;
        pkt.fwd.invalidated.push(Invalidation {
            path: target.path.clone(),
            key: target.key,
            token: target.token,
            generation: info.generation,
        });
        self.end_traversal(now, pkt.id, "write-inval", j);
        self.advance_write(pkt, j + 1, now, out);
    }

    fn advance_write(
        &mut self,
        mut pkt: WritePacket,
        from: usize,
        _now: SimTime,
        out: &mut Vec<SwitchAction>,
    ) {
        match self.next_cached_target(&pkt.fwd, from) {
            Some(k) => {
                pkt.next_target = k;
                pkt.fwd.stats.lock_wait += 1;
                out.push(SwitchAction::Recirculate(Box::new(Recirc::Write(pkt))));
            }
            None => self.forward(pkt.fwd, out),
        }
    }

    pub fn on_wake(&mut self, waiter: Waiter, now: SimTime) -> Vec<SwitchAction> {
        let mut out = Vec::new();
        match waiter {
            Waiter::Write(id) => {
                let Some(mut pkt) = self.parked.remove(&id) else {
                    return out;
                };
                let step = self.cfg.traversal_ns.max(1);
                let polls = ((now - pkt.last_poll) / step) as u32;
                pkt.fwd.stats.lock_wait += polls;
                if !pkt.starving && pkt.fwd.stats.lock_wait > self.cfg.starvation_threshold {
                    pkt.starving = true;
                    self.stats.starved_writes += 1;
                }
                self.write_lock_check(pkt, now, &mut out);
            }
            Waiter::Fifo(server) => {
                let step = self.cfg.traversal_ns.max(1);
                self.stats.update_wait_polls += (now - self.fifo_origin[server]) / step;
                self.fifo_blocked[server] = false;
                self.drain_fifo(server, now, &mut out);
            }
        }
        out
    }

    pub fn on_server_message(&mut self, m: ServerToSwitch, now: SimTime) -> Vec<SwitchAction> {
        let mut out = Vec::new();
        self.begin_traversal();
        let server = m.server;
        match (m.seq, m.msg) {
            (_, ServerMsg::Bounce(mut fwd)) => {
                fwd.held.clear();
                self.start_write(fwd, now, &mut out);
            }
            (None, ServerMsg::Reply(reply)) => {
                out.push(SwitchAction::ToClient(ClientResponse::from_reply(
                    reply, server,
                )));
            }
            (None, ServerMsg::Update(u)) => {
                self.violations.push(format!(
                    "cache update for {} without sequence number",
                    u.path
                ));
            }
            (Some(seq), msg) => {
                self.touch(RegArray::Seq);
                let expected = self.expected_seq[server];
                if seq == expected {
                    self.expected_seq[server] = expected.wrapping_add(1);
                    self.stats.accepted_seq += 1;
                    self.stats.acks_sent += 1;
                    out.push(SwitchAction::ToServer {
                        server,
                        msg: SwitchToServer::Ack { seq },
                    });
                    match msg {
                        ServerMsg::Reply(mut reply) => {
                            for l in std::mem::take(&mut reply.release) {
                                self.stats.lock_decrements_from_server += 1;
                                self.release(l, now, &mut out);
                            }
                            if reply.revalidate.is_empty() && reply.barrier.is_none() {
                                out.push(SwitchAction::ToClient(ClientResponse::from_reply(
                                    reply, server,
                                )));
                            } else {
                                self.fifo[server].push_back(Mutation::Reply(reply, server));
                            }
                        }
                        ServerMsg::Update(u) => self.fifo[server].push_back(Mutation::Update(u)),
                        ServerMsg::Bounce(_) => unreachable!(),
                    }
                    if !self.fifo_blocked[server] {
                        self.drain_fifo(server, now, &mut out);
                    }
                } else if (expected.wrapping_sub(seq) as u32) % 256 < 128 {
                    self.stats.duplicate_seq += 1;
                    self.stats.acks_sent += 1;
                    out.push(SwitchAction::ToServer {
                        server,
                        msg: SwitchToServer::Ack { seq },
                    });
                } else {
                    self.stats.out_of_window_seq += 1;
                }
            }
        }
        out
    }

    fn slot_for(&self, key: HashKey, token: Token, generation: u64) -> Option<u32> {
        let slot = self.cache_lookup(key, token)?;
        (self.slots[slot as usize].as_ref()?.generation == generation).then_some(slot)
    }

    fn write_slot(&mut self, slot: u32, value: &VersionedRecord) {
        self.values.write(slot as usize, &value.record);
        self.slots[slot as usize].as_mut().unwrap().version = value.version;
        self.stats.cache_writes += 1;
    }

    fn drain_fifo(&mut self, server: usize, now: SimTime, out: &mut Vec<SwitchAction>) {
        while let Some(head) = self.fifo[server].front() {
            match head {
                Mutation::Update(u) => {
                    if self.locks.get(u.lock) > 0 {
                        self.fifo_blocked[server] = true;
                        self.fifo_origin[server] = now;
                        self.lock_waiters
                            .entry(u.lock)
                            .or_default()
                            .push((Waiter::Fifo(server), now));
                        return;
                    }
                    let Some(Mutation::Update(u)) = self.fifo[server].pop_front() else {
                        unreachable!()
                    };
                    if let Some(slot) = self.slot_for(u.key, u.token, u.generation) {
                        self.write_slot(slot, &u.value);
                    }
                    let applied = self.barrier_applied.entry(u.write_id).or_default();
                    *applied += 1;
                    if let Some(waiting) = self.barrier_waiter.remove(&u.write_id) {
                        out.push(SwitchAction::Wake {
                            at: now + self.cfg.traversal_ns,
                            waiter: Waiter::Fifo(waiting),
                        });
                    }
                }
                Mutation::Reply(reply, _) => {
                    if let Some(b) = reply.barrier {
                        let applied = self.barrier_applied.get(&b.write_id).copied().unwrap_or(0);
                        if applied < b.updates {
                            self.fifo_blocked[server] = true;
                            self.fifo_origin[server] = now;
                            self.barrier_waiter.insert(b.write_id, server);
                            return;
                        }
                        self.barrier_applied.remove(&b.write_id);
                    }
                    let Some(Mutation::Reply(reply, from)) = self.fifo[server].pop_front() else {
                        unreachable!()
                    };
                    for r in &reply.revalidate {
                        let Some(slot) = self.slot_for(r.key, r.token, r.generation) else {
                            continue;
                        };
                        if let Some(v) = &r.value {
                            self.write_slot(slot, v);
                        }
                        let info = self.slots[slot as usize].as_mut().unwrap();
                        if info.pending_writes == 0 {
                            self.violations
                                .push(format!("revalidation of {} without invalidation", r.path));
                        } else {
                            info.pending_writes -= 1;
                        }
                    }
                    out.push(SwitchAction::ToClient(ClientResponse::from_reply(
                        reply, from,
                    )));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
