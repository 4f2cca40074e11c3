//! Metadata server: executes operations against the namespace, keeps the
//! tokens of cached paths it is responsible for, blocks writes during cache
//! admission and runs the stop-and-wait sequence protocol towards the switch.

use std::collections::{HashMap, VecDeque};

use crate::hashing::{PathHasher, Token};
use crate::history::History;
use crate::namespace::{NamespaceTree, Path};
use crate::protocol::{
    write_lock, Barrier, ControlAck, ControlToServer, DescendantUpdate, ForwardedRequest, LockMode,
    RequestId, Revalidation, ServerMsg, ServerReply, ServerToSwitch, TokenGrant, VersionedRecord,
};
use crate::SimTime;

/// Jump consistent hash of the path's 64-bit digest onto `n` servers.
pub fn place_path(p: &Path, n: usize) -> usize {
    if n <= 1 {
        return 0;
    }
    let mut key = PathHasher::default().hash_level(p).0;
    let (mut b, mut j): (i64, i64) = (-1, 0);
    while j < n as i64 {
        b = j;
        key = key.wrapping_mul(2_862_933_555_777_941_757).wrapping_add(1);
        j = ((b + 1) as f64 * ((1u64 << 31) as f64 / ((key >> 33) + 1) as f64)) as i64;
    }
    b as usize
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub id: usize,
    pub n_servers: usize,
    pub lock_mode: LockMode,
    pub hasher: PathHasher,
    /// Service time of one operation.
    pub service_ns: SimTime,
    /// Extra fraction of service time spent on cache bookkeeping.
    pub cache_overhead: f64,
    pub caching: bool,
    pub retransmit_ns: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CachedInfo {
    pub token: Token,
    pub generation: u64,
}

#[derive(Debug, Clone)]
struct Completed {
    reply: ServerReply,
}

/// A recursive write that committed and may need descendant refreshes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiCommit {
    pub write_id: u64,
    pub target: Path,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    /// Held until the admission blocking it finishes.
    Parked,
    Bounce(ForwardedRequest),
    Reply {
        reply: ServerReply,
        lock_related: bool,
        multi: Option<MultiCommit>,
    },
}

#[derive(Debug, Clone)]
pub enum ServerAction {
    ToSwitch(ServerToSwitch),
    ArmRetransmit { seq: u8, epoch: u64, at: SimTime },
    ServiceDone { at: SimTime },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub executed: u64,
    pub reads: u64,
    pub writes: u64,
    pub bounces: u64,
    pub replays: u64,
    pub parked: u64,
    pub lock_related_sent: u64,
    pub retransmissions: u64,
    pub stale_acks: u64,
    pub busy_ns: u64,
}

/// Shared state a server operates on.
pub struct ServerContext<'a> {
    pub tree: &'a mut NamespaceTree,
    pub history: &'a mut History,
    pub next_write_id: &'a mut u64,
    pub now: SimTime,
}

pub struct MetadataServer {
    cfg: ServerConfig,
    tokens: HashMap<Path, CachedInfo>,
    seq: u8,
    outstanding: Option<(ServerToSwitch, u64)>,
    lr_queue: VecDeque<ServerMsg>,
    epoch: u64,
    blocks: HashMap<u64, Vec<Path>>,
    blocked: HashMap<Path, u32>,
    parked: Vec<ForwardedRequest>,
    queue: VecDeque<ForwardedRequest>,
    busy: bool,
    completed: HashMap<RequestId, Completed>,
    seen_control: HashMap<u64, ControlAck>,
    pub stats: ServerStats,
}

impl MetadataServer {
    pub fn new(cfg: ServerConfig) -> Self {
        Self {
            cfg,
            tokens: HashMap::new(),
            seq: 0,
            outstanding: None,
            lr_queue: VecDeque::new(),
            epoch: 0,
            blocks: HashMap::new(),
            blocked: HashMap::new(),
            parked: Vec::new(),
            queue: VecDeque::new(),
            busy: false,
            completed: HashMap::new(),
            seen_control: HashMap::new(),
            stats: ServerStats::default(),
        }
    }

    pub fn id(&self) -> usize {
        self.cfg.id
    }

    pub fn seq(&self) -> u8 {
        self.seq
    }

    pub fn token_of(&self, p: &Path) -> Option<CachedInfo> {
        self.tokens.get(p).copied()
    }

    pub fn cached_paths(&self) -> impl Iterator<Item = (&Path, &CachedInfo)> {
        self.tokens.iter()
    }

    pub fn is_blocked(&self, p: &Path) -> bool {
        self.blocked.contains_key(p)
    }

    /// Nothing queued, parked, or awaiting acknowledgement.
    pub fn is_idle(&self) -> bool {
        !self.busy
            && self.queue.is_empty()
            && self.parked.is_empty()
            && self.outstanding.is_none()
            && self.lr_queue.is_empty()
    }

    pub fn has_unacked(&self) -> bool {
        self.outstanding.is_some() || !self.lr_queue.is_empty()
    }

    /// Responsible server for `p`: owner of a file, placement target of a
    /// directory.
    pub fn owns(&self, p: &Path) -> bool {
        place_path(p, self.cfg.n_servers) == self.cfg.id
    }

    fn service_time(&self) -> SimTime {
        let base = self.cfg.service_ns as f64;
        let factor = if self.cfg.caching {
            1.0 + self.cfg.cache_overhead
        } else {
            1.0
        };
        (base * factor).round() as SimTime
    }

    // ---- request path ------------------------------------------------

    /// A request arriving from the switch. Writes to cached paths that did
    /// not invalidate the cache are sent back right away.
    pub fn on_request(&mut self, fwd: ForwardedRequest, now: SimTime) -> Vec<ServerAction> {
        let mut out = Vec::new();
        if fwd.req.op.kind.is_write() && self.needs_bounce(&fwd) {
            self.stats.bounces += 1;
            out.push(self.bounce(fwd));
            return out;
        }
        self.queue.push_back(fwd);
        if !self.busy {
            self.start_service(now, &mut out);
        }
        out
    }

    fn start_service(&mut self, now: SimTime, out: &mut Vec<ServerAction>) {
        if self.queue.is_empty() {
            self.busy = false;
            return;
        }
        self.busy = true;
        let t = self.service_time();
        self.stats.busy_ns += t;
        out.push(ServerAction::ServiceDone { at: now + t });
    }

    /// Completes the request at the head of the queue.
    pub fn on_service_done(
        &mut self,
        ctx: &mut ServerContext<'_>,
    ) -> (Option<Outcome>, Vec<ServerAction>) {
        let mut out = Vec::new();
        let fwd = self.queue.pop_front();
        let outcome = fwd.map(|f| self.execute(f, ctx));
        self.start_service(ctx.now, &mut out);
        (outcome, out)
    }

    fn bounce(&mut self, mut fwd: ForwardedRequest) -> ServerAction {
        for t in &mut fwd.req.writes {
            if let Some(info) = self.tokens.get(&t.path) {
                t.token = info.token;
            }
        }
        ServerAction::ToSwitch(ServerToSwitch {
            server: self.cfg.id,
            seq: None,
            msg: ServerMsg::Bounce(fwd),
        })
    }

    /// A cached write target whose current generation was not invalidated
    /// by this packet.
    fn needs_bounce(&self, fwd: &ForwardedRequest) -> bool {
        if !self.cfg.caching {
            return false;
        }
        fwd.req
            .writes
            .iter()
            .any(|t| match self.tokens.get(&t.path) {
                Some(info) => !fwd.invalidated.iter().any(|inv| {
                    inv.path == t.path
                        && inv.token == info.token
                        && inv.generation == info.generation
                }),
                None => false,
            })
    }

    fn write_blocked(&self, fwd: &ForwardedRequest) -> bool {
        if self.blocked.is_empty() {
            return false;
        }
        let op = &fwd.req.op;
        if op.kind.is_multi_write() {
            return self
                .blocked
                .keys()
                .any(|b| *b == op.target || op.target.is_ancestor_of(b));
        }
        self.blocked.contains_key(&op.target)
            || op.dest().is_some_and(|d| self.blocked.contains_key(d))
    }

    fn level_tokens(&self, p: &Path) -> Vec<(Path, Token)> {
        p.levels()
            .into_iter()
            .skip(1)
            .map(|l| {
                let t = self.tokens.get(&l).map_or(Token::INVALID, |i| i.token);
                (l, t)
            })
            .collect()
    }

    /// Current record of `p`, or a deleted marker built from its last
    /// known record.
    fn current_value(ctx: &ServerContext<'_>, p: &Path) -> Option<VersionedRecord> {
        let version = ctx.history.current_version(p);
        match ctx.tree.get(p) {
            Some(r) => Some(VersionedRecord {
                record: *r,
                version,
            }),
            None => {
                let mut record = ctx.history.last_record(p)?;
                record.deleted = true;
                Some(VersionedRecord { record, version })
            }
        }
    }

    /// Runs one request against the namespace.
    pub fn execute(&mut self, fwd: ForwardedRequest, ctx: &mut ServerContext<'_>) -> Outcome {
        let op = fwd.req.op.clone();
        if op.kind.is_read() {
            self.stats.executed += 1;
            self.stats.reads += 1;
            let applied = ctx
                .tree
                .apply(&op, fwd.req.principal, (ctx.now / 1_000) as u32);
            let lock_related = !fwd.held.is_empty();
            let reply = ServerReply {
                id: fwd.req.id,
                attempt: fwd.req.attempt,
                op: op.kind,
                target: op.target.clone(),
                result: applied.result,
                tokens: self.level_tokens(&op.target),
                release: fwd.held,
                revalidate: Vec::new(),
                barrier: None,
                stats: fwd.stats,
                switch_arrival: fwd.switch_arrival,
                version: Some(ctx.history.current_version(&op.target)),
            };
            return Outcome::Reply {
                reply,
                lock_related,
                multi: None,
            };
        }
        if self.needs_bounce(&fwd) {
            self.stats.bounces += 1;
            let ServerAction::ToSwitch(ServerToSwitch {
                msg: ServerMsg::Bounce(f),
                ..
            }) = self.bounce(fwd)
            else {
                unreachable!()
            };
            return Outcome::Bounce(f);
        }
        if let Some(done) = self.completed.get(&fwd.req.id) {
            self.stats.replays += 1;
            let mut reply = done.reply.clone();
            reply.attempt = fwd.req.attempt;
            reply.stats = fwd.stats;
            reply.switch_arrival = fwd.switch_arrival;
            reply.barrier = None;
            reply.revalidate = fwd
                .invalidated
                .iter()
                .map(|inv| Revalidation {
                    path: inv.path.clone(),
                    key: inv.key,
                    token: inv.token,
                    generation: inv.generation,
                    value: Self::current_value(ctx, &inv.path),
                })
                .collect();
            let lock_related = !reply.revalidate.is_empty();
            return Outcome::Reply {
                reply,
                lock_related,
                multi: None,
            };
        }
        if self.write_blocked(&fwd) {
            self.stats.parked += 1;
            self.parked.push(fwd);
            return Outcome::Parked;
        }
        self.stats.executed += 1;
        self.stats.writes += 1;
        let multi = op.kind.is_multi_write().then(|| {
            *ctx.next_write_id += 1;
            *ctx.next_write_id
        });
        let applied = ctx
            .tree
            .apply(&op, fwd.req.principal, (ctx.now / 1_000) as u32);
        for p in &applied.mutated {
            let rec = ctx.tree.get(p).copied();
            ctx.history.commit(p, ctx.now, rec, multi);
        }
        let ok = applied.result.is_ok();
        let revalidate: Vec<Revalidation> = fwd
            .invalidated
            .iter()
            .map(|inv| Revalidation {
                path: inv.path.clone(),
                key: inv.key,
                token: inv.token,
                generation: inv.generation,
                value: if ok {
                    Self::current_value(ctx, &inv.path)
                } else {
                    None
                },
            })
            .collect();
        let mut tokens = self.level_tokens(&op.target);
        if let Some(d) = op.dest() {
            tokens.extend(self.level_tokens(d));
        }
        let reply = ServerReply {
            id: fwd.req.id,
            attempt: fwd.req.attempt,
            op: op.kind,
            target: op.target.clone(),
            result: applied.result,
            tokens,
            release: Vec::new(),
            revalidate,
            barrier: None,
            stats: fwd.stats,
            switch_arrival: fwd.switch_arrival,
            version: Some(ctx.history.current_version(&op.target)),
        };
        self.completed.insert(
            reply.id,
            Completed {
                reply: reply.clone(),
            },
        );
        let lock_related = !reply.revalidate.is_empty();
        Outcome::Reply {
            reply,
            lock_related,
            multi: match (ok, multi) {
                (true, Some(write_id)) => Some(MultiCommit {
                    write_id,
                    target: op.target,
                }),
                _ => None,
            },
        }
    }

    /// Refreshes this server must send for cached strict descendants of a
    /// recursive write's target.
    pub fn descendant_updates(
        &self,
        mc: &MultiCommit,
        ctx: &ServerContext<'_>,
    ) -> Vec<DescendantUpdate> {
        let mut paths: Vec<(&Path, &CachedInfo)> = self
            .tokens
            .iter()
            .filter(|(p, _)| mc.target.is_ancestor_of(p) && self.owns(p))
            .collect();
        paths.sort_by(|a, b| a.0.cmp(b.0));
        paths
            .into_iter()
            .filter_map(|(p, info)| {
                let rec = ctx.tree.get(p)?;
                let keys = self.cfg.hasher.hash_read_request(p);
                Some(DescendantUpdate {
                    write_id: mc.write_id,
                    path: p.clone(),
                    key: keys[p.depth()],
                    token: info.token,
                    generation: info.generation,
                    lock: write_lock(self.cfg.lock_mode, p.depth(), &keys),
                    value: VersionedRecord {
                        record: *rec,
                        version: ctx.history.current_version(p),
                    },
                })
            })
            .collect()
    }

    pub fn with_barrier(reply: &mut ServerReply, write_id: u64, updates: u32) {
        reply.barrier = Some(Barrier { write_id, updates });
    }

    // ---- sequence protocol -------------------------------------------

    /// Queues a lock-related message; it is sent once every earlier one
    /// has been acknowledged.
    pub fn send_lock_related(&mut self, msg: ServerMsg, now: SimTime) -> Vec<ServerAction> {
        self.lr_queue.push_back(msg);
        let mut out = Vec::new();
        if self.outstanding.is_none() {
            self.send_next(now, &mut out);
        }
        out
    }

    fn send_next(&mut self, now: SimTime, out: &mut Vec<ServerAction>) {
        let Some(msg) = self.lr_queue.pop_front() else {
            return;
        };
        self.epoch += 1;
        let tagged = ServerToSwitch {
            server: self.cfg.id,
            seq: Some(self.seq),
            msg,
        };
        self.stats.lock_related_sent += 1;
        out.push(ServerAction::ToSwitch(tagged.clone()));
        out.push(ServerAction::ArmRetransmit {
            seq: self.seq,
            epoch: self.epoch,
            at: now + self.cfg.retransmit_ns,
        });
        self.outstanding = Some((tagged, self.epoch));
    }

    pub fn on_ack(&mut self, seq: u8, now: SimTime) -> Vec<ServerAction> {
        let mut out = Vec::new();
        match &self.outstanding {
            Some((m, _)) if m.seq == Some(seq) => {
                self.outstanding = None;
                self.seq = self.seq.wrapping_add(1);
                self.send_next(now, &mut out);
            }
            _ => self.stats.stale_acks += 1,
        }
        out
    }

    pub fn on_retransmit_timer(&mut self, seq: u8, epoch: u64, now: SimTime) -> Vec<ServerAction> {
        let mut out = Vec::new();
        if let Some((m, e)) = &self.outstanding {
            if m.seq == Some(seq) && *e == epoch {
                self.stats.retransmissions += 1;
                out.push(ServerAction::ToSwitch(m.clone()));
                out.push(ServerAction::ArmRetransmit {
                    seq,
                    epoch,
                    at: now + self.cfg.retransmit_ns,
                });
            }
        }
        out
    }

    // ---- control channel ---------------------------------------------

    /// Handles a controller message; returns the acknowledgement and any
    /// writes released by an unblock.
    pub fn on_control(
        &mut self,
        m: ControlToServer,
        ctx: &ServerContext<'_>,
    ) -> (ControlAck, Vec<ForwardedRequest>) {
        if let Some(ack) = self.seen_control.get(&m.msg_id()) {
            return (ack.clone(), Vec::new());
        }
        let msg = m.msg_id();
        let mut records = Vec::new();
        let mut unblock_id = None;
        match m {
            ControlToServer::FetchAndBlock {
                block_id,
                block,
                fetch,
                ..
            } => {
                self.add_block(block_id, block);
                for p in fetch {
                    let v = ctx.tree.get(&p).map(|r| VersionedRecord {
                        record: *r,
                        version: ctx.history.current_version(&p),
                    });
                    records.push((p, v));
                }
            }
            ControlToServer::Block {
                block_id, paths, ..
            } => self.add_block(block_id, paths),
            ControlToServer::Install {
                grants, unblock, ..
            } => {
                for TokenGrant {
                    path,
                    token,
                    generation,
                } in grants
                {
                    self.tokens.insert(path, CachedInfo { token, generation });
                }
                unblock_id = unblock;
            }
            ControlToServer::Remove { paths, unblock, .. } => {
                for p in paths {
                    self.tokens.remove(&p);
                }
                unblock_id = unblock;
            }
            ControlToServer::Unblock { block_id, .. } => unblock_id = Some(block_id),
        }
        let mut released = Vec::new();
        if let Some(b) = unblock_id {
            if let Some(paths) = self.blocks.remove(&b) {
                for p in paths {
                    if let Some(c) = self.blocked.get_mut(&p) {
                        *c -= 1;
                        if *c == 0 {
                            self.blocked.remove(&p);
                        }
                    }
                }
            }
            let parked = std::mem::take(&mut self.parked);
            for f in parked {
                if self.write_blocked(&f) {
                    self.parked.push(f);
                } else {
                    released.push(f);
                }
            }
        }
        let ack = ControlAck {
            msg,
            server: self.cfg.id,
            records,
        };
        self.seen_control.insert(msg, ack.clone());
        (ack, released)
    }

    fn add_block(&mut self, block_id: u64, paths: Vec<Path>) {
        if self.blocks.contains_key(&block_id) {
            return;
        }
        for p in &paths {
            *self.blocked.entry(p.clone()).or_default() += 1;
        }
        self.blocks.insert(block_id, paths);
    }

    /// Installs tokens directly, used when preloading the cache.
    pub fn install_tokens(&mut self, grants: impl IntoIterator<Item = TokenGrant>) {
        for g in grants {
            self.tokens.insert(
                g.path,
                CachedInfo {
                    token: g.token,
                    generation: g.generation,
                },
            );
        }
    }
}
