//! Messages exchanged between clients, the switch, servers and the
//! controller.

use serde::{Deserialize, Serialize};

use crate::hashing::{HashKey, Token};
use crate::namespace::{MetaOp, MetadataRecord, OpKind, OpResult, Path, Principal};
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestId {
    pub client: u32,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LockMode {
    /// One counter array per level, levels 8 and deeper share array 8.
    #[default]
    Multi,
    /// Every path locks array 1 at its first-level prefix.
    Single,
}

/// A lock counter: array 1..=8 and a 16-bit slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LockRef {
    pub array: u8,
    pub slot: u16,
}

pub const LOCK_ARRAYS: usize = 8;

/// Counter guarding `level` of a path whose per-level keys are `keys`
/// (`keys[0]` is the root). Levels from 8 down share the level-8 key.
pub fn lock_index(level: usize, keys: &[HashKey]) -> LockRef {
    assert!(level >= 1, "the root has no lock");
    let l = level.min(LOCK_ARRAYS);
    LockRef {
        array: l as u8,
        slot: keys[l].low16(),
    }
}

/// Counter a write to a path of depth `depth` must find at zero.
pub fn write_lock(mode: LockMode, depth: usize, keys: &[HashKey]) -> LockRef {
    match mode {
        LockMode::Multi => lock_index(depth, keys),
        LockMode::Single => lock_index(1, keys),
    }
}

/// Per-request recirculation accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PacketStats {
    pub resolution: u32,
    pub lock_wait: u32,
    pub cross_pipe: u32,
}

impl PacketStats {
    /// Ingress re-entries excluding the cross-pipeline redirect.
    pub fn recirculations(&self) -> u32 {
        self.resolution + self.lock_wait
    }
}

/// One path a write may modify in the cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteTarget {
    pub path: Path,
    pub key: HashKey,
    pub token: Token,
    pub lock: LockRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientRequest {
    pub id: RequestId,
    pub attempt: u32,
    pub op: MetaOp,
    pub principal: Principal,
    /// Reads: one key per level, root first.
    pub keys: Vec<HashKey>,
    /// Reads: tokens aligned with `keys`.
    pub tokens: Vec<Token>,
    /// Writes: the target, then a rename destination.
    pub writes: Vec<WriteTarget>,
    pub sent_at: SimTime,
}

/// A cache slot a write packet turned invalid on its way to the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invalidation {
    pub path: Path,
    pub key: HashKey,
    pub token: Token,
    pub generation: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardedRequest {
    pub req: ClientRequest,
    /// Lock counters the switch still holds for this read.
    pub held: Vec<LockRef>,
    pub invalidated: Vec<Invalidation>,
    pub stats: PacketStats,
    pub switch_arrival: SimTime,
}

impl ForwardedRequest {
    pub fn is_lock_related(&self) -> bool {
        !self.held.is_empty() || !self.invalidated.is_empty()
    }
}

/// A record plus the history version it corresponds to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionedRecord {
    pub record: MetadataRecord,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revalidation {
    pub path: Path,
    pub key: HashKey,
    pub token: Token,
    pub generation: u64,
    /// `None` when the write failed and the old value stays.
    pub value: Option<VersionedRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Barrier {
    pub write_id: u64,
    pub updates: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerReply {
    pub id: RequestId,
    pub attempt: u32,
    pub op: OpKind,
    pub target: Path,
    pub result: OpResult,
    pub tokens: Vec<(Path, Token)>,
    pub release: Vec<LockRef>,
    pub revalidate: Vec<Revalidation>,
    pub barrier: Option<Barrier>,
    pub stats: PacketStats,
    pub switch_arrival: SimTime,
    /// Version of the target record the reply reflects.
    pub version: Option<u64>,
}

/// Value refresh for a cached descendant of a recursive write.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescendantUpdate {
    pub write_id: u64,
    pub path: Path,
    pub key: HashKey,
    pub token: Token,
    pub generation: u64,
    pub lock: LockRef,
    pub value: VersionedRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServerMsg {
    Reply(ServerReply),
    Update(DescendantUpdate),
    /// A write on a cached path that reached the server without
    /// invalidating the cache; the switch must process it again.
    Bounce(ForwardedRequest),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerToSwitch {
    pub server: usize,
    /// Present on lock-related messages only.
    pub seq: Option<u8>,
    pub msg: ServerMsg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwitchToServer {
    Request(ForwardedRequest),
    Ack { seq: u8 },
}

/// Where a client-visible answer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServedBy {
    Switch,
    Server(usize),
}

/// One resolved level of an in-switch read, for history checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub path: Path,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientResponse {
    pub id: RequestId,
    pub attempt: u32,
    pub op: OpKind,
    pub target: Path,
    pub result: OpResult,
    pub tokens: Vec<(Path, Token)>,
    pub stats: PacketStats,
    pub served_by: ServedBy,
    pub switch_arrival: SimTime,
    pub version: Option<u64>,
    pub observed: Vec<Observation>,
}

impl ClientResponse {
    pub fn from_reply(r: ServerReply, server: usize) -> Self {
        Self {
            id: r.id,
            attempt: r.attempt,
            op: r.op,
            target: r.target,
            result: r.result,
            tokens: r.tokens,
            stats: r.stats,
            served_by: ServedBy::Server(server),
            switch_arrival: r.switch_arrival,
            version: r.version,
            observed: Vec::new(),
        }
    }
}

/// Token handed to a server for one cached path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrant {
    pub path: Path,
    pub token: Token,
    pub generation: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlToServer {
    /// Block writes to `block` and return the records of `fetch`.
    FetchAndBlock {
        msg: u64,
        block_id: u64,
        block: Vec<Path>,
        fetch: Vec<Path>,
    },
    Block {
        msg: u64,
        block_id: u64,
        paths: Vec<Path>,
    },
    Install {
        msg: u64,
        grants: Vec<TokenGrant>,
        unblock: Option<u64>,
    },
    Remove {
        msg: u64,
        paths: Vec<Path>,
        unblock: Option<u64>,
    },
    Unblock {
        msg: u64,
        block_id: u64,
    },
}

impl ControlToServer {
    pub fn msg_id(&self) -> u64 {
        match self {
            ControlToServer::FetchAndBlock { msg, .. }
            | ControlToServer::Block { msg, .. }
            | ControlToServer::Install { msg, .. }
            | ControlToServer::Remove { msg, .. }
            | ControlToServer::Unblock { msg, .. } => *msg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlAck {
    pub msg: u64,
    pub server: usize,
    pub records: Vec<(Path, Option<VersionedRecord>)>,
}

#[derive(Debug, Clone)]
pub enum ControlToSwitch {
    Admit {
        msg: u64,
        entries: Vec<crate::switch::AdmitEntry>,
    },
    Evict {
        msg: u64,
        entries: Vec<(HashKey, Token)>,
    },
    ReadFrequencies {
        msg: u64,
        slots: Vec<u32>,
    },
    /// Snapshot all frequency counters, then reset them and the sketch.
    PullAndReset {
        msg: u64,
    },
    ReportDone(Path),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SwitchToControl {
    Done { msg: u64 },
    Frequencies { msg: u64, counts: Vec<u32> },
    Pulled { msg: u64, counts: Vec<(u32, u32)> },
    HotReport(Path),
}
