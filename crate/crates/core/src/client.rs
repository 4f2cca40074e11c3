//! Logical clients: build requests with per-level keys and learned tokens,
//! learn tokens from responses, retransmit on timeout and record latency.

use std::collections::HashMap;

use crate::hashing::{PathHasher, PathTokenMap, Token};
use crate::namespace::{MetaOp, Path, Principal};
use crate::protocol::{
    write_lock, ClientRequest, ClientResponse, LockMode, RequestId, ServedBy, WriteTarget,
};
use crate::SimTime;

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub id: u32,
    pub principal: Principal,
    pub hasher: PathHasher,
    pub lock_mode: LockMode,
    pub token_ttl: SimTime,
    pub timeout: SimTime,
}

/// One completed request, as written to the latency log.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRecord {
    pub client: u32,
    pub op: crate::namespace::OpKind,
    pub depth: usize,
    pub hit: bool,
    pub latency: SimTime,
    pub completed_at: SimTime,
    pub recirculations: u32,
    pub resolution: u32,
    pub lock_wait: u32,
    pub cross_pipe: u32,
}

impl LatencyRecord {
    pub const CSV_HEADER: &'static str = "client,op,depth,hit,latency_ns";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.client, self.op, self.depth, self.hit as u8, self.latency
        )
    }
}

#[derive(Debug, Clone)]
struct InFlight {
    req: ClientRequest,
    first_sent: SimTime,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub issued: u64,
    pub completed: u64,
    pub retransmissions: u64,
    pub stale_responses: u64,
}

pub struct ClientDriver {
    cfg: ClientConfig,
    tokens: PathTokenMap,
    /// Every token any response ever carried, for the no-fabrication check.
    learned: HashMap<Path, Vec<Token>>,
    in_flight: HashMap<u64, InFlight>,
    next_seq: u64,
    pub stats: ClientStats,
}

impl ClientDriver {
    pub fn new(cfg: ClientConfig) -> Self {
        Self {
            tokens: PathTokenMap::with_ttl(cfg.token_ttl),
            cfg,
            learned: HashMap::new(),
            in_flight: HashMap::new(),
            next_seq: 0,
            stats: ClientStats::default(),
        }
    }

    pub fn id(&self) -> u32 {
        self.cfg.id
    }

    pub fn outstanding(&self) -> usize {
        self.in_flight.len()
    }

    pub fn token_map(&self) -> &PathTokenMap {
        &self.tokens
    }

    fn write_target(&mut self, p: &Path, now: SimTime) -> WriteTarget {
        let keys = self.cfg.hasher.hash_read_request(p);
        WriteTarget {
            path: p.clone(),
            key: keys[p.depth()],
            token: self.tokens.token_for(p, now),
            lock: write_lock(self.cfg.lock_mode, p.depth(), &keys),
        }
    }

    /// Builds the request for `op` and remembers it until answered.
    pub fn issue(&mut self, op: MetaOp, now: SimTime) -> ClientRequest {
        self.next_seq += 1;
        self.stats.issued += 1;
        let mut keys = Vec::new();
        let mut tokens = Vec::new();
        let mut writes = Vec::new();
        if op.kind.is_read() {
            keys = self.cfg.hasher.hash_read_request(&op.target);
            tokens = op
                .target
                .levels()
                .iter()
                .map(|l| {
                    if l.is_root() {
                        Token::ROOT
                    } else {
                        self.tokens.token_for(l, now)
                    }
                })
                .collect();
        } else {
            writes.push(self.write_target(&op.target, now));
            if let Some(d) = op.dest().cloned() {
                writes.push(self.write_target(&d, now));
            }
        }
        let req = ClientRequest {
            id: RequestId {
                client: self.cfg.id,
                seq: self.next_seq,
            },
            attempt: 0,
            op,
            principal: self.cfg.principal,
            keys,
            tokens,
            writes,
            sent_at: now,
        };
        self.in_flight.insert(
            self.next_seq,
            InFlight {
                req: req.clone(),
                first_sent: now,
            },
        );
        req
    }

    /// Deadline for the latest copy of request `seq`.
    pub fn deadline(&self, seq: u64) -> Option<SimTime> {
        self.in_flight
            .get(&seq)
            .map(|f| f.req.sent_at + self.cfg.timeout)
    }

    /// Retransmits an unanswered request whose timer for `attempt` expired.
    pub fn on_timeout(&mut self, seq: u64, attempt: u32, now: SimTime) -> Option<ClientRequest> {
        let f = self.in_flight.get_mut(&seq)?;
        if f.req.attempt != attempt {
            return None;
        }
        f.req.attempt += 1;
        f.req.sent_at = now;
        self.stats.retransmissions += 1;
        Some(f.req.clone())
    }

    /// Merges tokens and completes the request; returns its latency record.
    /// Responses to requests no longer in flight are ignored.
    pub fn on_response(&mut self, resp: &ClientResponse, now: SimTime) -> Option<LatencyRecord> {
        let Some(f) = self.in_flight.remove(&resp.id.seq) else {
            self.stats.stale_responses += 1;
            return None;
        };
        for (p, t) in &resp.tokens {
            if t.is_valid() {
                self.tokens.set(p.clone(), *t, now);
                let seen = self.learned.entry(p.clone()).or_default();
                if !seen.contains(t) {
                    seen.push(*t);
                }
            } else {
                // The server no longer knows the path as cached.
                self.tokens.remove(p);
            }
        }
        self.stats.completed += 1;
        Some(LatencyRecord {
            client: self.cfg.id,
            op: f.req.op.kind,
            depth: f.req.op.target.depth(),
            hit: resp.served_by == ServedBy::Switch,
            latency: now - f.first_sent,
            completed_at: now,
            recirculations: resp.stats.recirculations(),
            resolution: resp.stats.resolution,
            lock_wait: resp.stats.lock_wait,
            cross_pipe: resp.stats.cross_pipe,
        })
    }

    /// True if every nonzero token in `req` was received from a server.
    pub fn tokens_were_learned(&self, req: &ClientRequest) -> bool {
        let ok = |p: &Path, t: Token| {
            p.is_root() || !t.is_valid() || self.learned.get(p).is_some_and(|v| v.contains(&t))
        };
        let levels = req.op.target.levels();
        req.tokens.iter().zip(levels.iter()).all(|(t, p)| ok(p, *t))
            && req.writes.iter().all(|w| ok(&w.path, w.token))
    }
}
