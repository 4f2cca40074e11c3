use super::*;
use crate::hashing::PathHasher;
use crate::namespace::{MetaOp, OpArgs, OpKind, Principal};
use crate::protocol::{write_lock, RequestId, Revalidation, WriteTarget};

const ALICE: Principal = Principal::new(10, 10);

fn p(s: &str) -> Path {
    Path::parse(s).unwrap()
}

fn dir() -> MetadataRecord {
    MetadataRecord::directory(0o755, ALICE, 0)
}

fn file() -> MetadataRecord {
    MetadataRecord::file(0o644, ALICE, 0)
}

struct Rig {
    sw: Switch,
    hasher: PathHasher,
    next_req: u64,
}

impl Rig {
    fn new(lock_mode: LockMode) -> Self {
        let sw = Switch::new(SwitchConfig {
            capacity: 64,
            lock_mode,
            cross_pipe_redirect: false,
            ..SwitchConfig::default()
        });
        Self {
            sw,
            hasher: PathHasher::default(),
            next_req: 0,
        }
    }

    /// Caches `path` and all its ancestors with token 1 and sequential slots.
    fn cache(&mut self, path: &str, leaf: MetadataRecord) {
        let path = p(path);
        let mut entries = Vec::new();
        for l in path.levels().into_iter().skip(1) {
            let key = self.hasher.hash_level(&l);
            if self.sw.cache_lookup(key, Token(1)).is_some() {
                continue;
            }
            let slot = (self.sw.cached_count() + entries.len() + 1) as u32;
            let record = if l == path { leaf } else { dir() };
            entries.push(AdmitEntry {
                path: l,
                key,
                token: Token(1),
                slot,
                generation: slot as u64,
                value: VersionedRecord { record, version: 0 },
            });
        }
        self.sw.admit(&entries).unwrap();
    }

    fn request(&mut self, kind: OpKind, path: &str, known: bool) -> ClientRequest {
        self.next_req += 1;
        let path = p(path);
        let keys = self.hasher.hash_read_request(&path);
        let tok = if known { Token(1) } else { Token::INVALID };
        let (rkeys, tokens, writes) = if kind.is_write() {
            let t = WriteTarget {
                path: path.clone(),
                key: keys[path.depth()],
                token: tok,
                lock: write_lock(self.sw.config().lock_mode, path.depth(), &keys),
            };
            (Vec::new(), Vec::new(), vec![t])
        } else {
            let mut tokens = vec![tok; keys.len()];
            tokens[0] = Token::ROOT;
            (keys, tokens, Vec::new())
        };
        ClientRequest {
            id: RequestId {
                client: 0,
                seq: self.next_req,
            },
            attempt: 0,
            op: MetaOp::with_args(kind, path, OpArgs::None),
            principal: ALICE,
            keys: rkeys,
            tokens,
            writes,
            sent_at: 0,
        }
    }

    /// Runs a packet through recirculations until it leaves the switch.
    fn run(&mut self, req: ClientRequest) -> Vec<SwitchAction> {
        let mut pending = self.sw.on_client_request(req, 0);
        let mut done = Vec::new();
        let mut now = 0;
        while let Some(a) = pending.pop() {
            match a {
                SwitchAction::Recirculate(r) => {
                    now += 200;
                    pending.extend(self.sw.on_recirculate(*r, now));
                }
                other => done.push(other),
            }
        }
        done
    }
}

fn client_response(actions: &[SwitchAction]) -> &ClientResponse {
    actions
        .iter()
        .find_map(|a| match a {
            SwitchAction::ToClient(r) => Some(r),
            _ => None,
        })
        .expect("client response")
}

fn forwarded(actions: &[SwitchAction]) -> &ForwardedRequest {
    actions
        .iter()
        .find_map(|a| match a {
            SwitchAction::ToServer {
                msg: SwitchToServer::Request(f),
                ..
            } => Some(f),
            _ => None,
        })
        .expect("forwarded request")
}

#[test]
fn cached_read_resolves_every_level_in_switch() {
    for d in 1..=9usize {
        let mut rig = Rig::new(LockMode::Multi);
        let path: String = (0..d).map(|i| format!("/l{i}")).collect();
        rig.cache(&path, file());
        let req = rig.request(OpKind::Stat, &path, true);
        let out = rig.run(req);
        let r = client_response(&out);
        assert_eq!(r.served_by, ServedBy::Switch);
        assert!(matches!(r.result, Ok(OpReply::Record(_))));
        assert_eq!(r.stats.resolution as usize, d - 1, "depth {d}");
        assert_eq!(r.observed.len(), d);
        assert!(rig.sw.nonzero_locks().is_empty());
    }
}

#[test]
fn root_read_is_answered_from_pipeline_constant() {
    let mut rig = Rig::new(LockMode::Multi);
    let req = rig.request(OpKind::Statdir, "/", true);
    let out = rig.run(req);
    let r = client_response(&out);
    assert_eq!(r.served_by, ServedBy::Switch);
    assert_eq!(r.stats.recirculations(), 0);
}

#[test]
fn traversal_permission_failure_releases_locks() {
    let mut rig = Rig::new(LockMode::Multi);
    rig.cache("/a/b/c", file());
    let slot = rig
        .sw
        .cache_lookup(rig.hasher.hash_level(&p("/a")), Token(1))
        .unwrap();
    let mut locked = dir();
    locked.mode = 0o700;
    locked.owner = 99;
    locked.group = 99;
    rig.sw.values.write(slot as usize, &locked);
    let req = rig.request(OpKind::Stat, "/a/b/c", true);
    let out = rig.run(req);
    assert_eq!(client_response(&out).result, Err(OpError::PermissionDenied));
    assert!(rig.sw.nonzero_locks().is_empty());
}

#[test]
fn read_miss_reports_hot_path_once() {
    let mut rig = Rig::new(LockMode::Multi);
    let mut reports = 0;
    for _ in 0..40 {
        let req = rig.request(OpKind::Open, "/x/y", false);
        let out = rig.run(req);
        forwarded(&out);
        reports += out
            .iter()
            .filter(|a| matches!(a, SwitchAction::HotReport(_)))
            .count();
    }
    assert_eq!(reports, 1);
    rig.sw.report_done(&p("/x/y"));
    rig.sw.reset_sketch();
    assert_eq!(rig.sw.cms_estimate(rig.hasher.hash_level(&p("/x/y"))), 0);
}

#[test]
fn uncontended_write_costs_one_lock_check() {
    let mut rig = Rig::new(LockMode::Multi);
    rig.cache("/a/f", file());
    let req = rig.request(OpKind::Chmod, "/a/f", true);
    let out = rig.run(req);
    let f = forwarded(&out);
    assert_eq!(f.stats.lock_wait, 1);
    assert_eq!(f.invalidated.len(), 1);
    let slot = rig
        .sw
        .cache_lookup(rig.hasher.hash_level(&p("/a/f")), Token(1))
        .unwrap();
    assert!(!rig.sw.slot_valid(slot));
}

#[test]
fn write_to_uncached_path_is_forwarded_without_recirculation() {
    let mut rig = Rig::new(LockMode::Multi);
    let req = rig.request(OpKind::Chmod, "/a/f", true);
    let out = rig.run(req);
    assert_eq!(forwarded(&out).stats.lock_wait, 0);
}

fn reply_for(f: &ForwardedRequest, record: MetadataRecord, version: u64) -> ServerReply {
    ServerReply {
        id: f.req.id,
        attempt: 0,
        op: f.req.op.kind,
        target: f.req.op.target.clone(),
        result: Ok(OpReply::Done),
        tokens: Vec::new(),
        release: f.held.clone(),
        revalidate: f
            .invalidated
            .iter()
            .map(|inv| Revalidation {
                path: inv.path.clone(),
                key: inv.key,
                token: inv.token,
                generation: inv.generation,
                value: Some(VersionedRecord { record, version }),
            })
            .collect(),
        barrier: None,
        stats: f.stats,
        switch_arrival: 0,
        version: Some(version),
    }
}

#[test]
fn revalidation_writes_value_and_duplicates_are_ignored() {
    let mut rig = Rig::new(LockMode::Multi);
    rig.cache("/a/f", file());
    let req = rig.request(OpKind::Chmod, "/a/f", true);
    let out = rig.run(req);
    let f = forwarded(&out).clone();
    let mut newrec = file();
    newrec.mode = 0o600;
    let msg = ServerToSwitch {
        server: 0,
        seq: Some(0),
        msg: ServerMsg::Reply(reply_for(&f, newrec, 7)),
    };
    let out = rig.sw.on_server_message(msg.clone(), 10);
    assert!(out.iter().any(|a| matches!(
        a,
        SwitchAction::ToServer {
            msg: SwitchToServer::Ack { seq: 0 },
            ..
        }
    )));
    client_response(&out);
    let slot = rig
        .sw
        .cache_lookup(rig.hasher.hash_level(&p("/a/f")), Token(1))
        .unwrap();
    assert!(rig.sw.slot_valid(slot));
    assert_eq!(rig.sw.slot_record(slot).unwrap().mode, 0o600);
    assert_eq!(rig.sw.stats.cache_writes, 1);
    // A retransmission of the same response is acknowledged but not applied.
    let out = rig.sw.on_server_message(msg, 20);
    assert_eq!(out.len(), 1);
    assert_eq!(rig.sw.stats.duplicate_seq, 1);
    assert_eq!(rig.sw.stats.cache_writes, 1);
    assert_eq!(rig.sw.expected_seq(0), 1);
}

#[test]
fn forwarded_read_lock_is_released_once() {
    let mut rig = Rig::new(LockMode::Multi);
    rig.cache("/a/f", file());
    // Invalidate /a/f so the read stops at the last level holding its lock.
    let w = rig.request(OpKind::Chmod, "/a/f", true);
    let wf = forwarded(&rig.run(w)).clone();
    let r = rig.request(OpKind::Stat, "/a/f", true);
    let rf = forwarded(&rig.run(r)).clone();
    assert_eq!(rf.held.len(), 1);
    let l = rf.held[0];
    assert_eq!(rig.sw.lock_count(l), 1);
    let msg = ServerToSwitch {
        server: 0,
        seq: Some(0),
        msg: ServerMsg::Reply(reply_for(&rf, file(), 0)),
    };
    rig.sw.on_server_message(msg.clone(), 5);
    rig.sw.on_server_message(msg, 6);
    assert_eq!(rig.sw.lock_count(l), 0);
    assert_eq!(rig.sw.stats.lock_decrements_from_server, 1);
    assert!(rig.sw.violations.is_empty());
    // Out-of-window sequence numbers are dropped silently.
    let stray = ServerToSwitch {
        server: 0,
        seq: Some(100),
        msg: ServerMsg::Reply(reply_for(&wf, file(), 1)),
    };
    assert!(rig.sw.on_server_message(stray, 7).is_empty());
    assert_eq!(rig.sw.stats.out_of_window_seq, 1);
}

#[test]
fn write_waits_for_readers_to_drain() {
    let mut rig = Rig::new(LockMode::Multi);
    rig.cache("/a/f", file());
    // Start a read and stop after its first traversal: it holds its locks.
    let r = rig.request(OpKind::Stat, "/a/f", true);
    let out = rig.sw.on_client_request(r, 0);
    let SwitchAction::Recirculate(read_pkt) = out.into_iter().next().unwrap() else {
        panic!("read should recirculate")
    };
    let w = rig.request(OpKind::Chmod, "/a/f", true);
    let out = rig.sw.on_client_request(w, 0);
    let SwitchAction::Recirculate(write_pkt) = out.into_iter().next().unwrap() else {
        panic!("write should recirculate")
    };
    assert!(rig.sw.on_recirculate(*write_pkt, 200).is_empty());
    assert!(!rig.sw.is_idle());
    let out = rig.sw.on_recirculate(*read_pkt, 1000);
    client_response(&out);
    let wake = out
        .iter()
        .find_map(|a| match a {
            SwitchAction::Wake { at, waiter } => Some((*at, *waiter)),
            _ => None,
        })
        .unwrap();
    assert_eq!(wake.0, 1000);
    let out = rig.sw.on_wake(wake.1, wake.0);
    let f = forwarded(&out);
    // One check at entry, then one per poll while the read held the lock.
    assert_eq!(f.stats.lock_wait, 1 + 4);
    assert!(rig.sw.is_idle());
}

#[test]
fn single_lock_shares_first_level_counter() {
    let mut rig = Rig::new(LockMode::Single);
    rig.cache("/a/b/c", file());
    rig.cache("/a/x", file());
    let r = rig.request(OpKind::Stat, "/a/b/c", true);
    let out = rig.sw.on_client_request(r, 0);
    let SwitchAction::Recirculate(read_pkt) = out.into_iter().next().unwrap() else {
        panic!()
    };
    let keys = rig.hasher.hash_read_request(&p("/a/b/c"));
    assert_eq!(rig.sw.lock_count(lock_index(1, &keys)), 1);
    // A write to a sibling subtree shares the counter and must wait.
    let w = rig.request(OpKind::Chmod, "/a/x", true);
    let out = rig.sw.on_client_request(w, 0);
    let SwitchAction::Recirculate(write_pkt) = out.into_iter().next().unwrap() else {
        panic!()
    };
    assert!(rig.sw.on_recirculate(*write_pkt, 200).is_empty());
    let _ = read_pkt;
}

#[test]
fn admit_and_evict_validate_entries() {
    let mut rig = Rig::new(LockMode::Multi);
    rig.cache("/a", dir());
    let key = rig.hasher.hash_level(&p("/a"));
    let dup = AdmitEntry {
        path: p("/a"),
        key,
        token: Token(1),
        slot: 9,
        generation: 9,
        value: VersionedRecord {
            record: dir(),
            version: 0,
        },
    };
    assert!(matches!(
        rig.sw.admit(&[dup]),
        Err(SwitchError::DuplicateEntry { .. })
    ));
    assert!(matches!(
        rig.sw.evict(&[(key, Token(2))]),
        Err(SwitchError::UnknownEntry { .. })
    ));
    assert_eq!(rig.sw.evict(&[(key, Token(1))]).unwrap(), vec![1]);
    assert_eq!(rig.sw.cached_count(), 0);
}

#[test]
fn nocache_mode_forwards_everything() {
    let mut rig = Rig::new(LockMode::Multi);
    rig.sw.cfg.caching = false;
    rig.cache("/a/f", file());
    let req = rig.request(OpKind::Stat, "/a/f", true);
    let out = rig.run(req);
    assert_eq!(forwarded(&out).stats, PacketStats::default());
}
