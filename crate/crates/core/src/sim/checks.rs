//! Correctness checks: every in-switch answer against the version history,
//! and a full audit of switch, servers and controller at quiescence.

use std::collections::BTreeMap;

use crate::controller::Controller;
use crate::history::History;
use crate::namespace::{NamespaceTree, OpReply, Path};
use crate::protocol::{ClientResponse, ServedBy};
use crate::server::MetadataServer;
use crate::switch::Switch;
use crate::SimTime;

/// Checks a response the switch produced from its cache at time `now`.
///
/// Each observed level must hold a version that was current at some point
/// while the packet was inside the switch, the last observation must be
/// the requested path (or, for a denial, one of its ancestors), the returned record must be the recorded one, and
/// no recursive write may be seen on some levels but not on others.
pub fn check_switch_response(
    resp: &ClientResponse,
    history: &History,
    now: SimTime,
) -> Vec<String> {
    let mut bad = Vec::new();
    if resp.served_by != ServedBy::Switch {
        return bad;
    }
    let id = resp.id;
    if let Some(last) = resp.observed.last() {
        // A denial stops at the directory that refused traversal.
        if last.path != resp.target
            && (resp.result.is_ok() || !last.path.is_ancestor_of(&resp.target))
        {
            bad.push(format!(
                "{id:?}: asked for {} but resolved {}",
                resp.target, last.path
            ));
        }
    } else if resp.result.is_ok() {
        bad.push(format!(
            "{id:?}: answer for {} without observations",
            resp.target
        ));
    }
    for o in &resp.observed {
        match history.lookup(&o.path, o.version) {
            None => bad.push(format!("{id:?}: {} has no version {}", o.path, o.version)),
            Some((e, until)) => {
                if e.time > now || until.is_some_and(|u| u < resp.switch_arrival) {
                    bad.push(format!(
                        "{id:?}: {} version {} valid [{}, {:?}) outside [{}, {now}]",
                        o.path, o.version, e.time, until, resp.switch_arrival
                    ));
                }
            }
        }
    }
    if let (Ok(OpReply::Record(rec)), Some(v)) = (&resp.result, resp.version) {
        let expected = history.lookup(&resp.target, v).and_then(|(e, _)| e.record);
        if expected.as_ref() != Some(rec) {
            bad.push(format!(
                "{id:?}: record for {} differs from version {v}",
                resp.target
            ));
        }
    }
    for a in &resp.observed {
        for later in history.later(&a.path, a.version) {
            let Some(w) = later.write else { continue };
            let Some(touched) = history.multi_write(w) else {
                continue;
            };
            for b in &resp.observed {
                if let Some(&vb) = touched.get(&b.path) {
                    if b.version >= vb {
                        bad.push(format!(
                            "{id:?}: recursive write {w} seen on {} but not on {}",
                            b.path, a.path
                        ));
                    }
                }
            }
        }
    }
    bad
}

/// Audit once no event is pending.
pub fn audit_quiescent(
    switch: &Switch,
    servers: &[MetadataServer],
    controller: Option<&Controller>,
    tree: &NamespaceTree,
    history: &History,
) -> Vec<String> {
    let mut bad = Vec::new();
    for (l, c) in switch.nonzero_locks() {
        bad.push(format!("lock {}:{} still at {c}", l.array, l.slot));
    }
    if !switch.is_idle() {
        bad.push("switch still holds parked writes or queued mutations".into());
    }
    let mut cached = BTreeMap::new();
    for (slot, info) in switch.occupied_slots() {
        cached.insert(info.path.clone(), (info.token, info.generation));
        if info.pending_writes != 0 {
            bad.push(format!("slot {slot} ({}) invalid at quiescence", info.path));
            continue;
        }
        let Some(rec) = switch.slot_record(slot) else {
            bad.push(format!("slot {slot} ({}) unreadable", info.path));
            continue;
        };
        match tree.get(&info.path) {
            Some(server_rec) => {
                if rec.encode() != server_rec.encode() {
                    bad.push(format!(
                        "slot {slot} ({}) differs from the server record",
                        info.path
                    ));
                }
            }
            None if !rec.deleted => {
                bad.push(format!("slot {slot} ({}) caches a removed path", info.path))
            }
            None => {}
        }
        if info.version != history.current_version(&info.path) {
            bad.push(format!(
                "slot {slot} ({}) at version {} but server at {}",
                info.path,
                info.version,
                history.current_version(&info.path)
            ));
        }
    }
    for s in servers {
        if !s.is_idle() {
            bad.push(format!("server {} not idle", s.id()));
        }
        if switch.expected_seq(s.id()) != s.seq() {
            bad.push(format!(
                "server {} at seq {} but switch expects {}",
                s.id(),
                s.seq(),
                switch.expected_seq(s.id())
            ));
        }
    }
    if let Some(ctl) = controller {
        if ctl.is_busy() {
            bad.push("controller still busy".into());
        }
        if let Err(e) = ctl.forest().check_closure() {
            bad.push(e.to_string());
        }
        let forest: BTreeMap<Path, _> = ctl
            .forest()
            .iter()
            .filter(|(p, _)| !p.is_root())
            .map(|(p, e)| (p.clone(), (e.token, e.generation)))
            .collect();
        if forest != cached {
            bad.push(format!(
                "controller tracks {} paths, switch caches {}",
                forest.len(),
                cached.len()
            ));
        }
        for s in servers {
            let held: BTreeMap<Path, _> = s
                .cached_paths()
                .map(|(p, i)| (p.clone(), (i.token, i.generation)))
                .collect();
            if held != forest {
                bad.push(format!(
                    "server {} holds {} tokens, controller {}",
                    s.id(),
                    held.len(),
                    forest.len()
                ));
            }
        }
    }
    if let Err(e) = tree.check_invariants() {
        bad.push(e.to_string());
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::namespace::{MetadataRecord, OpKind, Principal};
    use crate::protocol::{Observation, PacketStats, RequestId};

    fn p(s: &str) -> Path {
        Path::parse(s).unwrap()
    }

    fn setup() -> (History, MetadataRecord, MetadataRecord) {
        let who = Principal::new(1, 1);
        let mut t = NamespaceTree::default();
        let a = MetadataRecord::directory(0o755, who, 0);
        t.insert(p("/a"), a).unwrap();
        t.insert(p("/a/f"), MetadataRecord::file(0o644, who, 0))
            .unwrap();
        let mut h = History::from_tree(&t);
        let mut a2 = a;
        a2.mode = 0o700;
        let mut f2 = MetadataRecord::file(0o644, who, 0);
        f2.mode = 0o600;
        h.commit(&p("/a"), 100, Some(a2), Some(1));
        h.commit(&p("/a/f"), 100, Some(f2), Some(1));
        (h, a, f2)
    }

    fn resp(
        observed: Vec<(&str, u64)>,
        rec: MetadataRecord,
        v: u64,
        at: SimTime,
    ) -> ClientResponse {
        ClientResponse {
            id: RequestId { client: 0, seq: 1 },
            attempt: 0,
            op: OpKind::Stat,
            target: p("/a/f"),
            result: Ok(OpReply::Record(rec)),
            tokens: Vec::new(),
            stats: PacketStats::default(),
            served_by: ServedBy::Switch,
            switch_arrival: at,
            version: Some(v),
            observed: observed
                .into_iter()
                .map(|(s, v)| Observation {
                    path: p(s),
                    version: v,
                })
                .collect(),
        }
    }

    #[test]
    fn mixed_recursive_state_is_flagged() {
        let (h, _, f2) = setup();
        let r = resp(vec![("/a", 0), ("/a/f", 2)], f2, 2, 150);
        let bad = check_switch_response(&r, &h, 160);
        assert!(bad.iter().any(|m| m.contains("recursive write")), "{bad:?}");
        let ok = resp(vec![("/a", 1), ("/a/f", 2)], f2, 2, 150);
        assert!(check_switch_response(&ok, &h, 160).is_empty());
    }

    #[test]
    fn stale_version_and_collider_are_flagged() {
        let (h, a, _) = setup();
        let old = h.lookup(&p("/a/f"), 0).unwrap().0.record.unwrap();
        let r = resp(vec![("/a", 0), ("/a/f", 0)], old, 0, 500);
        assert!(!check_switch_response(&r, &h, 600).is_empty());
        let mut r = resp(vec![("/a", 0), ("/a", 0)], a, 0, 50);
        r.version = Some(0);
        assert!(check_switch_response(&r, &h, 60)
            .iter()
            .any(|m| m.contains("resolved")));
    }

    #[test]
    fn denial_may_stop_at_an_ancestor_only() {
        let (h, a, _) = setup();
        let mut r = resp(vec![("/a", 0)], a, 0, 50);
        r.result = Err(crate::namespace::OpError::PermissionDenied);
        r.version = None;
        assert!(check_switch_response(&r, &h, 60).is_empty());
        r.observed[0].path = p("/b");
        assert!(check_switch_response(&r, &h, 60)
            .iter()
            .any(|m| m.contains("resolved")));
    }
}
