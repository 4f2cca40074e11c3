use super::*;

fn p(s: &str) -> Path {
    Path::parse(s).unwrap()
}

fn paths(v: &[&str]) -> Vec<Path> {
    v.iter().map(|s| p(s)).collect()
}

fn forest_of(v: &[&str]) -> CachedForest {
    let mut f = CachedForest::default();
    let mut all: Vec<Path> = vec![Path::root()];
    for s in v {
        all.extend(p(s).levels());
    }
    all.sort_by_key(|x| (x.depth(), x.clone()));
    all.dedup();
    for (i, x) in all.into_iter().enumerate() {
        let e = CachedEntry {
            slot: i as u32,
            key: HashKey(i as u64),
            token: Token(1),
            generation: i as u64,
            children: 0,
        };
        f.insert(x, e).unwrap();
    }
    f
}

fn freqs(v: &[(&str, u32)]) -> HashMap<Path, u32> {
    v.iter().map(|(s, f)| (p(s), *f)).collect()
}

#[test]
fn candidates_follow_lonely_ancestors() {
    let f = forest_of(&["/a/b.txt", "/e/f.txt"]);
    let reported = freqs(&[("/a", 1), ("/e", 1), ("/a/b.txt", 12), ("/e/f.txt", 5)]);
    let c = select_eviction_candidates(&f, &reported, 2, &BTreeSet::new());
    assert_eq!(c, paths(&["/e/f.txt", "/e", "/a/b.txt", "/a"]));
    let live = freqs(&[("/a", 0), ("/e", 0), ("/a/b.txt", 5), ("/e/f.txt", 10)]);
    let v = evict_until_space(&f, &c, &live, 0, 2, &BTreeSet::new());
    assert_eq!(v, paths(&["/a/b.txt", "/a"]));
}

#[test]
fn chain_candidate_includes_parent() {
    let f = forest_of(&["/x/y.txt"]);
    let c = select_eviction_candidates(&f, &HashMap::new(), 1, &BTreeSet::new());
    assert_eq!(c, paths(&["/x/y.txt", "/x"]));
}

#[test]
fn candidates_capped_at_twice_need() {
    let leaves: Vec<String> = (0..10).map(|i| format!("/d/f{i}")).collect();
    let refs: Vec<&str> = leaves.iter().map(String::as_str).collect();
    let f = forest_of(&refs);
    let c = select_eviction_candidates(&f, &HashMap::new(), 1, &BTreeSet::new());
    assert_eq!(c.len(), 2);
    assert!(select_eviction_candidates(&f, &HashMap::new(), 0, &BTreeSet::new()).is_empty());
}

#[test]
fn ancestor_with_other_children_is_kept() {
    let f = forest_of(&["/a/x", "/a/y"]);
    let c = select_eviction_candidates(&f, &HashMap::new(), 1, &BTreeSet::new());
    assert_eq!(c, paths(&["/a/x", "/a/y", "/a"]));
}

#[test]
fn ties_evict_deeper_path_first() {
    let f = forest_of(&["/a/b/c", "/z"]);
    let cands = paths(&["/a/b/c", "/a/b", "/a", "/z"]);
    let v = evict_until_space(&f, &cands, &HashMap::new(), 0, 1, &BTreeSet::new());
    assert_eq!(v, paths(&["/a/b/c", "/a/b", "/a"]));
    let again = evict_until_space(&f, &cands, &HashMap::new(), 0, 1, &BTreeSet::new());
    assert_eq!(v, again);
}

#[test]
fn protected_ancestors_are_not_listed() {
    let f = forest_of(&["/c/x"]);
    let protected: BTreeSet<Path> = [Path::root(), p("/c")].into_iter().collect();
    let c = select_eviction_candidates(&f, &HashMap::new(), 1, &protected);
    assert_eq!(c, paths(&["/c/x"]));
}

#[test]
fn forest_rejects_orphans() {
    let mut f = forest_of(&["/a"]);
    let e = *f.get(&p("/a")).unwrap();
    assert!(f.insert(p("/q/r"), e).is_err());
    f.insert(p("/a/b"), e).unwrap();
    assert!(f.remove(&p("/a")).is_err());
    f.remove(&p("/a/b")).unwrap();
    f.remove(&p("/a")).unwrap();
    f.check_closure().unwrap();
}

// ---- full admission against a real switch and servers --------------------

fn rig(capacity: usize, n_servers: usize, files: &[&str]) -> ControlLoop {
    ControlLoop::new(capacity, n_servers, &paths(files))
}

#[test]
fn eviction_example_end_to_end() {
    let mut rig = rig(5, 2, &["/a/b.txt", "/e/f.txt", "/c/d.txt"]);
    rig.preload(&paths(&["/a/b.txt", "/e/f.txt"]));
    for (x, f) in [("/a", 1), ("/e", 1), ("/a/b.txt", 12), ("/e/f.txt", 5)] {
        rig.ctl.set_reported(p(x), f);
    }
    rig.live_frequencies = Some(freqs(&[
        ("/a", 0),
        ("/e", 0),
        ("/a/b.txt", 5),
        ("/e/f.txt", 10),
    ]));
    rig.report_hot(&p("/c/d.txt")).unwrap();
    let want: BTreeSet<Path> = paths(&["/e", "/e/f.txt", "/c", "/c/d.txt"])
        .into_iter()
        .collect();
    assert_eq!(rig.controller_paths(), want);
    assert_eq!(rig.switch_paths(), want);
    assert_eq!(rig.ctl.stats.evicted_paths, 2);
    assert_eq!(rig.ctl.stats.admitted_paths, 2);
    assert!(!rig.ctl.is_busy());
    for s in &rig.servers {
        assert!(s.token_of(&p("/c/d.txt")).is_some());
        assert!(s.token_of(&p("/a/b.txt")).is_none());
        assert!(!s.is_blocked(&p("/c/d.txt")));
    }
    let evicts: Vec<&String> = rig
        .ctl
        .log
        .iter()
        .filter(|l| l.contains("\tevict\t"))
        .collect();
    assert_eq!(evicts.len(), 1);
    assert!(evicts[0].contains("/a/b.txt,/a"));
}

#[test]
fn readmission_reuses_tokens() {
    let mut rig = rig(3, 1, &["/a/x", "/b/y"]);
    rig.report_hot(&p("/a/x")).unwrap();
    let t = rig.ctl.forest().get(&p("/a/x")).unwrap().token;
    rig.report_hot(&p("/b/y")).unwrap();
    assert!(!rig.ctl.forest().contains(&p("/a/x")));
    rig.report_hot(&p("/a/x")).unwrap();
    assert_eq!(rig.ctl.forest().get(&p("/a/x")).unwrap().token, t);
}

#[test]
fn stale_and_missing_reports() {
    let mut rig = rig(8, 1, &["/a/x"]);
    rig.preload(&paths(&["/a/x"]));
    let out = rig.ctl.on_switch(SwitchToControl::HotReport(p("/a/x")), 0);
    assert!(matches!(
        out.as_slice(),
        [ControllerAction::ToSwitch(ControlToSwitch::ReportDone(_))]
    ));
    // A path that no longer exists aborts and leaves state unchanged.
    let before = rig.controller_paths();
    rig.report_hot(&p("/gone/z")).unwrap();
    assert_eq!(rig.controller_paths(), before);
    assert_eq!(rig.ctl.stats.aborted, 1);
    assert!(!rig.servers[0].is_blocked(&p("/gone/z")));
}

#[test]
fn lost_control_messages_are_retransmitted() {
    let mut rig = rig(8, 2, &["/a/x"]);
    rig.drop_server_msgs = 1;
    rig.report_hot(&p("/a/x")).unwrap();
    assert!(rig.ctl.forest().contains(&p("/a/x")));
    assert!(rig.ctl.stats.retransmissions >= 1);
}

#[test]
fn persistent_loss_aborts_admission() {
    let mut rig = rig(8, 1, &["/a/x"]);
    rig.drop_server_msgs = 6;
    rig.report_hot(&p("/a/x")).unwrap();
    assert!(!rig.ctl.forest().contains(&p("/a/x")));
    assert_eq!(rig.ctl.stats.aborted, 1);
    assert!(!rig.servers[0].is_blocked(&p("/a/x")));
}

#[test]
fn pull_replaces_reported_table() {
    let mut rig = rig(8, 1, &["/a/x"]);
    rig.preload(&paths(&["/a/x"]));
    rig.ctl.set_reported(p("/a"), 99);
    rig.pull().unwrap();
    assert_eq!(rig.ctl.reported().get(&p("/a")), Some(&0));
    assert_eq!(rig.ctl.stats.pulls, 1);
}

#[test]
fn weak_hash_collisions_get_distinct_tokens() {
    let files: Vec<String> = (0..60).map(|i| format!("/d/f{i}")).collect();
    let refs: Vec<&str> = files.iter().map(String::as_str).collect();
    let tree = rig(1, 1, &refs).tree;
    let mut rig = ControlLoop::with_tree(
        128,
        1,
        tree,
        PathHasher::new(crate::hashing::HashMode::WeakDepth),
    );
    for f in &refs {
        rig.report_hot(&p(f)).unwrap();
    }
    let mut seen = BTreeSet::new();
    for (_, e) in rig.ctl.forest().iter() {
        assert!(seen.insert((e.key, e.token)));
    }
    assert_eq!(rig.ctl.forest().len(), 62);
}
