//! Differential test of the namespace tree against a deliberately naive
//! reference that keeps every node in a flat map keyed by its path string.

use std::collections::BTreeMap;

use fletchsim::namespace::{
    MetaOp, MetadataRecord, NamespaceTree, NodeKind, OpArgs, OpError, OpKind, OpReply, Path,
    Principal,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Rec {
    dir: bool,
    mode: u16,
    owner: u32,
    group: u32,
    mtime: u32,
}

struct Flat {
    map: BTreeMap<String, Rec>,
}

fn parent_of(p: &str) -> Option<String> {
    if p == "/" {
        return None;
    }
    let i = p.rfind('/').unwrap();
    Some(if i == 0 {
        "/".to_string()
    } else {
        p[..i].to_string()
    })
}

fn strict_ancestors(p: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = parent_of(p);
    while let Some(a) = cur {
        cur = parent_of(&a);
        out.push(a);
    }
    out.reverse();
    out
}

fn under(root: &str, p: &str) -> bool {
    p == root || (root == "/" && p != "/") || p.starts_with(&format!("{root}/"))
}

fn bits(r: &Rec, who: Principal) -> u16 {
    if who.uid == r.owner {
        (r.mode >> 6) & 7
    } else if who.gid == r.group {
        (r.mode >> 3) & 7
    } else {
        r.mode & 7
    }
}

impl Flat {
    fn new(owner: Principal) -> Self {
        let mut map = BTreeMap::new();
        map.insert(
            "/".to_string(),
            Rec {
                dir: true,
                mode: 0o777,
                owner: owner.uid,
                group: owner.gid,
                mtime: 0,
            },
        );
        Self { map }
    }

    fn walk(&self, p: &str, who: Principal) -> Result<(), OpError> {
        for a in strict_ancestors(p) {
            let r = self.map.get(&a).ok_or(OpError::NotFound)?;
            if !r.dir {
                return Err(OpError::NotADirectory);
            }
            if bits(r, who) & 1 == 0 {
                return Err(OpError::PermissionDenied);
            }
        }
        Ok(())
    }

    fn target(&self, p: &str, who: Principal) -> Result<Rec, OpError> {
        self.walk(p, who)?;
        self.map.get(p).copied().ok_or(OpError::NotFound)
    }

    fn can_modify_parent(&self, p: &str, who: Principal) -> Result<(), OpError> {
        let parent = parent_of(p).ok_or(OpError::PermissionDenied)?;
        let r = self.target(&parent, who)?;
        if !r.dir {
            return Err(OpError::NotADirectory);
        }
        if bits(&r, who) & 3 != 3 {
            return Err(OpError::PermissionDenied);
        }
        Ok(())
    }

    fn has_children(&self, p: &str) -> bool {
        self.map
            .keys()
            .any(|k| k != p && parent_of(k).as_deref() == Some(p))
    }

    fn apply(
        &mut self,
        kind: OpKind,
        p: &str,
        arg: Option<&str>,
        who: Principal,
        now: u32,
    ) -> Result<Option<Rec>, OpError> {
        use OpKind::*;
        match kind {
            Open | Close | Stat | Statdir => {
                let r = self.target(p, who)?;
                if matches!(kind, Open | Close) && r.dir {
                    return Err(OpError::IsADirectory);
                }
                if kind == Statdir && !r.dir {
                    return Err(OpError::NotADirectory);
                }
                if bits(&r, who) & 4 == 0 {
                    return Err(OpError::PermissionDenied);
                }
                Ok(Some(r))
            }
            Readdir => {
                let r = self.target(p, who)?;
                if !r.dir {
                    return Err(OpError::NotADirectory);
                }
                if bits(&r, who) & 4 == 0 {
                    return Err(OpError::PermissionDenied);
                }
                Ok(None)
            }
            Create | Mkdir => {
                if p == "/" {
                    return Err(OpError::AlreadyExists);
                }
                self.can_modify_parent(p, who)?;
                if self.map.contains_key(p) {
                    return Err(OpError::AlreadyExists);
                }
                let r = Rec {
                    dir: kind == Mkdir,
                    mode: if kind == Mkdir { 0o755 } else { 0o644 },
                    owner: who.uid,
                    group: who.gid,
                    mtime: now,
                };
                self.map.insert(p.to_string(), r);
                Ok(Some(r))
            }
            Rmdir | Delete => {
                if p == "/" {
                    return Err(OpError::PermissionDenied);
                }
                let r = self.target(p, who)?;
                if kind == Rmdir && !r.dir {
                    return Err(OpError::NotADirectory);
                }
                if kind == Delete && r.dir {
                    return Err(OpError::IsADirectory);
                }
                self.can_modify_parent(p, who)?;
                if self.has_children(p) {
                    return Err(OpError::NotEmpty);
                }
                self.map.remove(p);
                Ok(None)
            }
            Rename => {
                let dest = arg.unwrap();
                if p == "/" || dest == "/" {
                    return Err(OpError::PermissionDenied);
                }
                let r = self.target(p, who)?;
                if r.dir {
                    return Err(OpError::IsADirectory);
                }
                self.can_modify_parent(p, who)?;
                self.can_modify_parent(dest, who)?;
                if dest == p {
                    return Ok(None);
                }
                if self.map.contains_key(dest) {
                    return Err(OpError::AlreadyExists);
                }
                self.map.remove(p);
                self.map.insert(dest.to_string(), r);
                Ok(None)
            }
            Chmod | ChmodRecursive | Chown | ChownRecursive => {
                if p == "/" {
                    return Err(OpError::PermissionDenied);
                }
                let r = self.target(p, who)?;
                if r.owner != who.uid {
                    return Err(OpError::PermissionDenied);
                }
                let recursive = matches!(kind, ChmodRecursive | ChownRecursive);
                let keys: Vec<String> = self
                    .map
                    .keys()
                    .filter(|k| {
                        if recursive {
                            under(p, k)
                        } else {
                            k.as_str() == p
                        }
                    })
                    .cloned()
                    .collect();
                let v: u32 = arg.unwrap().parse().unwrap();
                for k in keys {
                    let e = self.map.get_mut(&k).unwrap();
                    if matches!(kind, Chmod | ChmodRecursive) {
                        e.mode = v as u16;
                    } else {
                        e.owner = v;
                        e.group = v;
                    }
                }
                Ok(Some(self.map[p]))
            }
            Utime => unreachable!(),
        }
    }
}

const NAMES: [&str; 4] = ["a", "b", "c", "d"];
const KINDS: [OpKind; 14] = [
    OpKind::Open,
    OpKind::Close,
    OpKind::Stat,
    OpKind::Statdir,
    OpKind::Readdir,
    OpKind::Create,
    OpKind::Mkdir,
    OpKind::Rmdir,
    OpKind::Delete,
    OpKind::Rename,
    OpKind::Chmod,
    OpKind::ChmodRecursive,
    OpKind::Chown,
    OpKind::ChownRecursive,
];
const USERS: [Principal; 2] = [Principal::new(10, 10), Principal::new(20, 10)];

fn random_path(rng: &mut ChaCha8Rng) -> String {
    let depth = rng.random_range(0..=3);
    if depth == 0 {
        return "/".into();
    }
    (0..depth)
        .map(|_| format!("/{}", NAMES[rng.random_range(0..NAMES.len())]))
        .collect()
}

fn to_rec(r: &MetadataRecord) -> Rec {
    Rec {
        dir: r.kind == NodeKind::Directory,
        mode: r.mode,
        owner: r.owner,
        group: r.group,
        mtime: r.mtime,
    }
}

fn compare_states(tree: &NamespaceTree, flat: &Flat) {
    let from_tree: BTreeMap<String, Rec> = tree
        .iter()
        .map(|(p, r)| (p.to_string(), to_rec(r)))
        .collect();
    assert_eq!(from_tree, flat.map);
}

fn run_sequence(seed: u64, steps: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = NamespaceTree::new(MetadataRecord::directory(0o777, USERS[0], 0));
    let mut flat = Flat::new(USERS[0]);
    for step in 0..steps {
        let kind = KINDS[rng.random_range(0..KINDS.len())];
        let who = USERS[rng.random_range(0..USERS.len())];
        let target = random_path(&mut rng);
        let (args, arg_str) = match kind {
            OpKind::Rename => {
                let d = random_path(&mut rng);
                (OpArgs::Dest(Path::parse(&d).unwrap()), Some(d))
            }
            OpKind::Chmod | OpKind::ChmodRecursive => {
                let m = [0o755u16, 0o700, 0o777, 0o711, 0o500][rng.random_range(0..5)];
                (OpArgs::Mode(m), Some(m.to_string()))
            }
            OpKind::Chown | OpKind::ChownRecursive => {
                let u = USERS[rng.random_range(0..2)].uid;
                (OpArgs::Owner { uid: u, gid: u }, Some(u.to_string()))
            }
            _ => (OpArgs::None, None),
        };
        let now = step as u32;
        let op = MetaOp::with_args(kind, Path::parse(&target).unwrap(), args);
        let got = tree.apply(&op, who, now);
        let want = flat.apply(kind, &target, arg_str.as_deref(), who, now);
        match (&got.result, &want) {
            (Err(a), Err(b)) => assert_eq!(a, b, "seed {seed} step {step}: {kind} {target}"),
            (Ok(OpReply::Record(r)), Ok(Some(w))) => {
                assert_eq!(to_rec(r), *w, "seed {seed} step {step}: {kind} {target}")
            }
            (Ok(_), Ok(_)) => {}
            _ => panic!(
                "seed {seed} step {step}: {kind} {target}: tree {:?} vs flat {want:?}",
                got.result
            ),
        }
        if got.result.is_err() {
            assert!(got.mutated.is_empty());
        }
        if step % 64 == 0 {
            compare_states(&tree, &flat);
            tree.check_invariants().unwrap();
        }
    }
    compare_states(&tree, &flat);
    tree.check_invariants().unwrap();
}

#[test]
fn ten_thousand_random_operations_agree_with_flat_reference() {
    run_sequence(7, 10_000);
    run_sequence(8, 10_000);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn short_sequences_agree(seed in any::<u64>()) {
        run_sequence(seed, 300);
    }

    #[test]
    fn record_codec_roundtrip(
        dir in any::<bool>(), mode in 0u16..0o10000, owner in any::<u32>(), group in any::<u32>(),
        mtime in any::<u32>(), atime in any::<u32>(), size in any::<u64>(), repl in any::<u16>(),
        deleted in any::<bool>(),
    ) {
        let rec = MetadataRecord {
            kind: if dir { NodeKind::Directory } else { NodeKind::File },
            mode, owner, group, mtime, atime,
            size: if dir { 0 } else { size },
            replication: if dir { 0 } else { repl },
            deleted,
        };
        let bytes = rec.encode();
        prop_assert_eq!(bytes.len(), if dir { 24 } else { 40 });
        prop_assert_eq!(MetadataRecord::decode(&bytes).unwrap(), rec);
        prop_assert_eq!(MetadataRecord::decode(&bytes).unwrap().encode(), bytes);
    }

    #[test]
    fn levels_are_prefix_chain(parts in proptest::collection::vec("[a-z]{1,6}", 0..10)) {
        let p = Path::from_components(parts.clone()).unwrap();
        let levels = p.levels();
        prop_assert_eq!(levels.len(), parts.len() + 1);
        for (i, l) in levels.iter().enumerate() {
            prop_assert_eq!(l.depth(), i);
            if i < parts.len() {
                prop_assert!(l.is_ancestor_of(&p));
            }
        }
        prop_assert_eq!(Path::parse(&p.to_string()).unwrap(), p);
    }
}
