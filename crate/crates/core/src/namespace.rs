//! Hierarchical namespace: paths, metadata records, permission checks and the
//! server-side semantics of every metadata operation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest allowed name component, in bytes.
pub const MAX_COMPONENT_LEN: usize = 255;

/// Serialized size of a file record.
pub const FILE_RECORD_LEN: usize = 40;
/// Serialized size of a directory record.
pub const DIR_RECORD_LEN: usize = 24;

/// Permission bits kept in a record (rwx ×3 plus setuid/setgid/sticky).
pub const MODE_MASK: u16 = 0o7777;

pub const DEFAULT_FILE_MODE: u16 = 0o644;
pub const DEFAULT_DIR_MODE: u16 = 0o755;
pub const DEFAULT_REPLICATION: u16 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NamespaceError {
    #[error("malformed path {raw:?}: {reason}")]
    MalformedPath { raw: String, reason: &'static str },
    #[error("malformed record: {0}")]
    MalformedRecord(&'static str),
    #[error("snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
    #[error("namespace invariant violated: {0}")]
    Invariant(String),
}

/// Failure of a metadata operation, as reported back to a client.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpError {
    #[error("no such file or directory")]
    NotFound,
    #[error("permission denied")]
    PermissionDenied,
    #[error("already exists")]
    AlreadyExists,
    #[error("directory not empty")]
    NotEmpty,
    #[error("not a directory")]
    NotADirectory,
    #[error("is a directory")]
    IsADirectory,
    #[error("invalid argument")]
    InvalidArgument,
}

/// An absolute path below the root. The root itself has no components.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Path {
    components: Vec<String>,
}

impl Path {
    pub fn root() -> Self {
        Self::default()
    }

    /// Parses an absolute path such as `/a/b/c.txt`.
    pub fn parse(raw: &str) -> Result<Self, NamespaceError> {
        let malformed = |reason| NamespaceError::MalformedPath {
            raw: raw.to_string(),
            reason,
        };
        let rest = raw
            .strip_prefix('/')
            .ok_or_else(|| malformed("missing leading slash"))?;
        if rest.is_empty() {
            return Ok(Self::root());
        }
        let mut components = Vec::new();
        for part in rest.split('/') {
            validate_component(part).map_err(malformed)?;
            components.push(part.to_string());
        }
        Ok(Self { components })
    }

    pub fn from_components<I, S>(parts: I) -> Result<Self, NamespaceError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let components: Vec<String> = parts.into_iter().map(Into::into).collect();
        for c in &components {
            validate_component(c).map_err(|reason| NamespaceError::MalformedPath {
                raw: components.join("/"),
                reason,
            })?;
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[String] {
        &self.components
    }

    pub fn depth(&self) -> usize {
        self.components.len()
    }

    pub fn is_root(&self) -> bool {
        self.components.is_empty()
    }

    /// Last component, `None` for the root.
    pub fn name(&self) -> Option<&str> {
        self.components.last().map(String::as_str)
    }

    /// Prefix of `i` components; `level(0)` is the root.
    pub fn level(&self, i: usize) -> Path {
        assert!(i <= self.depth(), "level {i} beyond depth {}", self.depth());
        Path {
            components: self.components[..i].to_vec(),
        }
    }

    /// `[/, level(1), .., level(depth)]`.
    pub fn levels(&self) -> Vec<Path> {
        (0..=self.depth()).map(|i| self.level(i)).collect()
    }

    pub fn parent(&self) -> Option<Path> {
        if self.is_root() {
            None
        } else {
            Some(self.level(self.depth() - 1))
        }
    }

    pub fn child(&self, name: &str) -> Result<Path, NamespaceError> {
        validate_component(name).map_err(|reason| NamespaceError::MalformedPath {
            raw: format!("{self}/{name}"),
            reason,
        })?;
        let mut components = self.components.clone();
        components.push(name.to_string());
        Ok(Path { components })
    }

    /// True iff `self` is a strict prefix of `other`.
    pub fn is_ancestor_of(&self, other: &Path) -> bool {
        self.depth() < other.depth() && other.components[..self.depth()] == self.components[..]
    }

    /// Strict ancestors, root first.
    pub fn ancestors(&self) -> impl Iterator<Item = Path> + '_ {
        (0..self.depth()).map(|i| self.level(i))
    }
}

fn validate_component(part: &str) -> Result<(), &'static str> {
    if part.is_empty() {
        Err("empty component")
    } else if part.len() > MAX_COMPONENT_LEN {
        Err("component longer than 255 bytes")
    } else if part.contains('/') {
        Err("component contains '/'")
    } else if part.contains(['\t', '\n']) {
        Err("component contains a tab or newline")
    } else {
        Ok(())
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            return f.write_str("/");
        }
        for c in &self.components {
            write!(f, "/{c}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Path({self})")
    }
}

impl FromStr for Path {
    type Err = NamespaceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Path::parse(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    File,
    Directory,
}

impl NodeKind {
    fn tag(self) -> u8 {
        match self {
            NodeKind::File => 1,
            NodeKind::Directory => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::File => "file",
            NodeKind::Directory => "dir",
        }
    }
}

/// Identity a request is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Principal {
    pub uid: u32,
    pub gid: u32,
}

impl Principal {
    pub const fn new(uid: u32, gid: u32) -> Self {
        Self { uid, gid }
    }
}

/// Per-path metadata as held by servers and cached in the switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub kind: NodeKind,
    pub mode: u16,
    pub owner: u32,
    pub group: u32,
    pub mtime: u32,
    pub atime: u32,
    pub size: u64,
    pub replication: u16,
    pub deleted: bool,
}

const FLAG_DELETED: u8 = 0x01;

impl MetadataRecord {
    pub fn directory(mode: u16, owner: Principal, now: u32) -> Self {
        Self {
            kind: NodeKind::Directory,
            mode: mode & MODE_MASK,
            owner: owner.uid,
            group: owner.gid,
            mtime: now,
            atime: now,
            size: 0,
            replication: 0,
            deleted: false,
        }
    }

    pub fn file(mode: u16, owner: Principal, now: u32) -> Self {
        Self {
            kind: NodeKind::File,
            mode: mode & MODE_MASK,
            owner: owner.uid,
            group: owner.gid,
            mtime: now,
            atime: now,
            size: 0,
            replication: DEFAULT_REPLICATION,
            deleted: false,
        }
    }

    pub fn is_dir(&self) -> bool {
        self.kind == NodeKind::Directory
    }

    pub fn encoded_len(&self) -> usize {
        match self.kind {
            NodeKind::File => FILE_RECORD_LEN,
            NodeKind::Directory => DIR_RECORD_LEN,
        }
    }

    /// Fixed little-endian layout:
    /// `kind:1 mode:2 owner:4 group:4 mtime:4 atime:4`, then for files
    /// `size:8 replication:2`, then a flags byte and zero padding up to
    /// 40 bytes (files) or 24 bytes (directories).
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.kind.tag());
        out.extend_from_slice(&self.mode.to_le_bytes());
        out.extend_from_slice(&self.owner.to_le_bytes());
        out.extend_from_slice(&self.group.to_le_bytes());
        out.extend_from_slice(&self.mtime.to_le_bytes());
        out.extend_from_slice(&self.atime.to_le_bytes());
        if self.kind == NodeKind::File {
            out.extend_from_slice(&self.size.to_le_bytes());
            out.extend_from_slice(&self.replication.to_le_bytes());
        }
        out.push(if self.deleted { FLAG_DELETED } else { 0 });
        out.resize(self.encoded_len(), 0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NamespaceError> {
        let kind = match bytes.first() {
            Some(1) => NodeKind::File,
            Some(2) => NodeKind::Directory,
            Some(_) => return Err(NamespaceError::MalformedRecord("unknown kind tag")),
            None => return Err(NamespaceError::MalformedRecord("empty buffer")),
        };
        let expected = match kind {
            NodeKind::File => FILE_RECORD_LEN,
            NodeKind::Directory => DIR_RECORD_LEN,
        };
        if bytes.len() != expected {
            return Err(NamespaceError::MalformedRecord(
                "length does not match kind",
            ));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let mode = u16_at(1);
        if mode & !MODE_MASK != 0 {
            return Err(NamespaceError::MalformedRecord("mode wider than 12 bits"));
        }
        let (size, replication, flags_at) = match kind {
            NodeKind::File => (
                u64::from_le_bytes(bytes[19..27].try_into().unwrap()),
                u16_at(27),
                29,
            ),
            NodeKind::Directory => (0, 0, 19),
        };
        let flags = bytes[flags_at];
        if flags & !FLAG_DELETED != 0 || bytes[flags_at + 1..].iter().any(|&b| b != 0) {
            return Err(NamespaceError::MalformedRecord("reserved bytes not zero"));
        }
        Ok(Self {
            kind,
            mode,
            owner: u32_at(3),
            group: u32_at(7),
            mtime: u32_at(11),
            atime: u32_at(15),
            size,
            replication,
            deleted: flags & FLAG_DELETED != 0,
        })
    }
}

/// Kind of access a permission check is made for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessClass {
    /// Passing through an internal directory (execute bit).
    Traverse,
    /// Reading the attributes or listing of a node (read bit).
    Read,
    /// Adding or removing entries of a directory (write and execute bits).
    Modify,
}

/// POSIX-style owner/group/other check of `need` against `record`.
pub fn permission_check(record: &MetadataRecord, who: Principal, need: AccessClass) -> bool {
    let shift = if who.uid == record.owner {
        6
    } else if who.gid == record.group {
        3
    } else {
        0
    };
    let bits = (record.mode >> shift) & 0o7;
    let required = match need {
        AccessClass::Traverse => 0o1,
        AccessClass::Read => 0o4,
        AccessClass::Modify => 0o3,
    };
    bits & required == required
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Open,
    Close,
    Stat,
    Statdir,
    Readdir,
    Create,
    Mkdir,
    Rmdir,
    Delete,
    Rename,
    Chmod,
    ChmodRecursive,
    Chown,
    ChownRecursive,
    Utime,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
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
        OpKind::Utime,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Open => "open",
            OpKind::Close => "close",
            OpKind::Stat => "stat",
            OpKind::Statdir => "statdir",
            OpKind::Readdir => "readdir",
            OpKind::Create => "create",
            OpKind::Mkdir => "mkdir",
            OpKind::Rmdir => "rmdir",
            OpKind::Delete => "delete",
            OpKind::Rename => "rename",
            OpKind::Chmod => "chmod",
            OpKind::ChmodRecursive => "chmod_recursive",
            OpKind::Chown => "chown",
            OpKind::ChownRecursive => "chown_recursive",
            OpKind::Utime => "utime",
        }
    }

    pub fn is_single_read(self) -> bool {
        matches!(
            self,
            OpKind::Open | OpKind::Close | OpKind::Stat | OpKind::Statdir
        )
    }

    pub fn is_multi_read(self) -> bool {
        self == OpKind::Readdir
    }

    pub fn is_read(self) -> bool {
        self.is_single_read() || self.is_multi_read()
    }

    pub fn is_multi_write(self) -> bool {
        matches!(self, OpKind::ChmodRecursive | OpKind::ChownRecursive)
    }

    pub fn is_write(self) -> bool {
        !self.is_read()
    }

    /// Operations that remove their target from the namespace.
    pub fn is_destructive(self) -> bool {
        matches!(self, OpKind::Rename | OpKind::Delete | OpKind::Rmdir)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown operation {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpArgs {
    None,
    Mode(u16),
    Owner { uid: u32, gid: u32 },
    Dest(Path),
    Times { mtime: u32, atime: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetaOp {
    pub kind: OpKind,
    pub target: Path,
    pub args: OpArgs,
}

impl MetaOp {
    pub fn new(kind: OpKind, target: Path) -> Self {
        Self {
            kind,
            target,
            args: OpArgs::None,
        }
    }

    pub fn with_args(kind: OpKind, target: Path, args: OpArgs) -> Self {
        Self { kind, target, args }
    }

    /// Rename destination, if any.
    pub fn dest(&self) -> Option<&Path> {
        match &self.args {
            OpArgs::Dest(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpReply {
    Record(MetadataRecord),
    Listing(Vec<(String, MetadataRecord)>),
    Done,
}

pub type OpResult = Result<OpReply, OpError>;

/// Result of applying an operation, including every path whose record was
/// created, modified or removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Applied {
    pub result: OpResult,
    pub mutated: Vec<Path>,
}

impl Applied {
    fn fail(e: OpError) -> Self {
        Self {
            result: Err(e),
            mutated: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Node {
    record: MetadataRecord,
    children: BTreeSet<String>,
}

/// A tree-shaped namespace keyed by path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamespaceTree {
    nodes: BTreeMap<Path, Node>,
}

impl Default for NamespaceTree {
    fn default() -> Self {
        Self::new(MetadataRecord::directory(
            DEFAULT_DIR_MODE,
            Principal::new(0, 0),
            0,
        ))
    }
}

impl NamespaceTree {
    pub fn new(root: MetadataRecord) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(
            Path::root(),
            Node {
                record: MetadataRecord {
                    kind: NodeKind::Directory,
                    ..root
                },
                children: BTreeSet::new(),
            },
        );
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    pub fn get(&self, p: &Path) -> Option<&MetadataRecord> {
        self.nodes.get(p).map(|n| &n.record)
    }

    pub fn contains(&self, p: &Path) -> bool {
        self.nodes.contains_key(p)
    }

    pub fn children(&self, p: &Path) -> impl Iterator<Item = &str> {
        self.nodes
            .get(p)
            .into_iter()
            .flat_map(|n| n.children.iter().map(String::as_str))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Path, &MetadataRecord)> {
        self.nodes.iter().map(|(p, n)| (p, &n.record))
    }

    /// `p` itself followed by every descendant, in path order.
    pub fn subtree(&self, p: &Path) -> impl Iterator<Item = (&Path, &MetadataRecord)> {
        let root = p.clone();
        self.nodes
            .range(p.clone()..)
            .take_while(move |(q, _)| **q == root || root.is_ancestor_of(q))
            .map(|(q, n)| (q, &n.record))
    }

    /// Inserts a node whose parent must already exist as a directory.
    pub fn insert(&mut self, p: Path, record: MetadataRecord) -> Result<(), OpError> {
        let parent = p.parent().ok_or(OpError::AlreadyExists)?;
        if self.nodes.contains_key(&p) {
            return Err(OpError::AlreadyExists);
        }
        let parent_node = self.nodes.get_mut(&parent).ok_or(OpError::NotFound)?;
        if !parent_node.record.is_dir() {
            return Err(OpError::NotADirectory);
        }
        parent_node.children.insert(p.name().unwrap().to_string());
        self.nodes.insert(
            p,
            Node {
                record,
                children: BTreeSet::new(),
            },
        );
        Ok(())
    }

    fn remove_leaf(&mut self, p: &Path) -> Option<MetadataRecord> {
        let node = self.nodes.remove(p)?;
        debug_assert!(node.children.is_empty());
        if let Some(parent) = p.parent() {
            if let Some(pn) = self.nodes.get_mut(&parent) {
                pn.children.remove(p.name().unwrap());
            }
        }
        Some(node.record)
    }

    /// Server-side path resolution of every strict ancestor of `p`: each
    /// must exist, be a directory and grant traversal.
    pub fn resolve_ancestors(&self, p: &Path, who: Principal) -> Result<(), OpError> {
        for anc in p.ancestors() {
            let rec = self.get(&anc).ok_or(OpError::NotFound)?;
            if !rec.is_dir() {
                return Err(OpError::NotADirectory);
            }
            if !permission_check(rec, who, AccessClass::Traverse) {
                return Err(OpError::PermissionDenied);
            }
        }
        Ok(())
    }

    fn resolve_target(&self, p: &Path, who: Principal) -> Result<&MetadataRecord, OpError> {
        self.resolve_ancestors(p, who)?;
        self.get(p).ok_or(OpError::NotFound)
    }

    fn check_parent_modify(&self, p: &Path, who: Principal) -> Result<(), OpError> {
        let parent = p.parent().ok_or(OpError::PermissionDenied)?;
        self.resolve_ancestors(&parent, who)?;
        let prec = self.get(&parent).ok_or(OpError::NotFound)?;
        if !prec.is_dir() {
            return Err(OpError::NotADirectory);
        }
        if !permission_check(prec, who, AccessClass::Modify) {
            return Err(OpError::PermissionDenied);
        }
        Ok(())
    }

    /// Applies `op` on behalf of `who` at logical time `now`.
    pub fn apply(&mut self, op: &MetaOp, who: Principal, now: u32) -> Applied {
        let p = &op.target;
        match op.kind {
            OpKind::Open | OpKind::Close | OpKind::Stat | OpKind::Statdir => {
                let rec = match self.resolve_target(p, who) {
                    Ok(r) => r,
                    Err(e) => return Applied::fail(e),
                };
                match check_single_read(op.kind, rec, who) {
                    Ok(()) => Applied {
                        result: Ok(OpReply::Record(*rec)),
                        mutated: Vec::new(),
                    },
                    Err(e) => Applied::fail(e),
                }
            }
            OpKind::Readdir => {
                let rec = match self.resolve_target(p, who) {
                    Ok(r) => r,
                    Err(e) => return Applied::fail(e),
                };
                if !rec.is_dir() {
                    return Applied::fail(OpError::NotADirectory);
                }
                if !permission_check(rec, who, AccessClass::Read) {
                    return Applied::fail(OpError::PermissionDenied);
                }
                let listing = self
                    .children(p)
                    .map(|name| {
                        let child = p.child(name).expect("stored names are valid");
                        (name.to_string(), *self.get(&child).unwrap())
                    })
                    .collect();
                Applied {
                    result: Ok(OpReply::Listing(listing)),
                    mutated: Vec::new(),
                }
            }
            OpKind::Create | OpKind::Mkdir => {
                if p.is_root() {
                    return Applied::fail(OpError::AlreadyExists);
                }
                if let Err(e) = self.check_parent_modify(p, who) {
                    return Applied::fail(e);
                }
                if self.contains(p) {
                    return Applied::fail(OpError::AlreadyExists);
                }
                let record = if op.kind == OpKind::Create {
                    MetadataRecord::file(DEFAULT_FILE_MODE, who, now)
                } else {
                    MetadataRecord::directory(DEFAULT_DIR_MODE, who, now)
                };
                self.insert(p.clone(), record).expect("parent checked");
                Applied {
                    result: Ok(OpReply::Record(record)),
                    mutated: vec![p.clone()],
                }
            }
            OpKind::Rmdir | OpKind::Delete => {
                if p.is_root() {
                    return Applied::fail(OpError::PermissionDenied);
                }
                let rec = match self.resolve_target(p, who) {
                    Ok(r) => *r,
                    Err(e) => return Applied::fail(e),
                };
                match (op.kind, rec.kind) {
                    (OpKind::Rmdir, NodeKind::File) => {
                        return Applied::fail(OpError::NotADirectory)
                    }
                    (OpKind::Delete, NodeKind::Directory) => {
                        return Applied::fail(OpError::IsADirectory)
                    }
                    _ => {}
                }
                if let Err(e) = self.check_parent_modify(p, who) {
                    return Applied::fail(e);
                }
                if self.children(p).next().is_some() {
                    return Applied::fail(OpError::NotEmpty);
                }
                self.remove_leaf(p);
                Applied {
                    result: Ok(OpReply::Done),
                    mutated: vec![p.clone()],
                }
            }
            OpKind::Rename => {
                let Some(dest) = op.dest() else {
                    return Applied::fail(OpError::InvalidArgument);
                };
                if p.is_root() || dest.is_root() {
                    return Applied::fail(OpError::PermissionDenied);
                }
                let rec = match self.resolve_target(p, who) {
                    Ok(r) => *r,
                    Err(e) => return Applied::fail(e),
                };
                if rec.is_dir() {
                    return Applied::fail(OpError::IsADirectory);
                }
                if let Err(e) = self.check_parent_modify(p, who) {
                    return Applied::fail(e);
                }
                if let Err(e) = self.check_parent_modify(dest, who) {
                    return Applied::fail(e);
                }
                if dest == p {
                    return Applied {
                        result: Ok(OpReply::Done),
                        mutated: Vec::new(),
                    };
                }
                if self.contains(dest) {
                    return Applied::fail(OpError::AlreadyExists);
                }
                self.remove_leaf(p);
                self.insert(dest.clone(), rec).expect("dest parent checked");
                Applied {
                    result: Ok(OpReply::Done),
                    mutated: vec![p.clone(), dest.clone()],
                }
            }
            OpKind::Chmod
            | OpKind::Chown
            | OpKind::Utime
            | OpKind::ChmodRecursive
            | OpKind::ChownRecursive => self.apply_attr(op, who),
        }
    }

    fn apply_attr(&mut self, op: &MetaOp, who: Principal) -> Applied {
        let p = &op.target;
        if p.is_root() {
            return Applied::fail(OpError::PermissionDenied);
        }
        let rec = match self.resolve_target(p, who) {
            Ok(r) => *r,
            Err(e) => return Applied::fail(e),
        };
        if rec.owner != who.uid {
            return Applied::fail(OpError::PermissionDenied);
        }
        let update = |r: &mut MetadataRecord| match (&op.kind, &op.args) {
            (OpKind::Chmod | OpKind::ChmodRecursive, OpArgs::Mode(m)) => {
                r.mode = m & MODE_MASK;
                Ok(())
            }
            (OpKind::Chown | OpKind::ChownRecursive, OpArgs::Owner { uid, gid }) => {
                r.owner = *uid;
                r.group = *gid;
                Ok(())
            }
            (OpKind::Utime, OpArgs::Times { mtime, atime }) => {
                r.mtime = *mtime;
                r.atime = *atime;
                Ok(())
            }
            _ => Err(OpError::InvalidArgument),
        };
        let targets: Vec<Path> = if op.kind.is_multi_write() {
            self.subtree(p).map(|(q, _)| q.clone()).collect()
        } else {
            vec![p.clone()]
        };
        for q in &targets {
            let node = self.nodes.get_mut(q).unwrap();
            if let Err(e) = update(&mut node.record) {
                return Applied::fail(e);
            }
        }
        let reply = *self.get(p).unwrap();
        Applied {
            result: Ok(OpReply::Record(reply)),
            mutated: targets,
        }
    }

    /// Every node's parent exists and is a directory; child lists agree
    /// with the node map; the root is a directory.
    pub fn check_invariants(&self) -> Result<(), NamespaceError> {
        let root = self
            .get(&Path::root())
            .ok_or_else(|| NamespaceError::Invariant("root missing".into()))?;
        if !root.is_dir() {
            return Err(NamespaceError::Invariant("root is not a directory".into()));
        }
        for (p, node) in &self.nodes {
            if !node.record.is_dir() && !node.children.is_empty() {
                return Err(NamespaceError::Invariant(format!("file {p} has children")));
            }
            for c in &node.children {
                let child = p
                    .child(c)
                    .map_err(|e| NamespaceError::Invariant(e.to_string()))?;
                if !self.nodes.contains_key(&child) {
                    return Err(NamespaceError::Invariant(format!("dangling child {child}")));
                }
            }
            if let Some(parent) = p.parent() {
                let pn = self
                    .nodes
                    .get(&parent)
                    .ok_or_else(|| NamespaceError::Invariant(format!("{p} has no parent")))?;
                if !pn.record.is_dir() {
                    return Err(NamespaceError::Invariant(format!(
                        "parent of {p} is a file"
                    )));
                }
                if !pn.children.contains(p.name().unwrap()) {
                    return Err(NamespaceError::Invariant(format!(
                        "{p} missing from parent"
                    )));
                }
            }
        }
        Ok(())
    }

    /// One line per node: `path\tkind\tmode\towner\tgroup\tsize\treplication`.
    pub fn export_snapshot(&self) -> String {
        self.export_filtered(|_, _| true)
    }

    pub fn export_filtered(&self, mut keep: impl FnMut(&Path, &MetadataRecord) -> bool) -> String {
        let mut out = String::new();
        for (p, rec) in self.iter() {
            if !keep(p, rec) {
                continue;
            }
            out.push_str(&format!(
                "{}\t{}\t{:04o}\t{}\t{}\t{}\t{}\n",
                p,
                rec.kind.as_str(),
                rec.mode,
                rec.owner,
                rec.group,
                rec.size,
                rec.replication
            ));
        }
        out
    }

    pub fn import_snapshot(text: &str) -> Result<Self, NamespaceError> {
        let mut tree = NamespaceTree::default();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| NamespaceError::Snapshot {
                line: line_no,
                reason,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 7 {
                return Err(bad(format!("expected 7 fields, got {}", fields.len())));
            }
            let path = Path::parse(fields[0]).map_err(|e| bad(e.to_string()))?;
            let kind = match fields[1] {
                "file" => NodeKind::File,
                "dir" => NodeKind::Directory,
                other => return Err(bad(format!("unknown kind {other:?}"))),
            };
            let mode = u16::from_str_radix(fields[2], 8).map_err(|e| bad(e.to_string()))?;
            if mode & !MODE_MASK != 0 {
                return Err(bad("mode wider than 12 bits".into()));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|e| bad(e.to_string()));
            let record = MetadataRecord {
                kind,
                mode,
                owner: num(fields[3])? as u32,
                group: num(fields[4])? as u32,
                mtime: 0,
                atime: 0,
                size: num(fields[5])?,
                replication: num(fields[6])? as u16,
                deleted: false,
            };
            if path.is_root() {
                if kind != NodeKind::Directory {
                    return Err(bad("root must be a directory".into()));
                }
                tree.nodes.get_mut(&path).unwrap().record = record;
                continue;
            }
            tree.insert(path, record)
                .map_err(|e| bad(format!("cannot insert: {e}")))?;
        }
        Ok(tree)
    }
}

/// Target-level checks for a single-path read, shared by the servers and
/// the switch so both return identical outcomes.
pub fn check_single_read(
    kind: OpKind,
    rec: &MetadataRecord,
    who: Principal,
) -> Result<(), OpError> {
    if rec.deleted {
        return Err(OpError::NotFound);
    }
    match kind {
        OpKind::Open | OpKind::Close if rec.is_dir() => return Err(OpError::IsADirectory),
        OpKind::Statdir if !rec.is_dir() => return Err(OpError::NotADirectory),
        _ => {}
    }
    if !permission_check(rec, who, AccessClass::Read) {
        return Err(OpError::PermissionDenied);
    }
    Ok(())
}

/// Check applied to an internal directory during path resolution.
pub fn check_traverse(rec: &MetadataRecord, who: Principal) -> Result<(), OpError> {
    if rec.deleted {
        return Err(OpError::NotFound);
    }
    if !rec.is_dir() {
        return Err(OpError::NotADirectory);
    }
    if !permission_check(rec, who, AccessClass::Traverse) {
        return Err(OpError::PermissionDenied);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALICE: Principal = Principal::new(1000, 1000);
    const BOB: Principal = Principal::new(2000, 2000);

    fn p(s: &str) -> Path {
        Path::parse(s).unwrap()
    }

    fn tree_owned_by(who: Principal) -> NamespaceTree {
        NamespaceTree::new(MetadataRecord::directory(0o777, who, 0))
    }

    #[test]
    fn parse_examples() {
        let x = p("/a/b/c.txt");
        assert_eq!(x.components(), ["a", "b", "c.txt"]);
        assert_eq!(x.depth(), 3);
        assert_eq!(p("/").depth(), 0);
        assert!(p("/").is_root());
        assert!(matches!(
            Path::parse("/a//b"),
            Err(NamespaceError::MalformedPath {
                reason: "empty component",
                ..
            })
        ));
        assert!(Path::parse("a/b").is_err());
        assert!(Path::parse("/a/").is_err());
        assert!(Path::parse(&format!("/{}", "x".repeat(256))).is_err());
        assert!(Path::parse(&format!("/{}", "x".repeat(255))).is_ok());
        assert_eq!(x.to_string(), "/a/b/c.txt");
    }

    #[test]
    fn levels_examples() {
        let got: Vec<String> = p("/a/b/c.txt")
            .levels()
            .iter()
            .map(|l| l.to_string())
            .collect();
        assert_eq!(got, ["/", "/a", "/a/b", "/a/b/c.txt"]);
        assert_eq!(p("/").levels(), vec![p("/")]);
        assert_eq!(p("/x").levels(), vec![p("/"), p("/x")]);
    }

    #[test]
    fn ancestor_examples() {
        assert!(p("/a").is_ancestor_of(&p("/a/b")));
        assert!(!p("/a").is_ancestor_of(&p("/a")));
        assert!(!p("/a/b").is_ancestor_of(&p("/a")));
        assert!(p("/").is_ancestor_of(&p("/a")));
        assert!(!p("/a").is_ancestor_of(&p("/ab/c")));
    }

    #[test]
    fn permission_examples() {
        let dir755 = MetadataRecord::directory(0o755, ALICE, 0);
        let dir700 = MetadataRecord::directory(0o700, ALICE, 0);
        let file644 = MetadataRecord::file(0o644, ALICE, 0);
        assert!(permission_check(&dir755, BOB, AccessClass::Traverse));
        assert!(!permission_check(&dir700, BOB, AccessClass::Traverse));
        assert!(permission_check(&file644, ALICE, AccessClass::Read));
        assert!(!permission_check(&file644, BOB, AccessClass::Modify));
        let same_group = Principal::new(3000, 1000);
        let dir750 = MetadataRecord::directory(0o750, ALICE, 0);
        assert!(permission_check(&dir750, same_group, AccessClass::Traverse));
        assert!(!permission_check(&dir750, same_group, AccessClass::Modify));
    }

    #[test]
    fn record_sizes_and_roundtrip() {
        let mut f = MetadataRecord::file(0o4755, ALICE, 77);
        f.size = u64::MAX - 3;
        f.replication = 7;
        let d = MetadataRecord::directory(0o1777, BOB, 12);
        assert_eq!(f.encode().len(), 40);
        assert_eq!(d.encode().len(), 24);
        assert_eq!(MetadataRecord::decode(&f.encode()).unwrap(), f);
        assert_eq!(MetadataRecord::decode(&d.encode()).unwrap(), d);
        let mut gone = d;
        gone.deleted = true;
        assert_eq!(MetadataRecord::decode(&gone.encode()).unwrap(), gone);
        let mut bad = f.encode();
        bad.pop();
        assert!(MetadataRecord::decode(&bad).is_err());
        let mut bad = d.encode();
        bad[23] = 1;
        assert!(MetadataRecord::decode(&bad).is_err());
    }

    #[test]
    fn mkdir_then_stat() {
        let mut t = tree_owned_by(ALICE);
        let r = t.apply(&MetaOp::new(OpKind::Mkdir, p("/a")), ALICE, 42);
        assert_eq!(r.mutated, vec![p("/a")]);
        match t
            .apply(&MetaOp::new(OpKind::Stat, p("/a")), ALICE, 50)
            .result
        {
            Ok(OpReply::Record(rec)) => {
                assert!(rec.is_dir());
                assert_eq!(rec.mtime, 42);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn create_without_parent() {
        let mut t = tree_owned_by(ALICE);
        let r = t.apply(&MetaOp::new(OpKind::Create, p("/a/b.txt")), ALICE, 1);
        assert_eq!(r.result, Err(OpError::NotFound));
        assert!(r.mutated.is_empty());
    }

    #[test]
    fn error_paths() {
        let mut t = tree_owned_by(ALICE);
        t.apply(&MetaOp::new(OpKind::Mkdir, p("/a")), ALICE, 1);
        t.apply(&MetaOp::new(OpKind::Create, p("/a/f")), ALICE, 1);
        let e = |t: &mut NamespaceTree, op| t.apply(&op, ALICE, 2).result.unwrap_err();
        assert_eq!(
            e(&mut t, MetaOp::new(OpKind::Mkdir, p("/a"))),
            OpError::AlreadyExists
        );
        assert_eq!(
            e(&mut t, MetaOp::new(OpKind::Rmdir, p("/a"))),
            OpError::NotEmpty
        );
        assert_eq!(
            e(&mut t, MetaOp::new(OpKind::Create, p("/a/f/g"))),
            OpError::NotADirectory
        );
        assert_eq!(
            e(&mut t, MetaOp::new(OpKind::Open, p("/a"))),
            OpError::IsADirectory
        );
        assert_eq!(
            e(&mut t, MetaOp::new(OpKind::Statdir, p("/a/f"))),
            OpError::NotADirectory
        );
        assert_eq!(
            e(&mut t, MetaOp::new(OpKind::Rmdir, p("/"))),
            OpError::PermissionDenied
        );
        assert_eq!(
            e(
                &mut t,
                MetaOp::with_args(OpKind::Chmod, p("/"), OpArgs::Mode(0o700))
            ),
            OpError::PermissionDenied
        );
        // Bob cannot chmod Alice's file.
        let r = t.apply(
            &MetaOp::with_args(OpKind::Chmod, p("/a/f"), OpArgs::Mode(0)),
            BOB,
            3,
        );
        assert_eq!(r.result, Err(OpError::PermissionDenied));
    }

    #[test]
    fn traversal_denied_by_private_directory() {
        let mut t = tree_owned_by(ALICE);
        t.apply(&MetaOp::new(OpKind::Mkdir, p("/a")), ALICE, 1);
        t.apply(&MetaOp::new(OpKind::Create, p("/a/f")), ALICE, 1);
        t.apply(
            &MetaOp::with_args(OpKind::Chmod, p("/a"), OpArgs::Mode(0o700)),
            ALICE,
            1,
        );
        let r = t.apply(&MetaOp::new(OpKind::Stat, p("/a/f")), BOB, 2);
        assert_eq!(r.result, Err(OpError::PermissionDenied));
        assert!(t
            .apply(&MetaOp::new(OpKind::Stat, p("/a/f")), ALICE, 2)
            .result
            .is_ok());
    }

    #[test]
    fn chmod_recursive_matches_tree_walk() {
        let mut t = tree_owned_by(ALICE);
        for d in ["/a", "/a/b", "/z"] {
            t.apply(&MetaOp::new(OpKind::Mkdir, p(d)), ALICE, 1);
        }
        for f in ["/a/b/c.txt", "/a/d.txt", "/z/y.txt"] {
            t.apply(&MetaOp::new(OpKind::Create, p(f)), ALICE, 1);
        }
        let before = t.clone();
        let r = t.apply(
            &MetaOp::with_args(OpKind::ChmodRecursive, p("/a"), OpArgs::Mode(0o700)),
            ALICE,
            5,
        );
        assert_eq!(r.mutated.len(), 4);
        // Brute-force walk: every node whose path starts with /a gets the new mode.
        for (q, rec) in before.iter() {
            let under = q.components().first().map(String::as_str) == Some("a");
            let want = if under { 0o700 } else { rec.mode };
            assert_eq!(t.get(q).unwrap().mode, want, "{q}");
        }
        t.check_invariants().unwrap();
    }

    #[test]
    fn rename_moves_record() {
        let mut t = tree_owned_by(ALICE);
        t.apply(&MetaOp::new(OpKind::Mkdir, p("/a")), ALICE, 1);
        t.apply(&MetaOp::new(OpKind::Create, p("/a/f")), ALICE, 9);
        let r = t.apply(
            &MetaOp::with_args(OpKind::Rename, p("/a/f"), OpArgs::Dest(p("/g"))),
            ALICE,
            10,
        );
        assert_eq!(r.mutated, vec![p("/a/f"), p("/g")]);
        assert!(!t.contains(&p("/a/f")));
        assert_eq!(t.get(&p("/g")).unwrap().mtime, 9);
        let r = t.apply(
            &MetaOp::with_args(OpKind::Rename, p("/a"), OpArgs::Dest(p("/b"))),
            ALICE,
            10,
        );
        assert_eq!(r.result, Err(OpError::IsADirectory));
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut t = tree_owned_by(ALICE);
        t.apply(&MetaOp::new(OpKind::Mkdir, p("/a")), ALICE, 0);
        t.apply(&MetaOp::new(OpKind::Create, p("/a/f")), ALICE, 0);
        let text = t.export_snapshot();
        assert!(text.contains("/a/f\tfile\t0644\t1000\t1000\t0\t3\n"));
        let back = NamespaceTree::import_snapshot(&text).unwrap();
        assert_eq!(back, t);
        assert!(NamespaceTree::import_snapshot("/x/y\tfile\t0644\t1\t1\t0\t3\n").is_err());
    }
}
