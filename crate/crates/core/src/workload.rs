//! Namespace construction and operation trace generation: named operation
//! mixes, power-law popularity with an optional 80/20 mass split, and the
//! hot-in popularity shift.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::namespace::{MetaOp, MetadataRecord, NamespaceTree, OpArgs, OpKind, Path, Principal};
use crate::{SimTime, NANOS_PER_SEC};

/// Owner of every generated node.
pub const WORKLOAD_OWNER: Principal = Principal::new(1000, 1000);
/// Directory holding mkdir and rmdir targets.
pub const RESERVED_DIR: &str = "reserved";
const FILES_PER_DIR: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
    #[error("trace line {line}: {reason}")]
    TraceFormat { line: usize, reason: String },
}

/// Operation kinds with their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct OpMix(Vec<(OpKind, f64)>);

impl OpMix {
    /// Builds a mix from percentages or ratios and normalizes it to 1.
    pub fn new(entries: &[(OpKind, f64)]) -> Result<Self, WorkloadError> {
        let total: f64 = entries.iter().map(|(_, r)| r).sum();
        if entries.iter().any(|(_, r)| *r < 0.0 || !r.is_finite()) || total <= 0.0 {
            return Err(WorkloadError::InvalidSpec(
                "mix ratios must be non-negative with a positive sum".into(),
            ));
        }
        let mut merged: BTreeMap<OpKind, f64> = BTreeMap::new();
        for (k, r) in entries {
            *merged.entry(*k).or_default() += r / total;
        }
        Ok(Self(merged.into_iter().collect()))
    }

    pub fn entries(&self) -> &[(OpKind, f64)] {
        &self.0
    }

    pub fn ratio(&self, k: OpKind) -> f64 {
        self.0
            .iter()
            .find(|(x, _)| *x == k)
            .map_or(0.0, |(_, r)| *r)
    }

    pub fn read_ratio(&self) -> f64 {
        self.0
            .iter()
            .filter(|(k, _)| k.is_read())
            .map(|(_, r)| r)
            .sum()
    }

    /// Named mixes. Open and close split a combined share evenly.
    pub fn named(name: &str) -> Result<Self, WorkloadError> {
        use OpKind::*;
        let e: Vec<(OpKind, f64)> = match name {
            "alibaba" => vec![
                (Open, 26.3),
                (Close, 26.3),
                (Create, 9.59),
                (Readdir, 3.9),
                (Chmod, 0.1),
                (Delete, 11.9),
                (Stat, 12.4),
                (Statdir, 0.2),
                (Mkdir, 0.005),
                (Rmdir, 0.005),
                (Rename, 9.3),
            ],
            // The published entries add up to 101.36%. Reads are kept
            // as published and the write entries scaled to fill the rest.
            "training" => {
                let reads = 54.32 + 28.5 + 0.13 + 0.13;
                let writes = 9.01 + 0.13 + 0.13 + 9.01;
                let s = (100.0 - reads) / writes;
                vec![
                    (Open, 27.16),
                    (Close, 27.16),
                    (Stat, 28.5),
                    (Readdir, 0.13),
                    (Statdir, 0.13),
                    (Create, 9.01 * s),
                    (Mkdir, 0.13 * s),
                    (Rmdir, 0.13 * s),
                    (Delete, 9.01 * s),
                ]
            }
            "thumb" => vec![
                (Open, 28.505),
                (Close, 28.505),
                (Stat, 28.44),
                (Readdir, 0.13),
                (Create, 14.16),
                (Mkdir, 0.13),
                (Statdir, 0.13),
            ],
            "linkedin" => vec![
                (Open, 42.0),
                (Stat, 42.0),
                (Create, 4.5),
                (Mkdir, 4.5),
                (Chmod, 1.0),
                (Delete, 3.0),
                (Rename, 3.0),
            ],
            "read_only" => vec![(Open, 50.0), (Stat, 50.0)],
            "write_only" => vec![(Chmod, 100.0)],
            other => return Err(WorkloadError::InvalidSpec(format!("unknown mix {other:?}"))),
        };
        Self::new(&e)
    }

    /// Open/chmod mix with `chmod_pct` percent chmod.
    pub fn open_chmod(chmod_pct: f64) -> Result<Self, WorkloadError> {
        Self::new(&[
            (OpKind::Open, 100.0 - chmod_pct),
            (OpKind::Chmod, chmod_pct),
        ])
    }
}

impl fmt::Display for OpMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, r)| format!("{k}:{r}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for OpMix {
    type Err = WorkloadError;

    /// Either a named mix or `kind:ratio,kind:ratio,...`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if !s.contains(':') {
            return Self::named(s);
        }
        let mut e = Vec::new();
        for part in s.split(',') {
            let (k, r) = part
                .split_once(':')
                .ok_or_else(|| WorkloadError::InvalidSpec(format!("bad mix entry {part:?}")))?;
            let k = OpKind::from_str(k.trim()).map_err(WorkloadError::InvalidSpec)?;
            let r: f64 = r
                .trim()
                .parse()
                .map_err(|_| WorkloadError::InvalidSpec(format!("bad ratio in {part:?}")))?;
            e.push((k, r));
        }
        Self::new(&e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Skew {
    Uniform,
    PowerLaw(f64),
}

/// How files are matched to popularity ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankOrder {
    /// Deepest files get the highest ranks.
    Hlf,
    /// Shallowest files get the highest ranks.
    Llf,
    #[default]
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HotIn {
    pub period: SimTime,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub name: String,
    pub mix: OpMix,
    pub n_files: usize,
    pub max_depth: usize,
    pub skew: Skew,
    pub order: RankOrder,
    pub eighty_twenty: bool,
    pub hot_in: Option<HotIn>,
    /// Writes draw files from their own ranking: same weights, shuffled
    /// independently of the read ranking.
    pub independent_writes: bool,
    pub seed: u64,
    pub length: usize,
    pub n_clients: usize,
}

impl WorkloadSpec {
    pub fn named(name: &str) -> Result<Self, WorkloadError> {
        Ok(Self {
            name: name.to_string(),
            mix: OpMix::named(name)?,
            n_files: 100_000,
            max_depth: 9,
            skew: Skew::PowerLaw(0.9),
            order: RankOrder::Random,
            eighty_twenty: true,
            hot_in: None,
            independent_writes: false,
            seed: 1,
            length: 1_000_000,
            n_clients: 128,
        })
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::InvalidSpec(m.to_string()));
        if self.n_files == 0 {
            return bad("n_files must be at least 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if self.n_clients == 0 {
            return bad("n_clients must be at least 1");
        }
        if let Skew::PowerLaw(e) = self.skew {
            if e <= 0.0 || !e.is_finite() {
                return bad("power-law exponent must be positive");
            }
        }
        let total: f64 = self.mix.entries().iter().map(|(_, r)| r).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad("mix ratios must sum to 1");
        }
        Ok(())
    }

    /// One-line `key=value` rendering used in trace headers.
    pub fn echo(&self) -> String {
        let skew = match self.skew {
            Skew::Uniform => "uniform".to_string(),
            Skew::PowerLaw(e) => format!("powerlaw:{e}"),
        };
        let order = match self.order {
            RankOrder::Hlf => "hlf",
            RankOrder::Llf => "llf",
            RankOrder::Random => "random",
        };
        let hot = self.hot_in.map_or("none".to_string(), |h| {
            format!("{}s:{}", h.period / NANOS_PER_SEC, h.k)
        });
        format!(
            "name={} mix={} n_files={} max_depth={} skew={skew} order={order} eighty_twenty={} hot_in={hot} independent_writes={} seed={} length={} n_clients={}",
            self.name, self.mix, self.n_files, self.max_depth, self.eighty_twenty, self.independent_writes, self.seed, self.length, self.n_clients
        )
    }
}

/// Flat key-value form of a workload spec.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub name: Option<String>,
    pub mix: Option<String>,
    pub n_files: Option<usize>,
    pub max_depth: Option<usize>,
    pub skew: Option<String>,
    pub exponent: Option<f64>,
    pub order: Option<RankOrder>,
    pub eighty_twenty: Option<bool>,
    pub hot_in_period_s: Option<f64>,
    pub hot_in_k: Option<usize>,
    pub independent_writes: Option<bool>,
    pub seed: Option<u64>,
    pub length: Option<usize>,
    pub n_clients: Option<usize>,
}

impl SpecFile {
    pub fn parse(text: &str) -> Result<Self, WorkloadError> {
        toml::from_str(text).map_err(|e| WorkloadError::InvalidSpec(e.to_string()))
    }

    pub fn into_spec(self) -> Result<WorkloadSpec, WorkloadError> {
        let named = self.name.is_some();
        let name = self.name.unwrap_or_else(|| "custom".into());
        let mut spec = match OpMix::named(&name) {
            Ok(_) => WorkloadSpec::named(&name)?,
            // An unknown name only labels an explicit mix.
            Err(e) if named && self.mix.is_none() => return Err(e),
            Err(_) => WorkloadSpec {
                name: name.clone(),
                ..WorkloadSpec::named("thumb")?
            },
        };
        if let Some(m) = self.mix {
            spec.mix = m.parse()?;
        }
        if let Some(v) = self.n_files {
            spec.n_files = v;
        }
        if let Some(v) = self.max_depth {
            spec.max_depth = v;
        }
        match self.skew.as_deref() {
            None => {}
            Some("uniform") => spec.skew = Skew::Uniform,
            Some("powerlaw") => spec.skew = Skew::PowerLaw(self.exponent.unwrap_or(0.9)),
            Some(other) => {
                return Err(WorkloadError::InvalidSpec(format!(
                    "unknown skew {other:?}"
                )))
            }
        }
        if let (Some(e), Skew::PowerLaw(_)) = (self.exponent, spec.skew) {
            spec.skew = Skew::PowerLaw(e);
        }
        if let Some(v) = self.order {
            spec.order = v;
        }
        if let Some(v) = self.eighty_twenty {
            spec.eighty_twenty = v;
        }
        if let Some(p) = self.hot_in_period_s {
            spec.hot_in = Some(HotIn {
                period: (p * NANOS_PER_SEC as f64) as SimTime,
                k: self.hot_in_k.unwrap_or(100),
            });
        }
        if let Some(v) = self.independent_writes {
            spec.independent_writes = v;
        }
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if let Some(v) = self.length {
            spec.length = v;
        }
        if let Some(v) = self.n_clients {
            spec.n_clients = v;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// A generated namespace plus the paths the sampler draws from.
#[derive(Debug, Clone)]
pub struct Namespace {
    pub tree: NamespaceTree,
    pub files: Vec<Path>,
    pub dirs: Vec<Path>,
    pub rmdir_targets: Vec<Path>,
    pub fanout: usize,
}

fn dir_count(fanout: usize, height: usize) -> usize {
    (1..=height)
        .map(|l| fanout.saturating_pow(l as u32))
        .fold(0usize, |a, b| a.saturating_add(b))
}

/// Balanced directory tree of height `max_depth - 1` with files spread
/// over every directory, plus a reserved directory for mkdir/rmdir.
pub fn build_namespace(spec: &WorkloadSpec) -> Result<Namespace, WorkloadError> {
    spec.validate()?;
    let height = spec.max_depth - 1;
    let want_dirs = spec.n_files.div_ceil(FILES_PER_DIR);
    let mut fanout = 2;
    while height > 0 && dir_count(fanout, height) < want_dirs {
        fanout += 1;
    }
    let mut tree = NamespaceTree::new(MetadataRecord::directory(0o755, Principal::new(0, 0), 0));
    let dir_rec = MetadataRecord::directory(0o755, WORKLOAD_OWNER, 0);
    let file_rec = MetadataRecord::file(0o644, WORKLOAD_OWNER, 0);
    let mut dirs = Vec::new();
    let mut frontier = vec![Path::root()];
    for _ in 0..height {
        let mut next = Vec::with_capacity(frontier.len() * fanout);
        for parent in &frontier {
            for i in 0..fanout {
                let d = parent.child(&format!("d{i}")).unwrap();
                tree.insert(d.clone(), dir_rec).unwrap();
                next.push(d);
            }
        }
        dirs.extend(next.iter().cloned());
        frontier = next;
    }
    let homes: Vec<Path> = if dirs.is_empty() {
        vec![Path::root()]
    } else {
        dirs.clone()
    };
    if homes[0].is_root() {
        // Files directly under the root need a writable root for creates.
        let mut root = *tree.get(&Path::root()).unwrap();
        root.owner = WORKLOAD_OWNER.uid;
        root.group = WORKLOAD_OWNER.gid;
        tree = NamespaceTree::new(root);
    }
    let mut files = Vec::with_capacity(spec.n_files);
    for i in 0..spec.n_files {
        let f = homes[i % homes.len()].child(&format!("f{i}")).unwrap();
        tree.insert(f.clone(), file_rec).unwrap();
        files.push(f);
    }
    let reserved = Path::root().child(RESERVED_DIR).unwrap();
    tree.insert(reserved.clone(), dir_rec).unwrap();
    let expected_rmdirs =
        (spec.length as f64 * spec.mix.ratio(OpKind::Rmdir) * 1.2).ceil() as usize + 8;
    let mut rmdir_targets = Vec::with_capacity(expected_rmdirs);
    for j in 0..expected_rmdirs {
        let r = reserved.child(&format!("r{j}")).unwrap();
        tree.insert(r.clone(), dir_rec).unwrap();
        rmdir_targets.push(r);
    }
    Ok(Namespace {
        tree,
        files,
        dirs,
        rmdir_targets,
        fanout,
    })
}

/// Weights by rank, highest first: `w_i ∝ i^-exponent` or all equal.
pub fn rank_weights(n: usize, skew: Skew) -> Vec<f64> {
    let raw: Vec<f64> = match skew {
        Skew::Uniform => vec![1.0; n],
        Skew::PowerLaw(e) => (1..=n).map(|i| (i as f64).powf(-e)).collect(),
    };
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Rescales rank weights so the top 20% of ranks hold 80% of the mass,
/// keeping the shape within each group.
pub fn apply_eighty_twenty(weights: &[f64]) -> Vec<f64> {
    let n = weights.len();
    let top = ((n as f64) * 0.2).round().max(1.0) as usize;
    if top >= n {
        return weights.to_vec();
    }
    let hot: f64 = weights[..top].iter().sum();
    let cold: f64 = weights[top..].iter().sum();
    weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            if i < top {
                w * 0.8 / hot
            } else {
                w * 0.2 / cold
            }
        })
        .collect()
}

/// Popularity of files: `ranking[r]` is the file index holding rank `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Popularity {
    pub ranking: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Popularity {
    /// Weight of every file, indexed like the file list.
    pub fn file_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.ranking.len()];
        for (r, &f) in self.ranking.iter().enumerate() {
            w[f] = self.weights[r];
        }
        w
    }

    /// Files in decreasing popularity.
    pub fn hottest(&self, n: usize) -> &[usize] {
        &self.ranking[..n.min(self.ranking.len())]
    }

    /// The `k` coldest files take the `k` hottest ranks, in order, and
    /// every other file moves down `k` ranks.
    pub fn hot_in_shift(&mut self, k: usize) {
        let n = self.ranking.len();
        if n == 0 {
            return;
        }
        self.ranking.rotate_right(k % n);
    }
}

/// Ranks files per `order` and pairs them with power-law weights.
pub fn assign_frequencies(
    files: &[Path],
    skew: Skew,
    order: RankOrder,
    eighty_twenty: bool,
    seed: u64,
) -> Popularity {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_f11e5);
    let mut ranking: Vec<usize> = (0..files.len()).collect();
    ranking.shuffle(&mut rng);
    match order {
        RankOrder::Random => {}
        RankOrder::Hlf => ranking.sort_by_key(|&i| std::cmp::Reverse(files[i].depth())),
        RankOrder::Llf => ranking.sort_by_key(|&i| files[i].depth()),
    }
    let mut weights = rank_weights(files.len(), skew);
    if eighty_twenty {
        weights = apply_eighty_twenty(&weights);
    }
    Popularity { ranking, weights }
}

/// Draws operations against a namespace.
pub struct OpSampler {
    kinds: Vec<OpKind>,
    kind_dist: WeightedIndex<f64>,
    rank_dist: WeightedIndex<f64>,
    write_ranking: Option<Vec<usize>>,
    rng: ChaCha8Rng,
    counter: u64,
    rmdirs: usize,
}

impl OpSampler {
    pub fn new(spec: &WorkloadSpec, pop: &Popularity, seed: u64) -> Self {
        let kinds: Vec<OpKind> = spec.mix.entries().iter().map(|(k, _)| *k).collect();
        let kind_dist = WeightedIndex::new(spec.mix.entries().iter().map(|(_, r)| *r)).unwrap();
        let rank_dist = WeightedIndex::new(pop.weights.iter().copied()).unwrap();
        let write_ranking = spec.independent_writes.then(|| {
            let mut r = pop.ranking.clone();
            r.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x0717_e5));
            r
        });
        Self {
            kinds,
            kind_dist,
            rank_dist,
            write_ranking,
            rng: ChaCha8Rng::seed_from_u64(seed),
            counter: 0,
            rmdirs: 0,
        }
    }

    /// Draws a file by popularity.
    pub fn draw_file(&mut self, pop: &Popularity) -> usize {
        pop.ranking[self.rank_dist.sample(&mut self.rng)]
    }

    pub fn draw_kind(&mut self) -> OpKind {
        self.kinds[self.kind_dist.sample(&mut self.rng)]
    }

    pub fn next(&mut self, ns: &Namespace, pop: &Popularity) -> MetaOp {
        let kind = self.draw_kind();
        let f = match &self.write_ranking {
            Some(w) if !kind.is_read() => w[self.rank_dist.sample(&mut self.rng)],
            _ => self.draw_file(pop),
        };
        self.build(kind, &ns.files[f], ns)
    }

    /// Concrete operation of `kind` centred on `file`.
    pub fn build(&mut self, kind: OpKind, file: &Path, ns: &Namespace) -> MetaOp {
        self.counter += 1;
        let n = self.counter;
        let parent = file.parent().unwrap_or_else(Path::root);
        let reserved = Path::root().child(RESERVED_DIR).unwrap();
        use OpKind::*;
        match kind {
            Open | Close | Stat | Delete => MetaOp::new(kind, file.clone()),
            Statdir | Readdir => MetaOp::new(kind, parent),
            Create => MetaOp::new(kind, parent.child(&format!("n{n}")).unwrap()),
            Mkdir => MetaOp::new(kind, reserved.child(&format!("m{n}")).unwrap()),
            Rmdir => {
                let t = ns.rmdir_targets[self.rmdirs % ns.rmdir_targets.len()].clone();
                self.rmdirs += 1;
                MetaOp::new(kind, t)
            }
            Rename => MetaOp::with_args(
                kind,
                file.clone(),
                OpArgs::Dest(parent.child(&format!("mv{n}")).unwrap()),
            ),
            Chmod => MetaOp::with_args(
                kind,
                file.clone(),
                OpArgs::Mode(if n % 2 == 0 { 0o644 } else { 0o664 }),
            ),
            ChmodRecursive => MetaOp::with_args(
                kind,
                parent,
                OpArgs::Mode(if n % 2 == 0 { 0o755 } else { 0o775 }),
            ),
            Chown => MetaOp::with_args(
                kind,
                file.clone(),
                OpArgs::Owner {
                    uid: WORKLOAD_OWNER.uid,
                    gid: WORKLOAD_OWNER.gid,
                },
            ),
            ChownRecursive => MetaOp::with_args(
                kind,
                parent,
                OpArgs::Owner {
                    uid: WORKLOAD_OWNER.uid,
                    gid: WORKLOAD_OWNER.gid,
                },
            ),
            Utime => MetaOp::with_args(
                kind,
                file.clone(),
                OpArgs::Times {
                    mtime: n as u32,
                    atime: n as u32,
                },
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceOp {
    pub client: u32,
    pub op: MetaOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub header: String,
    pub ops: Vec<TraceOp>,
}

pub const TRACE_MAGIC: &str = "#fletchsim-trace v1";

/// Draws `length` operations; destructive ones are moved to the end, then
/// clients are assigned round-robin.
pub fn sample_trace(spec: &WorkloadSpec, ns: &Namespace, pop: &Popularity, length: usize) -> Trace {
    let mut sampler = OpSampler::new(spec, pop, spec.seed);
    let mut head = Vec::with_capacity(length);
    let mut tail = Vec::new();
    for _ in 0..length {
        let op = sampler.next(ns, pop);
        if op.kind.is_destructive() {
            tail.push(op);
        } else {
            head.push(op);
        }
    }
    head.extend(tail);
    let n = spec.n_clients.max(1) as u32;
    Trace {
        header: spec.echo(),
        ops: head
            .into_iter()
            .enumerate()
            .map(|(i, op)| TraceOp {
                client: i as u32 % n,
                op,
            })
            .collect(),
    }
}

/// Namespace, popularity and trace for a spec.
pub fn generate(spec: &WorkloadSpec) -> Result<(Namespace, Popularity, Trace), WorkloadError> {
    let ns = build_namespace(spec)?;
    let pop = assign_frequencies(
        &ns.files,
        spec.skew,
        spec.order,
        spec.eighty_twenty,
        spec.seed,
    );
    let trace = sample_trace(spec, &ns, &pop, spec.length);
    Ok((ns, pop, trace))
}

fn format_args(a: &OpArgs) -> String {
    match a {
        OpArgs::None => "-".into(),
        OpArgs::Mode(m) => format!("mode={m:04o}"),
        OpArgs::Owner { uid, gid } => format!("owner={uid}:{gid}"),
        OpArgs::Dest(p) => format!("dest={p}"),
        OpArgs::Times { mtime, atime } => format!("times={mtime}:{atime}"),
    }
}

fn parse_args(s: &str) -> Result<OpArgs, String> {
    if s == "-" {
        return Ok(OpArgs::None);
    }
    let (k, v) = s.split_once('=').ok_or_else(|| format!("bad args {s:?}"))?;
    let pair = |v: &str| -> Result<(u32, u32), String> {
        let (a, b) = v.split_once(':').ok_or_else(|| format!("bad pair {v:?}"))?;
        Ok((
            a.parse().map_err(|_| format!("bad number {a:?}"))?,
            b.parse().map_err(|_| format!("bad number {b:?}"))?,
        ))
    };
    match k {
        "mode" => Ok(OpArgs::Mode(
            u16::from_str_radix(v, 8).map_err(|e| e.to_string())?,
        )),
        "owner" => pair(v).map(|(uid, gid)| OpArgs::Owner { uid, gid }),
        "dest" => Ok(OpArgs::Dest(Path::parse(v).map_err(|e| e.to_string())?)),
        "times" => pair(v).map(|(mtime, atime)| OpArgs::Times { mtime, atime }),
        other => Err(format!("unknown argument {other:?}")),
    }
}

impl Trace {
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.ops.len() * 32);
        out.push_str(TRACE_MAGIC);
        out.push(' ');
        out.push_str(&self.header);
        out.push('\n');
        for t in &self.ops {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                t.client,
                t.op.kind,
                t.op.target,
                format_args(&t.op.args)
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, WorkloadError> {
        let mut lines = text.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) if l.starts_with(TRACE_MAGIC) => l[TRACE_MAGIC.len()..].trim().to_string(),
            _ => {
                return Err(WorkloadError::TraceFormat {
                    line: 1,
                    reason: format!("missing {TRACE_MAGIC:?} header"),
                })
            }
        };
        let mut ops = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| WorkloadError::TraceFormat {
                line: i + 1,
                reason,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", f.len())));
            }
            let client = f[0]
                .parse()
                .map_err(|_| bad(format!("bad client {:?}", f[0])))?;
            let kind = OpKind::from_str(f[1]).map_err(bad)?;
            let target = Path::parse(f[2]).map_err(|e| bad(e.to_string()))?;
            let args = parse_args(f[3]).map_err(bad)?;
            ops.push(TraceOp {
                client,
                op: MetaOp::with_args(kind, target, args),
            });
        }
        Ok(Self { header, ops })
    }
}

/// Draws operations on demand, applying hot-in shifts as time advances.
pub struct LiveGenerator {
    pub ns: Namespace,
    pub pop: Popularity,
    sampler: OpSampler,
    hot_in: Option<HotIn>,
    next_shift: SimTime,
    pub shifts: Vec<SimTime>,
    /// Files created by earlier draws, oldest first.
    created: VecDeque<Path>,
}

impl LiveGenerator {
    pub fn new(spec: &WorkloadSpec, ns: Namespace, pop: Popularity) -> Self {
        let sampler = OpSampler::new(spec, &pop, spec.seed);
        Self {
            ns,
            pop,
            sampler,
            hot_in: spec.hot_in,
            next_shift: spec.hot_in.map_or(SimTime::MAX, |h| h.period),
            shifts: Vec::new(),
            created: VecDeque::new(),
        }
    }

    pub fn next_op(&mut self, now: SimTime) -> MetaOp {
        if let Some(h) = self.hot_in {
            while now >= self.next_shift {
                self.pop.hot_in_shift(h.k);
                self.shifts.push(self.next_shift);
                self.next_shift += h.period;
            }
        }
        // Deletes remove files this run created, so the base namespace
        // (and with it the hot set) survives long runs.
        let op = self.sampler.next(&self.ns, &self.pop);
        let op = match op.kind {
            OpKind::Delete => match self.created.pop_front() {
                Some(p) => MetaOp::new(OpKind::Delete, p),
                None => {
                    let file = op.target.clone();
                    self.sampler.build(OpKind::Create, &file, &self.ns)
                }
            },
            _ => op,
        };
        if op.kind == OpKind::Create {
            self.created.push_back(op.target.clone());
        }
        op
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str) -> WorkloadSpec {
        WorkloadSpec {
            n_files: 1000,
            length: 2000,
            ..WorkloadSpec::named(name).unwrap()
        }
    }

    #[test]
    fn named_mixes_sum_to_one() {
        for n in ["alibaba", "training", "thumb", "linkedin"] {
            let m = OpMix::named(n).unwrap();
            let s: f64 = m.entries().iter().map(|(_, r)| r).sum();
            assert!((s - 1.0).abs() < 1e-9, "{n}");
        }
        assert!((OpMix::named("thumb").unwrap().read_ratio() - 0.8571).abs() < 1e-3);
        assert!((OpMix::named("training").unwrap().read_ratio() - 0.8308).abs() < 1e-3);
        assert!(OpMix::named("nope").is_err());
    }

    #[test]
    fn mix_parses_custom_entries() {
        let m: OpMix = "open:3,chmod:1".parse().unwrap();
        assert_eq!(m.ratio(OpKind::Chmod), 0.25);
        assert!("open:x".parse::<OpMix>().is_err());
    }

    #[test]
    fn small_namespace_respects_depth() {
        let spec = WorkloadSpec {
            n_files: 8,
            max_depth: 3,
            ..small("thumb")
        };
        let ns = build_namespace(&spec).unwrap();
        assert_eq!(ns.files.len(), 8);
        assert!(ns.files.iter().all(|f| f.depth() <= 3));
        ns.tree.check_invariants().unwrap();
    }

    #[test]
    fn default_namespace_is_shallow_enough() {
        let ns = build_namespace(&WorkloadSpec::named("thumb").unwrap()).unwrap();
        let shallow = ns.files.iter().filter(|f| f.depth() <= 10).count();
        assert!(shallow as f64 >= 0.9 * ns.files.len() as f64);
        assert_eq!(ns.files.len(), 100_000);
    }

    #[test]
    fn power_law_ratio() {
        let w = rank_weights(100, Skew::PowerLaw(0.9));
        assert!((w[0] / w[1] - 2f64.powf(0.9)).abs() < 1e-12);
        let u = rank_weights(10, Skew::Uniform);
        assert!(u.iter().all(|x| (x - 0.1).abs() < 1e-12));
    }

    #[test]
    fn eighty_twenty_mass() {
        let w = apply_eighty_twenty(&rank_weights(1000, Skew::PowerLaw(0.9)));
        let top: f64 = w[..200].iter().sum();
        assert!((top - 0.8).abs() < 1e-9);
    }

    #[test]
    fn orders_rank_by_depth() {
        let spec = small("thumb");
        let ns = build_namespace(&spec).unwrap();
        let hlf = assign_frequencies(&ns.files, spec.skew, RankOrder::Hlf, false, 1);
        let llf = assign_frequencies(&ns.files, spec.skew, RankOrder::Llf, false, 1);
        let d = |p: &Popularity, r: usize| ns.files[p.ranking[r]].depth();
        assert!(d(&hlf, 0) >= d(&hlf, ns.files.len() - 1));
        assert!(d(&llf, 0) <= d(&llf, ns.files.len() - 1));
    }

    #[test]
    fn live_deletes_only_remove_created_files() {
        let (ns, pop, _) = generate(&small("training")).unwrap();
        let base: std::collections::BTreeSet<Path> = ns.files.iter().cloned().collect();
        let mut g = LiveGenerator::new(&small("training"), ns, pop);
        let mut created = std::collections::BTreeSet::new();
        let (mut deletes, mut creates) = (0, 0);
        for i in 0..20_000 {
            let op = g.next_op(i);
            match op.kind {
                OpKind::Create => {
                    creates += 1;
                    created.insert(op.target);
                }
                OpKind::Delete => {
                    deletes += 1;
                    assert!(!base.contains(&op.target));
                    assert!(
                        created.remove(&op.target),
                        "{} was never created",
                        op.target
                    );
                }
                _ => {}
            }
        }
        assert!(deletes > 500 && creates >= deletes);
    }

    #[test]
    fn hot_in_promotes_coldest() {
        let mut p = Popularity {
            ranking: (0..10).collect(),
            weights: rank_weights(10, Skew::PowerLaw(0.9)),
        };
        let before = p.clone();
        p.hot_in_shift(0);
        assert_eq!(p, before);
        p.hot_in_shift(3);
        assert_eq!(p.hottest(3), &[7, 8, 9]);
        assert_eq!(p.ranking[3..], before.ranking[..7]);
        assert_eq!(p.weights, before.weights);
    }

    #[test]
    fn destructive_ops_at_end_and_trace_roundtrip() {
        let spec = small("alibaba");
        let (_, _, t) = generate(&spec).unwrap();
        let first = t
            .ops
            .iter()
            .position(|o| o.op.kind.is_destructive())
            .unwrap();
        assert!(t.ops[first..].iter().all(|o| o.op.kind.is_destructive()));
        let text = t.to_text();
        assert_eq!(Trace::parse(&text).unwrap(), t);
        assert_eq!(generate(&spec).unwrap().2.to_text(), text);
        assert!(Trace::parse("bogus\n").is_err());
        assert!(generate(&WorkloadSpec { length: 0, ..spec })
            .unwrap()
            .2
            .ops
            .is_empty());
    }

    #[test]
    fn spec_file_overrides() {
        let f: SpecFile = toml::from_str(
            "name = \"linkedin\"\nn_files = 50\nskew = \"uniform\"\nhot_in_period_s = 20.0\n",
        )
        .unwrap();
        let s = f.into_spec().unwrap();
        assert_eq!(s.n_files, 50);
        assert_eq!(s.skew, Skew::Uniform);
        assert_eq!(s.hot_in.unwrap().period, 20 * NANOS_PER_SEC);
        assert!(toml::from_str::<SpecFile>("bogus = 1").is_err());
        assert!(SpecFile::parse("name = \"nonesuch\"")
            .unwrap()
            .into_spec()
            .is_err());
        let labelled = SpecFile::parse("name = \"mine\"\nmix = \"open:1\"")
            .unwrap()
            .into_spec()
            .unwrap();
        assert_eq!(labelled.name, "mine");
    }

    #[test]
    fn independent_writes_use_a_different_hot_set() {
        let top = |spec: &WorkloadSpec, write: bool| {
            let (ns, _, trace) = generate(spec).unwrap();
            let mut counts = BTreeMap::new();
            for t in trace.ops.iter().filter(|t| t.op.kind.is_read() != write) {
                *counts.entry(t.op.target.clone()).or_insert(0) += 1;
            }
            let mut v: Vec<_> = counts.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            assert!(ns.files.contains(&v[0].0));
            v[0].0.clone()
        };
        let shared = WorkloadSpec {
            mix: OpMix::open_chmod(50.0).unwrap(),
            length: 20_000,
            ..small("read_only")
        };
        assert_eq!(top(&shared, false), top(&shared, true));
        let split = WorkloadSpec {
            independent_writes: true,
            ..shared.clone()
        };
        assert_eq!(top(&split, false), top(&shared, false));
        assert_ne!(top(&split, false), top(&split, true));
    }
}
