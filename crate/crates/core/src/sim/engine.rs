//! The event loop wiring clients, switch, servers and controller together.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::client::{ClientConfig, ClientDriver};
use crate::controller::{Controller, ControllerAction, ControllerConfig};
use crate::hashing::PathHasher;
use crate::history::History;
use crate::namespace::{MetaOp, NamespaceTree, Path, Principal};
use crate::protocol::{
    ClientRequest, ClientResponse, ControlAck, ControlToServer, ControlToSwitch, ForwardedRequest,
    ServedBy, ServerMsg, ServerToSwitch, SwitchToControl, SwitchToServer,
};
use crate::server::{MetadataServer, Outcome, ServerAction, ServerConfig, ServerContext};
use crate::switch::{Recirc, Switch, SwitchAction, SwitchConfig, Waiter};
use crate::workload::{LiveGenerator, Namespace, Popularity, Trace, WORKLOAD_OWNER};
use crate::SimTime;

use super::checks::{audit_quiescent, check_switch_response};
use super::config::{Leg, Scheme, SimConfig};
use super::metrics::{Collector, LatencyStats, Metrics};

/// Floor of the adaptive client timeout.
const MIN_CLIENT_TIMEOUT: SimTime = 10_000_000;

#[derive(Debug)]
enum Event {
    ClientNext(u32),
    OpenArrival,
    ClientTimeout { client: u32, seq: u64, attempt: u32 },
    ClientFromSwitch(ClientResponse),
    SwitchFromClient(ClientRequest),
    SwitchRecirc(Box<Recirc>),
    SwitchWake(Waiter),
    SwitchFromServer(ServerToSwitch),
    SwitchFromControl(ControlToSwitch),
    ServerFromSwitch { server: usize, msg: SwitchToServer },
    ServiceDone(usize),
    ServerRetransmit { server: usize, seq: u8, epoch: u64 },
    ServerFromControl { server: usize, msg: ControlToServer },
    ControllerFromSwitch(SwitchToControl),
    ControllerFromServer(ControlAck),
    ControllerTimeout(u64),
    PullTimer,
}

struct Scheduled {
    at: SimTime,
    seq: u64,
    ev: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, o: &Self) -> Ordering {
        (o.at, o.seq).cmp(&(self.at, self.seq))
    }
}

/// Where operations come from.
pub enum OpSource {
    /// Per-client queues cut from a trace.
    Trace(Vec<VecDeque<MetaOp>>),
    /// One shared stream, used by open-loop trace replay.
    Stream(VecDeque<(u32, MetaOp)>),
    Live(Box<LiveGenerator>),
}

impl OpSource {
    pub fn from_trace(trace: &Trace, n_clients: usize, open_loop: bool) -> Self {
        if open_loop {
            return OpSource::Stream(
                trace
                    .ops
                    .iter()
                    .map(|t| (t.client % n_clients as u32, t.op.clone()))
                    .collect(),
            );
        }
        let mut queues = vec![VecDeque::new(); n_clients];
        for t in &trace.ops {
            queues[t.client as usize % n_clients].push_back(t.op.clone());
        }
        OpSource::Trace(queues)
    }
}

/// Principal of client `i` when clients cycle through `n` identities. The
/// first identity owns the generated namespace; the others share no group
/// with it.
pub fn client_principal(i: usize, n: usize) -> Principal {
    let j = (i % n.max(1)) as u32;
    if j == 0 {
        WORKLOAD_OWNER
    } else {
        Principal::new(WORKLOAD_OWNER.uid + j, WORKLOAD_OWNER.gid + 1000 + j)
    }
}

pub struct Engine {
    cfg: SimConfig,
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Scheduled>,
    rng: ChaCha8Rng,
    tree: NamespaceTree,
    history: History,
    next_write_id: u64,
    switch: Switch,
    servers: Vec<MetadataServer>,
    controller: Option<Controller>,
    clients: Vec<ClientDriver>,
    source: OpSource,
    /// Clients that may still issue in closed-loop mode.
    active_clients: usize,
    issuing_done: bool,
    next_open_client: u32,
    latency_ewma: f64,
    timeouts: bool,
    collector: Collector,
    violations: Vec<String>,
}

impl Engine {
    pub fn new(cfg: SimConfig, ns: &Namespace, pop: &Popularity, source: OpSource) -> Self {
        let caching = cfg.scheme == Scheme::Fletch;
        let hasher = PathHasher::new(cfg.hash_mode);
        let tree = ns.tree.clone();
        let history = History::from_tree(&tree);
        let root = *tree.get(&Path::root()).expect("namespace has a root");
        let mut switch = Switch::new(SwitchConfig {
            capacity: cfg.capacity,
            cms_threshold: cfg.cms_threshold,
            lock_mode: cfg.lock_mode,
            n_servers: cfg.n_servers,
            traversal_ns: cfg.traversal_ns,
            cross_pipe_redirect: cfg.cross_pipe_redirect,
            caching,
            fidelity_check: cfg.fidelity_check,
            starvation_threshold: cfg.starvation_threshold,
            trace_traversals: cfg.dump_events,
            root,
        });
        let mut servers: Vec<MetadataServer> = (0..cfg.n_servers)
            .map(|id| {
                MetadataServer::new(ServerConfig {
                    id,
                    n_servers: cfg.n_servers,
                    lock_mode: cfg.lock_mode,
                    hasher,
                    service_ns: cfg.service_ns(),
                    cache_overhead: cfg.cache_overhead,
                    caching,
                    retransmit_ns: cfg.retransmit_ns(),
                })
            })
            .collect();
        let mut violations = Vec::new();
        let controller = caching.then(|| {
            let mut ctl = Controller::new(ControllerConfig {
                capacity: cfg.capacity,
                n_servers: cfg.n_servers,
                hasher,
                control_timeout_ns: cfg.control_timeout,
                max_retries: cfg.control_retries,
                cms_threshold: cfg.cms_threshold,
            });
            if cfg.preload > 0 {
                let hot: Vec<Path> = pop
                    .hottest(cfg.preload)
                    .iter()
                    .map(|&i| ns.files[i].clone())
                    .collect();
                let (entries, grants) = ctl.preload(&hot, &tree, &history);
                if let Err(e) = switch.admit(&entries) {
                    violations.push(format!("preload: {e}"));
                }
                for s in &mut servers {
                    s.install_tokens(grants.iter().cloned());
                }
            }
            ctl
        });
        let clients = (0..cfg.n_clients)
            .map(|i| {
                ClientDriver::new(ClientConfig {
                    id: i as u32,
                    principal: client_principal(i, cfg.n_principals),
                    hasher,
                    lock_mode: cfg.lock_mode,
                    token_ttl: cfg.token_ttl,
                    timeout: cfg.client_timeout.unwrap_or(MIN_CLIENT_TIMEOUT),
                })
            })
            .collect();
        let timeouts =
            cfg.client_timeout.is_some() || cfg.client_leg.loss > 0.0 || cfg.server_leg.loss > 0.0;
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            active_clients: cfg.n_clients,
            cfg,
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            tree,
            history,
            next_write_id: 0,
            switch,
            servers,
            controller,
            clients,
            source,
            issuing_done: false,
            next_open_client: 0,
            latency_ewma: 0.0,
            timeouts,
            collector: Collector::default(),
            violations,
        }
    }

    fn schedule(&mut self, at: SimTime, ev: Event) {
        self.next_seq += 1;
        self.queue.push(Scheduled {
            at,
            seq: self.next_seq,
            ev,
        });
    }

    /// Delay of one message over `leg`, or `None` if it is lost.
    fn transit(&mut self, leg: Leg, lossy: bool) -> Option<SimTime> {
        if lossy && leg.loss > 0.0 && self.rng.random::<f64>() < leg.loss {
            return None;
        }
        let jitter = if leg.jitter > 0 {
            self.rng.random_range(0..=leg.jitter)
        } else {
            0
        };
        Some(leg.base + jitter)
    }

    fn past_cutoff(&self) -> bool {
        self.cfg.duration.is_some_and(|d| self.now >= d)
    }

    fn workload_done(&self) -> bool {
        let issuing = if self.cfg.open_loop_rate.is_some() {
            !self.issuing_done
        } else {
            self.active_clients > 0
        };
        !issuing && self.clients.iter().all(|c| c.outstanding() == 0)
    }

    pub fn run(mut self) -> Metrics {
        if self.cfg.open_loop_rate.is_some() {
            self.schedule(0, Event::OpenArrival);
        } else {
            for c in 0..self.cfg.n_clients as u32 {
                self.schedule(0, Event::ClientNext(c));
            }
        }
        if self.controller.is_some() {
            self.schedule(self.cfg.pull_period, Event::PullTimer);
        }
        while let Some(s) = self.queue.pop() {
            self.now = s.at;
            self.dispatch(s.ev);
            // Stop at the first broken invariant so the state can be inspected.
            if !self.violations.is_empty()
                || !self.switch.violations.is_empty()
                || self
                    .controller
                    .as_ref()
                    .is_some_and(|c| !c.violations.is_empty())
            {
                break;
            }
        }
        self.finish()
    }

    fn dispatch(&mut self, ev: Event) {
        match ev {
            Event::ClientNext(c) => self.client_next(c),
            Event::OpenArrival => self.open_arrival(),
            Event::ClientTimeout {
                client,
                seq,
                attempt,
            } => {
                if let Some(req) = self.clients[client as usize].on_timeout(seq, attempt, self.now)
                {
                    self.send_to_switch(req);
                }
            }
            Event::ClientFromSwitch(resp) => self.client_response(resp),
            Event::SwitchFromClient(req) => {
                let acts = self.switch.on_client_request(req, self.now);
                self.switch_actions(acts);
            }
            Event::SwitchRecirc(r) => {
                let acts = self.switch.on_recirculate(*r, self.now);
                self.switch_actions(acts);
            }
            Event::SwitchWake(w) => {
                let acts = self.switch.on_wake(w, self.now);
                self.switch_actions(acts);
            }
            Event::SwitchFromServer(m) => {
                let acts = self.switch.on_server_message(m, self.now);
                self.switch_actions(acts);
            }
            Event::SwitchFromControl(m) => self.switch_control(m),
            Event::ServerFromSwitch { server, msg } => match msg {
                SwitchToServer::Request(f) => self.server_request(server, f),
                SwitchToServer::Ack { seq } => {
                    let acts = self.servers[server].on_ack(seq, self.now);
                    self.server_actions(server, acts);
                }
            },
            Event::ServiceDone(s) => self.service_done(s),
            Event::ServerRetransmit { server, seq, epoch } => {
                let acts = self.servers[server].on_retransmit_timer(seq, epoch, self.now);
                self.server_actions(server, acts);
            }
            Event::ServerFromControl { server, msg } => {
                let ctx = ServerContext {
                    tree: &mut self.tree,
                    history: &mut self.history,
                    next_write_id: &mut self.next_write_id,
                    now: self.now,
                };
                let (ack, released) = self.servers[server].on_control(msg, &ctx);
                if let Some(d) = self.transit(self.cfg.control_leg, true) {
                    self.schedule(self.now + d, Event::ControllerFromServer(ack));
                }
                for f in released {
                    self.server_request(server, f);
                }
            }
            Event::ControllerFromSwitch(m) => {
                if let Some(ctl) = self.controller.as_mut() {
                    let acts = ctl.on_switch(m, self.now);
                    self.controller_actions(acts);
                }
            }
            Event::ControllerFromServer(ack) => {
                if let Some(ctl) = self.controller.as_mut() {
                    let acts = ctl.on_server_ack(ack, self.now);
                    self.controller_actions(acts);
                }
            }
            Event::ControllerTimeout(msg) => {
                if let Some(ctl) = self.controller.as_mut() {
                    let acts = ctl.on_timeout(msg, self.now);
                    self.controller_actions(acts);
                }
            }
            Event::PullTimer => {
                if self.workload_done() {
                    return;
                }
                if let Some(ctl) = self.controller.as_mut() {
                    let acts = ctl.on_pull_timer(self.now);
                    self.controller_actions(acts);
                }
                let next = self.now + self.cfg.pull_period;
                self.schedule(next, Event::PullTimer);
            }
        }
    }

    // ---- clients -------------------------------------------------------

    fn next_op_for(&mut self, c: u32) -> Option<MetaOp> {
        let now = self.now;
        match &mut self.source {
            OpSource::Trace(q) => q[c as usize].pop_front(),
            OpSource::Stream(_) => None,
            OpSource::Live(g) => Some(g.next_op(now)),
        }
    }

    fn client_next(&mut self, c: u32) {
        let op = if self.past_cutoff() {
            None
        } else {
            self.next_op_for(c)
        };
        match op {
            Some(op) => self.issue(c, op),
            None => self.active_clients -= 1,
        }
    }

    fn open_arrival(&mut self) {
        if self.past_cutoff() {
            self.issuing_done = true;
            return;
        }
        let n = self.cfg.n_clients as u32;
        let next = match &mut self.source {
            OpSource::Stream(q) => q.pop_front(),
            OpSource::Trace(q) => {
                // Round-robin over the per-client queues.
                let mut found = None;
                for _ in 0..n {
                    let c = self.next_open_client;
                    self.next_open_client = (c + 1) % n;
                    if let Some(op) = q[c as usize].pop_front() {
                        found = Some((c, op));
                        break;
                    }
                }
                found
            }
            OpSource::Live(g) => {
                let c = self.next_open_client;
                self.next_open_client = (c + 1) % n;
                Some((c, g.next_op(self.now)))
            }
        };
        let Some((c, op)) = next else {
            self.issuing_done = true;
            return;
        };
        self.issue(c, op);
        let rate = self.cfg.open_loop_rate.unwrap_or(1.0);
        let u: f64 = self.rng.random::<f64>();
        let gap = (-(1.0 - u).ln() / rate * 1e9).max(1.0) as SimTime;
        self.schedule(self.now + gap, Event::OpenArrival);
    }

    fn client_timeout(&self) -> SimTime {
        self.cfg
            .client_timeout
            .unwrap_or_else(|| ((8.0 * self.latency_ewma) as SimTime).max(MIN_CLIENT_TIMEOUT))
    }

    fn issue(&mut self, c: u32, op: MetaOp) {
        let req = self.clients[c as usize].issue(op, self.now);
        self.send_to_switch(req);
    }

    fn send_to_switch(&mut self, req: ClientRequest) {
        if self.timeouts {
            let at = self.now + self.client_timeout();
            self.schedule(
                at,
                Event::ClientTimeout {
                    client: req.id.client,
                    seq: req.id.seq,
                    attempt: req.attempt,
                },
            );
        }
        if let Some(d) = self.transit(self.cfg.client_leg, true) {
            self.schedule(self.now + d, Event::SwitchFromClient(req));
        }
    }

    fn client_response(&mut self, resp: ClientResponse) {
        let c = resp.id.client;
        let Some(rec) = self.clients[c as usize].on_response(&resp, self.now) else {
            return;
        };
        // Only answers to a first transmission are unambiguous samples.
        if resp.attempt == 0 {
            let l = rec.latency as f64;
            self.latency_ewma = if self.latency_ewma == 0.0 {
                l
            } else {
                0.99 * self.latency_ewma + 0.01 * l
            };
        }
        self.collector
            .record(rec, self.cfg.duration, self.cfg.keep_records);
        if self.cfg.open_loop_rate.is_none() {
            self.schedule(self.now, Event::ClientNext(c));
        }
    }

    // ---- switch --------------------------------------------------------

    fn switch_actions(&mut self, acts: Vec<SwitchAction>) {
        for a in acts {
            match a {
                SwitchAction::ToServer { server, msg } => {
                    let lossy = matches!(msg, SwitchToServer::Ack { .. });
                    if let Some(d) = self.transit(self.cfg.server_leg, lossy) {
                        self.schedule(self.now + d, Event::ServerFromSwitch { server, msg });
                    }
                }
                SwitchAction::ToClient(resp) => {
                    if self.cfg.check_history && resp.served_by == ServedBy::Switch {
                        let bad = check_switch_response(&resp, &self.history, self.now);
                        self.violations.extend(bad);
                    }
                    if let Some(d) = self.transit(self.cfg.client_leg, true) {
                        self.schedule(self.now + d, Event::ClientFromSwitch(resp));
                    }
                }
                SwitchAction::Recirculate(r) => {
                    let at = self.now + self.cfg.traversal_ns;
                    self.schedule(at, Event::SwitchRecirc(r));
                }
                SwitchAction::Wake { at, waiter } => {
                    self.schedule(at.max(self.now), Event::SwitchWake(waiter))
                }
                SwitchAction::HotReport(p) => {
                    if self.controller.is_some() {
                        let at = self.now + self.cfg.control_leg.base;
                        self.schedule(
                            at,
                            Event::ControllerFromSwitch(SwitchToControl::HotReport(p)),
                        );
                    }
                }
            }
        }
    }

    fn switch_control(&mut self, m: ControlToSwitch) {
        let reply = match m {
            ControlToSwitch::Admit { msg, entries } => {
                if let Err(e) = self.switch.admit(&entries) {
                    self.violations.push(format!("admit: {e}"));
                }
                Some(SwitchToControl::Done { msg })
            }
            ControlToSwitch::Evict { msg, entries } => {
                if let Err(e) = self.switch.evict(&entries) {
                    self.violations.push(format!("evict: {e}"));
                }
                Some(SwitchToControl::Done { msg })
            }
            ControlToSwitch::ReadFrequencies { msg, slots } => Some(SwitchToControl::Frequencies {
                msg,
                counts: self.switch.read_frequencies(&slots),
            }),
            ControlToSwitch::PullAndReset { msg } => {
                let counts = self.switch.pull_frequencies();
                self.switch.reset_sketch();
                Some(SwitchToControl::Pulled { msg, counts })
            }
            ControlToSwitch::ReportDone(p) => {
                self.switch.report_done(&p);
                None
            }
        };
        if let Some(r) = reply {
            let at = self.now + self.cfg.control_leg.base;
            self.schedule(at, Event::ControllerFromSwitch(r));
        }
    }

    // ---- servers -------------------------------------------------------

    fn server_request(&mut self, server: usize, f: ForwardedRequest) {
        let acts = self.servers[server].on_request(f, self.now);
        self.server_actions(server, acts);
    }

    fn server_actions(&mut self, server: usize, acts: Vec<ServerAction>) {
        for a in acts {
            match a {
                ServerAction::ToSwitch(m) => {
                    let lossy = !matches!(m.msg, ServerMsg::Bounce(_));
                    if let Some(d) = self.transit(self.cfg.server_leg, lossy) {
                        self.schedule(self.now + d, Event::SwitchFromServer(m));
                    }
                }
                ServerAction::ArmRetransmit { seq, epoch, at } => {
                    self.schedule(at, Event::ServerRetransmit { server, seq, epoch })
                }
                ServerAction::ServiceDone { at } => self.schedule(at, Event::ServiceDone(server)),
            }
        }
    }

    fn service_done(&mut self, s: usize) {
        let mut ctx = ServerContext {
            tree: &mut self.tree,
            history: &mut self.history,
            next_write_id: &mut self.next_write_id,
            now: self.now,
        };
        let (outcome, acts) = self.servers[s].on_service_done(&mut ctx);
        self.server_actions(s, acts);
        match outcome {
            None | Some(Outcome::Parked) => {}
            Some(Outcome::Bounce(f)) => {
                let m = ServerToSwitch {
                    server: s,
                    seq: None,
                    msg: ServerMsg::Bounce(f),
                };
                self.server_actions(s, vec![ServerAction::ToSwitch(m)]);
            }
            Some(Outcome::Reply {
                mut reply,
                mut lock_related,
                multi,
            }) => {
                if let Some(mc) = multi.filter(|_| self.cfg.scheme == Scheme::Fletch) {
                    let mut total = 0u32;
                    for o in 0..self.servers.len() {
                        let ctx = ServerContext {
                            tree: &mut self.tree,
                            history: &mut self.history,
                            next_write_id: &mut self.next_write_id,
                            now: self.now,
                        };
                        let ups = self.servers[o].descendant_updates(&mc, &ctx);
                        total += ups.len() as u32;
                        for u in ups {
                            let acts =
                                self.servers[o].send_lock_related(ServerMsg::Update(u), self.now);
                            self.server_actions(o, acts);
                        }
                    }
                    if total > 0 {
                        MetadataServer::with_barrier(&mut reply, mc.write_id, total);
                        lock_related = true;
                    }
                }
                let msg = ServerMsg::Reply(reply);
                if lock_related {
                    let acts = self.servers[s].send_lock_related(msg, self.now);
                    self.server_actions(s, acts);
                } else {
                    let m = ServerToSwitch {
                        server: s,
                        seq: None,
                        msg,
                    };
                    self.server_actions(s, vec![ServerAction::ToSwitch(m)]);
                }
            }
        }
    }

    // ---- controller ----------------------------------------------------

    fn controller_actions(&mut self, acts: Vec<ControllerAction>) {
        for a in acts {
            match a {
                ControllerAction::ToServer { server, msg } => {
                    if let Some(d) = self.transit(self.cfg.control_leg, true) {
                        self.schedule(self.now + d, Event::ServerFromControl { server, msg });
                    }
                }
                ControllerAction::ToSwitch(m) => {
                    let at = self.now + self.cfg.control_leg.base;
                    self.schedule(at, Event::SwitchFromControl(m));
                }
                ControllerAction::ArmTimeout { msg, at } => {
                    self.schedule(at, Event::ControllerTimeout(msg))
                }
            }
        }
    }

    // ---- wrap-up -------------------------------------------------------

    fn finish(mut self) -> Metrics {
        let drained = self.queue.is_empty();
        let mut violations = std::mem::take(&mut self.violations);
        violations.extend(self.switch.violations.iter().cloned());
        if let Some(c) = &self.controller {
            violations.extend(c.violations.iter().cloned());
        }
        if drained && violations.is_empty() {
            violations.extend(audit_quiescent(
                &self.switch,
                &self.servers,
                self.controller.as_ref(),
                &self.tree,
                &self.history,
            ));
            for c in &self.clients {
                if c.stats.issued != c.stats.completed {
                    violations.push(format!(
                        "client {} issued {} but completed {}",
                        c.id(),
                        c.stats.issued,
                        c.stats.completed
                    ));
                }
            }
        }
        let col = std::mem::take(&mut self.collector);
        let completed = col.all.len() as u64;
        let issued: u64 = self.clients.iter().map(|c| c.stats.issued).sum();
        let last = self.now;
        let window_ns = self.cfg.duration.unwrap_or(col.last_completion).max(1);
        let ctl = self
            .controller
            .as_ref()
            .map(|c| c.stats.clone())
            .unwrap_or_default();
        let total_recirc = col.resolution + col.lock_wait;
        let per = |x: u64| {
            if completed == 0 {
                0.0
            } else {
                x as f64 / completed as f64
            }
        };
        Metrics {
            scheme: self.cfg.scheme.as_str().to_string(),
            n_servers: self.cfg.n_servers,
            window_ns,
            end_ns: last,
            issued,
            completed,
            completed_in_window: col.in_window,
            throughput: if completed == 0 {
                0.0
            } else {
                col.in_window as f64 * 1e9 / window_ns as f64
            },
            all: LatencyStats::from_samples(col.all),
            read: LatencyStats::from_samples(col.read),
            write: LatencyStats::from_samples(col.write),
            hits: col.hits,
            hit_rate: per(col.hits),
            total_recirculations: total_recirc,
            mean_recirculations: per(total_recirc),
            mean_resolution: per(col.resolution),
            mean_lock_wait: per(col.lock_wait),
            cross_pipe: col.cross_pipe,
            server_load: self.servers.iter().map(|s| s.stats.executed).collect(),
            starved_writes: self.switch.stats.starved_writes,
            hot_reports: self.switch.stats.hot_reports,
            admissions: ctl.admissions,
            admitted_paths: ctl.admitted_paths,
            evictions: ctl.evictions,
            evicted_paths: ctl.evicted_paths,
            aborted_admissions: ctl.aborted,
            client_retransmissions: self.clients.iter().map(|c| c.stats.retransmissions).sum(),
            server_retransmissions: self.servers.iter().map(|s| s.stats.retransmissions).sum(),
            duplicate_seq: self.switch.stats.duplicate_seq,
            per_second: col.per_second,
            violations,
            records: col.records,
            recirculations: col.recirc,
            events: std::mem::take(&mut self.switch.trace),
        }
    }
}
