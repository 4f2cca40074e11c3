//! Synchronous wiring of a controller to a switch and servers, for
//! scripted admission scenarios without the event engine.

use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::hashing::PathHasher;
use crate::history::History;
use crate::namespace::{MetadataRecord, NamespaceTree, Path, Principal};
use crate::protocol::{ControlToSwitch, SwitchToControl};
use crate::server::{MetadataServer, ServerConfig, ServerContext};
use crate::switch::{Switch, SwitchConfig};
use crate::SimTime;

use super::{Controller, ControllerAction, ControllerConfig, ControllerError};

/// Owner of every entry built by [`ControlLoop::new`].
pub const LOOP_OWNER: Principal = Principal::new(1, 1);

/// Delivers control messages one at a time, in order. Timeouts fire only
/// once nothing else is queued.
pub struct ControlLoop {
    pub ctl: Controller,
    pub switch: Switch,
    pub servers: Vec<MetadataServer>,
    pub tree: NamespaceTree,
    pub history: History,
    pub now: SimTime,
    /// Number of upcoming controller-to-server messages to drop.
    pub drop_server_msgs: usize,
    /// Answers frequency reads instead of the switch counters when set.
    pub live_frequencies: Option<HashMap<Path, u32>>,
    /// Check path closure after every delivered action.
    pub check_each_step: bool,
}

impl ControlLoop {
    /// Namespace holding `files` and their ancestor directories.
    pub fn new(capacity: usize, n_servers: usize, files: &[Path]) -> Self {
        let mut tree = NamespaceTree::new(MetadataRecord::directory(0o777, LOOP_OWNER, 0));
        for f in files {
            for l in f.levels().into_iter().skip(1) {
                if !tree.contains(&l) {
                    let rec = if &l == f {
                        MetadataRecord::file(0o644, LOOP_OWNER, 0)
                    } else {
                        MetadataRecord::directory(0o755, LOOP_OWNER, 0)
                    };
                    tree.insert(l, rec).expect("ancestors are inserted first");
                }
            }
        }
        Self::with_tree(capacity, n_servers, tree, PathHasher::default())
    }

    pub fn with_tree(
        capacity: usize,
        n_servers: usize,
        tree: NamespaceTree,
        hasher: PathHasher,
    ) -> Self {
        let history = History::from_tree(&tree);
        let ctl = Controller::new(ControllerConfig {
            capacity,
            n_servers,
            hasher,
            control_timeout_ns: 10_000_000,
            max_retries: 5,
            cms_threshold: 10,
        });
        let switch = Switch::new(SwitchConfig {
            capacity,
            n_servers,
            ..SwitchConfig::default()
        });
        let servers = (0..n_servers)
            .map(|id| {
                MetadataServer::new(ServerConfig {
                    id,
                    n_servers,
                    lock_mode: Default::default(),
                    hasher,
                    service_ns: 1000,
                    cache_overhead: 0.0,
                    caching: true,
                    retransmit_ns: 8000,
                })
            })
            .collect();
        Self {
            ctl,
            switch,
            servers,
            tree,
            history,
            now: 0,
            drop_server_msgs: 0,
            live_frequencies: None,
            check_each_step: true,
        }
    }

    pub fn preload(&mut self, hot: &[Path]) {
        let (entries, grants) = self.ctl.preload(hot, &self.tree, &self.history);
        self.switch.admit(&entries).expect("preload fits");
        for s in &mut self.servers {
            s.install_tokens(grants.clone());
        }
    }

    /// Reports `path` hot and runs the resulting admission to completion.
    pub fn report_hot(&mut self, path: &Path) -> Result<usize, ControllerError> {
        let first = self
            .ctl
            .on_switch(SwitchToControl::HotReport(path.clone()), self.now);
        self.run(first)
    }

    /// Runs a frequency pull to completion.
    pub fn pull(&mut self) -> Result<usize, ControllerError> {
        let first = self.ctl.on_pull_timer(self.now);
        self.run(first)
    }

    /// Delivers `first` and everything it triggers; returns the number of
    /// actions handled.
    pub fn run(&mut self, first: Vec<ControllerAction>) -> Result<usize, ControllerError> {
        let mut todo: VecDeque<ControllerAction> = first.into();
        let mut timers: Vec<(SimTime, u64)> = Vec::new();
        let mut steps = 0;
        loop {
            let Some(a) = todo.pop_front() else {
                timers.sort_unstable();
                let Some((at, msg)) = timers.first().copied() else {
                    break;
                };
                timers.remove(0);
                self.now = self.now.max(at);
                todo.extend(self.ctl.on_timeout(msg, self.now));
                continue;
            };
            steps += 1;
            if steps > 100_000 {
                return Err(ControllerError::ClosureViolated(
                    "controller did not settle".into(),
                ));
            }
            match a {
                ControllerAction::ToServer { server, msg } => {
                    if self.drop_server_msgs > 0 {
                        self.drop_server_msgs -= 1;
                        continue;
                    }
                    let mut wid = 0;
                    let ctx = ServerContext {
                        tree: &mut self.tree,
                        history: &mut self.history,
                        next_write_id: &mut wid,
                        now: self.now,
                    };
                    let (ack, _) = self.servers[server].on_control(msg, &ctx);
                    todo.extend(self.ctl.on_server_ack(ack, self.now));
                }
                ControllerAction::ArmTimeout { msg, at } => timers.push((at, msg)),
                ControllerAction::ToSwitch(m) => {
                    if let Some(r) = self.to_switch(m) {
                        todo.extend(self.ctl.on_switch(r, self.now));
                    }
                }
            }
            if self.check_each_step {
                self.ctl.forest().check_closure()?;
            }
        }
        Ok(steps)
    }

    fn to_switch(&mut self, m: ControlToSwitch) -> Option<SwitchToControl> {
        match m {
            ControlToSwitch::Admit { msg, entries } => {
                self.switch
                    .admit(&entries)
                    .expect("controller admits into free slots");
                Some(SwitchToControl::Done { msg })
            }
            ControlToSwitch::Evict { msg, entries } => {
                self.switch
                    .evict(&entries)
                    .expect("controller evicts cached entries");
                Some(SwitchToControl::Done { msg })
            }
            ControlToSwitch::ReadFrequencies { msg, slots } => {
                let counts = match &self.live_frequencies {
                    Some(l) => slots
                        .iter()
                        .map(|s| {
                            let path = &self.switch.slot(*s).expect("slot is occupied").path;
                            l.get(path).copied().unwrap_or(0)
                        })
                        .collect(),
                    None => self.switch.read_frequencies(&slots),
                };
                Some(SwitchToControl::Frequencies { msg, counts })
            }
            ControlToSwitch::PullAndReset { msg } => {
                let counts = self.switch.pull_frequencies();
                self.switch.reset_sketch();
                Some(SwitchToControl::Pulled { msg, counts })
            }
            ControlToSwitch::ReportDone(path) => {
                self.switch.report_done(&path);
                None
            }
        }
    }

    /// Paths cached in the switch.
    pub fn switch_paths(&self) -> BTreeSet<Path> {
        self.switch
            .occupied_slots()
            .map(|(_, s)| s.path.clone())
            .collect()
    }

    /// Paths the controller believes are cached, root excluded.
    pub fn controller_paths(&self) -> BTreeSet<Path> {
        self.ctl
            .forest()
            .paths()
            .filter(|x| !x.is_root())
            .cloned()
            .collect()
    }
}
