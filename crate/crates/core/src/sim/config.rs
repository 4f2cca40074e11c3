//! Simulation configuration and its flat key-value file form.

use serde::Deserialize;
use thiserror::Error;

use crate::hashing::HashMode;
use crate::protocol::LockMode;
use crate::{SimTime, NANOS_PER_SEC};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    NoCache,
    #[default]
    Fletch,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::NoCache => "nocache",
            Scheme::Fletch => "fletch",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nocache" | "no_cache" => Ok(Scheme::NoCache),
            "fletch" => Ok(Scheme::Fletch),
            other => Err(ConfigError::Invalid(format!("unknown scheme {other:?}"))),
        }
    }
}

/// One-way delay of a network leg: `base` plus uniform jitter in
/// `[0, jitter]`, and an independent drop probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    pub base: SimTime,
    pub jitter: SimTime,
    pub loss: f64,
}

impl Leg {
    pub const fn fixed(base: SimTime) -> Self {
        Self {
            base,
            jitter: 0,
            loss: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scheme: Scheme,
    pub n_servers: usize,
    /// Operations per second one server completes.
    pub service_rate: f64,
    /// Extra server work per operation when caching is on, as a fraction.
    pub cache_overhead: f64,
    pub client_leg: Leg,
    /// Server to switch messages and switch ACKs; requests towards the
    /// servers are never dropped.
    pub server_leg: Leg,
    pub control_leg: Leg,
    pub lock_mode: LockMode,
    pub hash_mode: HashMode,
    pub capacity: usize,
    pub cms_threshold: u16,
    pub pull_period: SimTime,
    pub preload: usize,
    /// Stop issuing new operations at this time.
    pub duration: Option<SimTime>,
    pub seed: u64,
    pub n_clients: usize,
    /// Clients cycle through this many distinct principals.
    pub n_principals: usize,
    pub token_ttl: SimTime,
    /// Fixed client timeout; adaptive when unset.
    pub client_timeout: Option<SimTime>,
    pub traversal_ns: SimTime,
    pub cross_pipe_redirect: bool,
    pub server_retransmit: Option<SimTime>,
    pub control_timeout: SimTime,
    pub control_retries: u32,
    pub starvation_threshold: u32,
    pub fidelity_check: bool,
    /// Offered load in operations per second; closed loop when unset.
    pub open_loop_rate: Option<f64>,
    pub keep_records: bool,
    pub dump_events: bool,
    /// Check every in-switch read against the version history.
    pub check_history: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Fletch,
            n_servers: 16,
            service_rate: 10_000.0,
            cache_overhead: 0.08,
            client_leg: Leg::fixed(2_000),
            server_leg: Leg::fixed(2_000),
            control_leg: Leg::fixed(50_000),
            lock_mode: LockMode::Multi,
            hash_mode: HashMode::Md5,
            capacity: 8192,
            cms_threshold: 10,
            pull_period: 2 * NANOS_PER_SEC,
            preload: 5000,
            duration: None,
            seed: 1,
            n_clients: 128,
            n_principals: 1,
            token_ttl: 3600 * NANOS_PER_SEC,
            client_timeout: None,
            traversal_ns: 200,
            cross_pipe_redirect: true,
            server_retransmit: None,
            control_timeout: 10_000_000,
            control_retries: 5,
            starvation_threshold: 10_000,
            fidelity_check: false,
            open_loop_rate: None,
            keep_records: false,
            dump_events: false,
            check_history: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.n_servers == 0 {
            return bad("n_servers must be at least 1".into());
        }
        if !(self.service_rate > 0.0 && self.service_rate.is_finite()) {
            return bad("service_rate must be positive".into());
        }
        if self.cache_overhead < 0.0 {
            return bad("cache_overhead must be non-negative".into());
        }
        for (name, leg) in [
            ("client", self.client_leg),
            ("server", self.server_leg),
            ("control", self.control_leg),
        ] {
            if !(0.0..1.0).contains(&leg.loss) {
                return bad(format!("{name} loss must be in [0, 1)"));
            }
        }
        if self.capacity < 2 {
            return bad("capacity must be at least 2".into());
        }
        if self.n_clients == 0 || self.n_principals == 0 {
            return bad("n_clients and n_principals must be at least 1".into());
        }
        if self.pull_period == 0 || self.traversal_ns == 0 {
            return bad("pull_period and traversal_ns must be positive".into());
        }
        if let Some(r) = self.open_loop_rate {
            if !(r > 0.0 && r.is_finite()) {
                return bad("open_loop_rate must be positive".into());
            }
        }
        Ok(())
    }

    pub fn service_ns(&self) -> SimTime {
        (NANOS_PER_SEC as f64 / self.service_rate).round() as SimTime
    }

    /// Server retransmission timeout: four one-way delays by default.
    pub fn retransmit_ns(&self) -> SimTime {
        self.server_retransmit
            .unwrap_or(4 * (self.server_leg.base + self.server_leg.jitter).max(1))
    }
}

/// Flat key-value form; every key is optional and overrides the default.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scheme: Option<Scheme>,
    pub n_servers: Option<usize>,
    pub service_rate: Option<f64>,
    pub cache_overhead: Option<f64>,
    pub client_latency_ns: Option<u64>,
    pub client_jitter_ns: Option<u64>,
    pub client_loss: Option<f64>,
    pub server_latency_ns: Option<u64>,
    pub server_jitter_ns: Option<u64>,
    pub server_loss: Option<f64>,
    pub control_latency_ns: Option<u64>,
    pub control_loss: Option<f64>,
    pub lock_mode: Option<LockMode>,
    pub hash_mode: Option<HashMode>,
    pub capacity: Option<usize>,
    pub cms_threshold: Option<u16>,
    pub pull_period_s: Option<f64>,
    pub preload: Option<usize>,
    pub duration_s: Option<f64>,
    pub seed: Option<u64>,
    pub n_clients: Option<usize>,
    pub n_principals: Option<usize>,
    pub token_ttl_s: Option<f64>,
    pub client_timeout_ns: Option<u64>,
    pub traversal_ns: Option<u64>,
    pub cross_pipe_redirect: Option<bool>,
    pub server_retransmit_ns: Option<u64>,
    pub control_timeout_ns: Option<u64>,
    pub control_retries: Option<u32>,
    pub starvation_threshold: Option<u32>,
    pub fidelity_check: Option<bool>,
    pub open_loop_rate: Option<f64>,
    pub check_history: Option<bool>,
}

fn secs(s: f64) -> SimTime {
    (s * NANOS_PER_SEC as f64).round() as SimTime
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Applies every present key on top of `c`.
    pub fn apply(&self, c: &mut SimConfig) {
        macro_rules! set {
            ($src:ident => $dst:expr) => {
                if let Some(v) = self.$src {
                    $dst = v;
                }
            };
            ($src:ident => $dst:expr, $f:expr) => {
                if let Some(v) = self.$src {
                    $dst = $f(v);
                }
            };
        }
        set!(scheme => c.scheme);
        set!(n_servers => c.n_servers);
        set!(service_rate => c.service_rate);
        set!(cache_overhead => c.cache_overhead);
        set!(client_latency_ns => c.client_leg.base);
        set!(client_jitter_ns => c.client_leg.jitter);
        set!(client_loss => c.client_leg.loss);
        set!(server_latency_ns => c.server_leg.base);
        set!(server_jitter_ns => c.server_leg.jitter);
        set!(server_loss => c.server_leg.loss);
        set!(control_latency_ns => c.control_leg.base);
        set!(control_loss => c.control_leg.loss);
        set!(lock_mode => c.lock_mode);
        set!(hash_mode => c.hash_mode);
        set!(capacity => c.capacity);
        set!(cms_threshold => c.cms_threshold);
        set!(pull_period_s => c.pull_period, secs);
        set!(preload => c.preload);
        set!(duration_s => c.duration, |v| Some(secs(v)));
        set!(seed => c.seed);
        set!(n_clients => c.n_clients);
        set!(n_principals => c.n_principals);
        set!(token_ttl_s => c.token_ttl, secs);
        set!(client_timeout_ns => c.client_timeout, Some);
        set!(traversal_ns => c.traversal_ns);
        set!(cross_pipe_redirect => c.cross_pipe_redirect);
        set!(server_retransmit_ns => c.server_retransmit, Some);
        set!(control_timeout_ns => c.control_timeout);
        set!(control_retries => c.control_retries);
        set!(starvation_threshold => c.starvation_threshold);
        set!(fidelity_check => c.fidelity_check);
        set!(open_loop_rate => c.open_loop_rate, Some);
        set!(check_history => c.check_history);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults() {
        let f = ConfigFile::parse("scheme = \"no_cache\"\nn_servers = 4\nserver_loss = 0.3\nlock_mode = \"single\"\nduration_s = 1.5\n").unwrap();
        let mut c = SimConfig::default();
        f.apply(&mut c);
        assert_eq!(c.scheme, Scheme::NoCache);
        assert_eq!(c.n_servers, 4);
        assert_eq!(c.server_leg.loss, 0.3);
        assert_eq!(c.lock_mode, LockMode::Single);
        assert_eq!(c.duration, Some(1_500_000_000));
        c.validate().unwrap();
        assert!(ConfigFile::parse("unknown_key = 1").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = SimConfig::default();
        c.server_leg.loss = 1.0;
        assert!(c.validate().is_err());
        let c = SimConfig {
            n_servers: 0,
            ..SimConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn derived_timings() {
        let c = SimConfig::default();
        assert_eq!(c.service_ns(), 100_000);
        assert_eq!(c.retransmit_ns(), 8_000);
    }
}
