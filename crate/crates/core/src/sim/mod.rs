//! Discrete-event simulation harness: configuration, the event engine,
//! online and quiescence checks, metrics and experiment presets.

pub mod checks;
pub mod config;
pub mod engine;
pub mod metrics;
pub mod presets;

use thiserror::Error;

use crate::workload::{LiveGenerator, Namespace, Popularity, Trace, WorkloadError, WorkloadSpec};

pub use config::{ConfigError, ConfigFile, Leg, Scheme, SimConfig};
pub use engine::{client_principal, Engine, OpSource};
pub use metrics::{LatencyStats, Metrics, RecircCount};
pub use presets::{preset, PresetRun, PRESETS};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("recirculation counts need the fletch scheme")]
    NeedsCaching,
}

/// Replays `trace` against a fresh copy of `ns`.
pub fn run(
    cfg: &SimConfig,
    ns: &Namespace,
    pop: &Popularity,
    trace: &Trace,
) -> Result<Metrics, SimError> {
    cfg.validate()?;
    let source = OpSource::from_trace(trace, cfg.n_clients, cfg.open_loop_rate.is_some());
    Ok(Engine::new(cfg.clone(), ns, pop, source).run())
}

/// Runs for `cfg.duration`, drawing operations from `spec` as they are
/// needed so popularity shifts follow simulated time.
pub fn run_live(cfg: &SimConfig, spec: &WorkloadSpec) -> Result<Metrics, SimError> {
    cfg.validate()?;
    spec.validate()?;
    if cfg.duration.is_none() {
        return Err(ConfigError::Invalid("a live workload needs a duration".into()).into());
    }
    let ns = crate::workload::build_namespace(spec)?;
    let pop = crate::workload::assign_frequencies(
        &ns.files,
        spec.skew,
        spec.order,
        spec.eighty_twenty,
        spec.seed,
    );
    let gen = LiveGenerator::new(spec, ns.clone(), pop.clone());
    Ok(Engine::new(cfg.clone(), &ns, &pop, OpSource::Live(Box::new(gen))).run())
}

/// Per-request recirculation counts for a fletch run of `trace`.
pub fn measure_recirculations(
    cfg: &SimConfig,
    ns: &Namespace,
    pop: &Popularity,
    trace: &Trace,
) -> Result<Vec<RecircCount>, SimError> {
    if cfg.scheme != Scheme::Fletch {
        return Err(SimError::NeedsCaching);
    }
    let cfg = SimConfig {
        keep_records: true,
        ..cfg.clone()
    };
    Ok(run(&cfg, ns, pop, trace)?.recirculations)
}
