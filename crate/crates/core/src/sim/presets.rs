//! Scaled-down experiment matrices.

use crate::workload::{HotIn, OpMix, RankOrder, Skew, WorkloadSpec};
use crate::NANOS_PER_SEC;

use super::config::{Scheme, SimConfig};
use super::SimError;

pub const PRESETS: [&str; 6] = [
    "mixes",
    "chmod-ratio",
    "rank-order",
    "skew",
    "depth",
    "hot-in",
];

#[derive(Debug, Clone)]
pub struct PresetRun {
    pub label: String,
    pub config: SimConfig,
    pub spec: WorkloadSpec,
    /// Operations are drawn live for `config.duration` instead of from a
    /// trace of `spec.length` operations.
    pub live: bool,
}

const SCHEMES: [Scheme; 2] = [Scheme::NoCache, Scheme::Fletch];

fn run(label: String, scheme: Scheme, n_servers: usize, spec: WorkloadSpec) -> PresetRun {
    PresetRun {
        label,
        config: SimConfig {
            scheme,
            n_servers,
            ..SimConfig::default()
        },
        spec,
        live: false,
    }
}

/// Experiment matrix `name`; `scale` multiplies trace lengths and the file
/// count so quick runs stay proportionate.
pub fn preset(name: &str, scale: f64) -> Result<Vec<PresetRun>, SimError> {
    let sized = |mut s: WorkloadSpec| {
        s.length = ((s.length as f64 * scale).round() as usize).max(1);
        s.n_files = ((s.n_files as f64 * scale.min(1.0)).round() as usize).max(64);
        s
    };
    let base = |mix: &str| WorkloadSpec::named(mix).map(sized);
    let mut out = Vec::new();
    match name {
        "mixes" => {
            for mix in ["alibaba", "training", "thumb", "linkedin"] {
                for n in [4, 16] {
                    for scheme in SCHEMES {
                        let label = format!("{mix}-{}-{n}", scheme.as_str());
                        out.push(run(label, scheme, n, base(mix)?));
                    }
                }
            }
        }
        "chmod-ratio" => {
            for pct in [0, 25, 50, 75, 100] {
                for scheme in SCHEMES {
                    let spec = WorkloadSpec {
                        name: format!("chmod{pct}"),
                        mix: OpMix::open_chmod(pct as f64)?,
                        ..base("read_only")?
                    };
                    out.push(run(
                        format!("chmod{pct}-{}", scheme.as_str()),
                        scheme,
                        16,
                        spec,
                    ));
                }
            }
        }
        "rank-order" => {
            for (tag, order) in [
                ("hlf", RankOrder::Hlf),
                ("llf", RankOrder::Llf),
                ("random", RankOrder::Random),
            ] {
                for scheme in SCHEMES {
                    let spec = WorkloadSpec {
                        order,
                        ..base("training")?
                    };
                    out.push(run(format!("{tag}-{}", scheme.as_str()), scheme, 16, spec));
                }
            }
        }
        "skew" => {
            for (tag, skew) in [
                ("uniform", Skew::Uniform),
                ("zipf0.8", Skew::PowerLaw(0.8)),
                ("zipf0.9", Skew::PowerLaw(0.9)),
                ("zipf1.0", Skew::PowerLaw(1.0)),
            ] {
                for scheme in SCHEMES {
                    let spec = WorkloadSpec {
                        skew,
                        eighty_twenty: skew != Skew::Uniform,
                        ..base("training")?
                    };
                    out.push(run(format!("{tag}-{}", scheme.as_str()), scheme, 16, spec));
                }
            }
        }
        "depth" => {
            for depth in [3, 5, 7, 9] {
                for scheme in SCHEMES {
                    let spec = WorkloadSpec {
                        max_depth: depth,
                        ..base("training")?
                    };
                    out.push(run(
                        format!("depth{depth}-{}", scheme.as_str()),
                        scheme,
                        16,
                        spec,
                    ));
                }
            }
        }
        "hot-in" => {
            // Service rates are scaled down so 200 simulated seconds stay
            // tractable; relative behaviour is what the run shows.
            let secs = ((200.0 * scale.min(1.0)).round() as u64).max(40);
            for scheme in SCHEMES {
                let spec = WorkloadSpec {
                    hot_in: Some(HotIn {
                        period: 20 * NANOS_PER_SEC,
                        k: 1000,
                    }),
                    ..base("training")?
                };
                out.push(PresetRun {
                    label: format!("hotin-{}", scheme.as_str()),
                    config: SimConfig {
                        scheme,
                        n_servers: 16,
                        service_rate: 1_000.0,
                        duration: Some(secs * NANOS_PER_SEC),
                        ..SimConfig::default()
                    },
                    spec,
                    live: true,
                });
            }
        }
        other => return Err(SimError::UnknownPreset(other.to_string())),
    }
    Ok(out)
}
