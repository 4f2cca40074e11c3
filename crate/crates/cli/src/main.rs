use std::fs;
use std::io::Write as _;
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fletchsim::hashing::HashMode;
use fletchsim::protocol::LockMode;
use fletchsim::sim::{self, ConfigFile, Metrics, Scheme, SimConfig, PRESETS};
use fletchsim::workload::{generate, Namespace, Popularity, SpecFile, Trace, WorkloadSpec};

#[derive(Parser)]
#[command(
    name = "fletchsim",
    version,
    about = "In-switch metadata cache simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a trace from a workload spec.
    Gen {
        #[command(flatten)]
        workload: WorkloadArgs,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run one simulation.
    Run {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Replay this trace instead of generating one. The namespace is still
        /// built from the workload spec, so use the spec the trace came from.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Draw operations live for --duration-s instead of replaying a trace.
        #[arg(long)]
        live: bool,
        /// Write the metrics CSV here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Write the packet trace to this file.
        #[arg(long)]
        dump_events: Option<PathBuf>,
    },
    /// Run an experiment matrix.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        name: String,
        /// Multiplies trace lengths and file counts.
        #[arg(long, default_value_t = 0.1)]
        scale: f64,
        /// Directory for per-run CSVs and summary.csv.
        #[arg(short, long, default_value = "results")]
        out_dir: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Run adversarial scenarios with every online check enabled.
    Check {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
}

#[derive(Args, Clone)]
struct WorkloadArgs {
    /// Flat TOML workload spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Named mix: alibaba, training, thumb, linkedin, read_only, write_only.
    #[arg(long)]
    workload: Option<String>,
    /// Explicit mix such as "open:0.25,chmod:0.75".
    #[arg(long)]
    mix: Option<String>,
    #[arg(long)]
    n_files: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    /// "uniform" or "powerlaw".
    #[arg(long)]
    skew: Option<String>,
    #[arg(long)]
    exponent: Option<f64>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    workload_seed: Option<u64>,
    #[arg(long)]
    hot_in_period_s: Option<f64>,
    #[arg(long)]
    hot_in_k: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Nocache,
    Fletch,
}

#[derive(Clone, Copy, ValueEnum)]
enum LockArg {
    Single,
    Multi,
}

#[derive(Clone, Copy, ValueEnum)]
enum HashArg {
    Md5,
    WeakDepth,
}

#[derive(Args, Clone, Default)]
struct SimArgs {
    /// Flat TOML simulation config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long)]
    n_servers: Option<usize>,
    #[arg(long)]
    service_rate: Option<f64>,
    #[arg(long)]
    cache_overhead: Option<f64>,
    #[arg(long)]
    client_latency_ns: Option<u64>,
    #[arg(long)]
    client_jitter_ns: Option<u64>,
    #[arg(long)]
    client_loss: Option<f64>,
    #[arg(long)]
    server_latency_ns: Option<u64>,
    #[arg(long)]
    server_jitter_ns: Option<u64>,
    #[arg(long)]
    server_loss: Option<f64>,
    #[arg(long)]
    control_latency_ns: Option<u64>,
    #[arg(long)]
    control_loss: Option<f64>,
    #[arg(long, value_enum)]
    lock_mode: Option<LockArg>,
    #[arg(long, value_enum)]
    hash_mode: Option<HashArg>,
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long)]
    cms_threshold: Option<u16>,
    #[arg(long)]
    pull_period_s: Option<f64>,
    #[arg(long)]
    preload: Option<usize>,
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_clients: Option<usize>,
    #[arg(long)]
    n_principals: Option<usize>,
    #[arg(long)]
    token_ttl_s: Option<f64>,
    #[arg(long)]
    client_timeout_ns: Option<u64>,
    #[arg(long)]
    traversal_ns: Option<u64>,
    #[arg(long)]
    cross_pipe_redirect: Option<bool>,
    #[arg(long)]
    server_retransmit_ns: Option<u64>,
    #[arg(long)]
    control_timeout_ns: Option<u64>,
    #[arg(long)]
    control_retries: Option<u32>,
    #[arg(long)]
    starvation_threshold: Option<u32>,
    #[arg(long)]
    fidelity_check: Option<bool>,
    #[arg(long)]
    open_loop_rate: Option<f64>,
    #[arg(long)]
    check_history: Option<bool>,
}

impl SimArgs {
    fn overrides(&self) -> ConfigFile {
        ConfigFile {
            scheme: self.scheme.map(|s| match s {
                SchemeArg::Nocache => Scheme::NoCache,
                SchemeArg::Fletch => Scheme::Fletch,
            }),
            n_servers: self.n_servers,
            service_rate: self.service_rate,
            cache_overhead: self.cache_overhead,
            client_latency_ns: self.client_latency_ns,
            client_jitter_ns: self.client_jitter_ns,
            client_loss: self.client_loss,
            server_latency_ns: self.server_latency_ns,
            server_jitter_ns: self.server_jitter_ns,
            server_loss: self.server_loss,
            control_latency_ns: self.control_latency_ns,
            control_loss: self.control_loss,
            lock_mode: self.lock_mode.map(|l| match l {
                LockArg::Single => LockMode::Single,
                LockArg::Multi => LockMode::Multi,
            }),
            hash_mode: self.hash_mode.map(|h| match h {
                HashArg::Md5 => HashMode::Md5,
                HashArg::WeakDepth => HashMode::WeakDepth,
            }),
            capacity: self.capacity,
            cms_threshold: self.cms_threshold,
            pull_period_s: self.pull_period_s,
            preload: self.preload,
            duration_s: self.duration_s,
            seed: self.seed,
            n_clients: self.n_clients,
            n_principals: self.n_principals,
            token_ttl_s: self.token_ttl_s,
            client_timeout_ns: self.client_timeout_ns,
            traversal_ns: self.traversal_ns,
            cross_pipe_redirect: self.cross_pipe_redirect,
            server_retransmit_ns: self.server_retransmit_ns,
            control_timeout_ns: self.control_timeout_ns,
            control_retries: self.control_retries,
            starvation_threshold: self.starvation_threshold,
            fidelity_check: self.fidelity_check,
            open_loop_rate: self.open_loop_rate,
            check_history: self.check_history,
        }
    }

    /// Applies the config file, then flags, on top of `base`.
    fn apply(&self, base: &mut SimConfig) -> Result<()> {
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ConfigFile::parse(&text)?.apply(base);
        }
        self.overrides().apply(base);
        base.validate()?;
        Ok(())
    }

    fn config(&self) -> Result<SimConfig> {
        let mut c = SimConfig::default();
        self.apply(&mut c)?;
        Ok(c)
    }
}

impl WorkloadArgs {
    fn spec(&self) -> Result<WorkloadSpec> {
        let mut file = match &self.spec {
            Some(p) => {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                SpecFile::parse(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => SpecFile::default(),
        };
        macro_rules! over {
            ($($f:ident <- $src:expr),*) => {$(
                if let Some(v) = $src.clone() {
                    file.$f = Some(v);
                }
            )*};
        }
        over!(name <- self.workload, mix <- self.mix, n_files <- self.n_files, max_depth <- self.max_depth,
              skew <- self.skew, exponent <- self.exponent, length <- self.length, seed <- self.workload_seed,
              hot_in_period_s <- self.hot_in_period_s, hot_in_k <- self.hot_in_k);
        Ok(file.into_spec()?)
    }
}

fn write_out(path: Option<&FsPath>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn csv(label: &str, m: &Metrics) -> String {
    format!("label,{}\n{label},{}\n", Metrics::CSV_HEADER, m.csv_row())
}

fn report_violations(label: &str, m: &Metrics) -> bool {
    for v in m.violations.iter().take(20) {
        eprintln!("{label}: violation: {v}");
    }
    if m.violations.len() > 20 {
        eprintln!("{label}: {} more violations", m.violations.len() - 20);
    }
    !m.violations.is_empty()
}

fn simulate(
    cfg: &SimConfig,
    spec: &WorkloadSpec,
    live: bool,
    trace: Option<&FsPath>,
) -> Result<Metrics> {
    if live {
        return Ok(sim::run_live(cfg, spec)?);
    }
    let (ns, pop, generated): (Namespace, Popularity, Trace) = generate(spec)?;
    let trace = match trace {
        Some(p) => Trace::parse(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => generated,
    };
    Ok(sim::run(cfg, &ns, &pop, &trace)?)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns whether every run was free of violations.
fn real_main() -> Result<bool> {
    match Cli::parse().cmd {
        Cmd::Gen { workload, out } => {
            let (_, _, trace) = generate(&workload.spec()?)?;
            write_out(out.as_deref(), &trace.to_text())?;
            Ok(true)
        }
        Cmd::Run {
            workload,
            sim,
            trace,
            live,
            out,
            dump_events,
        } => {
            let spec = workload.spec()?;
            let mut cfg = sim.config()?;
            cfg.dump_events = dump_events.is_some();
            let m = simulate(&cfg, &spec, live, trace.as_deref())?;
            if let Some(p) = &dump_events {
                let mut text = m.events.join("\n");
                text.push('\n');
                write_out(Some(p), &text)?;
            }
            write_out(out.as_deref(), &csv(&spec.name, &m))?;
            Ok(!report_violations(&spec.name, &m))
        }
        Cmd::Preset {
            name,
            scale,
            out_dir,
            sim,
        } => {
            if !(scale > 0.0 && scale.is_finite()) {
                bail!("--scale must be positive");
            }
            fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let mut summary = format!("label,{}\n", Metrics::CSV_HEADER);
            let mut clean = true;
            for mut run in sim::preset(&name, scale)? {
                sim.apply(&mut run.config)?;
                eprintln!("running {}", run.label);
                let m = simulate(&run.config, &run.spec, run.live, None)?;
                let mut text = csv(&run.label, &m);
                if run.live {
                    text.push_str("\nsecond,completions\n");
                    for (i, n) in m.per_second.iter().enumerate() {
                        text.push_str(&format!("{i},{n}\n"));
                    }
                }
                write_out(Some(&out_dir.join(format!("{}.csv", run.label))), &text)?;
                summary.push_str(&format!("{},{}\n", run.label, m.csv_row()));
                clean &= !report_violations(&run.label, &m);
            }
            write_out(Some(&out_dir.join("summary.csv")), &summary)?;
            print!("{summary}");
            Ok(clean)
        }
        Cmd::Check { workload, sim } => {
            let spec = workload.spec()?;
            let base = SimConfig {
                fidelity_check: true,
                check_history: true,
                ..sim.config()?
            };
            let scenarios: [(&str, SimConfig); 4] = [
                ("baseline", base.clone()),
                ("lossy", {
                    let mut c = base.clone();
                    c.server_leg.loss = 0.3;
                    c.client_leg.loss = 0.02;
                    c.control_leg.loss = 0.1;
                    c.server_leg.jitter = 1_000;
                    c
                }),
                (
                    "weak-hash",
                    SimConfig {
                        hash_mode: HashMode::WeakDepth,
                        ..base.clone()
                    },
                ),
                (
                    "single-lock",
                    SimConfig {
                        lock_mode: LockMode::Single,
                        ..base.clone()
                    },
                ),
            ];
            let (ns, pop, trace) = generate(&spec)?;
            let mut clean = true;
            for (label, cfg) in scenarios {
                let m = sim::run(&cfg, &ns, &pop, &trace)?;
                let bad = report_violations(label, &m);
                println!(
                    "{label}: {} ({} ops, {} violations)",
                    if bad { "FAIL" } else { "ok" },
                    m.completed,
                    m.violations.len()
                );
                clean &= !bad;
            }
            Ok(clean)
        }
    }
}
