use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roadsig_cli::commands::{cmd_analyze, cmd_export_frames, cmd_replay, cmd_run, cmd_train, TrainArgs};
use roadsig_cli::flags::{parse_input, parse_output, parse_shape};
use roadsig_cli::netlab_cmd::{self, duration_s, ProxyArgs};
use roadsig_cli::CliError;
use roadsig_core::attacks::{MitmInputKind, MitmOutputKind};
use roadsig_core::metrics::Thresholds;
use roadsig_netlab::{FloodConfig, ScenarioConfig, ShapePolicy};

/// Closed-loop lane-following testbed: attack trials, fingerprint
/// analysis and a loopback network lab.
#[derive(Parser)]
#[command(name = "roadsig", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the trial or campaign described by a TOML config.
    Run {
        config: PathBuf,
        /// Validate config and model, then stop.
        #[arg(long)]
        dry_run: bool,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run a campaign manifest and compare trial digests.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Fingerprint analysis of a directory of trial logs.
    Analyze {
        logs: PathBuf,
        /// Report directory (default: <logs>/report).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Classifier thresholds as HI,LO.
        #[arg(long, value_parser = parse_thresholds)]
        thresholds: Option<Thresholds>,
    },
    /// Run the config's attack trial and save sample frames.
    ExportFrames {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the lane network on synthetic frames.
    Train {
        #[arg(long, default_value = "models/lane_cnn.rsm")]
        out: PathBuf,
        #[arg(long, default_value_t = 1500)]
        frames: usize,
        #[arg(long, default_value_t = 200)]
        validation_frames: usize,
        #[arg(long, default_value_t = 25)]
        epochs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Network lab services and scenarios.
    #[command(subcommand)]
    Netlab(NetCmd),
}

#[derive(Subcommand)]
enum NetCmd {
    /// Frame-processing peer; runs until interrupted.
    Peer {
        #[arg(long, default_value_t = 5001)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
        /// Run the lane network; without it the peer echoes ground truth.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 1.0)]
        status_work_ms: f64,
    },
    /// Intercepting proxy; runs until interrupted.
    Proxy {
        #[arg(long, default_value_t = 5000)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
        #[arg(long, default_value = "http://127.0.0.1:5001")]
        upstream: String,
        /// noise:STD | blur:KERNEL:SIGMA | synthetic:SOURCE
        #[arg(long, value_parser = parse_input)]
        input: Option<MitmInputKind>,
        /// bias:OFFSET | target:VALUE | invert | random:LOW:HIGH
        #[arg(long, value_parser = parse_output)]
        output: Option<MitmOutputKind>,
        #[arg(long)]
        apply_to_y: bool,
        /// delay:MS | drop:RATE | rate:BPS
        #[arg(long, value_parser = parse_shape)]
        shape: Option<ShapePolicy>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Manipulation log CSV, written on shutdown.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Shaping-only proxy; runs until interrupted.
    Shape {
        /// delay:MS | drop:RATE | rate:BPS
        policy: String,
        #[arg(long, default_value_t = 5000)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
        #[arg(long, default_value = "http://127.0.0.1:5001")]
        upstream: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Open-loop HTTP flood; prints FloodStats as CSV.
    Flood {
        #[arg(long, default_value = "http://127.0.0.1:5001")]
        target: String,
        #[arg(long, default_value = "/api/status")]
        path: String,
        #[arg(long, default_value_t = 200.0)]
        rate: f64,
        /// Seconds.
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Robot-side session against a running proxy or peer.
    Victim {
        #[arg(long, default_value = "http://127.0.0.1:5000")]
        target: String,
        #[arg(long, default_value_t = 30)]
        frames: usize,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        /// Fail unless every received x equals ground truth + BIAS.
        #[arg(long, allow_hyphen_values = true)]
        expect_bias: Option<f64>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Peer, proxy, victim (and optional flood) in one process.
    Scenario {
        /// TOML scenario config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, value_parser = parse_output)]
        output: Option<MitmOutputKind>,
        #[arg(long, value_parser = parse_input)]
        input: Option<MitmInputKind>,
        #[arg(long, value_parser = parse_shape)]
        shape: Option<ShapePolicy>,
        #[arg(long)]
        flood_rate: Option<f64>,
        /// Proxy forwards without manipulating anything.
        #[arg(long, conflicts_with_all = ["output", "input"])]
        passthrough: bool,
        #[arg(long)]
        no_proxy: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Writes probe.csv and scenario.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_thresholds(s: &str) -> Result<Thresholds, String> {
    let (hi, lo) = s.split_once(',').ok_or("expected HI,LO")?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad HI `{hi}`"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad LO `{lo}`"))?;
    Thresholds::new(hi, lo).map_err(|e| e.to_string())
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime")
}

fn check(ok: bool, what: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{what} failed")))
    }
}

fn netlab(cmd: NetCmd) -> Result<(), CliError> {
    let rt = runtime();
    match cmd {
        NetCmd::Peer {
            port,
            host,
            model,
            workers,
            status_work_ms,
        } => rt.block_on(netlab_cmd::peer(
            SocketAddr::new(host, port),
            model.as_deref(),
            workers,
            status_work_ms,
        )),
        NetCmd::Proxy {
            port,
            host,
            upstream,
            input,
            output,
            apply_to_y,
            shape,
            seed,
            log,
        } => rt.block_on(netlab_cmd::proxy(ProxyArgs {
            listen: SocketAddr::new(host, port),
            upstream,
            input,
            output,
            apply_to_y,
            shape,
            seed,
            log,
        })),
        NetCmd::Shape {
            policy,
            port,
            host,
            upstream,
            seed,
        } => {
            let shape = parse_shape(&policy).map_err(CliError::Config)?;
            rt.block_on(netlab_cmd::proxy(ProxyArgs {
                listen: SocketAddr::new(host, port),
                upstream,
                input: None,
                output: None,
                apply_to_y: false,
                shape: Some(shape),
                seed,
                log: None,
            }))
        }
        NetCmd::Flood {
            target,
            path,
            rate,
            duration,
            csv,
        } => {
            let cfg = FloodConfig {
                path,
                ..FloodConfig::new(target, rate, duration_s(duration)?)
            };
            rt.block_on(netlab_cmd::flood_cmd(cfg, csv.as_deref())).map(|_| ())
        }
        NetCmd::Victim {
            target,
            frames,
            fps,
            expect_bias,
            log,
        } => {
            let ok = rt.block_on(netlab_cmd::victim(&target, frames, fps, expect_bias, log.as_deref()))?;
            check(ok, "victim session")
        }
        NetCmd::Scenario {
            config,
            frames,
            output,
            input,
            shape,
            flood_rate,
            passthrough,
            no_proxy,
            seed,
            model,
            out,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                    toml::from_str::<ScenarioConfig>(&text)
                        .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
                }
                None => ScenarioConfig::default(),
            };
            if let Some(v) = frames {
                cfg.frames = v;
            }
            if output.is_some() {
                cfg.output = output;
            }
            if input.is_some() {
                cfg.input = input;
            }
            if shape.is_some() {
                cfg.shape = shape;
            }
            if let Some(v) = flood_rate {
                cfg.flood_rate = v;
            }
            if passthrough {
                cfg.input = None;
                cfg.output = None;
            }
            if no_proxy {
                cfg.use_proxy = false;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            let ok = rt.block_on(netlab_cmd::scenario(&cfg, model.as_deref(), out.as_deref()))?;
            check(ok, "scenario check")
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Run { config, dry_run, seed } => {
            let o = cmd_run(&config, dry_run, seed)?;
            check(o.failures == 0, &format!("{} of {} trial(s)", o.failures, o.trials))
        }
        Cmd::Replay { manifest, model } => check(cmd_replay(&manifest, &model)?, "replay"),
        Cmd::Analyze { logs, out, thresholds } => {
            let out = out.unwrap_or_else(|| logs.join("report"));
            cmd_analyze(&logs, &out, thresholds.unwrap_or_default()).map(|_| ())
        }
        Cmd::ExportFrames { config, out } => cmd_export_frames(&config, &out).map(|_| ()),
        Cmd::Train {
            out,
            frames,
            validation_frames,
            epochs,
            seed,
        } => cmd_train(&TrainArgs {
            out,
            frames,
            validation_frames,
            epochs,
            seed,
        }),
        Cmd::Netlab(n) => netlab(n),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("roadsig: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
