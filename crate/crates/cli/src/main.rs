use std::fs;
use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use evtrack_core::config::{load, RunSpec};
use evtrack_core::events::{read_stream, write_stream, EventStream, StreamFormat};
use evtrack_core::frame::render_frames;
use evtrack_core::kinematics::{
    diagnostics_to_csv, inverse_kinematics, inverse_kinematics_diagnostic, inverse_kinematics_uncorrected,
};
use evtrack_core::ldsi::{filter_metrics, filter_stream};
use evtrack_core::live::{serve, ServeOptions};
use evtrack_core::netsim::Mode;
use evtrack_core::pipeline::{compare_modes, run, write_bundle, RunReport};
use evtrack_core::scene::{generate, sources_to_csv, truth_to_csv, EventSource, TruthSample};
use evtrack_core::tracker::{estimates_to_csv, track_stream};
use serde_json::json;

#[derive(Parser)]
#[command(name = "evtrack", version, about = "Event-camera ball tracking on a simulated fieldbus")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set ldsi.tce=10`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn spec(&self) -> Result<RunSpec> {
        let text = match &self.config {
            Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        Ok(load(text.as_deref(), &self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a scene: event stream plus ground-truth and source files.
    Generate {
        /// Event file; `.csv` selects CSV, anything else binary.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        format: Option<StreamFormat>,
        /// Ground-truth track, `t,x,y`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Per-event source tags, `signal` or `noise`.
        #[arg(long)]
        sources: Option<PathBuf>,
        /// Also write frame-camera images (PGM) into this directory.
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Run the LDSI filter over an event file.
    Filter {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        format: Option<StreamFormat>,
        /// Ground truth for retention metrics (needs --sources too).
        #[arg(long, requires = "sources")]
        truth: Option<PathBuf>,
        #[arg(long, requires = "truth")]
        sources: Option<PathBuf>,
    },
    /// Windowed vicinity tracking over an event file.
    Track {
        input: PathBuf,
        /// Estimates CSV `t,x,y,support`; stdout if omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Motor angles for CSV positions `x,y` in mm.
    Ik {
        input: PathBuf,
        /// Angles CSV `x,y,xi,sigma`; stdout if omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Use the uncorrected closed form.
        #[arg(long)]
        uncorrected: bool,
        /// Write intermediate triangle quantities instead of angles.
        #[arg(long, conflicts_with = "uncorrected")]
        diagnostics: bool,
        /// Leave unreachable rows blank instead of failing.
        #[arg(long)]
        skip_unreachable: bool,
    },
    /// Full closed-loop batch run, written as a report bundle.
    Run {
        #[arg(long)]
        out: PathBuf,
    },
    /// Live mode: simulation plus the TCP/WebSocket endpoint.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        /// Simulated seconds per wall-clock second; 0 runs unpaced.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value_t = 30.0)]
        snapshot_hz: f64,
    },
    /// Event versus frame path side by side.
    Compare {
        /// Compare an existing `report.json` instead of running.
        #[arg(long, conflicts_with = "out")]
        report: Option<PathBuf>,
        /// Also write the run bundle here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(f) => f,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            report_error("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command, &cli.config) {
        Ok(code) => code,
        Err(e) => {
            let causes: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            let line = json!({"level": "error", "kind": "runtime", "message": e.to_string(), "causes": causes});
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

fn report_error(kind: &str, message: &str) {
    let line = json!({"level": "error", "kind": kind, "message": message.trim_end()});
    eprintln!("{line}");
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read_events(path: &Path) -> Result<EventStream> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_stream(&bytes, StreamFormat::from_path(path)).with_context(|| format!("parsing {}", path.display()))
}

fn dispatch(command: Command, cfg: &ConfigArgs) -> Result<ExitCode> {
    match command {
        Command::Generate {
            out,
            format,
            truth,
            sources,
            frames,
        } => {
            let spec = cfg.spec()?;
            let scene = generate(&spec.scene)?;
            let format = format.unwrap_or_else(|| StreamFormat::from_path(&out));
            fs::write(&out, write_stream(&scene.stream, format))
                .with_context(|| format!("writing {}", out.display()))?;
            if let Some(p) = &truth {
                write_out(Some(p), &truth_to_csv(&scene.truth))?;
            }
            if let Some(p) = &sources {
                write_out(Some(p), &sources_to_csv(&scene.sources))?;
            }
            let mut frame_count = 0;
            if let Some(dir) = &frames {
                fs::create_dir_all(dir)?;
                for (k, frame) in render_frames(&spec.scene, &spec.camera)?.enumerate() {
                    fs::write(dir.join(format!("frame_{k:05}.pgm")), frame.to_pgm())?;
                    frame_count += 1;
                }
            }
            print_json(&json!({
                "events": scene.stream.len(),
                "signal_events": scene.signal_count(),
                "truth_samples": scene.truth.len(),
                "frames": frame_count,
            }))?;
        }
        Command::Filter {
            input,
            output,
            format,
            truth,
            sources,
        } => {
            let spec = cfg.spec()?;
            let stream = read_events(&input)?;
            let filtered = filter_stream(&stream, &spec.ldsi)?;
            let format = format.unwrap_or_else(|| StreamFormat::from_path(&output));
            fs::write(&output, write_stream(&filtered, format))
                .with_context(|| format!("writing {}", output.display()))?;
            let mut summary = json!({
                "input_events": stream.len(),
                "output_events": filtered.len(),
                "reduction": (!stream.is_empty()).then(|| 1.0 - filtered.len() as f64 / stream.len() as f64),
            });
            if let (Some(t), Some(s)) = (&truth, &sources) {
                let truth = read_truth(t)?;
                let tags = read_sources(s)?;
                let m = filter_metrics(&stream, &filtered, &tags, &truth, spec.scene.ball_radius)?;
                summary["metrics"] = serde_json::to_value(m)?;
            }
            print_json(&summary)?;
        }
        Command::Track { input, output } => {
            let spec = cfg.spec()?;
            let stream = read_events(&input)?;
            let estimates = track_stream(&stream, &spec.tracker)?;
            write_out(output.as_deref(), &estimates_to_csv(&estimates))?;
        }
        Command::Ik {
            input,
            output,
            uncorrected,
            diagnostics,
            skip_unreachable,
        } => {
            let spec = cfg.spec()?;
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let points = parse_points(&text)?;
            let text = if diagnostics {
                let mut rows = Vec::new();
                for (line, p) in &points {
                    match inverse_kinematics_diagnostic(&spec.robot, *p) {
                        Ok((_, d)) => rows.push((*p, d)),
                        Err(_) if skip_unreachable => {}
                        Err(e) => bail!("line {line}: {e}"),
                    }
                }
                diagnostics_to_csv(&rows)
            } else {
                let mut s = String::from("x,y,xi,sigma\n");
                for (line, p) in &points {
                    let solved = if uncorrected {
                        inverse_kinematics_uncorrected(&spec.robot, *p)
                    } else {
                        inverse_kinematics(&spec.robot, *p)
                    };
                    match solved {
                        Ok(a) => s += &format!("{},{},{:.9},{:.9}\n", p[0], p[1], a.xi, a.sigma),
                        Err(_) if skip_unreachable => s += &format!("{},{},,\n", p[0], p[1]),
                        Err(e) => bail!("line {line}: {e}"),
                    }
                }
                s
            };
            write_out(output.as_deref(), &text)?;
        }
        Command::Run { out } => {
            let spec = cfg.spec()?;
            let report = run(&spec)?;
            write_bundle(&out, &spec, &report)?;
            print_json(&summary(&report))?;
        }
        Command::Serve {
            addr,
            speed,
            snapshot_hz,
        } => {
            let spec = cfg.spec()?;
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            let opts = ServeOptions {
                snapshot_hz,
                speed,
                ..ServeOptions::default()
            };
            let server = serve(spec, listener, opts)?;
            eprintln!("{}", json!({"level": "info", "message": "listening", "addr": server.local_addr().to_string()}));
            server.wait();
        }
        Command::Compare { report, out } => {
            let (report, bound) = match report {
                Some(path) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    let report: RunReport = serde_json::from_str(&text).context("parsing report")?;
                    let config = path.with_file_name("config.toml");
                    let bound = match fs::read_to_string(&config) {
                        Ok(t) => RunSpec::from_toml(&t)?.rms_bound_mm,
                        Err(_) => cfg.spec()?.rms_bound_mm,
                    };
                    (report, bound)
                }
                None => {
                    let mut spec = cfg.spec()?;
                    spec.mode = Mode::Both;
                    let report = run(&spec)?;
                    if let Some(dir) = &out {
                        write_bundle(dir, &spec, &report)?;
                    }
                    (report, spec.rms_bound_mm)
                }
            };
            let cmp = compare_modes(&report, bound)?;
            print_json(&serde_json::to_value(cmp)?)?;
            if !cmp.passed {
                report_error(
                    "bound",
                    &format!("RMS error above {bound} mm: event {:.3}, frame {:.3}", cmp.event.rms_error_mm, cmp.frame.rms_error_mm),
                );
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn summary(report: &RunReport) -> serde_json::Value {
    let path = |p: &evtrack_core::pipeline::PathReport| {
        json!({
            "rms_error_mm": p.rms_error_mm,
            "max_error_mm": p.max_error_mm,
            "peak_lag_ms": p.peak_lag_ms,
            "latency_mean_us": p.latency.mean_us,
            "latency_max_us": p.latency.max_us,
            "overflow_cycles": p.overflow_cycles,
        })
    };
    json!({
        "mode": report.mode,
        "duration_us": report.duration_us,
        "event": report.event.as_ref().map(path),
        "frame": report.frame.as_ref().map(path),
        "data_volume": report.data_volume,
        "byte_ratio": report.byte_ratio,
        "filter": report.filter,
    })
}

/// `x,y` rows with an optional header.
fn parse_points(text: &str) -> Result<Vec<(usize, [f64; 2])>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let mut next = |name| -> Result<f64> {
            let f = fields.next().with_context(|| format!("line {}: missing {name}", i + 1))?;
            f.parse().with_context(|| format!("line {}: bad {name} `{f}`", i + 1))
        };
        out.push((i + 1, [next("x")?, next("y")?]));
    }
    Ok(out)
}

fn read_truth(path: &Path) -> Result<Vec<TruthSample>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            bail!("{}:{}: expected t,x,y", path.display(), i + 1);
        }
        out.push(TruthSample {
            t: f[0].parse().with_context(|| format!("{}:{}", path.display(), i + 1))?,
            x: f[1].parse().with_context(|| format!("{}:{}", path.display(), i + 1))?,
            y: f[2].parse().with_context(|| format!("{}:{}", path.display(), i + 1))?,
        });
    }
    Ok(out)
}

fn read_sources(path: &Path) -> Result<Vec<EventSource>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, l)| match l {
            "signal" => Ok(EventSource::Signal),
            "noise" => Ok(EventSource::Noise),
            other => bail!("{}:{}: unknown source `{other}`", path.display(), i + 2),
        })
        .collect()
}
