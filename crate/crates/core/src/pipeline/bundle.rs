use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::{records_to_csv, PipelineError, RunReport};
use crate::config::RunSpec;

/// Files of a run bundle. Only `meta.json` varies between identical runs.
pub const BUNDLE_FILES: &[&str] = &[
    "report.json",
    "config.toml",
    "meta.json",
    "servo_event.csv",
    "servo_frame.csv",
    "bus_event.csv",
    "bus_frame.csv",
];

#[derive(Serialize)]
struct Meta<'a> {
    tool: &'a str,
    version: &'a str,
    created_unix_s: u64,
}

/// Writes `report.json`, the resolved `config.toml`, `meta.json` and, per
/// path that ran, `servo_<path>.csv` and `bus_<path>.csv` into `dir`.
pub fn write_bundle(dir: &Path, spec: &RunSpec, report: &RunReport) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(dir.join("report.json"), json + "\n").map_err(io)?;
    fs::write(dir.join("config.toml"), spec.to_toml()).map_err(io)?;
    for (name, path) in [("event", &report.event), ("frame", &report.frame)] {
        let Some(p) = path else { continue };
        fs::write(dir.join(format!("servo_{name}.csv")), records_to_csv(&p.records)).map_err(io)?;
        if let Some(log) = &p.log {
            fs::write(dir.join(format!("bus_{name}.csv")), log.to_csv()).map_err(io)?;
        }
    }
    let meta = Meta {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        created_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    let meta = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(dir.join("meta.json"), meta + "\n").map_err(io)?;
    Ok(())
}
