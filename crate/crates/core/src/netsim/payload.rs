use serde::{Deserialize, Serialize};

use crate::frame::BlobDetection;
use crate::ldsi::LdsiParams;
use crate::tracker::{PositionEstimate, TrackerParams};

/// Which camera drives the robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Event,
    Frame,
    Both,
}

/// Typed cyclic payloads exchanged between the managing node and the
/// controlled nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodePayload {
    Empty,
    CameraReport {
        estimate: Option<PositionEstimate>,
        /// Sensor events consumed since the previous report.
        events_in: u32,
        /// Filtered events produced since the previous report.
        events_out: u32,
    },
    /// Frame-camera result; positions already in millimetres.
    BlobReport {
        detection: Option<BlobDetection>,
    },
    ServoCommand {
        xi: f64,
        sigma: f64,
    },
    ServoStatus {
        xi: f64,
        sigma: f64,
    },
    IoCommand {
        valves: u8,
        light: bool,
    },
    IoStatus {
        inputs: u8,
    },
    FilterConfig {
        ldsi: LdsiParams,
        tracker: TrackerParams,
    },
    ModeSelect {
        mode: Mode,
    },
}

impl NodePayload {
    pub fn kind(&self) -> &'static str {
        match self {
            NodePayload::Empty => "empty",
            NodePayload::CameraReport { .. } => "camera_report",
            NodePayload::BlobReport { .. } => "blob_report",
            NodePayload::ServoCommand { .. } => "servo_command",
            NodePayload::ServoStatus { .. } => "servo_status",
            NodePayload::IoCommand { .. } => "io_command",
            NodePayload::IoStatus { .. } => "io_status",
            NodePayload::FilterConfig { .. } => "filter_config",
            NodePayload::ModeSelect { .. } => "mode_select",
        }
    }

    /// Size of the payload's fixed wire layout in bytes.
    pub fn encoded_len(&self) -> usize {
        match self {
            NodePayload::Empty => 0,
            // valid flag, x, y, t, support, events in/out
            NodePayload::CameraReport { .. } => 1 + 2 + 2 + 8 + 2 + 4 + 4,
            // valid flag, t, x and y as f32, area
            NodePayload::BlobReport { .. } => 1 + 8 + 4 + 4 + 4,
            NodePayload::ServoCommand { .. } | NodePayload::ServoStatus { .. } => 16,
            NodePayload::IoCommand { .. } => 2,
            NodePayload::IoStatus { .. } => 1,
            // seven f32 excitations/thresholds, u32 mtr, u8 dl, u8 flags,
            // u16 window, u16 radius, u16 stride
            NodePayload::FilterConfig { .. } => 7 * 4 + 4 + 1 + 1 + 2 + 2 + 2,
            NodePayload::ModeSelect { .. } => 1,
        }
    }
}
