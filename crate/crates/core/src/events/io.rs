use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Event, EventError, EventStream, Polarity, SensorGeometry};

pub const BINARY_MAGIC: &[u8; 8] = b"LDSIEVT1";
pub const BINARY_RECORD_LEN: usize = 16;
const BINARY_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamFormat {
    Csv,
    Binary,
}

impl StreamFormat {
    /// Guesses the format from a file extension (`.csv` or anything else).
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => StreamFormat::Csv,
            _ => StreamFormat::Binary,
        }
    }
}

impl FromStr for StreamFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(StreamFormat::Csv),
            "binary" | "bin" => Ok(StreamFormat::Binary),
            other => Err(format!("unknown stream format `{other}`")),
        }
    }
}

pub fn read_stream(source: &[u8], format: StreamFormat) -> Result<EventStream, EventError> {
    match format {
        StreamFormat::Csv => read_csv(source),
        StreamFormat::Binary => read_binary(source),
    }
}

pub fn write_stream(stream: &EventStream, format: StreamFormat) -> Vec<u8> {
    match format {
        StreamFormat::Csv => write_csv(stream),
        StreamFormat::Binary => write_binary(stream),
    }
}

fn malformed(location: String, message: impl Into<String>) -> EventError {
    EventError::Malformed {
        location,
        message: message.into(),
    }
}

fn parse_field<T: FromStr>(field: Option<&str>, name: &str, line: usize) -> Result<T, EventError> {
    let raw = field.ok_or_else(|| malformed(format!("line {line}"), format!("missing {name}")))?;
    raw.trim()
        .parse()
        .map_err(|_| malformed(format!("line {line}"), format!("invalid {name} `{raw}`")))
}

fn read_csv(source: &[u8]) -> Result<EventStream, EventError> {
    let text = std::str::from_utf8(source)
        .map_err(|e| malformed(format!("byte {}", e.valid_up_to()), "not valid UTF-8"))?;
    let mut lines = text.split('\n').enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed("line 1".into(), "missing header"))?;
    let mut parts = header.split(',');
    let width: u16 = parse_field(parts.next(), "M", 1)?;
    let height: u16 = parse_field(parts.next(), "N", 1)?;
    if parts.next().is_some() {
        return Err(malformed("line 1".into(), "header must be `M,N`"));
    }
    let geometry = SensorGeometry::new(width, height)?;

    let mut events = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split(',');
        let x: u16 = parse_field(f.next(), "x", lineno)?;
        let y: u16 = parse_field(f.next(), "y", lineno)?;
        let t: u64 = parse_field(f.next(), "t", lineno)?;
        let sign: i64 = parse_field(f.next(), "polarity", lineno)?;
        if f.next().is_some() {
            return Err(malformed(format!("line {lineno}"), "expected 4 fields"));
        }
        let polarity = Polarity::from_sign(sign)
            .ok_or_else(|| malformed(format!("line {lineno}"), "polarity must be 1 or -1"))?;
        events.push(Event::new(x, y, t, polarity));
    }
    EventStream::new(geometry, events)
}

fn write_csv(stream: &EventStream) -> Vec<u8> {
    use std::fmt::Write;
    let g = stream.geometry();
    let mut out = String::with_capacity(16 + stream.len() * 20);
    let _ = writeln!(out, "{},{}", g.width(), g.height());
    for e in stream {
        let _ = writeln!(out, "{},{},{},{}", e.x, e.y, e.t, e.polarity.as_sign());
    }
    out.into_bytes()
}

fn read_binary(source: &[u8]) -> Result<EventStream, EventError> {
    if source.len() < BINARY_HEADER_LEN {
        return Err(malformed("offset 0".into(), "truncated header"));
    }
    if &source[..8] != BINARY_MAGIC {
        return Err(malformed("offset 0".into(), "bad magic"));
    }
    let width = u16::from_le_bytes([source[8], source[9]]);
    let height = u16::from_le_bytes([source[10], source[11]]);
    let geometry = SensorGeometry::new(width, height)?;

    let body = &source[BINARY_HEADER_LEN..];
    if !body.len().is_multiple_of(BINARY_RECORD_LEN) {
        let offset = BINARY_HEADER_LEN + body.len() / BINARY_RECORD_LEN * BINARY_RECORD_LEN;
        return Err(malformed(format!("offset {offset}"), "truncated record"));
    }
    let mut events = Vec::with_capacity(body.len() / BINARY_RECORD_LEN);
    for (i, rec) in body.chunks_exact(BINARY_RECORD_LEN).enumerate() {
        let offset = BINARY_HEADER_LEN + i * BINARY_RECORD_LEN;
        let t = u64::from_le_bytes(rec[0..8].try_into().expect("8-byte slice"));
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let polarity = match rec[12] {
            0x01 => Polarity::Positive,
            0x00 => Polarity::Negative,
            b => {
                return Err(malformed(
                    format!("offset {}", offset + 12),
                    format!("invalid polarity byte {b:#04x}"),
                ))
            }
        };
        if rec[13..16] != [0, 0, 0] {
            return Err(malformed(format!("offset {}", offset + 13), "non-zero padding"));
        }
        events.push(Event::new(x, y, t, polarity));
    }
    EventStream::new(geometry, events)
}

/// Encodes one event as its 16-byte binary record.
pub(crate) fn encode_record(e: &Event) -> [u8; BINARY_RECORD_LEN] {
    let mut rec = [0u8; BINARY_RECORD_LEN];
    rec[0..8].copy_from_slice(&e.t.to_le_bytes());
    rec[8..10].copy_from_slice(&e.x.to_le_bytes());
    rec[10..12].copy_from_slice(&e.y.to_le_bytes());
    rec[12] = match e.polarity {
        Polarity::Positive => 0x01,
        Polarity::Negative => 0x00,
    };
    rec
}

fn write_binary(stream: &EventStream) -> Vec<u8> {
    let g = stream.geometry();
    let mut out = Vec::with_capacity(BINARY_HEADER_LEN + stream.len() * BINARY_RECORD_LEN);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&g.width().to_le_bytes());
    out.extend_from_slice(&g.height().to_le_bytes());
    for e in stream {
        out.extend_from_slice(&encode_record(e));
    }
    out
}
