//! Binary perception-message codec for the RSU→vehicle broadcast path.
//!
//! Little-endian layout, version 1:
//!
//! | offset | size    | field                                  |
//! |--------|---------|----------------------------------------|
//! | 0      | 4       | magic `MSV2`                           |
//! | 4      | 1       | version (= 1)                          |
//! | 5      | 4       | seq u32                                |
//! | 9      | 8       | producer_ts_ms u64                     |
//! | 17     | 8       | frame_ts_ms u64                        |
//! | 25     | 2       | vehicle count u16                      |
//! | 27     | n·(18+8K) | vehicles (see below)                 |
//! | last 4 | 4       | CRC-32 (IEEE) over all preceding bytes |
//!
//! Per vehicle: id u32, class u8, lat i32, lon i32, heading u16, speed u16,
//! reserved u8, then K × (lat i32, lon i32) predicted points. Quanta:
//! 1e-7° for coordinates, 0.0125° for heading, 0.02 m/s for speed. K is
//! uniform across a message and recovered at decode from the byte length.

use thiserror::Error;

pub const MESSAGE_MAGIC: [u8; 4] = *b"MSV2";
pub const MESSAGE_VERSION: u8 = 1;

/// Header (27) plus CRC trailer (4): the size of an empty message.
pub const EMPTY_MESSAGE_LEN: usize = 31;
/// Fixed per-vehicle bytes before the predicted points.
pub const VEHICLE_FIXED_LEN: usize = 18;
/// Bytes per predicted point.
pub const POINT_LEN: usize = 8;

/// Degrees per coordinate quantum.
pub const COORD_QUANTUM_DEG: f64 = 1e-7;
/// Degrees per heading quantum.
pub const HEADING_QUANTUM_DEG: f64 = 0.0125;
/// Meters per second per speed quantum.
pub const SPEED_QUANTUM_MPS: f64 = 0.02;

#[derive(Debug, Error)]
pub enum V2xError {
    #[error("{field} = {value} exceeds the quantized range")]
    RangeOverflow { field: &'static str, value: f64 },
    #[error("vehicles carry differing prediction counts ({first} vs {other})")]
    UnevenPredictionCounts { first: usize, other: usize },
    #[error("message truncated: need {needed} bytes, got {got}")]
    TruncatedMessage { needed: usize, got: usize },
    #[error("bad CRC: computed {computed:#010x}, trailer {trailer:#010x}")]
    BadCrc { computed: u32, trailer: u32 },
    #[error("bad magic {found:02x?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {version}")]
    UnsupportedVersion { version: u8 },
}

/// One tracked vehicle as carried on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct WireVehicle {
    pub id: u32,
    /// Object class code (same codes as the detection log).
    pub class: u8,
    pub lat_deg: f64,
    pub lon_deg: f64,
    /// Clockwise from north, [0, 360).
    pub heading_deg: f64,
    pub speed_mps: f64,
    /// Predicted future positions, uniform length across a message.
    pub predicted: Vec<(f64, f64)>,
}

/// A decoded perception broadcast frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionMessage {
    pub seq: u32,
    pub producer_ts_ms: u64,
    pub frame_ts_ms: u64,
    pub vehicles: Vec<WireVehicle>,
}

impl PerceptionMessage {
    /// Predicted points per vehicle (0 when the message is empty).
    pub fn prediction_count(&self) -> usize {
        self.vehicles.first().map_or(0, |v| v.predicted.len())
    }

    /// Exact encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        let k = self.prediction_count();
        EMPTY_MESSAGE_LEN + self.vehicles.len() * (VEHICLE_FIXED_LEN + POINT_LEN * k)
    }
}

/// Quantizes a latitude or longitude to 1e-7-degree fixed point.
pub fn quantize_coord(deg: f64, field: &'static str, limit: f64) -> Result<i32, V2xError> {
    if !deg.is_finite() || deg.abs() > limit {
        return Err(V2xError::RangeOverflow { field, value: deg });
    }
    Ok((deg / COORD_QUANTUM_DEG).round() as i32)
}

fn quantize_heading(deg: f64) -> Result<u16, V2xError> {
    if !deg.is_finite() {
        return Err(V2xError::RangeOverflow { field: "heading", value: deg });
    }
    let wrapped = deg.rem_euclid(360.0);
    let units = (wrapped / HEADING_QUANTUM_DEG).round() as u32 % 28_800;
    Ok(units as u16)
}

fn quantize_speed(mps: f64) -> Result<u16, V2xError> {
    let units = (mps / SPEED_QUANTUM_MPS).round();
    if !mps.is_finite() || mps < 0.0 || units > f64::from(u16::MAX) {
        return Err(V2xError::RangeOverflow { field: "speed", value: mps });
    }
    Ok(units as u16)
}

/// Encodes a message into its exact wire bytes.
pub fn encode(msg: &PerceptionMessage) -> Result<Vec<u8>, V2xError> {
    if msg.vehicles.len() > usize::from(u16::MAX) {
        return Err(V2xError::RangeOverflow {
            field: "vehicle count",
            value: msg.vehicles.len() as f64,
        });
    }
    let k = msg.prediction_count();
    for v in &msg.vehicles {
        if v.predicted.len() != k {
            return Err(V2xError::UnevenPredictionCounts { first: k, other: v.predicted.len() });
        }
    }

    let mut out = Vec::with_capacity(msg.encoded_len());
    out.extend_from_slice(&MESSAGE_MAGIC);
    out.push(MESSAGE_VERSION);
    out.extend_from_slice(&msg.seq.to_le_bytes());
    out.extend_from_slice(&msg.producer_ts_ms.to_le_bytes());
    out.extend_from_slice(&msg.frame_ts_ms.to_le_bytes());
    out.extend_from_slice(&(msg.vehicles.len() as u16).to_le_bytes());
    for v in &msg.vehicles {
        out.extend_from_slice(&v.id.to_le_bytes());
        out.push(v.class);
        out.extend_from_slice(&quantize_coord(v.lat_deg, "lat", 90.0)?.to_le_bytes());
        out.extend_from_slice(&quantize_coord(v.lon_deg, "lon", 180.0)?.to_le_bytes());
        out.extend_from_slice(&quantize_heading(v.heading_deg)?.to_le_bytes());
        out.extend_from_slice(&quantize_speed(v.speed_mps)?.to_le_bytes());
        out.push(0); // reserved
        for &(lat, lon) in &v.predicted {
            out.extend_from_slice(&quantize_coord(lat, "predicted lat", 90.0)?.to_le_bytes());
            out.extend_from_slice(&quantize_coord(lon, "predicted lon", 180.0)?.to_le_bytes());
        }
    }
    out.extend_from_slice(&crc32fast::hash(&out).to_le_bytes());
    Ok(out)
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn read_i32(b: &[u8], at: usize) -> i32 {
    read_u32(b, at) as i32
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    let mut a = [0u8; 8];
    a.copy_from_slice(&b[at..at + 8]);
    u64::from_le_bytes(a)
}

/// Decodes and validates wire bytes. The CRC is checked before any body
/// field is interpreted, so corrupt input can never yield partial objects.
pub fn decode(bytes: &[u8]) -> Result<PerceptionMessage, V2xError> {
    if bytes.len() < EMPTY_MESSAGE_LEN {
        return Err(V2xError::TruncatedMessage { needed: EMPTY_MESSAGE_LEN, got: bytes.len() });
    }
    let body_end = bytes.len() - 4;
    let trailer = read_u32(bytes, body_end);
    let computed = crc32fast::hash(&bytes[..body_end]);
    if trailer != computed {
        return Err(V2xError::BadCrc { computed, trailer });
    }
    if bytes[..4] != MESSAGE_MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[..4]);
        return Err(V2xError::BadMagic { found });
    }
    if bytes[4] != MESSAGE_VERSION {
        return Err(V2xError::UnsupportedVersion { version: bytes[4] });
    }

    let seq = read_u32(bytes, 5);
    let producer_ts_ms = read_u64(bytes, 9);
    let frame_ts_ms = read_u64(bytes, 17);
    let n = usize::from(read_u16(bytes, 25));
    let body_len = body_end - 27;

    // Recover K from the length; any inconsistency means bytes are missing.
    let k = if n == 0 {
        if body_len != 0 {
            return Err(V2xError::TruncatedMessage { needed: EMPTY_MESSAGE_LEN, got: bytes.len() });
        }
        0
    } else {
        let per_vehicle_rem = body_len.checked_sub(VEHICLE_FIXED_LEN * n);
        match per_vehicle_rem {
            Some(rem) if rem % (POINT_LEN * n) == 0 => rem / (POINT_LEN * n),
            _ => {
                return Err(V2xError::TruncatedMessage {
                    needed: 27 + VEHICLE_FIXED_LEN * n + 4,
                    got: bytes.len(),
                })
            }
        }
    };

    let mut vehicles = Vec::with_capacity(n);
    let mut at = 27;
    for _ in 0..n {
        let id = read_u32(bytes, at);
        let class = bytes[at + 4];
        let lat = f64::from(read_i32(bytes, at + 5)) * COORD_QUANTUM_DEG;
        let lon = f64::from(read_i32(bytes, at + 9)) * COORD_QUANTUM_DEG;
        let heading = f64::from(read_u16(bytes, at + 13)) * HEADING_QUANTUM_DEG;
        let speed = f64::from(read_u16(bytes, at + 15)) * SPEED_QUANTUM_MPS;
        at += VEHICLE_FIXED_LEN;
        let mut predicted = Vec::with_capacity(k);
        for _ in 0..k {
            let plat = f64::from(read_i32(bytes, at)) * COORD_QUANTUM_DEG;
            let plon = f64::from(read_i32(bytes, at + 4)) * COORD_QUANTUM_DEG;
            predicted.push((plat, plon));
            at += POINT_LEN;
        }
        vehicles.push(WireVehicle {
            id,
            class,
            lat_deg: lat,
            lon_deg: lon,
            heading_deg: heading,
            speed_mps: speed,
            predicted,
        });
    }

    Ok(PerceptionMessage { seq, producer_ts_ms, frame_ts_ms, vehicles })
}
