//! HCS12 datagram codec and per-device state tables.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::Device;

pub const FRAME_VERSION: u8 = 0x01;
pub const MAX_SENSORS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("{0} sensors exceed the {MAX_SENSORS}-sensor frame")]
    TooManySensors(usize),
    #[error("frame has {got} data bytes, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("frame version {0:#04x}")]
    BadVersion(u8),
    #[error("empty frame")]
    Empty,
    #[error("sensor sets differ")]
    SensorSetMismatch,
}

/// Version byte, then one bit per sensor, LSB first: bit `i` of data
/// byte `j` is sensor `8j + i`.
pub fn encode_frame(bits: &[bool]) -> Result<Vec<u8>, FrameError> {
    if bits.len() > MAX_SENSORS {
        return Err(FrameError::TooManySensors(bits.len()));
    }
    let mut out = vec![0u8; 1 + bits.len().div_ceil(8)];
    out[0] = FRAME_VERSION;
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[1 + i / 8] |= 1 << (i % 8);
        }
    }
    Ok(out)
}

/// Raw bits of a frame carrying `count` sensors.
pub fn decode_bits(frame: &[u8], count: usize) -> Result<Vec<bool>, FrameError> {
    let (&version, data) = frame.split_first().ok_or(FrameError::Empty)?;
    if version != FRAME_VERSION {
        return Err(FrameError::BadVersion(version));
    }
    let expected = count.div_ceil(8);
    if data.len() != expected {
        return Err(FrameError::LengthMismatch {
            expected,
            got: data.len(),
        });
    }
    Ok((0..count)
        .map(|i| data[i / 8] & (1 << (i % 8)) != 0)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorState {
    /// Logical state: raw XOR inverted.
    pub on: bool,
    /// Epoch seconds of the last change.
    pub changed_at: i64,
}

/// Logical state per configured sensor of one device.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StateTable {
    pub sensors: BTreeMap<String, SensorState>,
}

impl StateTable {
    /// All of `device`'s sensors, off.
    pub fn for_device(device: &Device, now: i64) -> Self {
        StateTable {
            sensors: device
                .mapping
                .iter()
                .map(|m| {
                    (
                        m.name.clone(),
                        SensorState {
                            on: false,
                            changed_at: now,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn get(&self, sensor: &str) -> Option<bool> {
        self.sensors.get(sensor).map(|s| s.on)
    }

    /// Sets a logical state, stamping the change time only if it differs.
    pub fn set(&mut self, sensor: &str, on: bool, now: i64) {
        match self.sensors.get_mut(sensor) {
            Some(s) if s.on != on => {
                s.on = on;
                s.changed_at = now;
            }
            Some(_) => {}
            None => {
                self.sensors.insert(
                    sensor.to_string(),
                    SensorState {
                        on,
                        changed_at: now,
                    },
                );
            }
        }
    }

    /// `(sensor, logical state)` pairs.
    pub fn states(&self) -> impl Iterator<Item = (&str, bool)> {
        self.sensors.iter().map(|(k, v)| (k.as_str(), v.on))
    }
}

/// Decodes a frame into logical states for `device`'s mapping.
pub fn decode_frame(frame: &[u8], device: &Device, now: i64) -> Result<StateTable, FrameError> {
    let bits = decode_bits(frame, device.frame_bits())?;
    let mut table = StateTable::default();
    for m in &device.mapping {
        let raw = m.bit_index().map(|i| bits[i]).unwrap_or(false);
        table.set(&m.name, raw ^ m.inverted, now);
    }
    Ok(table)
}

/// Sensors whose logical state differs between two tables of the same
/// sensor set.
pub fn diff(prev: &StateTable, cur: &StateTable) -> Result<BTreeSet<String>, FrameError> {
    if !prev.sensors.keys().eq(cur.sensors.keys()) {
        return Err(FrameError::SensorSetMismatch);
    }
    Ok(prev
        .sensors
        .iter()
        .zip(&cur.sensors)
        .filter(|((_, a), (_, b))| a.on != b.on)
        .map(|((k, _), _)| k.clone())
        .collect())
}

/// One second's verdict: on if any sample was on, off if all were off,
/// unchanged if there were none.
pub fn aggregate_second(samples: &[bool], prev: bool) -> bool {
    if samples.is_empty() {
        prev
    } else {
        samples.iter().any(|&s| s)
    }
}
