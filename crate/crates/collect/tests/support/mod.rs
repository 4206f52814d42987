#![allow(dead_code)]

use std::path::PathBuf;

use gloss_collect::SensorConfig;

pub fn fixture(name: &str) -> PathBuf {
    let here = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name);
    if here.exists() {
        here
    } else {
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("../collect/fixtures")
            .join(name)
    }
}

pub fn smartlab() -> SensorConfig {
    SensorConfig::load(&fixture("smartlab.xml")).unwrap()
}

/// Names in the order of the lab wiring chart, S0 first.
pub const SMARTLAB: [&str; 22] = [
    "Desk_Johnny",
    "Desk_Dave",
    "Desk_Tim",
    "WB_Tim",
    "Door_Tim",
    "Beam_NW",
    "Desk_Paddy",
    "Ceiling_Paddy",
    "WB_Paddy",
    "Desk_Sotirios",
    "WB_Sotirios",
    "Door_Paddy",
    "Door_E",
    "WB_East",
    "Door_Sotirios",
    "Door_W",
    "WB_Centre",
    "WB_West",
    "Beam_SW",
    "Desk_Richard",
    "Desk_Wang",
    "Beam_W",
];

/// Transitions implied by a per-second state sequence: the first
/// second, then every second whose state differs from the one before.
pub fn expected_transitions(states: &[bool]) -> Vec<(usize, bool)> {
    let mut out = Vec::new();
    for (i, &s) in states.iter().enumerate() {
        if i == 0 || states[i - 1] != s {
            out.push((i, s));
        }
    }
    out
}

/// Bit `i` of the frame packed by hand: byte `1 + i / 8`, mask
/// `1 << (i % 8)`.
pub fn pack_by_hand(bits: &[bool]) -> Vec<u8> {
    let mut bytes = vec![0x01];
    for chunk in bits.chunks(8) {
        let mut b = 0u8;
        for (k, &on) in chunk.iter().enumerate() {
            b += u8::from(on) * 2u8.pow(k as u32);
        }
        bytes.push(b);
    }
    bytes
}

/// A fresh path under the system temp dir.
pub fn temp_path(tag: &str) -> PathBuf {
    use std::sync::atomic::{AtomicUsize, Ordering};
    static N: AtomicUsize = AtomicUsize::new(0);
    let p = std::env::temp_dir().join(format!(
        "gloss-{tag}-{}-{}",
        std::process::id(),
        N.fetch_add(1, Ordering::Relaxed)
    ));
    let _ = std::fs::remove_file(&p);
    p
}
