//! NMEA 0183 GGA/RMC position sentences.

use gloss_core::events::GeoCoord;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NmeaError {
    #[error("checksum mismatch: sentence says {stated:02X}, computed {computed:02X}")]
    BadChecksum { stated: u8, computed: u8 },
    #[error("unsupported sentence {0}")]
    UnsupportedSentence(String),
    #[error("receiver reports no fix")]
    VoidFix,
    #[error("malformed sentence: {0}")]
    Malformed(String),
}

fn malformed(s: impl Into<String>) -> NmeaError {
    NmeaError::Malformed(s.into())
}

/// XOR of every byte between `$` and `*`.
pub fn checksum(body: &str) -> u8 {
    body.bytes().fold(0, |a, b| a ^ b)
}

/// `ddmm.mmmm` (or `dddmm.mmmm`) plus hemisphere to signed degrees.
fn angle(
    value: &str,
    hemi: &str,
    deg_digits: usize,
    pos: char,
    neg: char,
) -> Result<f64, NmeaError> {
    let dot = value.find('.').unwrap_or(value.len());
    if dot != deg_digits + 2 {
        return Err(malformed(format!("angle {value:?}")));
    }
    let deg: f64 = value[..deg_digits]
        .parse()
        .map_err(|_| malformed(format!("angle {value:?}")))?;
    let min: f64 = value[deg_digits..]
        .parse()
        .map_err(|_| malformed(format!("angle {value:?}")))?;
    if min >= 60.0 {
        return Err(malformed(format!("minutes in {value:?}")));
    }
    let v = deg + min / 60.0;
    match hemi.chars().next() {
        Some(c) if c == pos => Ok(v),
        Some(c) if c == neg => Ok(-v),
        _ => Err(malformed(format!("hemisphere {hemi:?}"))),
    }
}

/// Position of a checksummed `$..GGA` or `$..RMC` sentence.
pub fn parse_nmea(sentence: &str) -> Result<GeoCoord, NmeaError> {
    let s = sentence.trim();
    let body = s
        .strip_prefix('$')
        .ok_or_else(|| malformed("missing `$`"))?;
    let (body, sum) = body
        .rsplit_once('*')
        .ok_or_else(|| malformed("missing checksum"))?;
    let stated = u8::from_str_radix(sum, 16).map_err(|_| malformed(format!("checksum {sum:?}")))?;
    let computed = checksum(body);
    if stated != computed {
        return Err(NmeaError::BadChecksum { stated, computed });
    }
    let f: Vec<&str> = body.split(',').collect();
    let id = f[0];
    if id.len() != 5 {
        return Err(NmeaError::UnsupportedSentence(id.to_string()));
    }
    let need = |n: usize| {
        if f.len() < n {
            Err(malformed(format!("{id} has {} fields", f.len())))
        } else {
            Ok(())
        }
    };
    let (lat, ns, lon, ew) = match &id[2..] {
        "GGA" => {
            need(7)?;
            if f[6].is_empty() || f[6] == "0" {
                return Err(NmeaError::VoidFix);
            }
            (f[2], f[3], f[4], f[5])
        }
        "RMC" => {
            need(7)?;
            match f[2] {
                "A" => {}
                "V" => return Err(NmeaError::VoidFix),
                other => return Err(malformed(format!("RMC status {other:?}"))),
            }
            (f[3], f[4], f[5], f[6])
        }
        _ => return Err(NmeaError::UnsupportedSentence(id.to_string())),
    };
    Ok(GeoCoord::new(
        angle(lat, ns, 2, 'N', 'S')?,
        angle(lon, ew, 3, 'E', 'W')?,
    ))
}

/// Appends `*hh` to a sentence body (without `$`).
pub fn with_checksum(body: &str) -> String {
    format!("${body}*{:02X}", checksum(body))
}
