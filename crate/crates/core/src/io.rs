//! Shared text-format helpers: fixed-precision reals, CSV header comments and
//! content hashes.

use serde::ser::{SerializeSeq, Serializer};
use serde::Serialize;
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

pub const TOOL_NAME: &str = "qabench";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Formats a real with 17 significant digits (round-trips every `f64`).
pub fn fmt_real(x: f64) -> String {
    if x == 0.0 {
        // Avoid "-0.0000000000000000e0" so that equal values print identically.
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}

/// A real serialized as a raw JSON number with 17 significant digits.
pub struct Real17(pub f64);

impl Serialize for Real17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom(format!(
                "non-finite real {} cannot be written",
                self.0
            )));
        }
        let raw = RawValue::from_string(fmt_real(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

pub fn real17<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    Real17(*x).serialize(s)
}

pub fn vec_real17<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(xs.len()))?;
    for &x in xs {
        seq.serialize_element(&Real17(x))?;
    }
    seq.end()
}

pub fn mat_real17<S: Serializer>(rows: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(rows.len()))?;
    for row in rows {
        let wrapped: Vec<Real17> = row.iter().map(|&x| Real17(x)).collect();
        seq.serialize_element(&wrapped)?;
    }
    seq.end()
}

/// Hex SHA-256 of arbitrary bytes, truncated to 16 hex digits.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Comment header placed at the top of every CSV artifact.
pub fn csv_header(config_hash: &str, seeds: &[u64]) -> String {
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    format!(
        "# {TOOL_NAME} {TOOL_VERSION}\n# config_hash={config_hash}\n# seeds={}\n",
        seeds.join(",")
    )
}

/// Strips `#` comment lines from CSV text.
pub fn strip_comments(text: &str) -> impl Iterator<Item = &str> {
    text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty())
}

/// Bitstring with character `i` holding bit `i` of `mask`.
pub fn bitstring(mask: u64, n: usize) -> String {
    (0..n).map(|i| if mask >> i & 1 == 1 { '1' } else { '0' }).collect()
}

pub fn parse_bitstring(s: &str) -> Option<u64> {
    if s.len() > 64 {
        return None;
    }
    s.chars().enumerate().try_fold(0u64, |acc, (i, c)| match c {
        '0' => Some(acc),
        '1' => Some(acc | 1 << i),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip_through_17_digits() {
        for x in [1.0, -0.1, 1.0 / 3.0, 6.02214076e23, 5e-324, -2.5e-17] {
            let s = fmt_real(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(fmt_real(-0.0), fmt_real(0.0));
    }

    #[test]
    fn raw_reals_are_valid_json() {
        let v = vec![0.5, -3.0];
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::new(&mut out);
        vec_real17(&v, &mut ser).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "[5.0000000000000000e-1,-3.0000000000000000e0]");
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn bitstrings() {
        assert_eq!(bitstring(0b0110, 4), "0110");
        assert_eq!(bitstring(0b0001, 4), "1000");
        assert_eq!(parse_bitstring("1000"), Some(1));
        assert_eq!(parse_bitstring("10a"), None);
    }
}
