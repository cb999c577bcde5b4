//! Numbers with optional engineering suffixes ("4u", "13.8k").

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

/// A quantity in SI base units. Deserializes from a TOML number or a
/// suffixed string; serializes as a plain number.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Si(pub f64);

impl From<Si> for f64 {
    fn from(v: Si) -> f64 {
        v.0
    }
}

fn exponent(suffix: char) -> Option<i32> {
    Some(match suffix {
        'f' => -15,
        'p' => -12,
        'n' => -9,
        'u' | 'µ' => -6,
        'm' => -3,
        'k' => 3,
        'M' => 6,
        'G' => 9,
        _ => return None,
    })
}

/// Parses `"4u"`, `"13.8k"`, `"1e-3"` or `"42"`.
pub fn parse(text: &str) -> Result<f64, String> {
    let s = text.trim();
    let bad = || format!("`{text}` is not a number (accepted suffixes: f p n u m k M G)");
    if let Ok(v) = s.parse::<f64>() {
        return if v.is_finite() { Ok(v) } else { Err(bad()) };
    }
    let last = s.chars().last().ok_or_else(bad)?;
    let exp = exponent(last).ok_or_else(bad)?;
    let mantissa = &s[..s.len() - last.len_utf8()];
    if mantissa.is_empty() || mantissa.contains(['e', 'E']) {
        return Err(bad());
    }
    // going through the decimal exponent keeps "4u" exactly 4e-6
    let v: f64 = format!("{mantissa}e{exp}").parse().map_err(|_| bad())?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

impl<'de> Deserialize<'de> for Si {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct SiVisitor;

        impl Visitor<'_> for SiVisitor {
            type Value = Si;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a string such as \"4u\" or \"13.8k\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Si, E> {
                Ok(Si(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Si, E> {
                Ok(Si(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Si, E> {
                Ok(Si(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Si, E> {
                parse(v).map(Si).map_err(E::custom)
            }
        }

        d.deserialize_any(SiVisitor)
    }
}
