//! Exact non-negative ratios with table-style decimal rendering.

use std::fmt;

use num_rational::Ratio;
use serde::{Serialize, Serializer};

/// An exact `u64` ratio. Serialized as its two-decimal rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Factor(pub Ratio<u64>);

fn round_div(n: u128, d: u128) -> u128 {
    (2 * n + d) / (2 * d)
}

impl Factor {
    /// Panics if `den == 0`.
    pub fn new(num: u64, den: u64) -> Self {
        Factor(Ratio::new(num, den))
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    /// Fixed-point rendering with `places` decimals, rounding half up.
    pub fn fixed(&self, places: u32) -> String {
        let scale = 10u128.pow(places);
        let v = round_div(self.numer() as u128 * scale, self.denom() as u128);
        if places == 0 {
            return v.to_string();
        }
        format!("{}.{:0width$}", v / scale, v % scale, width = places as usize)
    }

    /// Rendering with `digits` significant figures, rounding half up.
    pub fn significant(&self, digits: u32) -> String {
        assert!(digits > 0);
        let (n, d) = (self.numer() as u128, self.denom() as u128);
        if n == 0 {
            return "0".to_string();
        }
        // exponent e with 10^e <= n/d < 10^(e+1)
        let mut e: i32 = 0;
        while n >= d * 10u128.pow((e + 1) as u32) {
            e += 1;
        }
        while e <= 0 && n * 10u128.pow((-e) as u32) < d {
            e -= 1;
        }
        loop {
            let shift = digits as i32 - 1 - e;
            let v = if shift >= 0 {
                round_div(n * 10u128.pow(shift as u32), d)
            } else {
                round_div(n, d * 10u128.pow((-shift) as u32))
            };
            if v >= 10u128.pow(digits) {
                e += 1;
                continue;
            }
            return if shift > 0 {
                let scale = 10u128.pow(shift as u32);
                format!("{}.{:0width$}", v / scale, v % scale, width = shift as usize)
            } else {
                (v * 10u128.pow((-shift) as u32)).to_string()
            };
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.fixed(2))
    }
}

impl Serialize for Factor {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.fixed(2))
    }
}
