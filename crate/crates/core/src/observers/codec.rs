//! Exact digit interleaving of fixed-point vectors.
//!
//! A vector on the codec grid maps to one decimal string whose digits are
//! the coordinates' digits dealt out round-robin, most significant first.
//! Strings rather than floats carry the result, so the map is an exact
//! bijection between grid vectors and well-formed strings.

use crate::geometry::View;
use crate::{Error, Result};

/// Largest total digit count whose grid integers are exact in `f64` with
/// room to spare for rounding.
pub const MAX_DIGITS: u32 = 12;

/// Distance from the grid, in grid units, still accepted as on-grid.
const GRID_SLACK: f64 = 1e-3;

/// Fixed-point grid with `int_digits` integer and `frac_digits` fractional
/// decimal digits per coordinate, applied after adding `offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointCodec {
    int_digits: u32,
    frac_digits: u32,
    offset: f64,
}

impl FixedPointCodec {
    pub fn new(int_digits: u32, frac_digits: u32, offset: f64) -> Result<Self> {
        if int_digits == 0 {
            return Err(Error::InvalidArgument("at least one integer digit is required".into()));
        }
        if int_digits + frac_digits > MAX_DIGITS {
            return Err(Error::InvalidArgument(format!(
                "{int_digits}.{frac_digits} digits exceed the {MAX_DIGITS}-digit limit"
            )));
        }
        if !offset.is_finite() || offset < 0.0 {
            return Err(Error::InvalidArgument(format!("offset must be finite and >= 0, got {offset}")));
        }
        Ok(Self { int_digits, frac_digits, offset })
    }

    /// Parse a `P.Q` digit specification.
    pub fn from_spec(spec: &str, offset: f64) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("digit spec must look like P.Q, got {spec:?}"));
        let (p, q) = spec.split_once('.').ok_or_else(bad)?;
        Self::new(p.parse().map_err(|_| bad())?, q.parse().map_err(|_| bad())?, offset)
    }

    pub fn int_digits(&self) -> u32 {
        self.int_digits
    }

    pub fn frac_digits(&self) -> u32 {
        self.frac_digits
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    fn width(&self) -> usize {
        (self.int_digits + self.frac_digits) as usize
    }

    fn scale(&self) -> f64 {
        10f64.powi(self.frac_digits as i32)
    }

    fn grid_size(&self) -> u64 {
        10u64.pow(self.int_digits + self.frac_digits)
    }

    /// Nearest grid integer to `x`, without the on-grid check.
    fn nearest(&self, x: f64) -> Result<(u64, f64)> {
        let scaled = (x + self.offset) * self.scale();
        let n = scaled.round();
        if !n.is_finite() || n < 0.0 || n >= self.grid_size() as f64 {
            return Err(Error::OutOfRange {
                value: x,
                reason: format!("needs 0 <= x + {} < 10^{}", self.offset, self.int_digits),
            });
        }
        Ok((n as u64, scaled - n))
    }

    fn grid_index(&self, x: f64) -> Result<u64> {
        let (n, off) = self.nearest(x)?;
        if off.abs() > GRID_SLACK {
            return Err(Error::OutOfRange {
                value: x,
                reason: format!("not on the {}-fractional-digit grid", self.frac_digits),
            });
        }
        Ok(n)
    }

    fn grid_value(&self, n: u64) -> f64 {
        n as f64 / self.scale() - self.offset
    }

    /// Round `x` to the nearest representable grid value.
    pub fn quantize(&self, x: f64) -> Result<f64> {
        Ok(self.grid_value(self.nearest(x)?.0))
    }

    pub fn quantize_view(&self, v: &View) -> Result<View> {
        let coords = v.as_slice().iter().map(|x| self.quantize(*x)).collect::<Result<Vec<_>>>()?;
        View::new(coords)
    }

    /// Interleave the digits of the grid vector `x`.
    pub fn encode(&self, x: &[f64]) -> Result<String> {
        if x.is_empty() {
            return Err(Error::EmptyInput);
        }
        let width = self.width();
        let digits: Vec<Vec<u8>> =
            x.iter().map(|c| Ok(format!("{:0width$}", self.grid_index(*c)?).into_bytes())).collect::<Result<_>>()?;
        let p = self.int_digits as usize;
        let mut out = String::with_capacity(x.len() * width + 1);
        for pos in 0..width {
            if pos == p {
                out.push('.');
            }
            for d in &digits {
                out.push(d[pos] as char);
            }
        }
        Ok(out)
    }

    /// Exact inverse of [`FixedPointCodec::encode`] for `k` coordinates.
    pub fn decode(&self, s: &str, k: usize) -> Result<Vec<f64>> {
        let malformed = |why: &str| Error::MalformedString(format!("{why}: {s:?}"));
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        let (p, q) = (self.int_digits as usize, self.frac_digits as usize);
        let (int_part, frac_part) = match s.split_once('.') {
            Some((a, b)) if q > 0 => (a, b),
            None if q == 0 => (s, ""),
            _ => return Err(malformed("wrong decimal point placement")),
        };
        if int_part.len() != k * p || frac_part.len() != k * q {
            return Err(malformed(&format!("expected {}.{} digits", k * p, k * q)));
        }
        if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(malformed("non-digit character"));
        }
        let int_part = int_part.as_bytes();
        let frac_part = frac_part.as_bytes();
        Ok((0..k)
            .map(|i| {
                let digits = (0..p).map(|pos| int_part[pos * k + i]).chain((0..q).map(|pos| frac_part[pos * k + i]));
                let n = digits.fold(0u64, |acc, d| acc * 10 + u64::from(d - b'0'));
                self.grid_value(n)
            })
            .collect())
    }
}

/// Interleaved code of the concatenated pair `(v, t)`.
pub fn mu_similarity(v: &View, t: &View, codec: &FixedPointCodec) -> Result<String> {
    if v.dim() != t.dim() {
        return Err(Error::LengthMismatch { expected: v.dim(), found: t.dim() });
    }
    let joined: Vec<f64> = v.as_slice().iter().chain(t.as_slice()).copied().collect();
    codec.encode(&joined)
}

/// Split a `mu` value back into its target and training views.
pub fn decode_mu(s: &str, k: usize, codec: &FixedPointCodec) -> Result<(View, View)> {
    let mut coords = codec.decode(s, 4 * k)?;
    let t = coords.split_off(2 * k);
    Ok((View::new(coords)?, View::new(t)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    #[test]
    fn hand_examples() {
        let c = FixedPointCodec::new(2, 2, 0.0).unwrap();
        assert_eq!(c.encode(&[12.34, 56.78]).unwrap(), "1526.3748");
        assert_eq!(c.encode(&[0.0, 0.0]).unwrap(), "0000.0000");
        assert_eq!(c.decode("1526.3748", 2).unwrap(), vec![12.34, 56.78]);
        assert_eq!(c.decode("0000.0000", 2).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn integer_only_codec_has_no_point() {
        let c = FixedPointCodec::new(3, 0, 0.0).unwrap();
        assert_eq!(c.encode(&[123.0, 45.0]).unwrap(), "102435");
        assert_eq!(c.decode("102435", 2).unwrap(), vec![123.0, 45.0]);
        assert!(c.decode("104.235", 2).is_err());
    }

    #[test]
    fn off_grid_and_out_of_range() {
        let c = FixedPointCodec::new(2, 2, 0.0).unwrap();
        assert!(matches!(c.encode(&[12.345, 1.0]), Err(Error::OutOfRange { .. })));
        assert!(matches!(c.encode(&[100.0]), Err(Error::OutOfRange { .. })));
        assert!(matches!(c.encode(&[-0.01]), Err(Error::OutOfRange { .. })));
        assert!(matches!(c.encode(&[f64::NAN]), Err(Error::OutOfRange { .. })));
        let shifted = FixedPointCodec::new(2, 2, 50.0).unwrap();
        assert_eq!(shifted.decode(&shifted.encode(&[-12.5]).unwrap(), 1).unwrap(), vec![-12.5]);
    }

    #[test]
    fn malformed_strings() {
        let c = FixedPointCodec::new(2, 2, 0.0).unwrap();
        for s in ["1526.374", "15263748", "1526.37a8", "15.26.3748", "", ".", "1526,3748"] {
            assert!(matches!(c.decode(s, 2), Err(Error::MalformedString(_))), "{s}");
        }
    }

    #[test]
    fn codec_validation() {
        assert!(FixedPointCodec::new(0, 2, 0.0).is_err());
        assert!(FixedPointCodec::new(8, 5, 0.0).is_err());
        assert!(FixedPointCodec::new(2, 2, -1.0).is_err());
        assert_eq!(FixedPointCodec::from_spec("3.4", 0.0).unwrap().frac_digits(), 4);
        assert!(FixedPointCodec::from_spec("3", 0.0).is_err());
    }

    #[test]
    fn exhaustive_small_grid() {
        let c = FixedPointCodec::new(1, 1, 0.0).unwrap();
        let mut seen = std::collections::HashSet::new();
        for a in 0..100u64 {
            for b in 0..100u64 {
                let x = [a as f64 / 10.0, b as f64 / 10.0];
                let s = c.encode(&x).unwrap();
                assert_eq!(c.decode(&s, 2).unwrap(), x);
                assert!(seen.insert(s));
            }
        }
    }

    #[test]
    fn random_grid_round_trip() {
        let c = FixedPointCodec::new(3, 9, 500.0).unwrap();
        let mut rng = substream(11, "codec");
        for _ in 0..2000 {
            let x: Vec<f64> = (0..6).map(|_| c.quantize(rng.random_range(-499.0..499.0)).unwrap()).collect();
            assert_eq!(c.decode(&c.encode(&x).unwrap(), 6).unwrap(), x);
        }
    }

    #[test]
    fn mu_round_trip() {
        let c = FixedPointCodec::new(2, 6, 50.0).unwrap();
        let v = c.quantize_view(&View::new(vec![0.123456, -1.5, 2.0, 3.25]).unwrap()).unwrap();
        let t = c.quantize_view(&View::new(vec![-0.5, 0.75, 1e-6, -2.0]).unwrap()).unwrap();
        let (v2, t2) = decode_mu(&mu_similarity(&v, &t, &c).unwrap(), 2, &c).unwrap();
        assert_eq!((v2, t2), (v, t));
    }
}
