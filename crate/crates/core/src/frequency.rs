//! Exact eigenvalue moduli `coeff·√kernel` and the phase arithmetic that
//! keeps long lifted times accurate.

use std::cmp::Ordering;
use std::fmt;

use num_integer::Integer;
use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Result};

/// `n = a²·k` with `k` square-free. `n = 0` gives `(0, 1)`.
pub fn square_free_split(n: u64) -> (u64, u64) {
    if n == 0 {
        return (0, 1);
    }
    let (mut a, mut k, mut rest) = (1u64, 1u64, n);
    let mut p = 2u64;
    while p * p <= rest {
        let mut e = 0;
        while rest % p == 0 {
            rest /= p;
            e += 1;
        }
        a *= p.pow(e / 2);
        if e % 2 == 1 {
            k *= p;
        }
        p += if p == 2 { 1 } else { 2 };
    }
    (a, k * rest)
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExactFrequency {
    coeff: Ratio<u64>,
    kernel: u64,
}

impl ExactFrequency {
    pub fn zero() -> Self {
        ExactFrequency {
            coeff: Ratio::from_integer(0),
            kernel: 1,
        }
    }

    pub fn new(coeff: Ratio<u64>, kernel: u64) -> Result<Self> {
        if kernel == 0 || square_free_split(kernel).0 != 1 {
            return Err(invalid(format!("kernel {kernel} is not square-free")));
        }
        if *coeff.numer() == 0 {
            return Ok(Self::zero());
        }
        Ok(ExactFrequency { coeff, kernel })
    }

    /// `√r` for a nonnegative integer radicand.
    pub fn sqrt_of(r: u64) -> Self {
        let (a, k) = square_free_split(r);
        ExactFrequency {
            coeff: Ratio::from_integer(a),
            kernel: k,
        }
    }

    pub fn coeff(&self) -> Ratio<u64> {
        self.coeff
    }

    pub fn kernel(&self) -> u64 {
        self.kernel
    }

    pub fn is_zero(&self) -> bool {
        *self.coeff.numer() == 0
    }

    pub fn value(&self) -> f64 {
        *self.coeff.numer() as f64 / *self.coeff.denom() as f64 * (self.kernel as f64).sqrt()
    }

    /// Nonzero rational ratio, decided exactly.
    pub fn resonant_with(&self, other: &ExactFrequency) -> bool {
        !self.is_zero() && !other.is_zero() && self.kernel == other.kernel
    }

    /// `self / other` when it is rational; `None` otherwise or for `other = 0`.
    pub fn rational_ratio(&self, other: &ExactFrequency) -> Option<Ratio<u64>> {
        if other.is_zero() {
            return None;
        }
        if self.is_zero() {
            return Some(Ratio::from_integer(0));
        }
        (self.kernel == other.kernel).then(|| self.coeff / other.coeff)
    }

    /// Largest frequency of this representation dividing every element of
    /// `members` into a positive integer: `gcd(coeffs)·√kernel`.
    pub fn common_divisor(members: &[ExactFrequency]) -> Option<ExactFrequency> {
        let nonzero: Vec<_> = members.iter().filter(|f| !f.is_zero()).collect();
        let first = nonzero.first()?;
        if nonzero.iter().any(|f| f.kernel != first.kernel) {
            return None;
        }
        let (num, den) = nonzero.iter().fold((0u64, 1u64), |(n, d), f| {
            (n.gcd(f.coeff.numer()), d.lcm(f.coeff.denom()))
        });
        Some(ExactFrequency {
            coeff: Ratio::new(num, den),
            kernel: first.kernel,
        })
    }

    /// `self/other` as a phase multiplier, exact when rational.
    pub fn ratio(&self, other: &ExactFrequency) -> Result<FrequencyRatio> {
        if other.is_zero() {
            return Err(invalid("ratio to the zero frequency"));
        }
        if let Some(r) = self.rational_ratio(other) {
            return Ok(FrequencyRatio::Rational(r));
        }
        // (a/b)·√k / ((c/d)·√l) = (a·d)/(b·c·l) · √(k·l)
        let (a, b) = (*self.coeff.numer() as u128, *self.coeff.denom() as u128);
        let (c, d) = (*other.coeff.numer() as u128, *other.coeff.denom() as u128);
        let q = Ratio::new(a * d, b * c * other.kernel as u128);
        let root = DoubleDouble::sqrt_u64(self.kernel * other.kernel);
        Ok(FrequencyRatio::Irrational(
            root.mul_f64(*q.numer() as f64).div_f64(*q.denom() as f64),
        ))
    }
}

impl PartialOrd for ExactFrequency {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExactFrequency {
    fn cmp(&self, other: &Self) -> Ordering {
        // compare coeff²·kernel exactly
        let sq = |f: &ExactFrequency| {
            let (n, d) = (*f.coeff.numer() as u128, *f.coeff.denom() as u128);
            Ratio::new(n * n * f.kernel as u128, d * d)
        };
        sq(self).cmp(&sq(other))
    }
}

impl fmt::Debug for ExactFrequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for ExactFrequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let c = if *self.coeff.denom() == 1 {
            format!("{}", self.coeff.numer())
        } else {
            format!("{}/{}", self.coeff.numer(), self.coeff.denom())
        };
        match (c.as_str(), self.kernel) {
            (c, 1) => f.write_str(c),
            ("1", k) => write!(f, "√{k}"),
            (c, k) => write!(f, "{c}√{k}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FrequencyJson {
    coeff: [u64; 2],
    kernel: u64,
}

impl Serialize for ExactFrequency {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FrequencyJson {
            coeff: [*self.coeff.numer(), *self.coeff.denom()],
            kernel: self.kernel,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ExactFrequency {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = FrequencyJson::deserialize(d)?;
        if j.coeff[1] == 0 {
            return Err(serde::de::Error::custom("zero denominator"));
        }
        ExactFrequency::new(Ratio::new(j.coeff[0], j.coeff[1]), j.kernel)
            .map_err(serde::de::Error::custom)
    }
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub fn from_f64(x: f64) -> Self {
        DoubleDouble { hi: x, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = two_sum(hi, lo);
        DoubleDouble { hi, lo }
    }

    pub fn sqrt_u64(n: u64) -> Self {
        let x = (n as f64).sqrt();
        if x == 0.0 {
            return Self::from_f64(0.0);
        }
        // one Newton step on the residual n − x², computed exactly
        let (p, e) = two_prod(x, x);
        let nh = n as f64;
        let nl = (n - nh as u64) as f64;
        let resid = ((nh - p) - e) + nl;
        Self::renorm(x, resid / (2.0 * x))
    }

    pub fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        Self::renorm(p, e + self.lo * b)
    }

    pub fn div_f64(self, b: f64) -> Self {
        let q1 = self.hi / b;
        let (p, e) = two_prod(q1, b);
        let r = ((self.hi - p) - e) + self.lo;
        Self::renorm(q1, r / b)
    }

    /// Fractional part in `[0, 1)`.
    pub fn frac(self) -> f64 {
        let fh = self.hi - self.hi.floor();
        let f = fh + self.lo;
        let f = f - f.floor();
        if f >= 1.0 {
            0.0
        } else {
            f
        }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FrequencyRatio {
    Rational(Ratio<u64>),
    Irrational(DoubleDouble),
}

impl FrequencyRatio {
    /// `frac(s·ratio)`, exact for rational ratios.
    pub fn frac_multiple(&self, s: u64) -> f64 {
        match *self {
            FrequencyRatio::Rational(r) => {
                let (p, q) = (*r.numer() as u128, *r.denom() as u128);
                ((s as u128 * p) % q) as f64 / q as f64
            }
            FrequencyRatio::Irrational(x) => {
                debug_assert!(s < (1u64 << 53));
                x.mul_f64(s as f64).frac()
            }
        }
    }

    pub fn to_f64(&self) -> f64 {
        match *self {
            FrequencyRatio::Rational(r) => *r.numer() as f64 / *r.denom() as f64,
            FrequencyRatio::Irrational(x) => x.to_f64(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits() {
        assert_eq!(square_free_split(0), (0, 1));
        assert_eq!(square_free_split(1), (1, 1));
        assert_eq!(square_free_split(8), (2, 2));
        assert_eq!(square_free_split(72), (6, 2));
        assert_eq!(square_free_split(97), (1, 97));
        assert_eq!(square_free_split(4 * 9 * 5 * 7), (6, 35));
    }

    #[test]
    fn primes() {
        let ps: Vec<u64> = (0..30).filter(|&n| is_prime(n)).collect();
        assert_eq!(ps, [2, 3, 5, 7, 11, 13, 17, 19, 23, 29]);
    }

    #[test]
    fn resonance_and_ordering() {
        let f = ExactFrequency::sqrt_of;
        assert!(f(2).resonant_with(&f(8)));
        assert!(!f(2).resonant_with(&f(3)));
        assert!(!f(0).resonant_with(&f(0)));
        assert_eq!(f(8).rational_ratio(&f(2)), Some(Ratio::from_integer(2)));
        assert!(f(3) < f(4) && f(4) < f(5));
        assert_eq!(f(4), ExactFrequency::new(Ratio::from_integer(2), 1).unwrap());
        assert!(ExactFrequency::new(Ratio::from_integer(1), 4).is_err());
    }

    #[test]
    fn common_divisor() {
        let f = ExactFrequency::sqrt_of;
        assert_eq!(ExactFrequency::common_divisor(&[f(2), f(8)]), Some(f(2)));
        assert_eq!(ExactFrequency::common_divisor(&[f(1), f(4)]), Some(f(1)));
        assert_eq!(ExactFrequency::common_divisor(&[f(0)]), None);
        assert_eq!(ExactFrequency::common_divisor(&[f(2), f(3)]), None);
    }

    #[test]
    fn json_shape() {
        let j = serde_json::to_string(&ExactFrequency::sqrt_of(8)).unwrap();
        assert_eq!(j, r#"{"coeff":[2,1],"kernel":2}"#);
        let back: ExactFrequency = serde_json::from_str(&j).unwrap();
        assert_eq!(back, ExactFrequency::sqrt_of(8));
    }

    #[test]
    fn dd_sqrt_is_accurate() {
        for n in [2u64, 3, 5, 6, 7, 10, 1_000_003] {
            let r = DoubleDouble::sqrt_u64(n);
            // (hi + lo)² − n, evaluated in double-double
            let (p, e) = two_prod(r.hi, r.hi);
            let resid = (p - n as f64) + e + 2.0 * r.hi * r.lo;
            assert!(resid.abs() < 1e-24 * n as f64, "n={n}: {resid}");
        }
    }

    #[test]
    fn frac_multiple_matches_long_hand() {
        let r = ExactFrequency::sqrt_of(2).ratio(&ExactFrequency::sqrt_of(1)).unwrap();
        // 10^7 · √2 = 14142135.623730950488016887…
        let f = r.frac_multiple(10_000_000);
        assert!((f - 0.623730950488016887).abs() < 1e-12);
        let q = ExactFrequency::sqrt_of(8).ratio(&ExactFrequency::sqrt_of(18)).unwrap();
        assert_eq!(q, FrequencyRatio::Rational(Ratio::new(2, 3)));
        assert_eq!(q.frac_multiple(5), 1.0 / 3.0);
    }
}
