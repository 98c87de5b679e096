//! Double-double arithmetic: an unevaluated sum `hi + lo` carrying about
//! 106 bits of significand. Only what the finite-difference probes need.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct Dd {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl Dd {
    pub(crate) const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub(crate) const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    fn norm(hi: f64, lo: f64) -> Dd {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    pub(crate) fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Exact multiplication by a power of two.
    fn ldexp(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    pub(crate) fn max_zero(self) -> Dd {
        if self.hi > 0.0 || (self.hi == 0.0 && self.lo > 0.0) {
            self
        } else {
            Dd::ZERO
        }
    }

    pub(crate) fn exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd {
                hi: f64::INFINITY,
                lo: 0.0,
            };
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        let k = (self.hi / LN2.hi).round();
        // r in [-ln2/2, ln2/2], shrunk by 2^-10 so the series converges fast.
        let r = (self - LN2 * k).ldexp(-10);
        let mut term = r;
        let mut sum = r;
        for i in 2..=12 {
            term = term * r / i as f64;
            sum = sum + term;
        }
        // (1 + s)^2 - 1 = s * (s + 2), keeping the small part exact.
        for _ in 0..10 {
            sum = sum * (sum + 2.0);
        }
        (sum + 1.0).ldexp(k as i32)
    }

    pub(crate) fn sigmoid(self) -> Dd {
        if self.hi >= 0.0 {
            Dd::ONE / ((-self).exp() + 1.0)
        } else {
            let e = self.exp();
            e / (e + 1.0)
        }
    }
}

impl From<f64> for Dd {
    fn from(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::norm(s, e + f)
    }
}

impl Add<f64> for Dd {
    type Output = Dd;
    fn add(self, b: f64) -> Dd {
        let (s, e) = two_sum(self.hi, b);
        Dd::norm(s, e + self.lo)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        Dd::norm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Mul<f64> for Dd {
    type Output = Dd;
    fn mul(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        Dd::norm(p, e + self.lo * b)
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * q1;
        let q2 = r.hi / b.hi;
        let r = r - b * q2;
        let q3 = r.hi / b.hi;
        Dd::norm(q1, q2) + q3
    }
}

impl Div<f64> for Dd {
    type Output = Dd;
    fn div(self, b: f64) -> Dd {
        self / Dd::from(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(got: Dd, hi: f64, lo: f64) -> bool {
        let d = (got.hi - hi) + (got.lo - lo);
        d.abs() <= 1e-30 * hi.abs().max(1.0)
    }

    // Reference digits from 50-digit arithmetic.
    #[test]
    fn exp_matches_reference() {
        let cases = [
            (1.0, 2.718281828459045, 1.4456468917292502e-16),
            (-3.7, 0.024723526470339388, -1.294857794723138e-18),
            (0.5, 1.6487212707001282, -4.731568479435833e-17),
            (20.25, 622964442.1984454, 4.431525420935365e-08),
            (-0.000001, 0.9999990000005, -1.586124802745164e-17),
        ];
        for (x, hi, lo) in cases {
            let got = Dd::from(x).exp();
            let rel = ((got.hi - hi) + (got.lo - lo)).abs() / hi;
            assert!(rel < 1e-29, "exp({x}): {got:?}, rel {rel:e}");
        }
    }

    #[test]
    fn sigmoid_matches_reference() {
        let got = Dd::from(0.3).sigmoid();
        assert!(close(got, 0.574442516811659, -4.7456482573436975e-17), "{got:?}");
        let sym = Dd::from(-0.3).sigmoid() + got;
        assert!((sym.to_f64() - 1.0).abs() < 1e-30);
    }

    #[test]
    fn arithmetic_keeps_low_part() {
        let a = Dd::from(1.0) + 1e-20;
        assert_eq!((a - Dd::ONE).to_f64(), 1e-20);
        let third = Dd::ONE / 3.0;
        assert!(((third * 3.0) - Dd::ONE).to_f64().abs() < 1e-31);
        assert_eq!(Dd::from(-2.0).max_zero(), Dd::ZERO);
    }
}
