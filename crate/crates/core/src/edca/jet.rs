//! Second-order jets of generating functions at z = 1.

use std::ops::{Add, Mul};

/// Value, first and second derivative of a function at z = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet2 {
    pub const ONE: Jet2 = Jet2 {
        value: 1.0,
        d1: 0.0,
        d2: 0.0,
    };

    pub fn constant(c: f64) -> Self {
        Jet2 {
            value: c,
            d1: 0.0,
            d2: 0.0,
        }
    }

    /// z^c.
    pub fn power_of_z(c: f64) -> Self {
        Jet2 {
            value: 1.0,
            d1: c,
            d2: c * (c - 1.0),
        }
    }

    pub fn scale(self, k: f64) -> Self {
        Jet2 {
            value: k * self.value,
            d1: k * self.d1,
            d2: k * self.d2,
        }
    }

    pub fn div(self, rhs: Jet2) -> Self {
        let q = self.value / rhs.value;
        let d1 = (self.d1 - q * rhs.d1) / rhs.value;
        let d2 = (self.d2 - 2.0 * d1 * rhs.d1 - q * rhs.d2) / rhs.value;
        Jet2 { value: q, d1, d2 }
    }

    /// Mean of the uniform mixture (1/W)·Σ_{n<W} self^n for a normalized jet.
    pub fn uniform_power_mean(self, w: u32) -> Self {
        debug_assert!((self.value - 1.0).abs() < 1e-9, "jet not normalized: {}", self.value);
        let w = f64::from(w);
        Jet2 {
            value: 1.0,
            d1: self.d1 * (w - 1.0) / 2.0,
            d2: self.d1 * self.d1 * (w - 1.0) * (w - 2.0) / 3.0 + self.d2 * (w - 1.0) / 2.0,
        }
    }

    /// Mean of the distribution this jet generates.
    pub fn mean(self) -> f64 {
        self.d1
    }

    /// P'' + P' − P'².
    pub fn variance(self) -> f64 {
        self.d2 + self.d1 - self.d1 * self.d1
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, rhs: Jet2) -> Jet2 {
        Jet2 {
            value: self.value + rhs.value,
            d1: self.d1 + rhs.d1,
            d2: self.d2 + rhs.d2,
        }
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        Jet2 {
            value: self.value * rhs.value,
            d1: self.d1 * rhs.value + self.value * rhs.d1,
            d2: self.d2 * rhs.value + 2.0 * self.d1 * rhs.d1 + self.value * rhs.d2,
        }
    }
}
