//! Problem parameters shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponents and shrinking-set constants of one problem instance.
///
/// `m_weight` and `m_floor` are derived from `p` and `k` on construction
/// and never stored independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub p: f64,
    pub delta: f64,
    pub k: u32,
    pub b0: f64,
    pub theta0: f64,
    pub gamma: f64,
    pub big_a: f64,
}

impl Default for Parameters {
    fn default() -> Self {
        Self {
            p: 3.0,
            delta: 1.0,
            k: 2,
            b0: 1.0,
            theta0: 0.0,
            gamma: 0.05,
            big_a: 20.0,
        }
    }
}

impl Parameters {
    /// Builds and validates a parameter set.
    pub fn new(p: f64, delta: f64, k: u32, b0: f64, theta0: f64, gamma: f64, big_a: f64) -> Result<Self> {
        let out = Self { p, delta, k, b0, theta0, gamma, big_a };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(name: &'static str, reason: impl Into<String>) -> Error {
            Error::InvalidParameter { name, reason: reason.into() }
        }
        let finite = [
            ("p", self.p),
            ("delta", self.delta),
            ("b0", self.b0),
            ("theta0", self.theta0),
            ("gamma", self.gamma),
            ("big_a", self.big_a),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(bad(name, "must be finite"));
            }
        }
        if self.p <= 1.0 {
            return Err(bad("p", format!("must exceed 1, got {}", self.p)));
        }
        if self.k < 2 {
            return Err(bad("k", format!("must be at least 2, got {}", self.k)));
        }
        if self.b0 <= 0.0 {
            return Err(bad("b0", format!("must be positive, got {}", self.b0)));
        }
        if self.gamma <= 0.0 {
            return Err(bad("gamma", format!("must be positive, got {}", self.gamma)));
        }
        if self.big_a < 1.0 {
            return Err(bad("big_a", format!("must be at least 1, got {}", self.big_a)));
        }
        let m = self.m_weight();
        if !(m > 2.0 * self.k as f64) {
            return Err(bad("p", format!("weight exponent {m} must exceed 2k")));
        }
        if self.m_floor() > crate::hermite::MAX_DEGREE {
            return Err(bad("p", format!("floor of weight exponent {m} exceeds the supported degree")));
        }
        Ok(())
    }

    /// Weight exponent `M = 2kp/(p-1)`.
    pub fn m_weight(&self) -> f64 {
        2.0 * self.k as f64 * self.p / (self.p - 1.0)
    }

    /// Largest retained mode index `floor(M)`.
    pub fn m_floor(&self) -> usize {
        self.m_weight().floor() as usize
    }

    /// `2k` as an index.
    pub fn two_k(&self) -> usize {
        2 * self.k as usize
    }

    pub fn kf(&self) -> f64 {
        self.k as f64
    }
}
