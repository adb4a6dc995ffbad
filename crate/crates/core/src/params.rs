//! Model constants of the bending energy.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Bending rigidity, Gauss rigidity, spontaneous curvature and the
/// prescribed mass (and optionally volume) of the membrane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HelfrichParams {
    pub beta: f64,
    pub gamma: f64,
    pub h0: f64,
    pub m0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
}

impl HelfrichParams {
    pub fn new(beta: f64, gamma: f64, h0: f64, m0: f64) -> Result<Self> {
        let p = Self { beta, gamma, h0, m0, v0: None };
        p.validate()?;
        Ok(p)
    }

    pub fn with_volume(mut self, v0: f64) -> Result<Self> {
        self.v0 = Some(v0);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma), ("h0", self.h0), ("m0", self.m0)] {
            if !v.is_finite() {
                return domain(format!("{name} must be finite, got {v}"));
            }
        }
        if self.beta <= 0.0 {
            return domain(format!("beta must be positive, got {}", self.beta));
        }
        if self.m0 <= 0.0 {
            return domain(format!("m0 must be positive, got {}", self.m0));
        }
        if let Some(v0) = self.v0 {
            if !v0.is_finite() || v0 <= 0.0 {
                return domain(format!("v0 must be positive, got {v0}"));
            }
            // isoperimetric compatibility
            if 36.0 * PI * v0 * v0 > self.m0.powi(3) * (1.0 + 1e-12) {
                return domain(format!(
                    "v0 = {v0} violates 36*pi*v0^2 <= m0^3 for m0 = {}",
                    self.m0
                ));
            }
        }
        Ok(())
    }

    /// True iff the integrand is convex, i.e. -6/5 beta < gamma < 0.
    pub fn convexity_flag(&self) -> bool {
        -1.2 * self.beta < self.gamma && self.gamma < 0.0
    }

    /// 1 + gamma / (2 beta).
    pub fn reduced_rigidity(&self) -> f64 {
        1.0 + self.gamma / (2.0 * self.beta)
    }

    /// Radius of the single-covered sphere of mass m0.
    pub fn r1(&self) -> f64 {
        (self.m0 / (4.0 * PI)).sqrt()
    }

    /// Radius of the k-covered sphere of mass m0.
    pub fn radius_k(&self, k: u64) -> f64 {
        (self.m0 / (4.0 * PI * k as f64)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_beta_and_mass() {
        assert!(HelfrichParams::new(0.0, -0.1, 0.0, 1.0).is_err());
        assert!(HelfrichParams::new(1.0, -0.1, 0.0, 0.0).is_err());
        assert!(HelfrichParams::new(1.0, -0.1, 0.0, 1.0).is_ok());
    }

    #[test]
    fn isoperimetric_volume_check() {
        let p = HelfrichParams::new(1.0, -0.5, 0.0, 4.0 * PI).unwrap();
        // the unit ball is the extremal case
        assert!(p.with_volume(4.0 * PI / 3.0).is_ok());
        assert!(p.with_volume(4.0 * PI / 3.0 * 1.01).is_err());
    }

    #[test]
    fn convexity_window() {
        let mk = |g| HelfrichParams::new(1.0, g, 0.0, 1.0).unwrap();
        assert!(mk(-0.5).convexity_flag());
        assert!(!mk(0.0).convexity_flag());
        assert!(!mk(-1.2).convexity_flag());
        assert!(mk(-1.19).convexity_flag());
    }
}
