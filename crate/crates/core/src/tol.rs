use serde::{Deserialize, Serialize};

/// Numerical thresholds shared by every diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// |h_i| below this counts as active.
    pub act_tol: f64,
    /// Reduced KKT residual accepted by Newton.
    pub newton_tol: f64,
    /// Max-norm distance in (y, lambda) under which two KKT points are merged.
    pub dedup_tol: f64,
    /// Curvature threshold separating minimizers from saddles.
    pub class_tol: f64,
    /// Threshold for the LICQ / SCSC / SOSC verdicts.
    pub reg_tol: f64,
    /// Smallest singular value accepted by the sensitivity solves.
    pub sing_tol: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
    /// Radius of the feasible-sampling probe used when curvature is inconclusive.
    pub probe_r: f64,
    pub probe_dirs: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            act_tol: 1e-8,
            newton_tol: 1e-10,
            dedup_tol: 1e-6,
            class_tol: 1e-7,
            reg_tol: 1e-6,
            sing_tol: 1e-9,
            max_newton: 50,
            max_halvings: 20,
            probe_r: 1e-3,
            probe_dirs: 64,
        }
    }
}

impl Tolerances {
    /// Every threshold must be positive and finite, every count at least one.
    pub fn validate(&self) -> crate::Result<()> {
        let floats = [
            ("act_tol", self.act_tol),
            ("newton_tol", self.newton_tol),
            ("dedup_tol", self.dedup_tol),
            ("class_tol", self.class_tol),
            ("reg_tol", self.reg_tol),
            ("sing_tol", self.sing_tol),
            ("probe_r", self.probe_r),
        ];
        for (name, v) in floats {
            if !(v.is_finite() && v > 0.0) {
                return Err(crate::DiagError::Precondition(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.max_newton == 0 || self.probe_dirs == 0 {
            return Err(crate::DiagError::Precondition("max_newton and probe_dirs must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert!(Tolerances::default().validate().is_ok());
        let bad = Tolerances { reg_tol: -1.0, ..Tolerances::default() };
        assert!(bad.validate().is_err());
        let bad = Tolerances { probe_dirs: 0, ..Tolerances::default() };
        assert!(bad.validate().is_err());
    }
}
