//! Moderate-deviation scale `lambda(eps)`, which must satisfy
//! `lambda -> infinity` and `sqrt(eps) * lambda -> 0` as `eps -> 0`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone)]
pub enum DeviationScale {
    /// `lambda(eps) = eps^(-a)`; moderate for `0 < a < 1/2`.
    Power(f64),
    Custom {
        label: String,
        lambda: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl Default for DeviationScale {
    fn default() -> Self {
        DeviationScale::Power(0.25)
    }
}

impl fmt::Debug for DeviationScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviationScale::Power(a) => write!(f, "Power({a})"),
            DeviationScale::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

impl DeviationScale {
    pub fn lambda(&self, eps: f64) -> f64 {
        match self {
            DeviationScale::Power(a) => eps.powf(-a),
            DeviationScale::Custom { lambda, .. } => lambda(eps),
        }
    }

    /// `sqrt(eps) * lambda(eps)`, the amplitude of the rescaled deviation.
    pub fn theta(&self, eps: f64) -> f64 {
        eps.sqrt() * self.lambda(eps)
    }

    pub fn is_moderate(&self, eps: f64) -> bool {
        let l = self.lambda(eps);
        eps > 0.0 && l.is_finite() && l > 1.0 && self.theta(eps) < 1.0
    }

    /// Configuration error naming `deviation_scale` unless every `eps` is in
    /// the moderate regime.
    pub fn check_moderate(&self, ladder: &[f64]) -> Result<()> {
        for &eps in ladder {
            if !self.is_moderate(eps) {
                return Err(Error::config(
                    "deviation_scale",
                    format!(
                        "{self:?} leaves the moderate regime at eps={eps}: lambda={}, sqrt(eps)*lambda={}",
                        self.lambda(eps),
                        self.theta(eps)
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self {
            DeviationScale::Power(a) => format!("eps^-{a}"),
            DeviationScale::Custom { label, .. } => label.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_power_is_moderate_on_ladder() {
        let s = DeviationScale::default();
        assert!((s.lambda(1e-4) - 10.0).abs() < 1e-12);
        assert!((s.theta(1e-4) - 0.1).abs() < 1e-12);
        s.check_moderate(&[1e-2, 1e-3, 1e-4]).unwrap();
    }

    #[test]
    fn large_deviation_scale_rejected() {
        let s = DeviationScale::Power(0.5);
        match s.check_moderate(&[1e-2]) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "deviation_scale"),
            other => panic!("{other:?}"),
        }
        assert!(!DeviationScale::Power(0.25).is_moderate(1.0));
        assert!(!DeviationScale::Power(0.25).is_moderate(0.0));
    }

    #[test]
    fn custom_scale() {
        let s = DeviationScale::Custom {
            label: "log".into(),
            lambda: Arc::new(|e: f64| (1.0 / e).ln()),
        };
        assert!(s.is_moderate(1e-3));
        assert_eq!(s.label(), "log");
    }
}
