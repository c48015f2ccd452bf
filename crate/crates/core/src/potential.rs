//! Toy potential-energy surfaces with exact analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Potential energy surface for the toy systems.
///
/// Every variant evaluates to a finite energy on its domain and carries the
/// exact analytic gradient of that evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Potential {
    /// `V(x) = (x^2 - 1)^2`, minima at ±1, unit barrier at 0.
    #[serde(rename = "double-well-1d")]
    DoubleWell1d,
    /// `V(x, y) = (x^2 - 1)^2 + a y^2`, elongated along x for `a > 1/2`.
    #[serde(rename = "double-well-2d")]
    DoubleWell2d { aniso: f64 },
    /// `V(x) = k |x|^2 / 2` in `dim` dimensions.
    #[serde(rename = "harmonic")]
    Harmonic { stiffness: f64, dim: usize },
    /// Three-well surface built from Gaussian wells plus quartic confinement:
    /// two deep wells at (±1, 0), a shallow well at (0, 5/3), and a saddle
    /// region near (0, 1/3).
    #[serde(rename = "triple-well-2d")]
    TripleWell2d,
}

impl Potential {
    /// State-space dimension the potential acts on.
    pub fn dim(&self) -> usize {
        match self {
            Potential::DoubleWell1d => 1,
            Potential::DoubleWell2d { .. } => 2,
            Potential::Harmonic { dim, .. } => *dim,
            Potential::TripleWell2d => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Potential::DoubleWell2d { aniso } if !aniso.is_finite() || *aniso <= 0.0 => {
                Err(Error::Config(format!(
                    "double-well-2d anisotropy must be positive, got {aniso}"
                )))
            }
            Potential::Harmonic { stiffness, dim } => {
                if !stiffness.is_finite() || *stiffness <= 0.0 {
                    return Err(Error::Config(format!(
                        "harmonic stiffness must be positive, got {stiffness}"
                    )));
                }
                if *dim == 0 || *dim > 2 {
                    return Err(Error::Config(format!(
                        "harmonic dimension must be 1 or 2, got {dim}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Evaluate `V(x)`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            Potential::DoubleWell1d => {
                let s = x[0] * x[0] - 1.0;
                s * s
            }
            Potential::DoubleWell2d { aniso } => {
                let s = x[0] * x[0] - 1.0;
                s * s + aniso * x[1] * x[1]
            }
            Potential::Harmonic { stiffness, .. } => {
                0.5 * stiffness * x.iter().map(|v| v * v).sum::<f64>()
            }
            Potential::TripleWell2d => {
                let (px, py) = (x[0], x[1]);
                let g = |cx: f64, cy: f64| (-(px - cx).powi(2) - (py - cy).powi(2)).exp();
                3.0 * g(0.0, 1.0 / 3.0)
                    - 3.0 * g(0.0, 5.0 / 3.0)
                    - 5.0 * g(1.0, 0.0)
                    - 5.0 * g(-1.0, 0.0)
                    + 0.2 * px.powi(4)
                    + 0.2 * (py - 1.0 / 3.0).powi(4)
            }
        }
    }

    /// Exact gradient `∇V(x)`.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            Potential::DoubleWell1d => vec![4.0 * x[0] * (x[0] * x[0] - 1.0)],
            Potential::DoubleWell2d { aniso } => {
                vec![4.0 * x[0] * (x[0] * x[0] - 1.0), 2.0 * aniso * x[1]]
            }
            Potential::Harmonic { stiffness, .. } => x.iter().map(|v| stiffness * v).collect(),
            Potential::TripleWell2d => {
                let (px, py) = (x[0], x[1]);
                // d/dx [c e^{-(x-cx)^2-(y-cy)^2}] = -2 c (x-cx) e^{...}
                let mut gx = 0.8 * px.powi(3);
                let mut gy = 0.8 * (py - 1.0 / 3.0).powi(3);
                for (c, cx, cy) in [
                    (3.0, 0.0, 1.0 / 3.0),
                    (-3.0, 0.0, 5.0 / 3.0),
                    (-5.0, 1.0, 0.0),
                    (-5.0, -1.0, 0.0),
                ] {
                    let e = (-(px - cx).powi(2) - (py - cy).powi(2)).exp();
                    gx += -2.0 * c * (px - cx) * e;
                    gy += -2.0 * c * (py - cy) * e;
                }
                vec![gx, gy]
            }
        }
    }
}
