//! Smooth penalty-Lagrangian functions for inequality constraints.
//!
//! A penalty-Lagrangian function `P(y, rho, mu)` replaces the hard constraint
//! `y <= 0` inside an augmented Lagrangian. `y` is the constraint value,
//! `rho > 0` the penalty parameter, and `mu > 0` the current multiplier
//! estimate. All four functions implemented here share the properties that
//! make the multiplier update `mu <- dP/dy(y, rho, mu)` sound:
//!
//! * **Axiom 1** — `dP/dy >= 0` everywhere (multipliers stay nonnegative).
//! * **Axiom 2** — `dP/dy(0, rho, mu) = mu` exactly (at the constraint
//!   boundary the multiplier is reproduced).
//! * **Axiom 3** — for fixed `y > 0`, `dP/dy -> infinity` as `rho -> infinity`
//!   (violations are eventually punished arbitrarily hard).
//! * **Axiom 4** — for fixed `y < 0`, `dP/dy -> 0` as `rho -> infinity`
//!   (strictly satisfied constraints fade out).
//!
//! Derivatives are hard-coded in closed form rather than derived by any
//! autodiff machinery, so this module also serves as an independent oracle
//! for gradient tests elsewhere in the crate.
//!
//! Branch boundaries (`y = 0`, and `y = -mu/rho` for P1) are closed on the
//! upper branch: at an exact boundary value the `y >= 0` branch (or for P1
//! the middle branch at `y = -mu/rho`) is used. All four functions are C1 at
//! those boundaries, so the choice never changes the returned value.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// The four supported penalty-Lagrangian functions.
///
/// * [`Phr`](PenaltyKind::Phr) — the classical quadratic
///   Powell–Hestenes–Rockafellar penalty. C1 but not C2 (its second
///   derivative jumps at `y = -mu/rho`).
/// * [`P1`](PenaltyKind::P1) — a C2 piecewise-polynomial penalty with a cubic
///   violation branch and a constant tail for deeply satisfied constraints.
/// * [`P2`](PenaltyKind::P2) — cubic growth for violations, hyperbolic decay
///   for satisfied constraints. Smooth everywhere relevant.
/// * [`P3`](PenaltyKind::P3) — quadratic growth for violations, same
///   hyperbolic decay as P2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PenaltyKind {
    Phr,
    P1,
    P2,
    P3,
}

impl PenaltyKind {
    /// All four kinds, in a stable order (useful for grid tests and demos).
    pub const ALL: [PenaltyKind; 4] = [
        PenaltyKind::Phr,
        PenaltyKind::P1,
        PenaltyKind::P2,
        PenaltyKind::P3,
    ];

    /// Canonical lowercase name, matching [`FromStr`].
    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::Phr => "phr",
            PenaltyKind::P1 => "p1",
            PenaltyKind::P2 => "p2",
            PenaltyKind::P3 => "p3",
        }
    }

    /// Evaluates `P(y, rho, mu)`.
    ///
    /// Requires finite `y`, finite `rho > 0`, and finite `mu >= 0`.
    pub fn value(self, y: f64, rho: f64, mu: f64) -> Result<f64> {
        check_args(y, rho, mu)?;
        let v = match self {
            PenaltyKind::Phr => {
                let t = (mu + rho * y).max(0.0);
                (t * t - mu * mu) / (2.0 * rho)
            }
            PenaltyKind::P1 => {
                if y >= 0.0 {
                    mu * y + 0.5 * rho * y * y + rho * rho * y * y * y
                } else if y >= -mu / rho {
                    mu * y + 0.5 * rho * y * y
                } else {
                    -mu * mu / (2.0 * rho)
                }
            }
            PenaltyKind::P2 => {
                if y >= 0.0 {
                    mu * y + mu * rho * y * y + rho * rho * y * y * y / 6.0
                } else {
                    mu * y / (1.0 - rho * y)
                }
            }
            PenaltyKind::P3 => {
                if y >= 0.0 {
                    mu * y + mu * rho * y * y
                } else {
                    mu * y / (1.0 - rho * y)
                }
            }
        };
        Ok(v)
    }

    /// Evaluates the closed-form partial derivative `dP/dy(y, rho, mu)`.
    ///
    /// This is the quantity used as the next multiplier estimate. Same
    /// domain requirements as [`value`](Self::value).
    pub fn derivative(self, y: f64, rho: f64, mu: f64) -> Result<f64> {
        check_args(y, rho, mu)?;
        let d = match self {
            PenaltyKind::Phr => (mu + rho * y).max(0.0),
            PenaltyKind::P1 => {
                if y >= 0.0 {
                    mu + rho * y + 3.0 * rho * rho * y * y
                } else if y >= -mu / rho {
                    mu + rho * y
                } else {
                    0.0
                }
            }
            PenaltyKind::P2 => {
                if y >= 0.0 {
                    mu + 2.0 * mu * rho * y + 0.5 * rho * rho * y * y
                } else {
                    let t = 1.0 - rho * y;
                    mu / (t * t)
                }
            }
            PenaltyKind::P3 => {
                if y >= 0.0 {
                    mu + 2.0 * mu * rho * y
                } else {
                    let t = 1.0 - rho * y;
                    mu / (t * t)
                }
            }
        };
        Ok(d)
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "phr" => Ok(PenaltyKind::Phr),
            "p1" => Ok(PenaltyKind::P1),
            "p2" => Ok(PenaltyKind::P2),
            "p3" => Ok(PenaltyKind::P3),
            other => Err(Error::invalid(format!(
                "unknown penalty function {other:?} (expected phr, p1, p2, or p3)"
            ))),
        }
    }
}

fn check_args(y: f64, rho: f64, mu: f64) -> Result<()> {
    if !y.is_finite() {
        return Err(Error::invalid(format!("penalty input y = {y} not finite")));
    }
    if !rho.is_finite() || rho <= 0.0 {
        return Err(Error::invalid(format!(
            "penalty parameter rho = {rho} must be finite and positive"
        )));
    }
    if !mu.is_finite() || mu < 0.0 {
        return Err(Error::invalid(format!(
            "multiplier mu = {mu} must be finite and nonnegative"
        )));
    }
    Ok(())
}
