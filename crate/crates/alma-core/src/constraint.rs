//! Misclassification constraint losses over logits.
//!
//! Both losses are *negative exactly when the attacker has won*, so an
//! attack can treat them as inequality constraints `loss < 0`:
//!
//! * [`dlr_plus`] — untargeted: negative iff the true class `y` no longer
//!   attains the maximum logit (strictly; an exact tie with another class
//!   still counts as correctly classified).
//! * [`tdlr_plus`] — targeted: negative iff the target class `t` attains the
//!   strict maximum logit.
//!
//! Each value is a difference of logits divided by a spread of sorted
//! logits, which makes the losses invariant under positive rescaling and
//! translation of the logits. Gradients are analytic and treat the sort
//! permutation as locally constant, so they touch at most four coordinates.
//!
//! Logit spreads can collapse (for example all logits equal); that is
//! reported as [`Error::DegenerateLogits`] and callers decide how to
//! proceed (the attack solver zeroes the constraint gradient for that step).

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// A constraint loss value together with its gradient w.r.t. the logits.
#[derive(Clone, Debug)]
pub struct ConstraintEval {
    /// Loss value; negative iff the adversarial goal is met.
    pub value: f64,
    /// `d value / d z`, same length as the logit vector.
    pub grad: Vec<f64>,
}

/// Which constraint loss an attack uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Untargeted [`dlr_plus`].
    DlrPlus,
    /// Targeted [`tdlr_plus`].
    TdlrPlus,
}

impl ConstraintKind {
    /// Canonical name, matching [`FromStr`].
    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::DlrPlus => "dlr+",
            ConstraintKind::TdlrPlus => "tdlr+",
        }
    }

    /// Evaluates this constraint for logits `z` and class index `label`
    /// (the true class for `dlr+`, the target class for `tdlr+`).
    pub fn eval(self, z: &[f64], label: usize) -> Result<ConstraintEval> {
        match self {
            ConstraintKind::DlrPlus => dlr_plus(z, label),
            ConstraintKind::TdlrPlus => tdlr_plus(z, label),
        }
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConstraintKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dlr+" => Ok(ConstraintKind::DlrPlus),
            "tdlr+" => Ok(ConstraintKind::TdlrPlus),
            other => Err(Error::invalid(format!(
                "unknown constraint loss {other:?} (expected dlr+ or tdlr+)"
            ))),
        }
    }
}

/// Indices of `z` sorted by value, descending; ties broken by lower index.
fn argsort_descending(z: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    // `sort_by` is stable, so equal values keep their index order.
    idx.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).expect("finite logits"));
    idx
}

/// Index of the largest logit excluding `skip`; ties broken by lower index.
fn argmax_excluding(z: &[f64], skip: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in z.iter().enumerate() {
        if i != skip && v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn check_logits(z: &[f64], label: usize, min_classes: usize) -> Result<()> {
    if z.len() < min_classes {
        return Err(Error::invalid(format!(
            "need at least {min_classes} logits, got {}",
            z.len()
        )));
    }
    if label >= z.len() {
        return Err(Error::invalid(format!(
            "class index {label} out of range for {} logits",
            z.len()
        )));
    }
    if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite logit {bad}")));
    }
    Ok(())
}

/// Untargeted constraint loss.
///
/// With `p` the indices of `z` in descending order,
///
/// ```text
/// dlr+(z, y) = (z[y] - max_{i != y} z[i]) / (z[p[0]] - z[p[2]])
/// ```
///
/// Properties: negative iff `y` lost the strict argmax, at most `1`,
/// invariant under positive rescaling and translation of `z`. Requires at
/// least 3 classes. Returns [`Error::DegenerateLogits`] when the
/// normalising spread `z[p[0]] - z[p[2]]` is exactly zero.
pub fn dlr_plus(z: &[f64], y: usize) -> Result<ConstraintEval> {
    check_logits(z, y, 3)?;
    let p = argsort_descending(z);
    let den = z[p[0]] - z[p[2]];
    if den == 0.0 {
        return Err(Error::DegenerateLogits(format!(
            "top-1 and top-3 logits are equal ({})",
            z[p[0]]
        )));
    }
    let rival = argmax_excluding(z, y);
    let num = z[y] - z[rival];
    let value = num / den;

    let mut grad = vec![0.0; z.len()];
    let inv = 1.0 / den;
    let dden = num / (den * den);
    grad[y] += inv;
    grad[rival] -= inv;
    grad[p[0]] -= dden;
    grad[p[2]] += dden;
    Ok(ConstraintEval { value, grad })
}

/// Targeted constraint loss.
///
/// With `p` the indices of `z` in descending order,
///
/// ```text
/// tdlr+(z, t) = (max_{i != t} z[i] - z[t]) / (z[p[0]] - (z[p[2]] + z[p[3]]) / 2)
/// ```
///
/// Negative iff the target class `t` holds the strict argmax. Requires at
/// least 4 classes. Returns [`Error::DegenerateLogits`] when the
/// normalising spread is exactly zero.
pub fn tdlr_plus(z: &[f64], target: usize) -> Result<ConstraintEval> {
    check_logits(z, target, 4)?;
    let p = argsort_descending(z);
    let den = z[p[0]] - 0.5 * (z[p[2]] + z[p[3]]);
    if den == 0.0 {
        return Err(Error::DegenerateLogits(format!(
            "top logit equals the mean of the 3rd and 4th logits ({})",
            z[p[0]]
        )));
    }
    let rival = argmax_excluding(z, target);
    let num = z[rival] - z[target];
    let value = num / den;

    let mut grad = vec![0.0; z.len()];
    let inv = 1.0 / den;
    let dden = num / (den * den);
    grad[rival] += inv;
    grad[target] -= inv;
    grad[p[0]] -= dden;
    grad[p[2]] += 0.5 * dden;
    grad[p[3]] += 0.5 * dden;
    Ok(ConstraintEval { value, grad })
}

/// Index of the predicted class: largest logit, ties to the lower index.
pub fn predicted_class(z: &[f64]) -> usize {
    argmax_excluding(z, usize::MAX)
}
