//! Perturbation-size measures between a perturbed image and its original.
//!
//! Every distance returns a scalar value plus the gradient with respect to
//! the *perturbed* input, so minimal-perturbation attacks can descend on
//! them directly:
//!
//! * [`DistanceKind::L1`] / [`DistanceKind::L2`] — vector norms of the
//!   perturbation (any tensor shape).
//! * [`DistanceKind::Ciede2000`] — per-pixel CIEDE2000 colour difference,
//!   accumulated over pixels by sum (default), mean, or Euclidean norm;
//!   requires `[3, H, W]` images in `[0, 1]`.
//! * [`DistanceKind::Ssim`] — structural dissimilarity
//!   `1 - mean-per-channel SSIM`; same image requirements.
//!
//! Gradients are analytic. Norm-type distances use subgradient 0 at their
//! non-differentiable origin, and per-pixel colour differences of identical
//! pixels contribute zero gradient.

pub mod color;
mod ssim;

use std::fmt;
use std::str::FromStr;

pub use color::{ciede2000_lab, rgb_to_lab};

use crate::tensor::Tensor;
use crate::{Error, Result};
use color::{check_rgb_range, ciede2000_impl, pixel_to_lab, Dual3, Real};

/// Which distance an attack minimises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DistanceKind {
    L1,
    L2,
    Ciede2000,
    Ssim,
}

impl DistanceKind {
    /// All kinds in a stable order.
    pub const ALL: [DistanceKind; 4] = [
        DistanceKind::L1,
        DistanceKind::L2,
        DistanceKind::Ciede2000,
        DistanceKind::Ssim,
    ];

    /// Canonical lowercase name, matching [`FromStr`].
    pub fn name(self) -> &'static str {
        match self {
            DistanceKind::L1 => "l1",
            DistanceKind::L2 => "l2",
            DistanceKind::Ciede2000 => "ciede2000",
            DistanceKind::Ssim => "ssim",
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(DistanceKind::L1),
            "l2" => Ok(DistanceKind::L2),
            "ciede2000" => Ok(DistanceKind::Ciede2000),
            "ssim" => Ok(DistanceKind::Ssim),
            other => Err(Error::invalid(format!(
                "unknown distance {other:?} (expected l1, l2, ciede2000, or ssim)"
            ))),
        }
    }
}

/// How per-pixel CIEDE2000 differences are reduced to one scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CiedeAccumulation {
    /// Sum over pixels (default).
    Sum,
    /// Mean over pixels.
    Mean,
    /// Euclidean norm over pixels.
    L2,
}

impl CiedeAccumulation {
    pub fn name(self) -> &'static str {
        match self {
            CiedeAccumulation::Sum => "sum",
            CiedeAccumulation::Mean => "mean",
            CiedeAccumulation::L2 => "l2",
        }
    }
}

impl fmt::Display for CiedeAccumulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CiedeAccumulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(CiedeAccumulation::Sum),
            "mean" => Ok(CiedeAccumulation::Mean),
            "l2" => Ok(CiedeAccumulation::L2),
            other => Err(Error::invalid(format!(
                "unknown CIEDE2000 accumulation {other:?} (expected sum, mean, or l2)"
            ))),
        }
    }
}

/// A distance choice with its kind-specific parameters.
#[derive(Clone, Debug)]
pub struct DistanceSpec {
    pub kind: DistanceKind,
    /// Pixel accumulation for CIEDE2000 (ignored by other kinds).
    pub ciede_accumulation: CiedeAccumulation,
    /// Requested SSIM window size (clamped to the image, forced odd).
    pub ssim_window: usize,
    /// SSIM Gaussian window standard deviation.
    pub ssim_sigma: f64,
}

impl DistanceSpec {
    /// A spec with the standard parameters for the given kind.
    pub fn new(kind: DistanceKind) -> Self {
        DistanceSpec {
            kind,
            ciede_accumulation: CiedeAccumulation::Sum,
            ssim_window: 11,
            ssim_sigma: 1.5,
        }
    }

    /// The default first-step distance increment used to calibrate attack
    /// step sizes for this distance.
    pub fn default_epsilon(&self) -> f64 {
        match self.kind {
            DistanceKind::L1 => 0.5,
            DistanceKind::L2 => 0.1,
            DistanceKind::Ciede2000 => 0.05,
            DistanceKind::Ssim => 3e-5,
        }
    }

    /// Distance value and gradient w.r.t. `x_tilde`.
    pub fn evaluate(&self, x_tilde: &Tensor, x: &Tensor) -> Result<DistanceEval> {
        x.expect_shape(x_tilde.shape())?;
        match self.kind {
            DistanceKind::L1 => Ok(l1(x_tilde, x)),
            DistanceKind::L2 => Ok(l2(x_tilde, x)),
            DistanceKind::Ciede2000 => ciede2000(x_tilde, x, self.ciede_accumulation, true),
            DistanceKind::Ssim => {
                let e = ssim::ssim_with_grad(x_tilde, x, self.ssim_window, self.ssim_sigma)?;
                let grad = e.grad.iter().map(|g| -g).collect::<Vec<_>>();
                Ok(DistanceEval {
                    value: 1.0 - e.ssim,
                    grad: Tensor::from_vec(x_tilde.shape().to_vec(), grad)?,
                })
            }
        }
    }

    /// Distance value only (cheaper; used by line searches).
    pub fn value(&self, x_tilde: &Tensor, x: &Tensor) -> Result<f64> {
        x.expect_shape(x_tilde.shape())?;
        match self.kind {
            DistanceKind::L1 => Ok(x_tilde
                .data()
                .iter()
                .zip(x.data())
                .map(|(&a, &b)| (a - b).abs())
                .sum()),
            DistanceKind::L2 => Ok(x_tilde
                .data()
                .iter()
                .zip(x.data())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()),
            DistanceKind::Ciede2000 => {
                Ok(ciede2000(x_tilde, x, self.ciede_accumulation, false)?.value)
            }
            DistanceKind::Ssim => {
                let e = ssim::ssim_with_grad(x_tilde, x, self.ssim_window, self.ssim_sigma)?;
                Ok(1.0 - e.ssim)
            }
        }
    }
}

/// A distance value with its gradient w.r.t. the perturbed input.
#[derive(Clone, Debug)]
pub struct DistanceEval {
    pub value: f64,
    pub grad: Tensor,
}

fn l1(x_tilde: &Tensor, x: &Tensor) -> DistanceEval {
    let mut value = 0.0;
    let grad: Vec<f64> = x_tilde
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| {
            let d = a - b;
            value += d.abs();
            // Subgradient 0 where the perturbation coordinate is 0.
            if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    DistanceEval {
        value,
        grad: Tensor::from_vec(x_tilde.shape().to_vec(), grad).expect("same shape"),
    }
}

fn l2(x_tilde: &Tensor, x: &Tensor) -> DistanceEval {
    let value = x_tilde
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let grad: Vec<f64> = if value == 0.0 {
        vec![0.0; x_tilde.len()]
    } else {
        x_tilde
            .data()
            .iter()
            .zip(x.data())
            .map(|(&a, &b)| (a - b) / value)
            .collect()
    };
    DistanceEval {
        value,
        grad: Tensor::from_vec(x_tilde.shape().to_vec(), grad).expect("same shape"),
    }
}

fn ciede2000(
    x_tilde: &Tensor,
    x: &Tensor,
    accumulation: CiedeAccumulation,
    with_grad: bool,
) -> Result<DistanceEval> {
    let shape = x_tilde.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::ShapeMismatch {
            expected: vec![3, 0, 0],
            got: shape.to_vec(),
        });
    }
    check_rgb_range(x_tilde)?;
    check_rgb_range(x)?;
    let plane = shape[1] * shape[2];
    let xt = x_tilde.data();
    let xr = x.data();

    // Per-pixel colour differences (and their RGB derivatives if requested).
    let mut per_pixel = Vec::with_capacity(plane);
    let mut per_pixel_grad = Vec::with_capacity(if with_grad { plane } else { 0 });
    for p in 0..plane {
        let ref_lab = pixel_to_lab([xr[p], xr[plane + p], xr[2 * plane + p]]);
        if with_grad {
            let lab = pixel_to_lab([
                Dual3::seed(xt[p], 0),
                Dual3::seed(xt[plane + p], 1),
                Dual3::seed(xt[2 * plane + p], 2),
            ]);
            let e = ciede2000_impl(
                lab,
                [
                    Dual3::lift(ref_lab[0]),
                    Dual3::lift(ref_lab[1]),
                    Dual3::lift(ref_lab[2]),
                ],
            );
            per_pixel.push(e.v);
            per_pixel_grad.push(e.d);
        } else {
            let lab = pixel_to_lab([xt[p], xt[plane + p], xt[2 * plane + p]]);
            per_pixel.push(ciede2000_impl(lab, ref_lab));
        }
    }

    // Reduce, with the matching chain-rule factor per pixel.
    let (value, factor): (f64, Box<dyn Fn(usize) -> f64>) = match accumulation {
        CiedeAccumulation::Sum => (per_pixel.iter().sum(), Box::new(|_| 1.0)),
        CiedeAccumulation::Mean => (
            per_pixel.iter().sum::<f64>() / plane as f64,
            Box::new(move |_| 1.0 / plane as f64),
        ),
        CiedeAccumulation::L2 => {
            let norm = per_pixel.iter().map(|e| e * e).sum::<f64>().sqrt();
            let pp = per_pixel.clone();
            (
                norm,
                Box::new(move |p| if norm == 0.0 { 0.0 } else { pp[p] / norm }),
            )
        }
    };

    let grad = if with_grad {
        let mut g = vec![0.0; xt.len()];
        for p in 0..plane {
            let f = factor(p);
            g[p] = f * per_pixel_grad[p][0];
            g[plane + p] = f * per_pixel_grad[p][1];
            g[2 * plane + p] = f * per_pixel_grad[p][2];
        }
        Tensor::from_vec(shape.to_vec(), g)?
    } else {
        Tensor::zeros(shape.to_vec())
    };
    Ok(DistanceEval { value, grad })
}
