//! Structural dissimilarity: `1 - mean-per-channel SSIM`.
//!
//! SSIM is computed per channel with a Gaussian-weighted sliding window
//! (default 11x11, sigma 1.5) over all fully-contained window positions,
//! and averaged. Images smaller than the window use the largest odd window
//! that fits. Stabilisers are the standard `C1 = 0.01^2`, `C2 = 0.03^2` for
//! data in `[0, 1]`.
//!
//! The gradient with respect to the perturbed image is the exact adjoint of
//! the forward computation: for each window, the local SSIM score `s` is a
//! rational function of the weighted mean, variance, and covariance, whose
//! partials are accumulated back onto the contributing pixels with their
//! window weights.

use crate::tensor::Tensor;
use crate::{Error, Result};

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Normalised 2-D Gaussian window weights, `size` x `size`.
fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as isize - 1) / 2;
    let mut w = Vec::with_capacity(size * size);
    for i in -half..=half {
        for j in -half..=half {
            let r2 = (i * i + j * j) as f64;
            w.push((-r2 / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Largest odd window size that fits the image.
fn effective_window(requested: usize, h: usize, w: usize) -> usize {
    let m = requested.min(h).min(w).max(1);
    if m.is_multiple_of(2) {
        m - 1
    } else {
        m
    }
}

pub(crate) struct SsimEval {
    /// Mean-per-channel SSIM in `[-1, 1]`.
    pub ssim: f64,
    /// Gradient of the mean-per-channel SSIM w.r.t. the first image.
    pub grad: Vec<f64>,
}

/// Mean SSIM over channels between `[C, H, W]` images, plus its gradient
/// with respect to `x` (the perturbed image).
pub(crate) fn ssim_with_grad(
    x: &Tensor,
    y: &Tensor,
    window: usize,
    sigma: f64,
) -> Result<SsimEval> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch {
            expected: vec![0, 0, 0],
            got: shape.to_vec(),
        });
    }
    y.expect_shape(shape)?;
    if window == 0 || sigma <= 0.0 {
        return Err(Error::invalid(format!(
            "SSIM window {window} and sigma {sigma} must be positive"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let k = effective_window(window, h, w);
    let weights = gaussian_window(k, sigma);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let positions = (oh * ow) as f64;
    let plane = h * w;

    let xv = x.data();
    let yv = y.data();
    let mut grad = vec![0.0; xv.len()];
    let mut ssim_sum = 0.0;

    for ch in 0..c {
        let xc = &xv[ch * plane..(ch + 1) * plane];
        let yc = &yv[ch * plane..(ch + 1) * plane];
        let gc = &mut grad[ch * plane..(ch + 1) * plane];
        let mut channel_sum = 0.0;
        for oi in 0..oh {
            for oj in 0..ow {
                // Weighted first and second moments over the window.
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for wi in 0..k {
                    let row = (oi + wi) * w + oj;
                    let wrow = wi * k;
                    for wj in 0..k {
                        let wt = weights[wrow + wj];
                        let xs = xc[row + wj];
                        let ys = yc[row + wj];
                        mx += wt * xs;
                        my += wt * ys;
                        sxx += wt * xs * xs;
                        syy += wt * ys * ys;
                        sxy += wt * xs * ys;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cov = sxy - mx * my;

                let a = 2.0 * mx * my + C1;
                let b = 2.0 * cov + C2;
                let cq = mx * mx + my * my + C1;
                let d = vx + vy + C2;
                let s = (a * b) / (cq * d);
                channel_sum += s;

                // Partials of s w.r.t. the window statistics.
                let ds_da = b / (cq * d);
                let ds_db = a / (cq * d);
                let ds_dc = -s / cq;
                let ds_dd = -s / d;
                // mu_x enters a and cq; vx enters d; cov enters b.
                let ds_dmx = ds_da * 2.0 * my + ds_dc * 2.0 * mx;
                for wi in 0..k {
                    let row = (oi + wi) * w + oj;
                    let wrow = wi * k;
                    for wj in 0..k {
                        let wt = weights[wrow + wj];
                        let xs = xc[row + wj];
                        let ys = yc[row + wj];
                        // d vx / d x_p = 2 wt (x_p - mx); d cov / d x_p = wt (y_p - my).
                        gc[row + wj] +=
                            wt * (ds_dmx + ds_dd * 2.0 * (xs - mx) + ds_db * 2.0 * (ys - my));
                    }
                }
            }
        }
        ssim_sum += channel_sum / positions;
    }

    let scale = 1.0 / (c as f64 * positions);
    for g in &mut grad {
        *g *= scale;
    }
    Ok(SsimEval {
        ssim: ssim_sum / c as f64,
        grad,
    })
}
