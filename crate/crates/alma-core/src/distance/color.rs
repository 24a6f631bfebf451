//! Colour difference: RGB -> CIELAB conversion and the CIEDE2000 formula.
//!
//! The conversion takes RGB values in `[0, 1]`, applies the D65 linear-RGB
//! to XYZ matrix directly (no transfer-function decoding), scales XYZ by 100
//! before normalising by the D65 white point (Xn, Yn, Zn) =
//! (95.0489, 100, 108.8840), and applies the standard CIELAB cube-root
//! nonlinearity with threshold `delta = 6/29`.
//!
//! CIEDE2000 is implemented with the full hue-handling rules (hue angles in
//! degrees, wrap-aware hue differences and means, and the zero-chroma
//! special cases). Both the conversion and the formula are written once,
//! generic over a scalar type: evaluating with plain `f64` gives values,
//! evaluating with a three-seed dual number gives the exact derivative of a
//! pixel's colour difference with respect to its three RGB channels in a
//! single pass. Branch decisions always follow the primal value, so the
//! derivative is that of the smooth branch containing the evaluation point.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Linear RGB -> XYZ matrix (D65), row-major.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// D65 reference white, on the 0..100 XYZ scale.
const WHITE: [f64; 3] = [95.0489, 100.0, 108.8840];

/// CIELAB nonlinearity threshold.
const DELTA: f64 = 6.0 / 29.0;

/// 25^7, a constant in the CIEDE2000 chroma weighting.
const POW25_7: f64 = 6103515625.0;

/// Chroma magnitudes below this are treated as zero when deciding the
/// CIEDE2000 hue special cases (hue terms become 0 with zero gradient).
const CHROMA_EPS: f64 = 1e-12;

/// Scalar abstraction so the colour pipeline can run on `f64` (values) or on
/// dual numbers (values plus derivatives) from identical code.
pub(crate) trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Lifts a constant (zero derivative).
    fn lift(v: f64) -> Self;
    /// The underlying value, used for branch decisions.
    fn primal(self) -> f64;
    fn sqrt(self) -> Self;
    fn cbrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    /// Four-quadrant arctangent; `self` is the ordinate, `x` the abscissa.
    fn atan2(self, x: Self) -> Self;
}

impl Real for f64 {
    fn lift(v: f64) -> Self {
        v
    }
    fn primal(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn cbrt(self) -> Self {
        f64::cbrt(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
}

/// Forward-mode dual number carrying three partial derivatives (one per RGB
/// channel of the pixel being differentiated).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Dual3 {
    pub v: f64,
    pub d: [f64; 3],
}

impl Dual3 {
    /// A seeded variable: channel `i` of the pixel.
    pub fn seed(v: f64, i: usize) -> Self {
        let mut d = [0.0; 3];
        d[i] = 1.0;
        Dual3 { v, d }
    }
}

impl Add for Dual3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual3 {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1], self.d[2] + o.d[2]],
        }
    }
}

impl Sub for Dual3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual3 {
            v: self.v - o.v,
            d: [self.d[0] - o.d[0], self.d[1] - o.d[1], self.d[2] - o.d[2]],
        }
    }
}

impl Mul for Dual3 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual3 {
            v: self.v * o.v,
            d: [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
                self.d[2] * o.v + self.v * o.d[2],
            ],
        }
    }
}

impl Div for Dual3 {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        // Divide the values directly (not via a reciprocal) so the value
        // path is bit-identical to plain f64 evaluation; identical inputs
        // must produce an exactly-zero colour difference.
        let q = self.v / o.v;
        Dual3 {
            v: q,
            d: [
                (self.d[0] - q * o.d[0]) / o.v,
                (self.d[1] - q * o.d[1]) / o.v,
                (self.d[2] - q * o.d[2]) / o.v,
            ],
        }
    }
}

impl Neg for Dual3 {
    type Output = Self;
    fn neg(self) -> Self {
        Dual3 {
            v: -self.v,
            d: [-self.d[0], -self.d[1], -self.d[2]],
        }
    }
}

impl Dual3 {
    fn chain(self, v: f64, dv: f64) -> Self {
        Dual3 {
            v,
            d: [self.d[0] * dv, self.d[1] * dv, self.d[2] * dv],
        }
    }
}

impl Real for Dual3 {
    fn lift(v: f64) -> Self {
        Dual3 { v, d: [0.0; 3] }
    }
    fn primal(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        // sqrt is not differentiable at 0; that point is only reached at
        // exact colour coincidences (zero chroma, identical pixels), where
        // the crate-wide kink convention is subgradient 0.
        if self.v == 0.0 {
            return Dual3 {
                v: 0.0,
                d: [0.0; 3],
            };
        }
        let r = self.v.sqrt();
        self.chain(r, 0.5 / r)
    }
    fn cbrt(self) -> Self {
        let r = self.v.cbrt();
        self.chain(r, 1.0 / (3.0 * r * r))
    }
    fn powi(self, n: i32) -> Self {
        let r = self.v.powi(n);
        self.chain(r, n as f64 * self.v.powi(n - 1))
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn exp(self) -> Self {
        let r = self.v.exp();
        self.chain(r, r)
    }
    fn atan2(self, x: Self) -> Self {
        let v = self.v.atan2(x.v);
        let denom = x.v * x.v + self.v * self.v;
        Dual3 {
            v,
            d: [
                (x.v * self.d[0] - self.v * x.d[0]) / denom,
                (x.v * self.d[1] - self.v * x.d[1]) / denom,
                (x.v * self.d[2] - self.v * x.d[2]) / denom,
            ],
        }
    }
}

fn scale<T: Real>(c: f64, t: T) -> T {
    T::lift(c) * t
}

/// CIELAB forward nonlinearity `f(t)`.
fn lab_f<T: Real>(t: T) -> T {
    if t.primal() > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / T::lift(3.0 * DELTA * DELTA) + T::lift(4.0 / 29.0)
    }
}

/// One pixel RGB (in `[0, 1]`) to CIELAB `[L*, a*, b*]`.
pub(crate) fn pixel_to_lab<T: Real>(rgb: [T; 3]) -> [T; 3] {
    let mut xyz = [T::lift(0.0); 3];
    for (row, out) in RGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        *out = scale(row[0], rgb[0]) + scale(row[1], rgb[1]) + scale(row[2], rgb[2]);
    }
    // Move XYZ onto the 0..100 scale before white-point normalisation.
    let fx = lab_f(scale(100.0, xyz[0]) / T::lift(WHITE[0]));
    let fy = lab_f(scale(100.0, xyz[1]) / T::lift(WHITE[1]));
    let fz = lab_f(scale(100.0, xyz[2]) / T::lift(WHITE[2]));
    let l = scale(116.0, fy) - T::lift(16.0);
    let a = scale(500.0, fx - fy);
    let b = scale(200.0, fy - fz);
    [l, a, b]
}

fn deg2rad<T: Real>(deg: T) -> T {
    scale(std::f64::consts::PI / 180.0, deg)
}

/// Hue angle of `(a, b)` in degrees, in `[0, 360)`; zero (with zero
/// derivative) for near-zero chroma.
fn hue_degrees<T: Real>(b: T, a: T, chroma: T) -> T {
    if chroma.primal() < CHROMA_EPS {
        return T::lift(0.0);
    }
    let h = scale(180.0 / std::f64::consts::PI, b.atan2(a));
    if h.primal() < 0.0 {
        h + T::lift(360.0)
    } else {
        h
    }
}

/// CIEDE2000 colour difference between two CIELAB triples.
///
/// Generic so that the same code yields plain values (`T = f64`) or values
/// plus derivatives (`T = Dual3`).
pub(crate) fn ciede2000_impl<T: Real>(lab1: [T; 3], lab2: [T; 3]) -> T {
    let [l1, a1, b1] = lab1;
    let [l2, a2, b2] = lab2;

    let c1 = (a1 * a1 + b1 * b1).sqrt();
    let c2 = (a2 * a2 + b2 * b2).sqrt();
    let cbar = scale(0.5, c1 + c2);
    // G factor: 0.5 (1 - sqrt(cbar^7 / (cbar^7 + 25^7))). The limit at
    // cbar -> 0 is 0.5 with zero slope; branch to avoid 0/0 in the dual.
    let g = if cbar.primal() < CHROMA_EPS {
        T::lift(0.5)
    } else {
        let cbar7 = cbar.powi(7);
        scale(
            0.5,
            T::lift(1.0) - (cbar7 / (cbar7 + T::lift(POW25_7))).sqrt(),
        )
    };

    let a1p = (T::lift(1.0) + g) * a1;
    let a2p = (T::lift(1.0) + g) * a2;
    let c1p = (a1p * a1p + b1 * b1).sqrt();
    let c2p = (a2p * a2p + b2 * b2).sqrt();
    let zero1 = c1p.primal() < CHROMA_EPS;
    let zero2 = c2p.primal() < CHROMA_EPS;
    let h1p = hue_degrees(b1, a1p, c1p);
    let h2p = hue_degrees(b2, a2p, c2p);

    let dl = l2 - l1;
    let dc = c2p - c1p;

    // Hue difference, wrapped into (-180, 180]; zero when either chroma is
    // zero (the hue of a grey is undefined).
    let dh_angle = if zero1 || zero2 {
        T::lift(0.0)
    } else {
        let diff = h2p - h1p;
        if diff.primal().abs() <= 180.0 {
            diff
        } else if diff.primal() > 180.0 {
            diff - T::lift(360.0)
        } else {
            diff + T::lift(360.0)
        }
    };
    let dh = if zero1 || zero2 {
        T::lift(0.0)
    } else {
        scale(
            2.0,
            (c1p * c2p).sqrt() * deg2rad(scale(0.5, dh_angle)).sin(),
        )
    };

    let lbar = scale(0.5, l1 + l2);
    let cbarp = scale(0.5, c1p + c2p);
    // Mean hue, wrap-aware; the plain sum when either chroma is zero.
    let hbar = if zero1 || zero2 {
        h1p + h2p
    } else {
        let sum = h1p + h2p;
        if (h1p.primal() - h2p.primal()).abs() <= 180.0 {
            scale(0.5, sum)
        } else if sum.primal() < 360.0 {
            scale(0.5, sum + T::lift(360.0))
        } else {
            scale(0.5, sum - T::lift(360.0))
        }
    };

    let t = T::lift(1.0) - scale(0.17, deg2rad(hbar - T::lift(30.0)).cos())
        + scale(0.24, deg2rad(scale(2.0, hbar)).cos())
        + scale(0.32, deg2rad(scale(3.0, hbar) + T::lift(6.0)).cos())
        - scale(0.20, deg2rad(scale(4.0, hbar) - T::lift(63.0)).cos());

    let dtheta_arg = (hbar - T::lift(275.0)) / T::lift(25.0);
    let dtheta = scale(30.0, (-(dtheta_arg * dtheta_arg)).exp());
    let rc = if cbarp.primal() < CHROMA_EPS {
        T::lift(0.0)
    } else {
        let cbarp7 = cbarp.powi(7);
        scale(2.0, (cbarp7 / (cbarp7 + T::lift(POW25_7))).sqrt())
    };

    let lshift = (lbar - T::lift(50.0)) * (lbar - T::lift(50.0));
    let sl = T::lift(1.0) + scale(0.015, lshift) / (T::lift(20.0) + lshift).sqrt();
    let sc = T::lift(1.0) + scale(0.045, cbarp);
    let sh = T::lift(1.0) + scale(0.015, cbarp * t);
    let rt = -deg2rad(scale(2.0, dtheta)).sin() * rc;

    let tl = dl / sl;
    let tc = dc / sc;
    let th = dh / sh;
    let sq = tl * tl + tc * tc + th * th + rt * tc * th;
    // Identical colours give sq = 0, where sqrt is not differentiable; the
    // colour difference is at its minimum there, so return 0 with zero
    // derivative.
    if sq.primal() <= 1e-30 {
        T::lift(0.0)
    } else {
        sq.sqrt()
    }
}

/// CIEDE2000 colour difference between two CIELAB triples (values only).
pub fn ciede2000_lab(lab1: [f64; 3], lab2: [f64; 3]) -> f64 {
    ciede2000_impl(lab1, lab2)
}

/// Converts a `[3, H, W]` RGB image with entries in `[0, 1]` to CIELAB
/// planes of the same shape.
pub fn rgb_to_lab(image: &Tensor) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::ShapeMismatch {
            expected: vec![3, 0, 0],
            got: shape.to_vec(),
        });
    }
    check_rgb_range(image)?;
    let plane = shape[1] * shape[2];
    let data = image.data();
    let mut out = vec![0.0; data.len()];
    for p in 0..plane {
        let lab = pixel_to_lab([data[p], data[plane + p], data[2 * plane + p]]);
        out[p] = lab[0];
        out[plane + p] = lab[1];
        out[2 * plane + p] = lab[2];
    }
    Tensor::from_vec(shape.to_vec(), out)
}

/// Rejects images whose entries leave `[0, 1]` by more than rounding noise.
pub(crate) fn check_rgb_range(image: &Tensor) -> Result<()> {
    if let Some(bad) = image
        .data()
        .iter()
        .find(|v| !(-1e-9..=1.0 + 1e-9).contains(*v))
    {
        return Err(Error::invalid(format!(
            "RGB value {bad} outside [0, 1]; colour distances are defined on the unit box"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Published CIEDE2000 verification pairs:
    /// (L1, a1, b1, L2, a2, b2, expected dE00). The set exercises every hue
    /// branch (wrap-around differences, means, near-zero chroma).
    pub(crate) const CIEDE2000_PAIRS: [(f64, f64, f64, f64, f64, f64, f64); 34] = [
        (50.0000, 2.6772, -79.7751, 50.0000, 0.0000, -82.7485, 2.0425),
        (50.0000, 3.1571, -77.2803, 50.0000, 0.0000, -82.7485, 2.8615),
        (50.0000, 2.8361, -74.0200, 50.0000, 0.0000, -82.7485, 3.4412),
        (
            50.0000, -1.3802, -84.2814, 50.0000, 0.0000, -82.7485, 1.0000,
        ),
        (
            50.0000, -1.1848, -84.8006, 50.0000, 0.0000, -82.7485, 1.0000,
        ),
        (
            50.0000, -0.9009, -85.5211, 50.0000, 0.0000, -82.7485, 1.0000,
        ),
        (50.0000, 0.0000, 0.0000, 50.0000, -1.0000, 2.0000, 2.3669),
        (50.0000, -1.0000, 2.0000, 50.0000, 0.0000, 0.0000, 2.3669),
        (50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0009, 7.1792),
        (50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0010, 7.1792),
        (50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0011, 7.2195),
        (50.0000, 2.4900, -0.0010, 50.0000, -2.4900, 0.0012, 7.2195),
        (50.0000, -0.0010, 2.4900, 50.0000, 0.0009, -2.4900, 4.8045),
        (50.0000, -0.0010, 2.4900, 50.0000, 0.0010, -2.4900, 4.8045),
        (50.0000, -0.0010, 2.4900, 50.0000, 0.0011, -2.4900, 4.7461),
        (50.0000, 2.5000, 0.0000, 50.0000, 0.0000, -2.5000, 4.3065),
        (50.0000, 2.5000, 0.0000, 73.0000, 25.0000, -18.0000, 27.1492),
        (50.0000, 2.5000, 0.0000, 61.0000, -5.0000, 29.0000, 22.8977),
        (50.0000, 2.5000, 0.0000, 56.0000, -27.0000, -3.0000, 31.9030),
        (50.0000, 2.5000, 0.0000, 58.0000, 24.0000, 15.0000, 19.4535),
        (50.0000, 2.5000, 0.0000, 50.0000, 3.1736, 0.5854, 1.0000),
        (50.0000, 2.5000, 0.0000, 50.0000, 3.2972, 0.0000, 1.0000),
        (50.0000, 2.5000, 0.0000, 50.0000, 1.8634, 0.5757, 1.0000),
        (50.0000, 2.5000, 0.0000, 50.0000, 3.2592, 0.3350, 1.0000),
        (
            60.2574, -34.0099, 36.2677, 60.4626, -34.1751, 39.4387, 1.2644,
        ),
        (
            63.0109, -31.0961, -5.8663, 62.8187, -29.7946, -4.0864, 1.2630,
        ),
        (61.2901, 3.7196, -5.3901, 61.4292, 2.2480, -4.9620, 1.8731),
        (35.0831, -44.1164, 3.7933, 35.0232, -40.0716, 1.5901, 1.8645),
        (
            22.7233, 20.0904, -46.6940, 23.0331, 14.9730, -42.5619, 2.0373,
        ),
        (36.4612, 47.8580, 18.3852, 36.2715, 50.5065, 21.2231, 1.4146),
        (90.8027, -2.0831, 1.4410, 91.1528, -1.6435, 0.0447, 1.4441),
        (90.9257, -0.5406, -0.9208, 88.6381, -0.8985, -0.7239, 1.5381),
        (6.7747, -0.2908, -2.4247, 5.8714, -0.0985, -2.2286, 0.6377),
        (2.0776, 0.0795, -1.1350, 0.9033, -0.0636, -0.5514, 0.9082),
    ];

    #[test]
    fn ciede2000_matches_published_pairs() {
        for (i, &(l1, a1, b1, l2, a2, b2, want)) in CIEDE2000_PAIRS.iter().enumerate() {
            let got = ciede2000_lab([l1, a1, b1], [l2, a2, b2]);
            assert!(
                (got - want).abs() < 1e-4,
                "pair {}: dE00 = {got:.6}, published {want}",
                i + 1
            );
        }
    }

    #[test]
    fn ciede2000_is_symmetric_and_zero_on_identity() {
        for &(l1, a1, b1, l2, a2, b2, _) in CIEDE2000_PAIRS.iter().take(10) {
            let fwd = ciede2000_lab([l1, a1, b1], [l2, a2, b2]);
            let rev = ciede2000_lab([l2, a2, b2], [l1, a1, b1]);
            assert!((fwd - rev).abs() < 1e-10, "not symmetric: {fwd} vs {rev}");
            assert_eq!(ciede2000_lab([l1, a1, b1], [l1, a1, b1]), 0.0);
        }
    }

    #[test]
    fn black_maps_to_lab_origin() {
        let lab = pixel_to_lab([0.0f64, 0.0, 0.0]);
        assert_eq!(lab[0], 0.0);
        assert_eq!(lab[1], 0.0);
        assert_eq!(lab[2], 0.0);
    }

    #[test]
    fn white_maps_near_l100() {
        let lab = pixel_to_lab([1.0f64, 1.0, 1.0]);
        // The matrix rows sum to the white point only up to published
        // rounding, so allow a small slack around L* = 100, a* = b* = 0.
        assert!((lab[0] - 100.0).abs() < 0.01, "L* = {}", lab[0]);
        assert!(lab[1].abs() < 0.01, "a* = {}", lab[1]);
        assert!(lab[2].abs() < 0.01, "b* = {}", lab[2]);
    }

    #[test]
    fn grey_ramp_is_monotone_in_lightness_with_zero_chroma() {
        let mut prev = -1.0;
        for step in 0..=20 {
            let v = step as f64 / 20.0;
            let lab = pixel_to_lab([v, v, v]);
            assert!(lab[0] > prev, "L* not increasing at {v}");
            assert!(
                lab[1].abs() < 0.01 && lab[2].abs() < 0.01,
                "grey has chroma"
            );
            prev = lab[0];
        }
    }

    #[test]
    fn dual_matches_scalar_values() {
        let rgb = [0.3, 0.6, 0.2];
        let lab_s = pixel_to_lab(rgb);
        let lab_d = pixel_to_lab([
            Dual3::seed(rgb[0], 0),
            Dual3::seed(rgb[1], 1),
            Dual3::seed(rgb[2], 2),
        ]);
        for i in 0..3 {
            assert!((lab_s[i] - lab_d[i].v).abs() < 1e-12);
        }
        let reference = pixel_to_lab([0.5, 0.1, 0.9]);
        let d = ciede2000_impl(
            lab_d,
            [
                Dual3::lift(reference[0]),
                Dual3::lift(reference[1]),
                Dual3::lift(reference[2]),
            ],
        );
        let s = ciede2000_impl(lab_s, reference);
        assert!((d.v - s).abs() < 1e-12);
    }

    #[test]
    fn dual_derivatives_match_finite_differences() {
        // Chromatic pixels only: near-grey points sit close to the chroma
        // kink of sqrt(a^2 + b^2), where two-sided differences are biased.
        let cases = [
            ([0.30, 0.60, 0.20], [0.50, 0.10, 0.90]),
            ([0.80, 0.75, 0.70], [0.78, 0.76, 0.71]),
            ([0.05, 0.90, 0.40], [0.06, 0.88, 0.42]),
            ([0.55, 0.40, 0.25], [0.20, 0.65, 0.80]),
        ];
        for (rgb, ref_rgb) in cases {
            let ref_lab = pixel_to_lab(ref_rgb);
            let eval = |p: [f64; 3]| ciede2000_impl(pixel_to_lab(p), ref_lab);
            let dual = ciede2000_impl(
                pixel_to_lab([
                    Dual3::seed(rgb[0], 0),
                    Dual3::seed(rgb[1], 1),
                    Dual3::seed(rgb[2], 2),
                ]),
                [
                    Dual3::lift(ref_lab[0]),
                    Dual3::lift(ref_lab[1]),
                    Dual3::lift(ref_lab[2]),
                ],
            );
            let h = 1e-6;
            for i in 0..3 {
                let mut hi = rgb;
                let mut lo = rgb;
                hi[i] += h;
                lo[i] -= h;
                let fd = (eval(hi) - eval(lo)) / (2.0 * h);
                let rel = (dual.d[i] - fd).abs() / fd.abs().max(1e-6);
                assert!(
                    rel < 1e-4,
                    "channel {i} of {rgb:?}: dual {} vs fd {fd}",
                    dual.d[i]
                );
            }
        }
    }

    #[test]
    fn grey_pixel_gradient_is_finite() {
        // Greys have (almost) zero chroma; the hue special cases must keep
        // every derivative finite there.
        let rgb = [0.45, 0.45, 0.45];
        let ref_lab = pixel_to_lab([0.20f64, 0.65, 0.80]);
        let d = ciede2000_impl(
            pixel_to_lab([
                Dual3::seed(rgb[0], 0),
                Dual3::seed(rgb[1], 1),
                Dual3::seed(rgb[2], 2),
            ]),
            [
                Dual3::lift(ref_lab[0]),
                Dual3::lift(ref_lab[1]),
                Dual3::lift(ref_lab[2]),
            ],
        );
        assert!(d.v.is_finite() && d.v > 0.0);
        for (i, g) in d.d.iter().enumerate() {
            assert!(g.is_finite(), "channel {i} derivative is {g}");
        }
        // Exact zero chroma on both sides: hue terms vanish, value is the
        // pure lightness difference, and the gradient stays finite.
        let a = [Dual3::seed(30.0, 0), Dual3::lift(0.0), Dual3::lift(0.0)];
        let b = [Dual3::lift(60.0), Dual3::lift(0.0), Dual3::lift(0.0)];
        let d = ciede2000_impl(a, b);
        assert!(d.v > 0.0 && d.d.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn rgb_to_lab_checks_shape_and_range() {
        let img = Tensor::zeros(vec![1, 2, 2]);
        assert!(rgb_to_lab(&img).is_err());
        let img = Tensor::full(vec![3, 2, 2], 1.5);
        assert!(rgb_to_lab(&img).is_err());
        let img = Tensor::full(vec![3, 2, 2], 0.5);
        let lab = rgb_to_lab(&img).unwrap();
        assert_eq!(lab.shape(), &[3, 2, 2]);
    }
}
