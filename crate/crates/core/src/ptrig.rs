//! p-trigonometric functions and the closed-form Dirichlet spectrum of an
//! interval.
//!
//! `sin_p` is the inverse on `[0, π_p/2]` of
//! `F_p(y) = ∫_0^y (1 - t^p)^(-1/p) dt`, continued by `sin_p(π_p - x) = sin_p(x)`,
//! oddness and `2π_p`-periodicity. For `p = 2` it is the ordinary sine.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PError {
    #[error("p must be a finite number in (1, inf), got {0}")]
    OutOfRange(f64),
}

/// Exponent of the p-Laplacian, `1 < p < ∞`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct PValue(f64);

impl PValue {
    pub fn new(p: f64) -> Result<Self, PError> {
        if p.is_finite() && p > 1.0 {
            Ok(PValue(p))
        } else {
            Err(PError::OutOfRange(p))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Hölder conjugate `p / (p - 1)`.
    pub fn conjugate(self) -> f64 {
        self.0 / (self.0 - 1.0)
    }

    /// `p / p'`, which is exactly `p - 1`.
    pub fn ratio(self) -> f64 {
        self.0 - 1.0
    }
}

impl std::fmt::Display for PValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// `π_p = 2π / (p sin(π/p))`.
pub fn pi_p(p: PValue) -> f64 {
    let p = p.get();
    2.0 * PI / (p * (PI / p).sin())
}

/// `F_p(y) = ∫_0^y (1 - t^p)^(-1/p) dt` for `y ∈ [0, 1]`; the inverse of
/// `sin_p` on its first quarter period. `F_p(1) = π_p / 2`.
pub fn arcsin_p(p: PValue, y: f64) -> f64 {
    let y = y.clamp(0.0, 1.0);
    let pv = p.get();
    if y <= 0.5 {
        let f = |t: f64| (1.0 - t.powf(pv)).powf(-1.0 / pv);
        integrate(&f, 0.0, y, 1e-14)
    } else {
        0.5 * pi_p(p) - upper_tail(p, y)
    }
}

/// `∫_y^1 (1 - t^p)^(-1/p) dt`, computed after the substitution
/// `1 - t = s^q` with `q = p/(p-1)`, which removes the endpoint singularity.
fn upper_tail(p: PValue, y: f64) -> f64 {
    let pv = p.get();
    let q = p.conjugate();
    let s_max = (1.0 - y).powf(1.0 / q);
    let f = |s: f64| {
        if s <= 0.0 {
            // limit of q s^(q-1) (1-(1-s^q)^p)^(-1/p) as s -> 0
            return q * pv.powf(-1.0 / pv);
        }
        let w = s.powf(q);
        // 1 - (1 - w)^p without cancellation
        let g = -(pv * (-w).ln_1p()).exp_m1();
        q * s.powf(q - 1.0) * g.powf(-1.0 / pv)
    };
    integrate(&f, 0.0, s_max, 1e-14)
}

/// The p-sine.
pub fn sin_p(p: PValue, x: f64) -> f64 {
    let half = pi_p(p);
    let period = 2.0 * half;
    let mut t = x.rem_euclid(period);
    let mut sign = 1.0;
    if t >= half {
        t -= half;
        sign = -1.0;
    }
    if t > 0.5 * half {
        t = half - t;
    }
    sign * quarter_inverse(p, t)
}

/// Solves `F_p(y) = t` for `t ∈ [0, π_p/2]` with bisection-safeguarded Newton.
fn quarter_inverse(p: PValue, t: f64) -> f64 {
    let quarter = 0.5 * pi_p(p);
    if t <= 0.0 {
        return 0.0;
    }
    if t >= quarter {
        return 1.0;
    }
    let pv = p.get();
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    // sin_p(t) <= t, and for small t the two agree to high order
    let mut y = t.min(1.0);
    if y >= 1.0 {
        y = 0.5;
    }
    for _ in 0..200 {
        let r = arcsin_p(p, y) - t;
        if r > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        if r.abs() < 1e-15 || hi - lo < 1e-15 {
            break;
        }
        let slope = (1.0 - y.powf(pv)).powf(-1.0 / pv);
        let newton = y - r / slope;
        y = if newton > lo && newton < hi && slope.is_finite() {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    y
}

/// `λ_{n,p}(0, L) = (n π_p / L)^p (p - 1)`, the n-th Dirichlet eigenvalue
/// of the one-dimensional p-Laplacian on an interval of length `len`.
pub fn interval_eigenvalue(p: PValue, n: u32, len: f64) -> f64 {
    (f64::from(n) * pi_p(p) / len).powf(p.get()) * p.ratio()
}

/// `u_n(x) = L/(n π_p) sin_p(n π_p x / L)`.
pub fn interval_eigenfunction(p: PValue, n: u32, len: f64, x: f64) -> f64 {
    let k = f64::from(n) * pi_p(p) / len;
    sin_p(p, k * x) / k
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod quadrature to absolute tolerance `tol`.
pub(crate) fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, whole: (f64, f64), depth: u32) -> f64 {
        let (value, err) = whole;
        if err <= tol || depth >= 48 || (b - a) < 1e-15 * (1.0 + a.abs()) {
            return value;
        }
        let m = 0.5 * (a + b);
        let left = kronrod(f, a, m);
        let right = kronrod(f, m, b);
        recurse(f, a, m, 0.5 * tol, left, depth + 1) + recurse(f, m, b, 0.5 * tol, right, depth + 1)
    }
    recurse(f, a, b, tol, kronrod(f, a, b), 0)
}
