//! LPC <-> line spectral frequency conversion.
//!
//! `A(z)` is split into the symmetric `P(z) = A(z) + z^-(p+1) A(1/z)` and
//! antisymmetric `Q(z) = A(z) - z^-(p+1) A(1/z)`. After dividing out the
//! trivial roots at `z = ±1`, both are symmetric polynomials of even degree
//! and are evaluated as Chebyshev series in `x = cos ω`. Roots are bracketed on
//! a uniform grid in `ω` and refined on `A(e^{jω})` itself.

use std::f64::consts::PI;

use super::LpcModel;
use crate::error::{Error, Result};

/// Grid sizes tried in turn when bracketing roots.
const GRIDS: [usize; 3] = [1024, 65_536, 1_048_576];

/// Minimum spacing enforced on converted LSF vectors.
pub const LSF_MIN_GAP: f64 = PI / 1024.0;

/// Strictly increasing frequencies in `(0, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LsfVector {
    freqs: Vec<f64>,
}

impl LsfVector {
    pub fn new(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::Size("empty LSF vector".into()));
        }
        for (i, f) in freqs.iter().enumerate() {
            if !(f.is_finite() && *f > 0.0 && *f < PI) {
                return Err(Error::Ordering(format!("freq[{i}] = {f} outside (0, π)")));
            }
            if i > 0 && *f <= freqs[i - 1] {
                return Err(Error::Ordering(format!(
                    "freq[{i}] = {f} not above freq[{}] = {}",
                    i - 1,
                    freqs[i - 1]
                )));
            }
        }
        Ok(Self { freqs })
    }

    pub fn order(&self) -> usize {
        self.freqs.len()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.freqs
    }
}

/// Coefficients `c_0..c_p` of `A(z)` in powers of `z^-1`.
fn inverse_poly(m: &LpcModel) -> Vec<f64> {
    std::iter::once(1.0)
        .chain(m.coeffs.iter().map(|a| -a))
        .collect()
}

/// Deflated symmetric halves of `P` and `Q`, each of even degree.
fn sum_diff_polys(c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = c.len() - 1;
    let at = |k: usize| if k <= p { c[k] } else { 0.0 };
    let big_p: Vec<f64> = (0..=p + 1).map(|k| at(k) + at(p + 1 - k)).collect();
    let big_q: Vec<f64> = (0..=p + 1).map(|k| at(k) - at(p + 1 - k)).collect();
    if p.is_multiple_of(2) {
        // P / (1 + z^-1), Q / (1 - z^-1)
        let mut pd = vec![0.0; p + 1];
        let mut qd = vec![0.0; p + 1];
        for k in 0..=p {
            pd[k] = big_p[k] - if k > 0 { pd[k - 1] } else { 0.0 };
            qd[k] = big_q[k] + if k > 0 { qd[k - 1] } else { 0.0 };
        }
        (pd, qd)
    } else {
        // P keeps degree p+1, Q / (1 - z^-2)
        let mut qd = vec![0.0; p];
        for k in 0..p {
            qd[k] = big_q[k] + if k >= 2 { qd[k - 2] } else { 0.0 };
        }
        (big_p, qd)
    }
}

/// Chebyshev coefficients of `e^{jmω} S(e^{jω})` for symmetric `S` of degree `2m`.
fn chebyshev_series(s: &[f64]) -> Vec<f64> {
    let m = (s.len() - 1) / 2;
    let mut b = vec![0.0; m + 1];
    b[0] = s[m];
    for i in 1..=m {
        b[i] = 2.0 * s[m - i];
    }
    b
}

fn clenshaw(b: &[f64], x: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &c in b.iter().skip(1).rev() {
        let t = 2.0 * x * b1 - b2 + c;
        b2 = b1;
        b1 = t;
    }
    x * b1 - b2 + b[0]
}

/// `e^{j(p+1)ω/2} A(e^{jω})` from the inverse-filter coefficients `c`. Its
/// real part vanishes at the roots of `P` and its imaginary part at those of
/// `Q`. Evaluated by Horner's rule on the unit circle, it stays accurate where
/// the deflated Chebyshev series do not, near clusters of roots close to
/// `ω = 0` or `ω = π`.
fn rotated_response(c: &[f64], w: f64) -> (f64, f64) {
    // A(e^{jω}) = Σ c_k u^k with u = e^{-jω}
    let (ur, ui) = (w.cos(), -w.sin());
    let (mut re, mut im) = (0.0, 0.0);
    for &ck in c.iter().rev() {
        (re, im) = (re * ur - im * ui + ck, re * ui + im * ur);
    }
    let (rr, ri) = ((c.len() as f64 / 2.0 * w).cos(), (c.len() as f64 / 2.0 * w).sin());
    (re * rr - im * ri, re * ri + im * rr)
}

/// Root of `g` in `[lo, hi]`, where it changes sign, by false position with
/// the Illinois modification. The bracket is kept, so the result is as
/// reliable as bisection; it shrinks to adjacent floats.
fn bracketed_root(g: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (g(a), g(b));
    let mut side = 0i8;
    for _ in 0..200 {
        if fa == 0.0 {
            return a;
        }
        if fb == 0.0 {
            return b;
        }
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            return mid;
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a && c < b) {
            c = mid;
        }
        let fc = g(c);
        if (fc < 0.0) == (fa < 0.0) {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    0.5 * (a + b)
}

/// Sign changes of the series on the grid `(ω, cos ω)`, refined on `refine`
/// when it brackets the same root, otherwise on the series itself.
fn find_roots(series: &[f64], grid: &[(f64, f64)], refine: impl Fn(f64) -> f64) -> Vec<f64> {
    let f = |w: f64| clenshaw(series, w.cos());
    let mut roots = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for &(w, x) in grid {
        let v = clenshaw(series, x);
        if let Some((w0, v0)) = prev {
            if (v0 < 0.0) != (v < 0.0) {
                let bracketed = (refine(w0) < 0.0) != (refine(w) < 0.0);
                roots.push(if bracketed { bracketed_root(&refine, w0, w) } else { bracketed_root(&f, w0, w) });
            }
        }
        prev = Some((w, v));
    }
    roots
}

/// `0`, cell midpoints of `n` equal cells, and `π`, with their cosines.
fn grid_points(n: usize) -> Vec<(f64, f64)> {
    let step = PI / n as f64;
    std::iter::once(0.0)
        .chain((0..n).map(|i| (i as f64 + 0.5) * step))
        .chain(std::iter::once(PI))
        .map(|w| (w, w.cos()))
        .collect()
}

/// Converts a stable LPC model to line spectral frequencies.
pub fn lpc_to_lsf(m: &LpcModel) -> Result<LsfVector> {
    let p = m.order();
    if p == 0 {
        return Err(Error::Size("LPC order must be positive".into()));
    }
    if m.reflection_coefficients().is_none() {
        return Err(Error::Unstable("a reflection coefficient has magnitude ≥ 1".into()));
    }
    let c = inverse_poly(m);
    let (pd, qd) = sum_diff_polys(&c);
    let (ps, qs) = (chebyshev_series(&pd), chebyshev_series(&qd));
    let (np, nq) = (p.div_ceil(2), p / 2);
    let mut reason = String::new();
    // roots of a very sharp filter can share a grid cell; retry finer
    for n in GRIDS {
        let grid = grid_points(n);
        let p_roots = find_roots(&ps, &grid, |w| rotated_response(&c, w).0);
        let q_roots = find_roots(&qs, &grid, |w| rotated_response(&c, w).1);
        if (p_roots.len(), q_roots.len()) != (np, nq) {
            reason = format!(
                "found {}+{} unit-circle roots, expected {np}+{nq}",
                p_roots.len(),
                q_roots.len()
            );
            continue;
        }
        let mut freqs = Vec::with_capacity(p);
        for i in 0..np {
            freqs.push(p_roots[i]);
            if i < nq {
                freqs.push(q_roots[i]);
            }
        }
        if freqs.windows(2).all(|w| w[1] > w[0]) && freqs.iter().all(|f| *f > 0.0 && *f < PI) {
            return Ok(LsfVector { freqs });
        }
        reason = "line spectral frequencies do not interleave".into();
    }
    Err(Error::Unstable(reason))
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Rebuilds predictor coefficients from LSFs. The gain of the result is 1.
pub fn lsf_to_lpc(v: &LsfVector) -> Result<LpcModel> {
    // re-validate: LsfVector may have been built through `new` only, but keep
    // the check so hand-built vectors fail loudly
    let v = LsfVector::new(v.freqs.clone())?;
    let p = v.order();
    let mut pp = vec![1.0];
    let mut qq = vec![1.0];
    for (i, f) in v.freqs.iter().enumerate() {
        let quad = [1.0, -2.0 * f.cos(), 1.0];
        if i % 2 == 0 {
            pp = poly_mul(&pp, &quad);
        } else {
            qq = poly_mul(&qq, &quad);
        }
    }
    if p % 2 == 0 {
        pp = poly_mul(&pp, &[1.0, 1.0]);
        qq = poly_mul(&qq, &[1.0, -1.0]);
    } else {
        qq = poly_mul(&qq, &[1.0, 0.0, -1.0]);
    }
    let coeffs = (1..=p).map(|k| -0.5 * (pp[k] + qq[k])).collect();
    LpcModel::new(coeffs, 1.0)
}

/// Euclidean projection onto `{gap <= f_1, f_{i+1} - f_i >= gap, f_p <= π - gap}`.
///
/// Substituting `g_i = f_i - i·gap` turns the gap constraints into monotonicity,
/// solved by pool-adjacent-violators and then clipped to the box.
pub fn enforce_lsf_order(freqs: &[f64], gap: f64) -> Vec<f64> {
    let p = freqs.len();
    if p == 0 {
        return Vec::new();
    }
    let g: Vec<f64> = freqs
        .iter()
        .enumerate()
        .map(|(i, f)| f - i as f64 * gap)
        .collect();
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(p);
    for &v in &g {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 > s1 / n1 as f64 {
                blocks.pop();
                let last = blocks.len() - 1;
                blocks[last] = (s0 + s1, n0 + n1);
            } else {
                break;
            }
        }
    }
    let lo = gap;
    let hi = PI - gap - (p - 1) as f64 * gap;
    let mut out = Vec::with_capacity(p);
    for (s, n) in blocks {
        let mean = (s / n as f64).clamp(lo, hi.max(lo));
        out.extend(std::iter::repeat_n(mean, n));
    }
    out.iter_mut()
        .enumerate()
        .for_each(|(i, f)| *f += i as f64 * gap);
    out
}
