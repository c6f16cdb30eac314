//! Cell-exact quadrature of exponential flow kernels against data that is
//! piecewise linear between transverse nodes.
//!
//! Every integral reduces to moments int_a^b e^{-mu d(t,s)} s^k ds with
//! k <= 3 and d one of (t-s), (s-t), (s+t); the moments are assembled
//! from psi_j(z) = int_0^1 e^{zv} v^j dv evaluated stably. Below the
//! smallest node the data extends as a constant, above the largest node
//! it is zero.

use num_complex::Complex64;

use crate::grid::TGrid;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// psi_j(z) = int_0^1 e^{z v} v^j dv, j = 0..=3.
pub fn psi(j: usize, z: Complex64) -> Complex64 {
    if z.norm() <= 1.0 {
        // sum_i z^i / (i! (i + j + 1))
        let mut term = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(1.0 / (j as f64 + 1.0), 0.0);
        for i in 1..=24 {
            term *= z / i as f64;
            acc += term / (i + j + 1) as f64;
        }
        acc
    } else {
        let ez = z.exp();
        let mut p = (ez - 1.0) / z;
        for jj in 1..=j {
            p = (ez - jj as f64 * p) / z;
        }
        p
    }
}

/// Exponential orientation of the kernel relative to the target node.
#[derive(Clone, Copy, Debug)]
pub enum Orient {
    /// e^{-mu (t - s)} with s <= t.
    ToTarget(f64),
    /// e^{-mu (s - t)} with s >= t.
    FromTarget(f64),
    /// e^{-mu (s + t)}.
    Reflected(f64),
}

/// int_a^b e^{-mu dist(t, s)} s^k ds for k <= 3.
pub fn moment(mu: Complex64, orient: Orient, a: f64, b: f64, k: usize) -> Complex64 {
    debug_assert!(b >= a);
    if b <= a {
        return ZERO;
    }
    let d = b - a;
    let z = -mu * d;
    let binom = |k: usize, j: usize| -> f64 {
        match (k, j) {
            (_, 0) => 1.0,
            (k, j) if j == k => 1.0,
            (2, 1) => 2.0,
            (3, 1) | (3, 2) => 3.0,
            _ => 0.0,
        }
    };
    match orient {
        Orient::ToTarget(t) => {
            // e^{-mu(t-b)} * sum_j C(k,j) b^{k-j} (-1)^j d^{j+1} psi_j(z)
            let pre = (-mu * (t - b)).exp();
            let mut acc = ZERO;
            for j in 0..=k {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                acc += binom(k, j) * b.powi((k - j) as i32) * sign * d.powi(j as i32 + 1)
                    * psi(j, z);
            }
            pre * acc
        }
        Orient::FromTarget(t) => {
            let pre = (-mu * (a - t)).exp();
            let mut acc = ZERO;
            for j in 0..=k {
                acc += binom(k, j) * a.powi((k - j) as i32) * d.powi(j as i32 + 1) * psi(j, z);
            }
            pre * acc
        }
        Orient::Reflected(t) => {
            let pre = (-mu * (a + t)).exp();
            let mut acc = ZERO;
            for j in 0..=k {
                acc += binom(k, j) * a.powi((k - j) as i32) * d.powi(j as i32 + 1) * psi(j, z);
            }
            pre * acc
        }
    }
}

/// Unit-weight moment pair (k = 0, 1) of the oriented kernel.
pub fn weighted_moments_unit(
    mu: Complex64,
    orient: Orient,
    a: f64,
    b: f64,
) -> (Complex64, Complex64) {
    if b <= a {
        return (ZERO, ZERO);
    }
    (moment(mu, orient, a, b, 0), moment(mu, orient, a, b, 1))
}

/// Integral of the oriented kernel against a cubic polynomial in s.
pub fn poly_moment(mu: Complex64, orient: Orient, a: f64, b: f64, poly: &[Complex64; 4]) -> Complex64 {
    let mut acc = ZERO;
    for (k, c) in poly.iter().enumerate() {
        if *c != ZERO {
            acc += c * moment(mu, orient, a, b, k);
        }
    }
    acc
}

/// Piecewise-linear source description over a transverse grid: interval 0
/// is the constant extension (0, t_0], interval i >= 1 spans
/// [t_{i-1}, t_i]. Coefficients refer to f(s) = alpha + beta s.
pub struct PlSource<'a> {
    pub tgrid: &'a TGrid,
    pub data: &'a [Complex64],
}

impl<'a> PlSource<'a> {
    pub fn intervals(&self) -> usize {
        self.tgrid.len()
    }

    pub fn interval(&self, i: usize) -> (f64, f64, Complex64, Complex64) {
        let nodes = &self.tgrid.nodes;
        if i == 0 {
            (0.0, nodes[0], self.data[0], ZERO)
        } else {
            let (a, b) = (nodes[i - 1], nodes[i]);
            let slope = (self.data[i] - self.data[i - 1]) / (b - a);
            (a, b, self.data[i - 1] - slope * a, slope)
        }
    }
}

/// A linear factor p + q s restricted to a sub-interval; multiplying the
/// polynomial representation of the integrand.
pub fn mul_linear(poly: &[Complex64; 4], p: f64, q: f64) -> [Complex64; 4] {
    let mut out = [ZERO; 4];
    for k in 0..3 {
        out[k] += poly[k] * p;
        out[k + 1] = out[k + 1] + poly[k] * q;
    }
    out[3] += poly[3] * p;
    out
}

/// Node coefficients of one cell integral: the integral against the PL
/// data on [p, q] is a_coef * f(p-node) + b_coef * f(q-node).
fn cell_linear_form(
    mu: Complex64,
    orient: Orient,
    p: f64,
    q: f64,
) -> (Complex64, Complex64) {
    let m0 = moment(mu, orient, p, q, 0);
    let m1 = moment(mu, orient, p, q, 1);
    let d = q - p;
    let b = (m1 - m0 * p) / d;
    (m0 - b, b)
}

/// Per-channel data of the forward Volterra flow with kernel
/// mu e^{-mu (t - s)}: local cell forms anchored at the right node plus
/// the constant-extension weight at the first node.
pub struct ForwardCells {
    pub mu: Complex64,
    /// (a, b) of cell i (spanning nodes i-1, i), index 1..t_len.
    pub forms: Vec<(Complex64, Complex64)>,
    /// weight of f(t_0) from the constant extension over (0, t_0].
    pub ext0: Complex64,
}

pub fn forward_cells(mu: Complex64, tgrid: &TGrid) -> ForwardCells {
    let nodes = &tgrid.nodes;
    let mut forms = vec![(ZERO, ZERO)];
    for i in 1..nodes.len() {
        let (a, b) = cell_linear_form(mu, Orient::ToTarget(nodes[i]), nodes[i - 1], nodes[i]);
        forms.push((mu * a, mu * b));
    }
    let ext0 = mu * moment(mu, Orient::ToTarget(nodes[0]), 0.0, nodes[0], 0);
    ForwardCells { mu, forms, ext0 }
}

/// out[j] = int_0^{t_j} mu e^{-mu (t_j - s)} f(s) ds via the O(T) forward
/// recursion; the local cell integrals are exact for the PL data.
pub fn volterra_forward(mu: Complex64, src: &PlSource, out: &mut [Complex64]) {
    let cells = forward_cells(mu, src.tgrid);
    forward_apply(&cells, src.tgrid, src.data, out);
}

pub fn forward_apply(cells: &ForwardCells, tgrid: &TGrid, data: &[Complex64], out: &mut [Complex64]) {
    let nodes = &tgrid.nodes;
    out[0] = cells.ext0 * data[0];
    for j in 1..nodes.len() {
        let step = (-cells.mu * (nodes[j] - nodes[j - 1])).exp();
        let (a, b) = cells.forms[j];
        out[j] = step * out[j - 1] + a * data[j - 1] + b * data[j];
    }
}

/// Exact discrete adjoint of [`forward_apply`] with respect to the
/// weighted pairing sum_j w_j u_j conj(v_j): evaluate the same cell forms
/// at the conjugated eigenvalue and accumulate transposed.
pub fn forward_adjoint(
    cells_conj: &ForwardCells,
    tgrid: &TGrid,
    w: &[f64],
    g: &[Complex64],
    out: &mut [Complex64],
) {
    let nodes = &tgrid.nodes;
    let t_len = nodes.len();
    // suffix sums r[i] = sum_{j >= i} e^{-mu'(t_j - t_i)} w_j g_j
    let mut r = vec![ZERO; t_len];
    r[t_len - 1] = w[t_len - 1] * g[t_len - 1];
    for i in (0..t_len - 1).rev() {
        let step = (-cells_conj.mu * (nodes[i + 1] - nodes[i])).exp();
        r[i] = w[i] * g[i] + step * r[i + 1];
    }
    for i in 0..t_len {
        let mut acc = ZERO;
        if i == 0 {
            acc += cells_conj.ext0 * r[0];
        }
        if i >= 1 {
            acc += cells_conj.forms[i].1 * r[i];
        }
        if i + 1 < t_len {
            acc += cells_conj.forms[i + 1].0 * r[i + 1];
        }
        out[i] = acc / w[i];
    }
}

/// Per-channel data of the backward flow with kernel mu e^{-mu (s - t)}:
/// cell forms anchored at the left node (data vanishes above t_max).
pub struct BackwardCells {
    pub mu: Complex64,
    /// (a, b) of cell i (spanning nodes i, i+1), index 0..t_len-1.
    pub forms: Vec<(Complex64, Complex64)>,
}

pub fn backward_cells(mu: Complex64, tgrid: &TGrid) -> BackwardCells {
    let nodes = &tgrid.nodes;
    let mut forms = Vec::with_capacity(nodes.len().saturating_sub(1));
    for i in 0..nodes.len() - 1 {
        let (a, b) = cell_linear_form(mu, Orient::FromTarget(nodes[i]), nodes[i], nodes[i + 1]);
        forms.push((mu * a, mu * b));
    }
    BackwardCells { mu, forms }
}

/// out[j] = int_{t_j}^{t_max} mu e^{-mu (s - t_j)} f(s) ds via the O(T)
/// backward recursion.
pub fn volterra_backward(mu: Complex64, src: &PlSource, out: &mut [Complex64]) {
    let cells = backward_cells(mu, src.tgrid);
    backward_apply(&cells, src.tgrid, src.data, out);
}

pub fn backward_apply(cells: &BackwardCells, tgrid: &TGrid, data: &[Complex64], out: &mut [Complex64]) {
    let nodes = &tgrid.nodes;
    let t_len = nodes.len();
    out[t_len - 1] = ZERO;
    for j in (0..t_len - 1).rev() {
        let step = (-cells.mu * (nodes[j + 1] - nodes[j])).exp();
        let (a, b) = cells.forms[j];
        out[j] = step * out[j + 1] + a * data[j] + b * data[j + 1];
    }
}

/// Exact discrete adjoint of [`backward_apply`] in the weighted pairing.
pub fn backward_adjoint(
    cells_conj: &BackwardCells,
    tgrid: &TGrid,
    w: &[f64],
    g: &[Complex64],
    out: &mut [Complex64],
) {
    let nodes = &tgrid.nodes;
    let t_len = nodes.len();
    // prefix sums p[i] = sum_{j <= i} e^{-mu'(t_i - t_j)} w_j g_j
    let mut p = vec![ZERO; t_len];
    p[0] = w[0] * g[0];
    for i in 1..t_len {
        let step = (-cells_conj.mu * (nodes[i] - nodes[i - 1])).exp();
        p[i] = w[i] * g[i] + step * p[i - 1];
    }
    for k in 0..t_len {
        let mut acc = ZERO;
        if k < t_len - 1 {
            acc += cells_conj.forms[k].0 * p[k];
        }
        if k >= 1 {
            acc += cells_conj.forms[k - 1].1 * p[k - 1];
        }
        out[k] = acc / w[k];
    }
}

/// int_0^{t_max} w(s) e^{-mu s} f(s) ds with an optional extra linear
/// weight per sub-interval supplied by `segments` (used for the eta
/// cutoffs); `segments` yields (lo, hi, p, q) pieces of the weight.
pub fn decay_functional(
    mu: Complex64,
    src: &PlSource,
    segments: &dyn Fn(f64, f64, &mut Vec<(f64, f64, f64, f64)>),
) -> Complex64 {
    let mut acc = ZERO;
    let mut pieces = Vec::new();
    for i in 0..src.intervals() {
        let (a, b, al, be) = src.interval(i);
        pieces.clear();
        segments(a, b, &mut pieces);
        for &(lo, hi, p, q) in pieces.iter() {
            if hi <= lo {
                continue;
            }
            let poly = mul_linear(&[al, be, ZERO, ZERO], p, q);
            acc += poly_moment(mu, Orient::FromTarget(0.0), lo, hi, &poly);
        }
    }
    acc
}
