//! Discretization of the half-space: a periodic torus for the boundary
//! directions, a geometric grid for the transverse variable, field
//! containers, the discrete Fourier transform, and the subspace
//! H = closure(range D) with its orthogonal projection.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const MAX_BOUNDARY_DIM: usize = 3;

/// Periodic boundary grid: `points` samples per axis on a torus of side
/// `period`, carrying `m`-component systems in dimension `n`.
#[derive(Clone)]
pub struct TorusGrid {
    pub n: usize,
    pub m: usize,
    pub points: usize,
    pub period: f64,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "TorusGrid(n={}, m={}, N={}, L={})",
            self.n, self.m, self.points, self.period
        )
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.m == other.m
            && self.points == other.points
            && self.period == other.period
    }
}

impl TorusGrid {
    pub fn new(n: usize, m: usize, points: usize, period: f64) -> Result<Self> {
        if n == 0 || n > MAX_BOUNDARY_DIM {
            return Err(Error::InvalidGrid(format!("boundary dimension n = {n}")));
        }
        if m == 0 {
            return Err(Error::InvalidGrid("system size m = 0".into()));
        }
        if points < 2 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 2, got {points}"
            )));
        }
        if !(period > 0.0) {
            return Err(Error::InvalidGrid(format!("period {period}")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            m,
            points,
            period,
            fft_fwd: planner.plan_fft_forward(points),
            fft_inv: planner.plan_fft_inverse(points),
        })
    }

    /// Number of boundary sites N^n.
    pub fn sites(&self) -> usize {
        self.points.pow(self.n as u32)
    }

    /// Components per site, (1+n)m.
    pub fn comps(&self) -> usize {
        (1 + self.n) * self.m
    }

    /// Physical quadrature weight of one site, (L/N)^n.
    pub fn site_weight(&self) -> f64 {
        (self.period / self.points as f64).powi(self.n as i32)
    }

    pub fn spacing(&self) -> f64 {
        self.period / self.points as f64
    }

    /// Signed integer frequency of FFT bin `p` on one axis.
    pub fn bin_to_int(&self, p: usize) -> i64 {
        if p <= self.points / 2 - 1 {
            p as i64
        } else {
            p as i64 - self.points as i64
        }
    }

    /// Physical frequency vector of the flat bin index, written into `out[..n]`.
    pub fn xi(&self, flat: usize, out: &mut [f64]) {
        let scale = 2.0 * std::f64::consts::PI / self.period;
        let mut rest = flat;
        for axis in 0..self.n {
            let p = rest % self.points;
            rest /= self.points;
            out[axis] = scale * self.bin_to_int(p) as f64;
        }
    }

    pub fn xi_norm(&self, flat: usize) -> f64 {
        let mut buf = [0.0; MAX_BOUNDARY_DIM];
        self.xi(flat, &mut buf[..self.n]);
        buf[..self.n].iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// In-place forward/inverse DFT along each axis of a site-contiguous
    /// buffer, with unitary normalization N^(-n/2) each way.
    fn dft_axes(&self, data: &mut [Complex64], inverse: bool) {
        let nn = self.points;
        debug_assert_eq!(data.len(), self.sites());
        let fft = if inverse { &self.fft_inv } else { &self.fft_fwd };
        match self.n {
            1 => fft.process(data),
            _ => {
                let mut scratch = vec![Complex64::default(); nn];
                // number of 1-d lines per axis = sites / N
                for axis in 0..self.n {
                    let stride = nn.pow(axis as u32);
                    let lines = self.sites() / nn;
                    for line in 0..lines {
                        // decompose line index into (inner, outer) around `axis`
                        let inner = line % stride;
                        let outer = line / stride;
                        let base = outer * stride * nn + inner;
                        for (q, s) in scratch.iter_mut().enumerate() {
                            *s = data[base + q * stride];
                        }
                        fft.process(&mut scratch);
                        for (q, s) in scratch.iter().enumerate() {
                            data[base + q * stride] = *s;
                        }
                    }
                }
            }
        }
        let norm = (self.sites() as f64).sqrt().recip();
        for v in data.iter_mut() {
            *v *= norm;
        }
    }
}

/// Geometric transverse grid on [t_min, t_max]: nodes t_j = t_min * rho^j
/// together with quadrature cells bounded by geometric midpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct TGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub ratio: f64,
    pub nodes: Vec<f64>,
    cell_lo: Vec<f64>,
    cell_hi: Vec<f64>,
}

impl TGrid {
    pub fn geometric(t_min: f64, t_max: f64, count: usize) -> Result<Self> {
        if !(t_min > 0.0) || !(t_max > t_min) {
            return Err(Error::InvalidGrid(format!(
                "transverse range [{t_min}, {t_max}]"
            )));
        }
        if count < 2 {
            return Err(Error::EmptyGrid);
        }
        let ratio = (t_max / t_min).powf(1.0 / (count - 1) as f64);
        let nodes: Vec<f64> = (0..count)
            .map(|j| t_min * ratio.powi(j as i32))
            .collect();
        let mut cell_lo = Vec::with_capacity(count);
        let mut cell_hi = Vec::with_capacity(count);
        for j in 0..count {
            cell_lo.push(if j == 0 {
                t_min
            } else {
                (nodes[j - 1] * nodes[j]).sqrt()
            });
            cell_hi.push(if j == count - 1 {
                t_max
            } else {
                (nodes[j] * nodes[j + 1]).sqrt()
            });
        }
        Ok(Self {
            t_min,
            t_max,
            ratio,
            nodes,
            cell_lo,
            cell_hi,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn cell(&self, j: usize) -> (f64, f64) {
        (self.cell_lo[j], self.cell_hi[j])
    }

    /// Exact cell integral of t^alpha dt (alpha = -1 handled as dt/t).
    /// The first node also carries the mass of the constant extension
    /// over (0, t_min], matching the quadrature convention of the flow
    /// kernels; at alpha = -1 that mass diverges and the integral stays
    /// clipped at t_min.
    pub fn weight(&self, j: usize, alpha: f64) -> f64 {
        let (a, b) = self.cell(j);
        if (alpha + 1.0).abs() < 1e-9 {
            (b / a).ln()
        } else {
            let a = if j == 0 { 0.0 } else { a };
            (b.powf(alpha + 1.0) - a.powf(alpha + 1.0)) / (alpha + 1.0)
        }
    }

    /// Cell integral of t^alpha dt clipped to [lo, hi].
    pub fn weight_clipped(&self, j: usize, alpha: f64, lo: f64, hi: f64) -> f64 {
        let (a, b) = self.cell(j);
        let a = a.max(lo);
        let b = b.min(hi);
        if b <= a {
            return 0.0;
        }
        if (alpha + 1.0).abs() < 1e-14 {
            (b / a).ln()
        } else {
            (b.powf(alpha + 1.0) - a.powf(alpha + 1.0)) / (alpha + 1.0)
        }
    }
}

/// Boundary data h(x_k) in C^{(1+n)m}, site-major storage.
#[derive(Clone, Debug)]
pub struct BoundaryField {
    pub grid: TorusGrid,
    pub values: Vec<Complex64>,
    pub in_h: bool,
}

impl BoundaryField {
    pub fn zeros(grid: &TorusGrid) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![Complex64::default(); grid.sites() * grid.comps()],
            in_h: false,
        }
    }

    pub fn from_values(grid: &TorusGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.sites() * grid.comps() {
            return Err(Error::SizeMismatch);
        }
        Ok(Self {
            grid: grid.clone(),
            values,
            in_h: false,
        })
    }

    pub fn at(&self, site: usize) -> &[Complex64] {
        let c = self.grid.comps();
        &self.values[site * c..(site + 1) * c]
    }

    pub fn at_mut(&mut self, site: usize) -> &mut [Complex64] {
        let c = self.grid.comps();
        &mut self.values[site * c..(site + 1) * c]
    }

    /// Normal components (first m entries) of one site.
    pub fn normal(&self, site: usize) -> &[Complex64] {
        &self.at(site)[..self.grid.m]
    }

    /// Tangential components (last nm entries) of one site.
    pub fn tangential(&self, site: usize) -> &[Complex64] {
        &self.at(site)[self.grid.m..]
    }

    pub fn norm_l2(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.site_weight()).sqrt()
    }

    pub fn inner(&self, other: &Self) -> Complex64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b.conj())
            .sum::<Complex64>()
            * self.grid.site_weight()
    }

    pub fn scale(&mut self, c: Complex64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn axpy(&mut self, c: Complex64, other: &Self) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }
}

/// Half-space data f(t_j, x_k), slice-major over the transverse grid.
#[derive(Clone, Debug)]
pub struct HalfSpaceField {
    pub torus: TorusGrid,
    pub tgrid: TGrid,
    pub values: Vec<Complex64>,
    pub in_h: bool,
}

impl HalfSpaceField {
    pub fn zeros(torus: &TorusGrid, tgrid: &TGrid) -> Self {
        Self {
            torus: torus.clone(),
            tgrid: tgrid.clone(),
            values: vec![Complex64::default(); tgrid.len() * torus.sites() * torus.comps()],
            in_h: false,
        }
    }

    pub fn slice_len(&self) -> usize {
        self.torus.sites() * self.torus.comps()
    }

    pub fn slice(&self, j: usize) -> &[Complex64] {
        let l = self.slice_len();
        &self.values[j * l..(j + 1) * l]
    }

    pub fn slice_mut(&mut self, j: usize) -> &mut [Complex64] {
        let l = self.slice_len();
        &mut self.values[j * l..(j + 1) * l]
    }

    pub fn slice_field(&self, j: usize) -> BoundaryField {
        BoundaryField {
            grid: self.torus.clone(),
            values: self.slice(j).to_vec(),
            in_h: self.in_h,
        }
    }

    pub fn set_slice(&mut self, j: usize, h: &BoundaryField) {
        self.slice_mut(j).copy_from_slice(&h.values);
    }

    /// L2 norm of one slice in the physical boundary measure.
    pub fn slice_norm(&self, j: usize) -> f64 {
        let w = self.torus.site_weight();
        (self.slice(j).iter().map(|v| v.norm_sqr()).sum::<f64>() * w).sqrt()
    }

    pub fn scale(&mut self, c: Complex64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn axpy(&mut self, c: Complex64, other: &Self) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    /// Unweighted L2(dt dx) inner product over the grid.
    pub fn inner(&self, other: &Self) -> Complex64 {
        let mut acc = Complex64::default();
        for j in 0..self.tgrid.len() {
            let w = Complex64::new(self.tgrid.weight(j, 0.0) * self.torus.site_weight(), 0.0);
            let s: Complex64 = self
                .slice(j)
                .iter()
                .zip(other.slice(j))
                .map(|(a, b)| a * b.conj())
                .sum();
            acc += w * s;
        }
        acc
    }
}

/// Spectral coefficients of one boundary slice, frequency-major storage
/// with the same component layout as the physical field. Unitary
/// normalization: the map values -> coeffs preserves the plain l2 norm.
#[derive(Clone, Debug)]
pub struct SpectralSlice {
    pub grid: TorusGrid,
    pub coeffs: Vec<Complex64>,
}

impl SpectralSlice {
    pub fn at(&self, freq: usize) -> &[Complex64] {
        let c = self.grid.comps();
        &self.coeffs[freq * c..(freq + 1) * c]
    }

    pub fn at_mut(&mut self, freq: usize) -> &mut [Complex64] {
        let c = self.grid.comps();
        &mut self.coeffs[freq * c..(freq + 1) * c]
    }
}

/// Forward DFT of a boundary field, component by component.
pub fn dft_slice(h: &BoundaryField) -> SpectralSlice {
    let grid = &h.grid;
    let sites = grid.sites();
    let comps = grid.comps();
    let mut coeffs = vec![Complex64::default(); sites * comps];
    let mut line = vec![Complex64::default(); sites];
    for c in 0..comps {
        for k in 0..sites {
            line[k] = h.values[k * comps + c];
        }
        grid.dft_axes(&mut line, false);
        for p in 0..sites {
            coeffs[p * comps + c] = line[p];
        }
    }
    SpectralSlice {
        grid: grid.clone(),
        coeffs,
    }
}

/// Inverse DFT back to physical site values.
pub fn idft_slice(s: &SpectralSlice) -> BoundaryField {
    let grid = &s.grid;
    let sites = grid.sites();
    let comps = grid.comps();
    let mut values = vec![Complex64::default(); sites * comps];
    let mut line = vec![Complex64::default(); sites];
    for c in 0..comps {
        for p in 0..sites {
            line[p] = s.coeffs[p * comps + c];
        }
        grid.dft_axes(&mut line, true);
        for k in 0..sites {
            values[k * comps + c] = line[k];
        }
    }
    BoundaryField {
        grid: grid.clone(),
        values,
        in_h: false,
    }
}

/// Orthogonal projection of a spectral slice onto H = closure(range D):
/// per frequency xi != 0 the normal part is kept and the tangential part
/// is projected onto span{xi (x) w}; the xi = 0 mode is zeroed.
pub fn project_h_spectral(s: &mut SpectralSlice) {
    let grid = s.grid.clone();
    let n = grid.n;
    let m = grid.m;
    let mut xi = [0.0; MAX_BOUNDARY_DIM];
    for p in 0..grid.sites() {
        grid.xi(p, &mut xi[..n]);
        let norm2: f64 = xi[..n].iter().map(|x| x * x).sum();
        let vals = s.at_mut(p);
        if norm2 == 0.0 {
            for v in vals.iter_mut() {
                *v = Complex64::default();
            }
            continue;
        }
        if n == 1 {
            continue; // tangential space is the full line
        }
        for i in 0..m {
            let mut dot = Complex64::default();
            for j in 0..n {
                dot += xi[j] * vals[m + j * m + i];
            }
            dot /= norm2;
            for j in 0..n {
                vals[m + j * m + i] = xi[j] * dot;
            }
        }
    }
}

/// Orthogonal projection onto H in physical space. Output is flagged `in_h`.
pub fn project_h(h: &BoundaryField) -> BoundaryField {
    let mut s = dft_slice(h);
    project_h_spectral(&mut s);
    let mut out = idft_slice(&s);
    out.in_h = true;
    out
}

/// L2 norm of the tangential curl, computed spectrally as the
/// antisymmetrization xi_a h_b - xi_b h_a. Zero for n = 1.
pub fn curl_residual(h: &BoundaryField) -> f64 {
    let grid = &h.grid;
    let n = grid.n;
    let m = grid.m;
    if n == 1 {
        return 0.0;
    }
    let s = dft_slice(h);
    let mut xi = [0.0; MAX_BOUNDARY_DIM];
    let mut acc = 0.0;
    for p in 0..grid.sites() {
        grid.xi(p, &mut xi[..n]);
        let vals = s.at(p);
        for i in 0..m {
            for a in 0..n {
                for b in (a + 1)..n {
                    let c = xi[a] * vals[m + b * m + i] - xi[b] * vals[m + a * m + i];
                    acc += c.norm_sqr();
                }
            }
        }
    }
    (acc * grid.site_weight()).sqrt()
}

/// Mean (xi = 0 coefficient magnitude) relative to the field norm plus the
/// curl residual; used to certify membership in H.
pub fn h_membership_residual(h: &BoundaryField) -> f64 {
    let s = dft_slice(h);
    let zero_mode: f64 = s.at(0).iter().map(|v| v.norm_sqr()).sum::<f64>();
    let curl = curl_residual(h);
    let norm = h.norm_l2().max(1e-300);
    ((zero_mode * h.grid.site_weight()).sqrt() + curl) / norm
}
