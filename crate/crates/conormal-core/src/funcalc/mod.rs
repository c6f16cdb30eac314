//! Assembly of the tangential operator D and the bisectorial operator
//! D B0 on the discrete subspace H = closure(range D), its spectral
//! decomposition, and the application of holomorphic symbols b(D B0).
//!
//! For x-independent B0 the operator block-diagonalizes per frequency;
//! each block is the compression Q^H (D(xi) B0) Q to the 2m-dimensional
//! fiber of H. For x-dependent B0 (n = 1) one dense matrix over all
//! nonzero frequencies is assembled and decomposed. Ill-conditioned
//! eigenbases fall back to a Schur-form realization of the calculus.

pub mod schur;

use num_complex::Complex64;

use crate::cmat;
use crate::coeff::TransformedTensor;
use crate::error::{Error, Result};
use crate::grid::{
    dft_slice, idft_slice, BoundaryField, HalfSpaceField, SpectralSlice, TGrid, TorusGrid,
    MAX_BOUNDARY_DIM,
};
use crate::report::{FunctionalReport, GridMeta};

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Relative threshold below which an eigenvalue counts as zero.
pub const NULL_EIG_REL_TOL: f64 = 1e-10;
/// Eigenvector condition number above which the Schur fallback engages.
pub const EIGENBASIS_COND_LIMIT: f64 = 1e8;

// ---------------------------------------------------------------------
// scalar symbol calculus on the bisector
// ---------------------------------------------------------------------

/// sgn(lambda) = +1 on the right half-plane, -1 on the left.
pub fn sgn_c(z: Complex64) -> Complex64 {
    if z.re > 0.0 {
        ONE
    } else {
        -ONE
    }
}

/// |lambda| := lambda * sgn(lambda), the holomorphic modulus on the bisector.
pub fn abs_c(z: Complex64) -> Complex64 {
    if z.re > 0.0 {
        z
    } else {
        -z
    }
}

pub fn chi_plus_c(z: Complex64) -> Complex64 {
    if z.re > 0.0 {
        ONE
    } else {
        ZERO
    }
}

pub fn chi_minus_c(z: Complex64) -> Complex64 {
    if z.re > 0.0 {
        ZERO
    } else {
        ONE
    }
}

/// |lambda|^sigma via the principal power of the right-half-plane modulus.
pub fn pow_abs_c(z: Complex64, sigma: f64) -> Complex64 {
    if sigma == 0.0 {
        ONE
    } else {
        abs_c(z).powf(sigma)
    }
}

/// Scalar holomorphic symbols applied through the functional calculus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Symbol {
    Sgn,
    ChiPlus,
    ChiMinus,
    /// |lambda|^sigma, sigma >= 0 for direct application.
    AbsPow(f64),
    /// e^{-t |lambda|}, t >= 0.
    ExpDecay(f64),
    /// |lambda| e^{-|t-s| |lambda|} chi_{+/-}(lambda): the flow kernel of
    /// the singular integral at a (t, s) pair.
    FlowKernel { t: f64, s: f64, plus: bool },
    /// (t |lambda|)^sigma e^{-t |lambda|}, the square-function symbol.
    PsiSf { sigma: f64, t: f64 },
}

impl Symbol {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        match *self {
            Symbol::Sgn => sgn_c(z),
            Symbol::ChiPlus => chi_plus_c(z),
            Symbol::ChiMinus => chi_minus_c(z),
            Symbol::AbsPow(s) => pow_abs_c(z, s),
            Symbol::ExpDecay(t) => (-t * abs_c(z)).exp(),
            Symbol::FlowKernel { t, s, plus } => {
                let gate = if plus { chi_plus_c(z) } else { chi_minus_c(z) };
                if gate == ZERO {
                    return ZERO;
                }
                let tau = if plus { t - s } else { s - t };
                abs_c(z) * (-tau * abs_c(z)).exp()
            }
            Symbol::PsiSf { sigma, t } => {
                let a = abs_c(z);
                pow_abs_c(z, sigma) * t.powf(sigma) * (-t * a).exp()
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Symbol::Sgn => "sgn",
            Symbol::ChiPlus => "chi_plus",
            Symbol::ChiMinus => "chi_minus",
            Symbol::AbsPow(_) => "abs_pow",
            Symbol::ExpDecay(_) => "exp_decay",
            Symbol::FlowKernel { .. } => "flow_kernel",
            Symbol::PsiSf { .. } => "psi_sf",
        }
    }

    /// Supremum of |b| over the open sector of half-angle `mu`, sampled on
    /// the boundary rays (the maximum principle pins the sup there).
    pub fn sup_on_sector(&self, mu: f64, radius_lo: f64, radius_hi: f64) -> f64 {
        let mut sup: f64 = 0.0;
        let args = [mu, -mu, std::f64::consts::PI - mu, mu - std::f64::consts::PI];
        for &a in &args {
            for k in 0..200 {
                let r = radius_lo * (radius_hi / radius_lo).powf(k as f64 / 199.0);
                let z = r * Complex64::new(a.cos(), a.sin());
                sup = sup.max(self.eval(z).norm());
            }
        }
        sup
    }
}

// ---------------------------------------------------------------------
// the tangential operator D
// ---------------------------------------------------------------------

/// The self-adjoint first-order tangential operator, realized as its
/// per-frequency symbol matrices [[0, i xi^T (x)], [-i xi (x), 0]].
#[derive(Clone, Debug)]
pub struct TangentialD {
    pub torus: TorusGrid,
}

impl TangentialD {
    pub fn new(torus: &TorusGrid) -> Self {
        Self {
            torus: torus.clone(),
        }
    }

    /// Full symbol matrix at a flat frequency index, row-major comps x comps.
    pub fn symbol_matrix(&self, flat: usize) -> Vec<Complex64> {
        let n = self.torus.n;
        let m = self.torus.m;
        let comps = self.torus.comps();
        let mut xi = [0.0f64; MAX_BOUNDARY_DIM];
        self.torus.xi(flat, &mut xi[..n]);
        let mut out = vec![ZERO; comps * comps];
        for j in 0..n {
            for i in 0..m {
                // (D f)_perp,i += i xi_j f_par(j,i);  (D f)_par(j,i) = -i xi_j f_perp,i
                out[i * comps + (m + j * m + i)] = Complex64::new(0.0, xi[j]);
                out[(m + j * m + i) * comps + i] = Complex64::new(0.0, -xi[j]);
            }
        }
        out
    }
}

// ---------------------------------------------------------------------
// spectral decomposition of D B0 on H
// ---------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum BlockForm {
    /// Diagonalized: M = V diag(vals) V^{-1} in the block coordinates.
    Eigen {
        v: Vec<Complex64>,
        vinv: Vec<Complex64>,
    },
    /// Schur fallback: M = Q T Q^H with T upper triangular.
    Schur {
        q: Vec<Complex64>,
        tri: Vec<Complex64>,
    },
}

#[derive(Clone, Debug)]
pub struct Block {
    /// Start of this block inside the H coordinate vector.
    pub offset: usize,
    pub dim: usize,
    /// Eigenvalues (diagonal of T in Schur form).
    pub vals: Vec<Complex64>,
    /// The compressed operator matrix in block coordinates.
    pub mat: Vec<Complex64>,
    pub form: BlockForm,
    pub cond: f64,
    /// Gram matrix V^H V for norm evaluation in channel coordinates
    /// (identity for Schur blocks).
    pub gram: Vec<Complex64>,
}

impl Block {
    pub fn is_eigen(&self) -> bool {
        matches!(self.form, BlockForm::Eigen { .. })
    }

    /// Coordinates -> channel representation (eigen coefficients, or the
    /// Schur basis).
    pub fn to_channels(&self, u: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.dim];
        match &self.form {
            BlockForm::Eigen { vinv, .. } => cmat::mat_vec(vinv, u, &mut out, self.dim, self.dim),
            BlockForm::Schur { q, .. } => cmat::mat_vec_adj(q, u, &mut out, self.dim, self.dim),
        }
        out
    }

    pub fn from_channels(&self, c: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.dim];
        match &self.form {
            BlockForm::Eigen { v, .. } => cmat::mat_vec(v, c, &mut out, self.dim, self.dim),
            BlockForm::Schur { q, .. } => cmat::mat_vec(q, c, &mut out, self.dim, self.dim),
        }
        out
    }

    /// Matrix of f(M) in block coordinates.
    pub fn matrix_fn(&self, f: &dyn Fn(Complex64) -> Complex64) -> Result<Vec<Complex64>> {
        match &self.form {
            BlockForm::Eigen { v, vinv } => {
                let mut vd = v.clone();
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        vd[i * self.dim + j] *= f(self.vals[j]);
                    }
                }
                Ok(cmat::mat_mul(&vd, vinv, self.dim, self.dim, self.dim))
            }
            BlockForm::Schur { q, tri } => {
                let ft = schur::triangular_fn(tri, self.dim, f)?;
                let qf = cmat::mat_mul(q, &ft, self.dim, self.dim, self.dim);
                let mut qh = vec![ZERO; self.dim * self.dim];
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        qh[i * self.dim + j] = q[j * self.dim + i].conj();
                    }
                }
                Ok(cmat::mat_mul(&qf, &qh, self.dim, self.dim, self.dim))
            }
        }
    }

    /// Apply f(M) to a coordinate vector.
    pub fn apply_fn(&self, f: &dyn Fn(Complex64) -> Complex64, u: &[Complex64]) -> Result<Vec<Complex64>> {
        match &self.form {
            BlockForm::Eigen { .. } => {
                let mut c = self.to_channels(u);
                for (ck, lam) in c.iter_mut().zip(&self.vals) {
                    *ck *= f(*lam);
                }
                Ok(self.from_channels(&c))
            }
            BlockForm::Schur { .. } => {
                let m = self.matrix_fn(f)?;
                let mut out = vec![ZERO; self.dim];
                cmat::mat_vec(&m, u, &mut out, self.dim, self.dim);
                Ok(out)
            }
        }
    }

    pub fn spectral_radius(&self) -> f64 {
        self.vals.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Oblique-projection data at one frequency: H^perp basis columns and the
/// correction map removing the N(D B0) component.
#[derive(Clone, Debug)]
struct ObliqueFreq {
    qperp: Vec<Complex64>,
    corr: Vec<Complex64>,
    k: usize,
}

/// Spectral decomposition of D B0 restricted to the discrete H.
#[derive(Clone, Debug)]
pub struct SpectralDecomp {
    pub torus: TorusGrid,
    pub b0: TransformedTensor,
    /// Flat frequency indices carrying H fibers (all nonzero frequencies).
    pub h_freqs: Vec<usize>,
    /// Orthonormal fiber basis per entry of `h_freqs` (comps x fiber_dim).
    q_basis: Vec<Vec<Complex64>>,
    oblique: Option<Vec<ObliqueFreq>>,
    pub blocks: Vec<Block>,
    /// Measured bisector half-angle of the spectrum.
    pub omega: f64,
    pub schur_mode: bool,
    pub dense: bool,
    pub is_adjoint: bool,
}

impl SpectralDecomp {
    pub fn fiber_dim(&self) -> usize {
        2 * self.torus.m
    }

    pub fn h_dim(&self) -> usize {
        self.h_freqs.len() * self.fiber_dim()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// All eigenvalues across blocks.
    pub fn eigenvalues(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.blocks.iter().flat_map(|b| b.vals.iter().copied())
    }

    pub fn spectral_radius(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.spectral_radius())
            .fold(0.0, f64::max)
    }

    pub fn min_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues()
            .map(|z| z.norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Sector parameter used wherever a holomorphic domain is needed.
    pub fn mu(&self) -> f64 {
        (self.omega + std::f64::consts::FRAC_PI_2) / 2.0
    }

    /// Project a spectral slice onto H (along the null space of D B0) and
    /// return the H coordinates together with the removed relative mass.
    pub fn spectral_to_h(&self, s: &SpectralSlice) -> (Vec<Complex64>, f64) {
        let comps = self.torus.comps();
        let fd = self.fiber_dim();
        let mut coords = vec![ZERO; self.h_dim()];
        let mut dropped = 0.0f64;
        let mut total = 0.0f64;
        for v in &s.coeffs {
            total += v.norm_sqr();
        }
        for (slot, &p) in self.h_freqs.iter().enumerate() {
            let v = s.at(p);
            let mut vh = v.to_vec();
            if let Some(obl) = &self.oblique {
                let o = &obl[slot];
                if o.k > 0 {
                    let mut w = vec![ZERO; o.k];
                    cmat::mat_vec_adj(&o.qperp, &vh, &mut w, comps, o.k);
                    let mut corr = vec![ZERO; comps];
                    cmat::mat_vec(&o.corr, &w, &mut corr, comps, o.k);
                    for (a, b) in vh.iter_mut().zip(&corr) {
                        *a -= b;
                    }
                }
            }
            let q = &self.q_basis[slot];
            let u = &mut coords[slot * fd..(slot + 1) * fd];
            cmat::mat_vec_adj(q, &vh, u, comps, fd);
            // dropped mass: original minus the H reconstruction
            let mut rec = vec![ZERO; comps];
            cmat::mat_vec(q, u, &mut rec, comps, fd);
            for (orig, r) in v.iter().zip(&rec) {
                dropped += (orig - r).norm_sqr();
            }
        }
        // the zero mode is dropped entirely
        let zero_slot: f64 = s.at(0).iter().map(|v| v.norm_sqr()).sum();
        dropped += zero_slot;
        let rel = if total > 0.0 {
            (dropped / total).sqrt()
        } else {
            0.0
        };
        (coords, rel)
    }

    pub fn h_to_spectral(&self, coords: &[Complex64]) -> SpectralSlice {
        let comps = self.torus.comps();
        let fd = self.fiber_dim();
        let mut s = SpectralSlice {
            grid: self.torus.clone(),
            coeffs: vec![ZERO; self.torus.sites() * comps],
        };
        for (slot, &p) in self.h_freqs.iter().enumerate() {
            let q = &self.q_basis[slot];
            let u = &coords[slot * fd..(slot + 1) * fd];
            let mut rec = vec![ZERO; comps];
            cmat::mat_vec(q, u, &mut rec, comps, fd);
            s.at_mut(p).copy_from_slice(&rec);
        }
        s
    }

    pub fn boundary_to_h(&self, h: &BoundaryField) -> (Vec<Complex64>, f64) {
        self.spectral_to_h(&dft_slice(h))
    }

    pub fn h_to_boundary(&self, coords: &[Complex64]) -> BoundaryField {
        let mut out = idft_slice(&self.h_to_spectral(coords));
        out.in_h = true;
        out
    }

    /// Projection onto H along N(D B0), as a boundary-field map.
    pub fn spectral_project(&self, h: &BoundaryField) -> BoundaryField {
        let (coords, _) = self.boundary_to_h(h);
        self.h_to_boundary(&coords)
    }

    pub fn spectral_project_field(&self, f: &HalfSpaceField) -> HalfSpaceField {
        let mut out = f.clone();
        for j in 0..f.tgrid.len() {
            let slice = f.slice_field(j);
            let proj = self.spectral_project(&slice);
            out.set_slice(j, &proj);
        }
        out.in_h = true;
        out
    }

    /// H coordinates of every t-slice, plus the largest relative mass
    /// removed by the projection.
    pub fn field_to_h_series(&self, f: &HalfSpaceField) -> (Vec<Vec<Complex64>>, f64) {
        let mut worst = 0.0f64;
        let mut series = Vec::with_capacity(f.tgrid.len());
        for j in 0..f.tgrid.len() {
            let (coords, rel) = self.boundary_to_h(&f.slice_field(j));
            worst = worst.max(rel);
            series.push(coords);
        }
        (series, worst)
    }

    pub fn series_to_field(&self, tgrid: &TGrid, series: &[Vec<Complex64>]) -> HalfSpaceField {
        let mut out = HalfSpaceField::zeros(&self.torus, tgrid);
        for (j, coords) in series.iter().enumerate() {
            let slice = self.h_to_boundary(coords);
            out.set_slice(j, &slice);
        }
        out.in_h = true;
        out
    }

    /// Apply a scalar holomorphic function through the calculus.
    pub fn apply_fn_boundary(
        &self,
        h: &BoundaryField,
        f: &dyn Fn(Complex64) -> Complex64,
    ) -> Result<BoundaryField> {
        let (coords, _rel) = self.boundary_to_h(h);
        let out = self.apply_fn_coords(&coords, f)?;
        Ok(self.h_to_boundary(&out))
    }

    pub fn apply_fn_coords(
        &self,
        coords: &[Complex64],
        f: &dyn Fn(Complex64) -> Complex64,
    ) -> Result<Vec<Complex64>> {
        let mut out = vec![ZERO; coords.len()];
        for b in &self.blocks {
            let u = &coords[b.offset..b.offset + b.dim];
            let v = b.apply_fn(f, u)?;
            out[b.offset..b.offset + b.dim].copy_from_slice(&v);
        }
        Ok(out)
    }

    /// Physical L2 norm of an H coordinate vector.
    pub fn coords_norm(&self, coords: &[Complex64]) -> f64 {
        (coords.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.torus.site_weight()).sqrt()
    }
}

/// Orthonormal basis of the H fiber at a frequency: normal unit vectors
/// followed by xi-aligned tangential vectors.
fn fiber_basis(torus: &TorusGrid, flat: usize) -> Vec<Complex64> {
    let n = torus.n;
    let m = torus.m;
    let comps = torus.comps();
    let fd = 2 * m;
    let mut xi = [0.0f64; MAX_BOUNDARY_DIM];
    torus.xi(flat, &mut xi[..n]);
    let norm = xi[..n].iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut q = vec![ZERO; comps * fd];
    for i in 0..m {
        q[i * fd + i] = ONE; // normal basis vector e_i
        for j in 0..n {
            q[(m + j * m + i) * fd + (m + i)] = Complex64::new(xi[j] / norm, 0.0);
        }
    }
    q
}

/// Orthonormal tangential vectors perpendicular to xi (n >= 2).
fn perp_directions(xi: &[f64]) -> Vec<Vec<f64>> {
    let n = xi.len();
    let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let hat: Vec<f64> = xi.iter().map(|x| x / norm).collect();
    match n {
        2 => vec![vec![-hat[1], hat[0]]],
        3 => {
            // least-aligned axis, then a cross product
            let k = (0..3)
                .min_by(|&a, &b| hat[a].abs().partial_cmp(&hat[b].abs()).unwrap())
                .unwrap();
            let mut w1 = vec![0.0; 3];
            w1[k] = 1.0;
            let dot: f64 = w1.iter().zip(&hat).map(|(a, b)| a * b).sum();
            for i in 0..3 {
                w1[i] -= dot * hat[i];
            }
            let n1 = w1.iter().map(|x| x * x).sum::<f64>().sqrt();
            for v in &mut w1 {
                *v /= n1;
            }
            let w2 = vec![
                hat[1] * w1[2] - hat[2] * w1[1],
                hat[2] * w1[0] - hat[0] * w1[2],
                hat[0] * w1[1] - hat[1] * w1[0],
            ];
            vec![w1, w2]
        }
        _ => Vec::new(),
    }
}

fn angle_to_real_axis(z: Complex64) -> f64 {
    let a = z.arg().abs();
    a.min(std::f64::consts::PI - a)
}

/// Build one block from a compressed matrix, with validation and fallback.
fn build_block(mat: Vec<Complex64>, dim: usize, offset: usize) -> Result<(Block, f64)> {
    let eig = cmat::eigen(&mat, dim)?;
    let radius = eig.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for z in &eig.values {
        if z.norm() < NULL_EIG_REL_TOL * radius.max(1e-300) {
            return Err(Error::NullEigenvalue {
                val: z.norm(),
                radius,
            });
        }
    }
    let mut omega: f64 = 0.0;
    for z in &eig.values {
        omega = omega.max(angle_to_real_axis(*z));
    }
    if omega >= std::f64::consts::FRAC_PI_2 - 1e-6 {
        return Err(Error::SectorViolation { omega });
    }
    if eig.cond <= EIGENBASIS_COND_LIMIT {
        let gram = {
            let mut g = vec![ZERO; dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    let mut acc = ZERO;
                    for k in 0..dim {
                        acc += eig.vectors[k * dim + i].conj() * eig.vectors[k * dim + j];
                    }
                    g[i * dim + j] = acc;
                }
            }
            g
        };
        Ok((
            Block {
                offset,
                dim,
                vals: eig.values,
                mat,
                form: BlockForm::Eigen {
                    v: eig.vectors,
                    vinv: eig.inv_vectors,
                },
                cond: eig.cond,
                gram,
            },
            omega,
        ))
    } else {
        let (q, tri) = schur::complex_schur(&mat, dim)?;
        let vals: Vec<Complex64> = (0..dim).map(|i| tri[i * dim + i]).collect();
        Ok((
            Block {
                offset,
                dim,
                vals,
                mat,
                form: BlockForm::Schur { q, tri },
                cond: eig.cond,
                gram: cmat::identity(dim),
            },
            omega,
        ))
    }
}

struct FiberScaffold {
    h_freqs: Vec<usize>,
    q_basis: Vec<Vec<Complex64>>,
    oblique: Option<Vec<ObliqueFreq>>,
    x_indep: bool,
}

/// The frequency fibers of H and the oblique-projection data, all
/// derivable from the torus and B0 alone.
fn build_fiber_scaffold(torus: &TorusGrid, b0: &TransformedTensor) -> Result<FiberScaffold> {
    let comps = torus.comps();
    let m = torus.m;
    let h_freqs: Vec<usize> = (1..torus.sites()).collect();
    let q_basis: Vec<Vec<Complex64>> = h_freqs.iter().map(|&p| fiber_basis(torus, p)).collect();
    let scale: f64 = b0
        .tensor
        .values
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let x_indep = b0.x_independent(1e-12 * scale.max(1.0));
    let mut oblique = None;
    if x_indep && torus.n >= 2 {
        let b0mat = b0.sample(0, 0).to_vec();
        let b0inv = cmat::inverse(&b0mat, comps).map_err(|_| Error::SingularB0 { site: 0 })?;
        let mut data = Vec::with_capacity(h_freqs.len());
        let mut xi = [0.0f64; MAX_BOUNDARY_DIM];
        for &p in &h_freqs {
            torus.xi(p, &mut xi[..torus.n]);
            let dirs = perp_directions(&xi[..torus.n]);
            let k = dirs.len() * m;
            let mut qperp = vec![ZERO; comps * k];
            for (b, w) in dirs.iter().enumerate() {
                for i in 0..m {
                    for (j, wj) in w.iter().enumerate() {
                        qperp[(m + j * m + i) * k + (b * m + i)] = Complex64::new(*wj, 0.0);
                    }
                }
            }
            // corr = B0^{-1} Qperp (Qperp^H B0^{-1} Qperp)^{-1}
            let b0inv_qp = cmat::mat_mul(&b0inv, &qperp, comps, comps, k);
            let mut small = vec![ZERO; k * k];
            for i in 0..k {
                for j in 0..k {
                    let mut acc = ZERO;
                    for r in 0..comps {
                        acc += qperp[r * k + i].conj() * b0inv_qp[r * k + j];
                    }
                    small[i * k + j] = acc;
                }
            }
            let small_inv = cmat::inverse(&small, k)?;
            let corr = cmat::mat_mul(&b0inv_qp, &small_inv, comps, k, k);
            data.push(ObliqueFreq { qperp, corr, k });
        }
        oblique = Some(data);
    }
    Ok(FiberScaffold {
        h_freqs,
        q_basis,
        oblique,
        x_indep,
    })
}

/// Reattach saved blocks to a freshly built fiber scaffold (the cache
/// load path); the blocks must match the scaffold dimensions.
pub(crate) fn rebuild_from_blocks(
    torus: &TorusGrid,
    b0: &TransformedTensor,
    blocks: Vec<Block>,
    dense: bool,
    is_adjoint: bool,
) -> Result<SpectralDecomp> {
    let scaffold = build_fiber_scaffold(torus, b0)?;
    let mut omega: f64 = 0.0;
    let mut schur_mode = false;
    for b in &blocks {
        for z in &b.vals {
            omega = omega.max(angle_to_real_axis(*z));
        }
        schur_mode |= !b.is_eigen();
    }
    Ok(SpectralDecomp {
        torus: torus.clone(),
        b0: b0.clone(),
        h_freqs: scaffold.h_freqs,
        q_basis: scaffold.q_basis,
        oblique: if is_adjoint { None } else { scaffold.oblique },
        blocks,
        omega,
        schur_mode,
        dense,
        is_adjoint,
    })
}

/// Assemble and decompose D B0 restricted to H.
pub fn assemble_db0(d: &TangentialD, b0: &TransformedTensor) -> Result<SpectralDecomp> {
    let torus = &d.torus;
    if !b0.t_independent() {
        return Err(Error::DimensionUnsupported(
            "B0 must be t-independent for the calculus",
        ));
    }
    if b0.tensor.torus != *torus {
        return Err(Error::SizeMismatch);
    }
    let comps = torus.comps();
    let m = torus.m;
    let fd = 2 * m;
    let FiberScaffold {
        h_freqs,
        q_basis,
        oblique,
        x_indep,
    } = build_fiber_scaffold(torus, b0)?;

    if x_indep {
        let b0mat = b0.sample(0, 0).to_vec();
        let mut blocks = Vec::with_capacity(h_freqs.len());
        let mut omega: f64 = 0.0;
        let mut schur_mode = false;
        for (slot, &p) in h_freqs.iter().enumerate() {
            let dsym = d.symbol_matrix(p);
            let a = cmat::mat_mul(&dsym, &b0mat, comps, comps, comps);
            let q = &q_basis[slot];
            // M = Q^H A Q
            let aq = cmat::mat_mul(&a, q, comps, comps, fd);
            let mut mmat = vec![ZERO; fd * fd];
            for i in 0..fd {
                for j in 0..fd {
                    let mut acc = ZERO;
                    for k in 0..comps {
                        acc += q[k * fd + i].conj() * aq[k * fd + j];
                    }
                    mmat[i * fd + j] = acc;
                }
            }
            let (block, w) = build_block(mmat, fd, slot * fd)?;
            omega = omega.max(w);
            schur_mode |= !block.is_eigen();
            blocks.push(block);
        }
        Ok(SpectralDecomp {
            torus: torus.clone(),
            b0: b0.clone(),
            h_freqs,
            q_basis,
            oblique,
            blocks,
            omega,
            schur_mode,
            dense: false,
            is_adjoint: false,
        })
    } else {
        if torus.n != 1 {
            return Err(Error::DimensionUnsupported(
                "x-dependent B0 is supported only for n = 1",
            ));
        }
        // dense assembly over all nonzero frequencies
        let dim = h_freqs.len() * fd;
        let mut dense = vec![ZERO; dim * dim];
        let mut scratch = SpectralSlice {
            grid: torus.clone(),
            coeffs: vec![ZERO; torus.sites() * comps],
        };
        let mut tmp = vec![ZERO; comps];
        for (slot, &p) in h_freqs.iter().enumerate() {
            let q = &q_basis[slot];
            for cidx in 0..fd {
                // basis field: Q e_c at frequency p
                for v in scratch.coeffs.iter_mut() {
                    *v = ZERO;
                }
                for r in 0..comps {
                    scratch.at_mut(p)[r] = q[r * fd + cidx];
                }
                let phys = idft_slice(&scratch);
                // pointwise B0
                let mut bphys = phys.clone();
                for site in 0..torus.sites() {
                    cmat::mat_vec(b0.sample(0, site), phys.at(site), &mut tmp, comps, comps);
                    bphys.at_mut(site).copy_from_slice(&tmp);
                }
                let bspec = dft_slice(&bphys);
                // apply the D symbol per frequency and compress
                let col = slot * fd + cidx;
                for (slot2, &p2) in h_freqs.iter().enumerate() {
                    let dsym = d.symbol_matrix(p2);
                    let mut dv = vec![ZERO; comps];
                    cmat::mat_vec(&dsym, bspec.at(p2), &mut dv, comps, comps);
                    let q2 = &q_basis[slot2];
                    let mut u = vec![ZERO; fd];
                    cmat::mat_vec_adj(q2, &dv, &mut u, comps, fd);
                    for r in 0..fd {
                        dense[(slot2 * fd + r) * dim + col] = u[r];
                    }
                }
            }
        }
        let (block, omega) = build_block(dense, dim, 0)?;
        let schur_mode = !block.is_eigen();
        Ok(SpectralDecomp {
            torus: torus.clone(),
            b0: b0.clone(),
            h_freqs,
            q_basis,
            oblique: None,
            blocks: vec![block],
            omega,
            schur_mode,
            dense: true,
            is_adjoint: false,
        })
    }
}

/// Realization of the adjoint operator B0^* D compressed to H: block
/// matrices are conjugate-transposed, eigen data swaps left and right
/// eigenvectors. Valid for inputs in H.
pub fn adjoint_decomposition(dec: &SpectralDecomp) -> SpectralDecomp {
    let mut out = dec.clone();
    out.is_adjoint = !dec.is_adjoint;
    out.oblique = None;
    for b in &mut out.blocks {
        let dim = b.dim;
        let mut mat_h = vec![ZERO; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                mat_h[i * dim + j] = b.mat[j * dim + i].conj();
            }
        }
        b.mat = mat_h;
        b.vals = b.vals.iter().map(|z| z.conj()).collect();
        match &b.form {
            BlockForm::Eigen { v, vinv } => {
                // (V D V^{-1})^H = (V^{-1})^H D^H V^H
                let mut v_new = vec![ZERO; dim * dim];
                let mut vinv_new = vec![ZERO; dim * dim];
                for i in 0..dim {
                    for j in 0..dim {
                        v_new[i * dim + j] = vinv[j * dim + i].conj();
                        vinv_new[i * dim + j] = v[j * dim + i].conj();
                    }
                }
                let mut gram = vec![ZERO; dim * dim];
                for i in 0..dim {
                    for j in 0..dim {
                        let mut acc = ZERO;
                        for k in 0..dim {
                            acc += v_new[k * dim + i].conj() * v_new[k * dim + j];
                        }
                        gram[i * dim + j] = acc;
                    }
                }
                b.gram = gram;
                b.form = BlockForm::Eigen {
                    v: v_new,
                    vinv: vinv_new,
                };
            }
            BlockForm::Schur { q, tri } => {
                // (Q T Q^H)^H = (QJ)(J T^H J)(QJ)^H with J the reversal
                let mut q_new = vec![ZERO; dim * dim];
                let mut t_new = vec![ZERO; dim * dim];
                for i in 0..dim {
                    for j in 0..dim {
                        q_new[i * dim + j] = q[i * dim + (dim - 1 - j)];
                        t_new[i * dim + j] = tri[(dim - 1 - j) * dim + (dim - 1 - i)].conj();
                    }
                }
                b.form = BlockForm::Schur { q: q_new, tri: t_new };
            }
        }
    }
    out
}

/// Apply a holomorphic symbol b(D B0) to boundary data. Data outside H is
/// projected first (the calculus annihilates the complementary part).
pub fn apply_symbol(dec: &SpectralDecomp, sym: &Symbol, h: &BoundaryField) -> Result<BoundaryField> {
    if let Symbol::AbsPow(s) = sym {
        if *s < 0.0 {
            return Err(Error::SymbolUndefinedAtEigenvalue {
                symbol: "abs_pow with negative exponent",
                lambda: "direct application is restricted to sigma >= 0".into(),
            });
        }
    }
    dec.apply_fn_boundary(h, &|z| sym.eval(z))
}

/// |D B0|^sigma for any real sigma; finite on H because the spectrum
/// stays away from zero. Negative powers appear inside composite trace
/// and slab formulas.
pub fn apply_lambda_power(dec: &SpectralDecomp, sigma: f64, h: &BoundaryField) -> Result<BoundaryField> {
    dec.apply_fn_boundary(h, &|z| pow_abs_c(z, sigma))
}

/// Sample a t-dependent scalar profile of the spectrum over a transverse
/// grid: out(t_j) = profile(., t_j)(D B0) h.
pub fn apply_profile(
    dec: &SpectralDecomp,
    h: &BoundaryField,
    tgrid: &TGrid,
    profile: &dyn Fn(Complex64, f64) -> Complex64,
) -> Result<HalfSpaceField> {
    let (coords, _rel) = dec.boundary_to_h(h);
    let mut out = HalfSpaceField::zeros(&dec.torus, tgrid);
    let mut slice_coords = vec![ZERO; coords.len()];
    for (j, &t) in tgrid.nodes.iter().enumerate() {
        for b in &dec.blocks {
            let u = &coords[b.offset..b.offset + b.dim];
            let v = b.apply_fn(&|z| profile(z, t), u)?;
            slice_coords[b.offset..b.offset + b.dim].copy_from_slice(&v);
        }
        let slice = dec.h_to_boundary(&slice_coords);
        out.set_slice(j, &slice);
    }
    out.in_h = true;
    Ok(out)
}

fn op_norm_dev(a: &[Complex64], b: &[Complex64], dim: usize) -> f64 {
    let diff: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    cmat::op_norm(&diff, dim, dim)
}

/// Identity suite for the discrete calculus; deviations are reported per
/// identity, the headline value is the worst core-identity deviation.
pub fn verify_calculus(dec: &SpectralDecomp) -> Result<FunctionalReport> {
    let mut dev_sgn: f64 = 0.0;
    let mut dev_chi_sum: f64 = 0.0;
    let mut dev_chi_idem: f64 = 0.0;
    let mut dev_chi_prod: f64 = 0.0;
    let mut dev_semigroup: f64 = 0.0;
    let mut dev_commute: f64 = 0.0;
    let mut dev_reconstruct: f64 = 0.0;
    let mut dev_homomorphism: f64 = 0.0;
    let mut lambda_angle: f64 = 0.0;
    let mut resolvent_sup: f64 = 0.0;
    let mut calc_bound: f64 = 0.0;

    let rad_lo = dec.min_abs_eigenvalue();
    let rad_hi = dec.spectral_radius();

    for b in &dec.blocks {
        let dim = b.dim;
        let id = cmat::identity(dim);
        let sgn = b.matrix_fn(&sgn_c)?;
        let chip = b.matrix_fn(&chi_plus_c)?;
        let chim = b.matrix_fn(&chi_minus_c)?;
        let scale = cmat::op_norm(&b.mat, dim, dim).max(1e-300);

        let sgn2 = cmat::mat_mul(&sgn, &sgn, dim, dim, dim);
        dev_sgn = dev_sgn.max(op_norm_dev(&sgn2, &id, dim));

        let mut chsum = chip.clone();
        for (a, c) in chsum.iter_mut().zip(&chim) {
            *a += c;
        }
        dev_chi_sum = dev_chi_sum.max(op_norm_dev(&chsum, &id, dim));

        let chip2 = cmat::mat_mul(&chip, &chip, dim, dim, dim);
        let chim2 = cmat::mat_mul(&chim, &chim, dim, dim, dim);
        dev_chi_idem = dev_chi_idem
            .max(op_norm_dev(&chip2, &chip, dim))
            .max(op_norm_dev(&chim2, &chim, dim));
        let prod = cmat::mat_mul(&chip, &chim, dim, dim, dim);
        dev_chi_prod = dev_chi_prod.max(cmat::op_norm(&prod, dim, dim));

        // Lambda = M sgn(M): right half-sector spectrum, commutes with chi+-
        let lambda = cmat::mat_mul(&b.mat, &sgn, dim, dim, dim);
        for z in cmat::eigen(&lambda, dim)?.values {
            lambda_angle = lambda_angle.max(z.arg().abs());
        }
        let lc = cmat::mat_mul(&lambda, &chip, dim, dim, dim);
        let cl = cmat::mat_mul(&chip, &lambda, dim, dim, dim);
        dev_commute = dev_commute.max(op_norm_dev(&lc, &cl, dim) / scale);

        // semigroup law at two time pairs scaled to the block spectrum
        let rho = b.spectral_radius().max(1e-300);
        for (s, t) in [(0.4 / rho, 0.9 / rho), (1.5 / rho, 0.2 / rho)] {
            let es = b.matrix_fn(&|z| (-s * abs_c(z)).exp())?;
            let et = b.matrix_fn(&|z| (-t * abs_c(z)).exp())?;
            let est = b.matrix_fn(&|z| (-(s + t) * abs_c(z)).exp())?;
            let prod = cmat::mat_mul(&es, &et, dim, dim, dim);
            dev_semigroup = dev_semigroup.max(op_norm_dev(&prod, &est, dim));
        }

        // reconstruction through the stored factorization
        let rec = b.matrix_fn(&|z| z)?;
        dev_reconstruct = dev_reconstruct.max(op_norm_dev(&rec, &b.mat, dim) / scale);

        // multiplicativity on a symbol pair
        let t0 = 1.0 / rho;
        let b1 = Symbol::ExpDecay(t0);
        let b2 = Symbol::Sgn;
        let m1 = b.matrix_fn(&|z| b1.eval(z))?;
        let m2 = b.matrix_fn(&|z| b2.eval(z))?;
        let m12 = b.matrix_fn(&|z| b1.eval(z) * b2.eval(z))?;
        let prod = cmat::mat_mul(&m1, &m2, dim, dim, dim);
        dev_homomorphism = dev_homomorphism.max(op_norm_dev(&prod, &m12, dim));

        // resolvent sups over dyadic tau
        for k in (-20..=20).step_by(2) {
            let tau = (2.0f64).powi(k);
            let mut res = b.mat.clone();
            for v in res.iter_mut() {
                *v *= Complex64::new(0.0, tau);
            }
            for i in 0..dim {
                res[i * dim + i] += ONE;
            }
            let svs = cmat::singular_values(&res, dim, dim)?;
            let smin = svs[dim - 1];
            if smin > 0.0 {
                resolvent_sup = resolvent_sup.max(1.0 / smin);
            }
        }

        // measured calculus constant over the bounded symbol set
        let mu = dec.mu();
        for sym in [
            Symbol::Sgn,
            Symbol::ChiPlus,
            Symbol::ChiMinus,
            Symbol::ExpDecay(t0),
            Symbol::PsiSf { sigma: 0.5, t: t0 },
        ] {
            let msym = b.matrix_fn(&|z| sym.eval(z))?;
            let sup = sym.sup_on_sector(mu, rad_lo.max(1e-12), rad_hi.max(1.0));
            if sup > 0.0 {
                calc_bound = calc_bound.max(cmat::op_norm(&msym, dim, dim) / sup);
            }
        }
    }

    let core_max = dev_sgn
        .max(dev_chi_sum)
        .max(dev_chi_idem)
        .max(dev_chi_prod)
        .max(dev_semigroup)
        .max(dev_commute)
        .max(dev_reconstruct)
        .max(dev_homomorphism);
    let mut rep = FunctionalReport::new(
        "calculus_identity_suite",
        core_max,
        GridMeta::boundary(&dec.torus),
    );
    rep.entries.insert("sgn_squared".into(), dev_sgn);
    rep.entries.insert("chi_sum".into(), dev_chi_sum);
    rep.entries.insert("chi_idempotent".into(), dev_chi_idem);
    rep.entries.insert("chi_product".into(), dev_chi_prod);
    rep.entries.insert("semigroup_law".into(), dev_semigroup);
    rep.entries
        .insert("lambda_commutes_chi".into(), dev_commute);
    rep.entries
        .insert("spectral_reconstruction".into(), dev_reconstruct);
    rep.entries
        .insert("homomorphism".into(), dev_homomorphism);
    rep.entries.insert("lambda_max_angle".into(), lambda_angle);
    rep.entries.insert("resolvent_sup".into(), resolvent_sup);
    rep.entries.insert("calculus_constant".into(), calc_bound);
    rep.entries.insert("omega".into(), dec.omega);
    rep.entries
        .insert("eigenbasis_cond_max".into(), dec.blocks.iter().map(|b| b.cond).fold(0.0, f64::max));
    Ok(rep)
}
