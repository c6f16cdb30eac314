//! Coefficient ingestion and transformation: accretivity checking, the
//! pointwise A <-> B transform, the multiplicative perturbation
//! E = I - B0^{-1} B, and its Carleson--Dahlberg size.

use num_complex::Complex64;

use crate::cmat;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::funcnorms;
use crate::grid::{TGrid, TorusGrid};
use crate::report::GridMeta;

pub const SINGULARITY_REL_TOL: f64 = 1e-10;

/// Sampled coefficient matrices A(t_j, x_k) in L(C^{(1+n)m}),
/// stored row-major per sample; one t-slice when `t_independent`.
#[derive(Clone, Debug)]
pub struct CoefficientTensor {
    pub torus: TorusGrid,
    pub tgrid: TGrid,
    pub t_independent: bool,
    /// Layout: [t][site][row * comps + col]; t-extent 1 when t-independent.
    pub values: Vec<Complex64>,
    /// Accretivity constant, filled by [`check_accretivity`].
    pub kappa: Option<f64>,
}

impl CoefficientTensor {
    pub fn comps(&self) -> usize {
        self.torus.comps()
    }

    pub fn t_len(&self) -> usize {
        if self.t_independent {
            1
        } else {
            self.tgrid.len()
        }
    }

    pub fn sample(&self, t_idx: usize, site: usize) -> &[Complex64] {
        let c = self.comps();
        let ti = if self.t_independent { 0 } else { t_idx };
        let off = (ti * self.torus.sites() + site) * c * c;
        &self.values[off..off + c * c]
    }

    fn sample_mut(&mut self, t_idx: usize, site: usize) -> &mut [Complex64] {
        let c = self.comps();
        let ti = if self.t_independent { 0 } else { t_idx };
        let off = (ti * self.torus.sites() + site) * c * c;
        &mut self.values[off..off + c * c]
    }

    pub fn identity(torus: &TorusGrid, tgrid: &TGrid) -> Self {
        let c = torus.comps();
        let mut out = Self {
            torus: torus.clone(),
            tgrid: tgrid.clone(),
            t_independent: true,
            values: vec![Complex64::default(); torus.sites() * c * c],
            kappa: Some(1.0),
        };
        for site in 0..torus.sites() {
            out.sample_mut(0, site).copy_from_slice(&cmat::identity(c));
        }
        out
    }

    /// Sample entries from a closure of (t, x, row, col).
    pub fn from_fn(
        torus: &TorusGrid,
        tgrid: &TGrid,
        t_independent: bool,
        mut f: impl FnMut(f64, &[f64], usize, usize) -> Complex64,
    ) -> Self {
        let c = torus.comps();
        let t_len = if t_independent { 1 } else { tgrid.len() };
        let mut values = Vec::with_capacity(t_len * torus.sites() * c * c);
        let mut x = [0.0f64; crate::grid::MAX_BOUNDARY_DIM];
        for ti in 0..t_len {
            let t = if t_independent { 0.0 } else { tgrid.nodes[ti] };
            for site in 0..torus.sites() {
                let mut rest = site;
                for xd in x.iter_mut().take(torus.n) {
                    *xd = (rest % torus.points) as f64 * torus.spacing();
                    rest /= torus.points;
                }
                for row in 0..c {
                    for col in 0..c {
                        values.push(f(t, &x[..torus.n], row, col));
                    }
                }
            }
        }
        Self {
            torus: torus.clone(),
            tgrid: tgrid.clone(),
            t_independent,
            values,
            kappa: None,
        }
    }

    /// Sample a matrix of expression descriptors.
    pub fn from_expressions(torus: &TorusGrid, tgrid: &TGrid, entries: &[Vec<Expr>]) -> Result<Self> {
        let c = torus.comps();
        if entries.len() != c || entries.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch {
                expected: c,
                got: entries.len(),
                context: "coefficient expression matrix",
            });
        }
        let t_indep = entries
            .iter()
            .all(|row| row.iter().all(|e| e.t_independent()));
        Ok(Self::from_fn(torus, tgrid, t_indep, |t, x, r, col| {
            entries[r][col].eval(t, x)
        }))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let c = self.comps();
        for ti in 0..self.t_len() {
            for site in 0..self.torus.sites() {
                let s = self.sample(ti, site);
                for i in 0..c {
                    for j in 0..c {
                        if (s[i * c + j] - s[j * c + i].conj()).norm() > tol {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// Conjugate-transpose every sample (coefficients of the adjoint system).
    pub fn adjoint(&self) -> Self {
        let c = self.comps();
        let mut out = self.clone();
        for ti in 0..self.t_len() {
            for site in 0..self.torus.sites() {
                let src = self.sample(ti, site).to_vec();
                let dst = out.sample_mut(ti, site);
                for i in 0..c {
                    for j in 0..c {
                        dst[i * c + j] = src[j * c + i].conj();
                    }
                }
            }
        }
        out.kappa = self.kappa;
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    B,
    B0,
}

/// The pointwise-transformed coefficients B (or a t-independent B0).
#[derive(Clone, Debug)]
pub struct TransformedTensor {
    pub tensor: CoefficientTensor,
    pub role: Role,
}

impl TransformedTensor {
    pub fn sample(&self, t_idx: usize, site: usize) -> &[Complex64] {
        self.tensor.sample(t_idx, site)
    }

    pub fn t_independent(&self) -> bool {
        self.tensor.t_independent
    }

    /// True when the coefficients do not vary over boundary sites.
    pub fn x_independent(&self, tol: f64) -> bool {
        let c = self.tensor.comps();
        for ti in 0..self.tensor.t_len() {
            let first = self.tensor.sample(ti, 0);
            for site in 1..self.tensor.torus.sites() {
                let s = self.tensor.sample(ti, site);
                for k in 0..c * c {
                    if (s[k] - first[k]).norm() > tol {
                        return false;
                    }
                }
            }
        }
        true
    }
}

#[derive(Clone, Debug)]
pub struct AccretivityReport {
    pub kappa: f64,
    pub accretive: bool,
    pub grid: GridMeta,
}

/// Minimum over all samples of the smallest eigenvalue of the Hermitian
/// part; the sampled accretivity constant.
pub fn check_accretivity(a: &mut CoefficientTensor) -> Result<AccretivityReport> {
    let c = a.comps();
    if a.values.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut kappa = f64::INFINITY;
    for ti in 0..a.t_len() {
        for site in 0..a.torus.sites() {
            let s = a.sample(ti, site);
            if s.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::EigenFailure("non-finite coefficient sample".into()));
            }
            kappa = kappa.min(cmat::hermitian_part_min_eig(s, c)?);
        }
    }
    a.kappa = Some(kappa);
    Ok(AccretivityReport {
        kappa,
        accretive: kappa > 0.0,
        grid: GridMeta::half_space(&a.torus, &a.tgrid),
    })
}

/// Pointwise transform A -> B with the normal/tangential block splitting
/// a, b, c, d: B = [[a^{-1}, -a^{-1} b], [c a^{-1}, d - c a^{-1} b]].
pub fn transform_a_to_b(a: &CoefficientTensor) -> Result<TransformedTensor> {
    let m = a.torus.m;
    let c = a.comps();
    let tan = c - m;
    let mut out = a.clone();
    out.kappa = None;
    for ti in 0..a.t_len() {
        for site in 0..a.torus.sites() {
            let s = a.sample(ti, site);
            // extract blocks
            let mut blk_a = vec![Complex64::default(); m * m];
            let mut blk_b = vec![Complex64::default(); m * tan];
            let mut blk_c = vec![Complex64::default(); tan * m];
            let mut blk_d = vec![Complex64::default(); tan * tan];
            for i in 0..m {
                for j in 0..m {
                    blk_a[i * m + j] = s[i * c + j];
                }
                for j in 0..tan {
                    blk_b[i * tan + j] = s[i * c + m + j];
                }
            }
            for i in 0..tan {
                for j in 0..m {
                    blk_c[i * m + j] = s[(m + i) * c + j];
                }
                for j in 0..tan {
                    blk_d[i * tan + j] = s[(m + i) * c + m + j];
                }
            }
            let sv = cmat::singular_values(&blk_a, m, m)?;
            let (smax, smin) = (sv[0], sv[m - 1]);
            if smin < SINGULARITY_REL_TOL * smax.max(1e-300) {
                let t = if a.t_independent {
                    a.tgrid.t_min
                } else {
                    a.tgrid.nodes[ti]
                };
                return Err(Error::SingularNormalBlock { t, site });
            }
            let ainv = cmat::inverse(&blk_a, m)?;
            let ainv_b = cmat::mat_mul(&ainv, &blk_b, m, m, tan);
            let c_ainv = cmat::mat_mul(&blk_c, &ainv, tan, m, m);
            let c_ainv_b = cmat::mat_mul(&c_ainv, &blk_b, tan, m, tan);
            let dst = out.sample_mut(ti, site);
            for i in 0..m {
                for j in 0..m {
                    dst[i * c + j] = ainv[i * m + j];
                }
                for j in 0..tan {
                    dst[i * c + m + j] = -ainv_b[i * tan + j];
                }
            }
            for i in 0..tan {
                for j in 0..m {
                    dst[(m + i) * c + j] = c_ainv[i * m + j];
                }
                for j in 0..tan {
                    dst[(m + i) * c + m + j] = blk_d[i * tan + j] - c_ainv_b[i * tan + j];
                }
            }
        }
    }
    Ok(TransformedTensor {
        tensor: out,
        role: Role::B,
    })
}

/// Select t-independent coefficients from B. The default takes the slice
/// at the smallest transverse node; `slice_override` picks another node.
pub fn select_b0(b: &TransformedTensor, slice_override: Option<usize>) -> Result<TransformedTensor> {
    let ti = slice_override.unwrap_or(0);
    if !b.tensor.t_independent && ti >= b.tensor.tgrid.len() {
        return Err(Error::DimensionMismatch {
            expected: b.tensor.tgrid.len(),
            got: ti,
            context: "B0 slice override",
        });
    }
    let torus = &b.tensor.torus;
    let c = torus.comps();
    let mut values = Vec::with_capacity(torus.sites() * c * c);
    for site in 0..torus.sites() {
        values.extend_from_slice(b.tensor.sample(ti, site));
    }
    Ok(TransformedTensor {
        tensor: CoefficientTensor {
            torus: torus.clone(),
            tgrid: b.tensor.tgrid.clone(),
            t_independent: true,
            values,
            kappa: None,
        },
        role: Role::B0,
    })
}

/// Multiplicative perturbation E(t, x) = I - B0(x)^{-1} B(t, x).
#[derive(Clone, Debug)]
pub struct PerturbationField {
    pub torus: TorusGrid,
    pub tgrid: TGrid,
    /// Layout as in [`CoefficientTensor`], always with full t extent.
    pub values: Vec<Complex64>,
    pub sup_norm: f64,
    pub cd_norm: Option<f64>,
}

impl PerturbationField {
    pub fn sample(&self, t_idx: usize, site: usize) -> &[Complex64] {
        let c = self.torus.comps();
        let off = (t_idx * self.torus.sites() + site) * c * c;
        &self.values[off..off + c * c]
    }

    pub fn zero(torus: &TorusGrid, tgrid: &TGrid) -> Self {
        let c = torus.comps();
        Self {
            torus: torus.clone(),
            tgrid: tgrid.clone(),
            values: vec![Complex64::default(); tgrid.len() * torus.sites() * c * c],
            sup_norm: 0.0,
            cd_norm: Some(0.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sup_norm == 0.0
    }

    /// Apply E pointwise to a half-space field slice by slice.
    pub fn apply(
        &self,
        f: &crate::grid::HalfSpaceField,
    ) -> Result<crate::grid::HalfSpaceField> {
        if f.torus != self.torus || f.tgrid != self.tgrid {
            return Err(Error::SizeMismatch);
        }
        let c = self.torus.comps();
        let mut out = crate::grid::HalfSpaceField::zeros(&self.torus, &self.tgrid);
        let mut tmp = vec![Complex64::default(); c];
        for j in 0..self.tgrid.len() {
            for site in 0..self.torus.sites() {
                let mat = self.sample(j, site);
                let src = &f.slice(j)[site * c..(site + 1) * c];
                cmat::mat_vec(mat, src, &mut tmp, c, c);
                out.slice_mut(j)[site * c..(site + 1) * c].copy_from_slice(&tmp);
            }
        }
        Ok(out)
    }
}

/// E = I - B0^{-1} B with the sup of pointwise operator norms.
pub fn extract_e(b: &TransformedTensor, b0: &TransformedTensor) -> Result<PerturbationField> {
    if !b0.t_independent() {
        return Err(Error::DimensionUnsupported("B0 must be t-independent"));
    }
    let torus = &b.tensor.torus;
    if *torus != b0.tensor.torus {
        return Err(Error::SizeMismatch);
    }
    let c = torus.comps();
    let tgrid = &b.tensor.tgrid;
    let mut values = Vec::with_capacity(tgrid.len() * torus.sites() * c * c);
    let mut sup = 0.0f64;
    // invert B0 once per site
    let mut b0_inv = Vec::with_capacity(torus.sites());
    for site in 0..torus.sites() {
        let s = b0.sample(0, site);
        let sv = cmat::singular_values(s, c, c)?;
        if sv[c - 1] < SINGULARITY_REL_TOL * sv[0].max(1e-300) {
            return Err(Error::SingularB0 { site });
        }
        b0_inv.push(cmat::inverse(s, c)?);
    }
    for ti in 0..tgrid.len() {
        for site in 0..torus.sites() {
            let prod = cmat::mat_mul(&b0_inv[site], b.sample(ti, site), c, c, c);
            let mut e = cmat::identity(c);
            for (ev, pv) in e.iter_mut().zip(&prod) {
                *ev -= pv;
            }
            sup = sup.max(cmat::op_norm(&e, c, c));
            values.extend_from_slice(&e);
        }
    }
    Ok(PerturbationField {
        torus: torus.clone(),
        tgrid: tgrid.clone(),
        values,
        sup_norm: sup,
        cd_norm: None,
    })
}

/// Discrete Carleson--Dahlberg norm: the Carleson functional applied to
/// the Whitney L-infinity average of |E|^2 / t, sup over boundary points,
/// square root.
pub fn carleson_dahlberg_norm(e: &PerturbationField) -> Result<f64> {
    if e.values.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let c = e.torus.comps();
    let t_len = e.tgrid.len();
    let sites = e.torus.sites();
    // scalar field |E(t,x)|^2 / t sampled on the grid
    let mut g = vec![0.0f64; t_len * sites];
    for ti in 0..t_len {
        let t = e.tgrid.nodes[ti];
        for site in 0..sites {
            let nrm = cmat::op_norm(e.sample(ti, site), c, c);
            g[ti * sites + site] = nrm * nrm / t;
        }
    }
    let w = funcnorms::whitney_linf_average(&e.torus, &e.tgrid, &g);
    let sup = funcnorms::carleson_sup_scalar(&e.torus, &e.tgrid, &w);
    Ok(sup.sqrt())
}
