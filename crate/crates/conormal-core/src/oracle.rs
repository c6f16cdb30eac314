//! Independent brute-force references: the classical periodized Cauchy
//! and Poisson kernels evaluated by direct quadrature, a dense
//! midpoint-rule realization of the singular integral, and a dense
//! factorization solve of the perturbed system. None of these share the
//! quadrature or series code paths they are used to check.

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;

use crate::coeff::PerturbationField;
use crate::error::{Error, Result};
use crate::flow::{cauchy_extension, FlowConfig};
use crate::funcalc::{abs_c, chi_minus_c, chi_plus_c, SpectralDecomp};
use crate::grid::{BoundaryField, HalfSpaceField, TGrid};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Number of lattice images in the periodized kernels; the leading tail
/// of the paired image sum is removed analytically below.
pub const KERNEL_IMAGES: usize = 50;

/// sum_{k > n} 1/k^2 via the asymptotic series of the trigamma function.
fn trigamma_tail(n: usize) -> f64 {
    let x = (n + 1) as f64;
    1.0 / x + 1.0 / (2.0 * x * x) + 1.0 / (6.0 * x * x * x) - 1.0 / (30.0 * x.powi(5))
}

/// Periodized Cauchy kernel sum_k 1/(z - kL): paired images up to the
/// cutoff plus the analytic leading tail -2z/L^2 sum_{k>K} k^{-2}.
fn periodized_cauchy(z: Complex64, period: f64, images: usize) -> Complex64 {
    let mut acc = 1.0 / z;
    for k in 1..=images {
        let kl = k as f64 * period;
        // paired images keep the remainder O(|z|/(kL)^2)
        acc += 2.0 * z / (z * z - kl * kl);
    }
    acc - 2.0 * z / (period * period) * trigamma_tail(images)
}

/// Classical Cauchy-kernel extension for a scalar equation on the line
/// (n = m = 1): the boundary datum is folded into the anti-analytic
/// scalar w = h_perp - i h_par, extended by the reproducing kernel
/// (i/2pi) int w(y) / (y - x + it) dy, and unfolded pointwise. The
/// kernel annihilates the non-decaying half of the datum.
pub fn cauchy_kernel_extension(h: &BoundaryField, tgrid: &TGrid) -> Result<HalfSpaceField> {
    let grid = &h.grid;
    if grid.n != 1 || grid.m != 1 {
        return Err(Error::DimensionUnsupported(
            "the classical Cauchy oracle needs n = m = 1",
        ));
    }
    // zero mean required: the periodized kernel has no consistent action
    // on the constant mode
    let mean: Complex64 = h
        .values
        .chunks(2)
        .map(|c| c[0] + c[1])
        .sum::<Complex64>();
    let scale: f64 = h.values.iter().map(|v| v.norm()).sum();
    if mean.norm() > 1e-10 * scale.max(1e-300) {
        return Err(Error::NonzeroMeanNegativeOrder);
    }
    let sites = grid.sites();
    let dy = grid.spacing();
    let pref = I / (2.0 * std::f64::consts::PI);
    let mut out = HalfSpaceField::zeros(grid, tgrid);
    // anti-analytic folding of the datum
    let w0: Vec<Complex64> = (0..sites)
        .map(|l| h.at(l)[0] - I * h.at(l)[1])
        .collect();
    for (j, &t) in tgrid.nodes.iter().enumerate() {
        let slice = out.slice_mut(j);
        for k in 0..sites {
            let x = k as f64 * dy;
            let mut acc = Complex64::default();
            for (l, w) in w0.iter().enumerate() {
                let y = l as f64 * dy;
                let z = Complex64::new(y - x, t);
                acc += w * periodized_cauchy(z, grid.period, KERNEL_IMAGES);
            }
            let w = pref * acc * dy;
            slice[k * 2] = w / 2.0;
            slice[k * 2 + 1] = I * w / 2.0;
        }
    }
    Ok(out)
}

/// Componentwise convolution with the periodized Poisson kernel
/// (1/pi) t / (t^2 + u^2); the classical reference for the decay
/// semigroup with identity coefficients (n = 1).
pub fn poisson_extension(h: &BoundaryField, tgrid: &TGrid) -> Result<HalfSpaceField> {
    let grid = &h.grid;
    if grid.n != 1 {
        return Err(Error::DimensionUnsupported("the Poisson oracle needs n = 1"));
    }
    let sites = grid.sites();
    let comps = grid.comps();
    let dy = grid.spacing();
    let mut out = HalfSpaceField::zeros(grid, tgrid);
    for (j, &t) in tgrid.nodes.iter().enumerate() {
        // kernel values by lattice offset
        let tail = 2.0 * t / (grid.period * grid.period) * trigamma_tail(KERNEL_IMAGES);
        let kernel: Vec<f64> = (0..sites)
            .map(|d| {
                let u = d as f64 * dy;
                let mut acc = 0.0;
                for k in -(KERNEL_IMAGES as i64)..=(KERNEL_IMAGES as i64) {
                    let v = u - k as f64 * grid.period;
                    acc += t / (t * t + v * v);
                }
                (acc + tail) / std::f64::consts::PI
            })
            .collect();
        let slice = out.slice_mut(j);
        for k in 0..sites {
            for c in 0..comps {
                let mut acc = Complex64::default();
                for l in 0..sites {
                    let d = (k as i64 - l as i64).rem_euclid(sites as i64) as usize;
                    acc += h.at(l)[c] * kernel[d];
                }
                slice[k * comps + c] = acc * dy;
            }
        }
    }
    Ok(out)
}

/// Dense midpoint-rule application of the singular integral: double loop
/// over targets and source sub-cells with the kernel matrix materialized
/// per pair through the spectral decomposition; no cell-exact shortcuts.
/// Guarded to small grids.
pub fn dense_apply_s(
    dec: &SpectralDecomp,
    f: &HalfSpaceField,
    subdiv: usize,
) -> Result<HalfSpaceField> {
    let tgrid = &f.tgrid;
    let t_len = tgrid.len();
    let size = dec.h_dim() * t_len * subdiv;
    const LIMIT: usize = 40_000_000;
    if size > LIMIT {
        return Err(Error::GridTooLarge { size, limit: LIMIT });
    }
    let (series, _) = dec.field_to_h_series(f);
    let hdim = dec.h_dim();
    let mut out_series = vec![vec![Complex64::default(); hdim]; t_len];

    // piecewise-linear interpolation of block coordinates in s
    let interp = |range: &std::ops::Range<usize>, s: f64, out: &mut [Complex64]| {
        let nodes = &tgrid.nodes;
        if s <= nodes[0] {
            out.copy_from_slice(&series[0][range.clone()]);
            return;
        }
        let i = nodes.iter().position(|&n| n >= s).unwrap_or(nodes.len() - 1);
        let (a, b) = (nodes[i - 1], nodes[i]);
        let w = (s - a) / (b - a);
        for (k, o) in out.iter_mut().enumerate() {
            let lo = series[i - 1][range.start + k];
            let hi = series[i][range.start + k];
            *o = lo + (hi - lo) * w;
        }
    };

    for block in dec.blocks() {
        let range = block.offset..block.offset + block.dim;
        let mut val = vec![Complex64::default(); block.dim];
        let mut tmp = vec![Complex64::default(); block.dim];
        for (j, &t) in tgrid.nodes.iter().enumerate() {
            let mut acc = vec![Complex64::default(); block.dim];
            for i in 0..t_len {
                let (lo, hi) = if i == 0 {
                    (0.0, tgrid.nodes[0])
                } else {
                    (tgrid.nodes[i - 1], tgrid.nodes[i])
                };
                let step = (hi - lo) / subdiv as f64;
                for q in 0..subdiv {
                    let s = lo + (q as f64 + 0.5) * step;
                    let kernel = block.matrix_fn(&|z| {
                        if s < t {
                            chi_plus_c(z) * abs_c(z) * (-(t - s) * abs_c(z)).exp()
                        } else {
                            chi_minus_c(z) * abs_c(z) * (-(s - t) * abs_c(z)).exp()
                        }
                    })?;
                    interp(&range, s, &mut val);
                    crate::cmat::mat_vec(&kernel, &val, &mut tmp, block.dim, block.dim);
                    for (a, v) in acc.iter_mut().zip(&tmp) {
                        *a += v * step;
                    }
                }
            }
            out_series[j][range.clone()].copy_from_slice(&acc);
        }
    }
    Ok(dec.series_to_field(tgrid, &out_series))
}

/// Dense factorization solve of (I - S E) f = Lambda^sigma e^{-t Lambda}
/// E0+ h+ over the (t-node x H-coordinate) unknowns; the linear-algebra
/// reference for the Neumann series.
pub fn direct_solve(
    dec: &SpectralDecomp,
    e: &PerturbationField,
    cfg: &FlowConfig,
    h_plus: &BoundaryField,
) -> Result<HalfSpaceField> {
    let tgrid = &cfg.tgrid;
    let t_len = tgrid.len();
    let hdim = dec.h_dim();
    let dim = t_len * hdim;
    const LIMIT: usize = 6_000;
    if dim > LIMIT {
        return Err(Error::GridTooLarge {
            size: dim,
            limit: LIMIT,
        });
    }
    let f0 = cauchy_extension(dec, cfg, h_plus)?;
    let (f0_series, _) = dec.field_to_h_series(&f0);

    // materialize S E column by column
    let mut mat = Mat::<Complex64>::zeros(dim, dim);
    for col in 0..dim {
        let (j0, r0) = (col / hdim, col % hdim);
        let mut unit_series = vec![vec![Complex64::default(); hdim]; t_len];
        unit_series[j0][r0] = Complex64::new(1.0, 0.0);
        let unit = dec.series_to_field(tgrid, &unit_series);
        let ef = e.apply(&unit)?;
        let proj = dec.spectral_project_field(&ef);
        let sef = crate::sio::apply_s(dec, &proj)?;
        let (out_series, _) = dec.field_to_h_series(&sef);
        for j in 0..t_len {
            for r in 0..hdim {
                mat[(j * hdim + r, col)] = -out_series[j][r];
            }
        }
    }
    for k in 0..dim {
        mat[(k, k)] += Complex64::new(1.0, 0.0);
    }
    let mut rhs = Mat::<Complex64>::zeros(dim, 1);
    for j in 0..t_len {
        for r in 0..hdim {
            rhs[(j * hdim + r, 0)] = f0_series[j][r];
        }
    }
    let lu = mat.partial_piv_lu();
    let sol = lu.solve(&rhs);
    // residual check guards against a numerically singular system
    let mut res = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..dim {
        let mut acc = Complex64::default();
        for j in 0..dim {
            acc += mat[(i, j)] * sol[(j, 0)];
        }
        res += (acc - rhs[(i, 0)]).norm_sqr();
        scale += rhs[(i, 0)].norm_sqr();
    }
    if res.sqrt() > 1e-6 * scale.sqrt().max(1e-300) {
        return Err(Error::SingularSystem);
    }
    let mut out_series = vec![vec![Complex64::default(); hdim]; t_len];
    for j in 0..t_len {
        for r in 0..hdim {
            out_series[j][r] = sol[(j * hdim + r, 0)];
        }
    }
    Ok(dec.series_to_field(tgrid, &out_series))
}
