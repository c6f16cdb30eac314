//! End-to-end solves of the perturbed first-order system: the Neumann
//! series (I - S E)^{-1} Lambda^sigma e^{-t Lambda} E0+ h+, recovery of
//! the Hardy datum from a field, trace extraction with the backward-flow
//! correction, trace-limit verification, and the pointwise ODE residual.

use num_complex::Complex64;

use crate::coeff::{PerturbationField, TransformedTensor};
use crate::error::{Error, Result};
use crate::flow::{cauchy_extension, FlowConfig};
use crate::funcalc::{abs_c, chi_plus_c, pow_abs_c, SpectralDecomp};
use crate::funcnorms;
use crate::grid::{dft_slice, idft_slice, BoundaryField, HalfSpaceField};
use crate::report::{FunctionalReport, GridMeta};
use crate::sio;
use crate::sio::kernels::{weighted_moments_unit, Orient};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Relative increment tolerance stopping the series.
    pub tol: f64,
    pub max_terms: usize,
    /// Steps of operator power iteration behind `contraction_estimate`.
    pub contraction_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_terms: 80,
            contraction_steps: 12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub field: HalfSpaceField,
    pub h_plus: BoundaryField,
    pub series_terms: usize,
    /// Norm of the last increment (in the iteration norm).
    pub series_tail: f64,
    /// Asymptotic decay rate of the Neumann increments, measured by
    /// power iteration of S E from the extension of the datum.
    pub contraction_estimate: f64,
    pub increment_norms: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Iteration norm: the weighted L2(t^alpha) norm away from the
/// endpoints, the non-tangential norm at alpha = -1 and the weighted
/// L2(t) norm at alpha = +1.
fn iteration_norm(f: &HalfSpaceField, alpha: f64) -> Result<f64> {
    if (alpha + 1.0).abs() < 1e-12 {
        Ok(funcnorms::nontangential_norm(f))
    } else {
        Ok(funcnorms::weighted_norm(f, alpha)?.sqrt())
    }
}

fn apply_se(
    dec: &SpectralDecomp,
    e: &PerturbationField,
    f: &HalfSpaceField,
) -> Result<HalfSpaceField> {
    let ef = e.apply(f)?;
    let proj = dec.spectral_project_field(&ef);
    sio::apply_s(dec, &proj)
}

/// f = sum_k (S E)^k Lambda^sigma e^{-t Lambda} E0+ h+ with geometric
/// stopping; diverging increments abort the series.
pub fn solve_cauchy(
    dec: &SpectralDecomp,
    e: &PerturbationField,
    cfg: &FlowConfig,
    h_plus: &BoundaryField,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    let f0 = cauchy_extension(dec, cfg, h_plus)?;
    let hp = crate::flow::hardy_projection(dec, true, h_plus)?;
    let mut warnings = Vec::new();
    if e.is_zero() {
        return Ok(SolveResult {
            field: f0,
            h_plus: hp,
            series_terms: 1,
            series_tail: 0.0,
            contraction_estimate: 0.0,
            increment_norms: Vec::new(),
            warnings,
        });
    }
    // smallness bookkeeping per the weight regime
    if cfg.alpha.abs() > 1.0 - 1e-12 {
        if e.cd_norm.is_none() {
            warnings.push("endpoint weight without a Carleson-Dahlberg norm on E".into());
        }
    } else if e.sup_norm >= 0.5 {
        warnings.push(format!(
            "sup norm of E is {:.3}; the series may converge slowly",
            e.sup_norm
        ));
    }

    let base = iteration_norm(&f0, cfg.alpha)?;
    let contraction_estimate = {
        // power iteration of S E started from the extension itself
        let mut x = apply_se(dec, e, &f0)?;
        let mut ratio = iteration_norm(&x, cfg.alpha)? / base.max(1e-300);
        for _ in 0..opts.contraction_steps {
            let nx = iteration_norm(&x, cfg.alpha)?;
            if nx < 1e-300 {
                ratio = 0.0;
                break;
            }
            x.scale(Complex64::new(1.0 / nx, 0.0));
            let next = apply_se(dec, e, &x)?;
            ratio = iteration_norm(&next, cfg.alpha)?;
            x = next;
        }
        ratio
    };
    if contraction_estimate >= 1.0 {
        return Err(Error::SeriesDiverged {
            terms: 0,
            increment: contraction_estimate,
        });
    }
    if contraction_estimate >= 0.5 {
        warnings.push(format!(
            "contraction estimate {contraction_estimate:.3} >= 1/2; smallness is marginal"
        ));
    }

    let mut field = f0.clone();
    let mut term = f0.clone();
    let mut increments = Vec::new();
    let mut growth_streak = 0usize;
    let mut tail = 0.0;
    let mut terms = 1usize;
    for _ in 1..=opts.max_terms {
        term = apply_se(dec, e, &term)?;
        let inc = iteration_norm(&term, cfg.alpha)?;
        if let Some(&prev) = increments.last() {
            if inc > prev {
                growth_streak += 1;
                if growth_streak >= 3 {
                    return Err(Error::SeriesDiverged {
                        terms,
                        increment: inc,
                    });
                }
            } else {
                growth_streak = 0;
            }
        }
        increments.push(inc);
        field.axpy(ONE, &term);
        terms += 1;
        tail = inc;
        if inc < opts.tol * base {
            break;
        }
    }
    if tail >= opts.tol * base {
        warnings.push(format!(
            "series stopped at {terms} terms with tail {tail:.3e} above tolerance"
        ));
    }
    field.in_h = true;
    Ok(SolveResult {
        field,
        h_plus: hp,
        series_terms: terms,
        series_tail: tail,
        contraction_estimate,
        increment_norms: increments,
        warnings,
    })
}

/// Recovered Hardy datum and the representation residual of a field.
#[derive(Clone, Debug)]
pub struct Representation {
    pub h_plus: BoundaryField,
    pub residual_rel: f64,
    pub report: FunctionalReport,
}

/// Fit h+ from r = f - S E f by per-channel least squares against
/// |lambda|^sigma e^{-t |lambda|} over the first quarter of the grid
/// (the inversion is well-posed near the boundary only), then measure
/// || f - Lambda^sigma e^{-t Lambda} E0+ h+ - S E f || / || f ||.
pub fn verify_representation(
    dec: &SpectralDecomp,
    e: &PerturbationField,
    cfg: &FlowConfig,
    f: &HalfSpaceField,
) -> Result<Representation> {
    let sef = if e.is_zero() {
        None
    } else {
        Some(apply_se(dec, e, f)?)
    };
    let mut r = f.clone();
    if let Some(s) = &sef {
        r.axpy(-ONE, s);
    }
    let (r_series, _) = dec.field_to_h_series(&r);
    let tgrid = &f.tgrid;
    let fit_len = (tgrid.len() / 4).max(2);
    let sigma = cfg.sigma;
    let mut coords = vec![Complex64::default(); dec.h_dim()];
    for block in dec.blocks() {
        let range = block.offset..block.offset + block.dim;
        // least squares per eigen channel; Schur blocks solve the small
        // normal equations against the matrix profile
        match &block.form {
            crate::funcalc::BlockForm::Eigen { .. } => {
                let mut chan_fit = vec![Complex64::default(); block.dim];
                for (k, lam) in block.vals.iter().enumerate() {
                    if chi_plus_c(*lam) == Complex64::default() {
                        continue;
                    }
                    let mu = abs_c(*lam);
                    let w = pow_abs_c(*lam, sigma);
                    let mut num = Complex64::default();
                    let mut den = 0.0f64;
                    for (j, rj) in r_series.iter().enumerate().take(fit_len) {
                        let t = tgrid.nodes[j];
                        let phi = w * (-t * mu).exp();
                        let rk = block.to_channels(&rj[range.clone()])[k];
                        num += rk * phi.conj();
                        den += phi.norm_sqr();
                    }
                    if den > 0.0 {
                        chan_fit[k] = num / den;
                    }
                }
                let u = block.from_channels(&chan_fit);
                coords[range.clone()].copy_from_slice(&u);
            }
            crate::funcalc::BlockForm::Schur { .. } => {
                let dim = block.dim;
                let mut ata = vec![Complex64::default(); dim * dim];
                let mut atb = vec![Complex64::default(); dim];
                for (j, rj) in r_series.iter().enumerate().take(fit_len) {
                    let t = tgrid.nodes[j];
                    let phi = block.matrix_fn(&|z| {
                        chi_plus_c(z) * pow_abs_c(z, sigma) * (-t * abs_c(z)).exp()
                    })?;
                    for a in 0..dim {
                        for bcol in 0..dim {
                            let mut acc = Complex64::default();
                            for rrow in 0..dim {
                                acc += phi[rrow * dim + a].conj() * phi[rrow * dim + bcol];
                            }
                            ata[a * dim + bcol] += acc;
                        }
                        let mut accb = Complex64::default();
                        for rrow in 0..dim {
                            accb += phi[rrow * dim + a].conj() * rj[range.start + rrow];
                        }
                        atb[a] += accb;
                    }
                }
                for i in 0..dim {
                    ata[i * dim + i] += Complex64::new(1e-14, 0.0);
                }
                let inv = crate::cmat::inverse(&ata, dim)?;
                let mut sol = vec![Complex64::default(); dim];
                crate::cmat::mat_vec(&inv, &atb, &mut sol, dim, dim);
                // restrict to the Hardy range
                let chi = block.matrix_fn(&chi_plus_c)?;
                let mut proj = vec![Complex64::default(); dim];
                crate::cmat::mat_vec(&chi, &sol, &mut proj, dim, dim);
                coords[range.clone()].copy_from_slice(&proj);
            }
        }
    }
    let h_plus = dec.h_to_boundary(&coords);
    let extension = cauchy_extension(dec, cfg, &h_plus)?;
    let mut resid = r;
    resid.axpy(-ONE, &extension);
    let fnorm = funcnorms::weighted_norm(f, cfg.alpha)?.sqrt();
    let residual_rel = funcnorms::weighted_norm(&resid, cfg.alpha)?.sqrt() / fnorm.max(1e-300);
    let mut report = FunctionalReport::new(
        "representation_residual",
        residual_rel,
        GridMeta::half_space(&f.torus, tgrid),
    );
    report
        .entries
        .insert("h_plus_norm".into(), h_plus.norm_l2());
    report.entries.insert("field_norm".into(), fnorm);
    Ok(Representation {
        h_plus,
        residual_rel,
        report,
    })
}

/// Full trace h = h+ + int_0^infty Lambda^{1-sigma} e^{-s Lambda} E0-
/// (E f)_s ds, with the ratio ||h||_2 / ||f|| reported.
pub fn extract_trace(
    dec: &SpectralDecomp,
    e: &PerturbationField,
    cfg: &FlowConfig,
    f: &HalfSpaceField,
) -> Result<(BoundaryField, FunctionalReport)> {
    let repr = verify_representation(dec, e, cfg, f)?;
    let mut h = repr.h_plus.clone();
    if !e.is_zero() {
        let ef = e.apply(f)?;
        let proj = dec.spectral_project_field(&ef);
        let (series, _) = dec.field_to_h_series(&proj);
        let sigma = cfg.sigma;
        let functional = move |lam: Complex64, a: f64, b: f64| -> (Complex64, Complex64) {
            if lam.re > 0.0 {
                return (Complex64::default(), Complex64::default());
            }
            let mu = abs_c(lam);
            let w = pow_abs_c(lam, 1.0 - sigma);
            let (m0, m1) = weighted_moments_unit(mu, Orient::FromTarget(0.0), a, b);
            (w * m0, w * m1)
        };
        let correction = sio::boundary_functional(dec, &series, &f.tgrid, &functional)?;
        h.axpy(ONE, &correction);
    }
    let fnorm = funcnorms::weighted_norm(f, cfg.alpha)?.sqrt();
    let mut report = FunctionalReport::new(
        "trace_ratio",
        h.norm_l2() / fnorm.max(1e-300),
        GridMeta::half_space(&f.torus, &f.tgrid),
    );
    report.entries.insert("correction_norm".into(), {
        let mut c = h.clone();
        c.axpy(-ONE, &repr.h_plus);
        c.norm_l2()
    });
    report
        .entries
        .insert("representation_residual".into(), repr.residual_rel);
    Ok((h, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceMode {
    /// Square Dini sense: slab averages t^{-1} int_t^{2t} || . ||^2.
    Dini,
    /// Pointwise L2 sense (needs alpha > 0).
    L2,
}

/// Slab or pointwise convergence of Lambda^{-sigma} f_s toward h at the
/// lower grid end and toward 0 at the upper end. The report carries the
/// two sequences; `value` is the final lower-end entry relative to
/// ||h||^2 (Dini) or ||h|| (L2).
pub fn trace_limit_check(
    dec: &SpectralDecomp,
    cfg: &FlowConfig,
    f: &HalfSpaceField,
    h: &BoundaryField,
    mode: TraceMode,
) -> Result<FunctionalReport> {
    let tgrid = &f.tgrid;
    let t_len = tgrid.len();
    let ends = 8.min(t_len / 2);
    let mut diff_norm_sq = vec![0.0f64; t_len];
    let mut plain_norm_sq = vec![0.0f64; t_len];
    for j in 0..t_len {
        let slice = f.slice_field(j);
        let mapped = crate::funcalc::apply_lambda_power(dec, -cfg.sigma, &slice)?;
        plain_norm_sq[j] = mapped.norm_l2().powi(2);
        let mut d = mapped;
        d.axpy(-ONE, h);
        diff_norm_sq[j] = d.norm_l2().powi(2);
    }
    let slab = |norms: &[f64], j: usize| -> f64 {
        let t = tgrid.nodes[j];
        let mut acc = 0.0;
        for (i, &v) in norms.iter().enumerate() {
            acc += tgrid.weight_clipped(i, 0.0, t, 2.0 * t) * v;
        }
        acc / t
    };
    let h2 = h.norm_l2().powi(2).max(1e-300);
    let mut report = FunctionalReport::new(
        match mode {
            TraceMode::Dini => "trace_limit_dini",
            TraceMode::L2 => "trace_limit_l2",
        },
        0.0,
        GridMeta::half_space(&f.torus, tgrid),
    );
    let mut lower_final = 0.0;
    let mut lower_monotone = true;
    let mut prev = f64::INFINITY;
    for j in (0..ends).rev() {
        // walk from slab `ends` down toward the boundary
        let v = match mode {
            TraceMode::Dini => slab(&diff_norm_sq, j) / h2,
            TraceMode::L2 => (diff_norm_sq[j] / h2).sqrt(),
        };
        report.entries.insert(format!("lower_{j:02}"), v);
        if v > prev * (1.0 + 1e-9) {
            lower_monotone = false;
        }
        prev = v;
        lower_final = v;
    }
    let mut upper_final = 0.0;
    for (col, j) in ((t_len - ends)..t_len).enumerate() {
        let v = match mode {
            TraceMode::Dini => slab(&plain_norm_sq, j) / h2,
            TraceMode::L2 => (plain_norm_sq[j] / h2).sqrt(),
        };
        report.entries.insert(format!("upper_{col:02}"), v);
        upper_final = v;
    }
    report.value = lower_final;
    report.entries.insert("upper_final".into(), upper_final);
    report.entries.insert(
        "lower_monotone_toward_boundary".into(),
        if lower_monotone { 1.0 } else { 0.0 },
    );
    Ok(report)
}

/// Discrete residual of d/dt f + D B f = 0: centered differences in
/// log t, spectral D, pointwise B; the curl constraint is reported as the
/// worst slice residual.
pub fn ode_residual(
    f: &HalfSpaceField,
    b: &TransformedTensor,
    alpha: f64,
) -> Result<FunctionalReport> {
    let torus = &f.torus;
    if b.tensor.torus != *torus {
        return Err(Error::SizeMismatch);
    }
    let tgrid = &f.tgrid;
    let t_len = tgrid.len();
    if t_len < 3 {
        return Err(Error::EmptyGrid);
    }
    let comps = torus.comps();
    let d = crate::funcalc::TangentialD::new(torus);
    let mut residual = HalfSpaceField::zeros(torus, tgrid);
    let mut tmp = vec![Complex64::default(); comps];
    let mut max_curl: f64 = 0.0;
    for j in 1..t_len - 1 {
        // d/dt via the centered difference on the uniform log grid
        let (tm, t0, tp) = (tgrid.nodes[j - 1], tgrid.nodes[j], tgrid.nodes[j + 1]);
        let du = (tp / tm).ln() / 2.0;
        let mut slice = BoundaryField::zeros(torus);
        for (k, v) in slice.values.iter_mut().enumerate() {
            *v = (f.slice(j + 1)[k] - f.slice(j - 1)[k]) / (2.0 * du * t0);
        }
        // D B f at node j
        let bslice = {
            let mut out = f.slice_field(j);
            for site in 0..torus.sites() {
                crate::cmat::mat_vec(
                    b.sample(j, site),
                    &f.slice(j)[site * comps..(site + 1) * comps],
                    &mut tmp,
                    comps,
                    comps,
                );
                out.at_mut(site).copy_from_slice(&tmp);
            }
            out
        };
        let spec = dft_slice(&bslice);
        let mut dspec = spec.clone();
        for p in 0..torus.sites() {
            let dsym = d.symbol_matrix(p);
            crate::cmat::mat_vec(&dsym, spec.at(p), &mut tmp, comps, comps);
            dspec.at_mut(p).copy_from_slice(&tmp);
        }
        let dbf = idft_slice(&dspec);
        for (k, v) in residual.slice_mut(j).iter_mut().enumerate() {
            *v = slice.values[k] + dbf.values[k];
        }
        max_curl = max_curl.max(crate::grid::curl_residual(&f.slice_field(j)));
    }
    // weighted norms over the interior nodes only
    let mut interior_f = f.clone();
    for j in [0usize, t_len - 1] {
        for v in interior_f.slice_mut(j) {
            *v = Complex64::default();
        }
    }
    let num = funcnorms::weighted_norm(&residual, alpha)?.sqrt();
    let den = funcnorms::weighted_norm(&interior_f, alpha)?
        .sqrt()
        .max(1e-300);
    let mut report = FunctionalReport::new(
        "ode_residual",
        num / den,
        GridMeta::half_space(torus, tgrid),
    );
    report.entries.insert("max_curl".into(), max_curl);
    Ok(report)
}
