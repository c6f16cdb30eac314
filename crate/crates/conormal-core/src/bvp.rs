//! Neumann and Dirichlet diagnostics: the perturbed Hardy projector
//! assembled column by column, conditioning of the normal/tangential
//! restriction maps in homogeneous Sobolev metrics, the alpha = 0
//! quadratic-form identity for Hermitian coefficients, well-posedness
//! sweeps along coefficient paths, and the adjoint-coefficient duality
//! of the verdicts.

use num_complex::Complex64;

use crate::cmat;
use crate::coeff::{
    check_accretivity, extract_e, select_b0, transform_a_to_b, CoefficientTensor,
    PerturbationField,
};
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::funcalc::{
    abs_c, apply_lambda_power, assemble_db0, chi_minus_c, chi_plus_c, SpectralDecomp, TangentialD,
};
use crate::funcnorms;
use crate::grid::{BoundaryField, TGrid};
use crate::report::{FunctionalReport, GridMeta};
use crate::sio;
use crate::sio::kernels::{weighted_moments_unit, Orient};
use crate::solver::SolverOptions;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Default lower bound on the smallest restriction singular value for a
/// well-posed verdict; discrete maps are never exactly singular, the
/// interesting output is the curve of sigma_min along sweeps.
pub const WELL_POSED_THRESHOLD: f64 = 1e-6;

/// |xi|^{-sigma} scaling per H coordinate: the diagonal change of basis
/// from the L2-orthonormal fiber coordinates to the homogeneous Sobolev
/// metric of order -sigma.
fn metric_scale(dec: &SpectralDecomp, sigma: f64) -> Vec<f64> {
    let fd = dec.fiber_dim();
    let mut w = vec![1.0; dec.h_dim()];
    for (slot, &p) in dec.h_freqs.iter().enumerate() {
        let xi = dec.torus.xi_norm(p);
        let s = xi.powf(-sigma);
        for k in 0..fd {
            w[slot * fd + k] = s;
        }
    }
    w
}

/// Dense matrix of chi_{+-}(D B0) on the H coordinates.
fn chi_matrix(dec: &SpectralDecomp, plus: bool) -> Result<Vec<Complex64>> {
    let dim = dec.h_dim();
    let mut out = vec![ZERO; dim * dim];
    for block in dec.blocks() {
        let m = block.matrix_fn(if plus { &chi_plus_c } else { &chi_minus_c })?;
        for i in 0..block.dim {
            for j in 0..block.dim {
                out[(block.offset + i) * dim + (block.offset + j)] = m[i * block.dim + j];
            }
        }
    }
    Ok(out)
}

fn conjugate_by_metric(mat: &[Complex64], scale: &[f64], dim: usize) -> Vec<Complex64> {
    let mut out = mat.to_vec();
    for i in 0..dim {
        for j in 0..dim {
            out[i * dim + j] *= scale[i] / scale[j];
        }
    }
    out
}

/// The perturbed Hardy projector on the discrete Sobolev realization of
/// H, with its consistency measurements.
#[derive(Clone, Debug)]
pub struct HardyProjector {
    /// Matrix in the |xi|^{-sigma}-scaled (metric-orthonormal) coordinates.
    pub matrix: Vec<Complex64>,
    pub dim: usize,
    pub sigma: f64,
    /// ||P^2 - P|| in the metric operator norm.
    pub idempotency: f64,
    /// ||E_A+ - E0+|| in the metric operator norm.
    pub deviation_from_e0: f64,
    /// ||E_A+ chi_-||: how well the null space matches the E0- range.
    pub null_alignment: f64,
    /// Largest increment ratio seen during the column solves.
    pub contraction: f64,
}

/// Neumann-series flow without the Lambda^sigma weight:
/// (I - S E)^{-1} e^{-t Lambda} E0+ g.
fn flow_solve_raw(
    dec: &SpectralDecomp,
    e: &PerturbationField,
    tgrid: &TGrid,
    alpha: f64,
    g: &BoundaryField,
    opts: &SolverOptions,
) -> Result<(crate::grid::HalfSpaceField, f64)> {
    let f0 = crate::funcalc::apply_profile(dec, g, tgrid, &|z, t| {
        chi_plus_c(z) * (-t * abs_c(z)).exp()
    })?;
    if e.is_zero() {
        return Ok((f0, 0.0));
    }
    let base = funcnorms::weighted_norm(&f0, alpha)?.sqrt();
    let mut field = f0.clone();
    let mut term = f0;
    let mut prev = f64::INFINITY;
    let mut ratio: f64 = 0.0;
    let mut growth = 0usize;
    for k in 1..=opts.max_terms {
        let ef = e.apply(&term)?;
        let proj = dec.spectral_project_field(&ef);
        term = sio::apply_s(dec, &proj)?;
        let inc = funcnorms::weighted_norm(&term, alpha)?.sqrt();
        if inc > prev {
            growth += 1;
            if growth >= 3 {
                return Err(Error::SeriesDiverged {
                    terms: k,
                    increment: inc,
                });
            }
        } else {
            growth = 0;
        }
        if prev.is_finite() && prev > 0.0 {
            ratio = inc / prev;
        }
        prev = inc;
        field.axpy(ONE, &term);
        if inc < opts.tol * base {
            break;
        }
    }
    Ok((field, ratio))
}

/// Assemble E_A+ column by column over a basis of the E0+ range:
/// E_A+ g = E0+ g + int_0^infty Lambda e^{-s Lambda} E0- E_s
/// ((I - S E)^{-1} e^{-t Lambda} E0+ g)_s ds.
pub fn hardy_projection_ea(
    dec: &SpectralDecomp,
    e: &PerturbationField,
    cfg: &FlowConfig,
    opts: &SolverOptions,
) -> Result<HardyProjector> {
    let dim = dec.h_dim();
    let sigma = cfg.sigma;
    let e0_plus = chi_matrix(dec, true)?;
    let mut matrix = e0_plus.clone();
    let mut contraction: f64 = 0.0;
    if !e.is_zero() {
        let functional = |lam: Complex64, a: f64, b: f64| -> (Complex64, Complex64) {
            if lam.re > 0.0 {
                return (ZERO, ZERO);
            }
            let mu = abs_c(lam);
            let (m0, m1) = weighted_moments_unit(mu, Orient::FromTarget(0.0), a, b);
            (mu * m0, mu * m1)
        };
        // one solve per chi_+ channel; the E0- range maps to zero so the
        // correction enters as a rank-one update against the channel dual
        for block in dec.blocks() {
            for (k, lam) in block.vals.iter().enumerate() {
                if chi_plus_c(*lam) == ZERO {
                    continue;
                }
                let mut chan = vec![ZERO; block.dim];
                chan[k] = ONE;
                let u = block.from_channels(&chan);
                let mut coords = vec![ZERO; dim];
                coords[block.offset..block.offset + block.dim].copy_from_slice(&u);
                let g = dec.h_to_boundary(&coords);
                let (f, ratio) = flow_solve_raw(dec, e, &cfg.tgrid, cfg.alpha, &g, opts)?;
                contraction = contraction.max(ratio);
                let ef = e.apply(&f)?;
                let proj = dec.spectral_project_field(&ef);
                let (series, _) = dec.field_to_h_series(&proj);
                let corr = sio::boundary_functional(dec, &series, &cfg.tgrid, &functional)?;
                let (ccoords, _) = dec.boundary_to_h(&corr);
                // dual (left) coordinates of the channel basis vector
                let mut dual = vec![ZERO; dim];
                match &block.form {
                    crate::funcalc::BlockForm::Eigen { vinv, .. } => {
                        for j in 0..block.dim {
                            dual[block.offset + j] = vinv[k * block.dim + j];
                        }
                    }
                    crate::funcalc::BlockForm::Schur { .. } => {
                        return Err(Error::DimensionUnsupported(
                            "Hardy projector assembly requires diagonalizable blocks",
                        ));
                    }
                }
                for row in 0..dim {
                    if ccoords[row] == ZERO {
                        continue;
                    }
                    for (col, d) in dual.iter().enumerate() {
                        if *d != ZERO {
                            matrix[row * dim + col] += ccoords[row] * d;
                        }
                    }
                }
            }
        }
    }
    // move to the metric-orthonormal coordinates
    let scale = metric_scale(dec, sigma);
    let matrix = conjugate_by_metric(&matrix, &scale, dim);
    let e0_metric = conjugate_by_metric(&e0_plus, &scale, dim);
    let p2 = cmat::mat_mul(&matrix, &matrix, dim, dim, dim);
    let mut idem = p2;
    for (a, b) in idem.iter_mut().zip(&matrix) {
        *a -= b;
    }
    let idempotency = cmat::op_norm(&idem, dim, dim);
    let mut dev = matrix.clone();
    for (a, b) in dev.iter_mut().zip(&e0_metric) {
        *a -= b;
    }
    let deviation_from_e0 = cmat::op_norm(&dev, dim, dim);
    let e0_minus = conjugate_by_metric(&chi_matrix(dec, false)?, &scale, dim);
    let pm = cmat::mat_mul(&matrix, &e0_minus, dim, dim, dim);
    let null_alignment = cmat::op_norm(&pm, dim, dim);
    Ok(HardyProjector {
        matrix,
        dim,
        sigma,
        idempotency,
        deviation_from_e0,
        null_alignment,
        contraction,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RestrictionKind {
    Neumann,
    Dirichlet,
}

#[derive(Clone, Debug)]
pub struct ConditioningReport {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rank: usize,
    pub well_posed: bool,
    pub kind: RestrictionKind,
}

/// Conditioning of the restriction of the Hardy range to its normal
/// (Neumann datum) or tangential (Dirichlet datum) components, measured
/// between the Sobolev metrics of the projector.
pub fn restriction_map(
    dec: &SpectralDecomp,
    proj: &HardyProjector,
    kind: RestrictionKind,
) -> Result<ConditioningReport> {
    let dim = proj.dim;
    let m = dec.torus.m;
    let fd = dec.fiber_dim();
    // orthonormal basis of the range from the SVD of the projector
    let pm = cmat::to_faer(&proj.matrix, dim, dim);
    let svd = pm
        .svd()
        .map_err(|e| Error::EigenFailure(format!("projector svd: {e:?}")))?;
    let rank = (0..dim).take_while(|&i| svd.S()[i].re > 0.5).count();
    if rank == 0 {
        return Ok(ConditioningReport {
            sigma_min: 0.0,
            sigma_max: 0.0,
            rank,
            well_posed: false,
            kind,
        });
    }
    let u = svd.U();
    // restriction rows: the fiber basis keeps normal components in the
    // first m coordinates and pure tangential directions in the last m,
    // and the Sobolev weights cancel between domain and codomain
    let rows: Vec<usize> = (0..dec.h_freqs.len())
        .flat_map(|slot| {
            let base = slot * fd;
            match kind {
                RestrictionKind::Neumann => (0..m).map(move |i| base + i).collect::<Vec<_>>(),
                RestrictionKind::Dirichlet => (m..fd).map(move |i| base + i).collect::<Vec<_>>(),
            }
        })
        .collect();
    let mut map = vec![ZERO; rows.len() * rank];
    for (ri, &row) in rows.iter().enumerate() {
        for col in 0..rank {
            map[ri * rank + col] = u[(row, col)];
        }
    }
    let sv = cmat::singular_values(&map, rows.len(), rank)?;
    let sigma_max = sv[0];
    let sigma_min = sv[rank.min(rows.len()) - 1];
    Ok(ConditioningReport {
        sigma_min,
        sigma_max,
        rank,
        well_posed: sigma_min > WELL_POSED_THRESHOLD,
        kind,
    })
}

/// The alpha = 0 quadratic-form identity: for Hermitian t-independent
/// coefficients, int_0^infty ||f_t||^2 dt is controlled by the product of
/// the order -1/2 Sobolev norms of the normal and tangential boundary
/// parts. The ratio of the two sides is reported and both restriction
/// verdicts are attached.
pub fn rellich_check(
    a: &CoefficientTensor,
    h_plus: &BoundaryField,
    tgrid: &TGrid,
) -> Result<FunctionalReport> {
    let torus = a.torus.clone();
    let mut warnings = Vec::new();
    if !a.t_independent {
        return Err(Error::DimensionUnsupported(
            "the quadratic-form check needs t-independent coefficients",
        ));
    }
    if !a.is_hermitian(1e-12) {
        warnings.push("coefficients are not Hermitian; the bound may fail".to_string());
    }
    let b = transform_a_to_b(a)?;
    let b0 = select_b0(&b, None)?;
    let dec = assemble_db0(&TangentialD::new(&torus), &b0)?;
    let cfg = FlowConfig::from_alpha(0.0, tgrid)?;
    let hp = crate::flow::hardy_projection(&dec, true, h_plus)?;
    // at alpha = 0 the solution energy int ||f_t||^2 dt is exactly the
    // sigma = 1/2 square function of h+, quadratured cell-exactly with
    // its off-grid tails
    let sq = crate::flow::square_function_norm(&dec, &cfg, &hp)?;
    let lhs = sq.value + sq.tail;
    let f = crate::flow::cauchy_extension(&dec, &cfg, &hp)?;
    let lhs_grid = funcnorms::weighted_norm(&f, 0.0)?;
    // boundary restriction f_0 = Lambda^{1/2} h+ and its split Sobolev norms
    let f0 = apply_lambda_power(&dec, 0.5, &hp)?;
    let m = torus.m;
    let comps = torus.comps();
    let mut normal = f0.clone();
    let mut tangential = f0.clone();
    for site in 0..torus.sites() {
        for c in 0..comps {
            if c < m {
                tangential.at_mut(site)[c] = ZERO;
            } else {
                normal.at_mut(site)[c] = ZERO;
            }
        }
    }
    let rhs =
        funcnorms::sobolev_norm(&normal, -0.5)? * funcnorms::sobolev_norm(&tangential, -0.5)?;
    let ratio = lhs / rhs.max(1e-300);
    let mut report =
        FunctionalReport::new("rellich_ratio", ratio, GridMeta::half_space(&torus, tgrid));
    report.entries.insert("lhs_energy".into(), lhs);
    report.entries.insert("lhs_grid_quadrature".into(), lhs_grid);
    report.entries.insert("rhs_product".into(), rhs);
    // well-posedness verdicts of both problems at sigma = 1/2
    let proj = hardy_projection_ea(
        &dec,
        &PerturbationField::zero(&torus, tgrid),
        &cfg,
        &SolverOptions::default(),
    )?;
    let neu = restriction_map(&dec, &proj, RestrictionKind::Neumann)?;
    let dir = restriction_map(&dec, &proj, RestrictionKind::Dirichlet)?;
    report
        .entries
        .insert("neumann_sigma_min".into(), neu.sigma_min);
    report
        .entries
        .insert("dirichlet_sigma_min".into(), dir.sigma_min);
    report.entries.insert(
        "well_posed_both".into(),
        if neu.well_posed && dir.well_posed {
            1.0
        } else {
            0.0
        },
    );
    for w in warnings {
        report.push_note(w);
    }
    Ok(report)
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub contraction: f64,
    pub e_sup: f64,
    pub e_star: f64,
    pub verdict: String,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct SweepResult {
    pub kind: String,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,sigma_min,sigma_max,contraction,e_sup,e_star,verdict\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.eps, r.sigma_min, r.sigma_max, r.contraction, r.e_sup, r.e_star, r.verdict
            ));
        }
        out
    }
}

/// Re-run the restriction conditioning along A0 + eps * direction. For
/// t-independent directions the perturbed projector is assembled directly
/// from the perturbed operator; t-dependent directions go through the
/// Neumann series, and a diverging series is recorded in the row instead
/// of aborting the sweep.
pub fn perturbation_sweep(
    a0: &CoefficientTensor,
    direction: &CoefficientTensor,
    eps_list: &[f64],
    tgrid: &TGrid,
    alpha: f64,
    kind: RestrictionKind,
) -> Result<SweepResult> {
    if !a0.t_independent {
        return Err(Error::DimensionUnsupported(
            "sweeps start from t-independent base coefficients",
        ));
    }
    let mut rows = Vec::new();
    for &eps in eps_list {
        let t_dep = !direction.t_independent;
        let mut a = CoefficientTensor::from_fn(&a0.torus, tgrid, !t_dep, |_, _, _, _| ZERO);
        let c = a0.comps();
        let t_len = a.t_len();
        for ti in 0..t_len {
            for site in 0..a0.torus.sites() {
                let base = a0.sample(0, site).to_vec();
                let dir = direction.sample(ti, site).to_vec();
                let off = (ti * a0.torus.sites() + site) * c * c;
                for k in 0..c * c {
                    a.values[off + k] = base[k] + eps * dir[k];
                }
            }
        }
        let row = (|| -> Result<SweepRow> {
            let rep = check_accretivity(&mut a)?;
            if !rep.accretive {
                return Err(Error::NotAccretive { kappa: rep.kappa });
            }
            let b = transform_a_to_b(&a)?;
            let b0 = select_b0(&b, None)?;
            let mut e = extract_e(&b, &b0)?;
            let e_star = if t_dep {
                let v = crate::coeff::carleson_dahlberg_norm(&e)?;
                e.cd_norm = Some(v);
                v
            } else {
                0.0
            };
            let dec = assemble_db0(&TangentialD::new(&a0.torus), &b0)?;
            let cfg = FlowConfig::from_alpha(alpha, tgrid)?;
            let proj = hardy_projection_ea(&dec, &e, &cfg, &SolverOptions::default())?;
            let cond = restriction_map(&dec, &proj, kind)?;
            Ok(SweepRow {
                eps,
                sigma_min: cond.sigma_min,
                sigma_max: cond.sigma_max,
                contraction: proj.contraction,
                e_sup: e.sup_norm,
                e_star,
                verdict: if cond.well_posed {
                    "well_posed".into()
                } else {
                    "ill_posed".into()
                },
            })
        })();
        match row {
            Ok(r) => rows.push(r),
            Err(err) => rows.push(SweepRow {
                eps,
                sigma_min: f64::NAN,
                sigma_max: f64::NAN,
                contraction: f64::NAN,
                e_sup: f64::NAN,
                e_star: f64::NAN,
                verdict: format!("failed: {err}"),
            }),
        }
    }
    Ok(SweepResult {
        kind: format!("{kind:?}"),
        rows,
    })
}

/// Well-posedness duality between a coefficient tensor and its adjoint:
/// the verdicts at trace exponent -s for A match those at -(1-s) for A*.
pub fn duality_check(
    a: &CoefficientTensor,
    sigmas: &[f64],
    tgrid: &TGrid,
) -> Result<FunctionalReport> {
    if !a.t_independent {
        return Err(Error::DimensionUnsupported(
            "duality check needs t-independent coefficients",
        ));
    }
    let torus = a.torus.clone();
    let build = |coeffs: &CoefficientTensor| -> Result<SpectralDecomp> {
        let b = transform_a_to_b(coeffs)?;
        let b0 = select_b0(&b, None)?;
        assemble_db0(&TangentialD::new(&torus), &b0)
    };
    let dec = build(a)?;
    let a_star = a.adjoint();
    let dec_star = build(&a_star)?;
    let e0 = PerturbationField::zero(&torus, tgrid);
    let opts = SolverOptions::default();
    let mut report =
        FunctionalReport::new("wp_duality", 1.0, GridMeta::half_space(&torus, tgrid));
    let mut all_agree = true;
    for (i, &s) in sigmas.iter().enumerate() {
        let cfg_a = FlowConfig::from_sigma(s, tgrid)?;
        let cfg_star = FlowConfig::from_sigma(1.0 - s, tgrid)?;
        let proj_a = hardy_projection_ea(&dec, &e0, &cfg_a, &opts)?;
        let proj_star = hardy_projection_ea(&dec_star, &e0, &cfg_star, &opts)?;
        for kind in [RestrictionKind::Neumann, RestrictionKind::Dirichlet] {
            let ca = restriction_map(&dec, &proj_a, kind)?;
            let cs = restriction_map(&dec_star, &proj_star, kind)?;
            let tag = match kind {
                RestrictionKind::Neumann => "neu",
                RestrictionKind::Dirichlet => "dir",
            };
            report
                .entries
                .insert(format!("{tag}_{i}_sigma_min_a"), ca.sigma_min);
            report
                .entries
                .insert(format!("{tag}_{i}_sigma_min_astar"), cs.sigma_min);
            if ca.well_posed != cs.well_posed {
                all_agree = false;
            }
        }
    }
    report.value = if all_agree { 1.0 } else { 0.0 };
    Ok(report)
}
