//! The decay semigroup e^{-t Lambda}, Hardy projections chi_+-(D B0),
//! the extension Lambda^sigma e^{-t Lambda} E0+ of Hardy boundary data,
//! and weighted square-function norms.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::funcalc::{abs_c, apply_profile, apply_symbol, chi_plus_c, pow_abs_c, SpectralDecomp, Symbol};
use crate::grid::{BoundaryField, HalfSpaceField, TGrid};

/// Relative change above which boundary data is rejected as not lying in
/// the Hardy range.
pub const HARDY_RANGE_TOL: f64 = 1e-8;

/// Weight and trace-regularity parameters tied by sigma = (alpha + 1)/2.
#[derive(Clone, Debug)]
pub struct FlowConfig {
    pub sigma: f64,
    pub alpha: f64,
    pub tgrid: TGrid,
}

impl FlowConfig {
    pub fn from_alpha(alpha: f64, tgrid: &TGrid) -> Result<Self> {
        if alpha.abs() > 1.0 {
            return Err(Error::UnsupportedAlpha { alpha });
        }
        Ok(Self {
            sigma: (alpha + 1.0) / 2.0,
            alpha,
            tgrid: tgrid.clone(),
        })
    }

    pub fn from_sigma(sigma: f64, tgrid: &TGrid) -> Result<Self> {
        let alpha = 2.0 * sigma - 1.0;
        if alpha.abs() > 1.0 {
            return Err(Error::UnsupportedAlpha { alpha });
        }
        Ok(Self {
            sigma,
            alpha,
            tgrid: tgrid.clone(),
        })
    }
}

/// e^{-t Lambda} h for t >= 0.
pub fn semigroup(dec: &SpectralDecomp, t: f64, h: &BoundaryField) -> Result<BoundaryField> {
    if t < 0.0 {
        return Err(Error::NegativeTime { t });
    }
    apply_symbol(dec, &Symbol::ExpDecay(t), h)
}

/// Hardy projection E0+- = chi_+-(D B0).
pub fn hardy_projection(dec: &SpectralDecomp, plus: bool, h: &BoundaryField) -> Result<BoundaryField> {
    apply_symbol(
        dec,
        if plus { &Symbol::ChiPlus } else { &Symbol::ChiMinus },
        h,
    )
}

/// Project onto the Hardy range and fail if that changes the datum by
/// more than [`HARDY_RANGE_TOL`] relative.
pub fn require_hardy_plus(dec: &SpectralDecomp, h: &BoundaryField) -> Result<BoundaryField> {
    let p = hardy_projection(dec, true, h)?;
    let norm = h.norm_l2();
    if norm > 0.0 {
        let mut diff = 0.0f64;
        for (a, b) in p.values.iter().zip(&h.values) {
            diff += (a - b).norm_sqr();
        }
        let rel = (diff * h.grid.site_weight()).sqrt() / norm;
        if rel > HARDY_RANGE_TOL {
            return Err(Error::NotInHardyRange { rel });
        }
    }
    Ok(p)
}

/// The extension f(t) = Lambda^sigma e^{-t Lambda} E0+ h+ sampled on the
/// transverse grid. For sigma > 0 the unbounded power is evaluated
/// jointly with the decay factor per eigenvalue.
pub fn cauchy_extension(
    dec: &SpectralDecomp,
    cfg: &FlowConfig,
    h_plus: &BoundaryField,
) -> Result<HalfSpaceField> {
    let hp = require_hardy_plus(dec, h_plus)?;
    let sigma = cfg.sigma;
    apply_profile(dec, &hp, &cfg.tgrid, &move |z, t| {
        chi_plus_c(z) * pow_abs_c(z, sigma) * (-t * abs_c(z)).exp()
    })
}

/// Quadrature value of int ||(t Lambda)^sigma e^{-t Lambda} E0+ h||^2 dt/t
/// over the grid, with an estimate of the mass lost to truncation.
#[derive(Clone, Debug)]
pub struct SquareFunctionValue {
    pub value: f64,
    /// Estimated off-grid tail (below t_min and above t_max).
    pub tail: f64,
}

const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Gauss-Legendre quadrature of t |-> g(t) against dt/t over [a, b],
/// computed in the log variable.
fn gl_log_cell(a: f64, b: f64, g: &mut dyn FnMut(f64) -> f64) -> f64 {
    let (ua, ub) = (a.ln(), b.ln());
    let half = 0.5 * (ub - ua);
    let mid = 0.5 * (ua + ub);
    let mut acc = 0.0;
    for (x, w) in GL8_NODES.iter().zip(&GL8_WEIGHTS) {
        acc += w * g((mid + half * x).exp());
    }
    acc * half
}

pub fn square_function_norm(
    dec: &SpectralDecomp,
    cfg: &FlowConfig,
    h: &BoundaryField,
) -> Result<SquareFunctionValue> {
    let sigma = cfg.sigma;
    let (coords, _) = dec.boundary_to_h(h);
    let wsite = dec.torus.site_weight();
    let tg = &cfg.tgrid;

    let mut value = 0.0f64;
    let mut tail = 0.0f64;
    for b in dec.blocks() {
        let u = &coords[b.offset..b.offset + b.dim];
        match &b.form {
            crate::funcalc::BlockForm::Eigen { .. } => {
                let mut c = b.to_channels(u);
                for (ck, lam) in c.iter_mut().zip(&b.vals) {
                    *ck *= chi_plus_c(*lam);
                }
                let mut norm_sq = |t: f64| -> f64 {
                    let d: Vec<Complex64> = c
                        .iter()
                        .zip(&b.vals)
                        .map(|(ck, lam)| {
                            let a = abs_c(*lam);
                            ck * (t * a).powf(sigma) * (-t * a).exp()
                        })
                        .collect();
                    let mut acc = Complex64::default();
                    for i in 0..b.dim {
                        let mut row = Complex64::default();
                        for j in 0..b.dim {
                            row += b.gram[i * b.dim + j] * d[j];
                        }
                        acc += d[i].conj() * row;
                    }
                    acc.re.max(0.0)
                };
                for j in 0..tg.len() {
                    let (a, bb) = tg.cell(j);
                    value += gl_log_cell(a, bb, &mut norm_sq);
                }
                // tails on geometric extensions of the grid
                let ratio = tg.ratio;
                let mut hi = tg.t_max;
                for _ in 0..400 {
                    let next = hi * ratio;
                    let add = gl_log_cell(hi, next, &mut norm_sq);
                    tail += add;
                    hi = next;
                    if add < 1e-18 * (value + tail).max(1e-300) {
                        break;
                    }
                }
                if sigma > 0.0 {
                    let mut lo = tg.t_min;
                    for _ in 0..400 {
                        let next = lo / ratio;
                        let add = gl_log_cell(next, lo, &mut norm_sq);
                        tail += add;
                        lo = next;
                        if add < 1e-18 * (value + tail).max(1e-300) {
                            break;
                        }
                    }
                } else {
                    // sigma = 0: no decay toward the boundary, the lower
                    // tail diverges logarithmically
                    if norm_sq(tg.t_min) > 1e-300 {
                        tail = f64::INFINITY;
                    }
                }
            }
            crate::funcalc::BlockForm::Schur { .. } => {
                let mut norm_sq = |t: f64| -> f64 {
                    let v = b
                        .apply_fn(
                            &|z| {
                                chi_plus_c(z)
                                    * pow_abs_c(z, sigma)
                                    * t.powf(sigma)
                                    * (-t * abs_c(z)).exp()
                            },
                            u,
                        )
                        .expect("triangular evaluation");
                    v.iter().map(|x| x.norm_sqr()).sum()
                };
                for j in 0..tg.len() {
                    let (a, bb) = tg.cell(j);
                    value += gl_log_cell(a, bb, &mut norm_sq);
                }
            }
        }
    }
    Ok(SquareFunctionValue {
        value: value * wsite,
        tail: tail * wsite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{select_b0, transform_a_to_b, CoefficientTensor};
    use crate::funcalc::{assemble_db0, TangentialD};
    use crate::grid::{project_h, TorusGrid};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_setup(npts: usize, tgrid: TGrid) -> (SpectralDecomp, TorusGrid, TGrid) {
        let torus = TorusGrid::new(1, 1, npts, 2.0 * std::f64::consts::PI).unwrap();
        let a = CoefficientTensor::identity(&torus, &tgrid);
        let b = transform_a_to_b(&a).unwrap();
        let b0 = select_b0(&b, None).unwrap();
        let dec = assemble_db0(&TangentialD::new(&torus), &b0).unwrap();
        (dec, torus, tgrid)
    }

    fn random_in_h(torus: &TorusGrid, seed: u64) -> BoundaryField {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut h = BoundaryField::zeros(torus);
        for v in &mut h.values {
            *v = Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        }
        project_h(&h)
    }

    /// Boundary field occupying the E0+ range at a single frequency.
    fn hardy_mode(dec: &SpectralDecomp, torus: &TorusGrid, freq: usize) -> BoundaryField {
        let h = random_in_h(torus, 1234 + freq as u64);
        let p = hardy_projection(dec, true, &h).unwrap();
        let mut s = crate::grid::dft_slice(&p);
        for q in 0..torus.sites() {
            if q != freq {
                for v in s.at_mut(q) {
                    *v = Complex64::default();
                }
            }
        }
        let mut out = crate::grid::idft_slice(&s);
        out.in_h = true;
        out
    }

    #[test]
    fn semigroup_identity_law_and_contraction() {
        let tg = TGrid::geometric(1e-2, 1e1, 24).unwrap();
        let (dec, torus, _) = identity_setup(32, tg);
        let h = random_in_h(&torus, 2);
        let e0 = semigroup(&dec, 0.0, &h).unwrap();
        let mut dev = 0.0f64;
        for (a, b) in e0.values.iter().zip(&h.values) {
            dev = dev.max((a - b).norm());
        }
        assert!(dev < 1e-12, "t=0 must act as the identity on H");

        let (s, t) = (0.3, 0.55);
        let two_step = semigroup(&dec, t, &semigroup(&dec, s, &h).unwrap()).unwrap();
        let one_step = semigroup(&dec, s + t, &h).unwrap();
        let mut dev2 = 0.0f64;
        for (a, b) in two_step.values.iter().zip(&one_step.values) {
            dev2 = dev2.max((a - b).norm());
        }
        assert!(dev2 < 1e-10 * h.norm_l2());
        assert!(one_step.norm_l2() <= h.norm_l2() * (1.0 + 1e-12));
        assert!(matches!(
            semigroup(&dec, -1.0, &h),
            Err(Error::NegativeTime { .. })
        ));
    }

    #[test]
    fn hardy_projections_sum_and_idempotency() {
        let tg = TGrid::geometric(1e-2, 1e1, 24).unwrap();
        let (dec, torus, _) = identity_setup(32, tg);
        let h = random_in_h(&torus, 3);
        let p = hardy_projection(&dec, true, &h).unwrap();
        let q = hardy_projection(&dec, false, &h).unwrap();
        let mut sum = p.clone();
        sum.axpy(Complex64::new(1.0, 0.0), &q);
        let mut dev = 0.0f64;
        for (a, b) in sum.values.iter().zip(&h.values) {
            dev = dev.max((a - b).norm());
        }
        assert!(dev < 1e-10, "E0+ + E0- = I on H, dev {dev}");
        let pp = hardy_projection(&dec, true, &p).unwrap();
        let mut dev2 = 0.0f64;
        for (a, b) in pp.values.iter().zip(&p.values) {
            dev2 = dev2.max((a - b).norm());
        }
        assert!(dev2 < 1e-10);
    }

    #[test]
    fn hardy_plus_eigenvector_for_identity_coefficients() {
        // B0 = I, n = m = 1, xi > 0: E0+ projects onto span{(i, 1)/sqrt(2)}
        let tg = TGrid::geometric(1e-2, 1e1, 16).unwrap();
        let (dec, torus, _) = identity_setup(16, tg);
        let freq = 3; // bin 3 <-> xi = +3
        let h = random_in_h(&torus, 9);
        let p = hardy_projection(&dec, true, &h).unwrap();
        let hs = crate::grid::dft_slice(&h);
        let ps = crate::grid::dft_slice(&p);
        let isq = 1.0 / 2.0f64.sqrt();
        let v = [Complex64::new(0.0, isq), Complex64::new(isq, 0.0)];
        let hv = hs.at(freq)[0] * v[0].conj() + hs.at(freq)[1] * v[1].conj();
        for c in 0..2 {
            let expect = hv * v[c];
            assert!(
                (ps.at(freq)[c] - expect).norm() < 1e-12 * h.norm_l2(),
                "component {c}"
            );
        }
    }

    #[test]
    fn cauchy_extension_single_mode_poisson_decay() {
        let tg = TGrid::geometric(1e-3, 1e1, 60).unwrap();
        let (dec, torus, tgrid) = identity_setup(16, tg);
        let cfg = FlowConfig::from_alpha(-1.0, &tgrid).unwrap();
        assert_eq!(cfg.sigma, 0.0);
        let freq = 2;
        let hp = hardy_mode(&dec, &torus, freq);
        let f = cauchy_extension(&dec, &cfg, &hp).unwrap();
        let xi = torus.xi_norm(freq);
        for (j, &t) in tgrid.nodes.iter().enumerate() {
            let factor = (-t * xi).exp();
            let slice = f.slice_field(j);
            let mut dev = 0.0f64;
            for (a, b) in slice.values.iter().zip(&hp.values) {
                dev = dev.max((a - b * factor).norm());
            }
            assert!(dev < 1e-12 * hp.norm_l2().max(1e-12), "node {j}");
        }
    }

    #[test]
    fn cauchy_extension_rejects_non_hardy_data() {
        let tg = TGrid::geometric(1e-2, 1e1, 24).unwrap();
        let (dec, torus, tgrid) = identity_setup(16, tg);
        let cfg = FlowConfig::from_alpha(0.0, &tgrid).unwrap();
        let h = random_in_h(&torus, 77); // generic: also has an E0- part
        assert!(matches!(
            cauchy_extension(&dec, &cfg, &h),
            Err(Error::NotInHardyRange { .. })
        ));
    }

    #[test]
    fn sigma_one_extension_is_minus_time_derivative() {
        let tg = TGrid::geometric(1e-2, 5.0, 240).unwrap();
        let (dec, torus, tgrid) = identity_setup(16, tg);
        let cfg = FlowConfig::from_alpha(1.0, &tgrid).unwrap();
        assert_eq!(cfg.sigma, 1.0);
        let hp = {
            let h = random_in_h(&torus, 5);
            hardy_projection(&dec, true, &h).unwrap()
        };
        let f = cauchy_extension(&dec, &cfg, &hp).unwrap();
        let mut worst = 0.0f64;
        for j in 1..tgrid.len() - 1 {
            let tm = tgrid.nodes[j - 1];
            let tp = tgrid.nodes[j + 1];
            let em = semigroup(&dec, tm, &hp).unwrap();
            let ep = semigroup(&dec, tp, &hp).unwrap();
            let slice = f.slice_field(j);
            let mut dev = 0.0f64;
            let mut scale = 0.0f64;
            for ((a, b), c) in em.values.iter().zip(&ep.values).zip(&slice.values) {
                let fd = -(b - a) / (tp - tm);
                dev = dev.max((fd - c).norm());
                scale = scale.max(c.norm());
            }
            worst = worst.max(dev / scale.max(1e-12));
        }
        assert!(worst < 5e-3, "finite-difference mismatch {worst}");
    }

    #[test]
    fn square_function_single_mode_half() {
        // B0 = I, sigma = 1/2, single mode: int t|xi| e^{-2t|xi|} dt/t = 1/2;
        // the truncation below t_min leaves ~2 t_min relative deficit
        let tg = TGrid::geometric(1e-7, 40.0, 240).unwrap();
        let (dec, torus, tgrid) = identity_setup(16, tg);
        let cfg = FlowConfig::from_alpha(0.0, &tgrid).unwrap();
        let hp = hardy_mode(&dec, &torus, 1);
        let sq = square_function_norm(&dec, &cfg, &hp).unwrap();
        let expect = 0.5 * hp.norm_l2().powi(2);
        assert!(
            (sq.value - expect).abs() < 1e-6 * expect,
            "value {} vs {}",
            sq.value,
            expect
        );
        assert!(sq.tail < 1e-6 * expect);
    }

    #[test]
    fn square_function_vanishes_on_minus_range() {
        let tg = TGrid::geometric(1e-3, 1e1, 60).unwrap();
        let (dec, torus, tgrid) = identity_setup(16, tg);
        let cfg = FlowConfig::from_alpha(0.5, &tgrid).unwrap();
        let h = random_in_h(&torus, 21);
        let hm = hardy_projection(&dec, false, &h).unwrap();
        let sq = square_function_norm(&dec, &cfg, &hm).unwrap();
        assert!(sq.value < 1e-20 * hm.norm_l2().powi(2));
    }

    #[test]
    fn square_function_ratio_bounded_over_random_data() {
        let tg = TGrid::geometric(1e-4, 1e2, 120).unwrap();
        let (dec, torus, tgrid) = identity_setup(32, tg);
        let cfg = FlowConfig::from_alpha(0.0, &tgrid).unwrap();
        let mut worst: f64 = 0.0;
        for seed in 0..30 {
            let h = random_in_h(&torus, 400 + seed);
            let sq = square_function_norm(&dec, &cfg, &h).unwrap();
            worst = worst.max(sq.value / h.norm_l2().powi(2));
        }
        // for B0 = I and sigma = 1/2 the per-mode ratio is exactly 1/2
        // times the E0+ fraction of the datum
        assert!(worst <= 0.5 + 1e-9, "ratio {worst}");
        assert!(worst > 0.05);
    }
}
