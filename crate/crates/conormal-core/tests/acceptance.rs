//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line with the measured values at the pinned tolerances.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion lines.

use std::time::Instant;

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use conormal_core::bvp;
use conormal_core::coeff::{
    check_accretivity, extract_e, select_b0, transform_a_to_b, CoefficientTensor, Role,
    TransformedTensor,
};
use conormal_core::flow::{self, FlowConfig};
use conormal_core::funcalc::{
    self, apply_lambda_power, assemble_db0, SpectralDecomp, TangentialD,
};
use conormal_core::funcnorms;
use conormal_core::grid::{dft_slice, idft_slice, project_h, BoundaryField, TGrid, TorusGrid};
use conormal_core::oracle;
use conormal_core::sio;
use conormal_core::solver::{self, SolverOptions};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn random_boundary(torus: &TorusGrid, seed: u64) -> BoundaryField {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut h = BoundaryField::zeros(torus);
    for v in &mut h.values {
        *v = Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    }
    h
}

fn band_limit(h: &BoundaryField, lo: i64, hi: i64) -> BoundaryField {
    let mut s = dft_slice(h);
    for p in 0..h.grid.sites() {
        let k = h.grid.bin_to_int(p);
        if k < lo || k > hi {
            for v in s.at_mut(p) {
                *v = Complex64::default();
            }
        }
    }
    idft_slice(&s)
}

fn identity_dec(torus: &TorusGrid, tgrid: &TGrid) -> SpectralDecomp {
    let a = CoefficientTensor::identity(torus, tgrid);
    let b = transform_a_to_b(&a).unwrap();
    let b0 = select_b0(&b, None).unwrap();
    assemble_db0(&TangentialD::new(torus), &b0).unwrap()
}

/// Random accretive x-independent coefficients around the identity.
fn random_accretive_b0(
    torus: &TorusGrid,
    tgrid: &TGrid,
    seed: u64,
    spread: f64,
) -> TransformedTensor {
    let c = torus.comps();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut vals = vec![Complex64::default(); c * c];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = Complex64::new(r.random_range(-spread..spread), r.random_range(-spread..spread));
            if i % (c + 1) == 0 {
                *v += ONE;
            }
        }
        let mut a = CoefficientTensor::from_fn(torus, tgrid, true, |_, _, row, col| {
            vals[row * c + col]
        });
        if check_accretivity(&mut a).unwrap().accretive {
            return TransformedTensor {
                tensor: a,
                role: Role::B0,
            };
        }
    }
}

/// Coefficients (1 + delta g(t, x)) I with a t-localized profile; the
/// multiplier E inherits size ~ delta.
fn bump_coefficients(torus: &TorusGrid, tgrid: &TGrid, delta: f64) -> CoefficientTensor {
    CoefficientTensor::from_fn(torus, tgrid, delta == 0.0, |t, x, r, c| {
        if r == c {
            let bump = delta / ((t.ln()).powi(2) + 1.0);
            Complex64::new(1.0 + bump * (1.0 + 0.3 * x[0].cos()), 0.0)
        } else {
            Complex64::default()
        }
    })
}

#[test]
fn criterion_01_classical_cauchy_reproduction() {
    let start = Instant::now();
    let torus = TorusGrid::new(1, 1, 256, 2.0 * std::f64::consts::PI).unwrap();
    let tgrid = TGrid::geometric(1e-3, 10.0, 160).unwrap();
    let dec = identity_dec(&torus, &tgrid);
    // band-limited data on the decaying half of the spectrum
    let h = band_limit(&random_boundary(&torus, 1), -16, -1);
    let hp = flow::hardy_projection(&dec, true, &h).unwrap();
    let cfg = FlowConfig::from_alpha(-1.0, &tgrid).unwrap();
    assert_eq!(cfg.sigma, 0.0);
    let spectral = flow::cauchy_extension(&dec, &cfg, &hp).unwrap();
    let kernel = oracle::cauchy_kernel_extension(&hp, &tgrid).unwrap();
    let mut max_rel: f64 = 0.0;
    for (j, &t) in tgrid.nodes.iter().enumerate() {
        if !(0.1..=1.0).contains(&t) {
            continue;
        }
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for (a, b) in kernel.slice(j).iter().zip(spectral.slice(j)) {
            num += (a - b).norm_sqr();
            den += b.norm_sqr();
        }
        max_rel = max_rel.max((num / den).sqrt());
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = max_rel < 1e-3 && secs < 10.0;
    println!(
        "[{}] criterion 1: classical kernel agreement {max_rel:.3e} (< 1e-3) in {secs:.2} s (< 10 s)",
        verdict(ok)
    );
    assert!(ok, "max_rel = {max_rel}, elapsed = {secs}");
}

#[test]
fn criterion_02_functional_calculus_identity_suite() {
    // identity coefficients
    let mut worst_identity: f64 = 0.0;
    for (n, npts) in [(1usize, 64usize), (2, 16)] {
        let torus = TorusGrid::new(n, 1, npts, 2.0 * std::f64::consts::PI).unwrap();
        let tgrid = TGrid::geometric(1e-2, 10.0, 16).unwrap();
        let dec = identity_dec(&torus, &tgrid);
        let rep = funcalc::verify_calculus(&dec).unwrap();
        worst_identity = worst_identity.max(rep.value);
    }
    // twenty random accretive x-independent draws per dimension
    let mut worst_random: f64 = 0.0;
    for (n, npts) in [(1usize, 64usize), (2, 16)] {
        let torus = TorusGrid::new(n, 1, npts, 2.0 * std::f64::consts::PI).unwrap();
        let tgrid = TGrid::geometric(1e-2, 10.0, 16).unwrap();
        for k in 0..20u64 {
            let b0 = random_accretive_b0(&torus, &tgrid, 100 * n as u64 + k, 0.25);
            let dec = assemble_db0(&TangentialD::new(&torus), &b0).unwrap();
            let rep = funcalc::verify_calculus(&dec).unwrap();
            worst_random = worst_random.max(rep.value);
        }
    }
    let ok = worst_identity < 1e-8 && worst_random < 1e-6;
    println!(
        "[{}] criterion 2: identity-coefficient deviations {worst_identity:.3e} (< 1e-8), random accretive {worst_random:.3e} (< 1e-6)",
        verdict(ok)
    );
    assert!(ok);
}

#[test]
fn criterion_03_singular_integral_oracle_equivalence() {
    let torus = TorusGrid::new(1, 1, 64, 2.0 * std::f64::consts::PI).unwrap();
    let tgrid = TGrid::geometric(0.1, 1.0, 40).unwrap();
    let dec = identity_dec(&torus, &tgrid);
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        // smooth: low modes, smooth t-profile
        let base = band_limit(&random_boundary(&torus, 300 + k), -4, 4);
        let base = project_h(&base);
        let mut f = conormal_core::grid::HalfSpaceField::zeros(&torus, &tgrid);
        for (j, &t) in tgrid.nodes.iter().enumerate() {
            let mut slice = base.clone();
            let c = Complex64::new((1.0 + t).recip(), 0.2 * (t).sin());
            slice.scale(c);
            f.set_slice(j, &slice);
        }
        f.in_h = true;
        let fast = sio::apply_s(&dec, &f).unwrap();
        let dense = oracle::dense_apply_s(&dec, &f, 64).unwrap();
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for (a, b) in dense.values.iter().zip(&fast.values) {
            num += (a - b).norm_sqr();
            den += b.norm_sqr();
        }
        worst = worst.max((num / den).sqrt());
    }
    // single-eigenvalue closed form 1 - e^{-t lam}
    let block = &dec.blocks()[0];
    let ch = (0..block.dim)
        .find(|&k| block.vals[k].re > 0.0)
        .unwrap();
    let lam = block.vals[ch];
    let mut chan = vec![Complex64::default(); block.dim];
    chan[ch] = ONE;
    let u = block.from_channels(&chan);
    let mut coords = vec![Complex64::default(); dec.h_dim()];
    coords[block.offset..block.offset + block.dim].copy_from_slice(&u);
    let series: Vec<Vec<Complex64>> = (0..tgrid.len()).map(|_| coords.clone()).collect();
    let single = dec.series_to_field(&tgrid, &series);
    let sf = sio::apply_s(&dec, &single).unwrap();
    let (out_series, _) = dec.field_to_h_series(&sf);
    let mut closed_dev: f64 = 0.0;
    for (j, &t) in tgrid.nodes.iter().enumerate() {
        let got = block.to_channels(&out_series[j][block.offset..block.offset + block.dim])[ch];
        let expect = 1.0 - (-lam * t).exp();
        closed_dev = closed_dev.max((got - expect).norm());
    }
    let ok = worst < 1e-4 && closed_dev < 1e-10;
    println!(
        "[{}] criterion 3: dense-oracle agreement {worst:.3e} (< 1e-4), closed form {closed_dev:.3e} (< 1e-10)",
        verdict(ok)
    );
    assert!(ok);
}

#[test]
fn criterion_04_representation_round_trip() {
    let torus = TorusGrid::new(1, 1, 32, 2.0 * std::f64::consts::PI).unwrap();
    let tgrid = TGrid::geometric(1e-3, 10.0, 80).unwrap();
    let small_torus = TorusGrid::new(1, 1, 8, 2.0 * std::f64::consts::PI).unwrap();
    let small_tgrid = TGrid::geometric(1e-2, 5.0, 32).unwrap();
    let opts = SolverOptions::default();
    let mut worst_residual: f64 = 0.0;
    let mut worst_recovery: f64 = 0.0;
    let mut worst_direct: f64 = 0.0;
    let mut worst_ratio_gap: f64 = 0.0;
    for (di, delta) in [0.0f64, 0.05, 0.1].iter().enumerate() {
        for (ai, alpha) in [-0.5f64, 0.0, 0.5].iter().enumerate() {
            // main-grid solve and round trip
            let a = bump_coefficients(&torus, &tgrid, *delta);
            let b = transform_a_to_b(&a).unwrap();
            let b0 = select_b0(&b, None).unwrap();
            let e = extract_e(&b, &b0).unwrap();
            let dec = assemble_db0(&TangentialD::new(&torus), &b0).unwrap();
            let cfg = FlowConfig::from_alpha(*alpha, &tgrid).unwrap();
            let h = band_limit(
                &random_boundary(&torus, (di * 3 + ai) as u64 + 40),
                -4,
                4,
            );
            let hp = flow::hardy_projection(&dec, true, &h).unwrap();
            let out = solver::solve_cauchy(&dec, &e, &cfg, &hp, &opts).unwrap();
            let repr = solver::verify_representation(&dec, &e, &cfg, &out.field).unwrap();
            worst_residual = worst_residual.max(repr.residual_rel);
            let mut d = repr.h_plus.clone();
            d.axpy(-ONE, &out.h_plus);
            worst_recovery = worst_recovery.max(d.norm_l2() / out.h_plus.norm_l2());
            if *delta > 0.0 {
                let n = out.increment_norms.len();
                if n >= 2 {
                    let ratio = out.increment_norms[n - 1] / out.increment_norms[n - 2];
                    worst_ratio_gap = worst_ratio_gap.max(
                        (ratio - out.contraction_estimate).abs()
                            / out.contraction_estimate.max(1e-300),
                    );
                }
            }
            // dense-factorization cross-check on the small grid
            let a2 = bump_coefficients(&small_torus, &small_tgrid, *delta);
            let b2 = transform_a_to_b(&a2).unwrap();
            let b02 = select_b0(&b2, None).unwrap();
            let e2 = extract_e(&b2, &b02).unwrap();
            let dec2 = assemble_db0(&TangentialD::new(&small_torus), &b02).unwrap();
            let cfg2 = FlowConfig::from_alpha(*alpha, &small_tgrid).unwrap();
            let h2 = band_limit(
                &random_boundary(&small_torus, (di * 3 + ai) as u64 + 60),
                -3,
                3,
            );
            let hp2 = flow::hardy_projection(&dec2, true, &h2).unwrap();
            let series = solver::solve_cauchy(&dec2, &e2, &cfg2, &hp2, &opts).unwrap();
            let dense = oracle::direct_solve(&dec2, &e2, &cfg2, &hp2).unwrap();
            let mut num = 0.0f64;
            for (x, y) in series.field.values.iter().zip(&dense.values) {
                num += (x - y).norm_sqr();
            }
            let den = funcnorms::weighted_norm(&dense, 0.0).unwrap();
            worst_direct = worst_direct.max((num / den).sqrt());
        }
    }
    let ok = worst_residual < 1e-6
        && worst_recovery < 1e-6
        && worst_direct < 1e-8
        && worst_ratio_gap < 0.2;
    println!(
        "[{}] criterion 4: residual {worst_residual:.3e} (< 1e-6), datum recovery {worst_recovery:.3e} (< 1e-6), direct-solve gap {worst_direct:.3e} (< 1e-8), increment-ratio gap {worst_ratio_gap:.3} (< 0.2)",
        verdict(ok)
    );
    assert!(ok);
}

struct EstimateSet {
    slab_lower: f64,
    n22_upper: f64,
    ca_hi: f64,
    ac_hi: f64,
    duality: f64,
    square_fn: f64,
    s_norm: [f64; 3],
    slab_sup: f64,
}

fn measure_constants(npts: usize, t_nodes: usize, trials: u64) -> EstimateSet {
    let torus = TorusGrid::new(1, 1, npts, 2.0 * std::f64::consts::PI).unwrap();
    let tgrid = TGrid::geometric(1e-3, 10.0, t_nodes).unwrap();
    let dec = identity_dec(&torus, &tgrid);
    let cfg = FlowConfig::from_alpha(0.0, &tgrid).unwrap();
    let mut slab_lower: f64 = 0.0;
    let mut n22_upper: f64 = 0.0;
    let mut ca_hi: f64 = 0.0;
    let mut ac_hi: f64 = 0.0;
    let mut duality: f64 = 0.0;
    let mut square_fn: f64 = 0.0;
    let mut slab_sup: f64 = 0.0;
    for k in 0..trials {
        let f = sio::random_field_in_h(&dec, &tgrid, 7000 + k);
        let n22_sq = funcnorms::nontangential_norm(&f).powi(2);
        slab_lower = slab_lower.max(funcnorms::slab_sup_plain(&f) / n22_sq);
        n22_upper = n22_upper.max(n22_sq / funcnorms::log_energy(&f));
        let c = funcnorms::carleson_norm(&f);
        let a = funcnorms::area_norm(&f);
        ca_hi = ca_hi.max(c / a);
        ac_hi = ac_hi.max(a / c);
        // the duality constant is probed by self-pairing (correlated
        // pairs approach the supremum; independent pairs only measure
        // random cancellation)
        duality = duality.max(funcnorms::duality_check(&f, &f).value);
        // square function and slab-sup on flow data
        let h = project_h(&random_boundary(&torus, 11_000 + k));
        let sq = flow::square_function_norm(&dec, &cfg, &h).unwrap();
        square_fn = square_fn.max(sq.value / h.norm_l2().powi(2));
        let hp = flow::hardy_projection(&dec, true, &h).unwrap();
        let fext = flow::cauchy_extension(&dec, &cfg, &hp).unwrap();
        let ss = funcnorms::slab_sup_norm(&dec, &fext, cfg.sigma).unwrap();
        slab_sup = slab_sup.max(ss / funcnorms::weighted_norm(&fext, 0.0).unwrap());
    }
    let mut s_norm = [0.0f64; 3];
    for (i, alpha) in [-0.5f64, 0.0, 0.5].iter().enumerate() {
        s_norm[i] = sio::estimate_operator_norm(
            &dec,
            &sio::ProbeOp::S,
            sio::NormPair::Weighted(*alpha),
            &tgrid,
            3,
            77,
        )
        .unwrap()
        .value;
    }
    EstimateSet {
        slab_lower,
        n22_upper,
        ca_hi,
        ac_hi,
        duality,
        square_fn,
        s_norm,
        slab_sup,
    }
}

#[test]
fn criterion_05_estimate_stability_under_refinement() {
    let coarse = measure_constants(128, 80, 100);
    let fine = measure_constants(256, 160, 100);
    let pairs = [
        ("slab<=N22", coarse.slab_lower, fine.slab_lower),
        ("N22<=log-energy", coarse.n22_upper, fine.n22_upper),
        ("C/A", coarse.ca_hi, fine.ca_hi),
        ("A/C", coarse.ac_hi, fine.ac_hi),
        ("duality", coarse.duality, fine.duality),
        ("square-function", coarse.square_fn, fine.square_fn),
        ("S-norm(-0.5)", coarse.s_norm[0], fine.s_norm[0]),
        ("S-norm(0)", coarse.s_norm[1], fine.s_norm[1]),
        ("S-norm(0.5)", coarse.s_norm[2], fine.s_norm[2]),
        ("slab-sup", coarse.slab_sup, fine.slab_sup),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (name, a, b) in pairs {
        let factor = (a / b).max(b / a);
        ok &= factor < 2.0;
        detail.push_str(&format!("{name} {a:.3}->{b:.3} (x{factor:.2}) "));
    }
    println!(
        "[{}] criterion 5: constants stable within factor 2 across grids: {detail}",
        verdict(ok)
    );
    assert!(ok, "{detail}");
}

#[test]
fn criterion_06_endpoint_contrast() {
    // The t-range widens 1e3 -> 1e6 with the upper end anchored inside
    // the torus scale; same-space probes at alpha = -1 and +1 against
    // the endpoint-space probes.
    let torus = TorusGrid::new(1, 1, 64, 2.0 * std::f64::consts::PI).unwrap();
    let run = |t_min: f64, nodes: usize| -> [f64; 4] {
        let tgrid = TGrid::geometric(t_min, 10.0, nodes).unwrap();
        let dec = identity_dec(&torus, &tgrid);
        let mut out = [0.0f64; 4];
        for (i, (pair, trials)) in [
            (sio::NormPair::Weighted(-1.0), 3u32),
            (sio::NormPair::EndpointMinus, 12),
            (sio::NormPair::Weighted(1.0), 3),
            (sio::NormPair::EndpointPlus, 12),
        ]
        .into_iter()
        .enumerate()
        {
            out[i] = sio::estimate_operator_norm(&dec, &sio::ProbeOp::S, pair, &tgrid, trials, 5)
                .unwrap()
                .value;
        }
        out
    };
    let narrow = run(1e-2, 80);
    let wide = run(1e-5, 160);
    let growth_minus = wide[0] / narrow[0];
    let stable_minus = (wide[1] / narrow[1]).max(narrow[1] / wide[1]);
    let growth_plus = wide[2] / narrow[2];
    let stable_plus = (wide[3] / narrow[3]).max(narrow[3] / wide[3]);
    let ok_stability = stable_minus < 1.5 && stable_plus < 1.5;
    let ok_growth = growth_minus >= 2.0 && growth_plus >= 2.0;
    println!(
        "[{}] criterion 6: same-space growth x{growth_minus:.2} / x{growth_plus:.2} (spec asks >= 2), endpoint-space stability x{stable_minus:.2} / x{stable_plus:.2} (< 1.5)",
        verdict(ok_growth && ok_stability)
    );
    if !ok_growth {
        println!(
            "       note: the same-space norms do grow without bound, but only at the \
             square-root-of-log rate of the endpoint failure; doubling the log-range \
             caps the norm growth at sqrt(2) < 2, so the factor-2 threshold cannot be \
             met by any norm-scaled probe (measured against exact dense norms)."
        );
    }
    assert!(
        ok_growth && ok_stability,
        "growth ({growth_minus:.3}, {growth_plus:.3}) >= 2 required; stability ({stable_minus:.3}, {stable_plus:.3}) < 1.5 required"
    );
}

#[test]
fn criterion_07_trace_limits() {
    let torus = TorusGrid::new(1, 1, 64, 2.0 * std::f64::consts::PI).unwrap();
    let tgrid = TGrid::geometric(1e-5, 25.0, 220).unwrap();
    let a = bump_coefficients(&torus, &tgrid, 0.05);
    let b = transform_a_to_b(&a).unwrap();
    let b0 = select_b0(&b, None).unwrap();
    let e = extract_e(&b, &b0).unwrap();
    let dec = assemble_db0(&TangentialD::new(&torus), &b0).unwrap();
    let h_data = band_limit(&random_boundary(&torus, 21), -4, 4);
    let opts = SolverOptions::default();

    // alpha = 0: square-Dini traces
    let cfg = FlowConfig::from_alpha(0.0, &tgrid).unwrap();
    let hp = flow::hardy_projection(&dec, true, &h_data).unwrap();
    let out = solver::solve_cauchy(&dec, &e, &cfg, &hp, &opts).unwrap();
    let (h, _) = solver::extract_trace(&dec, &e, &cfg, &out.field).unwrap();
    let dini = solver::trace_limit_check(&dec, &cfg, &out.field, &h, solver::TraceMode::Dini)
        .unwrap();
    let dini_ok = dini.value < 1e-4
        && dini.entry("lower_monotone_toward_boundary").unwrap() == 1.0
        && dini.entry("upper_final").unwrap() < 1e-6;

    // alpha = 1/2: pointwise L2 traces
    let cfg2 = FlowConfig::from_alpha(0.5, &tgrid).unwrap();
    let out2 = solver::solve_cauchy(&dec, &e, &cfg2, &hp, &opts).unwrap();
    let (h2, _) = solver::extract_trace(&dec, &e, &cfg2, &out2.field).unwrap();
    let l2 = solver::trace_limit_check(&dec, &cfg2, &out2.field, &h2, solver::TraceMode::L2)
        .unwrap();
    let l2_ok = l2.value < 1e-4
        && l2.entry("lower_monotone_toward_boundary").unwrap() == 1.0
        && l2.entry("upper_final").unwrap() < 1e-6;

    let ok = dini_ok && l2_ok;
    println!(
        "[{}] criterion 7: square-Dini lower {:.3e} (< 1e-4, monotone), upper {:.3e} (< 1e-6); L2 lower {:.3e}, upper {:.3e}",
        verdict(ok),
        dini.value,
        dini.entry("upper_final").unwrap(),
        l2.value,
        l2.entry("upper_final").unwrap()
    );
    assert!(ok);
}

fn sobolev_band(npts: usize, seeds: std::ops::Range<u64>) -> (f64, f64) {
    let torus = TorusGrid::new(1, 1, npts, 2.0 * std::f64::consts::PI).unwrap();
    let tgrid = TGrid::geometric(1e-2, 10.0, 12).unwrap();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for b0_seed in 0..10u64 {
        let b0 = random_accretive_b0(&torus, &tgrid, 500 + b0_seed, 0.25);
        let dec = assemble_db0(&TangentialD::new(&torus), &b0).unwrap();
        for seed in seeds.clone() {
            let h = project_h(&random_boundary(&torus, 10_000 + seed));
            for sigma in [0.0, 0.5, 1.0] {
                let lhs = apply_lambda_power(&dec, -sigma, &h).unwrap().norm_l2();
                let rhs = funcnorms::sobolev_norm(&h, -sigma).unwrap();
                let ratio = lhs / rhs;
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
        }
    }
    (lo, hi)
}

#[test]
fn criterion_08_sobolev_equivalence() {
    let (lo_a, hi_a) = sobolev_band(64, 0..10);
    let (lo_b, hi_b) = sobolev_band(128, 0..10);
    let band_a = hi_a / lo_a;
    let band_b = hi_b / lo_b;
    let drift = (hi_b / hi_a).max(hi_a / hi_b).max(lo_b / lo_a).max(lo_a / lo_b);
    let ok = band_a <= 4.0 && band_b <= 4.0 && drift < 2.0;
    println!(
        "[{}] criterion 8: equivalence band x{band_a:.2} at N=64, x{band_b:.2} at N=128 (<= 4), endpoint drift x{drift:.2} (< 2)",
        verdict(ok)
    );
    assert!(ok);
}

fn hermitian_x_dependent(
    torus: &TorusGrid,
    tgrid: &TGrid,
    seed: u64,
    spread: f64,
) -> CoefficientTensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let c = torus.comps();
    let mut a = CoefficientTensor::from_fn(torus, tgrid, true, |_, _, _, _| Complex64::default());
    for site in 0..torus.sites() {
        let mut m = vec![Complex64::default(); c * c];
        for v in m.iter_mut() {
            *v = Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        }
        let off = site * c * c;
        for i in 0..c {
            for j in 0..c {
                let h = 0.5 * (m[i * c + j] + m[j * c + i].conj()) * spread;
                a.values[off + i * c + j] = h + if i == j { ONE } else { Complex64::default() };
            }
        }
    }
    a
}

#[test]
fn criterion_09_rellich_ratios_and_verdicts() {
    // identity coefficients: per-mode ratio 1 at machine-level accuracy
    let torus = TorusGrid::new(1, 1, 16, 2.0 * std::f64::consts::PI).unwrap();
    let tgrid = TGrid::geometric(1e-4, 60.0, 160).unwrap();
    let a = CoefficientTensor::identity(&torus, &tgrid);
    let dec = identity_dec(&torus, &tgrid);
    let mut h = BoundaryField::zeros(&torus);
    for site in 0..torus.sites() {
        let x = site as f64 * torus.spacing();
        let ph = Complex64::new(0.0, 3.0 * x).exp();
        h.at_mut(site)[0] = ph;
        h.at_mut(site)[1] = Complex64::new(0.2, -0.4) * ph;
    }
    let hp = flow::hardy_projection(&dec, true, &h).unwrap();
    let rep = bvp::rellich_check(&a, &hp, &tgrid).unwrap();
    let identity_dev = (rep.value - 1.0).abs();

    // fifty random Hermitian x-dependent draws on two transverse grids
    let torus50 = TorusGrid::new(1, 1, 16, 2.0 * std::f64::consts::PI).unwrap();
    let mut bands = Vec::new();
    let mut verdict_ok = true;
    let mut sigma_min_worst = f64::INFINITY;
    for t_nodes in [80usize, 160] {
        let tg = TGrid::geometric(1e-3, 30.0, t_nodes).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for seed in 0..50u64 {
            let a = hermitian_x_dependent(&torus50, &tg, 900 + seed, 0.3);
            let mut a2 = a.clone();
            if !check_accretivity(&mut a2).unwrap().accretive {
                continue;
            }
            let hseed = project_h(&random_boundary(&torus50, 2000 + seed));
            let b = transform_a_to_b(&a).unwrap();
            let b0 = select_b0(&b, None).unwrap();
            let dec = assemble_db0(&TangentialD::new(&torus50), &b0).unwrap();
            let hp = flow::hardy_projection(&dec, true, &hseed).unwrap();
            let rep = bvp::rellich_check(&a, &hp, &tg).unwrap();
            lo = lo.min(rep.value);
            hi = hi.max(rep.value);
            verdict_ok &= rep.entry("well_posed_both").unwrap() == 1.0;
            sigma_min_worst = sigma_min_worst
                .min(rep.entry("neumann_sigma_min").unwrap())
                .min(rep.entry("dirichlet_sigma_min").unwrap());
        }
        bands.push((lo, hi));
    }
    let band_drift = (bands[1].1 / bands[0].1)
        .max(bands[0].1 / bands[1].1)
        .max(bands[1].0 / bands[0].0)
        .max(bands[0].0 / bands[1].0);
    let ok = identity_dev < 1e-8 && band_drift < 2.0 && verdict_ok && sigma_min_worst > 1e-3;
    println!(
        "[{}] criterion 9: identity ratio deviation {identity_dev:.3e} (< 1e-8), band [{:.2}, {:.2}] vs [{:.2}, {:.2}] drift x{band_drift:.2}, worst sigma_min {sigma_min_worst:.3e} (> 1e-3)",
        verdict(ok),
        bands[0].0,
        bands[0].1,
        bands[1].0,
        bands[1].1
    );
    assert!(ok);
}

#[test]
fn criterion_10_perturbation_continuity_and_projector_growth() {
    let torus = TorusGrid::new(1, 1, 8, 2.0 * std::f64::consts::PI).unwrap();
    let tgrid = TGrid::geometric(1e-2, 10.0, 24).unwrap();
    // five Hermitian base points and five directions, step 1e-2
    let eps: Vec<f64> = (0..7).map(|k| k as f64 * 1e-2).collect();
    let mut max_jump_rel: f64 = 0.0;
    for base_seed in 0..5u64 {
        let a0 = hermitian_x_dependent(&torus, &tgrid, 3000 + base_seed, 0.2);
        let mut a0_chk = a0.clone();
        assert!(check_accretivity(&mut a0_chk).unwrap().accretive);
        for dir_seed in 0..5u64 {
            let dir = hermitian_x_dependent(&torus, &tgrid, 4000 + dir_seed, 1.0);
            let sweep = bvp::perturbation_sweep(
                &a0,
                &dir,
                &eps,
                &tgrid,
                0.0,
                bvp::RestrictionKind::Neumann,
            )
            .unwrap();
            let s0 = sweep.rows[0].sigma_min;
            for w in sweep.rows.windows(2) {
                if w[0].sigma_min.is_nan() || w[1].sigma_min.is_nan() {
                    continue;
                }
                max_jump_rel = max_jump_rel.max((w[1].sigma_min - w[0].sigma_min).abs() / s0);
            }
        }
    }

    // Hardy projector deviation growth for t-dependent perturbations
    let tgrid2 = TGrid::geometric(1e-2, 10.0, 32).unwrap();
    let cfg = FlowConfig::from_alpha(0.0, &tgrid2).unwrap();
    let mut slopes = Vec::new();
    for delta in [0.025f64, 0.05, 0.075, 0.1] {
        let a = bump_coefficients(&torus, &tgrid2, delta);
        let b = transform_a_to_b(&a).unwrap();
        let b0 = select_b0(&b, None).unwrap();
        let e = extract_e(&b, &b0).unwrap();
        let dec = assemble_db0(&TangentialD::new(&torus), &b0).unwrap();
        let proj =
            bvp::hardy_projection_ea(&dec, &e, &cfg, &SolverOptions::default()).unwrap();
        slopes.push(proj.deviation_from_e0 / e.sup_norm);
    }
    let slope_hi = slopes.iter().fold(0.0f64, |a, &b| a.max(b));
    let slope_lo = slopes.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let linear = slope_hi / slope_lo < 2.0;

    let ok = max_jump_rel < 0.05 && linear;
    println!(
        "[{}] criterion 10: max sigma_min jump {max_jump_rel:.4} (< 0.05), projector deviation slope [{slope_lo:.3}, {slope_hi:.3}] (at most linear growth)",
        verdict(ok)
    );
    assert!(ok);
}
