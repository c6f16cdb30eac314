//! Function-space machinery on the discretized half-space: weighted
//! L2(t^alpha) norms, Whitney averages, the non-tangential maximal
//! functional N, the Carleson functional C and area functional A, the
//! N_{2,2} / C_{2,2} norms and their duality pairing, homogeneous Sobolev
//! norms, and the slab-sup functional.

use crate::error::{Error, Result};
use crate::funcalc::SpectralDecomp;
use crate::grid::{dft_slice, BoundaryField, HalfSpaceField, TGrid, TorusGrid, MAX_BOUNDARY_DIM};
use crate::report::{FunctionalReport, GridMeta};

/// Discrete Whitney regions W(t,x) = {(s,y): 1/2 < s/t < 2, |y-x| < t}
/// with the aperture constants fixed.
pub struct WhitneyGeometry<'a> {
    pub torus: &'a TorusGrid,
    pub tgrid: &'a TGrid,
}

impl<'a> WhitneyGeometry<'a> {
    pub fn new(torus: &'a TorusGrid, tgrid: &'a TGrid) -> Self {
        Self { torus, tgrid }
    }

    /// s-indices whose quadrature cell meets (t/2, 2t), with clipped weights.
    pub fn s_range(&self, t: f64) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = t / 2.0;
        let hi = 2.0 * t;
        (0..self.tgrid.len()).filter_map(move |i| {
            let w = self.tgrid.weight_clipped(i, 0.0, lo, hi);
            (w > 0.0).then_some((i, w))
        })
    }

    /// How many Whitney regions contain each grid node; the cover/overlap
    /// diagnostic (max and mean over nodes).
    pub fn overlap_report(&self) -> FunctionalReport {
        let t_len = self.tgrid.len();
        let mut counts = vec![0usize; t_len];
        for j in 0..t_len {
            let t = self.tgrid.nodes[j];
            for (i, _) in self.s_range(t) {
                counts[i] += 1;
            }
        }
        let max = counts.iter().copied().max().unwrap_or(0) as f64;
        let mean = counts.iter().sum::<usize>() as f64 / t_len.max(1) as f64;
        let covered = counts.iter().filter(|&&c| c > 0).count();
        FunctionalReport::new(
            "whitney_overlap",
            max,
            GridMeta::half_space(self.torus, self.tgrid),
        )
        .with_entry("mean", mean)
        .with_entry("covered_fraction", covered as f64 / t_len.max(1) as f64)
    }
}

/// Number of lattice offsets per axis strictly closer than `radius`.
fn lateral_extent(torus: &TorusGrid, radius: f64) -> i64 {
    if radius <= 0.0 {
        return -1;
    }
    ((radius / torus.spacing()).ceil() as i64 - 1).max(-1)
}

/// Lateral quadrature of `slice` over the window {|y - x| < radius}: the
/// sampled sum times the true window measure over the sample count. For
/// windows wider than the lateral spacing this is the standard
/// trapezoid-type rule; below the spacing the measure factor keeps the
/// discrete functional consistent with its continuum scaling.
fn window_integral(
    torus: &TorusGrid,
    slice: &[f64],
    prefix: &[f64],
    center: usize,
    radius: f64,
) -> f64 {
    let npts = torus.points as i64;
    let d = lateral_extent(torus, radius);
    if d < 0 {
        return 0.0;
    }
    match torus.n {
        1 => {
            let measure = (2.0 * radius).min(torus.period);
            if 2 * d + 1 >= npts {
                return prefix[torus.points] * (torus.period / npts as f64);
            }
            let count = (2 * d + 1) as f64;
            let lo = center as i64 - d;
            let hi = center as i64 + d; // inclusive
            let range = |a: i64, b: i64| -> f64 {
                // inclusive site range within [0, N)
                prefix[(b + 1) as usize] - prefix[a as usize]
            };
            let sum = if lo >= 0 && hi < npts {
                range(lo, hi)
            } else if lo < 0 {
                range(0, hi) + range(lo + npts, npts - 1)
            } else {
                range(lo, npts - 1) + range(0, hi - npts)
            };
            sum * measure / count
        }
        _ => {
            let half = npts / 2;
            let lo = (-d).max(-half);
            let hi = d.min(half - 1);
            let dx = torus.spacing();
            let r2 = radius * radius;
            let mut acc = 0.0;
            let mut count = 0usize;
            let (cx, cy) = (center as i64 % npts, center as i64 / npts);
            for oy in lo..=hi {
                let wy = (oy as f64 * dx).powi(2);
                if wy >= r2 {
                    continue;
                }
                let y = (cy + oy).rem_euclid(npts);
                for ox in lo..=hi {
                    let dist2 = (ox as f64 * dx).powi(2) + wy;
                    if dist2 < r2 {
                        let x = (cx + ox).rem_euclid(npts);
                        acc += slice[(y * npts + x) as usize];
                        count += 1;
                    }
                }
            }
            if count == 0 {
                return 0.0;
            }
            let measure = (std::f64::consts::PI * r2).min(torus.period * torus.period);
            acc * measure / count as f64
        }
    }
}

fn build_prefix(slice: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(slice.len() + 1);
    p.push(0.0);
    let mut acc = 0.0;
    for v in slice {
        acc += v;
        p.push(acc);
    }
    p
}

/// Scalar samples |f(t_j, x_k)| (vector magnitude per node).
fn magnitude_grid(f: &HalfSpaceField) -> Vec<Vec<f64>> {
    let comps = f.torus.comps();
    let sites = f.torus.sites();
    (0..f.tgrid.len())
        .map(|j| {
            let s = f.slice(j);
            (0..sites)
                .map(|k| {
                    s[k * comps..(k + 1) * comps]
                        .iter()
                        .map(|v| v.norm_sqr())
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect()
}

/// Whitney L2 average W2 f(t,x) = t^{-(1+n)/2} ||f||_{L2(W(t,x))} on the grid.
pub fn whitney_l2_average(f: &HalfSpaceField) -> Vec<Vec<f64>> {
    let torus = &f.torus;
    let geom = WhitneyGeometry::new(torus, &f.tgrid);
    let mags = magnitude_grid(f);
    let sq: Vec<Vec<f64>> = mags
        .iter()
        .map(|sl| sl.iter().map(|v| v * v).collect())
        .collect();
    let prefixes: Vec<Vec<f64>> = sq.iter().map(|sl| build_prefix(sl)).collect();
    let sites = torus.sites();
    let mut out = vec![vec![0.0; sites]; f.tgrid.len()];
    for j in 0..f.tgrid.len() {
        let t = f.tgrid.nodes[j];
        let scale = t.powf(-(1.0 + torus.n as f64) / 2.0);
        for k in 0..sites {
            let mut acc = 0.0;
            for (i, wt) in geom.s_range(t) {
                acc += wt * window_integral(torus, &sq[i], &prefixes[i], k, t);
            }
            out[j][k] = scale * acc.sqrt();
        }
    }
    out
}

/// Whitney L-infinity average of a scalar grid function.
pub fn whitney_linf_average(torus: &TorusGrid, tgrid: &TGrid, g: &[f64]) -> Vec<f64> {
    let sites = torus.sites();
    let geom = WhitneyGeometry { torus, tgrid };
    let npts = torus.points as i64;
    let mut out = vec![0.0; tgrid.len() * sites];
    for j in 0..tgrid.len() {
        let t = tgrid.nodes[j];
        let d = lateral_extent(torus, t);
        for k in 0..sites {
            let mut m: f64 = 0.0;
            for (i, _) in geom.s_range(t) {
                let slice = &g[i * sites..(i + 1) * sites];
                if d < 0 {
                    continue;
                }
                match torus.n {
                    1 => {
                        if 2 * d + 1 >= npts {
                            for v in slice {
                                m = m.max(*v);
                            }
                        } else {
                            for o in -d..=d {
                                let l = (k as i64 + o).rem_euclid(npts) as usize;
                                m = m.max(slice[l]);
                            }
                        }
                    }
                    _ => {
                        let half = npts / 2;
                        let (cx, cy) = (k as i64 % npts, k as i64 / npts);
                        let dx = torus.spacing();
                        for oy in (-d).max(-half)..=d.min(half - 1) {
                            for ox in (-d).max(-half)..=d.min(half - 1) {
                                let dist2 = ((ox * ox + oy * oy) as f64) * dx * dx;
                                if dist2 < t * t {
                                    let x = (cx + ox).rem_euclid(npts);
                                    let y = (cy + oy).rem_euclid(npts);
                                    m = m.max(slice[(y * npts + x) as usize]);
                                }
                            }
                        }
                    }
                }
            }
            out[j * sites + k] = m;
        }
    }
    out
}

/// Carleson functional of a scalar grid function, followed by the sup over
/// boundary points:  sup_x sup_r r^{-n} sum over the box {s<r, |y-x|<r-s}.
pub fn carleson_sup_scalar(torus: &TorusGrid, tgrid: &TGrid, g: &[f64]) -> f64 {
    let c = carleson_functional_scalar(torus, tgrid, g);
    c.into_iter().fold(0.0, f64::max)
}

/// Radii at which the Carleson sup is evaluated: transverse nodes plus
/// lateral grid scales.
fn carleson_radii(torus: &TorusGrid, tgrid: &TGrid) -> Vec<f64> {
    let mut radii: Vec<f64> = tgrid.nodes.clone();
    let dx = torus.spacing();
    for k in 1..=torus.points / 2 {
        radii.push(k as f64 * dx);
    }
    radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
    radii.dedup();
    radii
}

/// Pointwise Carleson functional C g(x) of a scalar grid function.
pub fn carleson_functional_scalar(torus: &TorusGrid, tgrid: &TGrid, g: &[f64]) -> Vec<f64> {
    let sites = torus.sites();
    let prefixes: Vec<Vec<f64>> = (0..tgrid.len())
        .map(|i| build_prefix(&g[i * sites..(i + 1) * sites]))
        .collect();
    let radii = carleson_radii(torus, tgrid);
    let mut out = vec![0.0; sites];
    for (k, o) in out.iter_mut().enumerate() {
        let mut best: f64 = 0.0;
        for &r in &radii {
            let mut acc = 0.0;
            for i in 0..tgrid.len() {
                if tgrid.cell(i).0 >= r {
                    break;
                }
                let wt = tgrid.weight_clipped(i, 0.0, 0.0, r);
                if wt <= 0.0 {
                    continue;
                }
                let lateral = r - tgrid.nodes[i];
                if lateral <= 0.0 {
                    continue;
                }
                acc += wt
                    * window_integral(
                        torus,
                        &g[i * sites..(i + 1) * sites],
                        &prefixes[i],
                        k,
                        lateral,
                    );
            }
            best = best.max(acc / r.powi(torus.n as i32));
        }
        *o = best;
    }
    out
}

/// Pointwise area functional A g(x) of a scalar grid function.
pub fn area_functional_scalar(torus: &TorusGrid, tgrid: &TGrid, g: &[f64]) -> Vec<f64> {
    let sites = torus.sites();
    let prefixes: Vec<Vec<f64>> = (0..tgrid.len())
        .map(|i| build_prefix(&g[i * sites..(i + 1) * sites]))
        .collect();
    let mut out = vec![0.0; sites];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..tgrid.len() {
            let s = tgrid.nodes[i];
            let wt = tgrid.weight(i, 0.0) * s.powi(-(torus.n as i32));
            acc += wt
                * window_integral(
                    torus,
                    &g[i * sites..(i + 1) * sites],
                    &prefixes[i],
                    k,
                    s,
                );
        }
        *o = acc;
    }
    out
}

fn l2_over_boundary(torus: &TorusGrid, values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() * torus.site_weight()).sqrt()
}

/// Weighted squared norm: the quadrature of iint |f|^2 t^alpha dt dx.
pub fn weighted_norm(f: &HalfSpaceField, alpha: f64) -> Result<f64> {
    if alpha.abs() > 1.0 {
        return Err(Error::UnsupportedAlpha { alpha });
    }
    let wx = f.torus.site_weight();
    let mut acc = 0.0;
    for j in 0..f.tgrid.len() {
        let wt = f.tgrid.weight(j, alpha);
        let s: f64 = f.slice(j).iter().map(|v| v.norm_sqr()).sum();
        acc += wt * s * wx;
    }
    Ok(acc)
}

/// ||N(W2 f)||_2: cone supremum of Whitney L2 averages, then l2 over the
/// boundary.
pub fn nontangential_norm(f: &HalfSpaceField) -> f64 {
    let torus = &f.torus;
    let w2 = whitney_l2_average(f);
    let sites = torus.sites();
    let npts = torus.points as i64;
    let mut sup = vec![0.0f64; sites];
    for j in 0..f.tgrid.len() {
        let s = f.tgrid.nodes[j];
        let d = lateral_extent(torus, s);
        if d < 0 {
            continue;
        }
        for k in 0..sites {
            let v = w2[j][k];
            if v == 0.0 {
                continue;
            }
            // node (s, x_k) is seen from boundary points within distance s
            match torus.n {
                1 => {
                    if 2 * d + 1 >= npts {
                        for sv in sup.iter_mut() {
                            *sv = sv.max(v);
                        }
                    } else {
                        for o in -d..=d {
                            let l = (k as i64 + o).rem_euclid(npts) as usize;
                            sup[l] = sup[l].max(v);
                        }
                    }
                }
                _ => {
                    let half = npts / 2;
                    let (cx, cy) = (k as i64 % npts, k as i64 / npts);
                    let dx = torus.spacing();
                    for oy in (-d).max(-half)..=d.min(half - 1) {
                        for ox in (-d).max(-half)..=d.min(half - 1) {
                            let dist2 = ((ox * ox + oy * oy) as f64) * dx * dx;
                            if dist2 < s * s {
                                let x = (cx + ox).rem_euclid(npts);
                                let y = (cy + oy).rem_euclid(npts);
                                let idx = (y * npts + x) as usize;
                                sup[idx] = sup[idx].max(v);
                            }
                        }
                    }
                }
            }
        }
    }
    l2_over_boundary(torus, &sup)
}

/// ||C(W2 g)||_2.
pub fn carleson_norm(g: &HalfSpaceField) -> f64 {
    let w2 = whitney_l2_average(g);
    let flat: Vec<f64> = w2.into_iter().flatten().collect();
    let c = carleson_functional_scalar(&g.torus, &g.tgrid, &flat);
    l2_over_boundary(&g.torus, &c)
}

/// ||A(W2 g)||_2.
pub fn area_norm(g: &HalfSpaceField) -> f64 {
    let w2 = whitney_l2_average(g);
    let flat: Vec<f64> = w2.into_iter().flatten().collect();
    let a = area_functional_scalar(&g.torus, &g.tgrid, &flat);
    l2_over_boundary(&g.torus, &a)
}

/// |iint <f, g> dt dx| over the unweighted half-space measure.
pub fn duality_pairing(f: &HalfSpaceField, g: &HalfSpaceField) -> f64 {
    f.inner(g).norm()
}

/// Pairing against the product of the N_{2,2} and C_{2,2} norms.
pub fn duality_check(f: &HalfSpaceField, g: &HalfSpaceField) -> FunctionalReport {
    let pairing = duality_pairing(f, g);
    let nf = nontangential_norm(f);
    let cg = carleson_norm(g);
    let constant = if nf * cg > 0.0 {
        pairing / (nf * cg)
    } else {
        0.0
    };
    FunctionalReport::new(
        "n22_c22_duality",
        constant,
        GridMeta::half_space(&f.torus, &f.tgrid),
    )
    .with_entry("pairing", pairing)
    .with_entry("n22_f", nf)
    .with_entry("c22_g", cg)
}

/// Homogeneous Sobolev norm via the Fourier multiplier |xi|^s on nonzero
/// modes. The zero mode contributes only at s = 0; a nonzero mean with
/// s < 0 is rejected.
pub fn sobolev_norm(h: &BoundaryField, s: f64) -> Result<f64> {
    let grid = &h.grid;
    let spec = dft_slice(h);
    let comps = grid.comps();
    let zero_mode: f64 = spec.at(0).iter().map(|v| v.norm_sqr()).sum();
    let total: f64 = spec.coeffs.iter().map(|v| v.norm_sqr()).sum();
    if s < 0.0 && zero_mode > 1e-16 * total.max(1e-300) {
        return Err(Error::NonzeroMeanNegativeOrder);
    }
    let mut xi = [0.0f64; MAX_BOUNDARY_DIM];
    let mut acc = 0.0;
    for p in 0..grid.sites() {
        grid.xi(p, &mut xi[..grid.n]);
        let norm = xi[..grid.n].iter().map(|x| x * x).sum::<f64>().sqrt();
        let factor = if norm == 0.0 {
            if s == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            norm.powf(2.0 * s)
        };
        if factor == 0.0 {
            continue;
        }
        let e: f64 = spec.at(p).iter().map(|v| v.norm_sqr()).sum();
        acc += factor * e;
        let _ = comps;
    }
    Ok((acc * grid.site_weight()).sqrt())
}

/// sup_t t^{-1} int_t^{2t} ||Lambda^{-sigma} f_s||_2^2 ds over grid nodes.
pub fn slab_sup_norm(dec: &SpectralDecomp, f: &HalfSpaceField, sigma: f64) -> Result<f64> {
    // apply Lambda^{-sigma} per slice (finite on H: the spectrum avoids 0)
    let t_len = f.tgrid.len();
    let mut norms_sq = vec![0.0f64; t_len];
    for j in 0..t_len {
        let slice = f.slice_field(j);
        let res = crate::grid::h_membership_residual(&slice);
        if res > 1e-6 && slice.norm_l2() > 1e-12 {
            return Err(Error::SliceNotInH {
                slice: j,
                rel: res,
            });
        }
        let mapped = crate::funcalc::apply_lambda_power(dec, -sigma, &slice)?;
        norms_sq[j] = mapped.norm_l2().powi(2);
    }
    let mut sup: f64 = 0.0;
    for j in 0..t_len {
        let t = f.tgrid.nodes[j];
        let mut acc = 0.0;
        for (i, &v) in norms_sq.iter().enumerate() {
            let w = f.tgrid.weight_clipped(i, 0.0, t, 2.0 * t);
            acc += w * v;
        }
        sup = sup.max(acc / t);
    }
    Ok(sup)
}

/// sup_t t^{-1} int_t^{2t} ||f_s||_2^2 ds without any operator applied;
/// the left side of the local-slab sandwich.
pub fn slab_sup_plain(f: &HalfSpaceField) -> f64 {
    let t_len = f.tgrid.len();
    let norms_sq: Vec<f64> = (0..t_len).map(|j| f.slice_norm(j).powi(2)).collect();
    let mut sup: f64 = 0.0;
    for j in 0..t_len {
        let t = f.tgrid.nodes[j];
        let mut acc = 0.0;
        for (i, &v) in norms_sq.iter().enumerate() {
            let w = f.tgrid.weight_clipped(i, 0.0, t, 2.0 * t);
            acc += w * v;
        }
        sup = sup.max(acc / t);
    }
    sup
}

/// int_0^infty ||f_s||_2^2 ds/s, the right side of the local-slab sandwich.
pub fn log_energy(f: &HalfSpaceField) -> f64 {
    (0..f.tgrid.len())
        .map(|j| f.tgrid.weight(j, -1.0) * f.slice_norm(j).powi(2))
        .sum()
}
