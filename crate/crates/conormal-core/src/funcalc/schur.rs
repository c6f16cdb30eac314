//! Complex Schur decomposition and matrix functions of triangular
//! factors, used when an eigenvector basis is too ill-conditioned to
//! realize the calculus by diagonalization.
//!
//! The triangular evaluation is the blocked recurrence: eigenvalues are
//! clustered, the Schur form is reordered so clusters are contiguous,
//! atomic blocks are evaluated by a locally convergent Taylor series
//! (coefficients from a trapezoid contour rule), and off-diagonal blocks
//! solve triangular Sylvester equations.

use num_complex::Complex64;

use crate::cmat;
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

fn idx(i: usize, j: usize, dim: usize) -> usize {
    i * dim + j
}

/// Householder reduction to upper Hessenberg form, accumulating Q.
fn hessenberg(a: &mut [Complex64], q: &mut [Complex64], dim: usize) {
    for k in 0..dim.saturating_sub(2) {
        // build the reflector for column k below the subdiagonal
        let mut norm = 0.0f64;
        for i in (k + 1)..dim {
            norm += a[idx(i, k, dim)].norm_sqr();
        }
        let norm = norm.sqrt();
        if norm < 1e-300 {
            continue;
        }
        let x0 = a[idx(k + 1, k, dim)];
        let phase = if x0.norm() > 0.0 {
            x0 / x0.norm()
        } else {
            ONE
        };
        let alpha = -phase * norm;
        let mut v = vec![ZERO; dim];
        v[k + 1] = x0 - alpha;
        for i in (k + 2)..dim {
            v[i] = a[idx(i, k, dim)];
        }
        let vnorm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vnorm2 < 1e-300 {
            continue;
        }
        // A <- (I - 2 v v^H / |v|^2) A
        for j in 0..dim {
            let mut dot = ZERO;
            for i in (k + 1)..dim {
                dot += v[i].conj() * a[idx(i, j, dim)];
            }
            dot *= 2.0 / vnorm2;
            for i in (k + 1)..dim {
                a[idx(i, j, dim)] -= v[i] * dot;
            }
        }
        // A <- A (I - 2 v v^H / |v|^2)
        for i in 0..dim {
            let mut dot = ZERO;
            for j in (k + 1)..dim {
                dot += a[idx(i, j, dim)] * v[j];
            }
            dot *= 2.0 / vnorm2;
            for j in (k + 1)..dim {
                a[idx(i, j, dim)] -= dot * v[j].conj();
            }
        }
        // Q <- Q (I - 2 v v^H / |v|^2)
        for i in 0..dim {
            let mut dot = ZERO;
            for j in (k + 1)..dim {
                dot += q[idx(i, j, dim)] * v[j];
            }
            dot *= 2.0 / vnorm2;
            for j in (k + 1)..dim {
                q[idx(i, j, dim)] -= dot * v[j].conj();
            }
        }
        for i in (k + 2)..dim {
            a[idx(i, k, dim)] = ZERO;
        }
    }
}

/// Complex Givens rotation zeroing the second entry of (f, g).
fn givens(f: Complex64, g: Complex64) -> (f64, Complex64) {
    if g.norm() == 0.0 {
        return (1.0, ZERO);
    }
    if f.norm() == 0.0 {
        return (0.0, g.conj() / g.norm());
    }
    let denom = (f.norm_sqr() + g.norm_sqr()).sqrt();
    let c = f.norm() / denom;
    let s = (f / f.norm()) * g.conj() / denom;
    (c, s)
}

/// Schur decomposition A = Q T Q^H of a general complex matrix via
/// Hessenberg reduction and the shifted QR iteration.
pub fn complex_schur(a_in: &[Complex64], dim: usize) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let mut t = a_in.to_vec();
    let mut q = cmat::identity(dim);
    if dim <= 1 {
        return Ok((q, t));
    }
    hessenberg(&mut t, &mut q, dim);

    let scale: f64 = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let eps = 1e-15 * scale;
    let mut hi = dim - 1; // active block is rows/cols 0..=hi
    let mut iter_guard = 0usize;
    while hi > 0 {
        iter_guard += 1;
        if iter_guard > 60 * dim * dim {
            return Err(Error::EigenFailure("QR iteration stalled".into()));
        }
        // deflate small subdiagonals
        let mut deflated = false;
        for i in (1..=hi).rev() {
            let sub = t[idx(i, i - 1, dim)].norm();
            if sub <= 1e-15 * (t[idx(i, i, dim)].norm() + t[idx(i - 1, i - 1, dim)].norm() + eps) {
                t[idx(i, i - 1, dim)] = ZERO;
                if i == hi {
                    hi -= 1;
                    deflated = true;
                    break;
                }
            }
        }
        if deflated || hi == 0 {
            continue;
        }
        // find the start of the trailing unreduced block
        let mut lo = hi;
        while lo > 0 && t[idx(lo, lo - 1, dim)].norm() > 0.0 {
            lo -= 1;
        }
        // Wilkinson shift from the trailing 2x2
        let h = hi;
        let a11 = t[idx(h - 1, h - 1, dim)];
        let a12 = t[idx(h - 1, h, dim)];
        let a21 = t[idx(h, h - 1, dim)];
        let a22 = t[idx(h, h, dim)];
        let tr = a11 + a22;
        let det = a11 * a22 - a12 * a21;
        let disc = (tr * tr - 4.0 * det).sqrt();
        let mu1 = (tr + disc) / 2.0;
        let mu2 = (tr - disc) / 2.0;
        let shift = if (mu1 - a22).norm() < (mu2 - a22).norm() {
            mu1
        } else {
            mu2
        };
        // implicit shifted QR sweep on the Hessenberg block lo..=hi
        let mut f = t[idx(lo, lo, dim)] - shift;
        let mut g = t[idx(lo + 1, lo, dim)];
        for k in lo..hi {
            let (c, s) = givens(f, g);
            // rows k, k+1 (left rotation)
            for j in 0..dim {
                let x = t[idx(k, j, dim)];
                let y = t[idx(k + 1, j, dim)];
                t[idx(k, j, dim)] = c * x + s * y;
                t[idx(k + 1, j, dim)] = -s.conj() * x + c * y;
            }
            // columns k, k+1 (right rotation)
            for i in 0..dim {
                let x = t[idx(i, k, dim)];
                let y = t[idx(i, k + 1, dim)];
                t[idx(i, k, dim)] = c * x + s.conj() * y;
                t[idx(i, k + 1, dim)] = -s * x + c * y;
            }
            for i in 0..dim {
                let x = q[idx(i, k, dim)];
                let y = q[idx(i, k + 1, dim)];
                q[idx(i, k, dim)] = c * x + s.conj() * y;
                q[idx(i, k + 1, dim)] = -s * x + c * y;
            }
            if k + 2 <= hi {
                f = t[idx(k + 1, k, dim)];
                g = t[idx(k + 2, k, dim)];
            }
        }
    }
    // clean the strict lower triangle
    for i in 0..dim {
        for j in 0..i {
            t[idx(i, j, dim)] = ZERO;
        }
    }
    Ok((q, t))
}

/// Swap the adjacent diagonal entries i, i+1 of an upper-triangular T by a
/// unitary similarity, updating the accumulated basis Q.
fn swap_adjacent(t: &mut [Complex64], q: &mut [Complex64], dim: usize, i: usize) {
    let a = t[idx(i, i, dim)];
    let b = t[idx(i, i + 1, dim)];
    let d = t[idx(i + 1, i + 1, dim)];
    // eigenvector of [[a, b],[0, d]] for eigenvalue d is (b, d - a)
    let v0 = b;
    let v1 = d - a;
    let norm = (v0.norm_sqr() + v1.norm_sqr()).sqrt();
    if norm < 1e-300 {
        return; // equal eigenvalues with no coupling: nothing to do
    }
    let (u0, u1) = (v0 / norm, v1 / norm);
    // unitary G = [[u0, -conj(u1)], [u1, conj(u0)]]; G^H T G swaps the pair
    let g00 = u0;
    let g01 = -u1.conj();
    let g10 = u1;
    let g11 = u0.conj();
    // columns i, i+1: T <- T G, Q <- Q G
    for r in 0..dim {
        let x = t[idx(r, i, dim)];
        let y = t[idx(r, i + 1, dim)];
        t[idx(r, i, dim)] = x * g00 + y * g10;
        t[idx(r, i + 1, dim)] = x * g01 + y * g11;
        let qx = q[idx(r, i, dim)];
        let qy = q[idx(r, i + 1, dim)];
        q[idx(r, i, dim)] = qx * g00 + qy * g10;
        q[idx(r, i + 1, dim)] = qx * g01 + qy * g11;
    }
    // rows i, i+1: T <- G^H T
    for cidx in 0..dim {
        let x = t[idx(i, cidx, dim)];
        let y = t[idx(i + 1, cidx, dim)];
        t[idx(i, cidx, dim)] = g00.conj() * x + g10.conj() * y;
        t[idx(i + 1, cidx, dim)] = g01.conj() * x + g11.conj() * y;
    }
    t[idx(i + 1, i, dim)] = ZERO;
}

/// Group eigenvalues whose mutual distance is below `tol` (transitively).
fn cluster_labels(vals: &[Complex64], tol: f64) -> Vec<usize> {
    let n = vals.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let r = find(parent, parent[i]);
            parent[i] = r;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (vals[i] - vals[j]).norm() <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut labels = vec![0usize; n];
    let mut next = 0usize;
    let mut map = std::collections::HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        let lbl = *map.entry(r).or_insert_with(|| {
            let l = next;
            next += 1;
            l
        });
        labels[i] = lbl;
    }
    labels
}

/// Taylor evaluation of f on an atomic (clustered) triangular block, with
/// coefficients from a trapezoid contour rule around the cluster mean.
fn atomic_block_fn(
    t: &[Complex64],
    dim: usize,
    rows: std::ops::Range<usize>,
    f: &dyn Fn(Complex64) -> Complex64,
) -> Result<Vec<Complex64>> {
    let k = rows.len();
    if k == 1 {
        return Ok(vec![f(t[idx(rows.start, rows.start, dim)])]);
    }
    let mut mu = ZERO;
    for i in rows.clone() {
        mu += t[idx(i, i, dim)];
    }
    mu /= k as f64;
    // cluster spread and a contour radius inside the analyticity domain
    let mut spread = 0.0f64;
    for i in rows.clone() {
        spread = spread.max((t[idx(i, i, dim)] - mu).norm());
    }
    let dist_axis = mu.re.abs().max(1e-12);
    let radius = (0.45 * dist_axis).max(4.0 * spread + 1e-12 * (1.0 + mu.norm()));
    if spread > 0.5 * radius {
        return Err(Error::EigenFailure(
            "eigenvalue cluster too wide for atomic Taylor evaluation".into(),
        ));
    }
    // Taylor coefficients a_j = (1/M) sum f(mu + r e^{i th}) e^{-i j th} / r^j
    const M: usize = 64;
    const MAX_TERMS: usize = 48;
    let mut samples = [ZERO; M];
    for (p, s) in samples.iter_mut().enumerate() {
        let th = 2.0 * std::f64::consts::PI * p as f64 / M as f64;
        *s = f(mu + radius * Complex64::new(th.cos(), th.sin()));
    }
    let mut coeffs = Vec::with_capacity(MAX_TERMS);
    for j in 0..MAX_TERMS.min(M) {
        let mut acc = ZERO;
        for (p, s) in samples.iter().enumerate() {
            let th = -2.0 * std::f64::consts::PI * (j * p) as f64 / M as f64;
            acc += s * Complex64::new(th.cos(), th.sin());
        }
        coeffs.push(acc / (M as f64 * radius.powi(j as i32)));
    }
    // N = T_block - mu I, series sum a_j N^j
    let mut nmat = vec![ZERO; k * k];
    for (bi, i) in rows.clone().enumerate() {
        for (bj, j) in rows.clone().enumerate() {
            if j >= i {
                nmat[bi * k + bj] = t[idx(i, j, dim)] - if i == j { mu } else { ZERO };
            }
        }
    }
    let mut out = vec![ZERO; k * k];
    for i in 0..k {
        out[i * k + i] = coeffs[0];
    }
    let mut power = cmat::identity(k);
    let scale: f64 = nmat.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for cj in coeffs.iter().skip(1) {
        power = cmat::mat_mul(&power, &nmat, k, k, k);
        let term_scale: f64 = power.iter().map(|z| z.norm()).fold(0.0, f64::max) * cj.norm();
        for (o, p) in out.iter_mut().zip(&power) {
            *o += cj * p;
        }
        if term_scale < 1e-18 * (1.0 + scale) {
            break;
        }
    }
    Ok(out)
}

/// f(T) for upper-triangular T via the blocked Parlett recurrence.
/// Returns the matrix in the same coordinates as T.
pub fn triangular_fn(
    t_in: &[Complex64],
    dim: usize,
    f: &dyn Fn(Complex64) -> Complex64,
) -> Result<Vec<Complex64>> {
    if dim == 0 {
        return Ok(Vec::new());
    }
    let mut t = t_in.to_vec();
    let mut w = cmat::identity(dim); // accumulated reordering basis
    let vals: Vec<Complex64> = (0..dim).map(|i| t[idx(i, i, dim)]).collect();
    let scale = vals.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let labels = cluster_labels(&vals, 1e-7 * scale);

    // bubble clusters into contiguous runs (ordered by first appearance)
    let mut target: Vec<usize> = Vec::with_capacity(dim);
    {
        let mut seen = Vec::new();
        for &l in &labels {
            if !seen.contains(&l) {
                seen.push(l);
            }
        }
        for &l in &seen {
            for (i, &li) in labels.iter().enumerate() {
                if li == l {
                    target.push(i);
                }
            }
        }
    }
    // target is the desired permutation of original indices; realize it by
    // adjacent swaps tracked against a mutable position list
    let mut positions: Vec<usize> = (0..dim).collect(); // positions[p] = original index at slot p
    for slot in 0..dim {
        let want = target[slot];
        let mut cur = positions.iter().position(|&x| x == want).unwrap();
        while cur > slot {
            swap_adjacent(&mut t, &mut w, dim, cur - 1);
            positions.swap(cur - 1, cur);
            cur -= 1;
        }
    }

    // contiguous cluster ranges after the reordering
    let mut ranges: Vec<std::ops::Range<usize>> = Vec::new();
    let mut start = 0usize;
    for i in 1..=dim {
        let same = i < dim && labels[positions[i]] == labels[positions[start]];
        if !same {
            ranges.push(start..i);
            start = i;
        }
    }

    let mut fmat = vec![ZERO; dim * dim];
    for r in &ranges {
        let blk = atomic_block_fn(&t, dim, r.clone(), f)?;
        let k = r.len();
        for (bi, i) in r.clone().enumerate() {
            for (bj, j) in r.clone().enumerate() {
                fmat[idx(i, j, dim)] = blk[bi * k + bj];
            }
        }
    }
    // off-diagonal blocks by superdiagonal order: T11 F12 - F12 T22 = F11 T12 - T12 F22
    for sep in 1..ranges.len() {
        for bi in 0..(ranges.len() - sep) {
            let bj = bi + sep;
            let (r1, r2) = (ranges[bi].clone(), ranges[bj].clone());
            let (p, q) = (r1.len(), r2.len());
            // C = F11 T12 - T12 F22 + sum_{bi<bk<bj} (F1k Tk2 - T1k Fk2)
            let mut c = vec![ZERO; p * q];
            for (ii, i) in r1.clone().enumerate() {
                for (jj, j) in r2.clone().enumerate() {
                    let mut acc = ZERO;
                    for k in r1.end..r2.start {
                        acc += fmat[idx(i, k, dim)] * t[idx(k, j, dim)]
                            - t[idx(i, k, dim)] * fmat[idx(k, j, dim)];
                    }
                    for k in r1.clone() {
                        acc += fmat[idx(i, k, dim)] * t[idx(k, j, dim)];
                    }
                    for k in r2.clone() {
                        acc -= t[idx(i, k, dim)] * fmat[idx(k, j, dim)];
                    }
                    c[ii * q + jj] = acc;
                }
            }
            // solve (T11 - t22_jj I) x = c_col + coupling, columns left to right
            let mut x = vec![ZERO; p * q];
            for jj in 0..q {
                let j_global = r2.start + jj;
                let tjj = t[idx(j_global, j_global, dim)];
                let mut rhs = vec![ZERO; p];
                for ii in 0..p {
                    let mut acc = c[ii * q + jj];
                    for kk in 0..jj {
                        let k_global = r2.start + kk;
                        acc += x[ii * q + kk] * t[idx(k_global, j_global, dim)];
                    }
                    rhs[ii] = acc;
                }
                // back substitution with upper-triangular (T11 - tjj I)
                for ii in (0..p).rev() {
                    let i_global = r1.start + ii;
                    let mut acc = rhs[ii];
                    for kk in (ii + 1)..p {
                        let k_global = r1.start + kk;
                        acc -= (t[idx(i_global, k_global, dim)]
                            - if i_global == k_global { tjj } else { ZERO })
                            * x[kk * q + jj];
                    }
                    let diag = t[idx(i_global, i_global, dim)] - tjj;
                    if diag.norm() < 1e-14 * scale {
                        return Err(Error::EigenFailure(
                            "Sylvester solve hit coinciding cluster eigenvalues".into(),
                        ));
                    }
                    x[ii * q + jj] = acc / diag;
                }
            }
            for (ii, i) in r1.clone().enumerate() {
                for (jj, j) in r2.clone().enumerate() {
                    fmat[idx(i, j, dim)] = x[ii * q + jj];
                }
            }
        }
    }
    // undo the reordering: f(T_in) = W f(T_ord) W^H
    let wf = cmat::mat_mul(&w, &fmat, dim, dim, dim);
    let mut wh = vec![ZERO; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            wh[idx(i, j, dim)] = w[idx(j, i, dim)].conj();
        }
    }
    Ok(cmat::mat_mul(&wf, &wh, dim, dim, dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(dim: usize, seed: u64) -> Vec<Complex64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..dim * dim)
            .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect()
    }

    fn unitary_deviation(q: &[Complex64], dim: usize) -> f64 {
        let mut dev = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = ZERO;
                for k in 0..dim {
                    acc += q[idx(k, i, dim)].conj() * q[idx(k, j, dim)];
                }
                let expect = if i == j { ONE } else { ZERO };
                dev = dev.max((acc - expect).norm());
            }
        }
        dev
    }

    #[test]
    fn schur_reconstructs_random_matrices() {
        for dim in [2usize, 3, 5, 8] {
            let a = random_matrix(dim, dim as u64);
            let (q, t) = complex_schur(&a, dim).unwrap();
            assert!(unitary_deviation(&q, dim) < 1e-12);
            // strict lower triangle of T is zero
            for i in 0..dim {
                for j in 0..i {
                    assert_eq!(t[idx(i, j, dim)], ZERO);
                }
            }
            // Q T Q^H == A
            let qt = cmat::mat_mul(&q, &t, dim, dim, dim);
            let mut qh = vec![ZERO; dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    qh[idx(i, j, dim)] = q[idx(j, i, dim)].conj();
                }
            }
            let rec = cmat::mat_mul(&qt, &qh, dim, dim, dim);
            let scale: f64 = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
            for (r, x) in rec.iter().zip(&a) {
                assert!((r - x).norm() < 1e-11 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn schur_eigenvalues_match_evd() {
        let dim = 6;
        let a = random_matrix(dim, 99);
        let (_, t) = complex_schur(&a, dim).unwrap();
        let mut schur_vals: Vec<Complex64> = (0..dim).map(|i| t[idx(i, i, dim)]).collect();
        let mut evd_vals = cmat::eigen(&a, dim).unwrap().values;
        let key = |z: &Complex64| (z.re, z.im);
        schur_vals.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
        evd_vals.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
        for (s, e) in schur_vals.iter().zip(&evd_vals) {
            assert!((s - e).norm() < 1e-9, "schur {s} vs evd {e}");
        }
    }

    #[test]
    fn triangular_exp_matches_eigen_route() {
        // well-separated diagonal: compare against V exp(D) V^{-1}
        let dim = 4;
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let mut t = vec![ZERO; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                t[idx(i, j, dim)] = if i == j {
                    Complex64::new(1.0 + i as f64, 0.3 * i as f64)
                } else {
                    Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
                };
            }
        }
        let f = triangular_fn(&t, dim, &|z| z.exp()).unwrap();
        let e = cmat::eigen(&t, dim).unwrap();
        let mut vd = e.vectors.clone();
        for i in 0..dim {
            for j in 0..dim {
                vd[idx(i, j, dim)] *= e.values[j].exp();
            }
        }
        let reference = cmat::mat_mul(&vd, &e.inv_vectors, dim, dim, dim);
        for (a, b) in f.iter().zip(&reference) {
            assert!((a - b).norm() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn triangular_exp_near_defective() {
        // [[1, 1],[0, 1 + eps]]: exp has the divided-difference off-diagonal
        let eps = 1e-13;
        let t = vec![
            Complex64::new(1.0, 0.0),
            ONE,
            ZERO,
            Complex64::new(1.0 + eps, 0.0),
        ];
        let f = triangular_fn(&t, 2, &|z| z.exp()).unwrap();
        let e1 = 1.0f64.exp();
        assert!((f[0].re - e1).abs() < 1e-10);
        assert!((f[3].re - (1.0 + eps).exp()).abs() < 1e-10);
        // f[1] ~ (e^{1+eps} - e^1)/eps ~ e
        assert!((f[1].re - e1).abs() < 1e-6 * e1, "off-diag {}", f[1]);
        assert!((f[1].im).abs() < 1e-10);
    }

    #[test]
    fn triangular_sign_function_is_involution() {
        let dim = 5;
        let mut t = random_matrix(dim, 31);
        // make it upper triangular with diagonals off the imaginary axis
        for i in 0..dim {
            for j in 0..i {
                t[idx(i, j, dim)] = ZERO;
            }
            let re = if i % 2 == 0 { 1.2 + i as f64 } else { -0.7 - i as f64 };
            t[idx(i, i, dim)] = Complex64::new(re, 0.2 * i as f64);
        }
        let sgn = triangular_fn(&t, dim, &|z| {
            if z.re > 0.0 {
                ONE
            } else {
                -ONE
            }
        })
        .unwrap();
        let square = cmat::mat_mul(&sgn, &sgn, dim, dim, dim);
        let id = cmat::identity(dim);
        for (a, b) in square.iter().zip(&id) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}
