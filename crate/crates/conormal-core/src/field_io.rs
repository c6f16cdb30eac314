//! On-disk containers for boundary fields, half-space fields and
//! coefficient tensors, plus a content-addressed cache for spectral
//! decompositions.
//!
//! Layout (all little-endian): magic `CNF1`, a kind byte, a dtype byte
//! (0 = complex128, 1 = complex64), the header {n, m, N as u32; L as
//! f64; for transverse kinds t_min, t_max as f64, t_count as u32 and a
//! t-independence byte}, then the payload as (re, im) pairs in row-major
//! order over (t, x, component) for fields and (t, x, matrix-row,
//! matrix-col) for tensors. The format is bit-stable across platforms.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::coeff::{CoefficientTensor, Role, TransformedTensor};
use crate::error::{Error, Result};
use crate::funcalc::{Block, BlockForm, SpectralDecomp};
use crate::grid::{BoundaryField, HalfSpaceField, TGrid, TorusGrid};
use crate::util::fnv1a;

const MAGIC: &[u8; 4] = b"CNF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Boundary = 0,
    HalfSpace = 1,
    Coefficients = 2,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn complex_slice(&mut self, v: &[Complex64]) {
        self.u64(v.len() as u64);
        for z in v {
            self.f64(z.re);
            self.f64(z.im);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::BadContainer("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn complex_vec(&mut self, dtype: u8) -> Result<Vec<Complex64>> {
        let len = self.u64()? as usize;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let (re, im) = match dtype {
                0 => (self.f64()?, self.f64()?),
                1 => {
                    let re = f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64;
                    let im = f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64;
                    (re, im)
                }
                other => {
                    return Err(Error::BadContainer(format!("unknown dtype {other}")));
                }
            };
            out.push(Complex64::new(re, im));
        }
        Ok(out)
    }
}

fn head(w: &mut Writer, kind: Kind, torus: &TorusGrid) {
    w.buf.extend_from_slice(MAGIC);
    w.u8(kind as u8);
    w.u8(0); // dtype complex128
    w.u32(torus.n as u32);
    w.u32(torus.m as u32);
    w.u32(torus.points as u32);
    w.f64(torus.period);
}

fn read_head(r: &mut Reader, expect: Kind) -> Result<(u8, TorusGrid)> {
    if r.take(4)? != MAGIC {
        return Err(Error::BadContainer("bad magic".into()));
    }
    let kind = r.u8()?;
    if kind != expect as u8 {
        return Err(Error::BadContainer(format!(
            "expected kind {} got {kind}",
            expect as u8
        )));
    }
    let dtype = r.u8()?;
    let n = r.u32()? as usize;
    let m = r.u32()? as usize;
    let points = r.u32()? as usize;
    let period = r.f64()?;
    Ok((dtype, TorusGrid::new(n, m, points, period)?))
}

fn write_tgrid(w: &mut Writer, tg: &TGrid) {
    w.f64(tg.t_min);
    w.f64(tg.t_max);
    w.u32(tg.len() as u32);
}

fn read_tgrid(r: &mut Reader) -> Result<TGrid> {
    let t_min = r.f64()?;
    let t_max = r.f64()?;
    let count = r.u32()? as usize;
    TGrid::geometric(t_min, t_max, count)
}

pub fn write_boundary(path: &Path, h: &BoundaryField) -> Result<()> {
    let mut w = Writer::new();
    head(&mut w, Kind::Boundary, &h.grid);
    w.u8(h.in_h as u8);
    w.complex_slice(&h.values);
    std::fs::File::create(path)?.write_all(&w.buf)?;
    Ok(())
}

pub fn read_boundary(path: &Path) -> Result<BoundaryField> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader::new(&buf);
    let (dtype, grid) = read_head(&mut r, Kind::Boundary)?;
    let in_h = r.u8()? != 0;
    let values = r.complex_vec(dtype)?;
    let mut out = BoundaryField::from_values(&grid, values)?;
    out.in_h = in_h;
    Ok(out)
}

pub fn write_half_space(path: &Path, f: &HalfSpaceField) -> Result<()> {
    let mut w = Writer::new();
    head(&mut w, Kind::HalfSpace, &f.torus);
    write_tgrid(&mut w, &f.tgrid);
    w.u8(f.in_h as u8);
    w.complex_slice(&f.values);
    std::fs::File::create(path)?.write_all(&w.buf)?;
    Ok(())
}

pub fn read_half_space(path: &Path) -> Result<HalfSpaceField> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader::new(&buf);
    let (dtype, torus) = read_head(&mut r, Kind::HalfSpace)?;
    let tgrid = read_tgrid(&mut r)?;
    let in_h = r.u8()? != 0;
    let values = r.complex_vec(dtype)?;
    let mut out = HalfSpaceField::zeros(&torus, &tgrid);
    if values.len() != out.values.len() {
        return Err(Error::BadContainer("payload size mismatch".into()));
    }
    out.values = values;
    out.in_h = in_h;
    Ok(out)
}

pub fn write_coefficients(path: &Path, a: &CoefficientTensor) -> Result<()> {
    let mut w = Writer::new();
    head(&mut w, Kind::Coefficients, &a.torus);
    write_tgrid(&mut w, &a.tgrid);
    w.u8(a.t_independent as u8);
    w.complex_slice(&a.values);
    std::fs::File::create(path)?.write_all(&w.buf)?;
    Ok(())
}

pub fn read_coefficients(path: &Path) -> Result<CoefficientTensor> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader::new(&buf);
    let (dtype, torus) = read_head(&mut r, Kind::Coefficients)?;
    let tgrid = read_tgrid(&mut r)?;
    let t_independent = r.u8()? != 0;
    let values = r.complex_vec(dtype)?;
    let c = torus.comps();
    let t_len = if t_independent { 1 } else { tgrid.len() };
    if values.len() != t_len * torus.sites() * c * c {
        return Err(Error::BadContainer("tensor payload size mismatch".into()));
    }
    Ok(CoefficientTensor {
        torus,
        tgrid,
        t_independent,
        values,
        kappa: None,
    })
}

/// Content key of a decomposition: the grid parameters and the exact B0
/// sample bytes.
pub fn decomposition_key(torus: &TorusGrid, b0: &TransformedTensor) -> u64 {
    let mut w = Writer::new();
    w.u32(torus.n as u32);
    w.u32(torus.m as u32);
    w.u32(torus.points as u32);
    w.f64(torus.period);
    for z in &b0.tensor.values {
        w.f64(z.re);
        w.f64(z.im);
    }
    fnv1a(&w.buf)
}

pub fn cache_path(dir: &Path, key: u64) -> PathBuf {
    dir.join(format!("{key:016x}.cnfdec"))
}

/// Persist the blocks of a decomposition keyed by (grid, B0).
pub fn save_decomposition(dir: &Path, dec: &SpectralDecomp) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let key = decomposition_key(&dec.torus, &dec.b0);
    let path = cache_path(dir, key);
    let mut w = Writer::new();
    w.buf.extend_from_slice(b"CNFD");
    w.u8(dec.dense as u8);
    w.u8(dec.is_adjoint as u8);
    head(&mut w, Kind::Coefficients, &dec.torus);
    write_tgrid(&mut w, &dec.b0.tensor.tgrid);
    w.complex_slice(&dec.b0.tensor.values);
    w.u64(dec.blocks.len() as u64);
    for b in &dec.blocks {
        w.u64(b.offset as u64);
        w.u64(b.dim as u64);
        w.f64(b.cond);
        w.complex_slice(&b.vals);
        w.complex_slice(&b.mat);
        w.complex_slice(&b.gram);
        match &b.form {
            BlockForm::Eigen { v, vinv } => {
                w.u8(0);
                w.complex_slice(v);
                w.complex_slice(vinv);
            }
            BlockForm::Schur { q, tri } => {
                w.u8(1);
                w.complex_slice(q);
                w.complex_slice(tri);
            }
        }
    }
    std::fs::File::create(&path)?.write_all(&w.buf)?;
    Ok(path)
}

/// Load a cached decomposition if its key matches the given (grid, B0).
pub fn load_decomposition(
    dir: &Path,
    torus: &TorusGrid,
    b0: &TransformedTensor,
) -> Result<Option<SpectralDecomp>> {
    let key = decomposition_key(torus, b0);
    let path = cache_path(dir, key);
    if !path.exists() {
        return Ok(None);
    }
    let mut buf = Vec::new();
    std::fs::File::open(&path)?.read_to_end(&mut buf)?;
    let mut r = Reader::new(&buf);
    if r.take(4)? != b"CNFD" {
        return Err(Error::BadContainer("bad decomposition magic".into()));
    }
    let dense = r.u8()? != 0;
    let is_adjoint = r.u8()? != 0;
    let (dtype, stored_torus) = read_head(&mut r, Kind::Coefficients)?;
    let tgrid = read_tgrid(&mut r)?;
    let b0_values = r.complex_vec(dtype)?;
    if stored_torus != *torus {
        return Ok(None);
    }
    let b0_loaded = TransformedTensor {
        tensor: CoefficientTensor {
            torus: stored_torus,
            tgrid,
            t_independent: true,
            values: b0_values,
            kappa: None,
        },
        role: Role::B0,
    };
    let count = r.u64()? as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let offset = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let cond = r.f64()?;
        let vals = r.complex_vec(dtype)?;
        let mat = r.complex_vec(dtype)?;
        let gram = r.complex_vec(dtype)?;
        let form = match r.u8()? {
            0 => BlockForm::Eigen {
                v: r.complex_vec(dtype)?,
                vinv: r.complex_vec(dtype)?,
            },
            1 => BlockForm::Schur {
                q: r.complex_vec(dtype)?,
                tri: r.complex_vec(dtype)?,
            },
            other => {
                return Err(Error::BadContainer(format!("unknown block form {other}")));
            }
        };
        blocks.push(Block {
            offset,
            dim,
            vals,
            mat,
            form,
            cond,
            gram,
        });
    }
    let dec = crate::funcalc::rebuild_from_blocks(torus, &b0_loaded, blocks, dense, is_adjoint)?;
    Ok(Some(dec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{select_b0, transform_a_to_b};
    use crate::funcalc::{apply_symbol, assemble_db0, Symbol, TangentialD};
    use crate::grid::project_h;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tempdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("cnf_io_{tag}_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn boundary_and_half_space_roundtrip() {
        let dir = tempdir("fields");
        let torus = TorusGrid::new(2, 1, 8, 3.0).unwrap();
        let tgrid = TGrid::geometric(1e-2, 4.0, 12).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut h = BoundaryField::zeros(&torus);
        for v in &mut h.values {
            *v = Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        }
        let h = project_h(&h);
        let p = dir.join("h.cnf");
        write_boundary(&p, &h).unwrap();
        let back = read_boundary(&p).unwrap();
        assert_eq!(back.values, h.values);
        assert!(back.in_h);

        let mut f = HalfSpaceField::zeros(&torus, &tgrid);
        for v in &mut f.values {
            *v = Complex64::new(r.random_range(-1.0..1.0), 0.25);
        }
        let pf = dir.join("f.cnf");
        write_half_space(&pf, &f).unwrap();
        let fback = read_half_space(&pf).unwrap();
        assert_eq!(fback.values, f.values);
        assert_eq!(fback.tgrid.len(), tgrid.len());
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn coefficients_roundtrip_and_corrupt_rejection() {
        let dir = tempdir("coeff");
        let torus = TorusGrid::new(1, 1, 8, 2.0 * std::f64::consts::PI).unwrap();
        let tgrid = TGrid::geometric(1e-2, 4.0, 10).unwrap();
        let a = CoefficientTensor::from_fn(&torus, &tgrid, false, |t, x, r, c| {
            Complex64::new(t + x[0] + (r * 2 + c) as f64, -t)
        });
        let p = dir.join("a.cnf");
        write_coefficients(&p, &a).unwrap();
        let back = read_coefficients(&p).unwrap();
        assert_eq!(back.values, a.values);
        assert!(!back.t_independent);

        // truncated file is rejected
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            read_coefficients(&p),
            Err(Error::BadContainer(_))
        ));
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn decomposition_cache_roundtrip_acts_identically() {
        let dir = tempdir("dec");
        let torus = TorusGrid::new(1, 1, 16, 2.0 * std::f64::consts::PI).unwrap();
        let tgrid = TGrid::geometric(1e-2, 1e1, 8).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let c = torus.comps();
        let mut first = crate::cmat::identity(c);
        for v in first.iter_mut() {
            *v += Complex64::new(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2));
        }
        let a = CoefficientTensor::from_fn(&torus, &tgrid, true, |_, _, row, col| {
            first[row * c + col]
        });
        let b = transform_a_to_b(&a).unwrap();
        let b0 = select_b0(&b, None).unwrap();
        let dec = assemble_db0(&TangentialD::new(&torus), &b0).unwrap();
        assert!(load_decomposition(&dir, &torus, &b0).unwrap().is_none());
        save_decomposition(&dir, &dec).unwrap();
        let loaded = load_decomposition(&dir, &torus, &b0).unwrap().unwrap();

        let mut h = BoundaryField::zeros(&torus);
        for v in &mut h.values {
            *v = Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        }
        let h = project_h(&h);
        let s1 = apply_symbol(&dec, &Symbol::Sgn, &h).unwrap();
        let s2 = apply_symbol(&loaded, &Symbol::Sgn, &h).unwrap();
        for (x, y) in s1.values.iter().zip(&s2.values) {
            assert_eq!(x, y, "cached decomposition acts differently");
        }
        std::fs::remove_dir_all(dir).ok();
    }
}
