//! Learnable orthonormal basis split into identity and motion blocks, and
//! the descriptors built from it.
//!
//! The raw parameter matrix stacks `p` identity rows on top of `q` motion
//! rows. Every forward pass re-orthonormalizes it with modified
//! Gram-Schmidt (row order), so the blocks are orthonormal and mutually
//! orthogonal while the raw rows stay freely trainable.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{gram_schmidt_rows, matmul_raw, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Sizes of the two subspaces and of the ambient latent space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BasisDims {
    /// Identity basis count `p`.
    pub identity: usize,
    /// Motion basis count `q`.
    pub motion: usize,
    /// Ambient dimension `N`.
    pub latent: usize,
}

impl BasisDims {
    pub fn rows(&self) -> usize {
        self.identity + self.motion
    }

    fn validate(&self) -> Result<()> {
        if self.identity == 0 || self.motion == 0 || self.rows() > self.latent {
            return Err(Error::Contract(format!(
                "basis needs p, q >= 1 and p + q <= N, got p={} q={} N={}",
                self.identity, self.motion, self.latent
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrthonormalBasis {
    raw: Tensor,
    dims: BasisDims,
}

/// Graph handles for one orthonormalized forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BasisVars {
    /// Full `(p+q)×N` orthonormal matrix.
    pub full: Var,
    /// Identity block `X_id`, `p×N`.
    pub identity: Var,
    /// Motion block `Y_m`, `q×N`.
    pub motion: Var,
}

impl OrthonormalBasis {
    pub fn new(raw: Tensor, dims: BasisDims) -> Result<Self> {
        dims.validate()?;
        if raw.shape() != [dims.rows(), dims.latent] {
            return Err(Error::dim("basis", raw.shape(), &[dims.rows(), dims.latent]));
        }
        Ok(Self {
            raw: raw.with_grad(),
            dims,
        })
    }

    /// Raw entries drawn from `N(0, σ²)` with `σ = 1/√N`.
    pub fn random<R: Rng>(dims: BasisDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let normal = Normal::new(0.0, 1.0 / (dims.latent as f64).sqrt()).expect("valid sigma");
        let data = (0..dims.rows() * dims.latent)
            .map(|_| normal.sample(rng))
            .collect();
        Self::new(Tensor::new(vec![dims.rows(), dims.latent], data)?, dims)
    }

    pub fn dims(&self) -> BasisDims {
        self.dims
    }

    pub fn raw(&self) -> &Tensor {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut Tensor {
        &mut self.raw
    }

    /// Records `raw → Gram-Schmidt → (X_id, Y_m)` on the graph.
    /// Returns the raw leaf alongside the orthonormal handles.
    pub fn orthonormalize(&self, g: &mut Graph) -> Result<(Var, BasisVars)> {
        let raw = g.leaf(&self.raw);
        Ok((raw, basis_from_raw(g, raw, self.dims)?))
    }

    /// Orthonormalized values without building a graph.
    pub fn orthonormalized(&self) -> Result<Tensor> {
        let (q, _) = gram_schmidt_rows(self.raw.data(), self.dims.rows(), self.dims.latent)?;
        Tensor::new(self.raw.shape().to_vec(), q)
    }
}

/// Gram-Schmidt of an existing `(p+q)×N` node, split into the two blocks.
pub fn basis_from_raw(g: &mut Graph, raw: Var, dims: BasisDims) -> Result<BasisVars> {
    let full = g.gram_schmidt(raw)?;
    let identity = g.rows(full, 0, dims.identity)?;
    let motion = g.rows(full, dims.identity, dims.rows())?;
    Ok(BasisVars {
        full,
        identity,
        motion,
    })
}

/// Fixed coordinate embedding used when the learned basis is bypassed:
/// identity coefficients land on axes `0..p`, motion on `p..p+q`.
pub fn coordinate_basis(g: &mut Graph, dims: BasisDims) -> Result<BasisVars> {
    dims.validate()?;
    let (r, n) = (dims.rows(), dims.latent);
    let mut data = vec![0.0; r * n];
    for i in 0..r {
        data[i * n + i] = 1.0;
    }
    let full = g.constant(vec![r, n], data)?;
    let identity = g.rows(full, 0, dims.identity)?;
    let motion = g.rows(full, dims.identity, r)?;
    Ok(BasisVars {
        full,
        identity,
        motion,
    })
}

/// Batched descriptors on a graph; each handle has one row per sample.
#[derive(Clone, Copy, Debug)]
pub struct DescriptorVars {
    pub a_id: Var,
    pub b_m: Var,
    pub w_id: Var,
    pub w_m: Var,
    pub f: Var,
}

/// `w_id = a_id·X_id`, `w_m = b_m·Y_m`, `F = w_id + w_m` for coefficient
/// matrices `a_id[B×p]`, `b_m[B×q]`.
pub fn compose(g: &mut Graph, basis: &BasisVars, a_id: Var, b_m: Var) -> Result<DescriptorVars> {
    let w_id = g.matmul(a_id, basis.identity)?;
    let w_m = g.matmul(b_m, basis.motion)?;
    if g.shape(w_id)[0] != g.shape(w_m)[0] {
        return Err(Error::dim("compose", g.shape(a_id), g.shape(b_m)));
    }
    let f = g.add(w_id, w_m)?;
    Ok(DescriptorVars {
        a_id,
        b_m,
        w_id,
        w_m,
        f,
    })
}

/// Descriptors of a single sample, as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceDescriptors {
    pub a_id: Vec<f64>,
    pub b_m: Vec<f64>,
    pub w_id: Vec<f64>,
    pub w_m: Vec<f64>,
    pub f: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subspace {
    Identity,
    Motion,
}

impl SubspaceDescriptors {
    /// Composes from an orthonormalized `(p+q)×N` basis.
    pub fn compose(basis: &Tensor, p: usize, a_id: &[f64], b_m: &[f64]) -> Result<Self> {
        let (rows, n) = (basis.shape()[0], basis.shape()[1]);
        if a_id.len() != p || a_id.len() + b_m.len() != rows {
            return Err(Error::dim("compose", &[a_id.len(), b_m.len()], &[p, rows - p]));
        }
        let w_id = matmul_raw(a_id, &basis.data()[..p * n], 1, p, n);
        let w_m = matmul_raw(b_m, &basis.data()[p * n..], 1, rows - p, n);
        let f = w_id.iter().zip(&w_m).map(|(a, b)| a + b).collect();
        Ok(Self {
            a_id: a_id.to_vec(),
            b_m: b_m.to_vec(),
            w_id,
            w_m,
            f,
        })
    }

    /// Row `i` of each handle in a batched [`DescriptorVars`].
    pub fn from_batch(g: &Graph, d: &DescriptorVars, i: usize) -> Self {
        let row = |v: Var| {
            let c = g.shape(v)[1];
            g.value(v)[i * c..(i + 1) * c].to_vec()
        };
        Self {
            a_id: row(d.a_id),
            b_m: row(d.b_m),
            w_id: row(d.w_id),
            w_m: row(d.w_m),
            f: row(d.f),
        }
    }

    /// Replaces one subspace's coefficients and descriptor by zeros and
    /// recomposes `F` from the other.
    pub fn zero_descriptor(&self, which: Subspace) -> Self {
        let mut out = self.clone();
        match which {
            Subspace::Identity => {
                out.a_id.iter_mut().for_each(|x| *x = 0.0);
                out.w_id.iter_mut().for_each(|x| *x = 0.0);
                out.f = out.w_m.clone();
            }
            Subspace::Motion => {
                out.b_m.iter_mut().for_each(|x| *x = 0.0);
                out.w_m.iter_mut().for_each(|x| *x = 0.0);
                out.f = out.w_id.clone();
            }
        }
        out
    }

    /// Keeps this identity descriptor and swaps in a new motion descriptor.
    pub fn with_motion(&self, w_m: Vec<f64>) -> Self {
        let mut out = self.clone();
        out.f = out.w_id.iter().zip(&w_m).map(|(a, b)| a + b).collect();
        out.w_m = w_m;
        out
    }
}

/// `(1 − t)·a + t·b` for `t ∈ [0, 1]`; endpoints are returned exactly.
pub fn interpolate_motion(a: &[f64], b: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Range {
            what: "interpolation t",
            value: t,
            expected: "[0, 1]",
        });
    }
    if a.len() != b.len() {
        return Err(Error::dim("interpolate_motion", &[a.len()], &[b.len()]));
    }
    if t == 0.0 {
        return Ok(a.to_vec());
    }
    if t == 1.0 {
        return Ok(b.to_vec());
    }
    Ok(a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect())
}

/// Coefficients of `f` on each row of an orthonormal block.
pub fn project(block: &Tensor, f: &[f64]) -> Vec<f64> {
    (0..block.shape()[0])
        .map(|i| crate::autodiff::dot(block.row(i), f))
        .collect()
}

// ---- text matrix format -----------------------------------------------------

/// `"rows cols"` header, then one whitespace-separated row per line with
/// round-trip-exact decimals.
pub fn matrix_to_text(m: &Tensor) -> String {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    let mut s = format!("{r} {c}\n");
    for i in 0..r {
        let row = m.row(i);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                s.push(' ');
            }
            write!(s, "{v:e}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn matrix_from_text(text: &str) -> Result<Tensor> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::format("matrix", "empty input"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format("matrix", format!("bad header `{header}`: {e}")))?;
    let [r, c] = dims[..] else {
        return Err(Error::format("matrix", format!("bad header `{header}`")));
    };
    let mut data = Vec::with_capacity(r * c);
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("matrix", format!("row {i}: {e}")))?;
        if row.len() != c {
            return Err(Error::format("matrix", format!("row {i} has {} entries, expected {c}", row.len())));
        }
        data.extend(row);
    }
    if data.len() != r * c {
        return Err(Error::format("matrix", format!("expected {r} rows")));
    }
    Tensor::new(vec![r, c], data)
}

pub fn save_matrix(path: &Path, m: &Tensor) -> Result<()> {
    std::fs::write(path, matrix_to_text(m)).map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    matrix_from_text(&text)
}
