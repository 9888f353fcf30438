//! Dense complex tensor algebra.
//!
//! Every tensor in this crate is stored with the **last mode varying fastest**
//! (row-major). For a received block of shape `(T_1, ..., T_d, N)` this means
//! the `N` antenna samples of one time index are contiguous, and
//! `rank1([x_1, ..., x_d, h])` is exactly the iterated Kronecker product
//! `x_1 ⊗ ... ⊗ x_d ⊗ h`. Mode indices are zero-based.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TbmError};

pub type C64 = Complex<f64>;
pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;

/// Squared Euclidean norm of a complex vector.
pub fn norm2(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Circularly-symmetric standard complex Gaussian sample, `CN(0, 1)`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_vec<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CVec {
    CVec::from_fn(dim, |_, _| complex_normal(rng))
}

/// Uniform draw on the complex sphere with `‖v‖² = energy`.
pub fn random_sphere<R: Rng + ?Sized>(dim: usize, energy: f64, rng: &mut R) -> CVec {
    loop {
        let v = complex_normal_vec(dim, rng);
        let n = norm2(&v);
        if n > 0.0 {
            return v * C64::from((energy / n).sqrt());
        }
    }
}

/// Kronecker product `a ⊗ b`; entry `(i, j)` lives at `i * |b| + j`.
pub fn kron(a: &CVec, b: &CVec) -> Result<CVec> {
    if a.is_empty() || b.is_empty() {
        return Err(TbmError::Dimension("kron of an empty vector".into()));
    }
    let nb = b.len();
    Ok(CVec::from_fn(a.len() * nb, |r, _| a[r / nb] * b[r % nb]))
}

/// Iterated Kronecker product `f_0 ⊗ f_1 ⊗ ...`.
pub fn kron_all<'a, I>(factors: I) -> Result<CVec>
where
    I: IntoIterator<Item = &'a CVec>,
{
    let mut it = factors.into_iter();
    let first = it
        .next()
        .ok_or_else(|| TbmError::Dimension("kron of zero factors".into()))?;
    if first.is_empty() {
        return Err(TbmError::Dimension("kron of an empty vector".into()));
    }
    let mut acc = first.clone();
    for f in it {
        acc = kron(&acc, f)?;
    }
    Ok(acc)
}

/// `s_{-omit}`: Kronecker product of all factors except `factors[omit]`.
pub fn partial_kron_omit(factors: &[CVec], omit: usize) -> Result<CVec> {
    if omit >= factors.len() {
        return Err(TbmError::IndexOutOfRange {
            index: omit,
            len: factors.len(),
        });
    }
    if factors.len() == 1 {
        return Ok(CVec::from_element(1, C64::new(1.0, 0.0)));
    }
    kron_all(
        factors
            .iter()
            .enumerate()
            .filter(|(m, _)| *m != omit)
            .map(|(_, f)| f),
    )
}

/// Dense complex tensor, last mode fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct CTensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

impl CTensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![C64::new(0.0, 0.0); shape.iter().product()],
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<C64>) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(TbmError::Dimension(format!(
                "tensor of shape {shape:?} needs {n} entries, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn linear_index(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.shape.len() {
            return Err(TbmError::Dimension(format!(
                "multi-index of order {} for tensor of order {}",
                idx.len(),
                self.shape.len()
            )));
        }
        let mut lin = 0;
        for (&i, &n) in idx.iter().zip(&self.shape) {
            if i >= n {
                return Err(TbmError::IndexOutOfRange { index: i, len: n });
            }
            lin = lin * n + i;
        }
        Ok(lin)
    }

    pub fn get(&self, idx: &[usize]) -> Result<C64> {
        Ok(self.data[self.linear_index(idx)?])
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Adds `scale * (f_0 ⊗ ... ⊗ f_{p-1})` in place.
    pub fn add_rank1(&mut self, factors: &[&CVec], scale: C64) -> Result<()> {
        if factors.len() != self.shape.len()
            || factors.iter().zip(&self.shape).any(|(f, &n)| f.len() != n)
        {
            return Err(TbmError::Dimension(
                "rank-1 factors do not match tensor shape".into(),
            ));
        }
        // Build the leading Kronecker product, then stream the last factor.
        let last = factors[factors.len() - 1];
        let lead = if factors.len() == 1 {
            CVec::from_element(1, scale)
        } else {
            kron_all(factors[..factors.len() - 1].iter().copied())? * scale
        };
        let n_last = last.len();
        for (a, &la) in lead.iter().enumerate() {
            let row = &mut self.data[a * n_last..(a + 1) * n_last];
            for (dst, &l) in row.iter_mut().zip(last.iter()) {
                *dst += la * l;
            }
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TbmError::Dimension(format!(
            "tensor shape {shape:?} must be nonempty with positive dims"
        )));
    }
    Ok(())
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for m in (0..shape.len().saturating_sub(1)).rev() {
        s[m] = s[m + 1] * shape[m + 1];
    }
    s
}

/// Rank-1 tensor `f_0 ⊗ ... ⊗ f_{p-1}` with shape given by the factor lengths.
pub fn rank1(factors: &[CVec]) -> Result<CTensor> {
    let shape: Vec<usize> = factors.iter().map(|f| f.len()).collect();
    let data = kron_all(factors)?;
    CTensor::from_vec(&shape, data.as_slice().to_vec())
}

/// Mode-`mode` unfolding: row `i_mode`, columns enumerate the remaining
/// indices in their original order with the last one fastest.
pub fn unfold(t: &CTensor, mode: usize) -> Result<CMat> {
    let shape = t.shape();
    if mode >= shape.len() {
        return Err(TbmError::IndexOutOfRange {
            index: mode,
            len: shape.len(),
        });
    }
    let rows = shape[mode];
    let left: usize = shape[..mode].iter().product();
    let right: usize = shape[mode + 1..].iter().product();
    let mut m = CMat::zeros(rows, left * right);
    for a in 0..left {
        for i in 0..rows {
            let base = (a * rows + i) * right;
            for b in 0..right {
                m[(i, a * right + b)] = t.data[base + b];
            }
        }
    }
    Ok(m)
}

/// Inverse of [`unfold`].
pub fn fold(m: &CMat, mode: usize, shape: &[usize]) -> Result<CTensor> {
    check_shape(shape)?;
    if mode >= shape.len() {
        return Err(TbmError::IndexOutOfRange {
            index: mode,
            len: shape.len(),
        });
    }
    let rows = shape[mode];
    let left: usize = shape[..mode].iter().product();
    let right: usize = shape[mode + 1..].iter().product();
    if m.nrows() != rows || m.ncols() != left * right {
        return Err(TbmError::Dimension(format!(
            "cannot fold a {}x{} matrix into mode {mode} of {shape:?}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut data = vec![C64::new(0.0, 0.0); rows * left * right];
    for a in 0..left {
        for i in 0..rows {
            let base = (a * rows + i) * right;
            for b in 0..right {
                data[base + b] = m[(i, a * right + b)];
            }
        }
    }
    CTensor::from_vec(shape, data)
}

/// Orthonormal columns spanning a subspace.
#[derive(Clone, Debug)]
pub struct ProjectorBasis {
    pub columns: CMat,
}

impl ProjectorBasis {
    pub fn dim(&self) -> usize {
        self.columns.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.nrows()
    }

    /// Applies `Q Q^H` to `v`.
    pub fn project(&self, v: &CVec) -> CVec {
        &self.columns * (self.columns.adjoint() * v)
    }
}

/// Orthonormal basis of the complement of `span(v)`, built from the
/// Householder reflector that maps `v` onto the first canonical axis.
pub fn orth_complement_basis(v: &CVec) -> Result<ProjectorBasis> {
    let n = v.len();
    let nv = norm2(v).sqrt();
    if n == 0 || nv == 0.0 || !nv.is_finite() {
        return Err(TbmError::Degenerate(
            "orthogonal complement of a zero vector".into(),
        ));
    }
    let phase = if v[0].norm() > 0.0 {
        v[0] / v[0].norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let mut u = v.clone();
    u[0] += phase * nv;
    let uu = norm2(&u);
    // H = I - 2 u u^H / (u^H u); columns 1.. of H are orthogonal to v.
    let cols = CMat::from_fn(n, n - 1, |r, c| {
        let col = c + 1;
        let delta = if r == col { 1.0 } else { 0.0 };
        C64::from(delta) - u[r] * u[col].conj() * (2.0 / uu)
    });
    Ok(ProjectorBasis { columns: cols })
}

/// Orthonormal basis of the column span, via column-pivoted QR with drop
/// tolerance `1e-10 * (largest column norm)`.
pub fn orthonormal_span(columns: &CMat) -> ProjectorBasis {
    let n = columns.nrows();
    if columns.ncols() == 0 || n == 0 {
        return ProjectorBasis {
            columns: CMat::zeros(n, 0),
        };
    }
    let max_col = columns
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max);
    if max_col == 0.0 {
        return ProjectorBasis {
            columns: CMat::zeros(n, 0),
        };
    }
    let qr = columns.clone().col_piv_qr();
    let r = qr.r();
    let tol = 1e-10 * max_col;
    let rank = (0..r.nrows().min(r.ncols()))
        .take_while(|&j| r[(j, j)].norm() > tol)
        .count();
    let q = qr.q();
    ProjectorBasis {
        columns: q.columns(0, rank).into_owned(),
    }
}

/// `(I - Q Q^H) target` where `Q` orthonormalizes `columns`.
pub fn project_orth(columns: &CMat, target: &CVec) -> Result<CVec> {
    if columns.ncols() > 0 && columns.nrows() != target.len() {
        return Err(TbmError::Dimension(format!(
            "projection onto {}-dim columns of a length-{} target",
            columns.nrows(),
            target.len()
        )));
    }
    let basis = orthonormal_span(columns);
    Ok(target - basis.project(target))
}
