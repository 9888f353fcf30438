//! Rank-`Ka` canonical polyadic decomposition of the received tensor.
//!
//! The solver minimizes `‖y − Σ_k z_{1,k} ⊗ ... ⊗ z_{d,k} ⊗ h_k‖²` by
//! Levenberg–Marquardt damped Gauss–Newton. Each step solves
//! `(J^H J + λI) δ = J^H r` by preconditioned conjugate gradients; the
//! product with `J^H J` never forms `J` and costs `O(p Ka² max T_m)`:
//!
//! `(J^H J V)_m = V_m Γ_m^T + Σ_{n≠m} Z_m (Γ_mn ∘ (Z_n^H V_n))^T`
//!
//! with `Γ_m` (`Γ_mn`) the Hadamard product of the Gram matrices
//! `W_j = Z_j^H Z_j` over `j ≠ m` (`j ∉ {m, n}`). The preconditioner inverts
//! the diagonal blocks, `V_m ↦ V_m (Γ_m^T + λI)^{-1}`. When Gauss–Newton
//! stalls the solver runs an alternating least squares sweep.

use std::io::Write;

use rand::Rng;

use crate::error::{Result, TbmError};
use crate::system::FactorSet;
use crate::tensor::{norm2, random_sphere, complex_normal_vec, CMat, CTensor, CVec, C64};

#[derive(Clone, Debug, PartialEq)]
pub enum InitStrategy {
    /// Factors uniform on the spheres `‖z‖² = T_m`, channels `CN(0, I_N)`.
    Random,
    /// Start at the transmitted factors.
    Genie,
    Provided(FactorSet),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop when `‖J^H r‖ <= grad_tol · ‖J^H r_0‖`.
    pub grad_tol: f64,
    /// Stop when an accepted step lowers the objective by less than this fraction.
    pub rel_tol: f64,
    pub cg_max_iters: usize,
    pub cg_tol: f64,
    /// Initial LM damping; `None` means `1e-4 · residual / (TN)`.
    pub damping: Option<f64>,
    pub init: InitStrategy,
    /// Record `(iteration, residual, gradient norm)` per iteration.
    pub trace: bool,
    /// Consecutive stalled iterations before an ALS sweep.
    pub stall_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-9,
            rel_tol: 1e-10,
            cg_max_iters: 30,
            cg_tol: 1e-10,
            damping: None,
            init: InitStrategy::Random,
            trace: false,
            stall_limit: 5,
        }
    }
}

impl SolverOptions {
    pub fn genie() -> Self {
        Self {
            init: InitStrategy::Genie,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if self.max_iters == 0
            || self.cg_max_iters == 0
            || self.stall_limit == 0
            || !pos(self.grad_tol)
            || !pos(self.rel_tol)
            || !pos(self.cg_tol)
            || self.damping.is_some_and(|d| !pos(d))
        {
            return Err(TbmError::Config(format!("invalid solver options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub residual: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct CpdResult {
    /// `‖ẑ_{i,k}‖² = T_i` for data modes; scale lives in `ĥ_k`.
    pub factors: FactorSet,
    /// `‖y − Σ_k rank1‖²`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub als_sweeps: usize,
    /// `Ka` exceeds the column count of some unfolding.
    pub rank_warning: bool,
    pub trace: Vec<TraceRow>,
}

pub const TRACE_CSV_HEADER: &str = "iteration,residual,grad_norm";

pub fn write_trace_csv<W: Write>(out: &mut W, trace: &[TraceRow]) -> Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for t in trace {
        writeln!(out, "{},{:.12e},{:.12e}", t.iteration, t.residual, t.grad_norm)?;
    }
    Ok(())
}

type Mats = Vec<CMat>;

fn to_mats(f: &FactorSet) -> Mats {
    (0..f.p()).map(|m| f.mode_matrix(m)).collect()
}

fn inner(a: &Mats, b: &Mats) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dotc(y).re).sum()
}

fn axpy(y: &mut Mats, a: f64, x: &Mats) {
    for (u, v) in y.iter_mut().zip(x) {
        *u += v * C64::from(a);
    }
}

/// Rescales every data-mode column to `‖z‖² = T_m`, pushing the scale into the channel.
fn normalize(z: &mut Mats) {
    let p = z.len();
    let ka = z[0].ncols();
    for k in 0..ka {
        let mut scale = 1.0;
        for m in 0..p - 1 {
            let t = z[m].nrows() as f64;
            let n = z[m].column(k).norm_squared().sqrt();
            if n > 0.0 && n.is_finite() {
                let c = n / t.sqrt();
                z[m].column_mut(k).unscale_mut(c);
                scale *= c;
            }
        }
        z[p - 1].column_mut(k).scale_mut(scale);
    }
}

fn model(z: &Mats, shape: &[usize]) -> Result<CTensor> {
    let mut out = CTensor::zeros(shape)?;
    let ka = z[0].ncols();
    let cols: Vec<Vec<CVec>> = z
        .iter()
        .map(|m| (0..ka).map(|k| m.column(k).into_owned()).collect())
        .collect();
    for k in 0..ka {
        let f: Vec<&CVec> = cols.iter().map(|c| &c[k]).collect();
        out.add_rank1(&f, C64::new(1.0, 0.0))?;
    }
    Ok(out)
}

fn residual_tensor(y: &CTensor, z: &Mats) -> Result<CTensor> {
    let mut r = model(z, y.shape())?;
    for (a, b) in r.data_mut().iter_mut().zip(y.data()) {
        *a = b - *a;
    }
    Ok(r)
}

/// `conj(z_{lo,k}) ⊗ ... ⊗ conj(z_{hi-1,k})`.
fn conj_kron(z: &Mats, lo: usize, hi: usize, k: usize) -> Vec<C64> {
    let mut acc = vec![C64::new(1.0, 0.0)];
    for m in lo..hi {
        let col = z[m].column(k);
        let mut next = Vec::with_capacity(acc.len() * col.len());
        for a in &acc {
            for c in col.iter() {
                next.push(a * c.conj());
            }
        }
        acc = next;
    }
    acc
}

/// `G_m[:, k] = J_{m,k}^H t`: the matricized tensor times Khatri–Rao product.
fn mttkrp_mode(t: &CTensor, z: &Mats, m: usize) -> CMat {
    let shape = t.shape();
    let p = z.len();
    let ka = z[0].ncols();
    let data = t.data();
    let tm = shape[m];
    let r: usize = shape[m + 1..].iter().product();
    let ls: Vec<Vec<C64>> = (0..ka).map(|k| conj_kron(z, 0, m, k)).collect();
    let rs: Vec<Vec<C64>> = (0..ka).map(|k| conj_kron(z, m + 1, p, k)).collect();
    let l = ls[0].len();
    let mut g = CMat::zeros(tm, ka);
    for a in 0..l {
        for s in 0..tm {
            let row = &data[(a * tm + s) * r..(a * tm + s + 1) * r];
            for k in 0..ka {
                let dot: C64 = row.iter().zip(&rs[k]).map(|(x, w)| x * w).sum();
                g[(s, k)] += ls[k][a] * dot;
            }
        }
    }
    g
}

fn mttkrp(t: &CTensor, z: &Mats) -> Mats {
    (0..z.len()).map(|m| mttkrp_mode(t, z, m)).collect()
}

struct Grams {
    w: Vec<CMat>,
}

impl Grams {
    fn new(z: &Mats) -> Self {
        Self {
            w: z.iter().map(|m| m.adjoint() * m).collect(),
        }
    }

    fn except(&self, skip: &[usize]) -> CMat {
        let ka = self.w[0].nrows();
        let mut out = CMat::from_element(ka, ka, C64::new(1.0, 0.0));
        for (j, w) in self.w.iter().enumerate() {
            if !skip.contains(&j) {
                out.component_mul_assign(w);
            }
        }
        out
    }
}

/// `(J^H J + λI)` applied through Gram matrices.
struct NormalOp<'a> {
    z: &'a Mats,
    gamma_t: Vec<CMat>,
    pair: Vec<Vec<CMat>>,
    precond: Vec<CMat>,
    lambda: f64,
}

impl<'a> NormalOp<'a> {
    fn new(z: &'a Mats, lambda: f64) -> Result<Self> {
        let grams = Grams::new(z);
        let p = z.len();
        let ka = z[0].ncols();
        let gamma_t: Vec<CMat> = (0..p).map(|m| grams.except(&[m]).transpose()).collect();
        let pair = (0..p)
            .map(|m| (0..p).map(|n| grams.except(&[m, n])).collect())
            .collect();
        let precond = gamma_t
            .iter()
            .map(|g| {
                let a = g + CMat::identity(ka, ka) * C64::from(lambda);
                a.try_inverse().ok_or_else(|| TbmError::Singular {
                    what: "GN preconditioner block".into(),
                    cond: f64::INFINITY,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            z,
            gamma_t,
            pair,
            precond,
            lambda,
        })
    }

    fn apply(&self, v: &Mats) -> Mats {
        let p = v.len();
        let proj: Vec<CMat> = (0..p).map(|n| self.z[n].adjoint() * &v[n]).collect();
        (0..p)
            .map(|m| {
                let mut out = &v[m] * &self.gamma_t[m] + &v[m] * C64::from(self.lambda);
                for n in (0..p).filter(|&n| n != m) {
                    let c = self.pair[m][n].component_mul(&proj[n]);
                    out += &self.z[m] * c.transpose();
                }
                out
            })
            .collect()
    }

    fn precondition(&self, v: &Mats) -> Mats {
        v.iter().zip(&self.precond).map(|(a, b)| a * b).collect()
    }
}

fn pcg(op: &NormalOp, b: &Mats, max_iters: usize, tol: f64) -> Mats {
    let mut x: Mats = b.iter().map(|m| CMat::zeros(m.nrows(), m.ncols())).collect();
    let mut r = b.clone();
    let mut s = op.precondition(&r);
    let mut d = s.clone();
    let mut rs = inner(&r, &s);
    let b_norm = inner(b, b).sqrt();
    if b_norm == 0.0 {
        return x;
    }
    for _ in 0..max_iters {
        let q = op.apply(&d);
        let dq = inner(&d, &q);
        if !(dq > 0.0) {
            break;
        }
        let a = rs / dq;
        axpy(&mut x, a, &d);
        axpy(&mut r, -a, &q);
        if inner(&r, &r).sqrt() <= tol * b_norm {
            break;
        }
        s = op.precondition(&r);
        let rs_new = inner(&r, &s);
        let beta = rs_new / rs;
        rs = rs_new;
        for (di, si) in d.iter_mut().zip(&s) {
            *di = si + &*di * C64::from(beta);
        }
    }
    x
}

/// One alternating least squares sweep, `Z_m ← G_m (Γ_m^T)^{-1}`.
fn als_sweep(y: &CTensor, z: &mut Mats) {
    let p = z.len();
    for m in 0..p {
        let grams = Grams::new(z);
        let gamma_t = grams.except(&[m]).transpose();
        let g = mttkrp_mode(y, z, m);
        if let Some(inv) = gamma_t.try_inverse() {
            z[m] = g * inv;
        }
    }
    normalize(z);
}

fn mats_norm(a: &Mats) -> f64 {
    inner(a, a).sqrt()
}

fn init_factors<R: Rng + ?Sized>(
    shape: &[usize],
    ka: usize,
    init: &InitStrategy,
    truth: Option<&FactorSet>,
    rng: &mut R,
) -> Result<FactorSet> {
    let check = |f: &FactorSet| -> Result<FactorSet> {
        if f.shape() != shape || f.ka() != ka {
            return Err(TbmError::Dimension(format!(
                "initial factors of shape {:?} Ka={} for tensor {:?} Ka={}",
                f.shape(),
                f.ka(),
                shape,
                ka
            )));
        }
        Ok(f.clone())
    };
    match init {
        InitStrategy::Genie => match truth {
            Some(t) => check(t),
            None => Err(TbmError::Config("genie initialization needs the truth".into())),
        },
        InitStrategy::Provided(f) => check(f),
        InitStrategy::Random => {
            let d = shape.len() - 1;
            let x = shape[..d]
                .iter()
                .map(|&t| (0..ka).map(|_| random_sphere(t, t as f64, rng)).collect())
                .collect();
            let h = (0..ka).map(|_| complex_normal_vec(shape[d], rng)).collect();
            FactorSet::new(x, h)
        }
    }
}

/// Rank-`Ka` least-squares CPD of `y`.
pub fn solve_cpd<R: Rng + ?Sized>(
    y: &CTensor,
    ka: usize,
    opts: &SolverOptions,
    truth: Option<&FactorSet>,
    rng: &mut R,
) -> Result<CpdResult> {
    opts.validate()?;
    if ka == 0 {
        return Err(TbmError::Config("Ka must be >= 1".into()));
    }
    let shape = y.shape().to_vec();
    if shape.len() < 2 {
        return Err(TbmError::Dimension("need at least one data mode and the channel".into()));
    }
    let y_norm = y.norm2();
    if !y_norm.is_finite() {
        return Err(TbmError::Divergence("received tensor is not finite".into()));
    }
    let total: usize = shape.iter().product();
    let rank_warning = shape.iter().any(|&t| ka > total / t);

    let start = init_factors(&shape, ka, &opts.init, truth, rng)?;
    let mut z = to_mats(&start);
    normalize(&mut z);
    let mut f = residual_tensor(y, &z)?.norm2();
    if !f.is_finite() {
        return Err(TbmError::Divergence("initial residual is not finite".into()));
    }
    let mut grad = mttkrp(&residual_tensor(y, &z)?, &z);
    let mut g_norm = mats_norm(&grad);
    let g0 = g_norm;
    let mut lambda = opts
        .damping
        .unwrap_or(1e-4 * f / total as f64)
        .max(f64::MIN_POSITIVE);

    let mut trace = Vec::new();
    let mut record = |it: usize, f: f64, g: f64| {
        if opts.trace {
            trace.push(TraceRow {
                iteration: it,
                residual: f,
                grad_norm: g,
            });
        }
    };
    record(0, f, g_norm);

    let mut converged = false;
    let mut iterations = 0;
    let mut stalls = 0;
    let mut als_sweeps = 0;
    while iterations < opts.max_iters {
        if f <= 1e-30 * y_norm || g_norm <= opts.grad_tol * g0 || g0 == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        let op = NormalOp::new(&z, lambda)?;
        let step = pcg(&op, &grad, opts.cg_max_iters, opts.cg_tol);
        let mut cand = z.clone();
        axpy(&mut cand, 1.0, &step);
        normalize(&mut cand);
        let r_new = residual_tensor(y, &cand)?;
        let f_new = r_new.norm2();
        let mut accepted_rel = None;
        if f_new.is_finite() && f_new < f {
            let rel = (f - f_new) / f;
            z = cand;
            f = f_new;
            grad = mttkrp(&r_new, &z);
            g_norm = mats_norm(&grad);
            lambda = (lambda / 10.0).max(f64::MIN_POSITIVE);
            accepted_rel = Some(rel);
            if rel < 1e-12 {
                stalls += 1;
            } else {
                stalls = 0;
            }
        } else {
            lambda *= 10.0;
            stalls += 1;
        }
        record(iterations, f, g_norm);
        if accepted_rel.is_some_and(|rel| rel < opts.rel_tol) {
            converged = true;
            break;
        }
        if stalls >= opts.stall_limit {
            stalls = 0;
            let mut alt = z.clone();
            als_sweep(y, &mut alt);
            als_sweeps += 1;
            let r_alt = residual_tensor(y, &alt)?;
            let f_alt = r_alt.norm2();
            if f_alt.is_finite() && f_alt < f * (1.0 - 1e-12) {
                z = alt;
                f = f_alt;
                grad = mttkrp(&r_alt, &z);
                g_norm = mats_norm(&grad);
                lambda = opts.damping.unwrap_or(1e-4 * f / total as f64).max(f64::MIN_POSITIVE);
            } else {
                converged = true;
                break;
            }
        }
    }
    if !f.is_finite() {
        return Err(TbmError::Divergence("residual became non-finite".into()));
    }
    let factors = FactorSet::from_mode_matrices(&z)?;
    Ok(CpdResult {
        factors,
        residual: f,
        iterations,
        converged,
        als_sweeps,
        rank_warning,
        trace,
    })
}

/// Permutation and phase resolution of an estimate against the truth.
#[derive(Clone, Debug)]
pub struct Alignment {
    /// `perm[k]` is the estimated user matched to true user `k`.
    pub perm: Vec<usize>,
    /// `phases[i][k] ∈ [0, 2π)` removed from `ẑ_{i,k}` (data modes only).
    pub phases: Vec<Vec<f64>>,
    /// `mse[i][k] = ‖ẑ_{i,k} − x_{i,k}‖² / T_i` after alignment.
    pub mse: Vec<Vec<f64>>,
    /// The estimate reordered to the truth and phase-aligned.
    pub aligned: FactorSet,
}

/// Greedy user matching followed by per-mode phase alignment; the inverse
/// phases go to `ĥ` so each rank-1 term is unchanged.
pub fn align_to_truth(est: &FactorSet, truth: &FactorSet) -> Result<Alignment> {
    if est.shape() != truth.shape() || est.ka() != truth.ka() {
        return Err(TbmError::Dimension("estimate and truth differ in shape".into()));
    }
    let ka = truth.ka();
    let d = truth.d();
    let shape = truth.shape();
    let mut score = vec![vec![0.0; ka]; ka];
    for (kt, row) in score.iter_mut().enumerate() {
        for (ke, s) in row.iter_mut().enumerate() {
            let mut v = 0.0;
            for i in 0..d {
                v += truth.x[i][kt].dotc(&est.x[i][ke]).norm() / shape[i] as f64;
            }
            let hn = (norm2(&truth.h[kt]) * norm2(&est.h[ke])).sqrt();
            if hn > 0.0 {
                v += truth.h[kt].dotc(&est.h[ke]).norm() / hn;
            }
            *s = v;
        }
    }
    let mut perm = vec![usize::MAX; ka];
    let mut used = vec![false; ka];
    for _ in 0..ka {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for kt in (0..ka).filter(|&kt| perm[kt] == usize::MAX) {
            for ke in (0..ka).filter(|&ke| !used[ke]) {
                if score[kt][ke] > best.0 {
                    best = (score[kt][ke], kt, ke);
                }
            }
        }
        perm[best.1] = best.2;
        used[best.2] = true;
    }

    let tau = std::f64::consts::TAU;
    let mut x = vec![Vec::with_capacity(ka); d];
    let mut h = Vec::with_capacity(ka);
    let mut phases = vec![vec![0.0; ka]; d];
    let mut mse = vec![vec![0.0; ka]; d];
    for k in 0..ka {
        let ke = perm[k];
        let mut hk = est.h[ke].clone();
        for i in 0..d {
            let c = truth.x[i][k].dotc(&est.x[i][ke]);
            let phi = if c.norm() > 0.0 { c.arg() } else { 0.0 };
            let rot = C64::from_polar(1.0, -phi);
            let z = &est.x[i][ke] * rot;
            hk *= rot.conj();
            phases[i][k] = phi.rem_euclid(tau);
            mse[i][k] = norm2(&(&z - &truth.x[i][k])) / shape[i] as f64;
            x[i].push(z);
        }
        h.push(hk);
    }
    Ok(Alignment {
        perm,
        phases,
        mse,
        aligned: FactorSet::new(x, h)?,
    })
}

/// Single-trial `‖ẑ_{i,k} − x_{i,k}‖² / T_i` of an alignment.
pub fn empirical_mse(al: &Alignment, i: usize, k: usize) -> Result<f64> {
    al.mse
        .get(i)
        .and_then(|row| row.get(k))
        .copied()
        .ok_or(TbmError::IndexOutOfRange { index: i, len: al.mse.len() })
}
