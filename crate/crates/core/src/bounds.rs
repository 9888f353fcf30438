//! Performance bounds for the CPD receiver.
//!
//! `ξ_{i,k}` is the normalized error variance `E‖x̂ − αx‖² / (T_i α²)` of
//! mode `i` of user `k`. [`crb_exact`] evaluates the constrained Cramér–Rao
//! bound through the complex Fisher information
//! `I_θθ = (G + Z K Z^H) / σ²` projected on the constraint null space
//! `ν_θ = bdiag(P⊥_{x_{i,k}}, I_N)`. The bias `α` enters the estimator
//! covariance through `D_α` on both sides and the normalization by `α²`
//! cancels it, so the returned value is `Tr[(ν^H I ν)^{-1}]_{(i,k)} / T_i`.
//!
//! The AMP state evolution ([`amp_fixed_point`]) is the real-valued
//! low-rank tensor result applied unchanged to complex tensors; its use here
//! is conjectural.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Result, TbmError};
use crate::system::{FactorSet, TbmConfig};
use crate::tensor::{kron, norm2, orth_complement_basis, orthonormal_span, CMat, CVec, C64};

/// Largest `Ka · Σ T_m` accepted by [`crb_exact`].
pub const DEFAULT_CRB_CAP: usize = 2000;

const SINGULAR_RCOND: f64 = 1e-12;

/// Inverse, inverse square root and condition number of a Hermitian
/// positive definite matrix.
struct HermDecomp {
    inv: CMat,
    inv_sqrt: CMat,
}

fn herm_decomp(m: &CMat, what: &str) -> Result<HermDecomp> {
    let eig = m.clone().symmetric_eigen();
    let eig_max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let eig_min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(eig_max > 0.0) || !(eig_min > SINGULAR_RCOND * eig_max) {
        return Err(TbmError::Singular {
            what: what.to_string(),
            cond: if eig_min > 0.0 { eig_max / eig_min } else { f64::INFINITY },
        });
    }
    let v = &eig.eigenvectors;
    let scaled = |f: &dyn Fn(f64) -> f64| {
        let mut w = v.clone();
        for (j, mut col) in w.column_iter_mut().enumerate() {
            col *= C64::from(f(eig.eigenvalues[j]));
        }
        &w * v.adjoint()
    };
    Ok(HermDecomp {
        inv: scaled(&|l| 1.0 / l),
        inv_sqrt: scaled(&|l| 1.0 / l.sqrt()),
    })
}

fn hadamard_except(grams: &[CMat], skip: &[usize]) -> CMat {
    let ka = grams[0].nrows();
    let mut out = CMat::from_element(ka, ka, C64::new(1.0, 0.0));
    for (m, w) in grams.iter().enumerate() {
        if !skip.contains(&m) {
            out.component_mul_assign(w);
        }
    }
    out
}

/// Per-mode Gram matrices `W_m = X_m^H X_m` and the products built from them.
#[derive(Clone, Debug)]
pub struct GramData {
    pub mode_grams: Vec<CMat>,
}

impl GramData {
    pub fn new(f: &FactorSet) -> Self {
        let mode_grams = (0..f.p())
            .map(|m| {
                let x = f.mode_matrix(m);
                x.adjoint() * x
            })
            .collect();
        Self { mode_grams }
    }

    /// `Γ_i = S_{-i}^H S_{-i} = ⊙_{m≠i} W_m`.
    pub fn gamma(&self, i: usize) -> CMat {
        hadamard_except(&self.mode_grams, &[i])
    }

    /// `Γ_ij = S_{-ij}^H S_{-ij}`, modes `i` and `j` both omitted.
    pub fn gamma_pair(&self, i: usize, j: usize) -> CMat {
        hadamard_except(&self.mode_grams, &[i, j])
    }
}

/// `s_{-i,k}`: user `k`'s signature with mode `i` removed.
pub fn s_minus(f: &FactorSet, i: usize, k: usize) -> Result<CVec> {
    let mut acc: Option<CVec> = None;
    for m in (0..f.p()).filter(|&m| m != i) {
        let v = f.factor(m, k);
        acc = Some(match acc {
            None => v.clone(),
            Some(a) => kron(&a, v)?,
        });
    }
    acc.ok_or_else(|| TbmError::Dimension("no modes left".into()))
}

/// The blocks of the complex Fisher information and its constraint basis.
#[derive(Clone, Debug)]
pub struct FisherAssembly {
    /// `bdiag(Γ_m ⊗ I_{T_m})`.
    pub g: CMat,
    /// `bdiag(I_K ⊗ X_m)`.
    pub z: CMat,
    /// Blocks `K_mn = (1 − δ_mn) P diag(vec Γ_mn)` with `P` the `K×K` commutation.
    pub k: CMat,
    /// `bdiag(P⊥_{x_{m,k}}` for data modes, `I_N` for the channel).
    pub nu: CMat,
    pub sigma2: f64,
    /// Offset of the `(m, k)` block within `θ`.
    pub theta_offsets: Vec<Vec<usize>>,
    /// Offset of the `(m, k)` block within the projected parameter.
    pub nu_offsets: Vec<Vec<usize>>,
    pub shape: Vec<usize>,
}

impl FisherAssembly {
    pub fn new(truth: &FactorSet, sigma2: f64) -> Result<Self> {
        let ka = truth.ka();
        let p = truth.p();
        let shape = truth.shape();
        let grams = GramData::new(truth);
        let n_theta: usize = shape.iter().map(|t| t * ka).sum();
        let n_nu: usize = shape
            .iter()
            .enumerate()
            .map(|(m, &t)| if m + 1 < p { ka * (t - 1) } else { ka * t })
            .sum();

        let mut theta_offsets = vec![vec![0; ka]; p];
        let mut nu_offsets = vec![vec![0; ka]; p];
        let (mut ot, mut on) = (0, 0);
        for m in 0..p {
            for k in 0..ka {
                theta_offsets[m][k] = ot;
                nu_offsets[m][k] = on;
                ot += shape[m];
                on += if m + 1 < p { shape[m] - 1 } else { shape[m] };
            }
        }

        let mut g = CMat::zeros(n_theta, n_theta);
        let mut z = CMat::zeros(n_theta, p * ka * ka);
        let mut nu = CMat::zeros(n_theta, n_nu);
        for m in 0..p {
            let gamma = grams.gamma(m);
            for k in 0..ka {
                let r0 = theta_offsets[m][k];
                for k2 in 0..ka {
                    let c0 = theta_offsets[m][k2];
                    for t in 0..shape[m] {
                        g[(r0 + t, c0 + t)] = gamma[(k, k2)];
                    }
                    // (I_K ⊗ X_m): row (k, t), column (k, a) → x_{m,a}[t]
                    let x = truth.factor(m, k2);
                    for t in 0..shape[m] {
                        z[(r0 + t, m * ka * ka + k * ka + k2)] = x[t];
                    }
                }
                let n0 = nu_offsets[m][k];
                if m + 1 < p {
                    let b = orth_complement_basis(truth.factor(m, k))?;
                    nu.view_mut((r0, n0), (shape[m], shape[m] - 1)).copy_from(&b.columns);
                } else {
                    for t in 0..shape[m] {
                        nu[(r0 + t, n0 + t)] = C64::new(1.0, 0.0);
                    }
                }
            }
        }

        let kk = ka * ka;
        let mut kmat = CMat::zeros(p * kk, p * kk);
        for m in 0..p {
            for n in (0..p).filter(|&n| n != m) {
                let gp = grams.gamma_pair(m, n);
                // diag(vec Γ_mn) has Γ_mn[b, c] at c·K + b; P moves (c, b) to (b, c).
                for a in 0..ka {
                    for b in 0..ka {
                        let row = m * kk + a * ka + b;
                        let col = n * kk + b * ka + a;
                        kmat[(row, col)] = gp[(a, b)];
                    }
                }
            }
        }
        Ok(Self {
            g,
            z,
            k: kmat,
            nu,
            sigma2,
            theta_offsets,
            nu_offsets,
            shape,
        })
    }

    /// `I_θθ = (G + Z K Z^H) / σ²`.
    pub fn fisher(&self) -> CMat {
        (&self.g + &self.z * &self.k * self.z.adjoint()) * C64::from(1.0 / self.sigma2)
    }

    /// `ν^H I_θθ ν`.
    pub fn projected_fisher(&self) -> CMat {
        self.nu.adjoint() * self.fisher() * &self.nu
    }

    /// Diagonal of `D_α = bdiag(α_{m,k}² I_{T_m})`, `alpha[m][k]`.
    pub fn d_alpha(&self, alpha: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::new();
        for (m, row) in alpha.iter().enumerate() {
            for &a in row {
                out.extend(std::iter::repeat_n(a * a, self.shape[m]));
            }
        }
        out
    }
}

/// Exact constrained-CRB value of `ξ_{i,k}` for every data mode `i` and user `k`.
pub fn crb_exact(truth: &FactorSet, sigma2: f64) -> Result<Vec<Vec<f64>>> {
    crb_exact_with_cap(truth, sigma2, DEFAULT_CRB_CAP)
}

pub fn crb_exact_with_cap(truth: &FactorSet, sigma2: f64, cap: usize) -> Result<Vec<Vec<f64>>> {
    let size = truth.ka() * truth.shape().iter().sum::<usize>();
    if size > cap {
        return Err(TbmError::TooLarge(format!(
            "Fisher matrix of size {size} exceeds the cap {cap}"
        )));
    }
    let fa = FisherAssembly::new(truth, sigma2)?;
    let hd = herm_decomp(&fa.projected_fisher(), "projected Fisher information")?;
    let inv = hd.inv;
    let d = truth.d();
    let mut out = vec![vec![0.0; truth.ka()]; d];
    for (i, row) in out.iter_mut().enumerate() {
        let t = fa.shape[i];
        for (k, v) in row.iter_mut().enumerate() {
            let o = fa.nu_offsets[i][k];
            let tr: f64 = (o..o + t - 1).map(|j| inv[(j, j)].re).sum();
            *v = tr / t as f64;
        }
    }
    Ok(out)
}

fn check_data_mode(truth: &FactorSet, i: usize, k: usize) -> Result<()> {
    if i >= truth.d() {
        return Err(TbmError::IndexOutOfRange { index: i, len: truth.d() });
    }
    if k >= truth.ka() {
        return Err(TbmError::IndexOutOfRange { index: k, len: truth.ka() });
    }
    Ok(())
}

/// `‖P⊥_{S_{-i,-k}} s_{-i,k}‖² = 1 / (Γ_i^{-1})_{kk}`.
pub fn residual_signature_energy(truth: &FactorSet, i: usize, k: usize) -> Result<f64> {
    check_data_mode(truth, i, k)?;
    let hd = herm_decomp(&GramData::new(truth).gamma(i), "Gram matrix Γ_i")?;
    Ok(1.0 / hd.inv[(k, k)].re)
}

/// Closed-form lower bound on `ξ_{i,k}` obtained with all other modes known.
pub fn xi_prop1(truth: &FactorSet, sigma2: f64, i: usize, k: usize) -> Result<f64> {
    check_data_mode(truth, i, k)?;
    let ka = truth.ka();
    let t = truth.shape()[i];
    let hd = herm_decomp(&GramData::new(truth).gamma(i), "Gram matrix Γ_i")?;
    let lam = |kk: usize| hd.inv_sqrt.column(kk).into_owned();

    let others: Vec<usize> = (0..ka).filter(|&kk| kk != k).collect();
    let mut ucols = CMat::zeros(ka * t, others.len());
    for (c, &kk) in others.iter().enumerate() {
        ucols.set_column(c, &kron(&lam(kk), truth.factor(i, kk))?);
    }
    let u = orthonormal_span(&ucols).columns;

    let lk = lam(k);
    let lk = &lk / C64::from(norm2(&lk).sqrt());
    let pperp = orth_complement_basis(truth.factor(i, k))?.columns;
    let mut v = CMat::zeros(ka * t, t - 1);
    for c in 0..t - 1 {
        v.set_column(c, &kron(&lk, &pperp.column(c).into_owned())?);
    }
    let cross = (u.adjoint() * v).norm_squared();
    let energy = 1.0 / hd.inv[(k, k)].re;
    Ok(sigma2 * (t as f64 - 1.0 - cross) / (t as f64 * energy))
}

/// Looser closed form `(ξ*, η⁻, η⁺)`; `ξ*` is clamped at zero.
pub fn xi_star(truth: &FactorSet, sigma2: f64, i: usize, k: usize) -> Result<(f64, f64, f64)> {
    check_data_mode(truth, i, k)?;
    let t = truth.shape()[i] as f64;
    let hd = herm_decomp(&GramData::new(truth).gamma(i), "Gram matrix Γ_i")?;
    let (eta_minus, eta_plus) = eta_bounds(&hd.inv);
    let energy = 1.0 / hd.inv[(k, k)].re;
    let corr = 1.0 - (eta_plus * eta_plus - 1.0) / ((t - 1.0) * eta_minus);
    let xi = sigma2 * (t - 1.0) / (t * energy) * corr;
    Ok((xi.max(0.0), eta_minus, eta_plus))
}

/// Extremal eigenvalues of `D^{-1/2} Γ^{-1} D^{-1/2}`, `D = diag(Γ^{-1})`.
fn eta_bounds(gamma_inv: &CMat) -> (f64, f64) {
    let n = gamma_inv.nrows();
    let d: Vec<f64> = (0..n).map(|j| gamma_inv[(j, j)].re.sqrt()).collect();
    let m = CMat::from_fn(n, n, |r, c| gamma_inv[(r, c)] / (d[r] * d[c]));
    let eig = m.symmetric_eigen().eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Isotropic-factor approximation of `ξ*_{i,k}` from the channel energy alone.
pub fn xi_approx(cfg: &TbmConfig, h_norm2: f64, sigma2: f64, i: usize) -> Result<f64> {
    if i >= cfg.d() {
        return Err(TbmError::IndexOutOfRange { index: i, len: cfg.d() });
    }
    let t_i = cfg.dims[i] as f64;
    let tn = (cfg.total_t() * cfg.n_antennas) as f64;
    let load = t_i * (cfg.ka as f64 - 1.0);
    if tn <= load {
        return Err(TbmError::Overload { tn, load });
    }
    Ok((t_i - 1.0) * sigma2 / (tn - load) * cfg.n_antennas as f64 / h_norm2)
}

/// Bias tied to the normalized variance, `α = 1/√(1+ξ)`.
pub fn alpha_from_xi(xi: f64) -> f64 {
    1.0 / (1.0 + xi).sqrt()
}

/// Lower bound on the per-symbol MSE `E‖x̂ − x‖²/T_i`, `2(1 − (1+ξ*)^{-1/2})`.
pub fn mse_lower_bound(xi_star: f64) -> f64 {
    2.0 * (1.0 - alpha_from_xi(xi_star))
}

/// Fixed point of the AMP state evolution.
#[derive(Clone, Debug)]
pub struct AmpResult {
    /// `Δ_m` for each of the `p` modes.
    pub delta: Vec<f64>,
    pub m: Vec<DMatrix<f64>>,
    /// `mse[m][k]`.
    pub mse: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub damped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AmpStart {
    /// `M_m = I`.
    Informative,
    /// `M_m = 0`.
    Uninformative,
}

pub const AMP_TOL: f64 = 1e-12;
pub const AMP_MAX_ITERS: usize = 10_000;

/// `Δ_m = σ² T_m^{-1} (Π_j T_j)^{(1−d)/(1+d)}` over all `p = d+1` modes.
pub fn amp_deltas(cfg: &TbmConfig, sigma2: f64) -> Vec<f64> {
    let shape = cfg.tensor_shape();
    let d = cfg.d() as f64;
    let total: f64 = shape.iter().map(|&t| t as f64).product();
    let scale = total.powf((1.0 - d) / (1.0 + d));
    shape.iter().map(|&t| sigma2 / t as f64 * scale).collect()
}

fn amp_map(delta: f64, h: &DMatrix<f64>) -> DMatrix<f64> {
    let n = h.nrows();
    let a = DMatrix::<f64>::identity(n, n) * delta + h;
    match a.clone().lu().solve(h) {
        Some(s) => s,
        None => DMatrix::zeros(n, n),
    }
}

fn hadamard_others(ms: &[DMatrix<f64>], skip: usize) -> DMatrix<f64> {
    let n = ms[0].nrows();
    let mut out = DMatrix::from_element(n, n, 1.0);
    for (j, m) in ms.iter().enumerate() {
        if j != skip {
            out.component_mul_assign(m);
        }
    }
    out
}

pub fn amp_fixed_point(cfg: &TbmConfig, sigma2: f64) -> AmpResult {
    amp_fixed_point_from(cfg, sigma2, AmpStart::Informative)
}

pub fn amp_fixed_point_from(cfg: &TbmConfig, sigma2: f64, start: AmpStart) -> AmpResult {
    let ka = cfg.ka;
    let p = cfg.d() + 1;
    let delta = amp_deltas(cfg, sigma2);
    let init = match start {
        AmpStart::Informative => DMatrix::<f64>::identity(ka, ka),
        AmpStart::Uninformative => DMatrix::<f64>::zeros(ka, ka),
    };
    let mut ms = vec![init; p];
    let mut damped = false;
    let mut last_sign = 0.0f64;
    let mut flips = 0;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..AMP_MAX_ITERS {
        iterations = it + 1;
        let next: Vec<DMatrix<f64>> = (0..p)
            .map(|i| amp_map(delta[i], &hadamard_others(&ms, i)))
            .collect();
        let mut change = 0.0f64;
        let mut signed = 0.0f64;
        for (a, b) in next.iter().zip(&ms) {
            for (x, y) in a.iter().zip(b.iter()) {
                change = change.max((x - y).abs());
                signed += x - y;
            }
        }
        let sign = signed.signum();
        if sign != 0.0 && last_sign != 0.0 && sign != last_sign {
            flips += 1;
            if flips >= 2 {
                damped = true;
            }
        } else {
            flips = 0;
        }
        last_sign = sign;
        if damped {
            for (m, n) in ms.iter_mut().zip(&next) {
                *m = (&*m + n) * 0.5;
            }
        } else {
            ms = next;
        }
        if change < AMP_TOL {
            converged = true;
            break;
        }
    }
    let mse = (0..p)
        .map(|i| {
            let h = hadamard_others(&ms, i);
            let post = amp_map(delta[i], &h);
            (0..ka)
                .map(|k| 1.0 + post[(k, k)] - 2.0 * ms[i][(k, k)])
                .collect()
        })
        .collect();
    AmpResult {
        delta,
        m: ms,
        mse,
        iterations,
        converged,
        damped,
    }
}

/// One CSV row of [`bound_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub i: usize,
    pub k: usize,
    pub xi_exact: f64,
    pub xi_prop1: f64,
    pub xi_star: f64,
    pub xi_approx: f64,
    pub mse_lb: f64,
    pub alpha: f64,
    pub eta_minus: f64,
    pub eta_plus: f64,
    pub mse_amp: f64,
}

pub const BOUND_CSV_HEADER: &str =
    "i,k,xi_exact,xi_prop1,xi_star,xi_approx,mse_lb,alpha,eta_minus,eta_plus,mse_amp";

impl BoundRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
            self.i,
            self.k,
            self.xi_exact,
            self.xi_prop1,
            self.xi_star,
            self.xi_approx,
            self.mse_lb,
            self.alpha,
            self.eta_minus,
            self.eta_plus,
            self.mse_amp
        )
    }
}

/// Every bound for every data mode and user of one instance.
pub fn bound_report(cfg: &TbmConfig, truth: &FactorSet) -> Result<Vec<BoundRow>> {
    let sigma2 = cfg.sigma2;
    let exact = crb_exact(truth, sigma2)?;
    let amp = amp_fixed_point(cfg, sigma2);
    let mut rows = Vec::new();
    for i in 0..truth.d() {
        for k in 0..truth.ka() {
            let (xs, em, ep) = xi_star(truth, sigma2, i, k)?;
            rows.push(BoundRow {
                i,
                k,
                xi_exact: exact[i][k],
                xi_prop1: xi_prop1(truth, sigma2, i, k)?,
                xi_star: xs,
                xi_approx: xi_approx(cfg, norm2(&truth.h[k]), sigma2, i)?,
                mse_lb: mse_lower_bound(xs),
                alpha: alpha_from_xi(exact[i][k]),
                eta_minus: em,
                eta_plus: ep,
                mse_amp: amp.mse[i][k],
            });
        }
    }
    Ok(rows)
}

pub fn write_bound_csv<W: Write>(out: &mut W, rows: &[BoundRow]) -> Result<()> {
    writeln!(out, "{BOUND_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::random_factors;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(dims: Vec<usize>, n: usize, ka: usize, seed: u64) -> (TbmConfig, FactorSet) {
        let cfg = TbmConfig::new(dims, n, ka, 0.1).unwrap();
        let f = random_factors(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        (cfg, f)
    }

    /// Holomorphic Jacobian of `θ ↦ Σ_k ⊗_m x_{m,k}`, columns ordered like θ.
    fn jacobian(f: &FactorSet) -> CMat {
        let shape = f.shape();
        let len: usize = shape.iter().product();
        let cols: usize = shape.iter().sum::<usize>() * f.ka();
        let mut j = CMat::zeros(len, cols);
        let mut c = 0;
        for m in 0..f.p() {
            for k in 0..f.ka() {
                for t in 0..shape[m] {
                    let mut fs = f.user_factors(k);
                    fs[m] = CVec::zeros(shape[m]);
                    fs[m][t] = C64::new(1.0, 0.0);
                    let v = crate::tensor::kron_all(fs.iter()).unwrap();
                    j.set_column(c, &v);
                    c += 1;
                }
            }
        }
        j
    }

    #[test]
    fn fisher_assembly_equals_jacobian_gram() {
        for (ka, seed) in [(1, 1), (2, 2), (3, 3)] {
            let (_, f) = instance(vec![4, 3], 2, ka, seed);
            let fa = FisherAssembly::new(&f, 0.5).unwrap();
            let j = jacobian(&f);
            let oracle = j.adjoint() * j * C64::from(2.0);
            let diff = (fa.fisher() - &oracle).norm() / oracle.norm();
            assert!(diff < 1e-12, "ka={ka} diff={diff}");
            let nn = fa.nu.adjoint() * &fa.nu;
            let id = CMat::identity(nn.nrows(), nn.ncols());
            assert!((nn - id).norm() < 1e-12);
        }
    }

    #[test]
    fn gram_matches_signature_products() {
        let (_, f) = instance(vec![3, 4], 2, 3, 4);
        let g = GramData::new(&f);
        for i in 0..3 {
            let s: Vec<CVec> = (0..3).map(|k| s_minus(&f, i, k).unwrap()).collect();
            let sm = CMat::from_columns(&s);
            assert!((sm.adjoint() * &sm - g.gamma(i)).norm() < 1e-10);
        }
    }

    #[test]
    fn ka1_closed_form() {
        let (_, f) = instance(vec![4, 3], 2, 1, 5);
        let sigma2 = 0.1;
        let exact = crb_exact(&f, sigma2).unwrap();
        for i in 0..2 {
            let other: f64 = (0..3).filter(|&m| m != i).map(|m| norm2(f.factor(m, 0))).product();
            let t = f.shape()[i] as f64;
            let cf = sigma2 * (t - 1.0) / (t * other);
            let p1 = xi_prop1(&f, sigma2, i, 0).unwrap();
            let (xs, em, ep) = xi_star(&f, sigma2, i, 0).unwrap();
            for v in [exact[i][0], p1, xs] {
                assert!((v - cf).abs() <= 1e-8 * cf);
            }
            assert!((em - 1.0).abs() < 1e-12 && (ep - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn xi_prop1_arithmetic_example() {
        // T_i = 4, σ² = 0.1, product of other energies 24
        let x0 = CVec::from_element(4, C64::new(1.0, 0.0));
        let x1 = CVec::from_element(3, C64::new(2.0f64.sqrt(), 0.0));
        let h = CVec::from_element(2, C64::new(2.0, 0.0));
        // ‖x1‖² = 6, ‖h‖² = 8 → 48; rescale h to get 24
        let h = h * C64::from(0.5f64.sqrt());
        let f = FactorSet::new(vec![vec![x0], vec![x1]], vec![h]).unwrap();
        let v = xi_prop1(&f, 0.1, 0, 0).unwrap();
        assert!((v - 0.003125).abs() < 1e-15);
    }

    /// Single-mode constrained CRB with every other mode known.
    fn single_mode_crb(f: &FactorSet, sigma2: f64, i: usize, k: usize) -> f64 {
        let ka = f.ka();
        let t = f.shape()[i];
        let gamma = GramData::new(f).gamma(i);
        let mut g = CMat::zeros(ka * t, ka * t);
        let mut nu = CMat::zeros(ka * t, ka * (t - 1));
        for a in 0..ka {
            for b in 0..ka {
                for s in 0..t {
                    g[(a * t + s, b * t + s)] = gamma[(a, b)] / sigma2;
                }
            }
            let pb = orth_complement_basis(f.factor(i, a)).unwrap().columns;
            nu.view_mut((a * t, a * (t - 1)), (t, t - 1)).copy_from(&pb);
        }
        let inv = (nu.adjoint() * g * &nu).try_inverse().unwrap();
        (k * (t - 1)..(k + 1) * (t - 1)).map(|j| inv[(j, j)].re).sum::<f64>() / t as f64
    }

    #[test]
    fn known_modes_lower_the_crb() {
        for seed in 0..5 {
            let (_, f) = instance(vec![5, 4], 3, 3, 10 + seed);
            let exact = crb_exact(&f, 0.2).unwrap();
            for i in 0..2 {
                for k in 0..3 {
                    let single = single_mode_crb(&f, 0.2, i, k);
                    assert!(single <= exact[i][k] + 1e-12, "{single} {}", exact[i][k]);
                }
            }
        }
        let (_, f) = instance(vec![5, 4], 3, 1, 20);
        let a = xi_prop1(&f, 0.2, 0, 0).unwrap();
        assert!((a - single_mode_crb(&f, 0.2, 0, 0)).abs() < 1e-12 * a);
    }

    #[test]
    fn ordering_chain_on_random_instances() {
        for seed in 0..10 {
            let ka = 2 + (seed as usize % 2);
            let (_, f) = instance(vec![6, 5], 4, ka, 100 + seed);
            let exact = crb_exact(&f, 0.3).unwrap();
            for i in 0..2 {
                for k in 0..ka {
                    let p1 = xi_prop1(&f, 0.3, i, k).unwrap();
                    let (xs, _, _) = xi_star(&f, 0.3, i, k).unwrap();
                    assert!(xs <= p1 + 1e-9, "{xs} {p1}");
                    assert!(p1 <= exact[i][k] + 1e-9, "{p1} {}", exact[i][k]);
                }
            }
        }
    }

    #[test]
    fn orthogonal_users_remove_cross_term() {
        let e = |n: usize, j: usize| {
            let mut v = CVec::zeros(n);
            v[j] = C64::new(n as f64, 0.0).sqrt();
            v
        };
        let x0 = vec![e(4, 0), e(4, 1)];
        let x1 = vec![e(3, 0), e(3, 1)];
        let h = vec![e(2, 0), e(2, 1)];
        let f = FactorSet::new(vec![x0, x1], h).unwrap();
        let p1 = xi_prop1(&f, 0.1, 0, 1).unwrap();
        let energy = residual_signature_energy(&f, 0, 1).unwrap();
        let expect = 0.1 * 3.0 / (4.0 * energy);
        assert!((p1 - expect).abs() < 1e-14);
        let (xs, em, ep) = xi_star(&f, 0.1, 0, 1).unwrap();
        assert!((em - 1.0).abs() < 1e-12 && (ep - 1.0).abs() < 1e-12);
        assert!((xs - expect).abs() < 1e-14);
    }

    #[test]
    fn residual_energy_matches_projection() {
        let (_, f) = instance(vec![4, 3], 3, 3, 6);
        for k in 0..3 {
            let s: Vec<CVec> = (0..3)
                .filter(|&kk| kk != k)
                .map(|kk| s_minus(&f, 0, kk).unwrap())
                .collect();
            let r = crate::tensor::project_orth(&CMat::from_columns(&s), &s_minus(&f, 0, k).unwrap()).unwrap();
            let e = residual_signature_energy(&f, 0, k).unwrap();
            assert!((norm2(&r) - e).abs() < 1e-9 * e);
        }
    }

    #[test]
    fn sigma_scaling_and_phase_invariance() {
        let (_, f) = instance(vec![4, 3], 2, 2, 7);
        let a = crb_exact(&f, 0.1).unwrap();
        let b = crb_exact(&f, 0.3).unwrap();
        let mut g = f.clone();
        let c = C64::from_polar(1.0, 0.7);
        g.x[0][1] *= c;
        g.x[1][1] *= c.conj();
        let r = crb_exact(&g, 0.1).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                assert!((b[i][k] - 3.0 * a[i][k]).abs() < 1e-9 * b[i][k]);
                assert!((r[i][k] - a[i][k]).abs() < 1e-9 * a[i][k].max(1.0));
                let p = xi_prop1(&f, 0.1, i, k).unwrap();
                let p3 = xi_prop1(&f, 0.3, i, k).unwrap();
                assert!((p3 - 3.0 * p).abs() < 1e-12 * p3);
            }
        }
    }

    #[test]
    fn singular_and_oversized_inputs_fail() {
        let (_, mut f) = instance(vec![4, 3], 2, 2, 8);
        f.x[0][1] = f.x[0][0].clone();
        f.x[1][1] = f.x[1][0].clone();
        f.h[1] = f.h[0].clone();
        assert!(matches!(xi_prop1(&f, 0.1, 0, 0), Err(TbmError::Singular { .. })));
        assert!(matches!(crb_exact(&f, 0.1), Err(TbmError::Singular { .. })));
        let (_, g) = instance(vec![4, 3], 2, 2, 9);
        assert!(matches!(crb_exact_with_cap(&g, 0.1, 10), Err(TbmError::TooLarge(_))));
        assert!(xi_prop1(&g, 0.1, 2, 0).is_err());
    }

    #[test]
    fn xi_approx_examples() {
        let cfg = TbmConfig::new(vec![4, 3], 2, 1, 0.1).unwrap();
        assert!((xi_approx(&cfg, 2.0, 0.1, 0).unwrap() - 0.0125).abs() < 1e-15);
        let cfg3 = TbmConfig::new(vec![4, 3], 2, 3, 0.1).unwrap();
        assert!((xi_approx(&cfg3, 2.0, 0.1, 0).unwrap() - 0.01875).abs() < 1e-15);
        let over = TbmConfig::new(vec![4, 3], 2, 7, 0.1).unwrap();
        assert!(matches!(xi_approx(&over, 2.0, 0.1, 0), Err(TbmError::Overload { .. })));
    }

    #[test]
    fn xi_approx_tracks_mean_xi_star() {
        let cfg = TbmConfig::new(vec![32, 32], 4, 2, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 400;
        let (mut s, mut a) = (0.0, 0.0);
        for _ in 0..n {
            let f = random_factors(&cfg, &mut rng);
            s += xi_star(&f, 0.1, 0, 0).unwrap().0;
            a += xi_approx(&cfg, norm2(&f.h[0]), 0.1, 0).unwrap();
        }
        assert!((s / a - 1.0).abs() < 0.05, "{}", s / a);
    }

    #[test]
    fn bias_and_mse_bound_values() {
        assert_eq!(alpha_from_xi(0.0), 1.0);
        assert!((alpha_from_xi(3.0) - 0.5).abs() < 1e-15);
        assert!(alpha_from_xi(0.2) > alpha_from_xi(0.3));
        assert_eq!(mse_lower_bound(0.0), 0.0);
        let v = 2.0 * (1.0 - 1.0125f64.powf(-0.5));
        assert!((mse_lower_bound(0.0125) - v).abs() < 1e-15);
        assert!((v - 0.012_384).abs() < 1e-6);
        for xi in [1e-4, 1e-3, 9e-3] {
            assert!((mse_lower_bound(xi) / xi - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn amp_delta_and_trivial_fixed_point() {
        let cfg = TbmConfig::new(vec![4, 3], 2, 1, 1.0).unwrap();
        let d = amp_deltas(&cfg, 1.0);
        assert!((d[0] - 0.25 * 24f64.powf(-1.0 / 3.0)).abs() < 1e-15);
        let r = amp_fixed_point_from(&cfg, 1.0, AmpStart::Uninformative);
        assert!(r.converged);
        for row in &r.mse {
            for &v in row {
                assert!((v - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn amp_mse_bounded_and_monotone() {
        let cfg = TbmConfig::new(vec![64, 50], 50, 2, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for j in 0..30 {
            let snr = -40.0 + j as f64;
            let r = amp_fixed_point(&cfg, crate::system::sigma2_from_snr_db(snr));
            for row in &r.mse {
                for &v in row {
                    assert!((0.0..=2.0).contains(&v));
                }
            }
            let m = r.mse[0][0];
            assert!(m <= prev + 1e-9, "snr {snr}: {m} > {prev}");
            prev = m;
        }
    }

    #[test]
    fn report_rows_are_consistent() {
        let (cfg, f) = instance(vec![4, 3], 2, 2, 12);
        let rows = bound_report(&cfg, &f).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert!(r.xi_prop1 <= r.xi_exact + 1e-9);
            assert!(r.xi_star >= 0.0);
            assert!(r.alpha > 0.0 && r.alpha <= 1.0);
        }
        let mut buf = Vec::new();
        write_bound_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with(BOUND_CSV_HEADER));
    }
}
