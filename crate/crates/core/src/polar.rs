//! Polar codes with successive-cancellation decoding.
//!
//! Codewords are `x = u F^{⊗m}` in natural order, `F = [[1,0],[1,1]]`, so
//! `x = [(u_1 ⊕ u_2) F', u_2 F']` for the two halves of `u`. The decoder
//! uses min-sum check updates; input LLRs are positive for bit 1.
//!
//! Construction ranks the synthetic channels by Gaussian-approximation
//! density evolution on a BPSK-AWGN channel whose LLR mean is
//! `4·Es/N0` at the design SNR.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Result, TbmError};

#[derive(Clone, Debug, PartialEq)]
pub struct PolarCode {
    n: usize,
    info: Vec<usize>,
    frozen: Vec<bool>,
    design_snr_db: f64,
}

/// `ln φ(x)` with Chung's approximation of
/// `φ(x) = 1 − E[tanh(L/2)]`, `L ~ N(x, 2x)`.
fn ln_phi(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < 10.0 {
        -0.4527 * x.powf(0.86) + 0.0218
    } else {
        0.5 * (std::f64::consts::PI / x).ln() - x / 4.0 + (1.0 - 10.0 / (7.0 * x)).ln()
    }
}

/// Inverse of [`ln_phi`] by bisection.
fn inv_ln_phi(target: f64) -> f64 {
    if target >= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while ln_phi(hi) > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ln_phi(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Mean LLR after a check-node combination of two channels of mean `m`.
fn check_mean(m: f64) -> f64 {
    let lp = ln_phi(m);
    // 1 − (1 − φ)² = φ (2 − φ)
    inv_ln_phi(lp + (2.0 - lp.exp()).ln())
}

fn ga_means(m: f64, n: usize, out: &mut Vec<f64>) {
    if n == 1 {
        out.push(m);
    } else {
        ga_means(check_mean(m), n / 2, out);
        ga_means(2.0 * m, n / 2, out);
    }
}

/// GA mean LLR of every synthetic channel `u_j`, natural order.
pub fn synthetic_channel_means(n: usize, design_snr_db: f64) -> Vec<f64> {
    let m0 = 4.0 * 10f64.powf(design_snr_db / 10.0);
    let mut out = Vec::with_capacity(n);
    ga_means(m0, n, &mut out);
    out
}

pub fn polar_construct(n: usize, b: usize, design_snr_db: f64) -> Result<PolarCode> {
    if n == 0 || !n.is_power_of_two() {
        return Err(TbmError::Config(format!("block length {n} is not a power of two")));
    }
    if b == 0 || b > n {
        return Err(TbmError::Config(format!("payload of {b} bits for block length {n}")));
    }
    if !design_snr_db.is_finite() {
        return Err(TbmError::Config("design SNR must be finite".into()));
    }
    let means = synthetic_channel_means(n, design_snr_db);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| means[c].total_cmp(&means[a]).then(c.cmp(&a)));
    let mut info: Vec<usize> = order[..b].to_vec();
    info.sort_unstable();
    let mut frozen = vec![true; n];
    for &j in &info {
        frozen[j] = false;
    }
    Ok(PolarCode {
        n,
        info,
        frozen,
        design_snr_db,
    })
}

impl PolarCode {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn payload_bits(&self) -> usize {
        self.info.len()
    }

    pub fn rate(&self) -> f64 {
        self.info.len() as f64 / self.n as f64
    }

    /// Information positions, ascending.
    pub fn info_set(&self) -> &[usize] {
        &self.info
    }

    pub fn is_frozen(&self, j: usize) -> bool {
        self.frozen[j]
    }

    pub fn design_snr_db(&self) -> f64 {
        self.design_snr_db
    }

    /// `n=…;B=…;design_snr_db=…;info_hash=…` with a SHA-256 prefix of the info set.
    pub fn descriptor(&self) -> String {
        let mut h = Sha256::new();
        for &j in &self.info {
            h.update((j as u64).to_le_bytes());
        }
        let digest = h.finalize();
        let mut hex = String::new();
        for byte in &digest[..8] {
            let _ = write!(hex, "{byte:02x}");
        }
        format!(
            "n={};B={};design_snr_db={};info_hash={}",
            self.n,
            self.info.len(),
            self.design_snr_db,
            hex
        )
    }
}

/// In-place `x = u F^{⊗m}`; an involution.
pub fn polar_transform(bits: &mut [u8]) {
    let n = bits.len();
    let mut half = 1;
    while half < n {
        for start in (0..n).step_by(2 * half) {
            for j in start..start + half {
                bits[j] ^= bits[j + half];
            }
        }
        half *= 2;
    }
}

pub fn polar_encode(code: &PolarCode, payload: &[u8]) -> Result<Vec<u8>> {
    if payload.len() != code.info.len() {
        return Err(TbmError::Dimension(format!(
            "payload of {} bits for a code carrying {}",
            payload.len(),
            code.info.len()
        )));
    }
    let mut u = vec![0u8; code.n];
    for (&j, &b) in code.info.iter().zip(payload) {
        u[j] = b & 1;
    }
    polar_transform(&mut u);
    Ok(u)
}

fn min_sum(a: f64, b: f64) -> f64 {
    let mag = a.abs().min(b.abs());
    if (a < 0.0) != (b < 0.0) {
        -mag
    } else {
        mag
    }
}

/// `l` is in the positive-means-zero convention; returns `(û, x̂)` for this block.
fn sc_rec(l: &[f64], frozen: &[bool], u: &mut Vec<u8>) -> Vec<u8> {
    let n = l.len();
    if n == 1 {
        let bit = if frozen[0] || l[0] >= 0.0 { 0 } else { 1 };
        u.push(bit);
        return vec![bit];
    }
    let h = n / 2;
    let (l1, l2) = l.split_at(h);
    let lf: Vec<f64> = l1.iter().zip(l2).map(|(&a, &b)| min_sum(a, b)).collect();
    let c1 = sc_rec(&lf, &frozen[..h], u);
    let lg: Vec<f64> = l1
        .iter()
        .zip(l2)
        .zip(&c1)
        .map(|((&a, &b), &c)| if c == 0 { b + a } else { b - a })
        .collect();
    let c2 = sc_rec(&lg, &frozen[h..], u);
    let mut x: Vec<u8> = c1.iter().zip(&c2).map(|(a, b)| a ^ b).collect();
    x.extend_from_slice(&c2);
    x
}

/// Successive-cancellation decoding; `llrs[j] = ln p(x_j=1)/p(x_j=0)`.
pub fn polar_decode_sc(code: &PolarCode, llrs: &[f64]) -> Result<Vec<u8>> {
    if llrs.len() != code.n {
        return Err(TbmError::Dimension(format!(
            "{} LLRs for block length {}",
            llrs.len(),
            code.n
        )));
    }
    let l: Vec<f64> = llrs
        .iter()
        .map(|&v| if v.is_nan() { 0.0 } else { -v })
        .collect();
    let mut u = Vec::with_capacity(code.n);
    sc_rec(&l, &code.frozen, &mut u);
    Ok(code.info.iter().map(|&j| u[j]).collect())
}

/// SC decoding of hard decisions, fed as LLRs `±1`.
pub fn decode_hard(code: &PolarCode, bits: &[u8]) -> Result<Vec<u8>> {
    decode_hard_with(code, bits, 1.0)
}

pub fn decode_hard_with(code: &PolarCode, bits: &[u8], c: f64) -> Result<Vec<u8>> {
    let llrs: Vec<f64> = bits.iter().map(|&b| if b & 1 == 1 { c } else { -c }).collect();
    polar_decode_sc(code, &llrs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_bits(n: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
        (0..n).map(|_| rng.random_range(0..2u8)).collect()
    }

    /// Bhattacharyya parameters of the synthetic channels.
    fn bhattacharyya(n: usize, z0: f64) -> Vec<f64> {
        let mut z = vec![z0];
        while z.len() < n {
            let mut next = Vec::with_capacity(2 * z.len());
            next.extend(z.iter().map(|&v| 2.0 * v - v * v));
            next.extend(z.iter().map(|&v| v * v));
            z = next;
        }
        z
    }

    #[test]
    fn construction_edge_cases() {
        let full = polar_construct(8, 8, 0.0).unwrap();
        assert_eq!(full.info_set(), &[0, 1, 2, 3, 4, 5, 6, 7]);
        assert!(polar_construct(8, 0, 0.0).is_err());
        assert!(polar_construct(8, 9, 0.0).is_err());
        assert!(polar_construct(12, 4, 0.0).is_err());
    }

    #[test]
    fn construction_matches_bhattacharyya_at_n8() {
        for snr in [-3.0, 0.0, 2.0, 5.0] {
            let code = polar_construct(8, 4, snr).unwrap();
            assert!(!code.info_set().contains(&0));
            let z = bhattacharyya(8, (-(10f64.powf(snr / 10.0))).exp());
            let mut order: Vec<usize> = (0..8).collect();
            order.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
            let mut best: Vec<usize> = order[..4].to_vec();
            best.sort_unstable();
            assert_eq!(code.info_set(), best.as_slice(), "snr {snr}");
        }
    }

    #[test]
    fn ga_means_are_monotone_in_snr() {
        let a = synthetic_channel_means(64, 0.0);
        let b = synthetic_channel_means(64, 2.0);
        for (x, y) in a.iter().zip(&b) {
            assert!(y >= x);
        }
        assert!(check_mean(1000.0) < 1000.0 && check_mean(1000.0) > 990.0);
    }

    #[test]
    fn encoder_examples() {
        let code = polar_construct(2, 2, 0.0).unwrap();
        for (u1, u2) in [(0u8, 0u8), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(polar_encode(&code, &[u1, u2]).unwrap(), vec![u1 ^ u2, u2]);
        }
        let code = polar_construct(16, 8, 1.0).unwrap();
        assert_eq!(polar_encode(&code, &[0; 8]).unwrap(), vec![0; 16]);
        assert!(polar_encode(&code, &[0; 7]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = random_bits(8, &mut rng);
            let b = random_bits(8, &mut rng);
            let ab: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
            let ea = polar_encode(&code, &a).unwrap();
            let eb = polar_encode(&code, &b).unwrap();
            let sum: Vec<u8> = ea.iter().zip(&eb).map(|(x, y)| x ^ y).collect();
            assert_eq!(polar_encode(&code, &ab).unwrap(), sum);
            let mut twice = ea.clone();
            polar_transform(&mut twice);
            let mut u = vec![0u8; 16];
            for (&j, &v) in code.info_set().iter().zip(&a) {
                u[j] = v;
            }
            assert_eq!(twice, u);
        }
    }

    #[test]
    fn noiseless_round_trip_and_sign_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (n, b) in [(16, 16), (64, 32), (128, 64)] {
            let code = polar_construct(n, b, 1.0).unwrap();
            for _ in 0..20 {
                let p = random_bits(b, &mut rng);
                let x = polar_encode(&code, &p).unwrap();
                let llr: Vec<f64> = x.iter().map(|&v| if v == 1 { 30.0 } else { -30.0 }).collect();
                assert_eq!(polar_decode_sc(&code, &llr).unwrap(), p);
                assert_eq!(decode_hard(&code, &x).unwrap(), p);
                // the all-ones word is the last row of F^{⊗m}
                let neg: Vec<f64> = llr.iter().map(|v| -v).collect();
                let mut flipped = p.clone();
                *flipped.last_mut().unwrap() ^= 1;
                assert_eq!(polar_decode_sc(&code, &neg).unwrap(), flipped);
            }
        }
    }

    #[test]
    fn zero_llrs_decide_zero() {
        let code = polar_construct(32, 16, 0.0).unwrap();
        assert_eq!(polar_decode_sc(&code, &[0.0; 32]).unwrap(), vec![0; 16]);
        assert!(polar_decode_sc(&code, &[0.0; 31]).is_err());
    }

    #[test]
    fn bpsk_awgn_baseline() {
        let code = polar_construct(128, 64, 1.0).unwrap();
        let ebn0 = 10f64.powf(0.4);
        let sigma = (1.0 / (2.0 * code.rate() * ebn0)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 2000;
        let mut errors = 0;
        for _ in 0..trials {
            let p = random_bits(64, &mut rng);
            let x = polar_encode(&code, &p).unwrap();
            let llr: Vec<f64> = x
                .iter()
                .map(|&v| {
                    let s = if v == 1 { 1.0 } else { -1.0 };
                    let noise: f64 = rng.sample(StandardNormal);
                    2.0 * (s + sigma * noise) / (sigma * sigma)
                })
                .collect();
            if polar_decode_sc(&code, &llr).unwrap() != p {
                errors += 1;
            }
        }
        assert!((errors as f64) < 0.05 * trials as f64, "{errors}/{trials}");
    }

    #[test]
    fn hard_decoding_is_scale_free() {
        let code = polar_construct(64, 32, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let bits = random_bits(64, &mut rng);
            assert_eq!(
                decode_hard_with(&code, &bits, 1.0).unwrap(),
                decode_hard_with(&code, &bits, 10.0).unwrap()
            );
        }
    }

    #[test]
    fn single_error_in_reliable_position_is_corrected() {
        let code = polar_construct(16, 8, 2.0).unwrap();
        let z = bhattacharyya(16, (-(10f64.powf(0.2))).exp());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_bits(8, &mut rng);
        let x = polar_encode(&code, &p).unwrap();
        // codeword position j is reliable when its bit-reversed synthetic index is
        let reliable: Vec<usize> = (0..16).filter(|&j| z[j] < 0.1).collect();
        assert!(!reliable.is_empty());
        for j in 0..16 {
            let mut y = x.clone();
            y[j] ^= 1;
            if reliable.contains(&j) {
                assert_eq!(decode_hard(&code, &y).unwrap(), p, "flip at {j}");
            }
        }
    }

    #[test]
    fn descriptor_is_stable() {
        let a = polar_construct(128, 64, 1.0).unwrap();
        let b = polar_construct(128, 64, 1.0).unwrap();
        assert_eq!(a.descriptor(), b.descriptor());
        assert!(a.descriptor().starts_with("n=128;B=64;"));
        assert_ne!(a.descriptor(), polar_construct(128, 63, 1.0).unwrap().descriptor());
    }
}
