//! Per-mode vector sub-constellations and their bit labelings.
//!
//! Two families are provided:
//!
//! * `Sphere`: `2^n_bits` i.i.d. points uniform on the complex sphere of
//!   radius `sqrt(T_i)`, a stand-in for max-min Grassmannian designs.
//! * `PilotQam`: the first coordinate is a fixed pilot, the remaining
//!   `T_i - 1` coordinates carry independent Gray-mapped QAM symbols, and each
//!   symbol is rescaled to `‖s‖² = T_i`.
//!
//! Labeling: a bit string `b_0 b_1 ... b_{n-1}` selects symbol index
//! `Σ b_j 2^{n-1-j}` (first bit most significant). For `PilotQam` the bits of
//! data coordinate `t` are `b_{(t-1)q}, ..., b_{tq-1}` with `q = log2(order)`.
//!
//! Demapping uses the phase-invariant metric `|z^H x|`. Codebooks up to
//! [`MAX_ENUMERATED_BITS`] are searched exhaustively; larger pilot+QPSK
//! codebooks use an exact angular sweep (see [`Codebook::bit_class_maxima`]).

use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TbmError};
use crate::tensor::{random_sphere, CVec, C64};

/// Codebooks with at most this many bits per symbol are materialized and
/// searched exhaustively.
pub const MAX_ENUMERATED_BITS: usize = 16;

/// Upper limit for random sphere codebooks (they are always materialized).
pub const MAX_SPHERE_BITS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CodebookKind {
    Sphere,
    PilotQam,
}

impl fmt::Display for CodebookKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodebookKind::Sphere => write!(f, "sphere"),
            CodebookKind::PilotQam => write!(f, "pilot_qam"),
        }
    }
}

/// A vector sub-constellation `C_i ⊂ C^{T_i}`.
#[derive(Clone, Debug)]
pub struct Codebook {
    dim: usize,
    kind: CodebookKind,
    seed: u64,
    bits_per_symbol: usize,
    qam_order: u32,
    symbols: Option<Vec<CVec>>,
}

/// Per-bit maxima of `|z^H x|` over the two label classes `C^{(0,j)}`, `C^{(1,j)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BitMaxima {
    pub max0: Vec<f64>,
    pub max1: Vec<f64>,
}

impl Codebook {
    pub fn build_sphere(dim: usize, n_bits: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(TbmError::Config(format!(
                "sphere codebook needs T_i > 1, got {dim}"
            )));
        }
        if n_bits == 0 || n_bits > MAX_SPHERE_BITS {
            return Err(TbmError::Config(format!(
                "sphere codebook bits must be in 1..={MAX_SPHERE_BITS}, got {n_bits}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let symbols: Vec<CVec> = (0..1usize << n_bits)
            .map(|_| random_sphere(dim, dim as f64, &mut rng))
            .collect();
        check_distinct(&symbols)?;
        Ok(Self {
            dim,
            kind: CodebookKind::Sphere,
            seed,
            bits_per_symbol: n_bits,
            qam_order: 0,
            symbols: Some(symbols),
        })
    }

    /// `seed` is recorded for provenance only; the construction is deterministic.
    pub fn build_pilot_qam(dim: usize, qam_order: u32, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(TbmError::Config(format!(
                "pilot+QAM codebook needs T_i >= 2, got {dim}"
            )));
        }
        let q = match qam_order {
            4 => 2,
            16 => 4,
            other => {
                return Err(TbmError::Unsupported(format!(
                    "QAM order {other} (supported: 4, 16)"
                )))
            }
        };
        let bits = (dim - 1) * q;
        if bits > 127 {
            return Err(TbmError::TooLarge(format!(
                "{bits} bits per symbol exceeds the 127-bit label space"
            )));
        }
        let mut cb = Self {
            dim,
            kind: CodebookKind::PilotQam,
            seed,
            bits_per_symbol: bits,
            qam_order,
            symbols: None,
        };
        if bits <= MAX_ENUMERATED_BITS {
            let symbols: Vec<CVec> = (0..1u128 << bits)
                .map(|i| cb.symbol_from_index(i))
                .collect();
            cb.symbols = Some(symbols);
        }
        Ok(cb)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> CodebookKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn qam_order(&self) -> Option<u32> {
        (self.kind == CodebookKind::PilotQam).then_some(self.qam_order)
    }

    /// Number of symbols, `2^bits_per_symbol`.
    pub fn size(&self) -> u128 {
        1u128 << self.bits_per_symbol
    }

    /// Whether every symbol is held in memory (exhaustive search available).
    pub fn is_enumerated(&self) -> bool {
        self.symbols.is_some()
    }

    pub fn symbols(&self) -> Option<&[CVec]> {
        self.symbols.as_deref()
    }

    pub fn bits_of_index(&self, index: u128) -> Vec<u8> {
        let n = self.bits_per_symbol;
        (0..n).map(|j| ((index >> (n - 1 - j)) & 1) as u8).collect()
    }

    pub fn index_of_bits(&self, bits: &[u8]) -> Result<u128> {
        if bits.len() != self.bits_per_symbol {
            return Err(TbmError::Dimension(format!(
                "expected {} bits, got {}",
                self.bits_per_symbol,
                bits.len()
            )));
        }
        Ok(bits.iter().fold(0u128, |acc, &b| (acc << 1) | u128::from(b & 1)))
    }

    pub fn symbol_from_index(&self, index: u128) -> CVec {
        match &self.symbols {
            Some(s) => s[index as usize].clone(),
            None => self.pilot_qam_symbol(&self.bits_of_index(index)),
        }
    }

    pub fn map_bits(&self, bits: &[u8]) -> Result<CVec> {
        let idx = self.index_of_bits(bits)?;
        Ok(match &self.symbols {
            Some(s) => s[idx as usize].clone(),
            None => self.pilot_qam_symbol(bits),
        })
    }

    fn pilot_qam_symbol(&self, bits: &[u8]) -> CVec {
        let q = self.bits_per_coordinate();
        let mut v = CVec::zeros(self.dim);
        // Pilot amplitude equals the RMS of the unit-energy QAM alphabet.
        v[0] = C64::new(1.0, 0.0);
        for t in 1..self.dim {
            v[t] = qam_point(self.qam_order, &bits[(t - 1) * q..t * q]);
        }
        let energy: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        v * C64::from((self.dim as f64 / energy).sqrt())
    }

    fn bits_per_coordinate(&self) -> usize {
        match self.qam_order {
            4 => 2,
            16 => 4,
            _ => 0,
        }
    }

    fn uses_sweep(&self) -> bool {
        self.symbols.is_none() && self.kind == CodebookKind::PilotQam && self.qam_order == 4
    }

    /// Hard decision `argmax_x |z^H x|` (lowest index wins ties) and its score.
    pub fn demap_hard(&self, z: &CVec) -> Result<(Vec<u8>, f64)> {
        self.check_len(z)?;
        if let Some(symbols) = &self.symbols {
            let mut best = (0usize, f64::NEG_INFINITY);
            for (i, s) in symbols.iter().enumerate() {
                let score = z.dotc(s).norm();
                if score > best.1 {
                    best = (i, score);
                }
            }
            return Ok((self.bits_of_index(best.0 as u128), best.1));
        }
        if self.uses_sweep() {
            let sweep = QpskSweep::new(z);
            let (score, signs) = sweep.maximize(None, true);
            let bits = signs.iter().map(|&s| u8::from(s < 0.0)).collect();
            return Ok((bits, score));
        }
        Err(self.not_searchable())
    }

    /// Per-bit class maxima of `|z^H x|`, the inputs of the max-log LLR.
    pub fn bit_class_maxima(&self, z: &CVec) -> Result<BitMaxima> {
        self.check_len(z)?;
        let nb = self.bits_per_symbol;
        if let Some(symbols) = &self.symbols {
            let mut max0 = vec![f64::NEG_INFINITY; nb];
            let mut max1 = vec![f64::NEG_INFINITY; nb];
            for (i, s) in symbols.iter().enumerate() {
                let score = z.dotc(s).norm();
                for j in 0..nb {
                    let slot = if (i >> (nb - 1 - j)) & 1 == 1 {
                        &mut max1[j]
                    } else {
                        &mut max0[j]
                    };
                    if score > *slot {
                        *slot = score;
                    }
                }
            }
            return Ok(BitMaxima { max0, max1 });
        }
        if self.uses_sweep() {
            let sweep = QpskSweep::new(z);
            let mut max0 = Vec::with_capacity(nb);
            let mut max1 = Vec::with_capacity(nb);
            for j in 0..nb {
                max0.push(sweep.maximize(Some((j, 1.0)), false).0);
                max1.push(sweep.maximize(Some((j, -1.0)), false).0);
            }
            return Ok(BitMaxima { max0, max1 });
        }
        Err(self.not_searchable())
    }

    fn check_len(&self, z: &CVec) -> Result<()> {
        if z.len() != self.dim {
            return Err(TbmError::Dimension(format!(
                "demapper input of length {} for a T_i = {} codebook",
                z.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn not_searchable(&self) -> TbmError {
        TbmError::TooLarge(format!(
            "{} codebook with {} bits/symbol cannot be searched exhaustively",
            self.kind, self.bits_per_symbol
        ))
    }

    /// Text descriptor; symbols are regenerated from it, not stored.
    pub fn descriptor(&self) -> String {
        let mut s = format!(
            "dim={}\nkind={}\nseed={}\nn_bits={}\n",
            self.dim, self.kind, self.seed, self.bits_per_symbol
        );
        if self.kind == CodebookKind::PilotQam {
            s.push_str(&format!("qam_order={}\n", self.qam_order));
        }
        s
    }

    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut kv = HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TbmError::Config(format!("malformed line `{line}`")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| TbmError::Config(format!("codebook descriptor lacks `{k}`")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| TbmError::Config(format!("`{k}` is not an integer")))
        };
        let dim = num("dim")? as usize;
        let seed = num("seed")?;
        let n_bits = num("n_bits")? as usize;
        let cb = match get("kind")?.as_str() {
            "sphere" => Self::build_sphere(dim, n_bits, seed)?,
            "pilot_qam" => Self::build_pilot_qam(dim, num("qam_order")? as u32, seed)?,
            other => return Err(TbmError::Config(format!("unknown codebook kind `{other}`"))),
        };
        if cb.bits_per_symbol != n_bits {
            return Err(TbmError::Config(format!(
                "descriptor n_bits={n_bits} disagrees with construction ({})",
                cb.bits_per_symbol
            )));
        }
        Ok(cb)
    }
}

fn check_distinct(symbols: &[CVec]) -> Result<()> {
    let mut order: Vec<usize> = (0..symbols.len()).collect();
    let key = |i: usize| (symbols[i][0].re, symbols[i][0].im);
    order.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Equal));
    for w in order.windows(2) {
        if symbols[w[0]] == symbols[w[1]] {
            return Err(TbmError::Degenerate(format!(
                "duplicate codebook symbols {} and {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Gray-mapped unit-energy QAM point.
fn qam_point(order: u32, bits: &[u8]) -> C64 {
    match order {
        4 => {
            let i = if bits[0] == 0 { 1.0 } else { -1.0 };
            let q = if bits[1] == 0 { 1.0 } else { -1.0 };
            C64::new(i, q) * FRAC_1_SQRT_2
        }
        16 => {
            let level = |b0: u8, b1: u8| match (b0, b1) {
                (0, 0) => -3.0,
                (0, 1) => -1.0,
                (1, 1) => 1.0,
                _ => 3.0,
            };
            C64::new(level(bits[0], bits[1]), level(bits[2], bits[3])) / 10f64.sqrt()
        }
        _ => unreachable!("validated at construction"),
    }
}

/// Exact maximization of `|c_0 + Σ_j s_j c_j|` over sign vectors `s`, used for
/// pilot+QPSK codebooks where each label bit flips one sign.
///
/// For a direction `φ` the best signs are `s_j = sign Re(e^{-iφ} c_j)`, and
/// `max_s |w(s)| = max_φ max_s Re(e^{-iφ} w(s))`. Sweeping `φ` over `[0, 2π)`
/// and visiting every sign pattern at the breakpoints therefore reaches the
/// optimum; patterns visited between coincident breakpoints are valid
/// codewords, so they never overestimate.
struct QpskSweep {
    c0: C64,
    coeffs: Vec<C64>,
    init: Vec<f64>,
    // (angle, component, new sign), sorted by angle
    events: Vec<(f64, usize, f64)>,
}

impl QpskSweep {
    fn new(z: &CVec) -> Self {
        let m = z.len() - 1;
        let c0 = z[0].conj();
        let mut coeffs = Vec::with_capacity(2 * m);
        for t in 1..=m {
            let a = z[t].conj() * FRAC_1_SQRT_2;
            coeffs.push(a);
            coeffs.push(a * C64::new(0.0, 1.0));
        }
        let init = coeffs
            .iter()
            .map(|c| if c.re > 0.0 { 1.0 } else { -1.0 })
            .collect();
        let mut events = Vec::with_capacity(2 * coeffs.len());
        for (j, c) in coeffs.iter().enumerate() {
            if c.norm_sqr() == 0.0 {
                continue;
            }
            let th = c.arg();
            events.push((wrap_angle(th - PI / 2.0), j, 1.0));
            events.push((wrap_angle(th + PI / 2.0), j, -1.0));
        }
        events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        Self {
            c0,
            coeffs,
            init,
            events,
        }
    }

    /// Returns the maximum and, if requested, the maximizing signs.
    fn maximize(&self, fixed: Option<(usize, f64)>, want_signs: bool) -> (f64, Vec<f64>) {
        let mut signs = self.init.clone();
        if let Some((j, v)) = fixed {
            signs[j] = v;
        }
        let mut w = self.c0;
        for (s, c) in signs.iter().zip(&self.coeffs) {
            w += c * *s;
        }
        let mut best = w.norm();
        let mut best_signs = if want_signs { signs.clone() } else { Vec::new() };
        for &(_, j, v) in &self.events {
            if matches!(fixed, Some((fj, _)) if fj == j) || signs[j] == v {
                continue;
            }
            w += self.coeffs[j] * (v - signs[j]);
            signs[j] = v;
            let score = w.norm();
            if score > best {
                best = score;
                if want_signs {
                    best_signs.copy_from_slice(&signs);
                }
            }
        }
        (best, best_signs)
    }
}

fn wrap_angle(a: f64) -> f64 {
    let t = a.rem_euclid(2.0 * PI);
    if t >= 2.0 * PI {
        0.0
    } else {
        t
    }
}
