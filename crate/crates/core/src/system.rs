//! Multi-user TBM transmission over i.i.d. Rayleigh SIMO fading:
//! `y = Σ_k x_{1,k} ⊗ ... ⊗ x_{d,k} ⊗ h_k + w`, with `w ~ CN(0, σ² I)` per
//! complex entry of `y`.

use rand::Rng;

use crate::constellation::Codebook;
use crate::error::{Result, TbmError};
use crate::tensor::{complex_normal, complex_normal_vec, norm2, random_sphere, CMat, CTensor, CVec, C64};

/// How a user's coded bits are spread over the `d` mode constellations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BitInterleave {
    /// First `bits(C_1)` bits to mode 1, the next `bits(C_2)` to mode 2, ...
    #[default]
    Sequential,
    /// Bit `j` goes to the next mode (cyclically) that still has room.
    RoundRobin,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConstellationSpec {
    Sphere { n_bits: usize, seed: u64 },
    PilotQam { order: u32 },
}

impl ConstellationSpec {
    pub fn build(&self, dim: usize) -> Result<Codebook> {
        match *self {
            ConstellationSpec::Sphere { n_bits, seed } => Codebook::build_sphere(dim, n_bits, seed),
            ConstellationSpec::PilotQam { order } => Codebook::build_pilot_qam(dim, order, 0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TbmConfig {
    /// `T_1, ..., T_d`, each > 1.
    pub dims: Vec<usize>,
    pub n_antennas: usize,
    pub ka: usize,
    /// Noise variance per complex entry of `y`.
    pub sigma2: f64,
    /// One entry per mode; may be empty when factors are drawn on the sphere.
    pub constellations: Vec<ConstellationSpec>,
}

impl TbmConfig {
    pub fn new(dims: Vec<usize>, n_antennas: usize, ka: usize, sigma2: f64) -> Result<Self> {
        let cfg = Self {
            dims,
            n_antennas,
            ka,
            sigma2,
            constellations: Vec::new(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_constellations(mut self, specs: Vec<ConstellationSpec>) -> Result<Self> {
        self.constellations = specs;
        self.validate()?;
        Ok(self)
    }

    pub fn with_sigma2(&self, sigma2: f64) -> Self {
        Self {
            sigma2,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.iter().any(|&t| t < 2) {
            return Err(TbmError::Config(format!(
                "mode dims must be nonempty and > 1, got {:?}",
                self.dims
            )));
        }
        if self.n_antennas == 0 {
            return Err(TbmError::Config("N must be positive".into()));
        }
        if self.ka == 0 {
            return Err(TbmError::Config("Ka must be >= 1".into()));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(TbmError::Config(format!("sigma2 must be > 0, got {}", self.sigma2)));
        }
        if !self.constellations.is_empty() && self.constellations.len() != self.dims.len() {
            return Err(TbmError::Config(format!(
                "{} constellations for {} modes",
                self.constellations.len(),
                self.dims.len()
            )));
        }
        Ok(())
    }

    /// Number of information-bearing modes `d`.
    pub fn d(&self) -> usize {
        self.dims.len()
    }

    /// `T = Π T_i`.
    pub fn total_t(&self) -> usize {
        self.dims.iter().product()
    }

    /// Shape of `y`: `(T_1, ..., T_d, N)`.
    pub fn tensor_shape(&self) -> Vec<usize> {
        let mut s = self.dims.clone();
        s.push(self.n_antennas);
        s
    }

    pub fn build_codebooks(&self) -> Result<Vec<Codebook>> {
        if self.constellations.is_empty() {
            return Err(TbmError::Config("no constellations configured".into()));
        }
        self.constellations
            .iter()
            .zip(&self.dims)
            .map(|(spec, &t)| spec.build(t))
            .collect()
    }
}

pub fn sigma2_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

pub fn snr_db_from_sigma2(sigma2: f64) -> f64 {
    -10.0 * sigma2.log10()
}

/// Per-user factors `x_{i,k}` (`i < d`) and channels `h_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorSet {
    /// `x[i][k]`, mode-major.
    pub x: Vec<Vec<CVec>>,
    pub h: Vec<CVec>,
}

impl FactorSet {
    pub fn new(x: Vec<Vec<CVec>>, h: Vec<CVec>) -> Result<Self> {
        let ka = h.len();
        if ka == 0 || x.is_empty() || x.iter().any(|m| m.len() != ka) {
            return Err(TbmError::Dimension(
                "factor set needs the same number of users in every mode".into(),
            ));
        }
        for mode in &x {
            let t = mode[0].len();
            if mode.iter().any(|v| v.len() != t) {
                return Err(TbmError::Dimension("ragged mode factors".into()));
            }
        }
        let n = h[0].len();
        if h.iter().any(|v| v.len() != n) {
            return Err(TbmError::Dimension("ragged channel vectors".into()));
        }
        Ok(Self { x, h })
    }

    pub fn ka(&self) -> usize {
        self.h.len()
    }

    pub fn d(&self) -> usize {
        self.x.len()
    }

    /// `p = d + 1` including the channel mode.
    pub fn p(&self) -> usize {
        self.x.len() + 1
    }

    /// Lengths `(T_1, ..., T_d, N)`.
    pub fn shape(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.x.iter().map(|m| m[0].len()).collect();
        s.push(self.h[0].len());
        s
    }

    /// Factor of `mode` (channel when `mode == d`) for user `k`.
    pub fn factor(&self, mode: usize, k: usize) -> &CVec {
        if mode < self.x.len() {
            &self.x[mode][k]
        } else {
            &self.h[k]
        }
    }

    pub fn factor_mut(&mut self, mode: usize, k: usize) -> &mut CVec {
        if mode < self.x.len() {
            &mut self.x[mode][k]
        } else {
            &mut self.h[k]
        }
    }

    /// All `p` factors of user `k`.
    pub fn user_factors(&self, k: usize) -> Vec<CVec> {
        (0..self.p()).map(|m| self.factor(m, k).clone()).collect()
    }

    /// `X_mode = (x_{mode,1}, ..., x_{mode,Ka})`.
    pub fn mode_matrix(&self, mode: usize) -> CMat {
        let cols: Vec<CVec> = (0..self.ka()).map(|k| self.factor(mode, k).clone()).collect();
        CMat::from_columns(&cols)
    }

    pub fn from_mode_matrices(mats: &[CMat]) -> Result<Self> {
        if mats.len() < 2 {
            return Err(TbmError::Dimension("need at least one data mode and the channel".into()));
        }
        let ka = mats[0].ncols();
        if mats.iter().any(|m| m.ncols() != ka) {
            return Err(TbmError::Dimension("mode matrices disagree on Ka".into()));
        }
        let col = |m: &CMat, k: usize| m.column(k).into_owned();
        let x = mats[..mats.len() - 1]
            .iter()
            .map(|m| (0..ka).map(|k| col(m, k)).collect())
            .collect();
        let last = &mats[mats.len() - 1];
        let h = (0..ka).map(|k| col(last, k)).collect();
        Self::new(x, h)
    }

    /// Noise-free received tensor `Σ_k rank1(x_{1,k}, ..., x_{d,k}, h_k)`.
    pub fn signal(&self) -> Result<CTensor> {
        let mut y = CTensor::zeros(&self.shape())?;
        for k in 0..self.ka() {
            let f: Vec<&CVec> = (0..self.p()).map(|m| self.factor(m, k)).collect();
            y.add_rank1(&f, C64::new(1.0, 0.0))?;
        }
        Ok(y)
    }
}

/// Ka i.i.d. `CN(0, I_N)` channel vectors.
pub fn draw_channels<R: Rng + ?Sized>(cfg: &TbmConfig, rng: &mut R) -> Vec<CVec> {
    (0..cfg.ka)
        .map(|_| complex_normal_vec(cfg.n_antennas, rng))
        .collect()
}

/// Factors uniform on the spheres `‖x_{i,k}‖² = T_i`, Rayleigh channels.
pub fn random_factors<R: Rng + ?Sized>(cfg: &TbmConfig, rng: &mut R) -> FactorSet {
    let x = cfg
        .dims
        .iter()
        .map(|&t| (0..cfg.ka).map(|_| random_sphere(t, t as f64, rng)).collect())
        .collect();
    let h = draw_channels(cfg, rng);
    FactorSet { x, h }
}

/// `SNR_k = ‖h_k‖² / (N σ²)`.
pub fn snr_instantaneous(cfg: &TbmConfig, h: &CVec) -> f64 {
    norm2(h) / (cfg.n_antennas as f64 * cfg.sigma2)
}

pub fn awgn_tensor<R: Rng + ?Sized>(shape: &[usize], sigma2: f64, rng: &mut R) -> Result<CTensor> {
    let n: usize = shape.iter().product();
    let s = sigma2.sqrt();
    CTensor::from_vec(shape, (0..n).map(|_| complex_normal(rng) * s).collect())
}

/// A realized block: payloads, factors, noise and received tensor.
#[derive(Clone, Debug)]
pub struct Transmission {
    pub payloads: Vec<Vec<u8>>,
    pub factors: FactorSet,
    pub noise: CTensor,
    pub y: CTensor,
    pub snr: Vec<f64>,
}

/// Received tensor for given factors; noise drawn from `rng`.
pub fn receive<R: Rng + ?Sized>(
    cfg: &TbmConfig,
    factors: &FactorSet,
    rng: &mut R,
) -> Result<(CTensor, CTensor)> {
    if factors.shape() != cfg.tensor_shape() || factors.ka() != cfg.ka {
        return Err(TbmError::Dimension(format!(
            "factors of shape {:?} with Ka={} do not match config {:?} Ka={}",
            factors.shape(),
            factors.ka(),
            cfg.tensor_shape(),
            cfg.ka
        )));
    }
    let signal = factors.signal()?;
    let noise = awgn_tensor(&cfg.tensor_shape(), cfg.sigma2, rng)?;
    let mut y = signal;
    for (a, b) in y.data_mut().iter_mut().zip(noise.data()) {
        *a += b;
    }
    Ok((y, noise))
}

/// Maps each user's coded bits onto the mode constellations, draws channels
/// and noise, and forms `y`.
pub fn transmit<R: Rng + ?Sized>(
    cfg: &TbmConfig,
    codebooks: &[Codebook],
    payloads: &[Vec<u8>],
    interleave: BitInterleave,
    rng: &mut R,
) -> Result<Transmission> {
    if codebooks.len() != cfg.d() || payloads.len() != cfg.ka {
        return Err(TbmError::Dimension(format!(
            "{} codebooks / {} payloads for d={} Ka={}",
            codebooks.len(),
            payloads.len(),
            cfg.d(),
            cfg.ka
        )));
    }
    let sizes: Vec<usize> = codebooks.iter().map(|c| c.bits_per_symbol()).collect();
    let mut x = vec![Vec::with_capacity(cfg.ka); cfg.d()];
    for bits in payloads {
        let parts = partition_bits(bits, &sizes, interleave)?;
        for (i, (cb, part)) in codebooks.iter().zip(&parts).enumerate() {
            x[i].push(cb.map_bits(part)?);
        }
    }
    let h = draw_channels(cfg, rng);
    let factors = FactorSet::new(x, h)?;
    let (y, noise) = receive(cfg, &factors, rng)?;
    let snr = factors.h.iter().map(|h| snr_instantaneous(cfg, h)).collect();
    Ok(Transmission {
        payloads: payloads.to_vec(),
        factors,
        noise,
        y,
        snr,
    })
}

/// For each bit position of the block, the `(mode, position)` it lands on.
fn bit_slots(sizes: &[usize], interleave: BitInterleave) -> Vec<(usize, usize)> {
    let total: usize = sizes.iter().sum();
    match interleave {
        BitInterleave::Sequential => sizes
            .iter()
            .enumerate()
            .flat_map(|(m, &n)| (0..n).map(move |j| (m, j)))
            .collect(),
        BitInterleave::RoundRobin => {
            let mut fill = vec![0usize; sizes.len()];
            let mut out = Vec::with_capacity(total);
            let mut m = 0;
            while out.len() < total {
                if fill[m] < sizes[m] {
                    out.push((m, fill[m]));
                    fill[m] += 1;
                }
                m = (m + 1) % sizes.len();
            }
            out
        }
    }
}

/// Splits a block of `Σ sizes` bits into per-mode labels.
pub fn partition_bits(bits: &[u8], sizes: &[usize], interleave: BitInterleave) -> Result<Vec<Vec<u8>>> {
    let total: usize = sizes.iter().sum();
    if bits.len() != total {
        return Err(TbmError::Dimension(format!(
            "block carries {total} bits, payload has {}",
            bits.len()
        )));
    }
    let mut parts: Vec<Vec<u8>> = sizes.iter().map(|&n| vec![0; n]).collect();
    for (&b, (m, j)) in bits.iter().zip(bit_slots(sizes, interleave)) {
        parts[m][j] = b;
    }
    Ok(parts)
}

/// Inverse of [`partition_bits`], generic over the per-bit value type (bits or LLRs).
pub fn assemble_bits<T: Copy + Default>(
    parts: &[Vec<T>],
    interleave: BitInterleave,
) -> Vec<T> {
    let sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
    bit_slots(&sizes, interleave)
        .into_iter()
        .map(|(m, j)| parts[m][j])
        .collect()
}
