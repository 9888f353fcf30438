//! Summary statistics, histograms and a bimodality test for per-trial metrics.

use statrs::statistics::{Data, Distribution, OrderStatistics};

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins uniform in `log10`; values outside the range land in the end bins.
    pub fn log10(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|j| 10f64.powf(lo + j as f64 * width)).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let e = if v > 0.0 { v.log10() } else { f64::NEG_INFINITY };
            let j = ((e - lo) / width).floor();
            let j = if j.is_nan() { 0 } else { j.clamp(0.0, (bins - 1) as f64) as usize };
            counts[j] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `bin_left,bin_right,count` lines.
    pub fn csv_rows(&self) -> Vec<String> {
        self.counts
            .iter()
            .enumerate()
            .map(|(j, c)| format!("{:.6e},{:.6e},{c}", self.edges[j], self.edges[j + 1]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                n: 0,
                mean: f64::NAN,
                median: f64::NAN,
                q05: f64::NAN,
                q95: f64::NAN,
            };
        }
        let mut data = Data::new(values.to_vec());
        Self {
            n: values.len(),
            mean: data.mean().unwrap_or(f64::NAN),
            median: data.median(),
            q05: data.quantile(0.05),
            q95: data.quantile(0.95),
        }
    }
}

/// Two-component Gaussian mixture fitted to `log10` values by EM, started
/// from the split that maximizes the between-class variance. The sample is
/// called bimodal when the fitted mixture density has two local maxima.
#[derive(Clone, Debug, PartialEq)]
pub struct Bimodality {
    /// Means, standard deviations and weights of the two components, `log10` units.
    pub means: [f64; 2],
    pub sds: [f64; 2],
    pub weights: [f64; 2],
    /// Ashman's `D = √2 |μ₁ − μ₂| / √(σ₁² + σ₂²)`.
    pub separation: f64,
    /// Local maxima of the fitted density.
    pub modes: usize,
    pub bimodal: bool,
}

pub const BIMODAL_MIN_WEIGHT: f64 = 0.02;
const EM_ITERS: usize = 500;
const DENSITY_GRID: usize = 1024;

fn normal_pdf(x: f64, m: f64, s: f64) -> f64 {
    let z = (x - m) / s;
    (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

pub fn bimodality(values: &[f64]) -> Bimodality {
    let mut v: Vec<f64> = values
        .iter()
        .filter(|&&x| x > 0.0 && x.is_finite())
        .map(|x| x.log10())
        .collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mut out = Bimodality {
        means: [f64::NAN; 2],
        sds: [f64::NAN; 2],
        weights: [1.0, 0.0],
        separation: 0.0,
        modes: usize::from(n > 0),
        bimodal: false,
    };
    let spread = v.last().zip(v.first()).map_or(0.0, |(a, b)| a - b);
    if n < 8 || spread <= 0.0 {
        return out;
    }
    let mut prefix = vec![0.0; n + 1];
    for (j, &x) in v.iter().enumerate() {
        prefix[j + 1] = prefix[j] + x;
    }
    let split = (1..n)
        .max_by(|&a, &b| {
            let score = |s: usize| {
                let (w0, w1) = (s as f64, (n - s) as f64);
                w0 * w1 * (prefix[s] / w0 - (prefix[n] - prefix[s]) / w1).powi(2)
            };
            score(a).total_cmp(&score(b))
        })
        .unwrap_or(n / 2);
    let floor = 1e-3 * spread;
    let moments = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        (m, var.sqrt().max(floor))
    };
    let (m0, s0) = moments(&v[..split]);
    let (m1, s1) = moments(&v[split..]);
    let (mut mu, mut sd) = ([m0, m1], [s0, s1]);
    let mut w = [split as f64 / n as f64, (n - split) as f64 / n as f64];
    let mut resp = vec![0.0; n];
    for _ in 0..EM_ITERS {
        for (r, &x) in resp.iter_mut().zip(&v) {
            let a = w[0] * normal_pdf(x, mu[0], sd[0]);
            let b = w[1] * normal_pdf(x, mu[1], sd[1]);
            *r = if a + b > 0.0 { b / (a + b) } else { 0.5 };
        }
        let n1: f64 = resp.iter().sum();
        let n0 = n as f64 - n1;
        if n0 < 1.0 || n1 < 1.0 {
            break;
        }
        let new_mu = [
            v.iter().zip(&resp).map(|(x, r)| (1.0 - r) * x).sum::<f64>() / n0,
            v.iter().zip(&resp).map(|(x, r)| r * x).sum::<f64>() / n1,
        ];
        let var0 = v.iter().zip(&resp).map(|(x, r)| (1.0 - r) * (x - new_mu[0]).powi(2)).sum::<f64>() / n0;
        let var1 = v.iter().zip(&resp).map(|(x, r)| r * (x - new_mu[1]).powi(2)).sum::<f64>() / n1;
        let change = (new_mu[0] - mu[0]).abs() + (new_mu[1] - mu[1]).abs();
        mu = new_mu;
        sd = [var0.sqrt().max(floor), var1.sqrt().max(floor)];
        w = [n0 / n as f64, n1 / n as f64];
        if change < 1e-12 * spread {
            break;
        }
    }
    let lo = v[0] - 0.1 * spread;
    let step = 1.2 * spread / DENSITY_GRID as f64;
    let dens: Vec<f64> = (0..=DENSITY_GRID)
        .map(|j| {
            let x = lo + j as f64 * step;
            w[0] * normal_pdf(x, mu[0], sd[0]) + w[1] * normal_pdf(x, mu[1], sd[1])
        })
        .collect();
    let modes = (1..DENSITY_GRID)
        .filter(|&j| dens[j] > dens[j - 1] && dens[j] >= dens[j + 1])
        .count();
    out.means = mu;
    out.sds = sd;
    out.weights = w;
    out.separation = std::f64::consts::SQRT_2 * (mu[1] - mu[0]).abs() / (sd[0].powi(2) + sd[1].powi(2)).sqrt();
    out.modes = modes;
    out.bimodal = modes >= 2 && w[0].min(w[1]) >= BIMODAL_MIN_WEIGHT;
    out
}
