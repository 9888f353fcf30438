//! Seeded Monte Carlo experiment drivers and CSV output.
//!
//! Every trial owns a ChaCha8 stream keyed by `(seed, experiment, grid
//! index, trial index)`; trials run on the rayon pool and are reduced in
//! index order, so outputs do not depend on the thread count.

mod amp;
mod bounds_table;
pub mod config;
mod dt;
mod mse;
mod per;
pub mod stats;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, TbmError};

pub use amp::{amp_transition_db, run_amp_curve};
pub use bounds_table::{run_bounds_table, BoundsTable};
pub use config::{ExperimentConfig, ExperimentKind, Preset};
pub use dt::run_dt_curve;
pub use mse::run_mse_sweep;
pub use per::run_per_sweep;
pub use stats::{bimodality, Bimodality, Histogram, Summary};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for one trial of one grid point.
pub fn trial_rng(seed: u64, kind: ExperimentKind, grid: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(kind.id())));
    rng.set_stream(((grid as u64) << 32) | trial as u64);
    rng
}

/// Runs `f` on trials `range` in parallel; results come back in index order.
pub(crate) fn par_trials<T, F>(range: std::ops::Range<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    range.into_par_iter().map(f).collect()
}

/// `trials = successes + decode_errors + divergences`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub trials: u64,
    pub successes: u64,
    pub decode_errors: u64,
    pub divergences: u64,
}

impl Counts {
    pub fn errors(&self) -> u64 {
        self.decode_errors + self.divergences
    }

    pub fn error_rate(&self) -> f64 {
        if self.trials == 0 {
            f64::NAN
        } else {
            self.errors() as f64 / self.trials as f64
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.trials == self.successes + self.decode_errors + self.divergences
    }

    pub(crate) fn add(&mut self, other: Counts) {
        self.trials += other.trials;
        self.successes += other.successes;
        self.decode_errors += other.decode_errors;
        self.divergences += other.divergences;
    }
}

/// One pipeline or estimator at one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub counts: Counts,
    pub summary: Option<Summary>,
    pub histogram: Option<Histogram>,
    pub bimodality: Option<Bimodality>,
}

impl Series {
    pub(crate) fn counts_only(name: &str, counts: Counts) -> Self {
        Self {
            name: name.into(),
            counts,
            summary: None,
            histogram: None,
            bimodality: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub snr_db: f64,
    pub series: Vec<Series>,
    pub scalars: Vec<(String, f64)>,
}

impl GridPoint {
    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|(k, _)| k == name).map(|&(_, v)| v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub config_hash: String,
    pub points: Vec<GridPoint>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

/// First line of every CSV.
pub fn header_line(cfg: &ExperimentConfig) -> String {
    format!(
        "# tbm-sim {VERSION} config_hash={} seed={} experiment={}",
        cfg.hash(),
        cfg.seed,
        cfg.kind
    )
}

fn fmt_f(v: f64) -> String {
    format!("{v:.10e}")
}

impl SweepResult {
    fn header(&self) -> String {
        format!(
            "# tbm-sim {VERSION} config_hash={} seed={} experiment={}",
            self.config_hash, self.seed, self.kind
        )
    }

    /// One row per grid point: counts and summaries of every series, then scalars.
    pub fn csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        let mut cols = vec!["snr_db".to_string()];
        if let Some(p) = self.points.first() {
            for s in &p.series {
                for c in ["trials", "successes", "decode_errors", "divergences"] {
                    cols.push(format!("{}_{c}", s.name));
                }
                if s.summary.is_some() {
                    for c in ["mean", "median", "q05", "q95"] {
                        cols.push(format!("{}_{c}", s.name));
                    }
                }
                if s.bimodality.is_some() {
                    cols.push(format!("{}_bimodal", s.name));
                }
            }
            cols.extend(p.scalars.iter().map(|(k, _)| k.clone()));
        }
        out.push_str(&cols.join(","));
        out.push('\n');
        for p in &self.points {
            let mut row = vec![p.snr_db.to_string()];
            for s in &p.series {
                let c = s.counts;
                row.extend([c.trials, c.successes, c.decode_errors, c.divergences].map(|v| v.to_string()));
                if let Some(m) = &s.summary {
                    row.extend([m.mean, m.median, m.q05, m.q95].map(fmt_f));
                }
                if let Some(b) = &s.bimodality {
                    row.push(u8::from(b.bimodal).to_string());
                }
            }
            row.extend(p.scalars.iter().map(|&(_, v)| fmt_f(v)));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// One `(bin_left, bin_right, count)` file per series histogram and grid point.
    pub fn histogram_artifacts(&self) -> Vec<Artifact> {
        let mut arts = Vec::new();
        for (g, p) in self.points.iter().enumerate() {
            for s in &p.series {
                if let Some(h) = &s.histogram {
                    let mut text = self.header();
                    let _ = write!(text, " snr_db={} series={}\nbin_left,bin_right,count\n", p.snr_db, s.name);
                    for line in h.csv_rows() {
                        text.push_str(&line);
                        text.push('\n');
                    }
                    arts.push(Artifact {
                        name: format!("{}_hist_{}_{g:03}.csv", self.kind, s.name),
                        contents: text,
                    });
                }
            }
        }
        arts
    }

    pub fn artifacts(&self) -> Vec<Artifact> {
        let mut arts = vec![Artifact {
            name: format!("{}.csv", self.kind),
            contents: self.csv(),
        }];
        arts.extend(self.histogram_artifacts());
        arts
    }
}

/// Runs the configured experiment on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::MseSweep => Ok(run_mse_sweep(cfg)?.artifacts()),
        ExperimentKind::PerSweep => Ok(run_per_sweep(cfg)?.artifacts()),
        ExperimentKind::DtCurve => Ok(run_dt_curve(cfg)?.artifacts()),
        ExperimentKind::BoundsTable => Ok(run_bounds_table(cfg)?.artifacts(cfg)),
        ExperimentKind::AmpCurve => {
            let sweep = run_amp_curve(cfg)?;
            let mut arts = sweep.artifacts();
            let transition = amp_transition_db(&cfg.system, &cfg.snr_db);
            arts.push(Artifact {
                name: format!("{}_transition.csv", cfg.kind),
                contents: format!(
                    "{}\ntransition_snr_db\n{}\n",
                    header_line(cfg),
                    transition.map_or("nan".to_string(), fmt_f)
                ),
            });
            Ok(arts)
        }
    }
}

/// [`run_experiment`] on a dedicated pool of `threads` workers.
pub fn run_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<Artifact>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| TbmError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(cfg))
}

pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    artifacts
        .iter()
        .map(|a| {
            let path = dir.join(&a.name);
            std::fs::write(&path, &a.contents)?;
            Ok(path)
        })
        .collect()
}
