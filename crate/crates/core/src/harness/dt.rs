use super::config::ExperimentConfig;
use super::{par_trials, trial_rng, Counts, GridPoint, Series, SweepResult};
use crate::demapper::dt_trial;
use crate::error::Result;

/// Fading-averaged DT bound for `2^B` messages over the grid; every draw is
/// shared by all grid SNRs.
pub fn run_dt_curve(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let b = u32::try_from(cfg.polar.payload_bits)
        .map_err(|_| crate::error::TbmError::Config("payload too large".into()))?;
    let draws = par_trials(0..cfg.dt.n_mc, |t| {
        let mut rng = trial_rng(cfg.seed, cfg.kind, 0, t);
        dt_trial(&cfg.system, b, &cfg.snr_db, cfg.dt.normalization, &mut rng)
    })?;
    let n = draws.len() as f64;
    let counts = Counts {
        trials: draws.len() as u64,
        successes: draws.len() as u64,
        ..Counts::default()
    };
    let points = cfg
        .snr_db
        .iter()
        .enumerate()
        .map(|(g, &snr)| {
            let mean = draws.iter().map(|d| d[g]).sum::<f64>() / n;
            let var = draws.iter().map(|d| (d[g] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            GridPoint {
                snr_db: snr,
                series: vec![Series::counts_only("dt", counts)],
                scalars: vec![
                    ("epsilon".to_string(), mean),
                    ("epsilon_stderr".to_string(), (var / n).sqrt()),
                ],
            }
        })
        .collect();
    Ok(SweepResult {
        kind: cfg.kind,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        points,
    })
}
