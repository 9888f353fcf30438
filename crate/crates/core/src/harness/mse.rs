use super::config::ExperimentConfig;
use super::stats::{bimodality, Histogram, Summary};
use super::{par_trials, trial_rng, Counts, GridPoint, Series, SweepResult};
use crate::bounds::{amp_fixed_point, mse_lower_bound, xi_approx, xi_star};
use crate::cpd::{align_to_truth, solve_cpd, InitStrategy, SolverOptions};
use crate::error::{Result, TbmError};
use crate::system::{random_factors, receive};
use crate::tensor::norm2;

/// Mode and user reported by the sweep.
const MODE: usize = 0;
const USER: usize = 0;

#[derive(Clone, Copy, Debug)]
struct Estimate {
    mse: f64,
    /// `Re(ẑ^H x) / T_i` after alignment.
    corr: f64,
    converged: bool,
}

struct Trial {
    genie: Option<Estimate>,
    random: Option<Estimate>,
    bound: f64,
    bound_star: f64,
    xi_approx: f64,
}

fn estimate<R: rand::Rng + ?Sized>(
    y: &crate::tensor::CTensor,
    truth: &crate::system::FactorSet,
    opts: &SolverOptions,
    rng: &mut R,
) -> Result<Option<Estimate>> {
    match solve_cpd(y, truth.ka(), opts, Some(truth), rng) {
        Ok(res) => {
            let al = align_to_truth(&res.factors, truth)?;
            let x = &truth.x[MODE][USER];
            let z = &al.aligned.x[MODE][USER];
            Ok(Some(Estimate {
                mse: al.mse[MODE][USER],
                corr: x.dotc(z).re / x.len() as f64,
                converged: res.converged,
            }))
        }
        Err(TbmError::Divergence(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn series(name: &str, est: &[Option<Estimate>], cfg: &ExperimentConfig) -> Series {
    let values: Vec<f64> = est.iter().flatten().map(|e| e.mse).collect();
    let ok = values.len() as u64;
    let counts = Counts {
        trials: est.len() as u64,
        successes: ok,
        decode_errors: 0,
        divergences: est.len() as u64 - ok,
    };
    let h = &cfg.hist;
    Series {
        name: name.into(),
        counts,
        summary: Some(Summary::of(&values)),
        histogram: Some(Histogram::log10(&values, h.log10_min, h.log10_max, h.bins)),
        bimodality: Some(bimodality(&values)),
    }
}

/// Genie- and randomly-initialized CPD per trial; MSE of mode 1, user 1
/// with the bound and AMP overlays.
pub fn run_mse_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let genie_opts = SolverOptions {
        init: InitStrategy::Genie,
        ..cfg.solver.clone()
    };
    let random_opts = SolverOptions {
        init: InitStrategy::Random,
        ..cfg.solver.clone()
    };
    let mut points = Vec::with_capacity(cfg.snr_db.len());
    for (g, &snr) in cfg.snr_db.iter().enumerate() {
        let sys = cfg.system_at(snr);
        let trials = par_trials(0..cfg.trials, |t| {
            let mut rng = trial_rng(cfg.seed, cfg.kind, g, t);
            let truth = random_factors(&sys, &mut rng);
            let (y, _) = receive(&sys, &truth, &mut rng)?;
            let genie = estimate(&y, &truth, &genie_opts, &mut rng)?;
            let random = estimate(&y, &truth, &random_opts, &mut rng)?;
            let xa = xi_approx(&sys, norm2(&truth.h[USER]), sys.sigma2, MODE)?;
            let (xs, _, _) = xi_star(&truth, sys.sigma2, MODE, USER)?;
            Ok(Trial {
                genie,
                random,
                bound: mse_lower_bound(xa),
                bound_star: mse_lower_bound(xs),
                xi_approx: xa,
            })
        })?;
        let n = trials.len() as f64;
        let genie: Vec<Option<Estimate>> = trials.iter().map(|t| t.genie).collect();
        let random: Vec<Option<Estimate>> = trials.iter().map(|t| t.random).collect();

        let ok: Vec<&Estimate> = genie.iter().flatten().collect();
        let alpha_hat = ok.iter().map(|e| e.corr).sum::<f64>() / ok.len() as f64;
        // E‖ẑ − α̂x‖²/T = E‖ẑ−x‖²/T + (1−α̂)² + 2(1−α̂)(E Re(ẑ^H x)/T − 1) with ‖x‖² = T
        let mse_mean = ok.iter().map(|e| e.mse).sum::<f64>() / ok.len() as f64;
        let resid = mse_mean + (1.0 - alpha_hat).powi(2) + 2.0 * (1.0 - alpha_hat) * (alpha_hat - 1.0);
        let xi_hat = resid / (alpha_hat * alpha_hat);
        let unconverged = ok.iter().filter(|e| !e.converged).count() as f64;

        let amp = amp_fixed_point(&sys, sys.sigma2);
        let scalars = vec![
            ("mse_bound".to_string(), trials.iter().map(|t| t.bound).sum::<f64>() / n),
            ("mse_bound_star".to_string(), trials.iter().map(|t| t.bound_star).sum::<f64>() / n),
            ("xi_approx".to_string(), trials.iter().map(|t| t.xi_approx).sum::<f64>() / n),
            ("mse_amp".to_string(), amp.mse[MODE][USER]),
            ("amp_converged".to_string(), f64::from(u8::from(amp.converged))),
            ("alpha_hat".to_string(), alpha_hat),
            ("xi_hat".to_string(), xi_hat),
            ("genie_unconverged".to_string(), unconverged),
        ];
        points.push(GridPoint {
            snr_db: snr,
            series: vec![series("genie", &genie, cfg), series("random", &random, cfg)],
            scalars,
        });
    }
    Ok(SweepResult {
        kind: cfg.kind,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        points,
    })
}
