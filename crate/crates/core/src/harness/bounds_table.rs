use super::config::ExperimentConfig;
use super::{header_line, par_trials, trial_rng, Artifact};
use crate::bounds::{bound_report, BoundRow, BOUND_CSV_HEADER};
use crate::error::{Result, TbmError};
use crate::system::random_factors;

/// Every bound for random truth draws at each grid SNR.
#[derive(Clone, Debug)]
pub struct BoundsTable {
    /// `(grid index, instance, row)`.
    pub rows: Vec<(usize, usize, BoundRow)>,
    pub snr_db: Vec<f64>,
    /// Instances skipped as numerically singular, per grid point.
    pub skipped: Vec<usize>,
}

pub fn run_bounds_table(cfg: &ExperimentConfig) -> Result<BoundsTable> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (g, &snr) in cfg.snr_db.iter().enumerate() {
        let sys = cfg.system_at(snr);
        let reports = par_trials(0..cfg.trials, |t| {
            let mut rng = trial_rng(cfg.seed, cfg.kind, g, t);
            let truth = random_factors(&sys, &mut rng);
            match bound_report(&sys, &truth) {
                Ok(r) => Ok(Some(r)),
                Err(TbmError::Singular { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })?;
        let mut skip = 0;
        for (t, r) in reports.into_iter().enumerate() {
            match r {
                Some(r) => rows.extend(r.into_iter().map(|row| (g, t, row))),
                None => skip += 1,
            }
        }
        skipped.push(skip);
    }
    Ok(BoundsTable {
        rows,
        snr_db: cfg.snr_db.clone(),
        skipped,
    })
}

impl BoundsTable {
    /// Row means of `(ξ_exact, ξ_prop1, ξ_star, ξ_approx, mse_lb)` at grid point `g`.
    pub fn means(&self, g: usize) -> [f64; 5] {
        let sel: Vec<&BoundRow> = self.rows.iter().filter(|r| r.0 == g).map(|r| &r.2).collect();
        let n = sel.len() as f64;
        let mut m = [0.0; 5];
        for r in &sel {
            for (a, v) in m.iter_mut().zip([r.xi_exact, r.xi_prop1, r.xi_star, r.xi_approx, r.mse_lb]) {
                *a += v / n;
            }
        }
        m
    }

    pub fn csv(&self, cfg: &ExperimentConfig) -> String {
        let mut out = format!("{}\nsnr_db,instance,{BOUND_CSV_HEADER}\n", header_line(cfg));
        for (g, t, row) in &self.rows {
            out.push_str(&format!("{},{t},{}\n", self.snr_db[*g], row.csv_line()));
        }
        out
    }

    pub fn summary_csv(&self, cfg: &ExperimentConfig) -> String {
        let mut out = format!(
            "{}\nsnr_db,instances,skipped_singular,xi_exact_mean,xi_prop1_mean,xi_star_mean,xi_approx_mean,mse_lb_mean\n",
            header_line(cfg)
        );
        for (g, &snr) in self.snr_db.iter().enumerate() {
            let m = self.means(g);
            out.push_str(&format!(
                "{snr},{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}\n",
                cfg.trials, self.skipped[g], m[0], m[1], m[2], m[3], m[4]
            ));
        }
        out
    }

    pub fn artifacts(&self, cfg: &ExperimentConfig) -> Vec<Artifact> {
        vec![
            Artifact {
                name: format!("{}.csv", cfg.kind),
                contents: self.csv(cfg),
            },
            Artifact {
                name: format!("{}_summary.csv", cfg.kind),
                contents: self.summary_csv(cfg),
            },
        ]
    }
}
