use rand::Rng;

use super::config::ExperimentConfig;
use super::{par_trials, trial_rng, Counts, GridPoint, Series, SweepResult};
use crate::constellation::Codebook;
use crate::cpd::solve_cpd;
use crate::demapper::{compute_llrs, demap_user, sample_equiv_channel, EquivChannel};
use crate::error::{Result, TbmError};
use crate::polar::{decode_hard, polar_construct, polar_decode_sc, polar_encode, PolarCode};
use crate::system::{assemble_bits, transmit, BitInterleave, TbmConfig};
use crate::tensor::{norm2, CVec};

const SERIES: [&str; 4] = ["full_soft", "full_hard", "equiv_soft", "equiv_hard"];

struct Setup {
    codebooks: Vec<Codebook>,
    code: PolarCode,
    capacity: usize,
}

/// Packet errors of one block, per entry of [`SERIES`]; `None` when the
/// solver diverged.
struct Outcome {
    full: Option<(usize, usize)>,
    equiv: (usize, usize),
}

/// Decoded payloads claimed greedily against the transmitted list.
fn unmatched(decoded: &[Vec<u8>], sent: &[Vec<u8>]) -> usize {
    let mut claimed = vec![false; sent.len()];
    for d in decoded {
        if let Some(j) = (0..sent.len()).find(|&j| !claimed[j] && &sent[j] == d) {
            claimed[j] = true;
        }
    }
    claimed.iter().filter(|&&c| !c).count()
}

/// Soft and hard SC decoding of one user's per-mode LLRs.
fn decode_both(
    code: &PolarCode,
    llrs: &[Vec<f64>],
    interleave: BitInterleave,
) -> Result<(Vec<u8>, Vec<u8>)> {
    let flat = assemble_bits(llrs, interleave);
    let coded = &flat[..code.n()];
    let soft = polar_decode_sc(code, coded)?;
    let bits: Vec<u8> = coded.iter().map(|&l| u8::from(l > 0.0)).collect();
    let hard = decode_hard(code, &bits)?;
    Ok((soft, hard))
}

fn trial<R: Rng + ?Sized>(
    cfg: &ExperimentConfig,
    sys: &TbmConfig,
    setup: &Setup,
    rng: &mut R,
) -> Result<Outcome> {
    let code = &setup.code;
    let il = cfg.per.interleave;
    let payloads: Vec<Vec<u8>> = (0..sys.ka)
        .map(|_| (0..code.payload_bits()).map(|_| rng.random_range(0..2u8)).collect())
        .collect();
    let blocks = payloads
        .iter()
        .map(|p| {
            let mut block = polar_encode(code, p)?;
            block.resize(setup.capacity, 0);
            Ok(block)
        })
        .collect::<Result<Vec<_>>>()?;
    let tx = transmit(sys, &setup.codebooks, &blocks, il, rng)?;

    let full = match solve_cpd(&tx.y, sys.ka, &cfg.solver, Some(&tx.factors), rng) {
        Ok(res) => {
            let (mut soft, mut hard) = (Vec::new(), Vec::new());
            for k in 0..sys.ka {
                let z: Vec<CVec> = (0..sys.d()).map(|i| res.factors.x[i][k].clone()).collect();
                let frame = demap_user(sys, &setup.codebooks, &z, norm2(&res.factors.h[k]))?;
                let (s, h) = decode_both(code, &frame.llrs, il)?;
                soft.push(s);
                hard.push(h);
            }
            Some((unmatched(&soft, &payloads), unmatched(&hard, &payloads)))
        }
        Err(TbmError::Divergence(_)) => None,
        Err(e) => return Err(e),
    };

    let (mut soft, mut hard) = (Vec::new(), Vec::new());
    for k in 0..sys.ka {
        let h2 = norm2(&tx.factors.h[k]);
        let mut llrs = Vec::with_capacity(sys.d());
        for (i, cb) in setup.codebooks.iter().enumerate() {
            let ch = EquivChannel::from_config(sys, h2, sys.sigma2, i)?;
            let z = sample_equiv_channel(&tx.factors.x[i][k], &ch, rng);
            llrs.push(compute_llrs(&z, cb, 1.0 / (ch.alpha * ch.xi))?);
        }
        let (s, h) = decode_both(code, &llrs, il)?;
        soft.push(s);
        hard.push(h);
    }
    Ok(Outcome {
        full,
        equiv: (unmatched(&soft, &payloads), unmatched(&hard, &payloads)),
    })
}

fn packet_counts(ka: usize, errors: Option<usize>) -> Counts {
    let ka = ka as u64;
    match errors {
        None => Counts {
            trials: ka,
            divergences: ka,
            ..Counts::default()
        },
        Some(e) => Counts {
            trials: ka,
            successes: ka - e as u64,
            decode_errors: e as u64,
            divergences: 0,
        },
    }
}

/// Packet error rates of the full receiver (CPD, demapping, SC decoding)
/// and of the equivalent-channel shortcut, soft and hard, on shared draws.
///
/// Counts are per packet: each block carries `Ka` packets. A grid point
/// stops after the batch in which both soft pipelines reach
/// `per.min_errors` errors, or at `per.max_trials` blocks.
pub fn run_per_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let codebooks = cfg.system.build_codebooks()?;
    let capacity: usize = codebooks.iter().map(|c| c.bits_per_symbol()).sum();
    if cfg.polar.n > capacity {
        return Err(TbmError::Config(format!(
            "polar block of {} bits exceeds the {capacity} bits carried per user",
            cfg.polar.n
        )));
    }
    let setup = Setup {
        codebooks,
        code: polar_construct(cfg.polar.n, cfg.polar.payload_bits, cfg.polar.design_snr_db)?,
        capacity,
    };
    let ka = cfg.system.ka;
    let mut points = Vec::with_capacity(cfg.snr_db.len());
    for (g, &snr) in cfg.snr_db.iter().enumerate() {
        let sys = cfg.system_at(snr);
        let mut counts = [Counts::default(); 4];
        let mut done = 0usize;
        while done < cfg.per.max_trials {
            let end = (done + cfg.per.batch).min(cfg.per.max_trials);
            let batch = par_trials(done..end, |t| {
                let mut rng = trial_rng(cfg.seed, cfg.kind, g, t);
                trial(cfg, &sys, &setup, &mut rng)
            })?;
            for o in &batch {
                counts[0].add(packet_counts(ka, o.full.map(|f| f.0)));
                counts[1].add(packet_counts(ka, o.full.map(|f| f.1)));
                counts[2].add(packet_counts(ka, Some(o.equiv.0)));
                counts[3].add(packet_counts(ka, Some(o.equiv.1)));
            }
            done = end;
            if counts[0].errors().min(counts[2].errors()) >= cfg.per.min_errors {
                break;
            }
        }
        let scalars = SERIES
            .iter()
            .zip(&counts)
            .map(|(name, c)| (format!("per_{name}"), c.error_rate()))
            .chain(std::iter::once(("blocks".to_string(), done as f64)))
            .collect();
        points.push(GridPoint {
            snr_db: snr,
            series: SERIES
                .iter()
                .zip(counts)
                .map(|(name, c)| Series::counts_only(name, c))
                .collect(),
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
