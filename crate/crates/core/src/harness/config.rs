//! Experiment configuration: a flat `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! experiment = per_sweep
//! dims = 33,33
//! antennas = 4
//! ka = 1
//! constellations = pilot-qam:4,pilot-qam:4
//! snr_db = -16:2:-8          # start:step:stop, or a comma list
//! trials = 500
//! seed = 7
//! ```
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `experiment` | `mse_sweep`, `per_sweep`, `dt_curve`, `bounds_table`, `amp_curve` | required |
//! | `dims` | data mode sizes `T_1,...,T_d` | required |
//! | `antennas` | receive antennas `N` | required |
//! | `ka` | active users | 1 |
//! | `constellations` | per mode `sphere:<bits>:<seed>` or `pilot-qam:<4\|16>`; `none` draws factors on the sphere | `none` |
//! | `snr_db` | SNR grid, `1/σ²` in dB | required |
//! | `trials` | trials per grid point (truth draws for `bounds_table`) | 100 |
//! | `seed` | master seed | 0 |
//! | `out` | output directory | `.` |
//! | `solver.max_iters`, `solver.grad_tol`, `solver.rel_tol`, `solver.cg_max_iters`, `solver.cg_tol`, `solver.stall_limit` | CPD solver | solver defaults |
//! | `solver.damping` | initial LM damping or `auto` | `auto` |
//! | `solver.init` | `genie` or `random` (PER sweep) | `genie` |
//! | `polar.n`, `polar.payload_bits`, `polar.design_snr_db` | polar code | 128, 64, 0 |
//! | `per.min_errors`, `per.batch`, `per.max_trials`, `per.interleave` | PER stopping rule and bit mapping | 200, 500, 20000, `sequential` |
//! | `dt.mc`, `dt.normalization` | DT draws; `reference` or `sphere` | 1000, `reference` |
//! | `hist.bins`, `hist.log10_min`, `hist.log10_max` | MSE histograms | 40, -6, 1 |
//! | `long_running` | informational flag | false |

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::cpd::{InitStrategy, SolverOptions};
use crate::demapper::DensityNormalization;
use crate::error::{Result, TbmError};
use crate::system::{sigma2_from_snr_db, BitInterleave, ConstellationSpec, TbmConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    MseSweep,
    PerSweep,
    DtCurve,
    BoundsTable,
    AmpCurve,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::MseSweep,
        ExperimentKind::PerSweep,
        ExperimentKind::DtCurve,
        ExperimentKind::BoundsTable,
        ExperimentKind::AmpCurve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::MseSweep => "mse_sweep",
            ExperimentKind::PerSweep => "per_sweep",
            ExperimentKind::DtCurve => "dt_curve",
            ExperimentKind::BoundsTable => "bounds_table",
            ExperimentKind::AmpCurve => "amp_curve",
        }
    }

    /// Stable id mixed into the per-trial seeds.
    pub fn id(self) -> u64 {
        match self {
            ExperimentKind::MseSweep => 1,
            ExperimentKind::PerSweep => 2,
            ExperimentKind::DtCurve => 3,
            ExperimentKind::BoundsTable => 4,
            ExperimentKind::AmpCurve => 5,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = TbmError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| TbmError::Config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = TbmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(TbmError::Config(format!("unknown preset '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolarOptions {
    pub n: usize,
    pub payload_bits: usize,
    pub design_snr_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerOptions {
    /// Stop a grid point once both soft pipelines have this many packet errors.
    pub min_errors: u64,
    pub batch: usize,
    pub max_trials: usize,
    pub interleave: BitInterleave,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DtOptions {
    pub n_mc: usize,
    pub normalization: DensityNormalization,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistOptions {
    pub bins: usize,
    pub log10_min: f64,
    pub log10_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// `sigma2` is overwritten per grid point.
    pub system: TbmConfig,
    pub solver: SolverOptions,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub polar: PolarOptions,
    pub per: PerOptions,
    pub dt: DtOptions,
    pub hist: HistOptions,
    pub long_running: bool,
}

fn cfg_err(msg: impl Into<String>) -> TbmError {
    TbmError::Config(msg.into())
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| cfg_err(format!("bad value '{v}' for {key}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_num(key, s)).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(cfg_err(format!("bad boolean '{v}' for {key}"))),
    }
}

/// `a:step:b` (inclusive, tolerant to rounding) or `a,b,c`.
pub fn parse_grid(v: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = v.split(':').collect();
    match parts.len() {
        1 => parse_list("snr_db", v),
        3 => {
            let a: f64 = parse_num("snr_db", parts[0])?;
            let step: f64 = parse_num("snr_db", parts[1])?;
            let b: f64 = parse_num("snr_db", parts[2])?;
            if !(step > 0.0) || b < a {
                return Err(cfg_err(format!("bad grid '{v}'")));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|j| a + j as f64 * step).collect())
        }
        _ => Err(cfg_err(format!("bad grid '{v}'"))),
    }
}

fn parse_constellation(v: &str) -> Result<ConstellationSpec> {
    let parts: Vec<&str> = v.trim().split(':').collect();
    match parts.as_slice() {
        ["sphere", bits, seed] => Ok(ConstellationSpec::Sphere {
            n_bits: parse_num("constellations", bits)?,
            seed: parse_num("constellations", seed)?,
        }),
        ["pilot-qam", order] => Ok(ConstellationSpec::PilotQam {
            order: parse_num("constellations", order)?,
        }),
        _ => Err(cfg_err(format!("bad constellation '{v}'"))),
    }
}

fn render_constellation(c: &ConstellationSpec) -> String {
    match c {
        ConstellationSpec::Sphere { n_bits, seed } => format!("sphere:{n_bits}:{seed}"),
        ConstellationSpec::PilotQam { order } => format!("pilot-qam:{order}"),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(Self::key_values(text)?)
    }

    /// Parses a file meant for `kind`: the `experiment` key may be omitted
    /// but must match when present.
    pub fn parse_for(kind: ExperimentKind, text: &str) -> Result<Self> {
        let mut map = Self::key_values(text)?;
        if let Some(v) = map.get("experiment") {
            let found: ExperimentKind = v.parse()?;
            if found != kind {
                return Err(cfg_err(format!("config is for {found}, not {kind}")));
            }
        }
        map.insert("experiment".into(), kind.to_string());
        Self::from_map(map)
    }

    fn key_values(text: &str) -> Result<BTreeMap<String, String>> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected key = value", lineno + 1)))?;
            let k = k.trim().to_string();
            if map.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(cfg_err(format!("line {}: duplicate key {k}", lineno + 1)));
            }
        }
        Ok(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<Self> {
        let mut take = |k: &str| map.remove(k);
        let required = |v: Option<String>, k: &str| v.ok_or_else(|| cfg_err(format!("missing key {k}")));

        let kind: ExperimentKind = required(take("experiment"), "experiment")?.parse()?;
        let dims = parse_list("dims", &required(take("dims"), "dims")?)?;
        let antennas = parse_num("antennas", &required(take("antennas"), "antennas")?)?;
        let ka = take("ka").map_or(Ok(1), |v| parse_num("ka", &v))?;
        let snr_db = parse_grid(&required(take("snr_db"), "snr_db")?)?;
        let constellations = match take("constellations") {
            None => Vec::new(),
            Some(v) if v == "none" => Vec::new(),
            Some(v) => v.split(',').map(parse_constellation).collect::<Result<_>>()?,
        };
        let sigma2 = snr_db.first().map_or(1.0, |&s| sigma2_from_snr_db(s));
        let system = TbmConfig::new(dims, antennas, ka, sigma2)?.with_constellations(constellations)?;

        let mut solver = SolverOptions::genie();
        if let Some(v) = take("solver.max_iters") {
            solver.max_iters = parse_num("solver.max_iters", &v)?;
        }
        if let Some(v) = take("solver.grad_tol") {
            solver.grad_tol = parse_num("solver.grad_tol", &v)?;
        }
        if let Some(v) = take("solver.rel_tol") {
            solver.rel_tol = parse_num("solver.rel_tol", &v)?;
        }
        if let Some(v) = take("solver.cg_max_iters") {
            solver.cg_max_iters = parse_num("solver.cg_max_iters", &v)?;
        }
        if let Some(v) = take("solver.cg_tol") {
            solver.cg_tol = parse_num("solver.cg_tol", &v)?;
        }
        if let Some(v) = take("solver.stall_limit") {
            solver.stall_limit = parse_num("solver.stall_limit", &v)?;
        }
        if let Some(v) = take("solver.damping") {
            solver.damping = if v == "auto" { None } else { Some(parse_num("solver.damping", &v)?) };
        }
        if let Some(v) = take("solver.init") {
            solver.init = match v.as_str() {
                "genie" => InitStrategy::Genie,
                "random" => InitStrategy::Random,
                _ => return Err(cfg_err(format!("bad solver.init '{v}'"))),
            };
        }

        let mut polar = PolarOptions {
            n: 128,
            payload_bits: 64,
            design_snr_db: 0.0,
        };
        if let Some(v) = take("polar.n") {
            polar.n = parse_num("polar.n", &v)?;
        }
        if let Some(v) = take("polar.payload_bits") {
            polar.payload_bits = parse_num("polar.payload_bits", &v)?;
        }
        if let Some(v) = take("polar.design_snr_db") {
            polar.design_snr_db = parse_num("polar.design_snr_db", &v)?;
        }

        let mut per = PerOptions {
            min_errors: 200,
            batch: 500,
            max_trials: 20_000,
            interleave: BitInterleave::Sequential,
        };
        if let Some(v) = take("per.min_errors") {
            per.min_errors = parse_num("per.min_errors", &v)?;
        }
        if let Some(v) = take("per.batch") {
            per.batch = parse_num("per.batch", &v)?;
        }
        if let Some(v) = take("per.max_trials") {
            per.max_trials = parse_num("per.max_trials", &v)?;
        }
        if let Some(v) = take("per.interleave") {
            per.interleave = match v.as_str() {
                "sequential" => BitInterleave::Sequential,
                "round_robin" => BitInterleave::RoundRobin,
                _ => return Err(cfg_err(format!("bad per.interleave '{v}'"))),
            };
        }

        let mut dt = DtOptions {
            n_mc: 1000,
            normalization: DensityNormalization::Reference,
        };
        if let Some(v) = take("dt.mc") {
            dt.n_mc = parse_num("dt.mc", &v)?;
        }
        if let Some(v) = take("dt.normalization") {
            dt.normalization = match v.as_str() {
                "reference" => DensityNormalization::Reference,
                "sphere" => DensityNormalization::SphereArea,
                _ => return Err(cfg_err(format!("bad dt.normalization '{v}'"))),
            };
        }

        let mut hist = HistOptions {
            bins: 40,
            log10_min: -6.0,
            log10_max: 1.0,
        };
        if let Some(v) = take("hist.bins") {
            hist.bins = parse_num("hist.bins", &v)?;
        }
        if let Some(v) = take("hist.log10_min") {
            hist.log10_min = parse_num("hist.log10_min", &v)?;
        }
        if let Some(v) = take("hist.log10_max") {
            hist.log10_max = parse_num("hist.log10_max", &v)?;
        }

        let trials = take("trials").map_or(Ok(100), |v| parse_num("trials", &v))?;
        let seed = take("seed").map_or(Ok(0), |v| parse_num("seed", &v))?;
        let out = take("out").map_or_else(|| PathBuf::from("."), PathBuf::from);
        let long_running = take("long_running").map_or(Ok(false), |v| parse_bool("long_running", &v))?;

        if let Some(k) = map.keys().next() {
            return Err(cfg_err(format!("unknown key {k}")));
        }
        let cfg = Self {
            kind,
            system,
            solver,
            snr_db,
            trials,
            seed,
            out,
            polar,
            per,
            dt,
            hist,
            long_running,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.solver.validate()?;
        if self.trials == 0 {
            return Err(cfg_err("trials must be >= 1"));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(cfg_err("SNR grid must be nonempty and finite"));
        }
        if !matches!(self.solver.init, InitStrategy::Genie | InitStrategy::Random) {
            return Err(cfg_err("solver.init must be genie or random"));
        }
        if self.hist.bins == 0 || !(self.hist.log10_max > self.hist.log10_min) {
            return Err(cfg_err("bad histogram range"));
        }
        if self.per.batch == 0 || self.per.max_trials == 0 || self.dt.n_mc == 0 {
            return Err(cfg_err("per.batch, per.max_trials and dt.mc must be >= 1"));
        }
        if self.kind == ExperimentKind::PerSweep {
            if self.system.constellations.is_empty() {
                return Err(cfg_err("per_sweep needs constellations"));
            }
            let p = &self.polar;
            if p.payload_bits == 0 || p.payload_bits > p.n || !p.n.is_power_of_two() {
                return Err(cfg_err(format!("bad polar code n={} B={}", p.n, p.payload_bits)));
            }
        }
        if self.kind == ExperimentKind::DtCurve && self.polar.payload_bits == 0 {
            return Err(cfg_err("dt_curve needs polar.payload_bits >= 1"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn render(&self) -> String {
        let s = &self.solver;
        let init = match s.init {
            InitStrategy::Random => "random",
            _ => "genie",
        };
        let constellations = if self.system.constellations.is_empty() {
            "none".to_string()
        } else {
            self.system
                .constellations
                .iter()
                .map(render_constellation)
                .collect::<Vec<_>>()
                .join(",")
        };
        let entries: Vec<(&str, String)> = vec![
            ("experiment", self.kind.to_string()),
            ("dims", join(&self.system.dims)),
            ("antennas", self.system.n_antennas.to_string()),
            ("ka", self.system.ka.to_string()),
            ("constellations", constellations),
            ("snr_db", join(&self.snr_db)),
            ("trials", self.trials.to_string()),
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("solver.max_iters", s.max_iters.to_string()),
            ("solver.grad_tol", s.grad_tol.to_string()),
            ("solver.rel_tol", s.rel_tol.to_string()),
            ("solver.cg_max_iters", s.cg_max_iters.to_string()),
            ("solver.cg_tol", s.cg_tol.to_string()),
            ("solver.stall_limit", s.stall_limit.to_string()),
            ("solver.damping", s.damping.map_or("auto".into(), |d| d.to_string())),
            ("solver.init", init.to_string()),
            ("polar.n", self.polar.n.to_string()),
            ("polar.payload_bits", self.polar.payload_bits.to_string()),
            ("polar.design_snr_db", self.polar.design_snr_db.to_string()),
            ("per.min_errors", self.per.min_errors.to_string()),
            ("per.batch", self.per.batch.to_string()),
            ("per.max_trials", self.per.max_trials.to_string()),
            (
                "per.interleave",
                match self.per.interleave {
                    BitInterleave::Sequential => "sequential".into(),
                    BitInterleave::RoundRobin => "round_robin".into(),
                },
            ),
            ("dt.mc", self.dt.n_mc.to_string()),
            (
                "dt.normalization",
                match self.dt.normalization {
                    DensityNormalization::Reference => "reference".into(),
                    DensityNormalization::SphereArea => "sphere".into(),
                },
            ),
            ("hist.bins", self.hist.bins.to_string()),
            ("hist.log10_min", self.hist.log10_min.to_string()),
            ("hist.log10_max", self.hist.log10_max.to_string()),
            ("long_running", self.long_running.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical form without the output directory, first 16 hex digits.
    pub fn hash(&self) -> String {
        let text: String = self
            .render()
            .lines()
            .filter(|l| !l.starts_with("out ="))
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn preset(kind: ExperimentKind, preset: Preset) -> Self {
        let text = match (kind, preset) {
            (ExperimentKind::MseSweep, Preset::Desk) => {
                "dims = 8,6\nantennas = 4\nka = 1\nsnr_db = -15:5:30\ntrials = 500\n"
            }
            (ExperimentKind::MseSweep, Preset::Paper) => {
                "dims = 64,50\nantennas = 50\nka = 100\nsnr_db = -40:2.5:0\ntrials = 100\nlong_running = true\n"
            }
            (ExperimentKind::PerSweep, Preset::Desk) | (ExperimentKind::DtCurve, Preset::Desk) => {
                "dims = 33,33\nantennas = 4\nka = 1\nconstellations = pilot-qam:4,pilot-qam:4\n\
                 snr_db = -16:1.5:-8.5\ntrials = 500\npolar.n = 128\npolar.payload_bits = 64\n"
            }
            (ExperimentKind::PerSweep, Preset::Paper) | (ExperimentKind::DtCurve, Preset::Paper) => {
                "dims = 64,50\nantennas = 50\nka = 100\nconstellations = pilot-qam:16,pilot-qam:16\n\
                 snr_db = -30:1:-20\ntrials = 500\npolar.n = 256\npolar.payload_bits = 218\n\
                 long_running = true\n"
            }
            (ExperimentKind::BoundsTable, Preset::Desk) => {
                "dims = 6,5\nantennas = 4\nka = 2\nsnr_db = 0,10,20\ntrials = 50\n"
            }
            (ExperimentKind::BoundsTable, Preset::Paper) => {
                "dims = 64,50\nantennas = 50\nka = 10\nsnr_db = -30,-20,-10\ntrials = 5\nlong_running = true\n"
            }
            (ExperimentKind::AmpCurve, Preset::Desk) => {
                "dims = 8,6\nantennas = 4\nka = 1\nsnr_db = -30:0.5:10\ntrials = 1\n"
            }
            (ExperimentKind::AmpCurve, Preset::Paper) => {
                "dims = 64,50\nantennas = 50\nka = 1\nsnr_db = -40:0.25:-20\ntrials = 1\n"
            }
        };
        let mut full = format!("experiment = {kind}\n{text}");
        if kind == ExperimentKind::DtCurve && preset == Preset::Paper {
            full = full.replace("polar.payload_bits = 218", "polar.payload_bits = 300");
        }
        Self::parse(&full).expect("presets are valid")
    }

    /// Copy of the system model at one grid SNR.
    pub fn system_at(&self, snr_db: f64) -> TbmConfig {
        self.system.with_sigma2(sigma2_from_snr_db(snr_db))
    }
}
