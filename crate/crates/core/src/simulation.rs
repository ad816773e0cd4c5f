//! Monte Carlo studies: estimator sweeps over a grid of signal variances, the
//! shuffle-versus-REML comparison, and the prediction-accuracy check.
//!
//! Every replicate draws from its own ChaCha substream keyed by grid index and
//! replicate number, so results do not depend on how rayon schedules the work.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::design::{treatment_averages_unchecked, DesignSchedule};
use crate::error::{Error, Result};
use crate::estimators::{mom_estimate, reml_estimate, shuffle_estimate, Method, RemlOptions};
use crate::noise::{substream, CovarianceModel, ExperimentSampler, NoiseSampler};
use crate::permutation::{
    alpha, block_random_perm, cyclic_shift, odd_even_swap, reverse_perm, PermutationSpec,
};

/// How stimulus presentations are laid out in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `blocks` consecutive blocks, each holding every presentation of `m / blocks`
    /// stimuli in random order.
    Blocked { blocks: usize },
    /// Uniformly random order of the `m * n` presentations.
    Random,
}

/// Permutation used by the shuffle estimator inside a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermutationChoice {
    Reverse,
    Shift(usize),
    OddEven,
    /// Fresh random permutation within each block, per replicate.
    BlockRandom,
}

impl fmt::Display for PermutationChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Reverse => write!(f, "reverse"),
            Self::Shift(k) => write!(f, "shift:{k}"),
            Self::OddEven => write!(f, "odd-even"),
            Self::BlockRandom => write!(f, "block-random"),
        }
    }
}

impl FromStr for PermutationChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "reverse" => Ok(Self::Reverse),
            "odd-even" | "odd_even" => Ok(Self::OddEven),
            "block-random" | "block_random" => Ok(Self::BlockRandom),
            _ => s
                .strip_prefix("shift:")
                .and_then(|k| k.trim().parse().ok())
                .map(Self::Shift)
                .ok_or_else(|| Error::Config(format!("unknown permutation {s:?}"))),
        }
    }
}

impl PermutationChoice {
    pub fn build(&self, d: &DesignSchedule, seed: u64) -> Result<PermutationSpec> {
        match self {
            Self::Reverse => Ok(reverse_perm(d.len())),
            Self::Shift(k) => cyclic_shift(d.len(), *k),
            Self::OddEven => odd_even_swap(d.len()),
            Self::BlockRandom => block_random_perm(d, seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub m: usize,
    pub n: usize,
    pub layout: Layout,
    pub noise: CovarianceModel,
    pub sigma2_eps: f64,
    pub grid: Vec<f64>,
    pub replicates: usize,
    pub permutation: PermutationChoice,
    pub seed: u64,
    pub estimators: Vec<Method>,
    pub reml: RemlOptions,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

fn grid(step: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| (i as f64 * step * 10.0).round() / 10.0).collect()
}

impl SweepConfig {
    /// Block-effect noise (`sigma2_b = 0.5`, `sigma2_e = 0.7`), 20 blocks of 6 stimuli,
    /// random permutation within blocks.
    pub fn block_defaults() -> Self {
        Self {
            m: 120,
            n: 15,
            layout: Layout::Blocked { blocks: 20 },
            noise: CovarianceModel::Block {
                sigma2_b: 0.5,
                sigma2_e: 0.7,
            },
            sigma2_eps: 1.0,
            grid: grid(0.1, 10),
            replicates: 1000,
            permutation: PermutationChoice::BlockRandom,
            seed: 20130501,
            estimators: vec![Method::Shuffle],
            reml: RemlOptions::default(),
            threads: None,
        }
    }

    /// Exponential-with-nugget noise (`lambda1 = 0.7`, `lambda2 = 30`), random schedule,
    /// reversal permutation.
    pub fn timeseries_defaults() -> Self {
        Self {
            layout: Layout::Random,
            noise: CovarianceModel::ExpNugget {
                lambda1: 0.7,
                lambda2: 30.0,
            },
            permutation: PermutationChoice::Reverse,
            ..Self::block_defaults()
        }
    }

    /// Time-series setting on the grid 0, 0.2, ..., 0.8 with shuffle and a correctly
    /// specified REML fit.
    pub fn reml_comparison_defaults() -> Self {
        Self {
            grid: grid(0.2, 5),
            estimators: vec![
                Method::Shuffle,
                Method::Reml(crate::estimators::RemlFamily::ExpNugget),
            ],
            ..Self::timeseries_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.grid.is_empty() {
            return bad("the signal-variance grid is empty".into());
        }
        if let Some(s) = self.grid.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
            return bad(format!("grid value {s} is not a finite nonnegative number"));
        }
        if self.m < 2 || self.n < 1 {
            return bad(format!("need m >= 2 and n >= 1, got m = {}, n = {}", self.m, self.n));
        }
        if let Layout::Blocked { blocks } = self.layout {
            if blocks == 0 || self.m % blocks != 0 {
                return bad(format!("{blocks} blocks do not divide m = {}", self.m));
            }
        }
        if self.estimators.is_empty() {
            return bad("no estimators selected".into());
        }
        if self.estimators.contains(&Method::ShuffleAverage) {
            return bad("shuffle-avg is not available in simulations".into());
        }
        if matches!(self.noise, CovarianceModel::Block { .. })
            && !matches!(self.layout, Layout::Blocked { .. })
        {
            return bad("block noise needs a blocked layout".into());
        }
        if self.permutation == PermutationChoice::BlockRandom
            && !matches!(self.layout, Layout::Blocked { .. })
        {
            return bad("block-random permutation needs a blocked layout".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        self.noise.validate()
    }
}

/// Random schedule for the given layout.
pub fn random_design<R: Rng + ?Sized>(m: usize, n: usize, layout: Layout, rng: &mut R) -> Result<DesignSchedule> {
    match layout {
        Layout::Random => {
            let mut stim: Vec<usize> = (0..m * n).map(|t| t % m).collect();
            stim.shuffle(rng);
            DesignSchedule::from_indices(&stim, None)
        }
        Layout::Blocked { blocks } => {
            if blocks == 0 || m % blocks != 0 {
                return Err(Error::InvalidParameter(format!("{blocks} blocks do not divide m = {m}")));
            }
            let per = m / blocks;
            let mut stim = Vec::with_capacity(m * n);
            let mut block_of = Vec::with_capacity(m * n);
            for b in 0..blocks {
                let mut slots: Vec<usize> = (0..per * n).map(|i| b * per + i % per).collect();
                slots.shuffle(rng);
                stim.extend(slots);
                block_of.extend(std::iter::repeat(b).take(per * n));
            }
            DesignSchedule::from_indices(&stim, Some(&block_of))
        }
    }
}

/// Summary of one estimator at one grid point. Signal-variance statistics use the
/// unclamped estimates; `mean_omega2` averages the reported explainable variance.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma2_a_true: f64,
    pub estimator: String,
    pub mean_sigma2_a: f64,
    pub bias: f64,
    /// `None` when fewer than two estimates are available.
    pub sd: Option<f64>,
    pub q25: f64,
    pub q75: f64,
    pub mean_omega2: f64,
    pub omega2_true: f64,
    /// Replicates where the estimator errored or did not converge.
    pub n_fail: usize,
    pub n_reps: usize,
    /// Mean mixing coefficient of the permutations used.
    pub alpha_realized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, sigma2_a: f64, estimator: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.sigma2_a_true == sigma2_a && r.estimator == estimator)
    }

    pub fn rows_for<'a>(&'a self, estimator: &'a str) -> impl Iterator<Item = &'a SweepRow> + 'a {
        self.rows.iter().filter(move |r| r.estimator == estimator)
    }
}

/// Outcome of one estimator on one replicate: `(raw signal, omega2, failed)`.
type Outcome = Option<(f64, f64, bool)>;

struct Replicate {
    alpha: Option<f64>,
    omega2_true: f64,
    outcomes: Vec<Outcome>,
}

fn stream_id(grid_index: usize, r: usize) -> u64 {
    ((grid_index as u64) << 32) | r as u64
}

fn run_replicate(cfg: &SweepConfig, grid_index: usize, sigma2_a: f64, r: usize) -> Result<Replicate> {
    let stream = stream_id(grid_index, r);
    let mut rng = substream(cfg.seed, stream);
    let d = random_design(cfg.m, cfg.n, cfg.layout, &mut rng)?;
    let perm_seed: u64 = rng.random();
    let p = cfg.permutation.build(&d, perm_seed)?;
    let sampler = ExperimentSampler::new(&d, sigma2_a, &cfg.noise, cfg.sigma2_eps)?;
    let (y, _) = sampler.draw(&mut rng);

    let outcomes = cfg
        .estimators
        .iter()
        .map(|method| {
            let est = match method {
                Method::Shuffle => shuffle_estimate(&y, &d, &p),
                Method::MethodOfMoments => mom_estimate(&y, &d),
                Method::Reml(family) => {
                    let opts = RemlOptions {
                        seed: cfg.reml.seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15),
                        ..cfg.reml
                    };
                    reml_estimate(&y, &d, *family, &opts).map(|(_, est)| est)
                }
                Method::ShuffleAverage => unreachable!("rejected by validate"),
            };
            est.ok()
                .map(|e| (e.sigma2_a_raw, e.omega2, e.flags.non_converged))
        })
        .collect();
    Ok(Replicate {
        alpha: alpha(&d, &p).ok(),
        omega2_true: sampler.truth().omega2,
        outcomes,
    })
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let mu = mean(v);
    Some((v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

/// Linear-interpolation quantile of sorted data (type 7).
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(cfg: &SweepConfig, sigma2_a: f64, reps: &[Replicate]) -> Vec<SweepRow> {
    let alphas: Vec<f64> = reps.iter().filter_map(|r| r.alpha).collect();
    let alpha_realized = (!alphas.is_empty()).then(|| mean(&alphas));
    let omega2_true = mean(&reps.iter().map(|r| r.omega2_true).collect::<Vec<_>>());
    cfg.estimators
        .iter()
        .enumerate()
        .map(|(k, method)| {
            let ok: Vec<(f64, f64, bool)> = reps.iter().filter_map(|r| r.outcomes[k]).collect();
            let n_fail = reps.len() - ok.iter().filter(|o| !o.2).count();
            let mut raw: Vec<f64> = ok.iter().map(|o| o.0).collect();
            let omegas: Vec<f64> = ok.iter().map(|o| o.1).collect();
            let mean_sigma2_a = if raw.is_empty() { f64::NAN } else { mean(&raw) };
            let sd = sample_sd(&raw);
            raw.sort_by(f64::total_cmp);
            SweepRow {
                sigma2_a_true: sigma2_a,
                estimator: method.to_string(),
                mean_sigma2_a,
                bias: mean_sigma2_a - sigma2_a,
                sd,
                q25: quantile(&raw, 0.25),
                q75: quantile(&raw, 0.75),
                mean_omega2: if omegas.is_empty() { f64::NAN } else { mean(&omegas) },
                omega2_true,
                n_fail,
                n_reps: reps.len(),
                alpha_realized,
            }
        })
        .collect()
}

fn in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Runs `cfg.replicates` simulations per grid point with every configured estimator.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    in_pool(cfg.threads, || {
        let mut rows = Vec::new();
        for (gi, &s2a) in cfg.grid.iter().enumerate() {
            let reps = (0..cfg.replicates)
                .into_par_iter()
                .map(|r| run_replicate(cfg, gi, s2a, r))
                .collect::<Result<Vec<_>>>()?;
            rows.extend(summarize(cfg, s2a, &reps));
        }
        Ok(SweepResult { rows })
    })?
}

/// Sweep with block-effect noise; requires a blocked layout.
pub fn run_block_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    if !matches!(cfg.layout, Layout::Blocked { .. }) {
        return Err(Error::Config("block sweep needs a blocked layout".into()));
    }
    run_sweep(cfg)
}

/// Sweep with time-series noise on random schedules.
pub fn run_timeseries_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    if matches!(cfg.noise, CovarianceModel::Block { .. }) {
        return Err(Error::Config("time-series sweep needs a stationary noise model".into()));
    }
    run_sweep(cfg)
}

/// Sweep that must include at least one shuffle and one REML estimator.
pub fn run_reml_comparison(cfg: &SweepConfig) -> Result<SweepResult> {
    let has_reml = cfg.estimators.iter().any(|m| matches!(m, Method::Reml(_)));
    if !has_reml || !cfg.estimators.contains(&Method::Shuffle) {
        return Err(Error::Config(
            "REML comparison needs both shuffle and reml estimators".into(),
        ));
    }
    run_sweep(cfg)
}

const SWEEP_HEADER: [&str; 12] = [
    "sigma2_A_true",
    "estimator",
    "mean_sigma2_A",
    "bias",
    "sd",
    "q25",
    "q75",
    "mean_omega2",
    "omega2_true",
    "n_fail",
    "n_reps",
    "alpha_realized",
];

fn opt_field(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Writes the sweep table as CSV. Floats use the shortest representation that
/// parses back to the same value; missing values are `NA`.
pub fn write_sweep_table<W: std::io::Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in &result.rows {
        w.write_record([
            r.sigma2_a_true.to_string(),
            r.estimator.clone(),
            r.mean_sigma2_a.to_string(),
            r.bias.to_string(),
            opt_field(r.sd),
            r.q25.to_string(),
            r.q75.to_string(),
            r.mean_omega2.to_string(),
            r.omega2_true.to_string(),
            r.n_fail.to_string(),
            r.n_reps.to_string(),
            opt_field(r.alpha_realized),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_sweep_table(result: &SweepResult, path: &Path) -> Result<()> {
    write_sweep_table(result, std::fs::File::create(path)?)
}

/// Parses a table written by [`write_sweep_table`]. Lines starting with `#` are skipped.
pub fn read_sweep_table<R: std::io::Read>(input: R) -> Result<SweepResult> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != SWEEP_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let err = |field: &str| Error::Parse {
            line,
            message: format!("bad value for {field}"),
        };
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| err(SWEEP_HEADER[i]));
        let opt = |i: usize| match &rec[i] {
            "NA" => Ok(None),
            s => s.parse::<f64>().map(Some).map_err(|_| err(SWEEP_HEADER[i])),
        };
        let count = |i: usize| rec[i].parse::<usize>().map_err(|_| err(SWEEP_HEADER[i]));
        rows.push(SweepRow {
            sigma2_a_true: num(0)?,
            estimator: rec[1].to_string(),
            mean_sigma2_a: num(2)?,
            bias: num(3)?,
            sd: opt(4)?,
            q25: num(5)?,
            q75: num(6)?,
            mean_omega2: num(7)?,
            omega2_true: num(8)?,
            n_fail: count(9)?,
            n_reps: count(10)?,
            alpha_realized: opt(11)?,
        });
    }
    Ok(SweepResult { rows })
}

pub fn load_sweep_table(path: &Path) -> Result<SweepResult> {
    read_sweep_table(std::fs::File::open(path)?)
}

/// Finite population of stimuli from which each experiment samples `m` without
/// replacement; predictions are scored against the observed treatment averages.
#[derive(Debug, Clone)]
pub struct PredictionConfig {
    /// Population size `M`.
    pub population: usize,
    pub m: usize,
    pub n: usize,
    /// Population effects are centered and scaled so that
    /// `sum mu_i^2 / (M - 1) = sigma2_a`.
    pub sigma2_a: f64,
    pub noise: CovarianceModel,
    pub sigma2_eps: f64,
    /// SD of the independent per-stimulus error added to `f*` for the perturbed rule.
    pub perturbation_sd: f64,
    pub replicates: usize,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            population: 2000,
            m: 120,
            n: 15,
            sigma2_a: 0.2,
            noise: CovarianceModel::ExpNugget {
                lambda1: 0.7,
                lambda2: 30.0,
            },
            sigma2_eps: 1.0,
            perturbation_sd: 0.2,
            replicates: 2000,
            seed: 1402,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloMean {
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
}

impl MonteCarloMean {
    fn of(v: &[f64]) -> Self {
        Self {
            mean: mean(v),
            se: sample_sd(v).unwrap_or(f64::NAN) / (v.len() as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSummary {
    /// Analytic noise level of the fixed design.
    pub noise_level: f64,
    /// `sigma2_a / (sigma2_a + noise_level)`.
    pub omega2: f64,
    /// Analytic expectation of the uncentered MSPE of `f*`, which also carries the
    /// variance of the grand mean of the noise.
    pub expected_mspe_uncentered: f64,
    /// MSPE of `f*` after removing the sample means of predictions and averages.
    pub mspe: MonteCarloMean,
    pub mspe_uncentered: MonteCarloMean,
    pub corr2: MonteCarloMean,
    pub mspe_perturbed: MonteCarloMean,
    pub corr2_perturbed: MonteCarloMean,
    pub replicates: usize,
}

fn centered_mspe(f: &[f64], avg: &[f64]) -> f64 {
    let (fm, am) = (mean(f), mean(avg));
    let ss: f64 = f.iter().zip(avg).map(|(x, y)| ((x - fm) - (y - am)).powi(2)).sum();
    ss / (f.len() - 1) as f64
}

fn uncentered_mspe(f: &[f64], avg: &[f64]) -> f64 {
    f.iter().zip(avg).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / (f.len() - 1) as f64
}

fn corr2(f: &[f64], avg: &[f64]) -> f64 {
    let (fm, am) = (mean(f), mean(avg));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in f.iter().zip(avg) {
        sxy += (x - fm) * (y - am);
        sxx += (x - fm).powi(2);
        syy += (y - am).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy * sxy / (sxx * syy)
    }
}

/// Checks how the optimal predictor `f*(stimulus) = mu` scores on simulated
/// experiments, alongside a perturbed predictor. The design is drawn once from the
/// seed; populations, samples and noise are redrawn per replicate.
pub fn run_prediction_check(cfg: &PredictionConfig) -> Result<PredictionSummary> {
    if cfg.m < 2 || cfg.m > cfg.population || cfg.n < 1 || cfg.replicates < 2 {
        return Err(Error::Config(format!(
            "need 2 <= m <= M, n >= 1 and at least 2 replicates, got m = {}, M = {}, n = {}, R = {}",
            cfg.m, cfg.population, cfg.n, cfg.replicates
        )));
    }
    if !(cfg.sigma2_a >= 0.0) || !(cfg.sigma2_eps >= 0.0) || !(cfg.perturbation_sd >= 0.0) {
        return Err(Error::Config("variances must be nonnegative".into()));
    }
    cfg.noise.validate()?;
    let d = random_design(cfg.m, cfg.n, Layout::Random, &mut substream(cfg.seed, u64::MAX))?;
    let sampler = NoiseSampler::new(&cfg.noise, &d)?;
    let noise_level = cfg.noise.noise_level(&d, cfg.sigma2_eps)?;
    let t = d.len();
    let grand = cfg.noise.grand_sum(&d)?;
    let expected_mspe_uncentered =
        noise_level + cfg.sigma2_eps * grand / (t * cfg.n * (cfg.m - 1)) as f64;
    let omega2 = if cfg.sigma2_a + noise_level > 0.0 {
        cfg.sigma2_a / (cfg.sigma2_a + noise_level)
    } else {
        0.0
    };
    let sigma_eps = cfg.sigma2_eps.sqrt();

    let per_rep = |r: usize| -> [f64; 5] {
        let mut rng = substream(cfg.seed, r as u64);
        let mut mu: Vec<f64> = (0..cfg.population)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mu_bar = mean(&mu);
        mu.iter_mut().for_each(|v| *v -= mu_bar);
        let ss = mu.iter().map(|v| v * v).sum::<f64>() / (cfg.population - 1) as f64;
        let scale = if ss > 0.0 { (cfg.sigma2_a / ss).sqrt() } else { 0.0 };
        mu.iter_mut().for_each(|v| *v *= scale);

        let picks = rand::seq::index::sample(&mut rng, cfg.population, cfg.m);
        let f_star: Vec<f64> = picks.iter().map(|i| mu[i]).collect();
        let mut y = vec![0.0; t];
        sampler.sample_into(&mut rng, &mut y);
        for (v, &j) in y.iter_mut().zip(d.stimulus_of()) {
            *v = f_star[j] + sigma_eps * *v;
        }
        let avg = treatment_averages_unchecked(&y, &d);
        let perturbed: Vec<f64> = f_star
            .iter()
            .map(|v| v + cfg.perturbation_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        [
            centered_mspe(&f_star, &avg),
            uncentered_mspe(&f_star, &avg),
            corr2(&f_star, &avg),
            centered_mspe(&perturbed, &avg),
            corr2(&perturbed, &avg),
        ]
    };
    let draws: Vec<[f64; 5]> = in_pool(cfg.threads, || {
        (0..cfg.replicates).into_par_iter().map(per_rep).collect()
    })?;
    let col = |k: usize| MonteCarloMean::of(&draws.iter().map(|d| d[k]).collect::<Vec<_>>());
    Ok(PredictionSummary {
        noise_level,
        omega2,
        expected_mspe_uncentered,
        mspe: col(0),
        mspe_uncentered: col(1),
        corr2: col(2),
        mspe_perturbed: col(3),
        corr2_perturbed: col(4),
        replicates: cfg.replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(cfg: SweepConfig) -> SweepConfig {
        let layout = match cfg.layout {
            Layout::Blocked { .. } => Layout::Blocked { blocks: 4 },
            Layout::Random => Layout::Random,
        };
        SweepConfig {
            layout,
            m: 12,
            n: 4,
            replicates: 40,
            grid: vec![0.0, 0.5],
            ..cfg
        }
    }

    #[test]
    fn quantiles_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.75), 3.25);
        assert_eq!(quantile(&[5.0], 0.25), 5.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn permutation_choice_parsing() {
        for s in ["reverse", "shift:3", "odd-even", "block-random"] {
            assert_eq!(s.parse::<PermutationChoice>().unwrap().to_string(), s);
        }
        assert!("shift:x".parse::<PermutationChoice>().is_err());
        assert!("file:p".parse::<PermutationChoice>().is_err());
    }

    #[test]
    fn blocked_layout_keeps_stimuli_inside_blocks() {
        let d = random_design(12, 3, Layout::Blocked { blocks: 4 }, &mut substream(1, 0)).unwrap();
        let blocks = d.block_of().unwrap();
        for (t, &j) in d.stimulus_of().iter().enumerate() {
            let label: usize = d.stimulus_labels()[j].parse().unwrap();
            assert_eq!(label / 3, blocks[t]);
            assert_eq!(blocks[t], t / 9);
        }
        assert!(random_design(10, 3, Layout::Blocked { blocks: 4 }, &mut substream(1, 0)).is_err());
    }

    #[test]
    fn validation() {
        let base = small(SweepConfig::block_defaults());
        assert!(base.validate().is_ok());
        let bad = [
            SweepConfig { replicates: 0, ..base.clone() },
            SweepConfig { grid: vec![], ..base.clone() },
            SweepConfig { grid: vec![-0.1], ..base.clone() },
            SweepConfig { layout: Layout::Random, ..base.clone() },
            SweepConfig { estimators: vec![], ..base.clone() },
            SweepConfig { estimators: vec![Method::ShuffleAverage], ..base.clone() },
            SweepConfig { layout: Layout::Blocked { blocks: 5 }, ..base.clone() },
            SweepConfig { threads: Some(0), ..base.clone() },
        ];
        for cfg in bad {
            assert!(run_sweep(&cfg).is_err(), "{cfg:?}");
        }
        assert!(run_reml_comparison(&base).is_err());
        assert!(run_timeseries_sweep(&base).is_err());
        assert!(run_block_sweep(&small(SweepConfig::timeseries_defaults())).is_err());
    }

    #[test]
    fn rows_are_consistent() {
        let cfg = SweepConfig {
            estimators: vec![Method::Shuffle, Method::MethodOfMoments],
            ..small(SweepConfig::block_defaults())
        };
        let res = run_block_sweep(&cfg).unwrap();
        assert_eq!(res.rows.len(), 4);
        for row in &res.rows {
            assert_eq!(row.n_reps, 40);
            assert_eq!(row.n_fail, 0);
            assert!(row.q25 <= row.q75);
            assert!((row.bias - (row.mean_sigma2_a - row.sigma2_a_true)).abs() < 1e-15);
            assert!(row.alpha_realized.unwrap() > 0.0);
        }
        assert!(res.row(0.5, "mom").is_some());
        assert_eq!(res.rows_for("shuffle").count(), 2);
    }

    #[test]
    fn single_replicate_flags_sd() {
        let cfg = SweepConfig {
            replicates: 1,
            ..small(SweepConfig::timeseries_defaults())
        };
        let res = run_timeseries_sweep(&cfg).unwrap();
        assert!(res.rows.iter().all(|r| r.sd.is_none() && r.q25 == r.q75));
    }

    #[test]
    fn zero_signal_and_zero_noise_gives_zero() {
        let cfg = SweepConfig {
            grid: vec![0.0],
            sigma2_eps: 0.0,
            estimators: vec![Method::Shuffle, Method::MethodOfMoments],
            ..small(SweepConfig::timeseries_defaults())
        };
        let res = run_sweep(&cfg).unwrap();
        for row in &res.rows {
            assert_eq!(row.mean_sigma2_a, 0.0);
            assert_eq!(row.mean_omega2, 0.0);
            assert_eq!(row.sd, Some(0.0));
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = SweepConfig {
            estimators: vec![Method::Shuffle, Method::MethodOfMoments],
            ..small(SweepConfig::timeseries_defaults())
        };
        let one = run_sweep(&SweepConfig { threads: Some(1), ..cfg.clone() }).unwrap();
        let four = run_sweep(&SweepConfig { threads: Some(4), ..cfg }).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn table_round_trip() {
        let cfg = small(SweepConfig::timeseries_defaults());
        let mut res = run_sweep(&cfg).unwrap();
        res.rows[0].sd = None;
        res.rows[1].alpha_realized = None;
        let mut buf = Vec::new();
        write_sweep_table(&res, &mut buf).unwrap();
        assert_eq!(read_sweep_table(buf.as_slice()).unwrap(), res);

        let mut empty = Vec::new();
        write_sweep_table(&SweepResult::default(), &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);

        let bad = "sigma2_A_true,estimator\n0,x\n";
        assert!(matches!(read_sweep_table(bad.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn prediction_check_small() {
        let cfg = PredictionConfig {
            population: 200,
            m: 20,
            n: 4,
            replicates: 200,
            noise: CovarianceModel::Iid,
            ..Default::default()
        };
        let s = run_prediction_check(&cfg).unwrap();
        assert!((s.noise_level - 0.25).abs() < 1e-12);
        // Under white noise the uncentered expectation is noise level * m / (m - 1).
        assert!((s.expected_mspe_uncentered - 0.25 * 20.0 / 19.0).abs() < 1e-12);
        assert!(s.mspe_perturbed.mean > s.mspe.mean);
        assert!(run_prediction_check(&PredictionConfig { m: 300, ..cfg.clone() }).is_err());
    }
}
