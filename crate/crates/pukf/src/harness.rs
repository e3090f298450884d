//! Experiment driver: single runs, Monte Carlo campaigns, cross-form
//! comparisons, consistency statistics and CSV output.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::engine::{Estimator, Form};
use crate::error::{Error, Result};
use crate::filter::{schmidt_update_block, NonlinearSystem, UpdateWeights};
use crate::scenarios::falling_body::{falling_body_truth, FallingBodyParams};
use crate::scenarios::imu_cam::{run_imu_cam, ImuCamParams};
use crate::scenarios::tumbler::{run_tumbler, TumblerParams};
use crate::scenarios::Config;
use crate::weights::{WeightMode, WeightPolicy, WeightSelector};

/// Filter variant selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Full update in full-covariance form.
    Ekf,
    /// Consider update on the scenario's parameter states.
    Schmidt,
    /// Partial update in full-covariance form.
    Pu,
    SrPu,
    UdPu,
    /// Partial-update MEKF with UD covariance (IMU-camera only).
    MekfPu,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::Ekf, Variant::Schmidt, Variant::Pu, Variant::SrPu, Variant::UdPu, Variant::MekfPu];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ekf" => Self::Ekf,
            "schmidt" => Self::Schmidt,
            "pu" => Self::Pu,
            "sr-pu" => Self::SrPu,
            "ud-pu" => Self::UdPu,
            "mekf-pu" => Self::MekfPu,
            _ => return Err(Error::Config(format!("unknown filter `{s}`"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ekf => "ekf",
            Self::Schmidt => "schmidt",
            Self::Pu => "pu",
            Self::SrPu => "sr-pu",
            Self::UdPu => "ud-pu",
            Self::MekfPu => "mekf-pu",
        }
    }

    pub fn form(self) -> Form {
        match self {
            Self::SrPu => Form::Sqrt,
            Self::UdPu | Self::MekfPu => Form::Ud,
            _ => Form::Full,
        }
    }
}

/// Update-weight request: scenario default, a fixed list, or a dynamic rule.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    Default,
    Static(Vec<f64>),
    Dnl { base: Option<Vec<f64>> },
    Dc { base: Option<Vec<f64>> },
}

impl WeightSpec {
    /// Parses `0.9,0.9,0.75`, `dnl`, `dc`, `dnl:base=<list>` or `dc:base=<list>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse weights `{s}`"));
        let (head, tail) = match s.split_once(':') {
            Some((h, t)) => (h, Some(t)),
            None => (s, None),
        };
        let base = match tail {
            None => None,
            Some(t) => {
                let list = t.strip_prefix("base=").ok_or_else(bad)?;
                Some(crate::scenarios::config::parse_list(list).map_err(|_| bad())?)
            }
        };
        match head {
            "default" if base.is_none() => Ok(Self::Default),
            "dnl" => Ok(Self::Dnl { base }),
            "dc" => Ok(Self::Dc { base }),
            _ if base.is_none() => {
                let v = crate::scenarios::config::parse_list(head).map_err(|_| bad())?;
                if v.iter().any(|b| !(0.0..=1.0).contains(b)) {
                    return Err(Error::Config(format!("weights `{s}` must lie in [0, 1]")));
                }
                Ok(Self::Static(v))
            }
            _ => Err(bad()),
        }
    }

    /// Resolves to a policy for an n-state filter.
    pub fn policy(&self, default_beta: &[f64], sigma0: &[f64], dynamic_states: Option<Vec<bool>>) -> Result<WeightPolicy> {
        let n = default_beta.len();
        let check = |v: &Vec<f64>| {
            if v.len() == n {
                Ok(DVector::from_column_slice(v))
            } else {
                Err(Error::Config(format!("expected {n} weights, got {}", v.len())))
            }
        };
        let sigma0 = DVector::from_column_slice(sigma0);
        Ok(match self {
            Self::Default => WeightPolicy { mode: WeightMode::Static(DVector::from_column_slice(default_beta)), baseline: None, sigma0, dynamic_states: None },
            Self::Static(v) => WeightPolicy { mode: WeightMode::Static(check(v)?), baseline: None, sigma0, dynamic_states: None },
            Self::Dnl { base } => WeightPolicy { mode: WeightMode::Dnl, baseline: base.as_ref().map(check).transpose()?, sigma0, dynamic_states: dynamic_states.clone() },
            Self::Dc { base } => WeightPolicy { mode: WeightMode::Dc, baseline: base.as_ref().map(check).transpose()?, sigma0, dynamic_states: dynamic_states.clone() },
        })
    }
}

/// Everything logged during one run. All series share `times`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub variant: String,
    pub seed: u64,
    pub times: Vec<f64>,
    pub truth: Vec<DVector<f64>>,
    pub est: Vec<DVector<f64>>,
    pub sigma: Vec<DVector<f64>>,
    /// Weights of the most recent update (NaN before the first one).
    pub beta: Vec<DVector<f64>>,
    pub cond_full: Vec<f64>,
    pub cond_factor: Vec<f64>,
    /// Accepted measurements at this epoch; `None` when nothing arrived.
    pub gate: Vec<Option<usize>>,
    /// Filter error that stopped the run early.
    pub failure: Option<String>,
    /// Initial standard deviations, used by the divergence rule.
    pub sigma0: DVector<f64>,
}

impl RunRecord {
    pub fn new(variant: &str, seed: u64, sigma0: DVector<f64>) -> Self {
        Self {
            variant: variant.to_string(),
            seed,
            times: Vec::new(),
            truth: Vec::new(),
            est: Vec::new(),
            sigma: Vec::new(),
            beta: Vec::new(),
            cond_full: Vec::new(),
            cond_factor: Vec::new(),
            gate: Vec::new(),
            failure: None,
            sigma0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        t: f64,
        truth: DVector<f64>,
        est: DVector<f64>,
        sigma: DVector<f64>,
        beta: DVector<f64>,
        cond_full: f64,
        cond_factor: f64,
        gate: Option<usize>,
    ) {
        self.times.push(t);
        self.truth.push(truth);
        self.est.push(est);
        self.sigma.push(sigma);
        self.beta.push(beta);
        self.cond_full.push(cond_full);
        self.cond_factor.push(cond_factor);
        self.gate.push(gate);
    }

    /// Logs the estimator state at time t.
    pub fn log(&mut self, t: f64, truth: &DVector<f64>, est: &Estimator, beta: &DVector<f64>, gate: Option<usize>) {
        self.push(t, truth.clone(), est.x.clone(), est.sigma(), beta.clone(), est.cond_full(), est.cond_factor(), gate);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn error(&self, i: usize) -> DVector<f64> {
        &self.truth[i] - &self.est[i]
    }

    pub fn state_dim(&self) -> usize {
        self.truth.first().map_or(0, |v| v.len())
    }

    /// True if any epoch with t > t_from has some |errorᵢ| > 3σᵢ.
    pub fn outside_3sigma_after(&self, t_from: f64) -> bool {
        if self.failure.is_some() {
            return true;
        }
        (0..self.len()).filter(|&i| self.times[i] > t_from).any(|i| {
            let e = self.error(i);
            (0..e.len()).any(|j| !e[j].is_finite() || e[j].abs() > 3.0 * self.sigma[i][j])
        })
    }

    /// Writes the single-run CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.state_dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        for prefix in ["truth", "est", "err", "sigma", "beta"] {
            header.extend((0..n).map(|i| format!("{prefix}_{i}")));
        }
        header.extend(["cond_full".into(), "cond_factor".into(), "gate".into()]);
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut row = vec![fmt17(self.times[i])];
            let e = self.error(i);
            for v in [&self.truth[i], &self.est[i], &e, &self.sigma[i], &self.beta[i]] {
                row.extend(v.iter().map(|x| fmt17(*x)));
            }
            row.push(fmt17(self.cond_full[i]));
            row.push(fmt17(self.cond_factor[i]));
            row.push(self.gate[i].map_or(String::new(), |g| g.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

/// Formats with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Divergence flag and first divergence epoch.
///
/// A run diverges when a state turns non-finite, when the filter stopped
/// with an error, or when some |errorᵢ| exceeds 10·3σ₀,ᵢ for 10
/// consecutive epochs.
pub fn divergence_detect(rec: &RunRecord) -> (bool, Option<f64>) {
    const PERSIST: usize = 10;
    let n = rec.state_dim();
    let mut run = vec![0usize; n];
    for i in 0..rec.len() {
        let e = rec.error(i);
        if e.iter().any(|v| !v.is_finite()) {
            return (true, Some(rec.times[i]));
        }
        for j in 0..n {
            if e[j].abs() > 30.0 * rec.sigma0[j] {
                run[j] += 1;
                if run[j] >= PERSIST {
                    return (true, Some(rec.times[i + 1 - PERSIST]));
                }
            } else {
                run[j] = 0;
            }
        }
    }
    if rec.failure.is_some() {
        return (true, rec.times.last().copied());
    }
    (false, None)
}

/// Scenario selection with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    FallingBody(FallingBodyParams),
    ImuCam(ImuCamParams),
    Tumbler(TumblerParams),
}

impl Scenario {
    pub fn from_name(name: &str, cfg: &Config) -> Result<Self> {
        Ok(match name {
            "falling-body" => Self::FallingBody(FallingBodyParams::from_config(cfg)?),
            "imu-cam" => Self::ImuCam(ImuCamParams::from_config(cfg)?),
            "tumbler" => Self::Tumbler(TumblerParams::from_config(cfg)?),
            _ => return Err(Error::Config(format!("unknown scenario `{name}`"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::FallingBody(_) => "falling-body",
            Self::ImuCam(_) => "imu-cam",
            Self::Tumbler(_) => "tumbler",
        }
    }

    pub fn to_config_text(&self) -> String {
        match self {
            Self::FallingBody(p) => p.to_config_text(),
            Self::ImuCam(p) => p.to_config_text(),
            Self::Tumbler(p) => p.to_config_text(),
        }
    }
}

/// Runs one scenario with one filter variant.
pub fn run_scenario(sc: &Scenario, variant: Variant, weights: &WeightSpec, seed: u64) -> Result<RunRecord> {
    match sc {
        Scenario::FallingBody(p) => run_falling_body(p, variant, weights, seed),
        Scenario::ImuCam(p) => run_imu_cam(p, variant, weights, seed),
        Scenario::Tumbler(p) => run_tumbler(p, variant, weights, seed),
    }
}

/// Falling-body run. Errors only on configuration problems; filter
/// failures are stored in the record.
pub fn run_falling_body(p: &FallingBodyParams, variant: Variant, weights: &WeightSpec, seed: u64) -> Result<RunRecord> {
    if variant == Variant::MekfPu {
        return Err(Error::Config("mekf-pu applies to the imu-cam scenario only".into()));
    }
    let data = falling_body_truth(p, seed);
    let sys = p.model();
    let policy = match variant {
        Variant::Ekf => WeightPolicy::fixed(&[1.0; 3]),
        Variant::Schmidt => WeightPolicy::fixed(&[1.0, 1.0, 0.0]),
        _ => weights.policy(&p.beta, &p.sigma0, Some(p.dynamic_states.to_vec()))?,
    };
    let mut rec = RunRecord::new(variant.name(), seed, DVector::from_column_slice(&p.sigma0));
    let mut est = Estimator::new(variant.form(), data.x0_est.clone(), &data.p0)?;
    let mut sel = WeightSelector::new(policy);
    let mut beta = DVector::from_element(3, f64::NAN);
    rec.log(0.0, &data.truth[0], &est, &beta, None);
    let u = DVector::zeros(0);
    for k in 1..data.times.len() {
        let step = (|| -> Result<Option<usize>> {
            if sel.policy.is_dynamic() {
                sel.on_propagate(&sys, &est.x, &est.covariance(), &u, k);
            }
            est.propagate(&sys, &u, k)?;
            let Some(y) = &data.meas[k] else { return Ok(None) };
            if variant == Variant::Schmidt {
                schmidt_step(&mut est, &sys, y, k, 2)?;
                beta = DVector::from_column_slice(&[1.0, 1.0, 0.0]);
            } else {
                let w = sel.select(&sys, &est.x, &est.covariance(), y, k)?;
                est.update(&sys, y, k, &w)?;
                beta = w.beta().clone();
            }
            Ok(Some(1))
        })();
        match step {
            Ok(gate) => rec.log(data.times[k], &data.truth[k], &est, &beta, gate),
            Err(e) => {
                rec.failure = Some(e.to_string());
                break;
            }
        }
    }
    Ok(rec)
}

/// Literal Schmidt block update on a full-form estimator whose last
/// states are the consider parameters. The measurement is linearized at
/// the current estimate.
pub fn schmidt_step(est: &mut Estimator, sys: &dyn NonlinearSystem, y: &DVector<f64>, k: usize, nx: usize) -> Result<()> {
    let p = est.covariance();
    let n = est.x.len();
    let h = sys.h_jacobian(&est.x, k);
    let y_lin = y - sys.h(&est.x, k) + &h * &est.x;
    let hx = h.columns(0, nx).into_owned();
    let hp = h.columns(nx, n - nx).into_owned();
    let (x, p) = schmidt_update_block(&est.x, &p, nx, &hx, &hp, &sys.r(), &y_lin)?;
    est.reset(x, &p)
}

/// Running per-epoch sums over runs; mergeable in any grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator {
    pub count: Vec<DVector<f64>>,
    pub mean_err: Vec<DVector<f64>>,
    pub m2: Vec<DVector<f64>>,
    pub sigma_sum: Vec<DVector<f64>>,
    pub runs: usize,
    pub diverged: usize,
}

impl Accumulator {
    pub fn new(epochs: usize, n: usize) -> Self {
        let z = vec![DVector::zeros(n); epochs];
        Self { count: z.clone(), mean_err: z.clone(), m2: z.clone(), sigma_sum: z, runs: 0, diverged: 0 }
    }

    /// Adds one run. Non-finite epochs are skipped per state.
    pub fn add(&mut self, rec: &RunRecord) {
        self.runs += 1;
        if divergence_detect(rec).0 {
            self.diverged += 1;
        }
        for i in 0..self.count.len().min(rec.len()) {
            let e = rec.error(i);
            for j in 0..e.len() {
                if !(e[j].is_finite() && rec.sigma[i][j].is_finite()) {
                    continue;
                }
                let c = self.count[i][j] + 1.0;
                let d = e[j] - self.mean_err[i][j];
                self.mean_err[i][j] += d / c;
                self.m2[i][j] += d * (e[j] - self.mean_err[i][j]);
                self.count[i][j] = c;
                self.sigma_sum[i][j] += rec.sigma[i][j];
            }
        }
    }

    /// Chan's parallel merge of two accumulators.
    pub fn merge(&self, other: &Accumulator) -> Accumulator {
        let mut out = self.clone();
        out.runs += other.runs;
        out.diverged += other.diverged;
        for i in 0..out.count.len() {
            for j in 0..out.count[i].len() {
                let (na, nb) = (self.count[i][j], other.count[i][j]);
                let n = na + nb;
                if n == 0.0 {
                    continue;
                }
                let d = other.mean_err[i][j] - self.mean_err[i][j];
                out.mean_err[i][j] = self.mean_err[i][j] + d * nb / n;
                out.m2[i][j] = self.m2[i][j] + other.m2[i][j] + d * d * na * nb / n;
                out.count[i][j] = n;
                out.sigma_sum[i][j] = self.sigma_sum[i][j] + other.sigma_sum[i][j];
            }
        }
        out
    }
}

/// Per-epoch Monte Carlo statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub times: Vec<f64>,
    /// Sample standard deviation of the error over runs, (n−1) normalized.
    pub sampled_sigma: Vec<DVector<f64>>,
    /// Mean filter-reported σ.
    pub filter_sigma: Vec<DVector<f64>>,
    pub mean_err: Vec<DVector<f64>>,
    /// Runs contributing at each epoch and state.
    pub count: Vec<DVector<f64>>,
    pub divergence_count: usize,
    pub run_count: usize,
    pub base_seed: u64,
    pub runs: Vec<RunRecord>,
}

impl MonteCarloReport {
    pub fn from_accumulator(times: Vec<f64>, acc: &Accumulator, base_seed: u64, runs: Vec<RunRecord>) -> Self {
        let sampled_sigma = acc
            .m2
            .iter()
            .zip(&acc.count)
            .map(|(m2, c)| m2.zip_map(c, |m, n| if n > 1.0 { (m / (n - 1.0)).sqrt() } else { 0.0 }))
            .collect();
        let filter_sigma = acc
            .sigma_sum
            .iter()
            .zip(&acc.count)
            .map(|(s, c)| s.zip_map(c, |s, n| if n > 0.0 { s / n } else { f64::NAN }))
            .collect();
        Self {
            times,
            sampled_sigma,
            filter_sigma,
            mean_err: acc.mean_err.clone(),
            count: acc.count.clone(),
            divergence_count: acc.diverged,
            run_count: acc.runs,
            base_seed,
            runs,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.sampled_sigma.first().map_or(0, |v| v.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        for prefix in ["sampled_sigma", "filter_sigma", "mean_err"] {
            header.extend((0..n).map(|i| format!("{prefix}_{i}")));
        }
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.times.len() {
            let mut row = vec![fmt17(self.times[i])];
            for v in [&self.sampled_sigma[i], &self.filter_sigma[i], &self.mean_err[i]] {
                row.extend(v.iter().map(|x| fmt17(*x)));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Runs `n_runs` seeds base_seed, base_seed+1, … in parallel.
///
/// Records are collected in seed order and reduced sequentially, so the
/// report does not depend on `jobs`.
pub fn monte_carlo(
    sc: &Scenario,
    variant: Variant,
    weights: &WeightSpec,
    n_runs: usize,
    base_seed: u64,
    jobs: usize,
) -> Result<MonteCarloReport> {
    if n_runs == 0 {
        return Err(Error::InvalidRunCount);
    }
    let work = |i: usize| run_scenario(sc, variant, weights, base_seed + i as u64);
    let runs: Vec<RunRecord> = if jobs <= 1 {
        (0..n_runs).map(work).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| (0..n_runs).into_par_iter().map(work).collect::<Result<_>>())?
    };
    Ok(aggregate(runs, base_seed))
}

/// Reduces run records in order into a report.
pub fn aggregate(runs: Vec<RunRecord>, base_seed: u64) -> MonteCarloReport {
    let longest = runs.iter().max_by_key(|r| r.len()).expect("at least one run");
    let times = longest.times.clone();
    let mut acc = Accumulator::new(times.len(), longest.state_dim());
    for r in &runs {
        acc.add(r);
    }
    MonteCarloReport::from_accumulator(times, &acc, base_seed, runs)
}

/// Consistency summary of one state over the final third of the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateConsistency {
    /// Time-averaged sampled σ / mean filter σ.
    pub ratio: f64,
    /// Time-averaged mean error over its standard error σ_sampled/√n.
    pub z: f64,
}

pub fn consistency_stats(report: &MonteCarloReport) -> Vec<StateConsistency> {
    let len = report.times.len();
    let n = report.sampled_sigma.first().map_or(0, |v| v.len());
    let window = (2 * len / 3)..len;
    let w = window.len() as f64;
    (0..n)
        .map(|j| {
            let mut ratio = 0.0;
            let mut z = 0.0;
            for i in window.clone() {
                let s = report.sampled_sigma[i][j];
                ratio += s / report.filter_sigma[i][j];
                let se = s / report.count[i][j].sqrt();
                z += if se > 0.0 { report.mean_err[i][j] / se } else { 0.0 };
            }
            StateConsistency { ratio: ratio / w, z: z / w }
        })
        .collect()
}

/// Largest relative deviations between filter forms on identical streams.
#[derive(Debug, Clone, PartialEq)]
pub struct FormComparison {
    pub variants: Vec<String>,
    pub max_state_dev: f64,
    pub max_cov_dev: f64,
}

fn rel_dev(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(f64::MIN_POSITIVE)
}

/// Runs full-form PU, SR-PU and UD-PU (and the plain EKF when β = 1) on
/// the falling-body scenario and reports the worst deviations.
pub fn compare_forms(p: &FallingBodyParams, beta: &[f64], seed: u64) -> Result<FormComparison> {
    let data = falling_body_truth(p, seed);
    let sys = p.model();
    let w = UpdateWeights::from_slice(beta)?;
    let mut forms: Vec<(String, Estimator, UpdateWeights)> = vec![
        ("pu".into(), Estimator::new(Form::Full, data.x0_est.clone(), &data.p0)?, w.clone()),
        ("sr-pu".into(), Estimator::new(Form::Sqrt, data.x0_est.clone(), &data.p0)?, w.clone()),
        ("ud-pu".into(), Estimator::new(Form::Ud, data.x0_est.clone(), &data.p0)?, w.clone()),
    ];
    if w.is_full() {
        forms.push(("ekf".into(), Estimator::new(Form::Full, data.x0_est.clone(), &data.p0)?, UpdateWeights::full(3)));
    }
    let u = DVector::zeros(0);
    let mut max_state: f64 = 0.0;
    let mut max_cov: f64 = 0.0;
    for k in 1..data.times.len() {
        for (_, est, w) in forms.iter_mut() {
            est.propagate(&sys, &u, k)?;
            if let Some(y) = &data.meas[k] {
                est.update(&sys, y, k, w)?;
            }
        }
        let x0 = forms[0].1.x.clone();
        let p0 = forms[0].1.covariance();
        for (_, est, _) in forms.iter().skip(1) {
            max_state = max_state.max(rel_dev(&x0, &est.x));
            max_cov = max_cov.max(mat_rel_dev(&p0, &est.covariance()));
        }
    }
    Ok(FormComparison { variants: forms.into_iter().map(|f| f.0).collect(), max_state_dev: max_state, max_cov_dev: max_cov })
}

/// max |aᵢⱼ − bᵢⱼ| / √(aᵢᵢ·aⱼⱼ), a scale-free covariance deviation.
pub fn mat_rel_dev(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let s = (a[(i, i)] * a[(j, j)]).abs().sqrt().max(f64::MIN_POSITIVE);
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs() / s);
        }
    }
    worst
}
