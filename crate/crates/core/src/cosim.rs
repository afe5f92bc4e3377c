//! Monte Carlo co-simulation of the wireless control plants driven by the
//! closed-loop multi-agent network.
//!
//! Each `(initial state, replication)` pair is an independent job with its own
//! ChaCha8 stream: the master seed feeds `seed_from_u64` and the stream id is
//! `(β_0 << 32) | r`. Replication `r` is therefore the same whatever `R` is,
//! and the parallel and sequential drivers produce identical output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{CouplingTable, PlantModel};
use crate::error::{Error, Result};
use crate::ffn::{Constraints, TransitionMatrix};
use crate::stp::LogicalMatrix;

/// Relative slack on the analytic decay inequality.
pub const ANALYTIC_TOL: f64 = 1e-9;

/// Initial plant state for every job.
#[derive(Debug, Clone, PartialEq)]
pub enum PlantInit {
    Fixed(DVector<f64>),
    /// Zero-mean Gaussian with the given covariance.
    Gaussian(DMatrix<f64>),
}

impl PlantInit {
    fn dim(&self) -> usize {
        match self {
            PlantInit::Fixed(x) => x.len(),
            PlantInit::Gaussian(c) => c.nrows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub initial_states: Vec<usize>,
    pub plant_initial: Vec<PlantInit>,
    /// Transient `T`: the decay check only covers `k ≥ T`.
    pub transient: usize,
    /// First step included in the long-run average of `V`.
    pub burn_in: usize,
}

impl SimConfig {
    pub fn validate(&self, plants: &[PlantModel], constraints: &Constraints) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::validation("sim.horizon", "horizon must be at least 1"));
        }
        if self.replications == 0 {
            return Err(Error::validation("sim.replications", "at least one replication is required"));
        }
        if self.initial_states.is_empty() {
            return Err(Error::validation("sim.initial_states", "no initial states given"));
        }
        if let Some(b) = self.initial_states.iter().find(|b| !constraints.contains_state(**b)) {
            return Err(Error::validation(
                "sim.initial_states",
                format!("state {b} lies outside the state constraint set"),
            ));
        }
        if self.plant_initial.len() != plants.len() {
            return Err(Error::validation(
                "sim.plant_initial",
                format!("{} entries for {} plants", self.plant_initial.len(), plants.len()),
            ));
        }
        for (i, (init, p)) in self.plant_initial.iter().zip(plants).enumerate() {
            if init.dim() != p.dim() {
                return Err(Error::validation(
                    format!("plant[{i}].initial"),
                    format!("dimension {} does not match plant dimension {}", init.dim(), p.dim()),
                ));
            }
        }
        Ok(())
    }
}

/// Everything the loop needs besides the run configuration.
#[derive(Debug, Clone, Copy)]
pub struct ClosedLoop<'a> {
    pub transition: &'a TransitionMatrix,
    pub law: &'a LogicalMatrix,
    pub constraints: &'a Constraints,
    pub plants: &'a [PlantModel],
    pub coupling: &'a CouplingTable,
}

impl ClosedLoop<'_> {
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.transition.n_states(), self.transition.n_controls());
        if self.law.rows() != m || self.law.ncols() != n {
            return Err(Error::Dimension(format!(
                "gain is {}×{}, expected {m}×{n}",
                self.law.rows(),
                self.law.ncols()
            )));
        }
        if self.coupling.plants() != self.plants.len() {
            return Err(Error::Dimension(format!(
                "{} coupling rows for {} plants",
                self.coupling.plants(),
                self.plants.len()
            )));
        }
        if self.coupling.profiles() != n * m {
            return Err(Error::Dimension(format!(
                "coupling rows have {} entries, expected {}",
                self.coupling.profiles(),
                n * m
            )));
        }
        Ok(())
    }
}

/// Source of the additive plant noise.
pub trait NoiseSampler: Sync {
    fn sample(&self, plant: usize, rng: &mut ChaCha8Rng) -> DVector<f64>;
}

/// `ξ = S w` with `w` standard normal and `S Sᵀ = Ξ`.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    factors: Vec<DMatrix<f64>>,
}

/// Symmetric square root of a PSD matrix; tiny negative eigenvalues clip to 0.
pub fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

fn gaussian(factor: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let w = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    factor * w
}

impl GaussianNoise {
    pub fn new(plants: &[PlantModel]) -> Self {
        GaussianNoise {
            factors: plants.iter().map(|p| psd_factor(&p.xi_cov)).collect(),
        }
    }
}

impl NoiseSampler for GaussianNoise {
    fn sample(&self, plant: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        gaussian(&self.factors[plant], rng)
    }
}

/// One row of a trajectory. `lambda` is `None` on the final row, which has
/// no outgoing transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub k: usize,
    pub beta: usize,
    pub u: usize,
    pub z: usize,
    pub lambda: Option<Vec<bool>>,
    pub x: Vec<DVector<f64>>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub replication: usize,
    pub initial_beta: usize,
    /// `K + 1` rows, `k = 0..=K`.
    pub steps: Vec<Step>,
}

/// RNG for job `(β_0, r)`.
pub fn job_rng(seed: u64, initial_beta: usize, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((initial_beta as u64) << 32) | replication as u64);
    rng
}

fn run_job(
    sys: &ClosedLoop<'_>,
    config: &SimConfig,
    noise: &dyn NoiseSampler,
    initial_beta: usize,
    replication: usize,
) -> Result<Trajectory> {
    let mut rng = job_rng(config.seed, initial_beta, replication);
    let n = sys.transition.n_states();
    let mut x: Vec<DVector<f64>> = config
        .plant_initial
        .iter()
        .map(|init| match init {
            PlantInit::Fixed(x0) => x0.clone(),
            PlantInit::Gaussian(cov) => gaussian(&psd_factor(cov), &mut rng),
        })
        .collect();
    let mut beta = initial_beta;
    let mut steps = Vec::with_capacity(config.horizon + 1);
    for k in 0..=config.horizon {
        let u = sys.law.col(beta)?;
        let z = (u - 1) * n + beta;
        if !sys.constraints.allows(u, beta) {
            return Err(Error::Inadmissible {
                z,
                step: k,
                initial: initial_beta,
            });
        }
        let v = sys.plants.iter().zip(&x).map(|(p, xi)| p.lyapunov(xi)).collect();
        if k == config.horizon {
            steps.push(Step { k, beta, u, z, lambda: None, x, v });
            break;
        }
        let lambda: Vec<bool> = (0..sys.plants.len())
            .map(|i| rng.random_bool(sys.coupling.lambda(i, z)))
            .collect();
        let next: Vec<DVector<f64>> = sys
            .plants
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let a = if lambda[i] { &p.a_closed } else { &p.a_open };
                a * &x[i] + noise.sample(i, &mut rng)
            })
            .collect();
        steps.push(Step {
            k,
            beta,
            u,
            z,
            lambda: Some(lambda),
            x: std::mem::replace(&mut x, next),
            v,
        });
        beta = sys.transition.successor(u, beta);
    }
    Ok(Trajectory {
        replication,
        initial_beta,
        steps,
    })
}

fn jobs(config: &SimConfig) -> Vec<(usize, usize)> {
    config
        .initial_states
        .iter()
        .flat_map(|&b| (0..config.replications).map(move |r| (b, r)))
        .collect()
}

pub fn simulate_sequential(
    sys: &ClosedLoop<'_>,
    config: &SimConfig,
    noise: &dyn NoiseSampler,
) -> Result<Vec<Trajectory>> {
    sys.validate()?;
    config.validate(sys.plants, sys.constraints)?;
    jobs(config)
        .into_iter()
        .map(|(b, r)| run_job(sys, config, noise, b, r))
        .collect()
}

#[cfg(feature = "parallel")]
pub fn simulate_parallel(
    sys: &ClosedLoop<'_>,
    config: &SimConfig,
    noise: &dyn NoiseSampler,
) -> Result<Vec<Trajectory>> {
    sys.validate()?;
    config.validate(sys.plants, sys.constraints)?;
    jobs(config)
        .into_par_iter()
        .map(|(b, r)| run_job(sys, config, noise, b, r))
        .collect()
}

/// Runs every job with Gaussian noise, in parallel when the `parallel`
/// feature is enabled. Output order is `(β_0, r)` lexicographic either way.
pub fn simulate_closed_loop(sys: &ClosedLoop<'_>, config: &SimConfig) -> Result<Vec<Trajectory>> {
    let noise = GaussianNoise::new(sys.plants);
    #[cfg(feature = "parallel")]
    {
        simulate_parallel(sys, config, &noise)
    }
    #[cfg(not(feature = "parallel"))]
    {
        simulate_sequential(sys, config, &noise)
    }
}

/// Transmission outcomes observed at one profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessCount {
    pub trials: usize,
    pub successes: usize,
    pub expected: f64,
}

impl SuccessCount {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }

    /// `|p̂ - λ| ≤ 3 sqrt(λ(1-λ)/n)`.
    pub fn within_three_sigma(&self) -> bool {
        let sd = (self.expected * (1.0 - self.expected) / self.trials as f64).sqrt();
        (self.rate() - self.expected).abs() <= 3.0 * sd
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub replication: usize,
    pub initial_beta: usize,
    pub k: usize,
    pub z: usize,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantLyapunov {
    pub plant: usize,
    pub rho: f64,
    pub noise_floor: f64,
    /// `Tr(QΞ) / (1 - ρ)`.
    pub steady_bound: f64,
    pub checked: usize,
    pub violations: usize,
    pub first_violation: Option<Violation>,
    /// Smallest `ρV + Tr(QΞ) - E[V⁺]` seen; negative means a violation.
    pub worst_margin: Option<f64>,
    /// Mean and standard error of the one-sample estimate
    /// `V(k+1) - ρV(k) - Tr(QΞ)`.
    pub empirical_excess: Option<(f64, f64)>,
    /// Mean over trajectories of the time-averaged `V` after burn-in, with
    /// its standard error.
    pub long_run: Option<(f64, f64)>,
    pub long_run_ok: bool,
    pub success: BTreeMap<usize, SuccessCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub transient: usize,
    pub plants: Vec<PlantLyapunov>,
}

impl LyapunovReport {
    pub fn violations(&self) -> usize {
        self.plants.iter().map(|p| p.violations).sum()
    }

    /// No analytic violation and every long-run mean within its 3σ bound.
    pub fn passed(&self) -> bool {
        self.plants.iter().all(|p| p.violations == 0 && p.long_run_ok)
    }
}

fn mean_se(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len() as f64;
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

/// Checks the decay inequality on every row with `k ≥ T`.
///
/// The conditional expectation at a row is the exact two-point mixture
/// `λ_z V(A_c x) + (1-λ_z) V(A_o x) + Tr(QΞ)` at the realized `z`. The
/// one-sample empirical estimate is reported alongside.
pub fn lyapunov_report(
    trajectories: &[Trajectory],
    plants: &[PlantModel],
    coupling: &CouplingTable,
    transient: usize,
    burn_in: usize,
) -> LyapunovReport {
    let reports = plants
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let floor = p.noise_floor();
            let mut checked = 0;
            let mut violations = 0;
            let mut first_violation = None;
            let mut worst_margin: Option<f64> = None;
            let mut excess = Vec::new();
            let mut long_run = Vec::new();
            let mut success: BTreeMap<usize, SuccessCount> = BTreeMap::new();
            for t in trajectories {
                for pair in t.steps.windows(2) {
                    let (row, next) = (&pair[0], &pair[1]);
                    if let Some(lambda) = &row.lambda {
                        let c = success.entry(row.z).or_insert(SuccessCount {
                            trials: 0,
                            successes: 0,
                            expected: coupling.lambda(i, row.z),
                        });
                        c.trials += 1;
                        c.successes += usize::from(lambda[i]);
                    }
                    if row.k < transient {
                        continue;
                    }
                    let lz = coupling.lambda(i, row.z);
                    let x = &row.x[i];
                    let expected = lz * p.lyapunov(&(&p.a_closed * x))
                        + (1.0 - lz) * p.lyapunov(&(&p.a_open * x))
                        + floor;
                    let bound = p.rho * row.v[i] + floor;
                    let margin = bound - expected;
                    checked += 1;
                    worst_margin = Some(worst_margin.map_or(margin, |w| w.min(margin)));
                    if margin < -ANALYTIC_TOL * bound.abs().max(1.0) {
                        violations += 1;
                        first_violation.get_or_insert(Violation {
                            replication: t.replication,
                            initial_beta: t.initial_beta,
                            k: row.k,
                            z: row.z,
                            excess: -margin,
                        });
                    }
                    excess.push(next.v[i] - p.rho * row.v[i] - floor);
                }
                let tail: Vec<f64> =
                    t.steps.iter().filter(|s| s.k >= burn_in.max(transient)).map(|s| s.v[i]).collect();
                if !tail.is_empty() {
                    long_run.push(tail.iter().sum::<f64>() / tail.len() as f64);
                }
            }
            let long_run = mean_se(&long_run);
            let steady_bound = floor / (1.0 - p.rho);
            PlantLyapunov {
                plant: i,
                rho: p.rho,
                noise_floor: floor,
                steady_bound,
                checked,
                violations,
                first_violation,
                worst_margin,
                empirical_excess: mean_se(&excess),
                long_run,
                long_run_ok: long_run.is_none_or(|(m, se)| m <= steady_bound + 3.0 * se),
                success,
            }
        })
        .collect();
    LyapunovReport {
        transient,
        plants: reports,
    }
}

/// `V̄_i(k)`: mean Lyapunov value over all trajectories, per plant and step.
pub fn mean_curves(trajectories: &[Trajectory], plants: usize) -> Vec<Vec<f64>> {
    let len = trajectories.iter().map(|t| t.steps.len()).max().unwrap_or(0);
    let mut sums = vec![vec![0.0; len]; plants];
    let mut counts = vec![0usize; len];
    for t in trajectories {
        for s in &t.steps {
            counts[s.k] += 1;
            for (i, v) in s.v.iter().enumerate() {
                sums[i][s.k] += v;
            }
        }
    }
    for row in &mut sums {
        for (v, &c) in row.iter_mut().zip(&counts) {
            *v /= c.max(1) as f64;
        }
    }
    sums
}

/// Column order of `traces.csv`.
pub const TRACE_COLUMNS: [&str; 11] = [
    "replication",
    "initial_beta",
    "k",
    "beta",
    "u",
    "z",
    "plant",
    "lambda",
    "lyapunov",
    "lyapunov_mean",
    "state",
];

/// Column order of `mas_paths.csv`.
pub const PATH_COLUMNS: [&str; 5] = ["initial_beta", "k", "beta", "u", "z"];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Internal(format!("csv writer on {}: {other:?}", path.display())),
    }
}

/// Writes `traces.csv` (one row per replication, step and plant) and
/// `mas_paths.csv` (the network path of the first replication per initial
/// state). `lyapunov_mean` averages over replications sharing `β_0` and `k`;
/// `lambda` is empty on the final row.
pub fn export_traces(trajectories: &[Trajectory], plants: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut means: BTreeMap<(usize, usize), (Vec<f64>, usize)> = BTreeMap::new();
    for t in trajectories {
        for s in &t.steps {
            let e = means.entry((t.initial_beta, s.k)).or_insert((vec![0.0; plants], 0));
            for (acc, v) in e.0.iter_mut().zip(&s.v) {
                *acc += v;
            }
            e.1 += 1;
        }
    }

    let traces = dir.join("traces.csv");
    let mut w = csv::Writer::from_path(&traces).map_err(|e| csv_err(&traces, e))?;
    w.write_record(TRACE_COLUMNS).map_err(|e| csv_err(&traces, e))?;
    for t in trajectories {
        for s in &t.steps {
            let (sum, n) = &means[&(t.initial_beta, s.k)];
            for i in 0..plants {
                let lambda = s.lambda.as_ref().map_or(String::new(), |l| u8::from(l[i]).to_string());
                let state: Vec<String> = s.x[i].iter().map(|v| v.to_string()).collect();
                w.write_record([
                    t.replication.to_string(),
                    t.initial_beta.to_string(),
                    s.k.to_string(),
                    s.beta.to_string(),
                    s.u.to_string(),
                    s.z.to_string(),
                    (i + 1).to_string(),
                    lambda,
                    s.v[i].to_string(),
                    (sum[i] / *n as f64).to_string(),
                    state.join(";"),
                ])
                .map_err(|e| csv_err(&traces, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&traces, e))?;

    let paths = dir.join("mas_paths.csv");
    let mut w = csv::Writer::from_path(&paths).map_err(|e| csv_err(&paths, e))?;
    w.write_record(PATH_COLUMNS).map_err(|e| csv_err(&paths, e))?;
    for t in trajectories.iter().filter(|t| t.replication == 0) {
        for s in &t.steps {
            w.write_record([t.initial_beta, s.k, s.beta, s.u, s.z].map(|v| v.to_string()))
                .map_err(|e| csv_err(&paths, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&paths, e))?;
    Ok(vec![traces, paths])
}

/// Plots each labelled set of `V̄_i(k)` curves as SVG polylines, one panel
/// per plant.
pub fn write_mean_plot(path: &Path, series: &[(&str, Vec<Vec<f64>>)]) -> Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 220.0;
    const PAD: f64 = 40.0;
    const COLOURS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let plants = series.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        H * plants as f64
    );
    for i in 0..plants {
        let y0 = H * i as f64;
        let curves: Vec<(&str, &Vec<f64>)> =
            series.iter().filter_map(|(l, c)| c.get(i).map(|v| (*l, v))).collect();
        let kmax = curves.iter().map(|(_, v)| v.len()).max().unwrap_or(1).max(2) - 1;
        let vmax = curves
            .iter()
            .flat_map(|(_, v)| v.iter().copied())
            .filter(|v| v.is_finite())
            .fold(1e-12, f64::max);
        svg.push_str(&format!(
            "<rect x=\"{PAD}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n",
            y0 + 10.0,
            W - 2.0 * PAD,
            H - PAD - 10.0
        ));
        svg.push_str(&format!(
            "<text x=\"{PAD}\" y=\"{}\">plant {} mean V(k), max {:.3}, k = 0..{kmax}</text>\n",
            y0 + H - 12.0,
            i + 1,
            vmax
        ));
        for (c, (label, v)) in curves.iter().enumerate() {
            let pts: Vec<String> = v
                .iter()
                .enumerate()
                .map(|(k, val)| {
                    let px = PAD + (W - 2.0 * PAD) * k as f64 / kmax as f64;
                    let py = y0 + 10.0 + (H - PAD - 10.0) * (1.0 - val / vmax);
                    format!("{px:.1},{py:.1}")
                })
                .collect();
            let colour = COLOURS[c % COLOURS.len()];
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{colour}\" points=\"{}\"/>\n",
                pts.join(" ")
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" fill=\"{colour}\">{label}</text>\n",
                W - PAD - 90.0,
                y0 + 24.0 + 12.0 * c as f64
            ));
        }
    }
    svg.push_str("</svg>\n");
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(svg.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn single_state() -> (TransitionMatrix, LogicalMatrix, Constraints) {
        let f = TransitionMatrix::new(LogicalMatrix::identity(1), 1).unwrap();
        (f, LogicalMatrix::identity(1), Constraints::unconstrained(1, 1))
    }

    fn config(horizon: usize, replications: usize, x0: f64) -> SimConfig {
        SimConfig {
            horizon,
            replications,
            seed: 7,
            initial_states: vec![1],
            plant_initial: vec![PlantInit::Fixed(DVector::from_element(1, x0))],
            transient: 0,
            burn_in: 0,
        }
    }

    #[test]
    fn noiseless_success_contracts_exactly() {
        let (f, law, c) = single_state();
        let plant = PlantModel::new(scalar(0.4), scalar(1.1), scalar(1.0), 0.75, scalar(0.0)).unwrap();
        let coupling = CouplingTable::new(vec![vec![1.0]]).unwrap();
        let plants = [plant];
        let sys = ClosedLoop {
            transition: &f,
            law: &law,
            constraints: &c,
            plants: &plants,
            coupling: &coupling,
        };
        let t = simulate_closed_loop(&sys, &config(20, 1, 3.0)).unwrap();
        let mut expected = 3.0;
        for s in &t[0].steps {
            assert_eq!(s.x[0][0], expected);
            expected *= 0.4;
        }
        assert!(t[0].steps[..20].iter().all(|s| s.lambda.as_deref() == Some(&[true][..])));
    }

    #[test]
    fn frozen_profile_success_rate() {
        let (f, law, c) = single_state();
        let plant = PlantModel::new(scalar(0.4), scalar(1.1), scalar(1.0), 0.75, scalar(1.0)).unwrap();
        let coupling = CouplingTable::new(vec![vec![0.5]]).unwrap();
        let plants = [plant];
        let sys = ClosedLoop {
            transition: &f,
            law: &law,
            constraints: &c,
            plants: &plants,
            coupling: &coupling,
        };
        let t = simulate_closed_loop(&sys, &config(100_000, 1, 0.0)).unwrap();
        let report = lyapunov_report(&t, &plants, &coupling, 0, 0);
        let count = report.plants[0].success[&1];
        assert_eq!(count.trials, 100_000);
        assert!((count.rate() - 0.5).abs() <= 0.01);
        assert!(count.within_three_sigma());
    }

    #[test]
    fn violations_when_rate_is_too_fast() {
        let (f, law, c) = single_state();
        // threshold (1.21 - 0.3) / 1.05 ≈ 0.87 exceeds λ = 0.5
        let plant = PlantModel::new(scalar(0.4), scalar(1.1), scalar(1.0), 0.3, scalar(1.0)).unwrap();
        let coupling = CouplingTable::new(vec![vec![0.5]]).unwrap();
        let plants = [plant];
        let sys = ClosedLoop {
            transition: &f,
            law: &law,
            constraints: &c,
            plants: &plants,
            coupling: &coupling,
        };
        let t = simulate_closed_loop(&sys, &config(30, 3, 1.0)).unwrap();
        let report = lyapunov_report(&t, &plants, &coupling, 0, 0);
        assert!(report.violations() > 0);
        assert!(!report.passed());
        assert!(report.plants[0].worst_margin.unwrap() < 0.0);
    }

    fn paper_like() -> (TransitionMatrix, LogicalMatrix, Constraints, Vec<PlantModel>, CouplingTable) {
        let f = TransitionMatrix::new(
            "δ_9[1 7 3 5 2 8 2 6 1 3 9 8 4 1 7 1 5 2 6 6 5 1 3 9 4 4 1]".parse().unwrap(),
            3,
        )
        .unwrap();
        let law: LogicalMatrix = "δ_3[2 1 1 1 3 2 2 2 3]".parse().unwrap();
        let c = Constraints::new(9, 3, 1..=9, |b| if b <= 4 { [1, 2].into() } else { [2, 3].into() })
            .unwrap();
        let plant = PlantModel::new(scalar(0.4), scalar(1.1), scalar(1.0), 0.75, scalar(1.0)).unwrap();
        let mut row = vec![0.0; 27];
        row[2] = 0.53;
        let coupling = CouplingTable::new(vec![row]).unwrap();
        (f, law, c, vec![plant], coupling)
    }

    #[test]
    fn network_path_is_absorbed() {
        let (f, law, c, plants, coupling) = paper_like();
        let sys = ClosedLoop {
            transition: &f,
            law: &law,
            constraints: &c,
            plants: &plants,
            coupling: &coupling,
        };
        let mut cfg = config(6, 1, 0.0);
        cfg.initial_states = vec![9];
        let t = simulate_closed_loop(&sys, &cfg).unwrap();
        let betas: Vec<usize> = t[0].steps.iter().map(|s| s.beta).collect();
        assert_eq!(betas, vec![9, 1, 3, 3, 3, 3, 3]);
        let zs: Vec<usize> = t[0].steps.iter().map(|s| s.z).collect();
        assert_eq!(&zs[..3], &[27, 10, 3]);
    }

    #[test]
    fn inadmissible_law_aborts() {
        let (f, _, c, plants, coupling) = paper_like();
        // u1 is not allowed at β5
        let law: LogicalMatrix = "δ_3[1 1 1 1 1 1 1 1 1]".parse().unwrap();
        let sys = ClosedLoop {
            transition: &f,
            law: &law,
            constraints: &c,
            plants: &plants,
            coupling: &coupling,
        };
        let mut cfg = config(4, 1, 0.0);
        cfg.initial_states = vec![5];
        let err = simulate_closed_loop(&sys, &cfg).unwrap_err();
        assert!(matches!(err, Error::Inadmissible { z: 5, step: 0, initial: 5 }));
    }

    #[test]
    fn reproducible_and_independent_of_replication_count() {
        let (f, law, c, plants, coupling) = paper_like();
        let sys = ClosedLoop {
            transition: &f,
            law: &law,
            constraints: &c,
            plants: &plants,
            coupling: &coupling,
        };
        let noise = GaussianNoise::new(&plants);
        let mut cfg = config(15, 4, 1.0);
        cfg.initial_states = vec![2, 9];
        let a = simulate_sequential(&sys, &cfg, &noise).unwrap();
        let b = simulate_closed_loop(&sys, &cfg).unwrap();
        assert_eq!(a, b);
        cfg.replications = 1;
        let c1 = simulate_sequential(&sys, &cfg, &noise).unwrap();
        assert_eq!(c1[0], a[0]);
        assert_eq!(c1[1], a[4]);
        cfg.seed = 8;
        assert_ne!(simulate_sequential(&sys, &cfg, &noise).unwrap()[0], a[0]);
    }

    #[test]
    fn gaussian_noise_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let s = psd_factor(&cov);
        assert!((&s * s.transpose() - &cov).amax() < 1e-12);
        let mut rng = job_rng(3, 1, 0);
        let n = 40_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let w = gaussian(&s, &mut rng);
            acc += &w * w.transpose();
        }
        acc /= n as f64;
        assert!((acc - cov).amax() < 0.06);
    }

    #[test]
    fn config_validation() {
        let (_, _, c, plants, _) = paper_like();
        let mut cfg = config(0, 1, 0.0);
        assert!(cfg.validate(&plants, &c).is_err());
        cfg.horizon = 3;
        cfg.replications = 0;
        assert!(cfg.validate(&plants, &c).is_err());
        cfg.replications = 1;
        cfg.initial_states = vec![10];
        assert!(cfg.validate(&plants, &c).is_err());
        cfg.initial_states = vec![1];
        assert!(cfg.validate(&plants, &c).is_ok());
    }

    #[test]
    fn export_row_counts_and_columns() {
        let (f, law, c, plants, coupling) = paper_like();
        let sys = ClosedLoop {
            transition: &f,
            law: &law,
            constraints: &c,
            plants: &plants,
            coupling: &coupling,
        };
        let t = simulate_closed_loop(&sys, &config(3, 1, 1.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = export_traces(&t, 1, dir.path()).unwrap();
        let mut r = csv::Reader::from_path(&files[0]).unwrap();
        assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), TRACE_COLUMNS);
        let rows: Vec<csv::StringRecord> = r.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 4);
        assert_eq!(&rows[3][7], "");
        let plot = dir.path().join("mean.svg");
        write_mean_plot(&plot, &[("law", mean_curves(&t, 1))]).unwrap();
        assert!(fs::read_to_string(plot).unwrap().contains("<polyline"));
        assert!(export_traces(&t, 1, Path::new("/proc/nonexistent/dir")).is_err());
    }
}
