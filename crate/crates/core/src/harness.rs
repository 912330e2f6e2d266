//! Benchmark problems, Monte Carlo weak error estimation, effort counts and
//! invariant-measure averages of the postprocessed Langevin sampler.
//!
//! Every random quantity is a pure function of `(seed, parameters)`: batch
//! `b` draws from ChaCha8 stream `b` of the seed, batches run in parallel and
//! are reduced in batch order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::randvars::{enumerate_atoms, sample_into, NoiseDraw, RvFamily};
use crate::stepper::{
    langevin_postprocessed_step, step_in_place, LangevinState, SdeProblem, StepWorkspace,
    VectorField,
};
use crate::tableau::{Calculus, MethodTableau};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type ExactFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Test function `phi` and, when known, `t -> E[phi(X(t))]`.
#[derive(Clone)]
pub struct Observable {
    pub name: String,
    pub phi: ScalarFn,
    pub exact_expectation: Option<ExactFn>,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("name", &self.name)
            .field("exact", &self.exact_expectation.is_some())
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ControlKind {
    /// `p(T + sqrt(h) sum_n theta_n)` for `phi = p(arsinh x)`.
    BrownianCubic,
    /// `E[phi] exp(4 sum c~ sqrt(h) theta) / normaliser` for the fourth
    /// moment of the ten-noise problem.
    LogNormal,
}

/// An SDE with an observable, initial value and final time.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub name: String,
    pub sde: SdeProblem,
    pub observable: Observable,
    pub x0: Vec<f64>,
    pub t_end: f64,
    control: Option<ControlKind>,
}

impl Benchmark {
    pub fn new(
        name: impl Into<String>,
        sde: SdeProblem,
        observable: Observable,
        x0: Vec<f64>,
        t_end: f64,
    ) -> Self {
        Benchmark {
            name: name.into(),
            sde,
            observable,
            x0,
            t_end,
            control: None,
        }
    }

    /// `E[phi(X(T))]` when known.
    pub fn exact(&self) -> Option<f64> {
        self.observable
            .exact_expectation
            .as_ref()
            .map(|e| e(self.t_end))
    }

    pub fn has_control_variate(&self) -> bool {
        self.control.is_some()
    }
}

pub const PROBLEMS: [&str; 5] = [
    "sinh1d",
    "tennoise",
    "ou_langevin",
    "doublewell_langevin",
    "det_exponential",
];

/// `(c_p, a_p)` of the diffusion fields `c_p sqrt(x^2 + a_p)`.
pub const TENNOISE_FIELDS: [(f64, f64); 10] = [
    (1.0 / 10.0, 1.0 / 2.0),
    (1.0 / 15.0, 1.0 / 4.0),
    (1.0 / 20.0, 1.0 / 5.0),
    (1.0 / 25.0, 1.0 / 10.0),
    (1.0 / 40.0, 1.0 / 20.0),
    (1.0 / 25.0, 1.0 / 2.0),
    (1.0 / 20.0, 1.0 / 4.0),
    (1.0 / 15.0, 1.0 / 5.0),
    (1.0 / 20.0, 1.0 / 10.0),
    (1.0 / 25.0, 1.0 / 20.0),
];

/// Closed-form fourth moment of the ten-noise problem started at 1.
pub fn tennoise_fourth_moment(t: f64) -> f64 {
    4625768169.0 / 73570420483600.0
        - 2998776077847.0 / 113706563209000.0 * (731453.0 / 360000.0 * t).exp()
        + 80235120932849.0 / 78178246418000.0 * (251453.0 / 60000.0 * t).exp()
}

fn cubic(z: f64) -> f64 {
    z * z * z - 6.0 * z * z + 8.0 * z
}

fn field(f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> VectorField {
    Arc::new(f)
}

fn scalar(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

fn exact(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Option<ExactFn> {
    Some(Arc::new(f))
}

pub fn make_problem(name: &str) -> Result<Benchmark> {
    let b = match name {
        "sinh1d" => {
            let sde = SdeProblem::new(
                "sinh1d",
                1,
                Calculus::Ito,
                field(|x, o| o[0] = 0.5 * x[0] + (x[0] * x[0] + 1.0).sqrt()),
                vec![field(|x, o| o[0] = (x[0] * x[0] + 1.0).sqrt())],
            );
            let obs = Observable {
                name: "p(arsinh x)".into(),
                phi: scalar(|x| cubic(x[0].asinh())),
                exact_expectation: exact(|t| t * t * t - 3.0 * t * t + 2.0 * t),
            };
            Benchmark {
                control: Some(ControlKind::BrownianCubic),
                ..Benchmark::new(name, sde, obs, vec![0.0], 2.0)
            }
        }
        "tennoise" => {
            let diffusion = TENNOISE_FIELDS
                .iter()
                .map(|&(c, a)| field(move |x, o| o[0] = c * (x[0] * x[0] + a).sqrt()))
                .collect();
            let sde = SdeProblem::new(
                "tennoise",
                1,
                Calculus::Ito,
                field(|x, o| o[0] = x[0]),
                diffusion,
            );
            let obs = Observable {
                name: "x^4".into(),
                phi: scalar(|x| x[0].powi(4)),
                exact_expectation: exact(tennoise_fourth_moment),
            };
            Benchmark {
                control: Some(ControlKind::LogNormal),
                ..Benchmark::new(name, sde, obs, vec![1.0], 1.0)
            }
        }
        "ou_langevin" | "doublewell_langevin" => {
            let potential = if name == "ou_langevin" {
                Potential::Quadratic
            } else {
                Potential::DoubleWell
            };
            let force = potential.force();
            let sde = SdeProblem::new(
                name,
                1,
                Calculus::Ito,
                force,
                vec![field(|_, o| o[0] = std::f64::consts::SQRT_2)],
            );
            let obs = Observable {
                name: "x^2".into(),
                phi: scalar(|x| x[0] * x[0]),
                exact_expectation: match potential {
                    Potential::Quadratic => exact(|t| 1.0 - (-2.0 * t).exp()),
                    Potential::DoubleWell => None,
                },
            };
            Benchmark::new(name, sde, obs, vec![0.0], 1.0)
        }
        "det_exponential" => {
            let sde = SdeProblem::new(
                "det_exponential",
                1,
                Calculus::Ito,
                field(|x, o| o[0] = x[0]),
                vec![field(|_, o| o[0] = 0.0)],
            );
            let obs = Observable {
                name: "x".into(),
                phi: scalar(|x| x[0]),
                exact_expectation: exact(f64::exp),
            };
            Benchmark::new(name, sde, obs, vec![1.0], 1.0)
        }
        _ => {
            return Err(Error::UnknownProblem {
                name: name.into(),
                valid: PROBLEMS.iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    Ok(b)
}

// ---------------------------------------------------------------------------
// Weak error estimation

/// Monte Carlo sample layout. The control variate is off unless requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Sampling {
    pub n_batches: usize,
    pub n_per_batch: usize,
    pub control_variate: bool,
}

impl Sampling {
    pub fn new(n_batches: usize, n_per_batch: usize) -> Self {
        Sampling {
            n_batches,
            n_per_batch,
            control_variate: false,
        }
    }

    pub fn with_control_variate(mut self, on: bool) -> Self {
        self.control_variate = on;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub h: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub exact: Option<f64>,
    /// `|estimate - exact|`, NaN without an exact value.
    pub abs_error: f64,
    pub n_batches: usize,
    pub n_per_batch: usize,
    pub effort_per_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub method: String,
    pub problem: String,
    pub records: Vec<ConvergenceRecord>,
    /// Least-squares slope of `log2(abs_error)` against `log2(h)`.
    pub slope: f64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    problem: &'a str,
    h: f64,
    estimate: f64,
    stderr: f64,
    exact: Option<f64>,
    abs_error: f64,
    effort: usize,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(CsvRow {
                method: &self.method,
                problem: &self.problem,
                h: r.h,
                estimate: r.estimate,
                stderr: r.stderr,
                exact: r.exact,
                abs_error: r.abs_error,
                effort: r.effort_per_step,
            })
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Least-squares slope of `log2 y` against `log2 x`; NaN if any `y` is not
/// positive and finite or fewer than two points are given.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    if x.len() != y.len() || x.len() < 2 || y.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return f64::NAN;
    }
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.log2()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.log2()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Per-path control variate with known mean.
struct Control {
    kind: ControlKind,
    m: usize,
    t_end: f64,
    sqrt_h: f64,
    /// `lambda[n * m + p - 1]` multiplies `theta_p` at step `n`.
    lambda: Vec<f64>,
    log_norm: f64,
    mean: f64,
}

impl Control {
    fn new(b: &Benchmark, family: &RvFamily, h: f64, n_steps: usize) -> Result<Self> {
        let kind = b
            .control
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no control variate", b.name)))?;
        let mean = b.exact().ok_or_else(|| {
            Error::InvalidArgument(format!("{} has no exact expectation", b.name))
        })?;
        let m = b.sde.m;
        let sqrt_h = h.sqrt();
        let (mut lambda, mut log_norm) = (Vec::new(), 0.0);
        if kind == ControlKind::LogNormal {
            let atoms = enumerate_atoms(family, 1)?;
            for n in 0..n_steps {
                let t = n as f64 * h;
                for &(c, a) in &TENNOISE_FIELDS {
                    let l = 4.0 * sqrt_h * c * ((2.0 * t).exp() + a).sqrt() / t.exp();
                    log_norm += atoms.expectation(|d| (l * d.theta(1)).exp()).ln();
                    lambda.push(l);
                }
            }
        }
        Ok(Control {
            kind,
            m,
            t_end: b.t_end,
            sqrt_h,
            lambda,
            log_norm,
            mean,
        })
    }

    fn increment(&self, n: usize, draw: &NoiseDraw) -> f64 {
        match self.kind {
            ControlKind::BrownianCubic => self.sqrt_h * draw.theta(1),
            ControlKind::LogNormal => {
                let l = &self.lambda[n * self.m..(n + 1) * self.m];
                l.iter()
                    .enumerate()
                    .map(|(k, v)| v * draw.theta(k + 1))
                    .sum()
            }
        }
    }

    fn value(&self, acc: f64) -> f64 {
        match self.kind {
            ControlKind::BrownianCubic => cubic(self.t_end + acc),
            ControlKind::LogNormal => self.mean * (acc - self.log_norm).exp(),
        }
    }
}

/// Mean and standard error of the mean from batch means. Deviations are
/// taken from the first batch, so identical batches give exactly zero.
fn batch_statistics(means: &[f64]) -> (f64, f64) {
    let n = means.len() as f64;
    let k = means[0];
    let (s, s2) = means.iter().fold((0.0, 0.0), |(s, s2), v| {
        let d = v - k;
        (s + d, s2 + d * d)
    });
    let var = ((s2 - s * s / n) / (n - 1.0)).max(0.0);
    (k + s / n, (var / n).sqrt())
}

fn step_count(t_end: f64, h: f64) -> Result<usize> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step size {h} is not positive"
        )));
    }
    let n = (t_end / h).round();
    if n < 1.0 || (n * h - t_end).abs() > 1e-12 * t_end.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "T = {t_end} is not an integer multiple of h = {h}"
        )));
    }
    Ok(n as usize)
}

fn batch_rng(seed: u64, batch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch as u64);
    rng
}

/// Weak error estimate of `method` on `problem` at step `h`.
pub fn estimate_weak_error(
    problem: &Benchmark,
    method: &MethodTableau,
    h: f64,
    sampling: &Sampling,
    seed: u64,
) -> Result<ConvergenceRecord> {
    if sampling.n_batches < 2 || sampling.n_per_batch < 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 batches of at least 1 path, got {} x {}",
            sampling.n_batches, sampling.n_per_batch
        )));
    }
    let n_steps = step_count(problem.t_end, h)?;
    let family = RvFamily::for_method(method)?;
    // fail fast on calculus or tableau errors before spawning workers
    StepWorkspace::new(&problem.sde, method)?;
    let control = if sampling.control_variate {
        Some(Control::new(problem, &family, h, n_steps)?)
    } else {
        None
    };
    let means = (0..sampling.n_batches)
        .into_par_iter()
        .map(|b| {
            run_batch(
                problem,
                method,
                &family,
                h,
                n_steps,
                sampling.n_per_batch,
                control.as_ref(),
                batch_rng(seed, b),
                b,
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mut estimate, stderr) = batch_statistics(&means);
    if let Some(c) = &control {
        estimate += c.mean;
    }
    let exact = problem.exact();
    let abs_error = match (&control, exact) {
        // the control variate mean is the exact value, so the estimate's
        // deviation is the batch mean itself; avoids a cancellation
        (Some(_), Some(_)) => (estimate - control.as_ref().unwrap().mean).abs(),
        (_, Some(e)) => (estimate - e).abs(),
        (_, None) => f64::NAN,
    };
    Ok(ConvergenceRecord {
        h,
        estimate,
        stderr,
        exact,
        abs_error,
        n_batches: sampling.n_batches,
        n_per_batch: sampling.n_per_batch,
        effort_per_step: effort(method, problem.sde.m)?.total,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_batch(
    problem: &Benchmark,
    method: &MethodTableau,
    family: &RvFamily,
    h: f64,
    n_steps: usize,
    n_paths: usize,
    control: Option<&Control>,
    mut rng: ChaCha8Rng,
    batch: usize,
) -> Result<f64> {
    let sde = &problem.sde;
    let mut ws = StepWorkspace::new(sde, method)?;
    let mut draw = NoiseDraw::zeroed(sde.m);
    let mut x = problem.x0.clone();
    let mut sum = 0.0;
    for path in 0..n_paths {
        x.copy_from_slice(&problem.x0);
        let mut acc = 0.0;
        for n in 0..n_steps {
            sample_into(family, &mut draw, &mut rng);
            if let Some(c) = control {
                acc += c.increment(n, &draw);
            }
            step_in_place(sde, method, &mut x, h, &draw, &mut ws).map_err(|e| Error::Path {
                batch,
                path,
                source: Box::new(Error::Step {
                    step: n,
                    source: Box::new(e),
                }),
            })?;
        }
        let mut v = (problem.observable.phi)(&x);
        if let Some(c) = control {
            v -= c.value(acc);
        }
        sum += v;
    }
    Ok(sum / n_paths as f64)
}

/// One record per step size; the records use independent seeds.
pub fn run_convergence(
    problem: &Benchmark,
    method: &MethodTableau,
    h_list: &[f64],
    sampling: &Sampling,
    seed: u64,
) -> Result<ConvergenceTable> {
    if h_list.is_empty() {
        return Err(Error::InvalidArgument("empty step size list".into()));
    }
    if h_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "step sizes must be strictly decreasing".into(),
        ));
    }
    let records = h_list
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            estimate_weak_error(problem, method, h, sampling, seed.wrapping_add(k as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let hs: Vec<f64> = records.iter().map(|r| r.h).collect();
    let errs: Vec<f64> = records.iter().map(|r| r.abs_error).collect();
    Ok(ConvergenceTable {
        method: method.name.clone(),
        problem: problem.name.clone(),
        slope: loglog_slope(&hs, &errs),
        records,
    })
}

// ---------------------------------------------------------------------------
// Effort

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EffortReport {
    pub method: String,
    pub m: usize,
    /// Drift evaluations per step.
    pub n_d: usize,
    /// Diffusion evaluations per step and noise.
    pub n_s: usize,
    /// Random variables per step.
    pub n_r: usize,
    /// `n_d + m n_s + n_r`.
    pub total: usize,
}

/// Effort per step, with `n_d` and `n_s` counted on one probe step of a
/// linear problem with `m` noises.
pub fn effort(method: &MethodTableau, m: usize) -> Result<EffortReport> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    let diffusion = (0..m)
        .map(|p| {
            let s = 0.1 / (p + 1) as f64;
            field(move |x, o| o[0] = s * x[0])
        })
        .collect();
    let probe = SdeProblem::new(
        "effort probe",
        1,
        method.calculus,
        field(|x, o| o[0] = -0.5 * x[0]),
        diffusion,
    );
    let family = RvFamily::for_method(method)?;
    let mut ws = StepWorkspace::new(&probe, method)?;
    let mut draw = NoiseDraw::zeroed(m);
    sample_into(&family, &mut draw, &mut batch_rng(0, 0));
    let mut x = vec![1.0];
    step_in_place(&probe, method, &mut x, 0.01, &draw, &mut ws)?;
    let n_d = ws.counts.drift as usize;
    let n_s = ws.counts.diffusion.iter().copied().max().unwrap_or(0) as usize;
    let n_r = family.count_per_step(m);
    Ok(EffortReport {
        method: method.name.clone(),
        m,
        n_d,
        n_s,
        n_r,
        total: n_d + m * n_s + n_r,
    })
}

// ---------------------------------------------------------------------------
// Invariant measure

/// Potentials `V` for `dX = -grad V dt + sqrt(2) dW`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    /// `|x|^2 / 2`.
    Quadratic,
    /// `sum_i x_i^4 / 4 - x_i^2 / 2`.
    DoubleWell,
}

impl FromStr for Potential {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ou" | "quadratic" => Ok(Potential::Quadratic),
            "doublewell" | "double_well" => Ok(Potential::DoubleWell),
            _ => Err(Error::InvalidArgument(format!(
                "unknown potential `{s}`; valid: ou, doublewell"
            ))),
        }
    }
}

impl Potential {
    /// `F = -grad V`.
    pub fn force(self) -> VectorField {
        match self {
            Potential::Quadratic => field(|x, o| {
                for (oi, xi) in o.iter_mut().zip(x) {
                    *oi = -xi;
                }
            }),
            Potential::DoubleWell => field(|x, o| {
                for (oi, xi) in o.iter_mut().zip(x) {
                    *oi = xi - xi * xi * xi;
                }
            }),
        }
    }

    /// Stationary mean and second moment of each component.
    pub fn stationary_moments(self) -> (f64, f64) {
        match self {
            Potential::Quadratic => (0.0, 1.0),
            Potential::DoubleWell => {
                let v = |x: f64| x.powi(4) / 4.0 - x * x / 2.0;
                let z = simpson(|x| (-v(x)).exp(), -10.0, 10.0, 20_000);
                let s = simpson(|x| x * x * (-v(x)).exp(), -10.0, 10.0, 20_000);
                (0.0, s / z)
            }
        }
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// Sampler problem in dimension `d`: field 0 is `F`, field `p` is column `p`
/// of `D = I`.
pub fn langevin_problem(potential: Potential, d: usize) -> SdeProblem {
    let columns = (0..d)
        .map(|p| {
            field(move |_, o| {
                o.fill(0.0);
                o[p] = 1.0;
            })
        })
        .collect();
    SdeProblem::new(
        format!("{potential:?} langevin"),
        d,
        Calculus::Ito,
        potential.force(),
        columns,
    )
}

pub const INVARIANT_BLOCKS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub h: f64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Time average of each component of `Xbar`.
    pub mean: Vec<f64>,
    pub mean_stderr: Vec<f64>,
    /// Time average of each squared component.
    pub second_moment: Vec<f64>,
    pub second_moment_stderr: Vec<f64>,
    /// `second_moment - mean^2`.
    pub variance: Vec<f64>,
    pub exact_mean: Option<f64>,
    pub exact_second_moment: Option<f64>,
    /// Largest `|variance_i - exact variance|`.
    pub variance_error: Option<f64>,
}

/// Time averages of the postprocessed output along one chain of
/// `n_steps` steps started at the origin, discarding `burn_in` outputs.
pub fn run_invariant_measure(
    potential: Potential,
    d: usize,
    h: f64,
    n_steps: usize,
    burn_in: usize,
    seed: u64,
) -> Result<InvariantReport> {
    let problem = langevin_problem(potential, d);
    let mut report = run_langevin_averages(&problem, &vec![0.0; d], h, n_steps, burn_in, seed)?;
    let (mean, second) = potential.stationary_moments();
    let var = second - mean * mean;
    report.exact_mean = Some(mean);
    report.exact_second_moment = Some(second);
    report.variance_error = Some(
        report
            .variance
            .iter()
            .fold(0.0f64, |e, v| e.max((v - var).abs())),
    );
    Ok(report)
}

/// Time averages for an arbitrary sampler problem (field 0 is `F`, field
/// `p` column `p` of `D`).
pub fn run_langevin_averages(
    problem: &SdeProblem,
    x0: &[f64],
    h: f64,
    n_steps: usize,
    burn_in: usize,
    seed: u64,
) -> Result<InvariantReport> {
    let samples = n_steps.checked_sub(burn_in).unwrap_or(0);
    if samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "need n_steps > burn_in + 1, got {n_steps} and {burn_in}"
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step size {h} is not positive"
        )));
    }
    if x0.len() != problem.d {
        return Err(Error::InvalidArgument(format!(
            "x0 has length {}, problem has d = {}",
            x0.len(),
            problem.d
        )));
    }
    let d = problem.d;
    let family = RvFamily::new(Calculus::Ito, 0.5)?;
    let mut rng = batch_rng(seed, 0);
    let mut draw = NoiseDraw::zeroed(problem.m);
    let mut state = LangevinState::new(problem, x0);
    let blocks = INVARIANT_BLOCKS.min(samples);
    let mut s1 = vec![0.0; blocks * d];
    let mut s2 = vec![0.0; blocks * d];
    let mut sizes = vec![0usize; blocks];
    for n in 0..n_steps {
        sample_into(&family, &mut draw, &mut rng);
        langevin_postprocessed_step(problem, &mut state, h, &draw).map_err(|e| Error::Step {
            step: n,
            source: Box::new(e),
        })?;
        if state.xbar.iter().chain(&state.x).any(|v| !v.is_finite()) {
            return Err(Error::Step {
                step: n,
                source: Box::new(Error::NonFinite(format!("{} with h = {h}", problem.label))),
            });
        }
        if n >= burn_in {
            let b = (n - burn_in) * blocks / samples;
            sizes[b] += 1;
            for (i, v) in state.xbar.iter().enumerate() {
                s1[b * d + i] += v;
                s2[b * d + i] += v * v;
            }
        }
    }
    let component = |sums: &[f64], i: usize| -> (f64, f64) {
        let total: f64 = (0..blocks).map(|b| sums[b * d + i]).sum();
        let block_means: Vec<f64> = (0..blocks)
            .map(|b| sums[b * d + i] / sizes[b] as f64)
            .collect();
        (total / samples as f64, batch_statistics(&block_means).1)
    };
    let (mut mean, mut mean_stderr, mut second_moment, mut second_moment_stderr) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..d {
        let (m1, e1) = component(&s1, i);
        let (m2, e2) = component(&s2, i);
        mean.push(m1);
        mean_stderr.push(e1);
        second_moment.push(m2);
        second_moment_stderr.push(e2);
    }
    let variance = mean
        .iter()
        .zip(&second_moment)
        .map(|(a, b)| b - a * a)
        .collect();
    Ok(InvariantReport {
        h,
        n_steps,
        burn_in,
        seed,
        mean,
        mean_stderr,
        second_moment,
        second_moment_stderr,
        variance,
        exact_mean: None,
        exact_second_moment: None,
        variance_error: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tableau::registry_get;

    /// Fourth moment from the moment equations `m2' = (2 + s) m2 + A`,
    /// `m4' = (4 + 6 s) m4 + 6 A m2`, integrated with classical RK4.
    fn moment_ode_fourth(t: f64) -> f64 {
        let s: f64 = TENNOISE_FIELDS.iter().map(|(c, _)| c * c).sum();
        let a: f64 = TENNOISE_FIELDS.iter().map(|(c, a)| c * c * a).sum();
        let rhs = |y: [f64; 2]| {
            [
                (2.0 + s) * y[0] + a,
                (4.0 + 6.0 * s) * y[1] + 6.0 * a * y[0],
            ]
        };
        let n = 4000;
        let h = t / n as f64;
        let mut y = [1.0, 1.0];
        for _ in 0..n {
            let k1 = rhs(y);
            let k2 = rhs([y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
            let k3 = rhs([y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
            let k4 = rhs([y[0] + h * k3[0], y[1] + h * k3[1]]);
            for i in 0..2 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        y[1]
    }

    #[test]
    fn tennoise_closed_form_matches_moment_equations() {
        for t in [0.0, 0.25, 0.5, 1.0] {
            let a = tennoise_fourth_moment(t);
            let b = moment_ode_fourth(t);
            assert!((a - b).abs() < 1e-9 * b, "t = {t}: {a} vs {b}");
        }
    }

    #[test]
    fn exact_values() {
        assert_eq!(make_problem("sinh1d").unwrap().exact(), Some(0.0));
        let e = make_problem("det_exponential").unwrap().exact().unwrap();
        assert!((e - std::f64::consts::E).abs() < 1e-15);
        let t = make_problem("tennoise").unwrap().exact().unwrap();
        assert!((t - moment_ode_fourth(1.0)).abs() < 1e-9);
        assert!(make_problem("doublewell_langevin")
            .unwrap()
            .exact()
            .is_none());
    }

    #[test]
    fn unknown_problem() {
        match make_problem("vanderpol") {
            Err(Error::UnknownProblem { valid, .. }) => assert_eq!(valid.len(), 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sinh_fields_follow_the_exact_solution() {
        // X = sinh(Y), dY = dt + dW; check the Ito drift and diffusion
        let b = make_problem("sinh1d").unwrap();
        for y in [-1.3f64, 0.0, 0.7, 2.1] {
            let x = [y.sinh()];
            let (mut f, mut g) = ([0.0], [0.0]);
            b.sde.field(0)(&x, &mut f);
            b.sde.field(1)(&x, &mut g);
            assert!((f[0] - (y.cosh() + 0.5 * y.sinh())).abs() < 1e-12);
            assert!((g[0] - y.cosh()).abs() < 1e-12);
            assert!(((b.observable.phi)(&x) - cubic(y)).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_problem_has_zero_stderr() {
        let b = make_problem("det_exponential").unwrap();
        let t = registry_get("BDK2").unwrap();
        let r = estimate_weak_error(&b, &t, 0.25, &Sampling::new(4, 3), 7).unwrap();
        assert_eq!(r.stderr, 0.0);
        assert!(r.abs_error < 5e-3);
    }

    #[test]
    fn estimates_are_reproducible() {
        let b = make_problem("sinh1d").unwrap();
        let t = registry_get("BDK1").unwrap();
        let s = Sampling::new(8, 200);
        let r1 = estimate_weak_error(&b, &t, 0.25, &s, 99).unwrap();
        let r2 = estimate_weak_error(&b, &t, 0.25, &s, 99).unwrap();
        assert_eq!(r1.estimate.to_bits(), r2.estimate.to_bits());
        assert_eq!(r1.stderr.to_bits(), r2.stderr.to_bits());
        let r3 = estimate_weak_error(&b, &t, 0.25, &s, 100).unwrap();
        assert_ne!(r1.estimate.to_bits(), r3.estimate.to_bits());
    }

    #[test]
    fn reproducible_across_thread_pools() {
        let b = make_problem("tennoise").unwrap();
        let t = registry_get("BDK2").unwrap();
        let s = Sampling::new(6, 50);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_weak_error(&b, &t, 0.5, &s, 3).unwrap())
        };
        let (a, c) = (run(1), run(4));
        assert_eq!(a.estimate.to_bits(), c.estimate.to_bits());
    }

    #[test]
    fn control_variate_has_the_right_mean() {
        // with the method replaced by the increments themselves the
        // corrected estimator is unbiased; check the control means exactly
        let b = make_problem("sinh1d").unwrap();
        let fam = RvFamily::new(Calculus::Ito, 0.5).unwrap();
        let c = Control::new(&b, &fam, 1.0, 2).unwrap();
        let atoms = enumerate_atoms(&fam, 1).unwrap();
        let mut e = 0.0;
        for (p1, d1) in &atoms.atoms {
            for (p2, d2) in &atoms.atoms {
                e += p1 * p2 * c.value(c.increment(0, d1) + c.increment(1, d2));
            }
        }
        assert!((e - c.mean).abs() < 1e-12, "{e}");

        let b = make_problem("tennoise").unwrap();
        let c = Control::new(&b, &fam, 0.5, 2).unwrap();
        // independence across noises and steps: the normaliser factorises
        let atoms = enumerate_atoms(&fam, 1).unwrap();
        let mut log_e = 0.0;
        for l in &c.lambda {
            log_e += atoms.expectation(|d| (l * d.theta(1)).exp()).ln();
        }
        assert!((log_e - c.log_norm).abs() < 1e-14);
    }

    #[test]
    fn control_variate_agrees_with_plain_estimate() {
        let b = make_problem("sinh1d").unwrap();
        let t = registry_get("BDK1").unwrap();
        let s = Sampling::new(10, 2000);
        let plain = estimate_weak_error(&b, &t, 0.125, &s, 5).unwrap();
        let cv = estimate_weak_error(&b, &t, 0.125, &s.with_control_variate(true), 5).unwrap();
        assert!(cv.stderr < plain.stderr / 5.0);
        let gap = (plain.estimate - cv.estimate).abs();
        assert!(gap < 4.0 * (plain.stderr + cv.stderr), "{gap}");
    }

    #[test]
    fn control_variate_requires_support() {
        let b = make_problem("det_exponential").unwrap();
        let t = registry_get("BDK1").unwrap();
        let s = Sampling::new(2, 1).with_control_variate(true);
        assert!(estimate_weak_error(&b, &t, 0.5, &s, 0).is_err());
    }

    #[test]
    fn bad_sampling_is_rejected() {
        let b = make_problem("sinh1d").unwrap();
        let t = registry_get("BDK1").unwrap();
        assert!(estimate_weak_error(&b, &t, 0.5, &Sampling::new(1, 10), 0).is_err());
        assert!(estimate_weak_error(&b, &t, 0.3, &Sampling::new(2, 10), 0).is_err());
        let strat = registry_get("StratoExplicit24").unwrap();
        assert!(matches!(
            estimate_weak_error(&b, &strat, 0.5, &Sampling::new(2, 10), 0),
            Err(Error::CalculusMismatch { .. })
        ));
        assert!(run_convergence(&b, &t, &[0.25, 0.5], &Sampling::new(2, 1), 0).is_err());
    }

    #[test]
    fn slope_of_exact_power_law() {
        let h = [0.5, 0.25, 0.125];
        let e: Vec<f64> = h.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((loglog_slope(&h, &e) - 2.0).abs() < 1e-12);
        assert!(loglog_slope(&h, &[1.0, 0.0, 1.0]).is_nan());
    }

    #[test]
    fn convergence_table_output() {
        let b = make_problem("det_exponential").unwrap();
        let t = registry_get("BDK2").unwrap();
        let table = run_convergence(&b, &t, &[0.5, 0.25, 0.125], &Sampling::new(2, 1), 1).unwrap();
        assert!((table.slope - 3.0).abs() < 0.3, "{}", table.slope);
        let csv = table.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,problem,h,estimate,stderr,exact,abs_error,effort"
        );
        assert_eq!(lines.count(), 3);
        let v: serde_json::Value = serde_json::from_str(&table.to_json().unwrap()).unwrap();
        assert_eq!(v["records"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn effort_counts() {
        let e = |name: &str, m| effort(&registry_get(name).unwrap(), m).unwrap();
        let r = e("BDK1", 1);
        assert_eq!((r.n_d, r.n_s, r.n_r, r.total), (2, 2, 1, 5));
        assert_eq!(e("BDK2", 10).total, 34);
        assert_eq!(e("BDK3", 1).total, 7);
        assert_eq!(e("EulerMaruyama", 3).n_d, 1);
        assert!(effort(&registry_get("BDK1").unwrap(), 0).is_err());
    }

    #[test]
    fn frozen_sampler_keeps_its_start() {
        let zero = field(|_, o| o.fill(0.0));
        let p = SdeProblem::new("frozen", 2, Calculus::Ito, zero.clone(), vec![zero]);
        let r = run_langevin_averages(&p, &[0.3, -1.5], 0.1, 500, 100, 1).unwrap();
        assert!((r.mean[0] - 0.3).abs() < 1e-14);
        assert_eq!(r.mean[1], -1.5);
        assert!((r.second_moment[0] - 0.09).abs() < 1e-15);
        assert!((r.second_moment[1] - 2.25).abs() < 1e-15);
        assert_eq!(r.mean_stderr, vec![0.0, 0.0]);
    }

    #[test]
    fn ou_sampler_variance() {
        let r = run_invariant_measure(Potential::Quadratic, 1, 0.5, 400_000, 1000, 11).unwrap();
        assert!(r.variance_error.unwrap() < 0.03, "{r:?}");
        assert!(r.mean[0].abs() < 5.0 * r.mean_stderr[0] + 1e-3);
        let again = run_invariant_measure(Potential::Quadratic, 1, 0.5, 400_000, 1000, 11).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn doublewell_moments_by_quadrature() {
        // independent check: trapezoid rule on a wider, finer grid
        let v = |x: f64| x.powi(4) / 4.0 - x * x / 2.0;
        let n = 200_000;
        let (a, b) = (-12.0, 12.0);
        let h = (b - a) / n as f64;
        let (mut z, mut s) = (0.0, 0.0);
        for i in 0..=n {
            let x = a + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            z += w * (-v(x)).exp();
            s += w * x * x * (-v(x)).exp();
        }
        let (_, second) = Potential::DoubleWell.stationary_moments();
        assert!((second - s / z).abs() < 1e-10, "{second} vs {}", s / z);
    }

    #[test]
    fn sampler_reports_step_of_blow_up() {
        let p = SdeProblem::new(
            "explosive",
            1,
            Calculus::Ito,
            field(|x, o| o[0] = x[0] * x[0] * x[0]),
            vec![field(|_, o| o[0] = 1.0)],
        );
        match run_langevin_averages(&p, &[1.0], 1.0, 1000, 10, 0) {
            Err(Error::Step { .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn potential_names() {
        assert_eq!("ou".parse::<Potential>().unwrap(), Potential::Quadratic);
        assert_eq!(
            "doublewell".parse::<Potential>().unwrap(),
            Potential::DoubleWell
        );
        assert!("cubic".parse::<Potential>().is_err());
    }
}
