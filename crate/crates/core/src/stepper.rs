//! One step and whole paths of a stochastic Runge-Kutta method, and the
//! postprocessed Langevin sampler.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::randvars::{sample_into, NoiseDraw, RvFamily};
use crate::tableau::{evaluation_order, validate, Calculus, MethodTableau, StageBlock, StageRef};

/// `f(x, out)` writes the field value at `x` into `out`.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

pub const SOLVER_TOLERANCE: f64 = 1e-13;
pub const SOLVER_MAX_ITERATIONS: usize = 200;

/// `dX = f0(X) dt + sum_p fp(X) dW_p` in the given calculus.
#[derive(Clone)]
pub struct SdeProblem {
    pub label: String,
    pub d: usize,
    pub m: usize,
    pub calculus: Calculus,
    fields: Vec<VectorField>,
}

impl fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem")
            .field("label", &self.label)
            .field("d", &self.d)
            .field("m", &self.m)
            .field("calculus", &self.calculus)
            .finish_non_exhaustive()
    }
}

impl SdeProblem {
    pub fn new(
        label: impl Into<String>,
        d: usize,
        calculus: Calculus,
        drift: VectorField,
        diffusion: Vec<VectorField>,
    ) -> Self {
        let m = diffusion.len();
        let mut fields = Vec::with_capacity(m + 1);
        fields.push(drift);
        fields.extend(diffusion);
        SdeProblem {
            label: label.into(),
            d,
            m,
            calculus,
            fields,
        }
    }

    /// Field `p`, with `0` the drift.
    pub fn field(&self, p: usize) -> &VectorField {
        &self.fields[p]
    }
}

/// Field evaluations since the last reset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub drift: u64,
    /// One counter per noise.
    pub diffusion: Vec<u64>,
}

impl EvalCounts {
    fn new(m: usize) -> Self {
        EvalCounts {
            drift: 0,
            diffusion: vec![0; m],
        }
    }
}

/// Stage buffers for one method on one problem. Reuse across steps of a
/// path; concurrent paths need their own workspace.
pub struct StepWorkspace {
    d: usize,
    m: usize,
    s1: usize,
    s2: usize,
    blocks: Vec<StageBlock>,
    drift_stages: Vec<f64>,
    stoch_stages: Vec<f64>,
    drift_f: Vec<f64>,
    stoch_f: Vec<f64>,
    scratch: Vec<f64>,
    start: Vec<f64>,
    pub counts: EvalCounts,
}

impl StepWorkspace {
    pub fn new(problem: &SdeProblem, t: &MethodTableau) -> Result<Self> {
        if problem.calculus != t.calculus {
            return Err(Error::CalculusMismatch {
                method: t.calculus,
                problem: problem.calculus,
            });
        }
        let report = validate(t);
        if !report.ok {
            return Err(Error::Validation(
                report.errors().map(|f| f.message.clone()).collect(),
            ));
        }
        let (d, m) = (problem.d, problem.m);
        Ok(StepWorkspace {
            d,
            m,
            s1: t.s1,
            s2: t.s2,
            blocks: evaluation_order(t),
            drift_stages: vec![0.0; t.s1 * d],
            stoch_stages: vec![0.0; t.s2 * m * d],
            drift_f: vec![0.0; t.s1 * d],
            stoch_f: vec![0.0; t.s2 * m * d],
            scratch: vec![0.0; d],
            start: vec![0.0; d],
            counts: EvalCounts::new(m),
        })
    }

    pub fn reset_counts(&mut self) {
        self.counts = EvalCounts::new(self.m);
    }

    /// Drift stage values `H_i^0` of the last step.
    pub fn drift_stage(&self, i: usize) -> &[f64] {
        &self.drift_stages[i * self.d..(i + 1) * self.d]
    }

    /// Stochastic stage value `H_j^p` of the last step (`p >= 1`).
    pub fn stoch_stage(&self, j: usize, p: usize) -> &[f64] {
        let k = (j * self.m + p - 1) * self.d;
        &self.stoch_stages[k..k + self.d]
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn max_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct StepContext<'a> {
    problem: &'a SdeProblem,
    t: &'a MethodTableau,
    x: &'a [f64],
    h: f64,
    sqrt_h: f64,
    draw: &'a NoiseDraw,
}

impl StepContext<'_> {
    /// Right-hand side of the stage equation for `H_i^0` into `out`.
    fn drift_stage_value(&self, ws: &StepWorkspace, i: usize, out: &mut [f64]) {
        let (d, m) = (ws.d, ws.m);
        out.copy_from_slice(self.x);
        for k in 0..ws.s1 {
            let a = self.t.a0[i][k];
            if a != 0.0 {
                axpy(out, self.h * a, &ws.drift_f[k * d..(k + 1) * d]);
            }
        }
        for j in 0..ws.s2 {
            let b = self.t.b0[i][j];
            if b == 0.0 {
                continue;
            }
            for q in 1..=m {
                let w = self.sqrt_h * b * self.draw.big_theta(0, q);
                let k = (j * m + q - 1) * d;
                axpy(out, w, &ws.stoch_f[k..k + d]);
            }
        }
    }

    /// Right-hand side of the stage equation for `H_j^p` into `out`.
    fn stoch_stage_value(&self, ws: &StepWorkspace, j: usize, p: usize, out: &mut [f64]) {
        let (d, m) = (ws.d, ws.m);
        out.copy_from_slice(self.x);
        let theta_p0 = self.draw.big_theta(p, 0);
        for k in 0..ws.s1 {
            let a = self.t.a1[j][k];
            if a != 0.0 {
                axpy(out, self.h * a * theta_p0, &ws.drift_f[k * d..(k + 1) * d]);
            }
        }
        for q in 1..=m {
            let mat = self.t.stoch_block(q == p);
            let theta = self.draw.big_theta(p, q);
            for l in 0..ws.s2 {
                let b = mat[j][l];
                if b != 0.0 {
                    let k = (l * m + q - 1) * d;
                    axpy(out, self.sqrt_h * b * theta, &ws.stoch_f[k..k + d]);
                }
            }
        }
    }

    /// Recompute stage `s` and the fields at it; returns the max change of
    /// the stage value.
    fn update_stage(&self, ws: &mut StepWorkspace, s: StageRef) -> f64 {
        let d = ws.d;
        let mut buf = std::mem::take(&mut ws.scratch);
        let mut change = 0.0f64;
        match s {
            StageRef::Drift(i) => {
                self.drift_stage_value(ws, i, &mut buf);
                let stage = &mut ws.drift_stages[i * d..(i + 1) * d];
                for (old, new) in stage.iter_mut().zip(&buf) {
                    change = change.max((*old - new).abs());
                    *old = *new;
                }
                (self.problem.fields[0])(stage, &mut ws.drift_f[i * d..(i + 1) * d]);
                ws.counts.drift += 1;
            }
            StageRef::Stoch(j) => {
                for p in 1..=ws.m {
                    self.stoch_stage_value(ws, j, p, &mut buf);
                    let k = (j * ws.m + p - 1) * d;
                    let stage = &mut ws.stoch_stages[k..k + d];
                    for (old, new) in stage.iter_mut().zip(&buf) {
                        change = change.max((*old - new).abs());
                        *old = *new;
                    }
                }
                // all noises first: stage p may feed stage q of the same row
                for p in 1..=ws.m {
                    let k = (j * ws.m + p - 1) * d;
                    (self.problem.fields[p])(&ws.stoch_stages[k..k + d], &mut ws.stoch_f[k..k + d]);
                    ws.counts.diffusion[p - 1] += 1;
                }
            }
        }
        ws.scratch = buf;
        change
    }

    fn init_stage(&self, ws: &mut StepWorkspace, s: StageRef) {
        let d = ws.d;
        match s {
            StageRef::Drift(i) => {
                ws.drift_stages[i * d..(i + 1) * d].copy_from_slice(self.x);
                (self.problem.fields[0])(self.x, &mut ws.drift_f[i * d..(i + 1) * d]);
                ws.counts.drift += 1;
            }
            StageRef::Stoch(j) => {
                for p in 1..=ws.m {
                    let k = (j * ws.m + p - 1) * d;
                    ws.stoch_stages[k..k + d].copy_from_slice(self.x);
                    (self.problem.fields[p])(self.x, &mut ws.stoch_f[k..k + d]);
                    ws.counts.diffusion[p - 1] += 1;
                }
            }
        }
    }
}

/// Advance `x` in place by one step of size `h`.
pub fn step_in_place(
    problem: &SdeProblem,
    t: &MethodTableau,
    x: &mut [f64],
    h: f64,
    draw: &NoiseDraw,
    ws: &mut StepWorkspace,
) -> Result<()> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {h}"
        )));
    }
    if draw.m != problem.m || x.len() != problem.d {
        return Err(Error::InvalidArgument(format!(
            "draw has m = {}, state has d = {}; problem has m = {}, d = {}",
            draw.m,
            x.len(),
            problem.m,
            problem.d
        )));
    }
    let mut x0 = std::mem::take(&mut ws.start);
    x0.copy_from_slice(x);
    let ctx = StepContext {
        problem,
        t,
        x: &x0,
        h,
        sqrt_h: h.sqrt(),
        draw,
    };
    let blocks = std::mem::take(&mut ws.blocks);
    let tol = SOLVER_TOLERANCE * (1.0 + max_norm(&x0));
    let mut outcome = Ok(());
    'blocks: for block in &blocks {
        if !block.implicit {
            ctx.update_stage(ws, block.stages[0]);
            continue;
        }
        for &s in &block.stages {
            ctx.init_stage(ws, s);
        }
        let mut residual = f64::INFINITY;
        for _ in 0..SOLVER_MAX_ITERATIONS {
            residual = 0.0;
            for &s in &block.stages {
                residual = residual.max(ctx.update_stage(ws, s));
            }
            if residual <= tol {
                continue 'blocks;
            }
            if !residual.is_finite() {
                break;
            }
        }
        let names: Vec<String> = block.stages.iter().map(|s| s.to_string()).collect();
        outcome = Err(Error::Divergence {
            stage: names.join(", "),
            iterations: SOLVER_MAX_ITERATIONS,
            residual,
        });
        break;
    }
    ws.blocks = blocks;
    if let Err(e) = outcome {
        ws.start = x0;
        return Err(e);
    }

    let (d, m) = (ws.d, ws.m);
    for i in 0..ws.s1 {
        let a = t.alpha[i];
        if a != 0.0 {
            axpy(x, h * a, &ws.drift_f[i * d..(i + 1) * d]);
        }
    }
    for i in 0..ws.s2 {
        let b = t.beta[i];
        if b == 0.0 {
            continue;
        }
        for p in 1..=m {
            let k = (i * m + p - 1) * d;
            axpy(x, ctx.sqrt_h * b * draw.theta(p), &ws.stoch_f[k..k + d]);
        }
    }
    let finite = x.iter().all(|v| v.is_finite());
    let result = if finite {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{} on {} with h = {h} from x = {x0:?}",
            t.name, problem.label
        )))
    };
    ws.start = x0;
    result
}

/// One step from `x`, returning the new state.
pub fn step(
    problem: &SdeProblem,
    t: &MethodTableau,
    x: &[f64],
    h: f64,
    draw: &NoiseDraw,
    ws: &mut StepWorkspace,
) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    step_in_place(problem, t, &mut out, h, draw, ws)?;
    Ok(out)
}

/// `n_steps` steps from `x0` with fresh random variables per step.
pub fn integrate_path<R: RngCore + ?Sized>(
    problem: &SdeProblem,
    t: &MethodTableau,
    x0: &[f64],
    h: f64,
    n_steps: usize,
    rng: &mut R,
    ws: &mut StepWorkspace,
) -> Result<Vec<f64>> {
    let family = RvFamily::for_method(t)?;
    let mut draw = NoiseDraw::zeroed(problem.m);
    let mut x = x0.to_vec();
    for _ in 0..n_steps {
        sample_into(&family, &mut draw, rng);
        step_in_place(problem, t, &mut x, h, &draw, ws)?;
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Postprocessed Langevin sampler

/// Chain state of the postprocessed sampler for `dX = F dt + sqrt(2) D dW`.
/// Problem field 0 is `F`, field `p` is column `p` of `D`.
#[derive(Debug, Clone)]
pub struct LangevinState {
    /// Chain value `X_n`.
    pub x: Vec<f64>,
    /// Postprocessed output of the last step (initially `X_0`).
    pub xbar: Vec<f64>,
    f_xbar: Vec<f64>,
    h_point: Vec<f64>,
    shifted: Vec<f64>,
    columns: Vec<f64>,
    buf: Vec<f64>,
    pub counts: EvalCounts,
}

impl LangevinState {
    pub fn new(problem: &SdeProblem, x0: &[f64]) -> Self {
        let (d, m) = (problem.d, problem.m);
        let mut f_xbar = vec![0.0; d];
        (problem.fields[0])(x0, &mut f_xbar);
        let mut counts = EvalCounts::new(m);
        counts.drift = 1;
        LangevinState {
            x: x0.to_vec(),
            xbar: x0.to_vec(),
            f_xbar,
            h_point: vec![0.0; d],
            shifted: vec![0.0; d],
            columns: vec![0.0; d * m],
            buf: vec![0.0; d],
            counts,
        }
    }
}

/// Advance the sampler: `X_n -> X_{n+1}` and `xbar <- Xbar_n`.
pub fn langevin_postprocessed_step(
    problem: &SdeProblem,
    state: &mut LangevinState,
    h: f64,
    draw: &NoiseDraw,
) -> Result<()> {
    let (d, m) = (problem.d, problem.m);
    if draw.m != m {
        return Err(Error::InvalidArgument(format!(
            "draw has m = {}, problem has m = {m}",
            draw.m
        )));
    }
    let half = (h / 2.0).sqrt();
    // H_n = X_n + h/4 F(Xbar_{n-1})
    state.h_point.copy_from_slice(&state.x);
    axpy(&mut state.h_point, h / 4.0, &state.f_xbar);
    for p in 1..=m {
        (problem.fields[p])(&state.h_point, &mut state.columns[(p - 1) * d..p * d]);
        state.counts.diffusion[p - 1] += 1;
    }
    // Xbar_n = X_n + sqrt(h/2) sum_p D_p(H_n) theta_p
    state.xbar.copy_from_slice(&state.x);
    for p in 1..=m {
        axpy(
            &mut state.xbar,
            half * draw.theta(p),
            &state.columns[(p - 1) * d..p * d],
        );
    }
    (problem.fields[0])(&state.xbar, &mut state.f_xbar);
    state.counts.drift += 1;
    // X_{n+1} = X_n + h F(Xbar_n) + sqrt(2h) sum_p D_p(H_n + sqrt(h/2) sum_q D_q(H_n) Theta_pq) theta_p
    let root = (2.0 * h).sqrt();
    let mut next = std::mem::take(&mut state.buf);
    next.copy_from_slice(&state.x);
    axpy(&mut next, h, &state.f_xbar);
    for p in 1..=m {
        state.shifted.copy_from_slice(&state.h_point);
        for q in 1..=m {
            axpy(
                &mut state.shifted,
                half * draw.big_theta(p, q),
                &state.columns[(q - 1) * d..q * d],
            );
        }
        let mut col = vec![0.0; d];
        (problem.fields[p])(&state.shifted, &mut col);
        state.counts.diffusion[p - 1] += 1;
        axpy(&mut next, root * draw.theta(p), &col);
    }
    std::mem::swap(&mut state.x, &mut next);
    state.buf = next;
    if state.x.iter().chain(&state.xbar).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "postprocessed Langevin step on {} with h = {h}",
            problem.label
        )));
    }
    Ok(())
}
