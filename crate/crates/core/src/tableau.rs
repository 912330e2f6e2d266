//! Stochastic Runge-Kutta methods in the two-block ansatz.
//!
//! A method has `s1` drift stages and `s2` stochastic stages. Its random
//! coefficients are the deterministic blocks below multiplied by the
//! per-step random variables of [`crate::randvars`]:
//!
//! ```text
//! z^0 = alpha * theta_0      z^p = beta * theta_p
//! Z^{0,0} = A0 * Theta_00    Z^{0,q} = B0 * Theta_0q
//! Z^{p,0} = A1 * Theta_p0    Z^{p,q} = B1 * Theta_pq   (Stratonovich: Bhat1 * Theta_pp when p = q)
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conditions;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Calculus {
    Ito,
    Stratonovich,
}

impl fmt::Display for Calculus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Calculus::Ito => f.write_str("ito"),
            Calculus::Stratonovich => f.write_str("stratonovich"),
        }
    }
}

/// Stage coupling pattern of a tableau.
///
/// `Implicit` covers methods whose stages couple in blocks larger than one
/// stage (the Gauss-Legendre stochastic block of `StratoImplicit12`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Explicit,
    DiagonallyImplicit,
    Imex,
    Implicit,
}

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct MethodTableau {
    pub name: String,
    pub calculus: Calculus,
    pub s1: usize,
    pub s2: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub a0: Matrix,
    pub b0: Matrix,
    pub a1: Matrix,
    pub b1: Matrix,
    pub bhat1: Option<Matrix>,
    pub c: f64,
    pub det_order: u32,
    pub weak_order: u32,
    pub structure: Structure,
}

impl MethodTableau {
    /// Coefficient matrix coupling stochastic stage `j` of noise `p` to the
    /// diffusion evaluations of noise `q`.
    pub fn stoch_block(&self, same_noise: bool) -> &Matrix {
        match (&self.bhat1, same_noise) {
            (Some(bhat), true) => bhat,
            _ => &self.b1,
        }
    }

    /// True when `c = 1/2`, i.e. the method uses the reduced random
    /// variable family with `Theta_0p = theta_p` and `Theta_p0 = 1`.
    pub fn half_variant(&self) -> bool {
        self.c == 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    fn from_findings(findings: Vec<Finding>) -> Self {
        let ok = findings.iter().all(|f| f.severity != Severity::Error);
        ValidationReport { ok, findings }
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Warning)
    }
}

// ---------------------------------------------------------------------------
// Stage dependency graph

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StageRef {
    Drift(usize),
    Stoch(usize),
}

impl fmt::Display for StageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageRef::Drift(i) => write!(f, "H{}^0", i + 1),
            StageRef::Stoch(j) => write!(f, "H{}^p", j + 1),
        }
    }
}

/// A strongly connected group of stages. Groups are returned in an order
/// where every group only depends on itself and earlier groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageBlock {
    pub stages: Vec<StageRef>,
    /// The block depends on its own evaluations and needs iteration.
    pub implicit: bool,
}

fn dependencies(t: &MethodTableau, s: StageRef) -> Vec<StageRef> {
    let mut deps = Vec::new();
    let nz = |v: f64| v != 0.0;
    match s {
        StageRef::Drift(i) => {
            deps.extend((0..t.s1).filter(|&k| nz(t.a0[i][k])).map(StageRef::Drift));
            deps.extend((0..t.s2).filter(|&j| nz(t.b0[i][j])).map(StageRef::Stoch));
        }
        StageRef::Stoch(j) => {
            deps.extend((0..t.s1).filter(|&k| nz(t.a1[j][k])).map(StageRef::Drift));
            deps.extend(
                (0..t.s2)
                    .filter(|&l| nz(t.b1[j][l]) || t.bhat1.as_ref().is_some_and(|b| nz(b[j][l])))
                    .map(StageRef::Stoch),
            );
        }
    }
    deps
}

/// Evaluation order over the stage dependency graph (assumes consistent
/// shapes; run [`validate`] first for untrusted input).
pub fn evaluation_order(t: &MethodTableau) -> Vec<StageBlock> {
    let nodes: Vec<StageRef> = (0..t.s1)
        .map(StageRef::Drift)
        .chain((0..t.s2).map(StageRef::Stoch))
        .collect();
    let n = nodes.len();
    let index = |s: StageRef| match s {
        StageRef::Drift(i) => i,
        StageRef::Stoch(j) => t.s1 + j,
    };
    // reach[a][b]: stage a (transitively) needs stage b
    let mut reach = vec![vec![false; n]; n];
    for (a, &s) in nodes.iter().enumerate() {
        for d in dependencies(t, s) {
            reach[a][index(d)] = true;
        }
    }
    for k in 0..n {
        for a in 0..n {
            if reach[a][k] {
                for b in 0..n {
                    if reach[k][b] {
                        reach[a][b] = true;
                    }
                }
            }
        }
    }

    let mut component = vec![usize::MAX; n];
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for a in 0..n {
        if component[a] != usize::MAX {
            continue;
        }
        let members: Vec<usize> = (0..n)
            .filter(|&b| b == a || (reach[a][b] && reach[b][a]))
            .collect();
        for &b in &members {
            component[b] = blocks.len();
        }
        blocks.push(members);
    }

    let mut done = vec![false; blocks.len()];
    let mut order = Vec::with_capacity(blocks.len());
    while order.len() < blocks.len() {
        let next = (0..blocks.len())
            .find(|&c| {
                !done[c]
                    && blocks[c].iter().all(|&a| {
                        (0..n).all(|b| !reach[a][b] || component[b] == c || done[component[b]])
                    })
            })
            .expect("condensation of a finite graph is acyclic");
        done[next] = true;
        let members = &blocks[next];
        let implicit = members.len() > 1 || reach[members[0]][members[0]];
        order.push(StageBlock {
            stages: members.iter().map(|&a| nodes[a]).collect(),
            implicit,
        });
    }
    order
}

/// Structure implied by the dependency graph of `t`.
pub fn infer_structure(t: &MethodTableau) -> Structure {
    let blocks = evaluation_order(t);
    if blocks.iter().any(|b| b.stages.len() > 1) {
        return Structure::Implicit;
    }
    let implicit_drift = blocks
        .iter()
        .any(|b| b.implicit && matches!(b.stages[0], StageRef::Drift(_)));
    let implicit_stoch = blocks
        .iter()
        .any(|b| b.implicit && matches!(b.stages[0], StageRef::Stoch(_)));
    match (implicit_drift, implicit_stoch) {
        (false, false) => Structure::Explicit,
        (true, true) => Structure::DiagonallyImplicit,
        _ => Structure::Imex,
    }
}

// ---------------------------------------------------------------------------
// Validation

fn check_matrix(
    findings: &mut Vec<Finding>,
    name: &str,
    m: &Matrix,
    rows: usize,
    cols: usize,
) -> bool {
    let ok = m.len() == rows && m.iter().all(|r| r.len() == cols);
    if !ok {
        let got_cols = m.first().map_or(0, |r| r.len());
        findings.push(Finding {
            severity: Severity::Error,
            message: format!(
                "shape mismatch: {name} must be {rows}x{cols}, got {}x{got_cols}",
                m.len()
            ),
        });
    }
    ok
}

pub fn validate(t: &MethodTableau) -> ValidationReport {
    let mut findings = Vec::new();
    let err = |findings: &mut Vec<Finding>, message: String| {
        findings.push(Finding {
            severity: Severity::Error,
            message,
        })
    };

    if t.s1 == 0 || t.s2 == 0 {
        err(
            &mut findings,
            "stage counts s1 and s2 must be positive".into(),
        );
    }
    let mut shapes_ok = true;
    if t.alpha.len() != t.s1 {
        err(
            &mut findings,
            format!(
                "shape mismatch: alpha has length {}, s1 = {}",
                t.alpha.len(),
                t.s1
            ),
        );
        shapes_ok = false;
    }
    if t.beta.len() != t.s2 {
        err(
            &mut findings,
            format!(
                "shape mismatch: beta has length {}, s2 = {}",
                t.beta.len(),
                t.s2
            ),
        );
        shapes_ok = false;
    }
    shapes_ok &= check_matrix(&mut findings, "A0", &t.a0, t.s1, t.s1);
    shapes_ok &= check_matrix(&mut findings, "B0", &t.b0, t.s1, t.s2);
    shapes_ok &= check_matrix(&mut findings, "A1", &t.a1, t.s2, t.s1);
    shapes_ok &= check_matrix(&mut findings, "B1", &t.b1, t.s2, t.s2);
    match (t.calculus, &t.bhat1) {
        (Calculus::Stratonovich, None) => {
            err(&mut findings, "Stratonovich method is missing Bhat1".into());
            shapes_ok = false;
        }
        (Calculus::Ito, Some(_)) => {
            err(
                &mut findings,
                "Bhat1 is only allowed for Stratonovich methods".into(),
            );
            shapes_ok = false;
        }
        (Calculus::Stratonovich, Some(b)) => {
            shapes_ok &= check_matrix(&mut findings, "Bhat1", b, t.s2, t.s2);
        }
        (Calculus::Ito, None) => {}
    }

    let all_finite = t
        .alpha
        .iter()
        .chain(&t.beta)
        .chain(t.a0.iter().flatten())
        .chain(t.b0.iter().flatten())
        .chain(t.a1.iter().flatten())
        .chain(t.b1.iter().flatten())
        .chain(t.bhat1.iter().flatten().flatten())
        .all(|v| v.is_finite());
    if !all_finite {
        err(&mut findings, "coefficients must be finite".into());
        shapes_ok = false;
    }

    if !(t.c > 0.0 && t.c <= 0.5) {
        err(
            &mut findings,
            format!("range error: c = {} is outside (0, 1/2]", t.c),
        );
    }

    if shapes_ok && t.s1 > 0 && t.s2 > 0 {
        let inferred = infer_structure(t);
        if inferred != t.structure {
            err(
                &mut findings,
                format!(
                    "structure tag {:?} is inconsistent with the stage couplings ({:?})",
                    t.structure, inferred
                ),
            );
        }
        if t.weak_order >= 2 && t.c > 0.0 && t.c <= 0.5 {
            let report = conditions::check_reduced(t);
            for r in report.records.iter().filter(|r| !r.satisfied) {
                findings.push(Finding {
                    severity: Severity::Warning,
                    message: format!(
                        "declared weak order {} but reduced condition {} ({}) is violated: lhs {} vs target {}",
                        t.weak_order, r.id, r.description, r.lhs, r.target
                    ),
                });
            }
        }
    }

    ValidationReport::from_findings(findings)
}

// ---------------------------------------------------------------------------
// Registry

fn sqrt(x: f64) -> f64 {
    x.sqrt()
}

fn zeros(r: usize, c: usize) -> Matrix {
    vec![vec![0.0; c]; r]
}

pub const REGISTERED: [&str; 13] = [
    "BDK1",
    "BDK2",
    "BDK3",
    "ItoImplicit12",
    "StratoExplicit24",
    "StratoImplicit12",
    "StratoDetOrder3",
    "ItoDIRKEX",
    "ItoEXDIRK",
    "StratoDIRKEX",
    "StratoEXDIRK",
    "StratoDIRK",
    "EulerMaruyama",
];

#[allow(clippy::too_many_arguments)]
fn ito(
    name: &str,
    c: f64,
    det_order: u32,
    structure: Structure,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    a0: Matrix,
    b0: Matrix,
    a1: Matrix,
    b1: Matrix,
) -> MethodTableau {
    MethodTableau {
        name: name.to_string(),
        calculus: Calculus::Ito,
        s1: alpha.len(),
        s2: beta.len(),
        alpha,
        beta,
        a0,
        b0,
        a1,
        b1,
        bhat1: None,
        c,
        det_order,
        weak_order: 2,
        structure,
    }
}

#[allow(clippy::too_many_arguments)]
fn strato(
    name: &str,
    c: f64,
    det_order: u32,
    structure: Structure,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    a0: Matrix,
    b0: Matrix,
    a1: Matrix,
    b1: Matrix,
    bhat1: Matrix,
) -> MethodTableau {
    MethodTableau {
        bhat1: Some(bhat1),
        calculus: Calculus::Stratonovich,
        ..ito(name, c, det_order, structure, alpha, beta, a0, b0, a1, b1)
    }
}

/// Look up a built-in method by name.
pub fn registry_get(name: &str) -> Result<MethodTableau> {
    use Structure::*;
    let s3 = sqrt(3.0);
    let s6 = sqrt(6.0);
    let t = match name {
        // Heun drift, explicit midpoint diffusion
        "BDK1" => ito(
            name,
            0.5,
            2,
            Explicit,
            vec![0.5, 0.5],
            vec![0.0, 1.0],
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            vec![vec![0.0, 0.0], vec![0.5, 0.0]],
            vec![vec![0.0, 0.0], vec![0.5, 0.0]],
        ),
        // Kutta's third order drift part
        "BDK2" => ito(
            name,
            0.5,
            3,
            Explicit,
            vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            vec![0.0, 1.0],
            vec![
                vec![0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0],
                vec![-1.0, 2.0, 0.0],
            ],
            vec![
                vec![0.0, 0.0],
                vec![0.6 - s6 / 10.0, 0.0],
                vec![0.6 + 2.0 * s6 / 5.0, 0.0],
            ],
            vec![vec![0.0, 0.0, 0.0], vec![0.5, 0.0, 0.0]],
            vec![vec![0.0, 0.0], vec![0.5, 0.0]],
        ),
        "BDK3" => ito(
            name,
            1.0 / 3.0,
            3,
            Explicit,
            vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            vec![0.0, 1.0],
            vec![
                vec![0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0],
                vec![-1.0, 2.0, 0.0],
            ],
            vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![1.0, 0.0]],
            vec![vec![0.0, 0.0, 0.0], vec![0.5, 0.0, 0.0]],
            vec![vec![0.0, 0.0], vec![0.5, 0.0]],
        ),
        "ItoImplicit12" => ito(
            name,
            0.25,
            2,
            DiagonallyImplicit,
            vec![1.0],
            vec![0.0, 1.0],
            vec![vec![0.5]],
            vec![vec![0.5, 0.0]],
            vec![vec![0.0], vec![0.5]],
            vec![vec![1.0, 0.0], vec![-0.5, 1.0]],
        ),
        "StratoExplicit24" => strato(
            name,
            0.5,
            2,
            Explicit,
            vec![0.5, 0.5],
            vec![0.0, 2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            vec![vec![0.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]],
            vec![
                vec![0.0, 0.0],
                vec![0.5, 0.0],
                vec![0.5, 0.0],
                vec![0.5, 0.0],
            ],
            vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0, 0.0],
                vec![-1.0, 1.5, 0.0, 0.0],
                vec![-1.0, 1.5, 0.0, 0.0],
            ],
            vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0, 0.0],
                vec![-0.5, 0.5, 0.0, 0.0],
                vec![-1.5, 1.5, 1.0, 0.0],
            ],
        ),
        // implicit midpoint drift, two-stage Gauss-Legendre in Bhat1
        "StratoImplicit12" => strato(
            name,
            0.25,
            2,
            Implicit,
            vec![1.0],
            vec![0.5, 0.5],
            vec![vec![0.5]],
            vec![vec![0.25, 0.25]],
            vec![vec![0.5], vec![0.5]],
            vec![vec![0.25, 0.25], vec![0.25, 0.25]],
            vec![
                vec![0.25, (3.0 + 2.0 * s3) / 12.0],
                vec![(3.0 - 2.0 * s3) / 12.0, 0.25],
            ],
        ),
        "StratoDetOrder3" => strato(
            name,
            0.5,
            3,
            Explicit,
            vec![0.25, 0.0, 0.75],
            vec![0.0, 2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
            vec![
                vec![0.0, 0.0, 0.0],
                vec![1.0 / 3.0, 0.0, 0.0],
                vec![0.0, 2.0 / 3.0, 0.0],
            ],
            vec![
                vec![0.5 - s3 / 2.0, 0.0, 0.0, 0.0],
                vec![s3 - 1.0, 0.0, 0.0, 0.0],
                vec![1.0 / 6.0 + s3 / 6.0, 0.0, 0.0, 1.0 / 3.0],
            ],
            vec![
                vec![0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0],
                vec![-0.5, 1.0, 0.0],
                vec![0.5, 0.0, 0.0],
            ],
            vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0, 0.0],
                vec![-1.0, 1.5, 0.0, 0.0],
                vec![-0.5, 1.5, -0.5, 0.0],
            ],
            vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0, 0.0],
                vec![-0.5, 0.5, 0.0, 0.0],
                vec![-1.5, 1.5, 1.0, 0.0],
            ],
        ),
        "ItoDIRKEX" => ito(
            name,
            0.25,
            2,
            Imex,
            vec![1.0],
            vec![0.0, 1.0],
            vec![vec![0.5]],
            vec![vec![0.5, 0.0]],
            vec![vec![0.0], vec![0.5]],
            vec![vec![0.0, 0.0], vec![0.5, 0.0]],
        ),
        "ItoEXDIRK" => ito(
            name,
            0.5,
            2,
            Imex,
            vec![0.5, 0.5],
            vec![0.0, 1.0],
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            vec![vec![0.0, 0.0], vec![0.5, 0.0]],
            vec![vec![1.0, 0.0], vec![-0.5, 1.0]],
        ),
        "StratoDIRKEX" => strato(
            name,
            0.25,
            2,
            Imex,
            vec![1.0],
            vec![0.0, 2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
            vec![vec![0.5]],
            vec![vec![0.0, 0.5, 0.0, 0.0]],
            vec![vec![0.0], vec![0.0], vec![1.5], vec![1.5]],
            vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0, 0.0],
                vec![-1.0, 1.5, 0.0, 0.0],
                vec![-0.5, 1.5, -0.5, 0.0],
            ],
            vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0, 0.0],
                vec![-0.5, 0.5, 0.0, 0.0],
                vec![-1.5, 1.5, 1.0, 0.0],
            ],
        ),
        "StratoEXDIRK" => strato(
            name,
            0.5,
            2,
            Imex,
            vec![0.5, 0.5],
            vec![0.0, 0.5, 0.5],
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
            vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![0.5, 0.0]],
            vec![
                vec![0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0],
                vec![0.5, 0.0, 0.0],
            ],
            vec![
                vec![0.5, 0.0, 0.0],
                vec![(3.0 - 2.0 * s3) / 6.0, s3 / 6.0, 0.0],
                vec![(-3.0 + 2.0 * s3) / 6.0, 0.5, (3.0 - s3) / 6.0],
            ],
        ),
        "StratoDIRK" => strato(
            name,
            0.25,
            2,
            DiagonallyImplicit,
            vec![1.0],
            vec![0.0, 0.5, 0.5],
            vec![vec![0.5]],
            vec![vec![0.5, 0.0, 0.0]],
            vec![vec![0.0], vec![0.5], vec![0.5]],
            vec![
                vec![0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0],
                vec![0.5, 0.0, 0.0],
            ],
            vec![
                vec![0.5, 0.0, 0.0],
                vec![(3.0 - 2.0 * s3) / 6.0, s3 / 6.0, 0.0],
                vec![(-3.0 + 2.0 * s3) / 6.0, 0.5, (3.0 - s3) / 6.0],
            ],
        ),
        "EulerMaruyama" => MethodTableau {
            weak_order: 1,
            det_order: 1,
            ..ito(
                name,
                0.5,
                1,
                Explicit,
                vec![1.0],
                vec![1.0],
                zeros(1, 1),
                zeros(1, 1),
                zeros(1, 1),
                zeros(1, 1),
            )
        },
        _ => {
            return Err(Error::UnknownMethod {
                name: name.to_string(),
                valid: REGISTERED.iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    Ok(t)
}

pub fn registry_all() -> Vec<MethodTableau> {
    REGISTERED
        .iter()
        .map(|n| registry_get(n).expect("registered name"))
        .collect()
}

// ---------------------------------------------------------------------------
// File format

/// A coefficient in a method file: a JSON number, or a string such as
/// `"3/5-1/10*sqrt(6)"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Entry {
    Num(f64),
    Expr(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct MethodFile {
    name: String,
    calculus: Calculus,
    c: Entry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s1: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s2: Option<usize>,
    alpha: Vec<Entry>,
    beta: Vec<Entry>,
    #[serde(rename = "A0")]
    a0: Vec<Vec<Entry>>,
    #[serde(rename = "B0")]
    b0: Vec<Vec<Entry>>,
    #[serde(rename = "A1")]
    a1: Vec<Vec<Entry>>,
    #[serde(rename = "B1")]
    b1: Vec<Vec<Entry>>,
    #[serde(rename = "Bhat1", default, skip_serializing_if = "Option::is_none")]
    bhat1: Option<Vec<Vec<Entry>>>,
    det_order: u32,
    weak_order: u32,
    structure: Structure,
}

fn parse_rational(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::Parse(format!("invalid rational `{s}`"));
    match s.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| bad())?;
            let den: f64 = den.trim().parse().map_err(|_| bad())?;
            if den == 0.0 {
                return Err(bad());
            }
            Ok(num / den)
        }
        None => s.parse().map_err(|_| bad()),
    }
}

/// `[rational] "*sqrt(" k ")"` or `"sqrt(" k ")"` or a plain rational.
fn parse_term(s: &str) -> Result<f64> {
    let s = s.trim();
    if let Some(pos) = s.find("sqrt(") {
        let inner = s[pos + 5..]
            .strip_suffix(')')
            .ok_or_else(|| Error::Parse(format!("unbalanced sqrt in `{s}`")))?;
        let k: u64 = inner.trim().parse().map_err(|_| {
            Error::Parse(format!(
                "sqrt argument must be a nonnegative integer in `{s}`"
            ))
        })?;
        let prefix = s[..pos].trim();
        let coef = match prefix {
            "" | "+" => 1.0,
            "-" => -1.0,
            p => parse_rational(
                p.strip_suffix('*')
                    .ok_or_else(|| Error::Parse(format!("expected `*` before sqrt in `{s}`")))?,
            )?,
        };
        Ok(coef * (k as f64).sqrt())
    } else {
        parse_rational(s)
    }
}

/// Evaluate `a+b*sqrt(k)` style coefficient strings.
pub fn parse_coefficient(s: &str) -> Result<f64> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err(Error::Parse("empty coefficient".into()));
    }
    // split at a top-level + or - that is not a leading sign or exponent sign
    let bytes = s.as_bytes();
    let mut split = None;
    for i in 1..bytes.len() {
        let ch = bytes[i];
        let prev = bytes[i - 1];
        if (ch == b'+' || ch == b'-') && prev != b'e' && prev != b'E' && prev != b'(' {
            split = Some(i);
            break;
        }
    }
    match split {
        Some(i) => {
            let (a, b) = s.split_at(i);
            if b[1..].contains(['+']) || b[1..].contains('-') && !b.contains("e-") {
                return Err(Error::Parse(format!("too many terms in `{s}`")));
            }
            Ok(parse_term(a)? + parse_term(b)?)
        }
        None => parse_term(&s),
    }
}

fn entry_value(e: &Entry) -> Result<f64> {
    match e {
        Entry::Num(v) => Ok(*v),
        Entry::Expr(s) => parse_coefficient(s),
    }
}

fn vector(v: &[Entry]) -> Result<Vec<f64>> {
    v.iter().map(entry_value).collect()
}

fn matrix(m: &[Vec<Entry>]) -> Result<Matrix> {
    m.iter().map(|r| vector(r)).collect()
}

/// Parse a method from its JSON text and validate it.
pub fn parse_method(text: &str) -> Result<MethodTableau> {
    let file: MethodFile = serde_json::from_str(text)?;
    let a0 = matrix(&file.a0)?;
    let b1 = matrix(&file.b1)?;
    let s1 = file.s1.unwrap_or(a0.len());
    let s2 = file.s2.unwrap_or(b1.len());
    let t = MethodTableau {
        name: file.name,
        calculus: file.calculus,
        s1,
        s2,
        alpha: vector(&file.alpha)?,
        beta: vector(&file.beta)?,
        a0,
        b0: matrix(&file.b0)?,
        a1: matrix(&file.a1)?,
        b1,
        bhat1: file.bhat1.as_deref().map(matrix).transpose()?,
        c: entry_value(&file.c)?,
        det_order: file.det_order,
        weak_order: file.weak_order,
        structure: file.structure,
    };
    let report = validate(&t);
    if !report.ok {
        return Err(Error::Validation(
            report.errors().map(|f| f.message.clone()).collect(),
        ));
    }
    Ok(t)
}

pub fn load_method(path: impl AsRef<Path>) -> Result<MethodTableau> {
    parse_method(&std::fs::read_to_string(path)?)
}

/// JSON encoding of `t`. Numbers are written in shortest round-trip form,
/// so [`parse_method`] recovers every coefficient bit for bit.
pub fn to_json(t: &MethodTableau) -> String {
    let num = |v: &[f64]| v.iter().map(|&x| Entry::Num(x)).collect::<Vec<_>>();
    let mat = |m: &Matrix| m.iter().map(|r| num(r)).collect::<Vec<_>>();
    let file = MethodFile {
        name: t.name.clone(),
        calculus: t.calculus,
        c: Entry::Num(t.c),
        s1: Some(t.s1),
        s2: Some(t.s2),
        alpha: num(&t.alpha),
        beta: num(&t.beta),
        a0: mat(&t.a0),
        b0: mat(&t.b0),
        a1: mat(&t.a1),
        b1: mat(&t.b1),
        bhat1: t.bhat1.as_ref().map(mat),
        det_order: t.det_order,
        weak_order: t.weak_order,
        structure: t.structure,
    };
    serde_json::to_string_pretty(&file).expect("method serialises")
}

pub fn save_method(t: &MethodTableau, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_json(t))?;
    Ok(())
}

/// Summary rows for listing the registry.
pub fn registry_summary() -> BTreeMap<String, (Calculus, usize, usize, f64, Structure)> {
    registry_all()
        .into_iter()
        .map(|t| (t.name.clone(), (t.calculus, t.s1, t.s2, t.c, t.structure)))
        .collect()
}
