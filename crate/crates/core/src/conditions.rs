//! Weak order two conditions: the forest table and the reduced systems.

use std::fmt::Write as _;

use num_rational::Rational64;
use num_traits::ToPrimitive;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forests::{parse_differential, rk_coefficient_map, DecoratedForest};
use crate::tableau::{Calculus, Matrix, MethodTableau};

pub const TABLE_TOLERANCE: f64 = 1e-12;
pub const REDUCED_TOLERANCE: f64 = 1e-13;

#[derive(Clone, Debug, Serialize)]
pub struct ConditionRecord {
    pub id: String,
    pub description: String,
    pub lhs: f64,
    pub target_ito: f64,
    pub target_strat: f64,
    /// Target in the calculus of the method under test.
    pub target: f64,
    pub satisfied: bool,
    pub tolerance: f64,
    /// Both sides are an expectation forced to vanish.
    pub superfluous: bool,
}

impl ConditionRecord {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.target).abs()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub method: String,
    pub calculus: Calculus,
    pub records: Vec<ConditionRecord>,
    pub all_satisfied: bool,
}

impl ConditionReport {
    fn new(method: &str, calculus: Calculus, records: Vec<ConditionRecord>) -> Self {
        let all_satisfied = records.iter().all(|r| r.satisfied);
        ConditionReport {
            method: method.to_string(),
            calculus,
            records,
            all_satisfied,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConditionRecord> {
        self.records.iter().filter(|r| !r.satisfied)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} ({})\n", self.method, self.calculus);
        let _ = writeln!(
            s,
            "{:<4} {:<44} {:>22} {:>22} {:>10}  result",
            "id", "condition", "lhs", "target", "|residual|"
        );
        for r in &self.records {
            let _ = writeln!(
                s,
                "{:<4} {:<44} {:>22.15} {:>22.15} {:>10.2e}  {}{}",
                r.id,
                r.description,
                r.lhs,
                r.target,
                r.residual(),
                if r.satisfied { "pass" } else { "FAIL" },
                if r.superfluous { " (superfluous)" } else { "" }
            );
        }
        let _ = writeln!(
            s,
            "{} of {} satisfied",
            self.records.iter().filter(|r| r.satisfied).count(),
            self.records.len()
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// One row of the exotic or Isserlis order condition table.
#[derive(Clone, Copy, Debug)]
pub struct TableRow {
    pub label: &'static str,
    pub differential: &'static str,
    pub ito: (i64, i64),
    pub strat: (i64, i64),
}

impl TableRow {
    pub fn forest(&self) -> DecoratedForest {
        parse_differential(self.differential).expect("table differentials are well formed")
    }

    pub fn target(&self, calculus: Calculus) -> Rational64 {
        let (n, d) = match calculus {
            Calculus::Ito => self.ito,
            Calculus::Stratonovich => self.strat,
        };
        Rational64::new(n, d)
    }

    pub fn superfluous(&self) -> bool {
        self.ito.0 == 0 && self.strat.0 == 0
    }

    pub fn is_exotic(&self) -> bool {
        self.label.len() == 1 || self.label.as_bytes()[0] <= b'I'
    }
}

const fn row(
    label: &'static str,
    differential: &'static str,
    ito: (i64, i64),
    strat: (i64, i64),
) -> TableRow {
    TableRow {
        label,
        differential,
        ito,
        strat,
    }
}

/// 34 exotic rows followed by 9 Isserlis rows.
pub static TABLE: [TableRow; 43] = [
    row("A", "phi_i f^{0,i}", (1, 1), (1, 1)),
    row("B", "phi_ij f^{p1,i} f^{p1,j}", (1, 1), (1, 1)),
    row("C", "phi_i f^{p1,i}_{i1} f^{p1,i1}", (0, 1), (1, 2)),
    row("D", "phi_i f^{0,i}_{i1} f^{0,i1}", (1, 2), (1, 2)),
    row("E", "phi_ij f^{0,i} f^{0,j}", (1, 1), (1, 1)),
    row(
        "F",
        "phi_i f^{0,i}_{i1} f^{p1,i1}_{i2} f^{p1,i2}",
        (0, 1),
        (1, 4),
    ),
    row(
        "G",
        "phi_i f^{p1,i}_{i1} f^{0,i1}_{i2} f^{p1,i2}",
        (0, 1),
        (0, 1),
    ),
    row(
        "H",
        "phi_i f^{p1,i}_{i1} f^{p1,i1}_{i2} f^{0,i2}",
        (0, 1),
        (1, 4),
    ),
    row(
        "I",
        "phi_i f^{0,i}_{i1i2} f^{p1,i1} f^{p1,i2}",
        (1, 2),
        (1, 2),
    ),
    row(
        "J",
        "phi_i f^{p1,i}_{i1i2} f^{0,i1} f^{p1,i2}",
        (0, 1),
        (1, 4),
    ),
    row(
        "K",
        "phi_ij f^{0,i}_{i1} f^{p1,i1} f^{p1,j}",
        (1, 2),
        (1, 2),
    ),
    row(
        "L",
        "phi_ij f^{p1,i}_{i1} f^{0,i1} f^{p1,j}",
        (1, 2),
        (1, 2),
    ),
    row(
        "M",
        "phi_ij f^{p1,i}_{i1} f^{p1,i1} f^{0,j}",
        (0, 1),
        (1, 2),
    ),
    row("N", "phi_ijk f^{0,i} f^{p1,j} f^{p1,k}", (1, 1), (1, 1)),
    row(
        "O",
        "phi_i f^{p1,i}_{i1} f^{p1,i1}_{i2} f^{p2,i2}_{i3} f^{p2,i3}",
        (0, 1),
        (1, 8),
    ),
    row(
        "P",
        "phi_i f^{p1,i}_{i1} f^{p2,i1}_{i2} f^{p1,i2}_{i3} f^{p2,i3}",
        (0, 1),
        (0, 1),
    ),
    row(
        "Q",
        "phi_i f^{p1,i}_{i1} f^{p2,i1}_{i2} f^{p2,i2}_{i3} f^{p1,i3}",
        (0, 1),
        (0, 1),
    ),
    row(
        "R",
        "phi_i f^{p1,i}_{i1} f^{p1,i1}_{i2i3} f^{p2,i2} f^{p2,i3}",
        (0, 1),
        (1, 4),
    ),
    row(
        "S",
        "phi_i f^{p1,i}_{i1} f^{p2,i1}_{i2i3} f^{p1,i2} f^{p2,i3}",
        (0, 1),
        (0, 1),
    ),
    row(
        "T",
        "phi_i f^{p1,i}_{i1i2} f^{p1,i1} f^{p2,i2}_{i3} f^{p2,i3}",
        (0, 1),
        (1, 8),
    ),
    row(
        "U",
        "phi_i f^{p1,i}_{i1i2} f^{p2,i1} f^{p1,i2}_{i3} f^{p2,i3}",
        (0, 1),
        (1, 4),
    ),
    row(
        "V",
        "phi_i f^{p1,i}_{i1i2} f^{p2,i1} f^{p2,i2}_{i3} f^{p1,i3}",
        (0, 1),
        (0, 1),
    ),
    row(
        "W",
        "phi_i f^{p1,i}_{i1i2i3} f^{p1,i1} f^{p2,i2} f^{p2,i3}",
        (0, 1),
        (1, 4),
    ),
    row(
        "X",
        "phi_ij f^{p1,i}_{i1} f^{p2,i1}_{i2} f^{p2,i2} f^{p1,j}",
        (0, 1),
        (1, 4),
    ),
    row(
        "Y",
        "phi_ij f^{p2,i}_{i1} f^{p1,i1}_{i2} f^{p2,i2} f^{p1,j}",
        (0, 1),
        (0, 1),
    ),
    row(
        "AB",
        "phi_ij f^{p2,i}_{i1} f^{p2,i1}_{i2} f^{p1,i2} f^{p1,j}",
        (0, 1),
        (1, 4),
    ),
    row(
        "BB",
        "phi_ij f^{p1,i}_{i1i2} f^{p2,i1} f^{p2,i2} f^{p1,j}",
        (1, 2),
        (1, 2),
    ),
    row(
        "CB",
        "phi_ij f^{p2,i}_{i1i2} f^{p1,i1} f^{p2,i2} f^{p1,j}",
        (0, 1),
        (1, 4),
    ),
    row(
        "DB",
        "phi_ij f^{p1,i}_{i1} f^{p1,i1} f^{p2,j}_{j1} f^{p2,j1}",
        (0, 1),
        (1, 4),
    ),
    row(
        "EB",
        "phi_ij f^{p1,i}_{i1} f^{p2,i1} f^{p1,j}_{j1} f^{p2,j1}",
        (1, 2),
        (1, 2),
    ),
    row(
        "FB",
        "phi_ij f^{p1,i}_{i1} f^{p2,i1} f^{p2,j}_{j1} f^{p1,j1}",
        (0, 1),
        (0, 1),
    ),
    row(
        "GB",
        "phi_ijk f^{p1,i}_{i1} f^{p1,i1} f^{p2,j} f^{p2,k}",
        (0, 1),
        (1, 2),
    ),
    row(
        "HB",
        "phi_ijk f^{p1,i}_{i1} f^{p2,i1} f^{p1,j} f^{p2,k}",
        (1, 2),
        (1, 2),
    ),
    row(
        "IB",
        "phi_ijkl f^{p1,i} f^{p1,j} f^{p2,k} f^{p2,l}",
        (1, 1),
        (1, 1),
    ),
    row(
        "JB",
        "phi_i f^{p1,i}_{i1} f^{p1,i1}_{i2} f^{p1,i2}_{i3} f^{p1,i3}",
        (0, 1),
        (1, 8),
    ),
    row(
        "KB",
        "phi_i f^{p1,i}_{i1} f^{p1,i1}_{i2i3} f^{p1,i2} f^{p1,i3}",
        (0, 1),
        (1, 4),
    ),
    row(
        "LB",
        "phi_i f^{p1,i}_{i1i2} f^{p1,i1} f^{p1,i2}_{i3} f^{p1,i3}",
        (0, 1),
        (3, 8),
    ),
    row(
        "MB",
        "phi_i f^{p1,i}_{i1i2i3} f^{p1,i1} f^{p1,i2} f^{p1,i3}",
        (0, 1),
        (3, 4),
    ),
    row(
        "NB",
        "phi_ij f^{p1,i}_{i1} f^{p1,i1}_{i2} f^{p1,i2} f^{p1,j}",
        (0, 1),
        (1, 2),
    ),
    row(
        "OB",
        "phi_ij f^{p1,i}_{i1i2} f^{p1,i1} f^{p1,i2} f^{p1,j}",
        (1, 2),
        (1, 1),
    ),
    row(
        "PB",
        "phi_ij f^{p1,i}_{i1} f^{p1,i1} f^{p1,j}_{j1} f^{p1,j1}",
        (1, 2),
        (3, 4),
    ),
    row(
        "QB",
        "phi_ijk f^{p1,i}_{i1} f^{p1,i1} f^{p1,j} f^{p1,k}",
        (1, 1),
        (3, 2),
    ),
    row(
        "RB",
        "phi_ijkl f^{p1,i} f^{p1,j} f^{p1,k} f^{p1,l}",
        (3, 1),
        (3, 1),
    ),
];

/// RK coefficient of `forest`: exact expectation over the atoms with
/// classes bound to noises `1, 2, ...`.
pub fn evaluate_table_condition(t: &MethodTableau, forest: &DecoratedForest) -> Result<f64> {
    if forest.order() > 2 {
        return Err(Error::Capacity {
            what: format!(
                "order-condition forest {forest} of order {}",
                forest.order()
            ),
            limit: 2,
        });
    }
    rk_coefficient_map(t, forest)
}

fn record(
    id: String,
    description: String,
    lhs: f64,
    ito: f64,
    strat: f64,
    calculus: Calculus,
    tolerance: f64,
    superfluous: bool,
) -> ConditionRecord {
    let target = match calculus {
        Calculus::Ito => ito,
        Calculus::Stratonovich => strat,
    };
    ConditionRecord {
        id,
        description,
        lhs,
        target_ito: ito,
        target_strat: strat,
        target,
        satisfied: (lhs - target).abs() <= tolerance,
        tolerance,
        superfluous,
    }
}

/// All 43 table rows, checked against the column of `calculus`.
pub fn check_table_as(t: &MethodTableau, calculus: Calculus) -> ConditionReport {
    let records = TABLE
        .iter()
        .map(|r| {
            let forest = r.forest();
            let lhs = evaluate_table_condition(t, &forest).unwrap_or(f64::NAN);
            record(
                r.label.to_string(),
                r.differential.to_string(),
                lhs,
                r.target(Calculus::Ito).to_f64().unwrap(),
                r.target(Calculus::Stratonovich).to_f64().unwrap(),
                calculus,
                TABLE_TOLERANCE,
                r.superfluous(),
            )
        })
        .collect();
    ConditionReport::new(&t.name, calculus, records)
}

pub fn check_all_table(t: &MethodTableau) -> ConditionReport {
    check_table_as(t, t.calculus)
}

// ---------------------------------------------------------------------------
// Reduced conditions

#[derive(Clone, Copy)]
enum W {
    Alpha,
    Beta,
}

#[derive(Clone, Copy)]
enum M {
    A0,
    B0,
    A1,
    B1,
    Bh,
}

/// Vector expressions built from `1`, matrix products and Hadamard products.
enum V {
    One,
    Mul(M, Box<V>),
    Had(Vec<V>),
}

fn one() -> V {
    V::One
}

fn mul(m: M, v: V) -> V {
    V::Mul(m, Box::new(v))
}

fn had(vs: Vec<V>) -> V {
    V::Had(vs)
}

fn pow(v: impl Fn() -> V, n: usize) -> V {
    had((0..n).map(|_| v()).collect())
}

struct Reduced {
    weight: W,
    vector: V,
    target: (i64, i64),
}

fn red(weight: W, vector: V, target: (i64, i64)) -> Reduced {
    Reduced {
        weight,
        vector,
        target,
    }
}

fn m_name(m: M) -> &'static str {
    match m {
        M::A0 => "A0",
        M::B0 => "B0",
        M::A1 => "A1",
        M::B1 => "B1",
        M::Bh => "Bh1",
    }
}

fn describe_v(v: &V) -> String {
    match v {
        V::One => "1".into(),
        V::Mul(m, inner) => format!("{} {}", m_name(*m), describe_v(inner)),
        V::Had(vs) => {
            let parts: Vec<String> = vs.iter().map(describe_v).collect();
            if parts.windows(2).all(|w| w[0] == w[1]) {
                format!("({})^{}", parts[0], parts.len())
            } else {
                format!("({})", parts.join(" o "))
            }
        }
    }
}

impl Reduced {
    fn describe(&self) -> String {
        let w = match self.weight {
            W::Alpha => "alpha",
            W::Beta => "beta",
        };
        let (n, d) = self.target;
        let target = if d == 1 {
            n.to_string()
        } else {
            format!("{n}/{d}")
        };
        format!("{w}^T {} = {target}", describe_v(&self.vector))
    }
}

fn matrix(t: &MethodTableau, m: M) -> &Matrix {
    match m {
        M::A0 => &t.a0,
        M::B0 => &t.b0,
        M::A1 => &t.a1,
        M::B1 => &t.b1,
        M::Bh => t.bhat1.as_ref().unwrap_or(&t.b1),
    }
}

fn eval_v(t: &MethodTableau, v: &V, len: usize) -> Vec<f64> {
    match v {
        V::One => vec![1.0; len],
        V::Mul(m, inner) => {
            let (rows, cols) = match m {
                M::A0 => (t.s1, t.s1),
                M::B0 => (t.s1, t.s2),
                M::A1 => (t.s2, t.s1),
                M::B1 | M::Bh => (t.s2, t.s2),
            };
            debug_assert_eq!(rows, len);
            let x = eval_v(t, inner, cols);
            let a = matrix(t, *m);
            (0..rows)
                .map(|i| {
                    (0..cols)
                        .map(|j| a.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0) * x[j])
                        .sum()
                })
                .collect()
        }
        V::Had(vs) => {
            let mut out = vec![1.0; len];
            for v in vs {
                for (o, x) in out.iter_mut().zip(eval_v(t, v, len)) {
                    *o *= x;
                }
            }
            out
        }
    }
}

fn eval_reduced(t: &MethodTableau, r: &Reduced) -> f64 {
    let (w, len) = match r.weight {
        W::Alpha => (&t.alpha, t.s1),
        W::Beta => (&t.beta, t.s2),
    };
    let v = eval_v(t, &r.vector, len);
    (0..len)
        .map(|i| w.get(i).copied().unwrap_or(0.0) * v[i])
        .sum()
}

fn ito_system() -> Vec<Reduced> {
    use M::*;
    use W::*;
    vec![
        red(Alpha, one(), (1, 1)),
        red(Beta, one(), (1, 1)),
        red(Alpha, mul(A0, one()), (1, 2)),
        red(Alpha, mul(B0, one()), (1, 2)),
        // target c, filled in by the caller
        red(Alpha, pow(|| mul(B0, one()), 2), (0, 1)),
        red(Beta, mul(A1, one()), (1, 2)),
        red(Beta, mul(B1, one()), (1, 2)),
        red(Beta, pow(|| mul(B1, one()), 2), (1, 4)),
        red(Beta, mul(B1, mul(B1, one())), (0, 1)),
        red(Beta, mul(A1, mul(B0, one())), (0, 1)),
    ]
}

fn strat_system() -> Vec<Reduced> {
    use M::*;
    use W::*;
    let b = || mul(B1, one());
    let h = || mul(Bh, one());
    vec![
        red(Alpha, one(), (1, 1)),
        red(Beta, one(), (1, 1)),
        red(Beta, h(), (1, 2)),
        red(Alpha, mul(A0, one()), (1, 2)),
        red(Alpha, mul(B0, one()), (1, 2)),
        red(Alpha, pow(|| mul(B0, one()), 2), (0, 1)),
        red(Alpha, mul(B0, h()), (1, 4)),
        red(Beta, mul(A1, one()), (1, 2)),
        red(Beta, had(vec![h(), mul(A1, one())]), (1, 4)),
        red(Beta, mul(Bh, mul(A1, one())), (1, 4)),
        red(Beta, b(), (1, 2)),
        red(Beta, pow(b, 2), (1, 4)),
        red(Beta, mul(Bh, mul(B1, h())), (1, 8)),
        red(Beta, had(vec![h(), mul(B1, h())]), (1, 8)),
        red(Beta, had(vec![h(), b(), b()]), (1, 8)),
        red(Beta, had(vec![b(), mul(Bh, b())]), (1, 8)),
        red(Beta, mul(Bh, pow(b, 2)), (1, 8)),
        red(Beta, had(vec![b(), h()]), (1, 4)),
        red(Beta, mul(Bh, b()), (1, 4)),
        red(Beta, mul(B1, h()), (1, 4)),
        red(Beta, had(vec![h(), mul(Bh, h())]), (1, 8)),
        red(Beta, mul(Bh, pow(h, 2)), (1, 12)),
        red(Beta, mul(Bh, mul(Bh, h())), (1, 24)),
        red(Beta, pow(h, 3), (1, 4)),
        red(Beta, pow(h, 2), (1, 3)),
        red(Beta, mul(Bh, h()), (1, 6)),
        red(Beta, mul(A1, mul(B0, one())), (0, 1)),
    ]
}

/// Item number of the condition whose target is the moment parameter `c`.
fn c_condition(calculus: Calculus) -> usize {
    match calculus {
        Calculus::Ito => 5,
        Calculus::Stratonovich => 6,
    }
}

/// Reduced conditions for the method's calculus; the last item is only
/// included for the `c = 1/2` variant.
pub fn check_reduced(t: &MethodTableau) -> ConditionReport {
    let system = match t.calculus {
        Calculus::Ito => ito_system(),
        Calculus::Stratonovich => strat_system(),
    };
    let count = if t.half_variant() {
        system.len()
    } else {
        system.len() - 1
    };
    let records = system
        .iter()
        .take(count)
        .enumerate()
        .map(|(i, r)| {
            let id = i + 1;
            let (target, description) = if id == c_condition(t.calculus) {
                let d = r.describe();
                (t.c, format!("{}c", d.trim_end_matches('0')))
            } else {
                (r.target.0 as f64 / r.target.1 as f64, r.describe())
            };
            record(
                id.to_string(),
                description,
                eval_reduced(t, r),
                target,
                target,
                t.calculus,
                REDUCED_TOLERANCE,
                false,
            )
        })
        .collect();
    ConditionReport::new(&t.name, t.calculus, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forests::{enumerate, generator, gl_exponential, rk_coefficient_map_labeled};
    use crate::tableau::{registry_all, registry_get};

    fn bdk1() -> MethodTableau {
        registry_get("BDK1").unwrap()
    }

    #[test]
    fn table_covers_every_forest_of_order_two() {
        let mut keys: Vec<String> = TABLE.iter().map(|r| r.forest().key().to_string()).collect();
        keys.sort();
        let mut all: Vec<String> = enumerate(2, false)
            .unwrap()
            .iter()
            .map(|f| f.key().to_string())
            .collect();
        all.sort();
        assert_eq!(keys, all);
        assert_eq!(TABLE.iter().filter(|r| r.is_exotic()).count(), 34);
        for r in &TABLE {
            assert_eq!(r.forest().is_exotic(), r.is_exotic(), "{}", r.label);
        }
    }

    #[test]
    fn targets_match_the_exact_flow() {
        for calc in [Calculus::Ito, Calculus::Stratonovich] {
            let e = gl_exponential(&generator(calc), 2).unwrap();
            for r in &TABLE {
                assert_eq!(
                    e.get(&r.forest()).unwrap(),
                    r.target(calc),
                    "{} {calc:?}",
                    r.label
                );
            }
        }
    }

    #[test]
    fn single_rows() {
        let t = bdk1();
        let dot = TABLE[0].forest();
        assert!((evaluate_table_condition(&t, &dot).unwrap() - 1.0).abs() < 1e-14);
        assert!(
            evaluate_table_condition(&t, &TABLE[2].forest())
                .unwrap()
                .abs()
                < 1e-15
        );
        let deep = crate::forests::parse_forest("[0[0[0]]]").unwrap();
        assert!(matches!(
            evaluate_table_condition(&t, &deep),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn registered_methods_pass_the_table() {
        for t in registry_all().into_iter().filter(|t| t.weak_order >= 2) {
            let rep = check_all_table(&t);
            assert_eq!(rep.records.len(), 43);
            let bad: Vec<String> = rep
                .failures()
                .map(|r| format!("{} {}", r.id, r.lhs))
                .collect();
            assert!(rep.all_satisfied, "{}: {bad:?}", t.name);
        }
    }

    #[test]
    fn euler_maruyama_passes_order_one_rows_only() {
        let t = registry_get("EulerMaruyama").unwrap();
        let rep = check_all_table(&t);
        assert!(rep.records[..3].iter().all(|r| r.satisfied));
        assert!(!rep.records[3].satisfied);
        assert!(!rep.all_satisfied);
    }

    #[test]
    fn calculus_separation() {
        let rep = check_table_as(&bdk1(), Calculus::Stratonovich);
        assert!(!rep.records[2].satisfied);
        assert_eq!(rep.records[2].target, 0.5);
    }

    #[test]
    fn noise_labels_are_interchangeable() {
        for t in registry_all() {
            for r in TABLE.iter().filter(|r| r.forest().num_classes() == 2) {
                let f = r.forest();
                let a = rk_coefficient_map_labeled(&t, &f, &[1, 2]).unwrap();
                let b = rk_coefficient_map_labeled(&t, &f, &[2, 1]).unwrap();
                // equal up to the order of floating-point summation over atoms
                assert!((a - b).abs() <= 1e-15, "{} {}: {a} vs {b}", t.name, r.label);
            }
        }
    }

    #[test]
    fn superfluous_rows() {
        let labels: Vec<&str> = TABLE
            .iter()
            .filter(|r| r.superfluous())
            .map(|r| r.label)
            .collect();
        assert_eq!(labels, ["G", "P", "Q", "S", "V", "Y", "FB"]);
        for t in registry_all() {
            for r in TABLE.iter().filter(|r| r.superfluous()) {
                assert!(evaluate_table_condition(&t, &r.forest()).unwrap().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reduced_counts_and_values() {
        let rep = check_reduced(&bdk1());
        assert_eq!(rep.records.len(), 10);
        assert!(rep.all_satisfied);
        assert!((rep.records[4].lhs - 0.5).abs() < 1e-15);

        let bdk2 = check_reduced(&registry_get("BDK2").unwrap());
        assert!((bdk2.records[4].lhs - 0.5).abs() < 1e-13);

        let bdk3 = check_reduced(&registry_get("BDK3").unwrap());
        assert_eq!(bdk3.records.len(), 9);
        assert!((bdk3.records[4].lhs - 1.0 / 3.0).abs() < 1e-15);
        assert!(bdk3.all_satisfied);

        for name in ["StratoExplicit24", "StratoDetOrder3"] {
            let rep = check_reduced(&registry_get(name).unwrap());
            assert!(rep.records.len() >= 26, "{name}");
            assert!(rep.all_satisfied, "{name}");
        }
    }

    #[test]
    fn reduced_implies_table() {
        for t in registry_all() {
            if check_reduced(&t).all_satisfied {
                assert!(check_all_table(&t).all_satisfied, "{}", t.name);
            }
        }
    }

    #[test]
    fn alpha_violation_is_reported() {
        let mut t = bdk1();
        t.alpha = vec![0.5, 1.0 / 3.0];
        let rep = check_reduced(&t);
        let first = &rep.records[0];
        assert_eq!(first.id, "1");
        assert!(!first.satisfied);
        assert!((first.lhs - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn rendering() {
        let rep = check_all_table(&bdk1());
        let text = rep.to_text();
        assert!(text.contains("43 of 43 satisfied"));
        let v: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(v["records"].as_array().unwrap().len(), 43);
        assert_eq!(v["all_satisfied"], true);
    }
}
