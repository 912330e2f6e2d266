//! Checks shared by the property suite and the acceptance target. Each
//! returns the list of violations found.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use srk_core::conditions::TABLE;
use srk_core::forests::{
    bck_coproduct, canonicalize, enumerate, finer_decorations, generator, gl_exponential,
    DecoratedForest,
};
use srk_core::randvars::{enumerate_atoms, AtomTable, Factor, RvFamily};
use srk_core::tableau::{registry_all, Calculus};

pub const MOMENT_DEGREE: usize = 5;
pub const MOMENT_TOLERANCE: f64 = 1e-13;
pub const RELABELINGS: u32 = 500;

/// The distinct random variable families of the registry.
pub fn registry_families() -> Vec<RvFamily> {
    let mut out: Vec<RvFamily> = Vec::new();
    for t in registry_all() {
        let f = RvFamily::for_method(&t).unwrap();
        if !out.contains(&f) {
            out.push(f);
        }
    }
    out
}

/// Every nonconstant factor at m = 2.
fn factors() -> Vec<Factor> {
    let mut v = vec![Factor::Theta(1), Factor::Theta(2)];
    for p in 0..=2 {
        for q in 0..=2 {
            if (p, q) != (0, 0) {
                v.push(Factor::BigTheta(p, q));
            }
        }
    }
    v
}

/// Multisets of factors of size 1..=degree.
fn monomials(degree: usize) -> Vec<Vec<Factor>> {
    fn rec(
        fs: &[Factor],
        start: usize,
        left: usize,
        cur: &mut Vec<Factor>,
        out: &mut Vec<Vec<Factor>>,
    ) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if left == 0 {
            return;
        }
        for i in start..fs.len() {
            cur.push(fs[i]);
            rec(fs, i, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(&factors(), 0, degree, &mut Vec::new(), &mut out);
    out
}

fn swap(f: Factor) -> Factor {
    let s = |p: usize| match p {
        1 => 2,
        2 => 1,
        p => p,
    };
    match f {
        Factor::Theta(p) => Factor::Theta(s(p)),
        Factor::BigTheta(p, q) => Factor::BigTheta(s(p), s(q)),
    }
}

fn expectation(table: &AtomTable, mono: &[Factor]) -> f64 {
    table.expectation(|d| {
        mono.iter()
            .map(|f| match *f {
                Factor::Theta(p) => d.theta(p),
                Factor::BigTheta(p, q) => d.big_theta(p, q),
            })
            .product()
    })
}

/// Stochastic indices: `theta_p` with `p != 0` and `Theta_{., q}` with
/// `q != 0`.
fn stochastic_count(mono: &[Factor]) -> usize {
    mono.iter()
        .filter(|f| match **f {
            Factor::Theta(p) => p != 0,
            Factor::BigTheta(_, q) => q != 0,
        })
        .count()
}

pub fn number_of_monomials() -> usize {
    monomials(MOMENT_DEGREE).len()
}

/// Swapping noise labels 1 and 2 leaves every moment unchanged.
pub fn permutation_invariance_violations() -> Vec<String> {
    let mut bad = Vec::new();
    for fam in registry_families() {
        let table = enumerate_atoms(&fam, 2).unwrap();
        for mono in monomials(MOMENT_DEGREE) {
            let swapped: Vec<Factor> = mono.iter().map(|f| swap(*f)).collect();
            let (a, b) = (expectation(&table, &mono), expectation(&table, &swapped));
            if (a - b).abs() > MOMENT_TOLERANCE * (1.0 + a.abs()) {
                bad.push(format!("{fam:?} {mono:?}: {a} vs {b}"));
            }
        }
    }
    bad
}

/// Moments with an odd number of stochastic indices vanish.
pub fn odd_moment_violations() -> Vec<String> {
    let mut bad = Vec::new();
    for fam in registry_families() {
        let table = enumerate_atoms(&fam, 2).unwrap();
        for mono in monomials(MOMENT_DEGREE) {
            if stochastic_count(&mono) % 2 == 1 {
                let a = expectation(&table, &mono);
                if a.abs() > MOMENT_TOLERANCE {
                    bad.push(format!("{fam:?} {mono:?}: {a}"));
                }
            }
        }
    }
    bad
}

/// Node permutation and renaming of the nonzero decoration classes.
pub fn relabeled(f: &DecoratedForest, perm: &[usize], names: &[u32]) -> DecoratedForest {
    let n = f.len();
    let mut parent = vec![None; n];
    let mut deco = vec![0; n];
    let classes: BTreeSet<u32> = f
        .decorations()
        .iter()
        .copied()
        .filter(|d| *d != 0)
        .collect();
    let rename: BTreeMap<u32, u32> = classes.iter().zip(names).map(|(c, k)| (*c, *k)).collect();
    for v in 0..n {
        parent[perm[v]] = f.parents()[v].map(|p| perm[p]);
        let d = f.decorations()[v];
        deco[perm[v]] = if d == 0 { 0 } else { rename[&d] };
    }
    canonicalize(&parent, &deco).unwrap()
}

/// Random relabelings of every forest of order at most two keep the key.
pub fn relabeling_violations() -> Vec<String> {
    let mut bad = Vec::new();
    for f in enumerate(2, false).unwrap() {
        let n = f.len();
        let mut runner = TestRunner::new_with_rng(
            Config {
                cases: RELABELINGS,
                failure_persistence: None,
                ..Config::default()
            },
            TestRng::deterministic_rng(RngAlgorithm::ChaCha),
        );
        let strategy = (
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            proptest::sample::subsequence((1u32..=40).collect::<Vec<_>>(), 3).prop_shuffle(),
        );
        let result = runner.run(&strategy, |(perm, names)| {
            let g = relabeled(&f, &perm, &names);
            prop_assert_eq!(g.key(), f.key());
            Ok(())
        });
        if let Err(e) = result {
            bad.push(format!("{f}: {e}"));
        }
    }
    bad
}

type Triple = BTreeMap<(String, String, String), i64>;

fn coproduct(f: &DecoratedForest) -> Vec<(DecoratedForest, DecoratedForest, i64)> {
    if f.is_empty() {
        return vec![(f.clone(), f.clone(), 1)];
    }
    bck_coproduct(f)
        .unwrap()
        .iter()
        .map(|(l, r, c)| (l.clone(), r.clone(), c))
        .collect()
}

/// `(Delta x id) Delta = (id x Delta) Delta` on every exotic forest of
/// order at most two.
pub fn coassociativity_violations() -> Vec<String> {
    let mut bad = Vec::new();
    let mut checked = 0;
    for f in enumerate(2, true).unwrap() {
        let mut left = Triple::new();
        let mut right = Triple::new();
        for (l, r, c) in coproduct(&f) {
            for (a, b, c2) in coproduct(&l) {
                *left
                    .entry((
                        a.key().to_string(),
                        b.key().to_string(),
                        r.key().to_string(),
                    ))
                    .or_default() += c * c2;
            }
            for (a, b, c2) in coproduct(&r) {
                *right
                    .entry((
                        l.key().to_string(),
                        a.key().to_string(),
                        b.key().to_string(),
                    ))
                    .or_default() += c * c2;
            }
        }
        left.retain(|_, v| *v != 0);
        right.retain(|_, v| *v != 0);
        if left != right {
            bad.push(f.to_string());
        }
        checked += 1;
    }
    assert_eq!(checked, 34);
    bad
}

/// On every non-exotic tabulated forest: refinement multiplicities equal
/// `sigma(coarse) / sigma(fine)`, and both target columns equal the
/// multiplicity-weighted sums of the exact-flow coefficients.
pub fn isserlis_violations() -> Vec<String> {
    let mut bad = Vec::new();
    let e_ito = gl_exponential(&generator(Calculus::Ito), 2).unwrap();
    let e_strat = gl_exponential(&generator(Calculus::Stratonovich), 2).unwrap();
    let rows: Vec<_> = TABLE.iter().filter(|r| !r.is_exotic()).collect();
    assert_eq!(rows.len(), 9);
    for row in rows {
        let coarse = row.forest();
        let fine = finer_decorations(&coarse, true).unwrap();
        for (g, m) in &fine {
            if m * g.symmetry() != coarse.symmetry() {
                bad.push(format!("{}: {coarse} -> {g} has m = {m}", row.label));
            }
        }
        for (calc, e) in [(Calculus::Ito, &e_ito), (Calculus::Stratonovich, &e_strat)] {
            let sum = fine
                .iter()
                .fold(num_rational::Rational64::from_integer(0), |s, (g, m)| {
                    s + e.get(g).unwrap() * num_rational::Rational64::from_integer(*m as i64)
                });
            if sum != row.target(calc) {
                bad.push(format!(
                    "{} {calc}: {sum} vs {}",
                    row.label,
                    row.target(calc)
                ));
            }
        }
    }
    bad
}
