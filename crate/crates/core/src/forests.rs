//! Decorated and exotic forests and their Hopf-algebraic operations.
//!
//! A forest is stored in canonical form: nodes in preorder of the canonical
//! key, nonzero decoration classes relabelled `1..=k`. Keys look like
//! `[0[1][1]]·[0]` (a black root carrying a liana pair, next to a black
//! node); the empty forest is `1`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use num_rational::Rational64;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::randvars::{enumerate_atoms, RvFamily};
use crate::tableau::{Calculus, MethodTableau};

pub type Coef = Rational64;

/// Most nonzero classes a forest may carry; canonicalisation tries every
/// relabelling of the classes.
pub const MAX_CLASSES: usize = 7;
pub const MAX_ENUMERATION_ORDER: usize = 3;
/// Distinct nonzero classes supported by [`rk_coefficient_map`].
pub const MAX_RK_CLASSES: usize = 3;

const SEPARATOR: &str = "·";

#[derive(Clone, Debug)]
pub struct DecoratedForest {
    parent: Vec<Option<usize>>,
    deco: Vec<u32>,
    key: String,
}

impl PartialEq for DecoratedForest {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for DecoratedForest {}

impl Hash for DecoratedForest {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key.hash(state)
    }
}

impl PartialOrd for DecoratedForest {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sorted by order, then key.
impl Ord for DecoratedForest {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.order(), &self.key).cmp(&(other.order(), &other.key))
    }
}

impl fmt::Display for DecoratedForest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key)
    }
}

fn children_of(parent: &[Option<usize>]) -> Vec<Vec<usize>> {
    let mut ch = vec![Vec::new(); parent.len()];
    for (v, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            ch[*p].push(v);
        }
    }
    ch
}

fn roots_of(parent: &[Option<usize>]) -> Vec<usize> {
    (0..parent.len()).filter(|&v| parent[v].is_none()).collect()
}

fn encode(v: usize, children: &[Vec<usize>], labels: &[u32]) -> String {
    let mut parts: Vec<String> = children[v]
        .iter()
        .map(|&c| encode(c, children, labels))
        .collect();
    parts.sort();
    let mut s = format!("[{}", labels[v]);
    for p in parts {
        s.push_str(&p);
    }
    s.push(']');
    s
}

fn forest_string(parent: &[Option<usize>], children: &[Vec<usize>], labels: &[u32]) -> String {
    if parent.is_empty() {
        return "1".to_string();
    }
    let mut trees: Vec<String> = roots_of(parent)
        .into_iter()
        .map(|r| encode(r, children, labels))
        .collect();
    trees.sort();
    trees.join(SEPARATOR)
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Map nonzero decorations to class indices `0..k` in first-seen order.
fn class_index(deco: &[u32]) -> (Vec<Option<usize>>, usize) {
    let mut seen: Vec<u32> = Vec::new();
    let idx = deco
        .iter()
        .map(|&d| {
            if d == 0 {
                None
            } else if let Some(i) = seen.iter().position(|&s| s == d) {
                Some(i)
            } else {
                seen.push(d);
                Some(seen.len() - 1)
            }
        })
        .collect();
    (idx, seen.len())
}

fn relabel(cls: &[Option<usize>], perm: &[usize]) -> Vec<u32> {
    cls.iter()
        .map(|c| c.map_or(0, |c| perm[c] as u32 + 1))
        .collect()
}

/// Canonical form of the forest with parent array `parent` and decoration
/// `deco` (any nonzero integers may name the classes).
pub fn canonicalize(parent: &[Option<usize>], deco: &[u32]) -> Result<DecoratedForest> {
    let n = parent.len();
    if deco.len() != n {
        return Err(Error::Structure(format!(
            "{} nodes but {} decorations",
            n,
            deco.len()
        )));
    }
    for (v, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            if p >= n {
                return Err(Error::Structure(format!(
                    "node {v} has parent {p} out of range"
                )));
            }
        }
    }
    for start in 0..n {
        let mut v = start;
        for _ in 0..=n {
            match parent[v] {
                Some(p) => v = p,
                None => break,
            }
        }
        if parent[v].is_some() {
            return Err(Error::Structure(format!("cycle through node {start}")));
        }
    }
    let (cls, k) = class_index(deco);
    if k > MAX_CLASSES {
        return Err(Error::Capacity {
            what: format!("{k} decoration classes"),
            limit: MAX_CLASSES,
        });
    }
    let mut sizes = vec![0usize; k];
    for c in cls.iter().flatten() {
        sizes[*c] += 1;
    }
    if let Some(c) = sizes.iter().position(|s| s % 2 == 1) {
        let d = deco[cls.iter().position(|x| *x == Some(c)).unwrap()];
        return Err(Error::Structure(format!(
            "decoration {d} appears {} times; nonzero classes must have even size",
            sizes[c]
        )));
    }
    let children = children_of(parent);
    let key = permutations(k)
        .iter()
        .map(|perm| forest_string(parent, &children, &relabel(&cls, perm)))
        .min()
        .expect("at least the identity permutation");
    let (parent, deco) = parse_raw(&key)?;
    Ok(DecoratedForest { parent, deco, key })
}

/// Parse a bracket string into preorder parent and decoration arrays.
fn parse_raw(s: &str) -> Result<(Vec<Option<usize>>, Vec<u32>)> {
    let trimmed = s.trim();
    let mut parent = Vec::new();
    let mut deco = Vec::new();
    if trimmed == "1" || trimmed.is_empty() {
        return Ok((parent, deco));
    }
    let err = |msg: &str| Error::Parse(format!("{msg} in forest `{s}`"));
    let chars: Vec<char> = trimmed.chars().collect();
    let mut stack: Vec<usize> = Vec::new();
    let mut i = 0;
    let mut expect_tree = true;
    while i < chars.len() {
        let ch = chars[i];
        match ch {
            c if c.is_whitespace() => i += 1,
            '·' | '.' | '*' if stack.is_empty() => {
                if expect_tree {
                    return Err(err("misplaced separator"));
                }
                expect_tree = true;
                i += 1;
            }
            '[' => {
                if stack.is_empty() && !expect_tree {
                    return Err(err("missing separator between trees"));
                }
                i += 1;
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if start == i {
                    return Err(err("missing decoration"));
                }
                let label: String = chars[start..i].iter().collect();
                let label: u32 = label.parse().map_err(|_| err("bad decoration"))?;
                parent.push(stack.last().copied());
                deco.push(label);
                stack.push(parent.len() - 1);
            }
            ']' => {
                if stack.pop().is_none() {
                    return Err(err("unbalanced `]`"));
                }
                if stack.is_empty() {
                    expect_tree = false;
                }
                i += 1;
            }
            _ => return Err(err(&format!("unexpected character `{ch}`"))),
        }
    }
    if !stack.is_empty() {
        return Err(err("unbalanced `[`"));
    }
    if expect_tree {
        return Err(err("trailing separator"));
    }
    Ok((parent, deco))
}

/// Parse and canonicalise a forest written in bracket notation.
pub fn parse_forest(s: &str) -> Result<DecoratedForest> {
    let (parent, deco) = parse_raw(s)?;
    canonicalize(&parent, &deco)
}

impl std::str::FromStr for DecoratedForest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_forest(s)
    }
}

fn factorial(n: usize) -> i64 {
    (1..=n as i64).product()
}

impl DecoratedForest {
    pub fn empty() -> Self {
        DecoratedForest {
            parent: Vec::new(),
            deco: Vec::new(),
            key: "1".to_string(),
        }
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn decorations(&self) -> &[u32] {
        &self.deco
    }

    pub fn roots(&self) -> Vec<usize> {
        roots_of(&self.parent)
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        children_of(&self.parent)
    }

    /// Number of distinct nonzero decorations (labelled `1..=k`).
    pub fn num_classes(&self) -> usize {
        self.deco.iter().copied().max().unwrap_or(0) as usize
    }

    fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_classes()];
        for &d in &self.deco {
            if d > 0 {
                sizes[d as usize - 1] += 1;
            }
        }
        sizes
    }

    pub fn order(&self) -> usize {
        let zeros = self.deco.iter().filter(|&&d| d == 0).count();
        zeros + (self.len() - zeros) / 2
    }

    pub fn is_exotic(&self) -> bool {
        self.class_sizes().iter().all(|&s| s == 2)
    }

    /// Number of automorphisms that carry the decoration to an equivalent one.
    pub fn symmetry(&self) -> u64 {
        let children = self.children();
        let labels = &self.deco;
        fn aut(v: usize, children: &[Vec<usize>], labels: &[u32]) -> u64 {
            let mut count = 1u64;
            let mut codes: Vec<String> = Vec::new();
            for &c in &children[v] {
                count *= aut(c, children, labels);
                codes.push(encode(c, children, labels));
            }
            count * multiplicity_factorials(codes)
        }
        let mut labelled = 1u64;
        let mut codes = Vec::new();
        for r in self.roots() {
            labelled *= aut(r, &children, labels);
            codes.push(encode(r, &children, labels));
        }
        labelled *= multiplicity_factorials(codes);
        let cls: Vec<Option<usize>> = labels
            .iter()
            .map(|&d| if d == 0 { None } else { Some(d as usize - 1) })
            .collect();
        let stabiliser = permutations(self.num_classes())
            .iter()
            .filter(|perm| forest_string(&self.parent, &children, &relabel(&cls, perm)) == self.key)
            .count() as u64;
        labelled * stabiliser
    }

    /// Trees joined by shared decorations, as lists of node ids.
    pub fn liana_components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut tree_of = vec![0usize; n];
        for v in 0..n {
            let mut r = v;
            while let Some(p) = self.parent[r] {
                r = p;
            }
            tree_of[v] = r;
        }
        // union-find over roots
        let mut link: Vec<usize> = (0..n).collect();
        fn find(link: &mut [usize], x: usize) -> usize {
            let mut x = x;
            while link[x] != x {
                link[x] = link[link[x]];
                x = link[x];
            }
            x
        }
        let k = self.num_classes();
        let mut first_tree: Vec<Option<usize>> = vec![None; k + 1];
        for v in 0..n {
            let d = self.deco[v] as usize;
            if d == 0 {
                continue;
            }
            match first_tree[d] {
                None => first_tree[d] = Some(tree_of[v]),
                Some(t) => {
                    let a = find(&mut link, t);
                    let b = find(&mut link, tree_of[v]);
                    link[a] = b;
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..n {
            let g = find(&mut link, tree_of[v]);
            groups.entry(g).or_default().push(v);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort();
        out
    }

    /// The sub-forest on `nodes` (closed under taking subtrees is not
    /// required; nodes whose parent is excluded become roots).
    fn restrict(&self, nodes: &[bool]) -> Result<DecoratedForest> {
        let mut index = vec![usize::MAX; self.len()];
        let mut count = 0;
        for v in 0..self.len() {
            if nodes[v] {
                index[v] = count;
                count += 1;
            }
        }
        let mut parent = Vec::with_capacity(count);
        let mut deco = Vec::with_capacity(count);
        for v in 0..self.len() {
            if nodes[v] {
                parent.push(self.parent[v].filter(|&p| nodes[p]).map(|p| index[p]));
                deco.push(self.deco[v]);
            }
        }
        canonicalize(&parent, &deco)
    }
}

fn multiplicity_factorials(mut codes: Vec<String>) -> u64 {
    codes.sort();
    let mut out = 1u64;
    let mut i = 0;
    while i < codes.len() {
        let mut j = i;
        while j < codes.len() && codes[j] == codes[i] {
            j += 1;
        }
        out *= factorial(j - i) as u64;
        i = j;
    }
    out
}

pub fn symmetry(f: &DecoratedForest) -> u64 {
    f.symmetry()
}

/// Disjoint union `a · b`, with the classes of `b` renamed apart from `a`.
pub fn concat(a: &DecoratedForest, b: &DecoratedForest) -> DecoratedForest {
    let off = a.len();
    let shift = a.num_classes() as u32;
    let mut parent = a.parent.clone();
    let mut deco = a.deco.clone();
    parent.extend(b.parent.iter().map(|p| p.map(|p| p + off)));
    deco.extend(b.deco.iter().map(|&d| if d == 0 { 0 } else { d + shift }));
    canonicalize(&parent, &deco).expect("union of valid forests is valid")
}

/// Grossman-Larson product of two single forests, as (forest, count) terms.
fn gl_single(a: &DecoratedForest, b: &DecoratedForest) -> Vec<(DecoratedForest, i64)> {
    let nb = b.len();
    let shift = b.num_classes() as u32;
    let roots = a.roots();
    let mut parent: Vec<Option<usize>> = b.parent.clone();
    let mut deco: Vec<u32> = b.deco.clone();
    parent.extend(a.parent.iter().map(|p| p.map(|p| p + nb)));
    deco.extend(a.deco.iter().map(|&d| if d == 0 { 0 } else { d + shift }));

    let mut acc: BTreeMap<String, (DecoratedForest, i64)> = BTreeMap::new();
    // choice[r] = 0 keeps root r, t + 1 grafts it onto node t of b
    let mut choice = vec![0usize; roots.len()];
    loop {
        for (r, &c) in roots.iter().zip(&choice) {
            parent[r + nb] = if c == 0 { None } else { Some(c - 1) };
        }
        let f = canonicalize(&parent, &deco).expect("grafting keeps forests valid");
        acc.entry(f.key.clone()).or_insert((f, 0)).1 += 1;
        let mut i = 0;
        while i < choice.len() {
            choice[i] += 1;
            if choice[i] <= nb {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
        if i == choice.len() {
            break;
        }
    }
    acc.into_values().collect()
}

// ---------------------------------------------------------------------------
// Linear combinations

/// Finite linear combination of forests with rational coefficients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForestSum {
    terms: BTreeMap<String, (DecoratedForest, Coef)>,
}

impl ForestSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn unit() -> Self {
        Self::from_forest(DecoratedForest::empty())
    }

    pub fn from_forest(f: DecoratedForest) -> Self {
        let mut s = Self::new();
        s.add_term(f, Coef::one());
        s
    }

    pub fn add_term(&mut self, f: DecoratedForest, c: Coef) {
        if c.is_zero() {
            return;
        }
        let key = f.key.clone();
        let entry = self.terms.entry(key.clone()).or_insert((f, Coef::zero()));
        entry.1 += c;
        if entry.1.is_zero() {
            self.terms.remove(&key);
        }
    }

    pub fn add(&mut self, other: &ForestSum) {
        for (f, c) in other.terms.values() {
            self.add_term(f.clone(), *c);
        }
    }

    pub fn scaled(&self, c: Coef) -> ForestSum {
        let mut s = ForestSum::new();
        for (f, x) in self.terms.values() {
            s.add_term(f.clone(), *x * c);
        }
        s
    }

    pub fn coefficient(&self, f: &DecoratedForest) -> Coef {
        self.terms.get(&f.key).map_or(Coef::zero(), |t| t.1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DecoratedForest, &Coef)> {
        self.terms.values().map(|(f, c)| (f, c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// The common order of all terms, if there is one.
    pub fn homogeneous_order(&self) -> Option<usize> {
        let mut orders = self.terms.values().map(|(f, _)| f.order());
        let first = orders.next()?;
        orders.all(|o| o == first).then_some(first)
    }
}

pub fn gl_product(a: &ForestSum, b: &ForestSum) -> ForestSum {
    let mut out = ForestSum::new();
    for (fa, ca) in a.terms.values() {
        for (fb, cb) in b.terms.values() {
            for (f, n) in gl_single(fa, fb) {
                out.add_term(f, *ca * *cb * Coef::from_integer(n));
            }
        }
    }
    out
}

pub fn concat_product(a: &ForestSum, b: &ForestSum) -> ForestSum {
    let mut out = ForestSum::new();
    for (fa, ca) in a.terms.values() {
        for (fb, cb) in b.terms.values() {
            out.add_term(concat(fa, fb), *ca * *cb);
        }
    }
    out
}

/// Linear map on forests, defined on every forest up to `max_order`.
/// Values are stored for exotic forests; decorated forests are evaluated
/// through their exotic refinements.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMap {
    pub max_order: usize,
    values: BTreeMap<String, Coef>,
}

impl CoefficientMap {
    pub fn new(max_order: usize) -> Self {
        CoefficientMap {
            max_order,
            values: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, f: &DecoratedForest, c: Coef) {
        if c.is_zero() {
            self.values.remove(&f.key);
        } else {
            self.values.insert(f.key.clone(), c);
        }
    }

    /// `None` above `max_order`.
    pub fn get(&self, f: &DecoratedForest) -> Option<Coef> {
        if f.order() > self.max_order {
            return None;
        }
        if f.is_exotic() {
            return Some(self.values.get(&f.key).copied().unwrap_or_else(Coef::zero));
        }
        let refined = finer_decorations(f, true).ok()?;
        Some(
            refined
                .iter()
                .map(|(g, m)| {
                    self.values.get(&g.key).copied().unwrap_or_else(Coef::zero)
                        * Coef::from_integer(*m as i64)
                })
                .sum(),
        )
    }

    /// Nonzero stored values.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Coef)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Coefficient map `sigma(pi) * c(pi)` of a series `sum c(pi) pi`.
    pub fn from_series(s: &ForestSum, max_order: usize) -> Self {
        let mut m = CoefficientMap::new(max_order);
        for (f, c) in s.iter() {
            if f.order() <= max_order {
                m.set(f, *c * Coef::from_integer(f.symmetry() as i64));
            }
        }
        m
    }
}

fn must(s: &str) -> DecoratedForest {
    parse_forest(s).expect("valid literal forest")
}

/// Generator of the SDE as a forest series: `• + L/2` (Itô), plus `C/2`
/// with `C` the two-node liana chain for Stratonovich.
pub fn generator(calculus: Calculus) -> ForestSum {
    let half = Coef::new(1, 2);
    let mut l = ForestSum::from_forest(must("[0]"));
    l.add_term(must("[1]·[1]"), half);
    if calculus == Calculus::Stratonovich {
        l.add_term(must("[1[1]]"), half);
    }
    l
}

/// Coefficient map `l` of the generator.
pub fn generator_map(calculus: Calculus) -> CoefficientMap {
    CoefficientMap::from_series(&generator(calculus), 1)
}

/// `e(pi) = sigma(pi) * [pi] exp⋄(l)` for every forest up to `max_order`.
pub fn gl_exponential(l: &ForestSum, max_order: usize) -> Result<CoefficientMap> {
    if l.homogeneous_order() != Some(1) || l.iter().any(|(f, _)| !f.is_exotic()) {
        return Err(Error::InvalidArgument(
            "generator must be a sum of exotic forests of order 1".into(),
        ));
    }
    let mut series = ForestSum::unit();
    let mut power = ForestSum::unit();
    for n in 1..=max_order {
        power = gl_product(&power, l);
        series.add(&power.scaled(Coef::new(1, factorial(n))));
    }
    Ok(CoefficientMap::from_series(&series, max_order))
}

// ---------------------------------------------------------------------------
// Coproducts

/// Sum of tensor products `left ⊗ right` with integer multiplicities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorSum {
    terms: BTreeMap<(String, String), (DecoratedForest, DecoratedForest, i64)>,
}

impl TensorSum {
    fn add(&mut self, l: DecoratedForest, r: DecoratedForest, n: i64) {
        let key = (l.key.clone(), r.key.clone());
        self.terms.entry(key).or_insert((l, r, 0)).2 += n;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DecoratedForest, &DecoratedForest, i64)> {
        self.terms.values().map(|(l, r, n)| (l, r, *n))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Multiplicity of `l ⊗ r`.
    pub fn count(&self, l: &DecoratedForest, r: &DecoratedForest) -> i64 {
        self.terms
            .get(&(l.key.clone(), r.key.clone()))
            .map_or(0, |t| t.2)
    }

    pub fn total(&self) -> i64 {
        self.terms.values().map(|t| t.2).sum()
    }
}

/// Admissible-cut coproduct. Each term is `P_c ⊗ R_c`: the pruned subtrees
/// on the left, the part containing the roots on the right.
pub fn bck_coproduct(f: &DecoratedForest) -> Result<TensorSum> {
    if !f.is_exotic() {
        return Err(Error::Structure(format!("{f} is not exotic")));
    }
    let n = f.len();
    if n > 20 {
        return Err(Error::Capacity {
            what: format!("coproduct of a forest with {n} nodes"),
            limit: 20,
        });
    }
    let mut out = TensorSum::default();
    'cuts: for mask in 0u32..(1 << n) {
        let in_cut = |v: usize| mask >> v & 1 == 1;
        let mut pruned = vec![false; n];
        for v in 0..n {
            let mut a = f.parent[v];
            while let Some(p) = a {
                if in_cut(p) {
                    if in_cut(v) {
                        continue 'cuts;
                    }
                    pruned[v] = true;
                }
                a = f.parent[p];
            }
            if in_cut(v) {
                pruned[v] = true;
            }
        }
        // lianas may not be severed
        let k = f.num_classes();
        let mut side: Vec<Option<bool>> = vec![None; k + 1];
        for v in 0..n {
            let d = f.deco[v] as usize;
            if d > 0 {
                match side[d] {
                    None => side[d] = Some(pruned[v]),
                    Some(s) if s != pruned[v] => continue 'cuts,
                    _ => {}
                }
            }
        }
        let kept: Vec<bool> = pruned.iter().map(|p| !p).collect();
        out.add(f.restrict(&pruned)?, f.restrict(&kept)?, 1);
    }
    Ok(out)
}

/// All splittings `pi = pi_1 · pi_2` along liana-connected components.
pub fn deshuffle(f: &DecoratedForest) -> TensorSum {
    let comps = f.liana_components();
    let mut out = TensorSum::default();
    for mask in 0u32..(1 << comps.len()) {
        let mut left = vec![false; f.len()];
        for (i, c) in comps.iter().enumerate() {
            if mask >> i & 1 == 1 {
                for &v in c {
                    left[v] = true;
                }
            }
        }
        let right: Vec<bool> = left.iter().map(|b| !b).collect();
        out.add(
            f.restrict(&left).expect("components are valid forests"),
            f.restrict(&right).expect("components are valid forests"),
            1,
        );
    }
    out
}

/// `(a * b)(pi) = sum a(P) b(R)` over the coproduct of `pi`, for every
/// exotic forest in `domain`.
pub fn convolution(
    a: &CoefficientMap,
    b: &CoefficientMap,
    domain: &[DecoratedForest],
) -> Result<CoefficientMap> {
    let max_order = domain.iter().map(|f| f.order()).max().unwrap_or(0);
    let mut out = CoefficientMap::new(max_order.min(a.max_order).min(b.max_order));
    for f in domain {
        let mut total = Coef::zero();
        for (p, r, n) in bck_coproduct(f)?.iter() {
            let (Some(x), Some(y)) = (a.get(p), b.get(r)) else {
                continue;
            };
            total += x * y * Coef::from_integer(n);
        }
        out.set(f, total);
    }
    Ok(out)
}

/// Exotic forests of order at most `max_order`, including the empty one.
fn exotic_domain(max_order: usize) -> Result<Vec<DecoratedForest>> {
    let mut d = vec![DecoratedForest::empty()];
    d.extend(enumerate(max_order, true)?);
    Ok(d)
}

/// Convolution exponential `sum l^{*n} / n!` up to `max_order`.
pub fn convolution_exp(l: &CoefficientMap, max_order: usize) -> Result<CoefficientMap> {
    let domain = exotic_domain(max_order)?;
    if let Some((k, _)) = l.iter().find(|(k, _)| must(k).order() != 1) {
        return Err(Error::InvalidArgument(format!(
            "map must be supported on order-1 forests, found {k}"
        )));
    }
    let mut l = l.clone();
    l.max_order = max_order;
    let mut unit = CoefficientMap::new(max_order);
    unit.set(&DecoratedForest::empty(), Coef::one());
    let mut acc = unit.clone();
    let mut power = unit;
    for n in 1..=max_order {
        power = convolution(&power, &l, &domain)?;
        for f in &domain {
            let add = power.get(f).unwrap_or_else(Coef::zero) * Coef::new(1, factorial(n));
            let cur = acc.get(f).unwrap_or_else(Coef::zero);
            acc.set(f, cur + add);
        }
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Decoration refinements

/// Set partitions of `items` into blocks of even size (size two when
/// `pairs_only`).
fn even_partitions(items: &[usize], pairs_only: bool) -> Vec<Vec<Vec<usize>>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let first = items[0];
    let rest = &items[1..];
    let mut out = Vec::new();
    for mask in 1u32..(1 << rest.len()) {
        let size = mask.count_ones() as usize;
        if size % 2 == 0 || (pairs_only && size != 1) {
            continue;
        }
        let mut block = vec![first];
        let mut remaining = Vec::new();
        for (i, &x) in rest.iter().enumerate() {
            if mask >> i & 1 == 1 {
                block.push(x);
            } else {
                remaining.push(x);
            }
        }
        for mut tail in even_partitions(&remaining, pairs_only) {
            tail.insert(0, block.clone());
            out.push(tail);
        }
    }
    out
}

/// Every decoration finer than that of `f` (each class split into even
/// blocks, pairs when `exotic_only`), grouped by resulting forest.
pub fn finer_decorations(
    f: &DecoratedForest,
    exotic_only: bool,
) -> Result<Vec<(DecoratedForest, u64)>> {
    let k = f.num_classes();
    let per_class: Vec<Vec<Vec<Vec<usize>>>> = (1..=k as u32)
        .map(|c| {
            let nodes: Vec<usize> = (0..f.len()).filter(|&v| f.deco[v] == c).collect();
            even_partitions(&nodes, exotic_only)
        })
        .collect();
    let mut acc: BTreeMap<String, (DecoratedForest, u64)> = BTreeMap::new();
    let mut idx = vec![0usize; k];
    loop {
        let mut deco = vec![0u32; f.len()];
        let mut next = 1u32;
        for (c, &i) in idx.iter().enumerate() {
            for block in &per_class[c][i] {
                for &v in block {
                    deco[v] = next;
                }
                next += 1;
            }
        }
        let g = canonicalize(&f.parent, &deco)?;
        acc.entry(g.key.clone()).or_insert((g, 0)).1 += 1;
        let mut c = 0;
        while c < k {
            idx[c] += 1;
            if idx[c] < per_class[c].len() {
                break;
            }
            idx[c] = 0;
            c += 1;
        }
        if c == k {
            break;
        }
    }
    Ok(acc.into_values().collect())
}

/// Set partitions of `0..n` as block lists.
fn set_partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
    fn rec(i: usize, n: usize, cur: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for b in 0..cur.len() {
            cur[b].push(i);
            rec(i + 1, n, cur, out);
            cur[b].pop();
        }
        cur.push(vec![i]);
        rec(i + 1, n, cur, out);
        cur.pop();
    }
    let mut out = Vec::new();
    rec(0, n, &mut Vec::new(), &mut out);
    out
}

/// Möbius function of the refinement order between `fine` and `coarse`.
///
/// The interval above a decoration is the lattice of ways to merge its
/// classes, so the value is `prod (-1)^(k-1) (k-1)!` over the coarse
/// classes, `k` counting the fine classes merged into each.
pub fn moebius(fine: &DecoratedForest, coarse: &DecoratedForest) -> Result<i64> {
    let k = fine.num_classes();
    if fine.len() == coarse.len() {
        for blocks in set_partitions(k) {
            if blocks.len() != coarse.num_classes() {
                continue;
            }
            let mut map = vec![0u32; k + 1];
            for (b, block) in blocks.iter().enumerate() {
                for &c in block {
                    map[c + 1] = b as u32 + 1;
                }
            }
            let deco: Vec<u32> = fine.deco.iter().map(|&d| map[d as usize]).collect();
            if canonicalize(&fine.parent, &deco)?.key == coarse.key {
                return Ok(blocks
                    .iter()
                    .map(|b| {
                        let sign = if b.len() % 2 == 1 { 1 } else { -1 };
                        sign * factorial(b.len() - 1)
                    })
                    .product());
            }
        }
    }
    Err(Error::Poset(format!("{fine} does not refine {coarse}")))
}

// ---------------------------------------------------------------------------
// Enumeration

/// All forests of order `1..=max_order`, exotic only or all decorated
/// ones, sorted by order and key.
pub fn enumerate(max_order: usize, exotic_only: bool) -> Result<Vec<DecoratedForest>> {
    if max_order > MAX_ENUMERATION_ORDER {
        return Err(Error::Capacity {
            what: format!("enumeration up to order {max_order}"),
            limit: MAX_ENUMERATION_ORDER,
        });
    }
    let mut found: BTreeMap<String, DecoratedForest> = BTreeMap::new();
    for n in 1..=2 * max_order {
        for shape in shapes(n) {
            for zero_mask in 0u32..(1 << n) {
                let zeros = zero_mask.count_ones() as usize;
                let w = n - zeros;
                if w % 2 == 1 || zeros + w / 2 > max_order {
                    continue;
                }
                let nonzero: Vec<usize> = (0..n).filter(|&v| zero_mask >> v & 1 == 0).collect();
                for blocks in even_partitions(&nonzero, exotic_only) {
                    let mut deco = vec![0u32; n];
                    for (b, block) in blocks.iter().enumerate() {
                        for &v in block {
                            deco[v] = b as u32 + 1;
                        }
                    }
                    let f = canonicalize(&shape, &deco)?;
                    found.entry(f.key.clone()).or_insert(f);
                }
            }
        }
    }
    let mut out: Vec<DecoratedForest> = found.into_values().collect();
    out.sort();
    Ok(out)
}

/// Undecorated forests with `n` nodes, one parent array per shape.
fn shapes(n: usize) -> Vec<Vec<Option<usize>>> {
    let mut found: BTreeMap<String, Vec<Option<usize>>> = BTreeMap::new();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    // node v picks its parent among 0..v, or none
    let mut code = vec![0usize; n];
    loop {
        for v in 0..n {
            parent[v] = if code[v] == 0 {
                None
            } else {
                Some(code[v] - 1)
            };
        }
        let f = canonicalize(&parent, &vec![0; n]).expect("parent precedes child");
        found.entry(f.key.clone()).or_insert(f.parent);
        let mut v = 0;
        while v < n {
            code[v] += 1;
            if code[v] <= v {
                break;
            }
            code[v] = 0;
            v += 1;
        }
        if v == n {
            break;
        }
    }
    found.into_values().collect()
}

// ---------------------------------------------------------------------------
// Runge-Kutta coefficients

/// `a(pi)` for method `t`: the expectation of the product of `z` and `Z`
/// coefficients over the forest, summed over stage indices, with class `c`
/// bound to noise `c`.
pub fn rk_coefficient_map(t: &MethodTableau, f: &DecoratedForest) -> Result<f64> {
    let labels: Vec<usize> = (1..=f.num_classes()).collect();
    rk_coefficient_map_labeled(t, f, &labels)
}

/// As [`rk_coefficient_map`] with class `c` bound to noise `labels[c - 1]`
/// (labels distinct, at most [`MAX_RK_CLASSES`]).
pub fn rk_coefficient_map_labeled(
    t: &MethodTableau,
    f: &DecoratedForest,
    labels: &[usize],
) -> Result<f64> {
    let k = f.num_classes();
    if k > MAX_RK_CLASSES {
        return Err(Error::Capacity {
            what: format!("{k} noise classes in {f}"),
            limit: MAX_RK_CLASSES,
        });
    }
    if labels.len() != k || labels.iter().any(|&p| p == 0 || p > MAX_RK_CLASSES) {
        return Err(Error::InvalidArgument(format!(
            "need {k} noise labels in 1..={MAX_RK_CLASSES}, got {labels:?}"
        )));
    }
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != k {
        return Err(Error::InvalidArgument(
            "noise labels must be distinct".into(),
        ));
    }
    if f.is_empty() {
        return Ok(1.0);
    }
    let noise = |v: usize| match f.deco[v] {
        0 => 0,
        d => labels[d as usize - 1],
    };
    let m = labels.iter().copied().max().unwrap_or(0).max(2);
    let family = RvFamily::for_method(t)?;
    let atoms = enumerate_atoms(&family, m)?;
    let roots = f.roots();
    let edges: Vec<(usize, usize)> = (0..f.len())
        .filter_map(|v| f.parent[v].map(|p| (noise(p), noise(v))))
        .collect();
    let expectation = atoms.expectation(|d| {
        let mut x: f64 = roots.iter().map(|&r| d.theta(noise(r))).product();
        for &(p, q) in &edges {
            x *= d.big_theta(p, q);
        }
        x
    });
    if expectation == 0.0 {
        return Ok(0.0);
    }

    let children = f.children();
    let same_class = |u: usize, v: usize| f.deco[u] != 0 && f.deco[u] == f.deco[v];
    fn contract(
        v: usize,
        t: &MethodTableau,
        f: &DecoratedForest,
        children: &[Vec<usize>],
        same_class: &dyn Fn(usize, usize) -> bool,
    ) -> Vec<f64> {
        let stoch = f.deco[v] != 0;
        let size = if stoch { t.s2 } else { t.s1 };
        let mut out = vec![1.0; size];
        for &c in &children[v] {
            let inner = contract(c, t, f, children, same_class);
            let child_stoch = f.deco[c] != 0;
            let mat = match (stoch, child_stoch) {
                (false, false) => &t.a0,
                (false, true) => &t.b0,
                (true, false) => &t.a1,
                (true, true) => t.stoch_block(same_class(v, c)),
            };
            for (i, o) in out.iter_mut().enumerate() {
                *o *= mat[i].iter().zip(&inner).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }
    let mut det = 1.0;
    for &r in &roots {
        let w = if f.deco[r] == 0 { &t.alpha } else { &t.beta };
        let v = contract(r, t, f, &children, &same_class);
        det *= w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(expectation * det)
}

// ---------------------------------------------------------------------------
// Elementary differentials

fn root_name(i: usize) -> String {
    const LETTERS: &[u8] = b"ijklmnopqrstuvw";
    match LETTERS.get(i) {
        Some(c) => (*c as char).to_string(),
        None => format!("r{i}"),
    }
}

/// Index notation for the differential of `f`, e.g.
/// `phi_i f^{p1,i}_{i1} f^{p1,i1}`.
pub fn elementary_differential_string(f: &DecoratedForest) -> String {
    if f.is_empty() {
        return "phi".to_string();
    }
    let children = f.children();
    let roots = f.roots();
    let mut name = vec![String::new(); f.len()];
    let mut order = Vec::with_capacity(f.len());
    for (i, &r) in roots.iter().enumerate() {
        let base = root_name(i);
        name[r] = base.clone();
        let mut counter = 0;
        let mut stack = vec![r];
        while let Some(v) = stack.pop() {
            order.push(v);
            if v != r {
                counter += 1;
                name[v] = format!("{base}{counter}");
            }
            for &c in children[v].iter().rev() {
                stack.push(c);
            }
        }
    }
    let mut s = String::from("phi_");
    for &r in &roots {
        s.push_str(&name[r]);
    }
    for v in order {
        let d = match f.deco[v] {
            0 => "0".to_string(),
            n => format!("p{n}"),
        };
        s.push_str(&format!(" f^{{{d},{}}}", name[v]));
        if !children[v].is_empty() {
            s.push_str("_{");
            for &c in &children[v] {
                s.push_str(&name[c]);
            }
            s.push('}');
        }
    }
    s
}

fn split_indices(s: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in s.chars() {
        if ch.is_ascii_alphabetic() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            cur.push(ch);
        } else if ch.is_ascii_digit() && !cur.is_empty() {
            cur.push(ch);
        } else {
            return Err(Error::Parse(format!("bad index list `{s}`")));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

/// Inverse of [`elementary_differential_string`], accepting any index names.
pub fn parse_differential(s: &str) -> Result<DecoratedForest> {
    let bad = |m: &str| Error::Parse(format!("{m} in differential `{s}`"));
    let mut tokens = s.split_whitespace();
    let head = tokens.next().ok_or_else(|| bad("empty input"))?;
    let root_idx = match head {
        "phi" => Vec::new(),
        h => split_indices(
            h.strip_prefix("phi_")
                .ok_or_else(|| bad("expected `phi_`"))?,
        )?,
    };
    let mut names: Vec<String> = Vec::new();
    let mut deco: Vec<u32> = Vec::new();
    let mut kids: Vec<Vec<String>> = Vec::new();
    for tok in tokens {
        let body = tok
            .strip_prefix("f^{")
            .ok_or_else(|| bad("expected `f^{`"))?;
        let (upper, rest) = body.split_once('}').ok_or_else(|| bad("unclosed `{`"))?;
        let (d, idx) = upper.split_once(',').ok_or_else(|| bad("missing `,`"))?;
        let d = match d {
            "0" => 0,
            p => p
                .strip_prefix('p')
                .and_then(|n| n.parse::<u32>().ok())
                .filter(|&n| n > 0)
                .ok_or_else(|| bad("bad decoration"))?,
        };
        let children = match rest {
            "" => Vec::new(),
            r => split_indices(
                r.strip_prefix("_{")
                    .and_then(|r| r.strip_suffix('}'))
                    .ok_or_else(|| bad("bad subscript"))?,
            )?,
        };
        if names.iter().any(|n| n == idx) {
            return Err(bad("repeated index"));
        }
        names.push(idx.to_string());
        deco.push(d);
        kids.push(children);
    }
    let pos = |n: &str| names.iter().position(|x| x == n);
    let mut parent: Vec<Option<usize>> = vec![None; names.len()];
    let mut has_parent = vec![false; names.len()];
    for (v, list) in kids.iter().enumerate() {
        for c in list {
            let c = pos(c).ok_or_else(|| bad("unknown index"))?;
            if has_parent[c] {
                return Err(bad("index with two parents"));
            }
            has_parent[c] = true;
            parent[c] = Some(v);
        }
    }
    let mut roots: Vec<&str> = (0..names.len())
        .filter(|&v| !has_parent[v])
        .map(|v| names[v].as_str())
        .collect();
    let mut expected: Vec<&str> = root_idx.iter().map(|s| s.as_str()).collect();
    roots.sort_unstable();
    expected.sort_unstable();
    if roots != expected {
        return Err(bad("roots do not match the indices of phi"));
    }
    canonicalize(&parent, &deco)
}
