//! Discrete random variables driving the stochastic Runge-Kutta steps.
//!
//! Per step and per noise `p = 1..m` the methods use a sign `eta_p`, a
//! moment-matching variable `theta_p`, and a shared sign `eta_0`. The
//! coupling coefficients `Theta_{p,q}` are derived from these.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::tableau::{Calculus, MethodTableau};

/// Largest `m` accepted by [`enumerate_atoms`].
pub const MAX_ATOM_NOISES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RvFamily {
    pub calculus: Calculus,
    pub c: f64,
    pub half_variant: bool,
}

impl RvFamily {
    /// The family for parameter `c`; `c = 1/2` selects the adapted variant
    /// with `Theta_{0,p} = theta_p` and `Theta_{p,0} = 1`.
    pub fn new(calculus: Calculus, c: f64) -> Result<Self> {
        if !(c > 0.0 && c <= 0.5) {
            return Err(Error::InvalidFamily(format!("c = {c} is outside (0, 1/2]")));
        }
        Ok(RvFamily {
            calculus,
            c,
            half_variant: c == 0.5,
        })
    }

    pub fn for_method(t: &MethodTableau) -> Result<Self> {
        Self::new(t.calculus, t.c)
    }

    /// Random variables drawn per step: the `theta_p`, plus `eta_0` when
    /// two noises can interact, plus the `eta_p` when `c < 1/2`.
    pub fn count_per_step(&self, m: usize) -> usize {
        let eta0 = usize::from(m >= 2);
        let etas = if self.half_variant { 0 } else { m };
        m + eta0 + etas
    }

    fn theta_atoms(&self) -> &'static [(f64, f64)] {
        match self.calculus {
            Calculus::Ito => &ITO_ATOMS,
            Calculus::Stratonovich => &STRAT_ATOMS,
        }
    }

    fn shift_0p(&self) -> f64 {
        if self.half_variant {
            0.0
        } else {
            (1.0 / (2.0 * self.c) - 1.0).sqrt()
        }
    }

    fn shift_p0(&self) -> f64 {
        if self.half_variant {
            0.0
        } else {
            (2.0 * self.c / (1.0 - 2.0 * self.c)).sqrt()
        }
    }
}

// (value, probability); sqrt(2 +- sqrt(3)) = (sqrt(6) +- sqrt(2)) / 2
const ITO_BIG: f64 = 1.931_851_652_578_136_6;
const ITO_SMALL: f64 = 0.517_638_090_205_041_5;
const ITO_P_BIG: f64 = 0.105_662_432_702_593_55;
const ITO_P_SMALL: f64 = 0.394_337_567_297_406_45;
const SQRT3: f64 = 1.732_050_807_568_877_2;

static ITO_ATOMS: [(f64, f64); 4] = [
    (ITO_BIG, ITO_P_BIG),
    (-ITO_BIG, ITO_P_BIG),
    (ITO_SMALL, ITO_P_SMALL),
    (-ITO_SMALL, ITO_P_SMALL),
];

static STRAT_ATOMS: [(f64, f64); 3] = [(SQRT3, 1.0 / 6.0), (-SQRT3, 1.0 / 6.0), (0.0, 2.0 / 3.0)];

/// One step's realisation of the random coefficients, indexed `0..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub m: usize,
    theta: Vec<f64>,
    big: Vec<f64>,
}

impl NoiseDraw {
    pub fn zeroed(m: usize) -> Self {
        let mut d = NoiseDraw {
            m,
            theta: vec![0.0; m + 1],
            big: vec![0.0; (m + 1) * (m + 1)],
        };
        d.theta[0] = 1.0;
        d.big[0] = 1.0;
        d
    }

    /// Draw with prescribed `theta_1..theta_m` and signs `eta_0..eta_m`.
    pub fn from_values(family: &RvFamily, theta: &[f64], eta: &[f64]) -> Result<Self> {
        let m = theta.len();
        if eta.len() != m + 1 || eta.iter().any(|e| e.abs() != 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need {} signs of +-1 for {m} noises",
                m + 1
            )));
        }
        let mut d = NoiseDraw::zeroed(m);
        d.theta[1..].copy_from_slice(theta);
        d.build(family, eta);
        Ok(d)
    }

    #[inline]
    pub fn theta(&self, p: usize) -> f64 {
        self.theta[p]
    }

    /// `Theta_{p,q}`.
    #[inline]
    pub fn big_theta(&self, p: usize, q: usize) -> f64 {
        self.big[p * (self.m + 1) + q]
    }

    pub fn thetas(&self) -> &[f64] {
        &self.theta
    }

    /// Fill in all entries from `theta_1..theta_m` and the signs.
    /// `eta[0]` is `eta_0`; `eta[p]` is `eta_p`.
    fn build(&mut self, family: &RvFamily, eta: &[f64]) {
        let m = self.m;
        let n = m + 1;
        let s0p = family.shift_0p();
        let sp0 = family.shift_p0();
        self.theta[0] = 1.0;
        self.big[0] = 1.0;
        for p in 1..=m {
            let th = self.theta[p];
            self.big[p] = th + eta[p] * s0p;
            self.big[p * n] = 1.0 - eta[p] * th * sp0;
            self.big[p * n + p] = match family.calculus {
                Calculus::Ito => -3.0 * th + th * th * th,
                Calculus::Stratonovich => th,
            };
            for q in 1..=m {
                if q != p {
                    let sign = if q > p { 1.0 + eta[0] } else { 1.0 - eta[0] };
                    self.big[p * n + q] = self.theta[q] * sign;
                }
            }
        }
    }
}

#[inline]
fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Draw `theta` values and signs into `draw` (which fixes `m`).
pub fn sample_into<R: RngCore + ?Sized>(family: &RvFamily, draw: &mut NoiseDraw, rng: &mut R) {
    let m = draw.m;
    let mut eta = [0.0f64; 64];
    let mut eta_buf;
    let eta: &mut [f64] = if m < 64 {
        &mut eta[..=m]
    } else {
        eta_buf = vec![0.0; m + 1];
        &mut eta_buf
    };
    let mut bits = 0u64;
    for (k, e) in eta.iter_mut().enumerate() {
        if k % 64 == 0 {
            bits = rng.next_u64();
        }
        *e = if (bits >> (k % 64)) & 1 == 1 {
            1.0
        } else {
            -1.0
        };
    }
    // low bit gives the sign, the high 53 bits the magnitude class
    for p in 1..=m {
        let r = rng.next_u64();
        let sign = if r & 1 == 1 { 1.0 } else { -1.0 };
        let u = unit_f64(r);
        draw.theta[p] = match family.calculus {
            Calculus::Ito => {
                sign * if u < 2.0 * ITO_P_BIG {
                    ITO_BIG
                } else {
                    ITO_SMALL
                }
            }
            Calculus::Stratonovich => {
                if u < 1.0 / 3.0 {
                    sign * SQRT3
                } else {
                    0.0
                }
            }
        };
    }
    draw.build(family, eta);
}

pub fn sample_draw<R: RngCore + ?Sized>(family: &RvFamily, m: usize, rng: &mut R) -> NoiseDraw {
    let mut d = NoiseDraw::zeroed(m);
    sample_into(family, &mut d, rng);
    d
}

#[derive(Debug, Clone)]
pub struct AtomTable {
    pub m: usize,
    pub atoms: Vec<(f64, NoiseDraw)>,
}

impl AtomTable {
    /// Exact expectation of `f` over the finite sample space.
    pub fn expectation(&self, mut f: impl FnMut(&NoiseDraw) -> f64) -> f64 {
        self.atoms.iter().map(|(p, d)| p * f(d)).sum()
    }
}

pub fn enumerate_atoms(family: &RvFamily, m: usize) -> Result<AtomTable> {
    if m > MAX_ATOM_NOISES {
        return Err(Error::Capacity {
            what: format!("atom enumeration for m = {m}"),
            limit: MAX_ATOM_NOISES,
        });
    }
    let support = family.theta_atoms();
    let k = support.len();
    let n_theta = k.pow(m as u32);
    let n_eta = 1usize << (m + 1);
    let mut atoms = Vec::with_capacity(n_theta * n_eta);
    let mut eta = vec![0.0; m + 1];
    for e in 0..n_eta {
        for (p, v) in eta.iter_mut().enumerate() {
            *v = if (e >> p) & 1 == 1 { 1.0 } else { -1.0 };
        }
        for t in 0..n_theta {
            let mut d = NoiseDraw::zeroed(m);
            let mut prob = 0.5f64.powi(m as i32 + 1);
            let mut code = t;
            for p in 1..=m {
                let (value, pr) = support[code % k];
                code /= k;
                d.theta[p] = value;
                prob *= pr;
            }
            d.build(family, &eta);
            atoms.push((prob, d));
        }
    }
    Ok(AtomTable { m, atoms })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Factor {
    Theta(usize),
    BigTheta(usize, usize),
}

impl Factor {
    fn eval(&self, d: &NoiseDraw) -> f64 {
        match *self {
            Factor::Theta(p) => d.theta(p),
            Factor::BigTheta(p, q) => d.big_theta(p, q),
        }
    }

    fn max_index(&self) -> usize {
        match *self {
            Factor::Theta(p) => p,
            Factor::BigTheta(p, q) => p.max(q),
        }
    }
}

/// Exact `E[prod factor^exponent]`.
pub fn moment(family: &RvFamily, m: usize, monomial: &[(Factor, u32)]) -> Result<f64> {
    if let Some(bad) = monomial.iter().find(|(f, _)| f.max_index() > m) {
        return Err(Error::InvalidArgument(format!(
            "factor {:?} references a noise index above m = {m}",
            bad.0
        )));
    }
    let table = enumerate_atoms(family, m)?;
    Ok(table.expectation(|d| {
        monomial
            .iter()
            .map(|(f, e)| f.eval(d).powi(*e as i32))
            .product()
    }))
}
