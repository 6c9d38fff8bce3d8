//! Chess-billiard boundary dynamics: the involutions `gamma^+-`, the billiard
//! map `b = gamma^- o gamma^+` and the black-box scales `(M, N, L)`.
//!
//! Boundary points are parametrized by their abscissa `theta = x1`. With the
//! real characteristic coordinates `ell^s = (s x1 + x2/c)/lambda`, the map from
//! the bottom to the lid is explicit, `theta'' = theta' + s (G(theta') - pi)/c`,
//! while the map from the lid to the bottom solves
//! `theta' + s (G(theta') - pi)/c = theta`, which is strictly monotone under
//! subcriticality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{c_slope, subcriticality_margin, ChannelSpec, Sign, DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Up,
    Down,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Up => Side::Down,
            Side::Down => Side::Up,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub side: Side,
    pub theta: f64,
}

impl BoundaryPoint {
    pub fn up(theta: f64) -> Self {
        Self { side: Side::Up, theta }
    }

    pub fn down(theta: f64) -> Self {
        Self { side: Side::Down, theta }
    }

    pub fn position(&self, chan: &ChannelSpec) -> [f64; 2] {
        match self.side {
            Side::Up => [self.theta, 0.0],
            Side::Down => [self.theta, chan.bottom(self.theta)],
        }
    }
}

const ROOT_TOL: f64 = 1e-12;
const MAX_MARCH: usize = 10_000;
const MAX_ITERATES: usize = 10_000;

/// Billiard dynamics at a fixed subcritical `lambda`.
#[derive(Debug, Clone, Copy)]
pub struct Billiard {
    pub channel: ChannelSpec,
    pub lambda: f64,
    pub c: f64,
    pub margin: f64,
}

impl Billiard {
    pub fn new(channel: ChannelSpec, lambda: f64) -> Result<Self> {
        let margin = subcriticality_margin(&channel, lambda)?;
        if margin <= 0.0 {
            return Err(Error::NotSubcritical { lambda, margin });
        }
        Ok(Self { channel, lambda, c: c_slope(lambda)?, margin })
    }

    /// The unique point on the opposite side sharing `ell^sign` with `p`.
    pub fn gamma(&self, p: BoundaryPoint, sign: Sign) -> Result<BoundaryPoint> {
        let s = sign.value();
        match p.side {
            Side::Down => Ok(BoundaryPoint::up(p.theta + s * (self.channel.g(p.theta) - DEPTH) / self.c)),
            Side::Up => self.lid_to_bottom(p.theta, s).map(BoundaryPoint::down),
        }
    }

    fn lid_to_bottom(&self, theta: f64, s: f64) -> Result<f64> {
        let chan = &self.channel;
        let c = self.c;
        let h = |t: f64| t + s * (chan.g(t) - DEPTH) / c - theta;
        let guess = theta + s * DEPTH / c;
        let step = (DEPTH - chan.topography.min_value()) / c;
        let h0 = h(guess);
        if h0 == 0.0 {
            return Ok(guess);
        }
        // h is increasing, so march against the sign of h.
        let dir = if h0 > 0.0 { -1.0 } else { 1.0 };
        let (mut a, mut b) = (guess, guess);
        let mut found = false;
        for _ in 0..MAX_MARCH {
            b = a + dir * step;
            if h(b) * h0 <= 0.0 {
                found = true;
                break;
            }
            a = b;
        }
        if !found {
            return Err(Error::Convergence(format!(
                "no bracket for theta={theta}, sign={s}: last bracket [{a}, {b}]"
            )));
        }
        let (mut lo, mut hi) = if a < b { (a, b) } else { (b, a) };
        let mut hlo = h(lo);
        for _ in 0..200 {
            if hi - lo <= ROOT_TOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let hm = h(mid);
            if hm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if (hm > 0.0) == (hlo > 0.0) {
                lo = mid;
                hlo = hm;
            } else {
                hi = mid;
            }
        }
        if hi - lo > ROOT_TOL {
            return Err(Error::Convergence(format!("bisection stalled on [{lo}, {hi}]")));
        }
        let mut t = 0.5 * (lo + hi);
        let d = 1.0 + s * chan.dg(t) / c;
        let newton = t - h(t) / d;
        if (newton - t).abs() <= 2.0 * ROOT_TOL {
            t = newton;
        }
        Ok(t)
    }

    /// `b^n(p)`; negative `n` applies `b^{-1} = gamma^+ o gamma^-`.
    pub fn billiard_map(&self, p: BoundaryPoint, iterates: i64) -> Result<BoundaryPoint> {
        let (first, second) = if iterates >= 0 { (Sign::Plus, Sign::Minus) } else { (Sign::Minus, Sign::Plus) };
        let mut q = p;
        for _ in 0..iterates.unsigned_abs() {
            q = self.gamma(q, first)?;
            q = self.gamma(q, second)?;
        }
        Ok(q)
    }

    /// Orbit `p, b(p), ..., b^n(p)` (or backwards for negative `n`).
    pub fn orbit(&self, p: BoundaryPoint, iterates: i64) -> Result<Vec<BoundaryPoint>> {
        let step = if iterates >= 0 { 1 } else { -1 };
        let mut out = vec![p];
        let mut q = p;
        for _ in 0..iterates.unsigned_abs() {
            q = self.billiard_map(q, step)?;
            out.push(q);
        }
        Ok(out)
    }
}

pub fn gamma(chan: &ChannelSpec, p: BoundaryPoint, lambda: f64, sign: Sign) -> Result<BoundaryPoint> {
    Billiard::new(*chan, lambda)?.gamma(p, sign)
}

pub fn billiard_map(chan: &ChannelSpec, p: BoundaryPoint, lambda: f64, iterates: i64) -> Result<BoundaryPoint> {
    Billiard::new(*chan, lambda)?.billiard_map(p, iterates)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlackBoxScales {
    pub m: f64,
    pub n: u32,
    pub l: f64,
    pub lambda_interval: [f64; 2],
}

/// Endpoints of `b^{+-k}` applied to the segment `{|theta| <= r}` of one side.
/// `b` is an increasing homeomorphism of each side, so the image of a segment
/// is the segment between the images of its endpoints.
fn segment_image(bil: &Billiard, side: Side, r: f64, k: i64) -> Result<(f64, f64)> {
    let a = bil.billiard_map(BoundaryPoint { side, theta: -r }, k)?.theta;
    let b = bil.billiard_map(BoundaryPoint { side, theta: r }, k)?.theta;
    Ok((a.min(b), a.max(b)))
}

fn lambda_grid(interval: [f64; 2], count: usize) -> Vec<f64> {
    let [lo, hi] = interval;
    if hi <= lo || count < 2 {
        return vec![lo];
    }
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

/// Smallest `N` with `b^{+-N}(segment) ∩ {|x1| <= r} = ∅` on both sides.
fn escape_count(bil: &Billiard, r: f64) -> Result<u32> {
    let mut worst = 0u32;
    for side in [Side::Up, Side::Down] {
        for dir in [1i64, -1] {
            let mut lo = -r;
            let mut hi = r;
            let mut k = 0u32;
            loop {
                if lo > r || hi < -r {
                    break;
                }
                k += 1;
                if k as usize > MAX_ITERATES {
                    return Err(Error::Convergence(format!(
                        "orbit of {side:?} segment failed to escape |x1| <= {r} within {MAX_ITERATES} iterates at lambda={}",
                        bil.lambda
                    )));
                }
                lo = bil.billiard_map(BoundaryPoint { side, theta: lo }, dir)?.theta;
                hi = bil.billiard_map(BoundaryPoint { side, theta: hi }, dir)?.theta;
            }
            worst = worst.max(k);
        }
    }
    Ok(worst)
}

pub fn black_box_scales(chan: &ChannelSpec, f_support_radius: f64, lambda_interval: [f64; 2]) -> Result<BlackBoxScales> {
    let [lo, hi] = lambda_interval;
    if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
        return Err(Error::Domain(format!("invalid lambda interval [{lo}, {hi}]")));
    }
    let lambdas = lambda_grid(lambda_interval, 32);
    let billiards = lambdas.iter().map(|&l| Billiard::new(*chan, l)).collect::<Result<Vec<_>>>()?;

    let depth_span = DEPTH - chan.topography.min_value();
    let mut m0 = chan.support_radius.max(f_support_radius);
    for b in &billiards {
        m0 = m0.max(10.0 * depth_span / b.c);
    }
    let m = (m0 * 10.0).floor() / 10.0 + 0.1;

    let mut n = 0u32;
    for b in &billiards {
        n = n.max(escape_count(b, 4.0 * m)?);
    }

    let mut reach = 0.0f64;
    for b in &billiards {
        for side in [Side::Up, Side::Down] {
            for k in [n as i64, -(n as i64)] {
                let (a, e) = segment_image(b, side, 4.0 * m, k)?;
                reach = reach.max(a.abs()).max(e.abs());
            }
        }
    }
    Ok(BlackBoxScales { m, n, l: 1.1 * reach, lambda_interval })
}

/// Post-hoc check of the three scale invariants at the given `lambda` samples.
/// Returns a description of the first violation found.
pub fn verify_scales(chan: &ChannelSpec, scales: &BlackBoxScales, lambdas: &[f64]) -> Result<Option<String>> {
    let r = 4.0 * scales.m;
    let depth_span = DEPTH - chan.topography.min_value();
    for &lambda in lambdas {
        let b = Billiard::new(*chan, lambda)?;
        if scales.m <= 10.0 * depth_span / b.c {
            return Ok(Some(format!("M = {} too small at lambda = {lambda}", scales.m)));
        }
        for side in [Side::Up, Side::Down] {
            for k in [scales.n as i64, -(scales.n as i64)] {
                let (a, e) = segment_image(&b, side, r, k)?;
                if !(a > r || e < -r) {
                    return Ok(Some(format!("{side:?} segment has not escaped after {k} iterates at lambda = {lambda}")));
                }
                if a.abs().max(e.abs()) > scales.l {
                    return Ok(Some(format!("image [{a}, {e}] exceeds L = {} at lambda = {lambda}", scales.l)));
                }
            }
        }
    }
    Ok(None)
}

/// Fresh validation samples strictly inside the interval, offset from the
/// construction grid.
pub fn validation_lambdas(interval: [f64; 2], count: usize) -> Vec<f64> {
    let [lo, hi] = interval;
    if hi <= lo {
        return vec![lo];
    }
    (0..count).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / count as f64).collect()
}
