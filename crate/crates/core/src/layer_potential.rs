//! Fundamental solution, single layer potential and the boundary kernel of
//! `d C_w`.
//!
//! `E_w(x) = kappa_w log(l+(x) l-(x))` with the principal logarithm. For real
//! `x != 0`, `Im(l+ l-)` has the sign of `Im w`, so `E_w` is smooth off the
//! origin and the `+-i0` prescriptions of the kernels are realized by
//! evaluating at complex `w`.
//!
//! One-forms on the boundary are written `v(theta) d theta` with `theta = x1`
//! on both components. Integration against them uses the boundary
//! orientation of the channel, under which the top component runs in the
//! direction of decreasing `theta`.
//!
//! Quadrature is composite Gauss-Legendre. Log singularities are handled by
//! dyadic grading, near-poles of the Cauchy-type kernels by subtracting the
//! residue at the complex root and adding its logarithmic integral.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Billiard, BoundaryPoint, Side};
use crate::error::{Error, Result};
use crate::geometry::{sqrt_one_minus_sq, ChannelSpec, Sign, DEPTH};
use crate::scaled_solver::{neumann_trace, BoundaryDensity, Forcing, GridContext, StationarySolution};
use crate::spectral_core::{cheb_diff, cheb_nodes, Barycentric, C64};

/// `kappa_w = i sgn(Im w) / (4 pi w sqrt(1 - w^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaOmega {
    pub omega: C64,
    pub value: C64,
}

pub fn kappa(omega: C64) -> Result<KappaOmega> {
    if omega.im == 0.0 || omega.norm() == 0.0 || (omega * omega - 1.0).norm() == 0.0 {
        return Err(Error::SingularParameter(omega));
    }
    let s = omega.im.signum();
    let value = C64::new(0.0, s) / (4.0 * std::f64::consts::PI * omega * sqrt_one_minus_sq(omega));
    Ok(KappaOmega { omega, value })
}

/// Characteristic data at a fixed complex `w`.
#[derive(Debug, Clone, Copy)]
struct Chars {
    omega: C64,
    inv_omega: C64,
    root: C64,
    inv_root: C64,
    kappa: C64,
}

impl Chars {
    fn new(omega: C64) -> Result<Self> {
        let k = kappa(omega)?;
        let root = sqrt_one_minus_sq(omega);
        Ok(Self { omega, inv_omega: 1.0 / omega, root, inv_root: 1.0 / root, kappa: k.value })
    }

    #[inline]
    fn ell(&self, a: C64, b: C64, s: f64) -> C64 {
        s * a * self.inv_omega + b * self.inv_root
    }

    #[inline]
    fn log_product(&self, a: f64, b: f64) -> C64 {
        let a = C64::new(a, 0.0);
        let b = C64::new(b, 0.0);
        (self.ell(a, b, 1.0) * self.ell(a, b, -1.0)).ln()
    }
}

pub fn eval_e(x: [f64; 2], omega: C64) -> Result<C64> {
    let ch = Chars::new(omega)?;
    let a = C64::new(x[0], 0.0);
    let b = C64::new(x[1], 0.0);
    let p = ch.ell(a, b, 1.0) * ch.ell(a, b, -1.0);
    if p.im == 0.0 && p.re <= 0.0 {
        return Err(Error::BranchCut(format!("l+ l- = {p} at x = {x:?}")));
    }
    Ok(ch.kappa * p.ln())
}

/// `chi(x1)`: 1 on `|x1| <= inner`, 0 on `|x1| >= outer`, quintic ramp between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub inner: f64,
    pub outer: f64,
}

impl Cutoff {
    pub fn new(inner: f64, outer: f64) -> Result<Self> {
        if !(0.0 < inner && inner < outer) {
            return Err(Error::Invalid(format!("cutoff needs 0 < inner < outer, got {inner}, {outer}")));
        }
        Ok(Self { inner, outer })
    }

    /// `(chi, chi', chi'')`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let w = self.outer - self.inner;
        let t = (x.abs() - self.inner) / w;
        if t <= 0.0 {
            return (1.0, 0.0, 0.0);
        }
        if t >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t);
        let dds = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
        let sg = x.signum();
        (1.0 - s, -ds * sg / w, -dds / (w * w))
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    /// First-order continuation to a point near the real axis.
    fn value_c(&self, z: C64) -> C64 {
        let (v, d, _) = self.eval(z.re);
        C64::new(v, 0.0) + C64::new(0.0, z.im) * d
    }

    fn breaks(&self) -> [f64; 4] {
        [-self.outer, -self.inner, self.inner, self.outer]
    }
}

/// Composite Gauss-Legendre settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    /// Nodes per panel.
    pub order: usize,
    /// Largest panel width.
    pub panel: f64,
    /// Dyadic refinement levels toward each singular point.
    pub levels: usize,
}

impl QuadratureRule {
    pub fn coarse() -> Self {
        Self { order: 4, panel: 2.0, levels: 4 }
    }

    pub fn medium() -> Self {
        Self { order: 8, panel: 1.0, levels: 10 }
    }

    pub fn fine() -> Self {
        Self { order: 12, panel: 0.5, levels: 18 }
    }

    pub fn levels() -> [Self; 3] {
        [Self::coarse(), Self::medium(), Self::fine()]
    }
}

/// Ratio between successive panels of a dyadic-style grading.
const GRADING: f64 = 0.2;

#[derive(Debug, Clone)]
struct Quad {
    rule: QuadratureRule,
    gl: Vec<(f64, f64)>,
}

impl Quad {
    fn new(rule: QuadratureRule) -> Result<Self> {
        let n = NonZeroUsize::new(rule.order).ok_or_else(|| Error::Invalid("quadrature order must be positive".into()))?;
        if !(rule.panel > 0.0) {
            return Err(Error::Invalid("panel width must be positive".into()));
        }
        let gl = GaussLegendre::new(n).as_node_weight_pairs().to_vec();
        Ok(Self { rule, gl })
    }

    /// Nodes and weights on `[a, b]`, with panel edges at `breaks` and dyadic
    /// grading toward every point of `singular`.
    fn nodes(&self, a: f64, b: f64, breaks: &[f64], singular: &[f64]) -> Vec<(f64, f64)> {
        if !(b > a) {
            return Vec::new();
        }
        let mut edges: Vec<(f64, bool)> = vec![(a, false), (b, false)];
        for &p in breaks {
            if p > a && p < b {
                edges.push((p, false));
            }
        }
        for &p in singular {
            if p >= a && p <= b {
                edges.push((p, true));
            }
        }
        edges.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, bool)> = Vec::with_capacity(edges.len());
        for e in edges {
            match merged.last_mut() {
                Some(last) if (e.0 - last.0).abs() <= 1e-14 * (1.0 + e.0.abs()) => last.1 |= e.1,
                _ => merged.push(e),
            }
        }
        let mut out = Vec::new();
        for w in merged.windows(2) {
            let ((p, sp), (q, sq)) = (w[0], w[1]);
            let mut pts = vec![p, q];
            let levels = self.rule.levels as i32;
            match (sp, sq) {
                (true, true) => {
                    let m = 0.5 * (p + q);
                    pts = vec![p, m, q];
                    for k in 1..=levels {
                        let h = GRADING.powi(k) * (m - p);
                        pts.push(p + h);
                        pts.push(q - h);
                    }
                }
                (true, false) => {
                    for k in 1..=levels {
                        pts.push(p + GRADING.powi(k) * (q - p));
                    }
                }
                (false, true) => {
                    for k in 1..=levels {
                        pts.push(q - GRADING.powi(k) * (q - p));
                    }
                }
                (false, false) => {}
            }
            pts.sort_by(|x, y| x.total_cmp(y));
            let floor = 1e-12 * (1.0 + p.abs().max(q.abs()));
            pts.dedup_by(|x, y| (*x - *y).abs() < floor);
            for seg in pts.windows(2) {
                let (u, v) = (seg[0], seg[1]);
                if !(v > u) {
                    continue;
                }
                let k = ((v - u) / self.rule.panel).ceil().max(1.0) as usize;
                let h = (v - u) / k as f64;
                for i in 0..k {
                    let (l, r) = (u + i as f64 * h, u + (i + 1) as f64 * h);
                    for &(t, wt) in &self.gl {
                        out.push((0.5 * (l + r) + 0.5 * (r - l) * t, 0.5 * (r - l) * wt));
                    }
                }
            }
        }
        out
    }
}

fn boundary_x2(chan: &ChannelSpec, side: Side, theta: f64) -> f64 {
    match side {
        Side::Up => 0.0,
        Side::Down => chan.bottom(theta),
    }
}

fn boundary_x2_c(chan: &ChannelSpec, side: Side, theta: C64) -> C64 {
    match side {
        Side::Up => C64::new(0.0, 0.0),
        Side::Down => chan.topography.eval_c(theta).0 - DEPTH,
    }
}

/// Orientation factor of the `theta` parametrization of each component.
pub fn orientation(side: Side) -> f64 {
    match side {
        Side::Up => -1.0,
        Side::Down => 1.0,
    }
}

/// `x1` where the line `x2 - y2 = -s slope (x1 - y1)` through `x` meets the
/// given boundary component (`slope > max|G'|`).
fn line_hit(chan: &ChannelSpec, x: [f64; 2], s: f64, slope: f64, side: Side) -> f64 {
    // y2 = x2 + s slope (x1 - y1)
    match side {
        Side::Up => x[0] + s * x[1] / slope,
        Side::Down => {
            let phi = |y: f64| x[1] + s * slope * (x[0] - y) - chan.bottom(y);
            let y0 = x[0] + s * (x[1] + DEPTH) / slope;
            let gmax = chan.topography.max_value().abs().max(chan.topography.min_value().abs());
            let m = crate::geometry::max_abs_slope(chan);
            let r = (gmax + 1e-9) / (slope - m).max(1e-9) + 1e-9;
            let (mut lo, mut hi) = (y0 - r, y0 + r);
            let flo = phi(lo);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if (phi(mid) > 0.0) == (flo > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-14 * (1.0 + mid.abs()) {
                    break;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

/// A source `h(x1, x2)` on the channel, holomorphic in `x2` on each column.
pub trait ColumnSource {
    /// Sorted `x1` panel breaks; the first and last bound the support.
    fn breaks(&self) -> Vec<f64>;
    fn column(&self, x1: f64) -> Box<dyn Fn(C64) -> C64 + '_>;
}

/// `chi f` for a Gaussian forcing descriptor.
pub struct ForcingSource<'a> {
    pub forcing: &'a Forcing,
    pub channel: &'a ChannelSpec,
    pub half_length: f64,
    pub cutoff: Option<Cutoff>,
}

impl ColumnSource for ForcingSource<'_> {
    fn breaks(&self) -> Vec<f64> {
        let [mut a, mut b] = self.forcing.support_interval(self.half_length, 1e-16);
        if let Some(c) = self.cutoff {
            a = a.max(-c.outer);
            b = b.min(c.outer);
        }
        let mut v = vec![a, b];
        if let Some(c) = self.cutoff {
            v.extend(c.breaks().into_iter().filter(|&p| p > a && p < b));
        }
        v.sort_by(|x, y| x.total_cmp(y));
        v
    }

    fn column(&self, x1: f64) -> Box<dyn Fn(C64) -> C64 + '_> {
        let f = self.forcing;
        let l = self.half_length;
        let chi = self.cutoff.map_or(1.0, |c| c.value(x1));
        let depth = DEPTH - self.channel.g(x1);
        let y1 = x1 / l;
        let a = (y1 - f.center[0]) / f.sigma[0];
        let base = chi * f.amplitude * (-0.5 * a * a).exp();
        let carrier = C64::from_polar(1.0, f.carrier * x1);
        Box::new(move |x2: C64| {
            let y2 = 1.0 + 2.0 * x2 / depth;
            let b = (y2 - f.center[1]) / f.sigma[1];
            base * carrier * (-0.5 * b * b).exp()
        })
    }
}

/// `[P(w), chi] u = -w^2 (chi'' u + 2 chi' du/dx1)` built from a grid field.
pub struct CommutatorSource<'a> {
    pub ctx: &'a GridContext,
    pub u: &'a [C64],
    pub ux1: Vec<C64>,
    pub omega: C64,
    pub cutoff: Cutoff,
    bary: Barycentric,
}

impl<'a> CommutatorSource<'a> {
    pub fn new(ctx: &'a GridContext, u: &'a [C64], omega: C64, cutoff: Cutoff) -> Result<Self> {
        if cutoff.outer > ctx.trusted_half_width() {
            return Err(Error::Invalid(format!(
                "cutoff ramp reaches {} beyond the undeformed region {}",
                cutoff.outer,
                ctx.trusted_half_width()
            )));
        }
        Ok(Self { ctx, u, ux1: ctx.dx1(u), omega, cutoff, bary: Barycentric::new(&ctx.grid.g2) })
    }
}

impl ColumnSource for CommutatorSource<'_> {
    fn breaks(&self) -> Vec<f64> {
        self.cutoff.breaks().to_vec()
    }

    fn column(&self, x1: f64) -> Box<dyn Fn(C64) -> C64 + '_> {
        let (_, d1, d2) = self.cutoff.eval(x1);
        let w2 = self.omega * self.omega;
        let cu = self.ctx.column(self.u, x1);
        let cx = self.ctx.column(&self.ux1, x1);
        let vals: Vec<C64> = cu.values.iter().zip(&cx.values).map(|(&a, &b)| -w2 * (d2 * a + 2.0 * d1 * b)).collect();
        let depth = cu.depth;
        Box::new(move |x2: C64| self.bary.eval_complex(&vals, 1.0 + 2.0 * x2 / depth))
    }
}

/// A source given by a closure, supported in `[breaks[0], breaks[last]]`.
pub struct FnSource<F: Fn(f64, C64) -> C64> {
    pub f: F,
    pub breaks: Vec<f64>,
}

impl<F: Fn(f64, C64) -> C64> ColumnSource for FnSource<F> {
    fn breaks(&self) -> Vec<f64> {
        self.breaks.clone()
    }

    fn column(&self, x1: f64) -> Box<dyn Fn(C64) -> C64 + '_> {
        Box::new(move |x2| (self.f)(x1, x2))
    }
}

/// `(E_w * 1_Omega h)(x)`.
pub fn convolve(chan: &ChannelSpec, src: &dyn ColumnSource, x: [f64; 2], omega: C64, rule: QuadratureRule) -> Result<C64> {
    let ch = Chars::new(omega)?;
    let q = Quad::new(rule)?;
    let br = src.breaks();
    let (a, b) = (br[0], br[br.len() - 1]);
    let c = (ch.root * ch.inv_omega).re;
    let mut sing = vec![x[0]];
    for s in [1.0, -1.0] {
        for side in [Side::Up, Side::Down] {
            sing.push(line_hit(chan, x, s, c, side));
        }
    }
    let mut total = C64::new(0.0, 0.0);
    for (y1, w1) in q.nodes(a, b, &br, &sing) {
        let bot = chan.bottom(y1);
        let h = src.column(y1);
        let d1 = x[0] - y1;
        let p1 = x[1] + d1 * c;
        let p2 = x[1] - d1 * c;
        let mut inner = C64::new(0.0, 0.0);
        for (y2, w2) in q.nodes(bot, 0.0, &[], &[p1, p2]) {
            inner += w2 * h(C64::new(y2, 0.0)) * ch.log_product(d1, x[1] - y2);
        }
        total += w1 * inner;
    }
    Ok(ch.kappa * total)
}

/// `d/dtheta (E_w * 1_Omega h)(X(theta))` on one boundary component, by the
/// Cauchy-type kernel `kappa sum_s dl^s(X) / l^s(X - y)`.
pub fn boundary_derivative(
    chan: &ChannelSpec,
    src: &dyn ColumnSource,
    side: Side,
    theta: f64,
    omega: C64,
    rule: QuadratureRule,
) -> Result<C64> {
    let ch = Chars::new(omega)?;
    let q = Quad::new(rule)?;
    let br = src.breaks();
    let (a, b) = (br[0], br[br.len() - 1]);
    let x = [theta, boundary_x2(chan, side, theta)];
    let gp = if side == Side::Down { chan.dg(theta) } else { 0.0 };
    let slope_c = ch.root * ch.inv_omega;
    let c = slope_c.re;
    let mut sing = vec![x[0]];
    for s in [1.0, -1.0] {
        sing.push(line_hit(chan, x, s, c, side.opposite()));
    }
    let mut total = C64::new(0.0, 0.0);
    for s in [1.0, -1.0] {
        let n = s * ch.inv_omega + gp * ch.inv_root;
        let mut acc = C64::new(0.0, 0.0);
        for (y1, w1) in q.nodes(a, b, &br, &sing) {
            let bot = chan.bottom(y1);
            let h = src.column(y1);
            // l^s(x - y) = (z - y2) / root
            let z = x[1] + s * (x[0] - y1) * slope_c;
            let span = -bot;
            let near = z.re > bot - 0.05 * span && z.re < 0.05 * span && z.im.abs() < 0.01 * span;
            let mut inner = C64::new(0.0, 0.0);
            if near {
                let hz = h(z);
                for (y2, w2) in q.nodes(bot, 0.0, &[], &[z.re.clamp(bot, 0.0)]) {
                    let t = C64::new(y2, 0.0);
                    inner += w2 * (h(t) - hz) / (t - z);
                }
                inner += hz * ((-z).ln() - (bot - z).ln());
            } else {
                for (y2, w2) in q.nodes(bot, 0.0, &[], &[z.re.clamp(bot, 0.0)]) {
                    let t = C64::new(y2, 0.0);
                    inner += w2 * h(t) / (t - z);
                }
            }
            // 1 / l = -root / (y2 - z)
            acc += w1 * (-ch.root) * inner;
        }
        total += n * acc;
    }
    Ok(ch.kappa * total)
}

/// Boundary density interpolated from its Chebyshev samples in `theta / L`.
#[derive(Debug, Clone)]
pub struct DensityInterp {
    pub side: Side,
    half_length: f64,
    values: Vec<C64>,
    bary: Barycentric,
    cutoff: Option<Cutoff>,
}

impl DensityInterp {
    pub fn new(d: &BoundaryDensity, cutoff: Option<Cutoff>) -> Result<Self> {
        let n = d.theta.len();
        if n < 3 || d.samples.len() != n {
            return Err(Error::Shape("density needs matching theta/sample arrays of length >= 3".into()));
        }
        let grid = cheb_nodes(n - 1)?;
        let half = d.theta.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        for (t, y) in d.theta.iter().zip(&grid.nodes) {
            if (t / half - y).abs() > 1e-12 {
                return Err(Error::Shape("density nodes are not Chebyshev points in theta".into()));
            }
        }
        Ok(Self { side: d.side, half_length: half, values: d.samples.clone(), bary: Barycentric::new(&grid), cutoff })
    }

    pub fn support(&self) -> [f64; 2] {
        match self.cutoff {
            Some(c) => [-c.outer, c.outer],
            None => [-self.half_length, self.half_length],
        }
    }

    pub fn eval(&self, theta: f64) -> C64 {
        let chi = self.cutoff.map_or(1.0, |c| c.value(theta));
        if chi == 0.0 {
            return C64::new(0.0, 0.0);
        }
        chi * self.bary.eval_complex(&self.values, C64::new(theta / self.half_length, 0.0))
    }

    fn eval_c(&self, theta: C64) -> C64 {
        let chi = self.cutoff.map_or(C64::new(1.0, 0.0), |c| c.value_c(theta));
        chi * self.bary.eval_complex(&self.values, theta / self.half_length)
    }

    fn breaks(&self) -> Vec<f64> {
        self.cutoff.map_or_else(Vec::new, |c| c.breaks().to_vec())
    }
}

/// `S_w(phi)(x)` at interior points for densities on both components.
pub fn single_layer(
    chan: &ChannelSpec,
    densities: &[&DensityInterp],
    targets: &[[f64; 2]],
    omega: C64,
    rule: QuadratureRule,
) -> Result<Vec<C64>> {
    let ch = Chars::new(omega)?;
    let q = Quad::new(rule)?;
    let c = (ch.root * ch.inv_omega).re;
    let mut out = Vec::with_capacity(targets.len());
    for &x in targets {
        if !chan.contains(x) {
            return Err(Error::OutOfDomain(format!("single-layer target {x:?} is not interior")));
        }
        let mut total = C64::new(0.0, 0.0);
        for d in densities {
            let [a, b] = d.support();
            let sing: Vec<f64> = [1.0, -1.0].iter().map(|&s| line_hit(chan, x, s, c, d.side)).collect();
            let mut acc = C64::new(0.0, 0.0);
            for (t, w) in q.nodes(a, b, &d.breaks(), &sing) {
                let phi = d.eval(t);
                if phi == C64::new(0.0, 0.0) {
                    continue;
                }
                acc += w * phi * ch.log_product(x[0] - t, x[1] - boundary_x2(chan, d.side, t));
            }
            total += orientation(d.side) * acc;
        }
        out.push(ch.kappa * total);
    }
    Ok(out)
}

/// Which pair of components a kernel entry couples (target, source).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelCase {
    /// top, top
    One,
    /// top, bottom
    Two,
    /// bottom, bottom
    Three,
    /// bottom, top
    Four,
}

impl KernelCase {
    pub fn sides(self) -> (Side, Side) {
        match self {
            KernelCase::One => (Side::Up, Side::Up),
            KernelCase::Two => (Side::Up, Side::Down),
            KernelCase::Three => (Side::Down, Side::Down),
            KernelCase::Four => (Side::Down, Side::Up),
        }
    }

    pub fn from_sides(target: Side, source: Side) -> Self {
        match (target, source) {
            (Side::Up, Side::Up) => KernelCase::One,
            (Side::Up, Side::Down) => KernelCase::Two,
            (Side::Down, Side::Down) => KernelCase::Three,
            (Side::Down, Side::Up) => KernelCase::Four,
        }
    }
}

/// Kernel values on a product grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEval {
    pub case: KernelCase,
    pub sign: Sign,
    pub theta: Vec<f64>,
    pub theta_prime: Vec<f64>,
    /// Row-major, `values[i * theta_prime.len() + j] = K(theta_i, theta'_j)`.
    pub values: Vec<C64>,
}

/// Kernel evaluator at a fixed `w` with `Im w != 0`.
#[derive(Debug, Clone)]
pub struct BoundaryKernel {
    chan: ChannelSpec,
    ch: Chars,
    billiard: Billiard,
}

impl BoundaryKernel {
    pub fn new(chan: &ChannelSpec, omega: C64) -> Result<Self> {
        let ch = Chars::new(omega)?;
        let billiard = Billiard::new(*chan, omega.re)?;
        Ok(Self { chan: *chan, ch, billiard })
    }

    pub fn kappa(&self) -> C64 {
        self.ch.kappa
    }

    fn ell_at(&self, side: Side, theta: C64, s: f64) -> C64 {
        self.ch.ell(theta, boundary_x2_c(&self.chan, side, theta), s)
    }

    /// `d/dtheta l^s(X(theta))`.
    pub fn ell_derivative(&self, side: Side, theta: f64, s: Sign) -> C64 {
        let s = s.value();
        match side {
            Side::Up => s * self.ch.inv_omega,
            Side::Down => s * self.ch.inv_omega + self.chan.dg(theta) * self.ch.inv_root,
        }
    }

    /// The defining quotient `kappa dl^s(X(theta)) / l^s(X(theta) - X'(theta') + delta v(theta))`
    /// with `v` the inward normal direction `(0, -+1)`.
    pub fn direct(&self, case: KernelCase, theta: f64, theta_p: f64, s: Sign, delta: f64) -> C64 {
        let (ts, ss) = case.sides();
        let sv = s.value();
        let x = [theta, boundary_x2(&self.chan, ts, theta)];
        let y = [theta_p, boundary_x2(&self.chan, ss, theta_p)];
        let dv = match ts {
            Side::Up => -delta,
            Side::Down => delta,
        };
        let l = self.ch.ell(C64::new(x[0] - y[0], 0.0), C64::new(x[1] - y[1] + dv, 0.0), sv);
        self.ch.kappa * self.ell_derivative(ts, theta, s) / l
    }

    /// `F(theta, theta') = (G(theta) - G(theta')) / (theta - theta')`.
    fn difference_quotient(&self, a: f64, b: f64) -> f64 {
        let h = a - b;
        if h.abs() < 1e-6 {
            let m = 0.5 * (a + b);
            self.chan.dg(m)
        } else {
            (self.chan.g(a) - self.chan.g(b)) / h
        }
    }

    pub fn psi(&self, theta: f64, theta_p: f64, s: Sign) -> C64 {
        let sv = s.value();
        let num = sv * self.ch.inv_omega + self.difference_quotient(theta, theta_p) * self.ch.inv_root;
        let den = sv * self.ch.inv_omega + self.chan.dg(theta) * self.ch.inv_root;
        num / den
    }

    /// `x1` of `gamma^s(X(theta))` on the opposite component, at `lambda = Re w`.
    pub fn gamma(&self, side: Side, theta: f64, s: Sign) -> Result<f64> {
        let p = BoundaryPoint { side, theta };
        Ok(self.billiard.gamma(p, s)?.theta)
    }

    /// `z^{s, side}(theta)`: `l^s(X) - l^s(gamma^s X) = +- i eps z` with `+` on top.
    pub fn z_quantity(&self, side: Side, theta: f64, s: Sign) -> Result<C64> {
        let g = self.gamma(side, theta, s)?;
        let sv = s.value();
        let d = self.ell_at(side, C64::new(theta, 0.0), sv) - self.ell_at(side.opposite(), C64::new(g, 0.0), sv);
        let ieps = C64::new(0.0, self.ch.omega.im);
        Ok(match side {
            Side::Up => d / ieps,
            Side::Down => -d / ieps,
        })
    }

    /// Closed forms of the four cases.
    pub fn closed_form(&self, case: KernelCase, theta: f64, theta_p: f64, s: Sign) -> Result<C64> {
        let k = self.ch.kappa;
        let sv = s.value();
        let eps = self.ch.omega.im;
        let ie = C64::new(0.0, eps);
        Ok(match case {
            KernelCase::One => {
                if theta == theta_p {
                    return Err(Error::Invalid("case 1 kernel is singular on the diagonal".into()));
                }
                k / (theta - theta_p)
            }
            KernelCase::Two => {
                let g = self.gamma(Side::Down, theta_p, s)?;
                let z = self.z_quantity(Side::Down, theta_p, s)?;
                k / (theta - g + sv * ie * self.ch.omega * z)
            }
            KernelCase::Three => {
                if theta == theta_p {
                    return Err(Error::Invalid("case 3 kernel is singular on the diagonal".into()));
                }
                k / (self.psi(theta, theta_p, s) * (theta - theta_p))
            }
            KernelCase::Four => {
                let g = self.gamma(Side::Up, theta_p, s)?;
                let z = self.z_quantity(Side::Up, theta_p, s)?;
                let zt = sv * z / self.ell_derivative(Side::Down, theta, s);
                k / (self.psi(theta, g, s) * (theta - g) - sv * ie * zt)
            }
        })
    }

    pub fn grid(&self, case: KernelCase, s: Sign, theta: &[f64], theta_p: &[f64]) -> Result<KernelEval> {
        let mut values = Vec::with_capacity(theta.len() * theta_p.len());
        for &t in theta {
            for &tp in theta_p {
                values.push(self.closed_form(case, t, tp, s)?);
            }
        }
        Ok(KernelEval { case, sign: s, theta: theta.to_vec(), theta_prime: theta_p.to_vec(), values })
    }

    /// Complex root `theta'` of `l^s(X_t(theta)) = l^s(X_s(theta'))` near the real axis.
    fn pole(&self, target: Side, theta: f64, source: Side, s: f64) -> C64 {
        let lt = self.ell_at(target, C64::new(theta, 0.0), s);
        match source {
            Side::Up => s * self.ch.omega * lt,
            Side::Down => {
                let c = (self.ch.root * self.ch.inv_omega).re;
                let x = [theta, boundary_x2(&self.chan, target, theta)];
                let mut z = C64::new(line_hit(&self.chan, x, s, c, Side::Down), 0.0);
                for _ in 0..50 {
                    let (g, g1, _) = self.chan.topography.eval_c(z);
                    let f = s * z * self.ch.inv_omega + (g - DEPTH) * self.ch.inv_root - lt;
                    let df = s * self.ch.inv_omega + g1 * self.ch.inv_root;
                    let step = f / df;
                    z -= step;
                    if step.norm() < 1e-15 * (1.0 + z.norm()) {
                        break;
                    }
                }
                z
            }
        }
    }

    /// `d C_w(phi)(theta)` on one component, summing both sources with
    /// their orientation factors.
    pub fn apply(&self, target: Side, theta: f64, densities: &[&DensityInterp], q: &QuadratureRule) -> Result<C64> {
        let quad = Quad::new(*q)?;
        let k = self.ch.kappa;
        let mut total = C64::new(0.0, 0.0);
        for d in densities {
            let [a, b] = d.support();
            let nodes = quad.nodes(a, b, &d.breaks(), &[]);
            let mut acc = C64::new(0.0, 0.0);
            if d.side == target {
                // both signs together: 2 kappa PV 1/(theta - theta') plus a smooth remainder
                let phi0 = d.eval(theta);
                for &(t, w) in &nodes {
                    let phi = d.eval(t);
                    let h = theta - t;
                    acc += w * 2.0 * k * (phi - phi0) / (-h) * -1.0;
                    if target == Side::Down {
                        acc += w * phi * self.same_side_remainder(theta, t);
                    }
                }
                if theta > a && theta < b {
                    acc += 2.0 * k * phi0 * ((theta - a) / (b - theta)).ln();
                } else {
                    acc += 2.0 * k * phi0 * ((theta - a).abs() / (b - theta).abs()).ln();
                }
            } else {
                for s in [1.0, -1.0] {
                    let sign = if s > 0.0 { Sign::Plus } else { Sign::Minus };
                    let n = self.ell_derivative(target, theta, sign);
                    let lt = self.ell_at(target, C64::new(theta, 0.0), s);
                    let zc = self.pole(target, theta, d.side, s);
                    let span = b - a;
                    let near = zc.re > a - 0.05 * span && zc.re < b + 0.05 * span;
                    if near {
                        let dl = match d.side {
                            Side::Up => s * self.ch.inv_omega,
                            Side::Down => s * self.ch.inv_omega + self.chan.topography.eval_c(zc).1 * self.ch.inv_root,
                        };
                        let res = -k * n / dl;
                        let phic = d.eval_c(zc);
                        for &(t, w) in &nodes {
                            let kv = k * n / (lt - self.ell_at(d.side, C64::new(t, 0.0), s));
                            let phi = d.eval(t);
                            acc += w * (phi * kv - res * phic / (t - zc));
                        }
                        acc += res * phic * ((b - zc).ln() - (a - zc).ln());
                    } else {
                        for &(t, w) in &nodes {
                            let kv = k * n / (lt - self.ell_at(d.side, C64::new(t, 0.0), s));
                            acc += w * d.eval(t) * kv;
                        }
                    }
                }
            }
            total += orientation(d.side) * acc;
        }
        Ok(total)
    }

    /// Case-3 sum minus `2 kappa / (theta - theta')`.
    fn same_side_remainder(&self, theta: f64, theta_p: f64) -> C64 {
        let k = self.ch.kappa;
        let h = theta - theta_p;
        if h.abs() < 1e-5 {
            let g2 = self.chan.topography.deriv2(theta);
            let mut s = C64::new(0.0, 0.0);
            for sign in [Sign::Plus, Sign::Minus] {
                s += 1.0 / self.ell_derivative(Side::Down, theta, sign);
            }
            return k * g2 * self.ch.inv_root / 2.0 * s;
        }
        let mut sum = C64::new(0.0, 0.0);
        for sign in [Sign::Plus, Sign::Minus] {
            sum += 1.0 / self.psi(theta, theta_p, sign);
        }
        k * (sum - 2.0) / h
    }
}

/// `g_w = d((E_w * chi f)|boundary)` at the given nodes, as one-form
/// coefficients in `d theta`.
pub fn g_omega(
    chan: &ChannelSpec,
    forcing: &Forcing,
    half_length: f64,
    cutoff: Option<Cutoff>,
    omega: C64,
    nodes: &[f64],
    rule: QuadratureRule,
) -> Result<(BoundaryDensity, BoundaryDensity)> {
    let src = ForcingSource { forcing, channel: chan, half_length, cutoff };
    let mut sides = Vec::new();
    for side in [Side::Up, Side::Down] {
        let samples = nodes
            .iter()
            .map(|&t| boundary_derivative(chan, &src, side, t, omega, rule))
            .collect::<Result<Vec<_>>>()?;
        sides.push(BoundaryDensity { side, theta: nodes.to_vec(), samples, weights: vec![1.0; nodes.len()] });
    }
    let down = sides.pop().expect("two sides");
    let up = sides.pop().expect("two sides");
    Ok((up, down))
}

/// `g_w` by the second route: boundary values of `E_w * chi f` on a
/// Chebyshev grid over `[-a, a]`, differentiated spectrally.
pub fn g_omega_spectral(
    chan: &ChannelSpec,
    forcing: &Forcing,
    half_length: f64,
    omega: C64,
    side: Side,
    a: f64,
    n: usize,
    rule: QuadratureRule,
) -> Result<(Vec<f64>, Vec<C64>)> {
    let src = ForcingSource { forcing, channel: chan, half_length, cutoff: None };
    let grid = cheb_nodes(n)?;
    let theta: Vec<f64> = grid.nodes.iter().map(|y| a * y).collect();
    let vals = theta
        .iter()
        .map(|&t| convolve(chan, &src, [t, boundary_x2(chan, side, t)], omega, rule))
        .collect::<Result<Vec<_>>>()?;
    let d = cheb_diff(&grid);
    let mut out = vec![C64::new(0.0, 0.0); n + 1];
    for i in 0..=n {
        for j in 0..=n {
            out[i] += d[(i, j)] * vals[j];
        }
        out[i] /= a;
    }
    Ok((theta, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub rule: QuadratureRule,
    pub probes: Vec<[f64; 2]>,
    pub lhs: Vec<C64>,
    pub rhs: Vec<C64>,
    /// `||lhs - rhs||_2 / ||lhs||_2` over the probes.
    pub relative: f64,
}

/// Seeded interior probes in `|x1| <= half_width`, kept a tenth of the
/// local depth away from the boundary.
pub fn probe_points(chan: &ChannelSpec, half_width: f64, count: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x1 = rng.random_range(-half_width..=half_width);
            let bot = chan.bottom(x1);
            let t: f64 = rng.random_range(0.1..=0.9);
            [x1, bot * t]
        })
        .collect()
}

/// Checks `chi u = E*([P, chi] u) + E*(chi f) - S(chi v)` at interior probes.
pub fn reconstruction_residual(
    sol: &StationarySolution,
    cutoff: Cutoff,
    probes: &[[f64; 2]],
    rule: QuadratureRule,
) -> Result<ReconstructionReport> {
    let ctx = &sol.ctx;
    let chan = ctx.channel();
    let omega = sol.omega();
    let comm = CommutatorSource::new(ctx, &sol.field, omega, cutoff)?;
    let fsrc = ForcingSource { forcing: &sol.config.forcing, channel: chan, half_length: ctx.half_length(), cutoff: Some(cutoff) };
    let (up, down) = neumann_trace(sol)?;
    let dup = DensityInterp::new(&up, Some(cutoff))?;
    let ddown = DensityInterp::new(&down, Some(cutoff))?;
    let sl = single_layer(chan, &[&dup, &ddown], probes, omega, rule)?;
    let mut lhs = Vec::with_capacity(probes.len());
    let mut rhs = Vec::with_capacity(probes.len());
    for (i, &x) in probes.iter().enumerate() {
        lhs.push(cutoff.value(x[0]) * ctx.eval(&sol.field, x));
        let r = convolve(chan, &comm, x, omega, rule)? + convolve(chan, &fsrc, x, omega, rule)? - sl[i];
        rhs.push(r);
    }
    let num: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = lhs.iter().map(|a| a.norm_sqr()).sum();
    Ok(ReconstructionReport { rule, probes: probes.to_vec(), lhs, rhs, relative: relative(num, den) })
}

/// `sqrt(num / den)`, with `0 / 0 = 0`.
fn relative(num: f64, den: f64) -> f64 {
    if den == 0.0 && num == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryResidual {
    pub rule: QuadratureRule,
    pub theta: Vec<f64>,
    /// `r + g - dC(chi v)` on the top, then the bottom component.
    pub residual: [Vec<C64>; 2],
    pub dc: [Vec<C64>; 2],
    /// `||r + g - dC(chi v)|| / ||dC(chi v)||` over both components.
    pub relative: f64,
}

/// Residual of `r_w + g_w = dC_w(chi v_w)` at `count` uniform points of
/// `|theta| <= cutoff.inner`.
pub fn boundary_equation_residual(
    sol: &StationarySolution,
    cutoff: Cutoff,
    count: usize,
    rule: QuadratureRule,
) -> Result<BoundaryResidual> {
    let ctx = &sol.ctx;
    let chan = ctx.channel();
    let omega = sol.omega();
    let comm = CommutatorSource::new(ctx, &sol.field, omega, cutoff)?;
    let fsrc = ForcingSource { forcing: &sol.config.forcing, channel: chan, half_length: ctx.half_length(), cutoff: Some(cutoff) };
    let (up, down) = neumann_trace(sol)?;
    let dup = DensityInterp::new(&up, Some(cutoff))?;
    let ddown = DensityInterp::new(&down, Some(cutoff))?;
    let kernel = BoundaryKernel::new(chan, omega)?;
    let a = cutoff.inner;
    let theta: Vec<f64> = (0..count).map(|i| -a + (2.0 * a) * (i as f64 + 0.5) / count as f64).collect();
    let mut residual = [Vec::new(), Vec::new()];
    let mut dc = [Vec::new(), Vec::new()];
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, side) in [Side::Up, Side::Down].into_iter().enumerate() {
        for &t in &theta {
            let r = boundary_derivative(chan, &comm, side, t, omega, rule)?;
            let g = boundary_derivative(chan, &fsrc, side, t, omega, rule)?;
            let c = kernel.apply(side, t, &[&dup, &ddown], &rule)?;
            let e = r + g - c;
            num += e.norm_sqr();
            den += c.norm_sqr();
            residual[k].push(e);
            dc[k].push(c);
        }
    }
    Ok(BoundaryResidual { rule, theta, residual, dc, relative: relative(num, den) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralMass {
    pub case: KernelCase,
    pub sign: Sign,
    pub theta_prime: f64,
    /// Share of `sum |K^(xi)|^2` on `xi > 0` (transform `int K e^{-i theta xi}`).
    pub positive: f64,
    pub negative: f64,
}

/// Spectral mass of `theta -> K(theta, theta')` over a window of half-width
/// `half_width` centred on `gamma^s(theta')`, sampled at `n` points.
pub fn kernel_spectral_mass(
    chan: &ChannelSpec,
    omega: C64,
    case: KernelCase,
    s: Sign,
    theta_p: f64,
    half_width: f64,
    n: usize,
) -> Result<SpectralMass> {
    if !n.is_power_of_two() {
        return Err(Error::Invalid("sample count must be a power of two".into()));
    }
    let k = BoundaryKernel::new(chan, omega)?;
    let centre = match case {
        KernelCase::Two => k.gamma(Side::Down, theta_p, s)?,
        KernelCase::Four => k.gamma(Side::Up, theta_p, s)?,
        _ => theta_p,
    };
    let h = 2.0 * half_width / n as f64;
    let mut buf: Vec<C64> = (0..n)
        .map(|i| {
            // half-sample offset keeps the diagonal of cases 1 and 3 off the grid
            let t = centre - half_width + (i as f64 + 0.5) * h;
            k.closed_form(case, t, theta_p, s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut planner = rustfft::FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let (mut pos, mut neg) = (0.0, 0.0);
    for (j, v) in buf.iter().enumerate() {
        let m = if j <= n / 2 { j as i64 } else { j as i64 - n as i64 };
        let e = v.norm_sqr();
        if m > 0 {
            pos += e;
        } else if m < 0 {
            neg += e;
        }
    }
    let tot = pos + neg;
    Ok(SpectralMass { case, sign: s, theta_prime: theta_p, positive: pos / tot, negative: neg / tot })
}

/// `E_w` evaluated by an independent route: `ln|l+ l-| + i arg` from the
/// expanded product `b^2/(1-w^2) - a^2/w^2`.
pub fn eval_e_expanded(x: [f64; 2], omega: C64) -> Result<C64> {
    let k = kappa(omega)?.value;
    let p = x[1] * x[1] / (1.0 - omega * omega) - x[0] * x[0] / (omega * omega);
    Ok(k * C64::new(p.norm().ln(), p.im.atan2(p.re)))
}
