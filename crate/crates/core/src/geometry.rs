//! Channel geometry: topography, characteristic coordinates, subcriticality
//! and the map between the physical channel and the reference square.
//!
//! The channel is `{ G(x1) - pi < x2 < 0 }` with depth fixed to `pi`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEPTH: f64 = PI;

/// Default threshold below which `|G|` and `|G'|` count as zero.
pub const DEFAULT_ETA_SUPP: f64 = 1e-12;

/// Slack used when testing whether a point lies in the closed channel.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub const BOTH: [Sign; 2] = [Sign::Plus, Sign::Minus];
}

/// Closed-form topography descriptors. Every variant has a holomorphic
/// continuation, which the scaled solver needs in the deformed collar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topography {
    Flat,
    /// `G(x) = amplitude * exp(-x^2 / width)`.
    Gaussian { amplitude: f64, width: f64 },
    /// `G(x) = amplitude * (1 - (x/radius)^2)^power` on `|x| < radius`, zero outside.
    BumpPolynomial { amplitude: f64, radius: f64, power: u32 },
}

impl Topography {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Topography::Flat => Ok(()),
            Topography::Gaussian { amplitude, width } => {
                if !(width > 0.0) || !amplitude.is_finite() {
                    return Err(Error::Invalid(format!(
                        "gaussian topography needs width > 0 and finite amplitude, got width={width}, amplitude={amplitude}"
                    )));
                }
                if amplitude >= DEPTH {
                    return Err(Error::Invalid(format!("topography reaches the lid: amplitude {amplitude} >= pi")));
                }
                Ok(())
            }
            Topography::BumpPolynomial { amplitude, radius, power } => {
                if !(radius > 0.0) || power < 3 || !amplitude.is_finite() {
                    return Err(Error::Invalid(format!(
                        "bump topography needs radius > 0 and power >= 3, got radius={radius}, power={power}"
                    )));
                }
                if amplitude >= DEPTH {
                    return Err(Error::Invalid(format!("topography reaches the lid: amplitude {amplitude} >= pi")));
                }
                Ok(())
            }
        }
    }

    /// `(G, G', G'')` at a complex abscissa.
    pub fn eval_c(&self, z: Complex64) -> (Complex64, Complex64, Complex64) {
        let zero = Complex64::new(0.0, 0.0);
        match *self {
            Topography::Flat => (zero, zero, zero),
            Topography::Gaussian { amplitude, width } => {
                let g = amplitude * (-z * z / width).exp();
                let g1 = -2.0 * z / width * g;
                let g2 = (4.0 * z * z / (width * width) - 2.0 / width) * g;
                (g, g1, g2)
            }
            Topography::BumpPolynomial { amplitude, radius, power } => {
                if z.re.abs() >= radius {
                    return (zero, zero, zero);
                }
                let p = power as i32;
                let r2 = radius * radius;
                let q = 1.0 - z * z / r2;
                let g = amplitude * q.powi(p);
                let g1 = amplitude * p as f64 * q.powi(p - 1) * (-2.0 * z / r2);
                let g2 = amplitude
                    * p as f64
                    * ((p - 1) as f64 * q.powi(p - 2) * (4.0 * z * z / (r2 * r2)) - 2.0 * q.powi(p - 1) / r2);
                (g, g1, g2)
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Topography::Flat => 0.0,
            Topography::Gaussian { amplitude, width } => amplitude * (-x * x / width).exp(),
            _ => self.eval_c(Complex64::new(x, 0.0)).0.re,
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            Topography::Flat => 0.0,
            Topography::Gaussian { amplitude, width } => -2.0 * x / width * amplitude * (-x * x / width).exp(),
            _ => self.eval_c(Complex64::new(x, 0.0)).1.re,
        }
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        self.eval_c(Complex64::new(x, 0.0)).2.re
    }

    pub fn is_flat(&self) -> bool {
        match *self {
            Topography::Flat => true,
            Topography::Gaussian { amplitude, .. } | Topography::BumpPolynomial { amplitude, .. } => amplitude == 0.0,
        }
    }

    /// Smallest `R` with `|G|, |G'| <= eta` on `|x| >= R`.
    fn support_radius(&self, eta: f64) -> f64 {
        match *self {
            Topography::Flat => 0.0,
            Topography::BumpPolynomial { radius, amplitude, .. } => {
                if amplitude == 0.0 {
                    0.0
                } else {
                    radius
                }
            }
            Topography::Gaussian { amplitude, width } => {
                if amplitude == 0.0 {
                    return 0.0;
                }
                // Both |G| and |G'| decrease monotonically past the peak of |G'|.
                let size = |x: f64| self.value(x).abs().max(self.deriv(x).abs());
                let mut lo = (width / 2.0).sqrt();
                if size(lo) <= eta {
                    return lo;
                }
                let mut hi = 2.0 * lo + 1.0;
                while size(hi) > eta {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if size(mid) > eta {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-12 * hi {
                        break;
                    }
                }
                hi
            }
        }
    }

    pub fn min_value(&self) -> f64 {
        match *self {
            Topography::Flat => 0.0,
            Topography::Gaussian { amplitude, .. } | Topography::BumpPolynomial { amplitude, .. } => amplitude.min(0.0),
        }
    }

    pub fn max_value(&self) -> f64 {
        match *self {
            Topography::Flat => 0.0,
            Topography::Gaussian { amplitude, .. } | Topography::BumpPolynomial { amplitude, .. } => amplitude.max(0.0),
        }
    }
}

/// The channel `Omega`: topography plus its effective support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub topography: Topography,
    pub support_radius: f64,
    pub eta_supp: f64,
}

impl ChannelSpec {
    pub fn new(topography: Topography) -> Result<Self> {
        Self::with_threshold(topography, DEFAULT_ETA_SUPP)
    }

    pub fn with_threshold(topography: Topography, eta_supp: f64) -> Result<Self> {
        topography.validate()?;
        if !(eta_supp > 0.0) {
            return Err(Error::Invalid(format!("eta_supp must be positive, got {eta_supp}")));
        }
        Ok(Self {
            topography,
            support_radius: topography.support_radius(eta_supp),
            eta_supp,
        })
    }

    pub fn flat() -> Self {
        Self { topography: Topography::Flat, support_radius: 0.0, eta_supp: DEFAULT_ETA_SUPP }
    }

    /// The topography `exp(-x^2/10)` used for the reference run.
    pub fn figure1() -> Self {
        Self::new(Topography::Gaussian { amplitude: 1.0, width: 10.0 }).expect("valid builtin topography")
    }

    pub fn g(&self, x1: f64) -> f64 {
        self.topography.value(x1)
    }

    pub fn dg(&self, x1: f64) -> f64 {
        self.topography.deriv(x1)
    }

    /// Bottom height `G(x1) - pi`.
    pub fn bottom(&self, x1: f64) -> f64 {
        self.g(x1) - DEPTH
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        x[1] <= DOMAIN_SLACK && x[1] >= self.bottom(x[0]) - DOMAIN_SLACK
    }
}

/// `omega = lambda + i epsilon` with `0 < lambda < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralParameter {
    pub lambda: f64,
    pub epsilon: f64,
}

impl SpectralParameter {
    pub fn new(lambda: f64, epsilon: f64) -> Result<Self> {
        Self::with_bound(lambda, epsilon, 1.0)
    }

    pub fn with_bound(lambda: f64, epsilon: f64, eps_max: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Domain(format!("lambda must lie in (0,1), got {lambda}")));
        }
        if !epsilon.is_finite() || epsilon.abs() > eps_max {
            return Err(Error::Domain(format!("|epsilon| must be at most {eps_max}, got {epsilon}")));
        }
        Ok(Self { lambda, epsilon })
    }

    pub fn omega(&self) -> Complex64 {
        Complex64::new(self.lambda, self.epsilon)
    }

    pub fn c_lambda(&self) -> f64 {
        ((1.0 - self.lambda * self.lambda).sqrt()) / self.lambda
    }

    pub fn c_omega(&self) -> Complex64 {
        c_omega(self.omega())
    }
}

/// Slope `sqrt(1 - lambda^2) / lambda` of the characteristic lines.
pub fn c_slope(lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Domain(format!("lambda must lie in (0,1), got {lambda}")));
    }
    Ok((1.0 - lambda * lambda).sqrt() / lambda)
}

/// Principal `sqrt(1 - omega^2)`.
pub fn sqrt_one_minus_sq(omega: Complex64) -> Complex64 {
    (1.0 - omega * omega).sqrt()
}

/// Complex slope `c_omega = sqrt(1 - omega^2) / omega`.
pub fn c_omega(omega: Complex64) -> Complex64 {
    sqrt_one_minus_sq(omega) / omega
}

fn check_omega(omega: Complex64) -> Result<()> {
    let near = |a: Complex64, b: f64| (a - b).norm() < 1e-14;
    if near(omega, 0.0) || near(omega, 1.0) || near(omega, -1.0) || !omega.re.is_finite() || !omega.im.is_finite() {
        return Err(Error::SingularParameter(omega));
    }
    Ok(())
}

/// Characteristic coordinate `+-x1/omega + x2/sqrt(1 - omega^2)`.
pub fn ell(x: [f64; 2], omega: Complex64, sign: Sign) -> Result<Complex64> {
    check_omega(omega)?;
    Ok(ell_unchecked(x, omega, sign))
}

#[inline]
pub fn ell_unchecked(x: [f64; 2], omega: Complex64, sign: Sign) -> Complex64 {
    sign.value() * x[0] / omega + x[1] / sqrt_one_minus_sq(omega)
}

/// Precomputed `1/omega` and `1/sqrt(1 - omega^2)` for repeated evaluations.
#[derive(Debug, Clone, Copy)]
pub struct CharCoords {
    pub omega: Complex64,
    pub inv_omega: Complex64,
    pub inv_root: Complex64,
}

impl CharCoords {
    pub fn new(omega: Complex64) -> Result<Self> {
        check_omega(omega)?;
        Ok(Self { omega, inv_omega: 1.0 / omega, inv_root: 1.0 / sqrt_one_minus_sq(omega) })
    }

    #[inline]
    pub fn ell(&self, x1: f64, x2: f64, sign: Sign) -> Complex64 {
        sign.value() * x1 * self.inv_omega + x2 * self.inv_root
    }
}

/// `c_lambda - max |G'|`; positive exactly when the channel is subcritical.
pub fn subcriticality_margin(chan: &ChannelSpec, lambda: f64) -> Result<f64> {
    let c = c_slope(lambda)?;
    Ok(c - max_abs_slope(chan))
}

/// `max |G'|` by a dense scan refined with golden-section search.
pub fn max_abs_slope(chan: &ChannelSpec) -> f64 {
    let r = chan.support_radius;
    if r == 0.0 || chan.topography.is_flat() {
        return 0.0;
    }
    let f = |x: f64| chan.dg(x).abs();
    let n = 10_000;
    let h = 2.0 * r / n as f64;
    let mut best = 0usize;
    let mut best_val = f(-r);
    for i in 1..=n {
        let v = f(-r + i as f64 * h);
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    let lo = -r + (best.saturating_sub(1)) as f64 * h;
    let hi = (-r + (best + 1) as f64 * h).min(r);
    best_val.max(golden_max(f, lo, hi, 1e-14))
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs()) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    f(0.5 * (a + b)).max(fc).max(fd)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapDirection {
    Forward,
    Inverse,
}

/// `y1 = x1/L`, `y2 = 1 + 2 x2/(pi - G(x1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMap {
    pub half_length: f64,
    pub channel: ChannelSpec,
}

impl ReferenceMap {
    pub fn new(channel: ChannelSpec, half_length: f64) -> Result<Self> {
        if !(half_length > 0.0) {
            return Err(Error::Invalid(format!("half length must be positive, got {half_length}")));
        }
        Ok(Self { half_length, channel })
    }

    pub fn forward(&self, x: [f64; 2]) -> Result<[f64; 2]> {
        let l = self.half_length;
        if x[0].abs() > l * (1.0 + DOMAIN_SLACK) || !self.channel.contains(x) {
            return Err(Error::OutOfDomain(format!("({}, {}) not in the truncated channel", x[0], x[1])));
        }
        Ok(self.forward_unchecked(x))
    }

    #[inline]
    pub fn forward_unchecked(&self, x: [f64; 2]) -> [f64; 2] {
        let depth = DEPTH - self.channel.g(x[0]);
        [x[0] / self.half_length, 1.0 + 2.0 * x[1] / depth]
    }

    pub fn inverse(&self, y: [f64; 2]) -> Result<[f64; 2]> {
        let s = 1.0 + DOMAIN_SLACK;
        if y[0].abs() > s || y[1].abs() > s || !y[0].is_finite() || !y[1].is_finite() {
            return Err(Error::OutOfDomain(format!("({}, {}) not in the reference square", y[0], y[1])));
        }
        Ok(self.inverse_unchecked(y))
    }

    #[inline]
    pub fn inverse_unchecked(&self, y: [f64; 2]) -> [f64; 2] {
        let x1 = y[0] * self.half_length;
        let depth = DEPTH - self.channel.g(x1);
        [x1, 0.5 * (y[1] - 1.0) * depth]
    }
}

pub fn map_coords(p: [f64; 2], map: &ReferenceMap, direction: MapDirection) -> Result<[f64; 2]> {
    match direction {
        MapDirection::Forward => map.forward(p),
        MapDirection::Inverse => map.inverse(p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_values() {
        assert!((c_slope(std::f64::consts::FRAC_1_SQRT_2).unwrap() - 1.0).abs() < 1e-15);
        assert!((c_slope(0.6).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!(c_slope(1.0).is_err());
        assert!(c_slope(0.0).is_err());
    }

    #[test]
    fn ell_rejects_singular_omega() {
        for w in [0.0, 1.0, -1.0] {
            assert!(ell([1.0, 0.0], Complex64::new(w, 0.0), Sign::Plus).is_err());
        }
    }

    #[test]
    fn gaussian_continuation_matches_real() {
        let t = Topography::Gaussian { amplitude: 1.0, width: 10.0 };
        for x in [-3.0, -0.4, 0.0, 2.2, 7.0] {
            let (g, g1, g2) = t.eval_c(Complex64::new(x, 0.0));
            assert!((g.re - t.value(x)).abs() < 1e-15);
            assert!((g1.re - t.deriv(x)).abs() < 1e-15);
            let h = 1e-4;
            let fd = (t.deriv(x + h) - t.deriv(x - h)) / (2.0 * h);
            assert!((g2.re - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn bump_derivatives_match_differences() {
        let t = Topography::BumpPolynomial { amplitude: 0.8, radius: 3.0, power: 4 };
        for x in [-2.5, -1.0, 0.3, 2.9] {
            let h = 1e-5;
            let fd1 = (t.value(x + h) - t.value(x - h)) / (2.0 * h);
            let fd2 = (t.deriv(x + h) - t.deriv(x - h)) / (2.0 * h);
            assert!((t.deriv(x) - fd1).abs() < 1e-8);
            assert!((t.deriv2(x) - fd2).abs() < 1e-7);
        }
        assert_eq!(t.value(3.5), 0.0);
    }

    #[test]
    fn support_radius_respects_threshold() {
        let chan = ChannelSpec::figure1();
        let r = chan.support_radius;
        assert!(r > 16.0 && r < 18.0, "{r}");
        for x in [r, r + 0.5, r + 3.0] {
            assert!(chan.g(x).abs() <= chan.eta_supp && chan.dg(x).abs() <= chan.eta_supp);
        }
        assert!(chan.g(r - 0.2).abs().max(chan.dg(r - 0.2).abs()) > chan.eta_supp);
    }

    #[test]
    fn reference_map_edges() {
        let chan = ChannelSpec::figure1();
        let map = ReferenceMap::new(chan, 15.0).unwrap();
        assert_eq!(map.forward([0.0, 0.0]).unwrap(), [0.0, 1.0]);
        for x1 in [-14.0, -2.0, 0.0, 3.3] {
            let y = map.forward([x1, chan.bottom(x1)]).unwrap();
            assert!((y[1] + 1.0).abs() < 1e-15);
        }
        assert!(map.forward([16.0, -1.0]).is_err());
        assert!(map.forward([0.0, 0.5]).is_err());
        assert!(map.inverse([1.5, 0.0]).is_err());
    }
}
