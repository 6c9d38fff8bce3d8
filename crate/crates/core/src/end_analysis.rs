//! Mode analysis in the channel ends.
//!
//! Where `G` is negligible, solutions of `P(w) u = 0` split into
//! `sin(k x2) exp(+-i c_w k x1)`. Fits are taken on grid columns of the
//! deformed square, at the complex abscissae `L gamma_tau(y1)`: the modes are
//! holomorphic in `x1`, so the same two-exponential ansatz holds on the
//! deformed contour, and the scaled collar is the only part of a truncated
//! domain that is both flat and resolved.

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{c_omega, DEPTH};
use crate::scaled_solver::{GridContext, StationarySolution};
use crate::spectral_core::{clenshaw_curtis_weights, Barycentric, C64};

/// Default verdict threshold on energy ratios.
pub const IO_THRESHOLD: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum End {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCoefficient {
    pub k: usize,
    /// Amplitude of `exp(-i c k (x1 - x_ref))`.
    pub minus: C64,
    /// Amplitude of `exp(+i c k (x1 - x_ref))`.
    pub plus: C64,
    /// Condition number of the column-scaled 2x2 normal system.
    pub condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndModeFit {
    pub end: End,
    pub modes: Vec<ModeCoefficient>,
    /// Inner edge of the window, as a complex abscissa.
    pub x_ref: C64,
    /// Relative l2 misfit of the per-mode profiles.
    pub fit_residual: f64,
    /// Grid columns used.
    pub columns: usize,
}

/// Default mode count, `n2 / 3`.
pub fn default_mode_count(n2: usize) -> usize {
    (n2 / 3).max(1)
}

/// Sine coefficients `(2/pi) int u sin(k x2) dx2`, `k = 1..=kmax`, of one grid column.
pub fn sine_coefficients(column: &[C64], depth: C64, kmax: usize) -> Vec<C64> {
    let n = column.len() - 1;
    let g = crate::spectral_core::cheb_nodes(n).expect("column has at least two nodes");
    let w = clenshaw_curtis_weights(n);
    (1..=kmax)
        .map(|k| {
            let mut s = C64::new(0.0, 0.0);
            for j in 0..=n {
                let x2 = (g.nodes[j] - 1.0) * depth / 2.0;
                s += w[j] * column[j] * (k as f64 * x2).sin();
            }
            s * depth / 2.0 * (2.0 / DEPTH)
        })
        .collect()
}

/// Fits the end modes on the grid columns whose undeformed label `L y1` lies
/// in `window` (the inner edge is the end of the window nearest the origin).
pub fn fit_end_modes(sol: &StationarySolution, end: End, k: usize, window: [f64; 2]) -> Result<EndModeFit> {
    fit_end_modes_of(&sol.ctx, &sol.field, sol.omega(), end, k, window)
}

pub fn fit_end_modes_of(ctx: &GridContext, u: &[C64], omega: C64, end: End, k: usize, window: [f64; 2]) -> Result<EndModeFit> {
    let l = ctx.half_length();
    let (lo, hi) = (window[0].min(window[1]), window[0].max(window[1]));
    if k == 0 || k > ctx.grid.g2.n / 2 {
        return Err(Error::Invalid(format!("mode count {k} must be in 1..={}", ctx.grid.g2.n / 2)));
    }
    let inside = match end {
        End::Right => lo > 0.0 && hi <= l,
        End::Left => hi < 0.0 && lo >= -l,
    };
    if !inside {
        return Err(Error::Invalid(format!("window [{lo}, {hi}] is not inside the {end:?} end")));
    }
    let m2 = ctx.grid.m2();
    // drop the Dirichlet end column itself
    let cols: Vec<usize> = (1..ctx.grid.m1() - 1)
        .filter(|&j| {
            let x = l * ctx.grid.g1.nodes[j];
            x >= lo && x <= hi
        })
        .collect();
    if cols.len() < 3 {
        return Err(Error::Invalid(format!("window [{lo}, {hi}] holds only {} grid columns", cols.len())));
    }
    let flat = cols.iter().map(|&j| ctx.topo[j].1.norm() + ctx.topo[j].0.norm()).fold(0.0, f64::max);
    if flat > 1e-4 {
        return Err(Error::Invalid(format!("window is not in a flat end: |G| + |G'| reaches {flat:.2e}")));
    }
    let inner = match end {
        End::Right => lo,
        End::Left => hi,
    };
    let (x_ref, _) = crate::scaled_solver::scaling_path(inner / l, &ctx.scaling);
    let x_ref = l * x_ref;
    let c = c_omega(omega);
    let betas: Vec<Vec<C64>> = cols
        .iter()
        .map(|&j| sine_coefficients(&u[j * m2..(j + 1) * m2], DEPTH - ctx.topo[j].0, k))
        .collect();
    let mut modes = Vec::with_capacity(k);
    let mut mis = 0.0;
    let mut tot = 0.0;
    for kk in 1..=k {
        let phase: Vec<C64> = cols.iter().map(|&j| C64::i() * c * kk as f64 * (ctx.abscissa(j) - x_ref)).collect();
        let em: Vec<C64> = phase.iter().map(|p| (-p).exp()).collect();
        let ep: Vec<C64> = phase.iter().map(|p| p.exp()).collect();
        let b: Vec<C64> = betas.iter().map(|v| v[kk - 1]).collect();
        let (am, ap, cond) = two_column_lstsq(&em, &ep, &b);
        for i in 0..b.len() {
            let r = b[i] - am * em[i] - ap * ep[i];
            mis += r.norm_sqr();
            tot += b[i].norm_sqr();
        }
        modes.push(ModeCoefficient { k: kk, minus: am, plus: ap, condition: cond });
    }
    let fit_residual = if tot > 0.0 { (mis / tot).sqrt() } else { 0.0 };
    Ok(EndModeFit { end, modes, x_ref, fit_residual, columns: cols.len() })
}

/// Least squares for `b ~ a0 e0 + a1 e1` with column equilibration.
fn two_column_lstsq(e0: &[C64], e1: &[C64], b: &[C64]) -> (C64, C64, f64) {
    let n0 = e0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let n1 = e1.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut g = [[C64::new(0.0, 0.0); 2]; 2];
    let mut r = [C64::new(0.0, 0.0); 2];
    for i in 0..b.len() {
        let v = [e0[i] / n0, e1[i] / n1];
        for p in 0..2 {
            for q in 0..2 {
                g[p][q] += v[p].conj() * v[q];
            }
            r[p] += v[p].conj() * b[i];
        }
    }
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let x0 = (g[1][1] * r[0] - g[0][1] * r[1]) / det;
    let x1 = (g[0][0] * r[1] - g[1][0] * r[0]) / det;
    // Gram matrix is Hermitian with unit diagonal: eigenvalues 1 +- |g01|
    let off = g[0][1].norm();
    let cond = (1.0 + off) / (1.0 - off).max(f64::MIN_POSITIVE);
    (x0 / n0, x1 / n1, cond)
}

/// Raised-cosine cutoff: 0 for `xi <= c/2`, 1 for `xi >= c`.
pub fn cutoff_plus(xi: f64, c: f64) -> f64 {
    let a = 0.5 * c;
    if xi <= a {
        0.0
    } else if xi >= c {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * (xi - a) / (c - a)).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Plus,
    Minus,
    /// `1 - h_+ - h_-`.
    Low,
}

/// Smooth frequency projection of uniformly spaced periodic samples.
pub fn freq_project(x: &[f64], values: &[C64], band: Band, c: f64) -> Result<Vec<C64>> {
    let n = values.len();
    if n != x.len() || n < 2 || !n.is_power_of_two() {
        return Err(Error::Invalid(format!("need a power-of-two sample count, got {n}")));
    }
    let h = x[1] - x[0];
    if !(h > 0.0) || x.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1.0)) {
        return Err(Error::Invalid("samples are not uniformly spaced".into()));
    }
    let mut planner = FftPlanner::new();
    let mut buf = values.to_vec();
    planner.plan_fft_forward(n).process(&mut buf);
    for (j, v) in buf.iter_mut().enumerate() {
        let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        let xi = 2.0 * std::f64::consts::PI * m / (n as f64 * h);
        let mask = match band {
            Band::Plus => cutoff_plus(xi, c),
            Band::Minus => cutoff_plus(-xi, c),
            Band::Low => 1.0 - cutoff_plus(xi, c) - cutoff_plus(-xi, c),
        };
        *v *= mask / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    Ok(buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndEnergy {
    pub outgoing: f64,
    pub incoming: f64,
    /// `incoming / outgoing`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Incoming,
    Outgoing,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IOReport {
    pub left: EndEnergy,
    pub right: EndEnergy,
    pub outgoing_energy: f64,
    pub incoming_energy: f64,
    /// `incoming_energy / outgoing_energy`.
    pub ratio: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Outgoing content is `exp(+i c k x1)` on the right and `exp(-i c k x1)` on
/// the left.
pub fn classify_io(left: &EndModeFit, right: &EndModeFit, threshold: f64) -> Result<IOReport> {
    if left.end != End::Left || right.end != End::Right {
        return Err(Error::Invalid("classify_io expects (left, right) fits".into()));
    }
    if left.modes.len() != right.modes.len() {
        return Err(Error::Invalid("fits use different mode counts".into()));
    }
    let energy = |fit: &EndModeFit, out_plus: bool| {
        let plus: f64 = fit.modes.iter().map(|m| m.plus.norm_sqr()).sum();
        let minus: f64 = fit.modes.iter().map(|m| m.minus.norm_sqr()).sum();
        let (o, i) = if out_plus { (plus, minus) } else { (minus, plus) };
        EndEnergy { outgoing: o, incoming: i, ratio: ratio(i, o) }
    };
    let l = energy(left, false);
    let r = energy(right, true);
    let out = l.outgoing + r.outgoing;
    let inc = l.incoming + r.incoming;
    let q = ratio(inc, out);
    let verdict = if q < threshold {
        Verdict::Outgoing
    } else if ratio(out, inc) < threshold {
        Verdict::Incoming
    } else {
        Verdict::Mixed
    };
    Ok(IOReport { left: l, right: r, outgoing_energy: out, incoming_energy: inc, ratio: q, threshold, verdict })
}

/// Discrete `H^{s,beta}` norm over `|x1| <= x_max`, which must lie in the
/// undeformed region.
pub fn weighted_norm(ctx: &GridContext, u: &[C64], s: usize, beta: f64, x_max: f64) -> Result<f64> {
    if s > 2 {
        return Err(Error::Invalid(format!("unsupported Sobolev order {s}")));
    }
    if u.len() != ctx.grid.size() {
        return Err(Error::Shape(format!("field has {} entries, grid has {}", u.len(), ctx.grid.size())));
    }
    let l = ctx.half_length();
    if !(x_max > 0.0) || x_max > ctx.trusted_half_width() * (1.0 + 1e-12) {
        return Err(Error::Invalid(format!("x_max = {x_max} outside the undeformed region")));
    }
    let mut fields: Vec<Vec<C64>> = vec![u.to_vec()];
    if s >= 1 {
        let ux1 = ctx.dx1(u);
        let ux2 = ctx.dx2(u);
        if s == 2 {
            fields.push(ctx.dx1(&ux1));
            fields.push(ctx.dx2(&ux1));
            fields.push(ctx.dx2(&ux2));
        }
        fields.push(ux1);
        fields.push(ux2);
    }
    let m = (4 * ctx.grid.g1.n).max(256);
    let cc = crate::spectral_core::cheb_nodes(m)?;
    let w1 = clenshaw_curtis_weights(m);
    let w2 = clenshaw_curtis_weights(ctx.grid.g2.n);
    let ymax = x_max / l;
    let targets: Vec<f64> = cc.nodes.iter().map(|t| t * ymax).collect();
    let interp = Barycentric::new(&ctx.grid.g1).matrix(&targets);
    let m2 = ctx.grid.m2();
    let mut total = 0.0;
    for (i, &y1) in targets.iter().enumerate() {
        let x1 = l * y1;
        let depth = DEPTH - ctx.channel().g(x1);
        let weight = (1.0 + x1 * x1).powf(beta) * w1[i] * x_max * depth / 2.0;
        for f in &fields {
            for j2 in 0..m2 {
                let mut v = C64::new(0.0, 0.0);
                for j1 in 0..ctx.grid.m1() {
                    let c = interp[(i, j1)];
                    if c != 0.0 {
                        v += c * f[j1 * m2 + j2];
                    }
                }
                total += weight * w2[j2] * v.norm_sqr();
            }
        }
    }
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_plateaus() {
        assert_eq!(cutoff_plus(0.4, 1.0), 0.0);
        assert_eq!(cutoff_plus(1.0, 1.0), 1.0);
        assert!((cutoff_plus(0.75, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sine_projection_of_a_mode() {
        let n = 40;
        let g = crate::spectral_core::cheb_nodes(n).unwrap();
        let col: Vec<C64> = g.nodes.iter().map(|y| C64::new((3.0 * (y - 1.0) * DEPTH / 2.0).sin(), 0.0)).collect();
        let b = sine_coefficients(&col, C64::new(DEPTH, 0.0), 5);
        for (i, v) in b.iter().enumerate() {
            let want = if i == 2 { 1.0 } else { 0.0 };
            assert!((v - want).norm() < 1e-12, "{i} {v}");
        }
    }

    #[test]
    fn two_column_fit_is_exact_on_members() {
        let e0: Vec<C64> = (0..6).map(|i| C64::new(0.0, -0.3 * i as f64).exp()).collect();
        let e1: Vec<C64> = (0..6).map(|i| C64::new(0.1, 0.3 * i as f64).exp()).collect();
        let b: Vec<C64> = (0..6).map(|i| 2.0 * e0[i] - C64::i() * e1[i]).collect();
        let (a, c, _) = two_column_lstsq(&e0, &e1, &b);
        assert!((a - 2.0).norm() < 1e-12 && (c + C64::i()).norm() < 1e-12);
    }
}
