//! Time-domain forced problem `(d_t^2 Lap + d_2^2) u = f cos(lambda t)` on a
//! truncated channel `|x1| < L_e`, Dirichlet on all sides.
//!
//! Galerkin discretization in the basis
//! `sin(m pi (x1 + L_e) / (2 L_e)) sin(k s)`, where `s = pi (1 + x2 / d(x1))`
//! and `d = pi - G` flattens the channel. With `A = -(grad, grad)` and
//! `B = -(d_2, d_2)` the pencil `B phi = z A phi` is symmetric definite and
//! its eigenvalues lie in `[0, 1]`. Modes are normalized by
//! `phi^T (-A) phi = 1`, so modal amplitudes measure `H^1_0` energy directly.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::linalg::solvers::Solve;
use faer::{Mat, Par};
use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ChannelSpec;
use crate::scaled_solver::StationarySolution;
use crate::spectral_core::C64;

/// Eigenpairs with `||B phi - z A phi|| / ||A phi||` above this are dropped.
pub const EIGEN_RESIDUAL_LIMIT: f64 = 1e-8;
/// Slack on `z in (0, 1)`.
pub const SPECTRUM_SLACK: f64 = 1e-10;
/// End-window energy share that defines the contamination time.
pub const CONTAMINATION_LIMIT: f64 = 1e-2;

/// `W_{t,lambda}(z)`.
pub fn w_profile(z: f64, t: f64, lambda: f64) -> Result<C64> {
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::Domain(format!("W profile needs z in (0, 1), got {z}")));
    }
    if !(lambda > 0.0 && lambda < 1.0) || t < 0.0 {
        return Err(Error::Domain(format!("W profile needs lambda in (0, 1) and t >= 0, got {lambda}, {t}")));
    }
    Ok(w_unchecked(z, t, lambda))
}

/// `(1 - exp(-i t a)) / a`, with the value `i t` at `a = 0`.
fn phase_quotient(a: f64, t: f64) -> C64 {
    if a == 0.0 {
        return C64::new(0.0, t);
    }
    let h = 0.5 * t * a;
    C64::new(2.0 * h.sin() * h.sin(), (t * a).sin()) / a
}

fn w_unchecked(z: f64, t: f64, lambda: f64) -> C64 {
    let r = z.sqrt();
    (phase_quotient(lambda + r, t) - phase_quotient(lambda - r, t)) / (2.0 * r)
}

/// Truncated-channel discretization sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalGrid {
    /// Horizontal sine modes.
    pub modes_x: usize,
    /// Vertical sine modes.
    pub modes_y: usize,
}

fn gl_rule(order: usize) -> Vec<(f64, f64)> {
    GaussLegendre::new(NonZeroUsize::new(order).expect("positive order")).as_node_weight_pairs().to_vec()
}

fn composite(a: f64, b: f64, panels: usize, rule: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    let h = (b - a) / panels as f64;
    let mut x = Vec::with_capacity(panels * rule.len());
    let mut w = Vec::with_capacity(panels * rule.len());
    for p in 0..panels {
        let l = a + p as f64 * h;
        for &(t, wt) in rule {
            x.push(l + 0.5 * h * (t + 1.0));
            w.push(0.5 * h * wt);
        }
    }
    (x, w)
}

/// Sine bases sampled at quadrature points.
#[derive(Debug, Clone)]
struct Basis {
    half_length: f64,
    modes_x: usize,
    modes_y: usize,
}

impl Basis {
    fn mu(&self, m: usize) -> f64 {
        (m + 1) as f64 * PI / (2.0 * self.half_length)
    }

    /// `(X, X')` with shape `(points, modes_x)`.
    fn horizontal(&self, x: &[f64]) -> (Mat<f64>, Mat<f64>) {
        let l = self.half_length;
        let v = Mat::from_fn(x.len(), self.modes_x, |q, m| (self.mu(m) * (x[q] + l)).sin());
        let d = Mat::from_fn(x.len(), self.modes_x, |q, m| self.mu(m) * (self.mu(m) * (x[q] + l)).cos());
        (v, d)
    }

    /// `(S, S')` with shape `(points, modes_y)`.
    fn vertical(&self, s: &[f64]) -> (Mat<f64>, Mat<f64>) {
        let v = Mat::from_fn(s.len(), self.modes_y, |r, k| ((k + 1) as f64 * s[r]).sin());
        let d = Mat::from_fn(s.len(), self.modes_y, |r, k| (k + 1) as f64 * ((k + 1) as f64 * s[r]).cos());
        (v, d)
    }
}

/// `sum_q w_q g_q P[q, a] Q[q, b]`.
fn weighted_gram(p: &Mat<f64>, q: &Mat<f64>, w: &[f64], g: &[f64]) -> Mat<f64> {
    let scaled = Mat::from_fn(p.nrows(), p.ncols(), |i, j| w[i] * g[i] * p[(i, j)]);
    scaled.transpose() * q
}

/// Adds `s * kron(x, y)` into `out` with index `m * K + k`.
fn add_kron(out: &mut Mat<f64>, x: &Mat<f64>, y: &Mat<f64>, s: f64) {
    let ky = y.nrows();
    for m in 0..x.nrows() {
        for mp in 0..x.ncols() {
            let a = s * x[(m, mp)];
            if a == 0.0 {
                continue;
            }
            for k in 0..ky {
                for kp in 0..y.ncols() {
                    out[(m * ky + k, mp * ky + kp)] += a * y[(k, kp)];
                }
            }
        }
    }
}

/// Generalized eigenpairs of the truncated pencil plus the expanded forcing.
#[derive(Debug, Clone)]
pub struct ModalDecomposition {
    pub channel: ChannelSpec,
    pub half_length: f64,
    pub grid: ModalGrid,
    /// Retained `z_k`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Columns `phi_k` with `phi_k^T (-A) phi_k = 1`.
    pub vectors: Mat<f64>,
    pub residuals: Vec<f64>,
    /// `max_{j != k} |phi_j^T A phi_k|` over retained modes.
    pub orthogonality: f64,
    /// Modes computed before the retention filter.
    pub computed: usize,
    /// `c_k` with `f = sum c_k A phi_k`.
    pub forcing: Vec<f64>,
    pub a: Mat<f64>,
    pub b: Mat<f64>,
    basis: Basis,
}

/// Assembles and diagonalizes the pencil on `|x1| < half_length`.
pub fn discretize_p(chan: &ChannelSpec, half_length: f64, grid: ModalGrid) -> Result<ModalDecomposition> {
    if grid.modes_x == 0 || grid.modes_y == 0 {
        return Err(Error::Invalid("modal grid needs at least one mode per direction".into()));
    }
    if !(half_length > chan.support_radius) {
        return Err(Error::Invalid(format!(
            "truncation half-length {half_length} must exceed the topography support radius {}",
            chan.support_radius
        )));
    }
    let basis = Basis { half_length, modes_x: grid.modes_x, modes_y: grid.modes_y };
    let rule = gl_rule(12);
    let (x, wx) = composite(-half_length, half_length, grid.modes_x.max(8), &rule);
    let (s, ws) = composite(0.0, PI, grid.modes_y.max(4), &rule);
    let (xv, xd) = basis.horizontal(&x);
    let (sv, sd) = basis.vertical(&s);

    let d: Vec<f64> = x.iter().map(|&t| PI - chan.g(t)).collect();
    let dp: Vec<f64> = x.iter().map(|&t| -chan.dg(t)).collect();
    let ones = vec![1.0; s.len()];
    let pi_minus: Vec<f64> = s.iter().map(|&t| PI - t).collect();
    let pi_minus2: Vec<f64> = pi_minus.iter().map(|v| v * v).collect();
    let i0 = weighted_gram(&sv, &sv, &ws, &ones);
    let dd = weighted_gram(&sd, &sd, &ws, &ones);
    let i1 = weighted_gram(&sv, &sd, &ws, &pi_minus);
    let i2 = weighted_gram(&sd, &sd, &ws, &pi_minus2);

    let g_dd: Vec<f64> = d.iter().map(|v| v / PI).collect();
    let g_dp: Vec<f64> = dp.iter().map(|v| v / PI).collect();
    let g_dp2: Vec<f64> = d.iter().zip(&dp).map(|(a, b)| b * b / (a * PI)).collect();
    let g_inv: Vec<f64> = d.iter().map(|v| PI / v).collect();

    let n = grid.modes_x * grid.modes_y;
    let mut neg_a = Mat::<f64>::zeros(n, n);
    add_kron(&mut neg_a, &weighted_gram(&xd, &xd, &wx, &g_dd), &i0, 1.0);
    if !chan.topography.is_flat() {
        add_kron(&mut neg_a, &weighted_gram(&xd, &xv, &wx, &g_dp), &i1, 1.0);
        add_kron(&mut neg_a, &weighted_gram(&xv, &xd, &wx, &g_dp), &i1.transpose().to_owned(), 1.0);
        add_kron(&mut neg_a, &weighted_gram(&xv, &xv, &wx, &g_dp2), &i2, 1.0);
    }
    let xx = weighted_gram(&xv, &xv, &wx, &g_inv);
    let mut neg_b = Mat::<f64>::zeros(n, n);
    add_kron(&mut neg_b, &xx, &dd, 1.0);
    add_kron(&mut neg_a, &xx, &dd, 1.0);
    symmetrize(&mut neg_a);
    symmetrize(&mut neg_b);

    let llt = neg_a
        .llt(faer::Side::Lower)
        .map_err(|_| Error::Invalid("pencil is indefinite: -A has no Cholesky factor".into()))?;
    let l = llt.L().to_owned();
    let mut y = neg_b.clone();
    solve_lower_triangular_in_place(l.as_ref(), y.as_mut(), Par::Seq);
    let mut c = y.transpose().to_owned();
    solve_lower_triangular_in_place(l.as_ref(), c.as_mut(), Par::Seq);
    symmetrize(&mut c);
    let eig = c
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Convergence(format!("symmetric eigensolver failed: {e:?}")))?;
    let mut phi = eig.U().to_owned();
    solve_upper_triangular_in_place(l.transpose(), phi.as_mut(), Par::Seq);
    let z_all: Vec<f64> = (0..n).map(|i| eig.S()[i]).collect();

    let aphi = &neg_a * &phi;
    let bphi = &neg_b * &phi;
    let mut keep = Vec::new();
    let mut residuals = Vec::new();
    for (k, &z) in z_all.iter().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            num += (bphi[(i, k)] - z * aphi[(i, k)]).powi(2);
            den += aphi[(i, k)].powi(2);
        }
        let r = (num / den).sqrt();
        if z > -SPECTRUM_SLACK && z < 1.0 + SPECTRUM_SLACK && r < EIGEN_RESIDUAL_LIMIT {
            keep.push(k);
            residuals.push(r);
        }
    }
    let vectors = Mat::from_fn(n, keep.len(), |i, j| phi[(i, keep[j])]);
    let eigenvalues: Vec<f64> = keep.iter().map(|&k| z_all[k]).collect();
    let gram = vectors.transpose() * (&neg_a * &vectors);
    let mut orthogonality: f64 = 0.0;
    for i in 0..keep.len() {
        for j in 0..keep.len() {
            if i != j {
                orthogonality = orthogonality.max(gram[(i, j)].abs());
            }
        }
    }
    let a = Mat::from_fn(n, n, |i, j| -neg_a[(i, j)]);
    let b = Mat::from_fn(n, n, |i, j| -neg_b[(i, j)]);
    Ok(ModalDecomposition {
        channel: *chan,
        half_length,
        grid,
        forcing: vec![0.0; keep.len()],
        eigenvalues,
        vectors,
        residuals,
        orthogonality,
        computed: n,
        a,
        b,
        basis,
    })
}

fn symmetrize(m: &mut Mat<f64>) {
    for i in 0..m.nrows() {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

impl ModalDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `F_i = (f, psi_i)` by tensor Gauss-Legendre quadrature.
    pub fn load_vector<F: Fn([f64; 2]) -> f64>(&self, f: F) -> Vec<f64> {
        let rule = gl_rule(12);
        let (x, wx) = composite(-self.half_length, self.half_length, self.grid.modes_x.max(8), &rule);
        let (s, ws) = composite(0.0, PI, self.grid.modes_y.max(4), &rule);
        let (xv, _) = self.basis.horizontal(&x);
        let (sv, _) = self.basis.vertical(&s);
        let vals = Mat::from_fn(x.len(), s.len(), |q, r| {
            let d = PI - self.channel.g(x[q]);
            let x2 = -d * (PI - s[r]) / PI;
            wx[q] * ws[r] * d / PI * f([x[q], x2])
        });
        let out = xv.transpose() * &vals * &sv;
        let k = self.grid.modes_y;
        let mut load = vec![0.0; self.grid.modes_x * k];
        for m in 0..self.grid.modes_x {
            for j in 0..k {
                load[m * k + j] = out[(m, j)];
            }
        }
        load
    }

    /// Sets `c_k = -phi_k^T F`, the expansion `F = sum c_k A phi_k`.
    pub fn set_load(&mut self, load: &[f64]) -> Result<()> {
        if load.len() != self.vectors.nrows() {
            return Err(Error::Shape(format!("load has {} entries, basis has {}", load.len(), self.vectors.nrows())));
        }
        self.forcing = (0..self.len())
            .map(|k| -(0..load.len()).map(|i| self.vectors[(i, k)] * load[i]).sum::<f64>())
            .collect();
        Ok(())
    }

    pub fn expand_forcing<F: Fn([f64; 2]) -> f64>(&mut self, f: F) -> Result<()> {
        let load = self.load_vector(f);
        self.set_load(&load)
    }

    /// Basis coefficients of `sum a_k phi_k`.
    pub fn synthesize(&self, amplitudes: &[f64]) -> Vec<f64> {
        let n = self.vectors.nrows();
        let mut out = vec![0.0; n];
        for (k, &a) in amplitudes.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += a * self.vectors[(i, k)];
            }
        }
        out
    }

    /// `(u, d_1 u, d_2 u)` on the tensor grid `x x s` for basis coefficients `u`.
    pub fn evaluate(&self, coeffs: &[f64], x: &[f64], s: &[f64]) -> [Mat<f64>; 3] {
        let k = self.grid.modes_y;
        let u = Mat::from_fn(self.grid.modes_x, k, |m, j| coeffs[m * k + j]);
        let (xv, xd) = self.basis.horizontal(x);
        let (sv, sd) = self.basis.vertical(s);
        let v = &xv * &u * sv.transpose();
        let vs = &xv * &u * sd.transpose();
        let vx = &xd * &u * sv.transpose();
        let d1 = Mat::from_fn(x.len(), s.len(), |q, r| {
            let d = PI - self.channel.g(x[q]);
            let dp = -self.channel.dg(x[q]);
            vx[(q, r)] + (PI - s[r]) * dp / d * vs[(q, r)]
        });
        let d2 = Mat::from_fn(x.len(), s.len(), |q, r| PI / (PI - self.channel.g(x[q])) * vs[(q, r)]);
        [v, d1, d2]
    }

    /// Physical point of the flattened coordinates.
    pub fn physical(&self, x1: f64, s: f64) -> [f64; 2] {
        let d = PI - self.channel.g(x1);
        [x1, -d * (PI - s) / PI]
    }
}

/// Modal time series `a_k(t) = Re(e^{i lambda t} W_{t,lambda}(z_k)) c_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionProfile {
    pub lambda: f64,
    pub times: Vec<f64>,
    /// `amplitudes[i][k]` at `times[i]`.
    pub amplitudes: Vec<Vec<f64>>,
    /// End-window share of `H^1_0` energy per time.
    pub end_share: Vec<f64>,
    /// First sampled time with end share above the limit.
    pub t_max: Option<f64>,
    pub end_window: f64,
}

impl EvolutionProfile {
    pub fn flagged(&self, i: usize) -> bool {
        self.t_max.is_some_and(|t| self.times[i] > t)
    }
}

pub fn modal_amplitudes(modal: &ModalDecomposition, lambda: f64, t: f64) -> Result<Vec<f64>> {
    modal
        .eigenvalues
        .iter()
        .zip(&modal.forcing)
        .map(|(&z, &c)| {
            let z = z.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
            let w = w_profile(z, t, lambda)?;
            Ok((C64::from_polar(1.0, lambda * t) * w).re * c)
        })
        .collect()
}

/// `H^1_0` energy of basis coefficients per `x1` quadrature column, with the
/// quadrature nodes.
fn energy_profile(modal: &ModalDecomposition, coeffs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let rule = gl_rule(8);
    let (x, wx) = composite(-modal.half_length, modal.half_length, modal.grid.modes_x.max(8), &rule);
    let (s, ws) = composite(0.0, PI, modal.grid.modes_y.max(4), &rule);
    let [_, d1, d2] = modal.evaluate(coeffs, &x, &s);
    let e = (0..x.len())
        .map(|q| {
            let d = PI - modal.channel.g(x[q]);
            wx[q] * (0..s.len()).map(|r| ws[r] * d / PI * (d1[(q, r)].powi(2) + d2[(q, r)].powi(2))).sum::<f64>()
        })
        .collect();
    (x, e)
}

/// Evolves the expanded forcing and tracks end-window energy.
pub fn evolve_profile(modal: &ModalDecomposition, lambda: f64, times: &[f64], end_window: f64) -> Result<EvolutionProfile> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Domain(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    if !(end_window > 0.0 && end_window < modal.half_length) {
        return Err(Error::Invalid(format!("end window {end_window} must lie in (0, {})", modal.half_length)));
    }
    let mut amplitudes = Vec::with_capacity(times.len());
    let mut end_share = Vec::with_capacity(times.len());
    let mut t_max = None;
    for &t in times {
        let a = modal_amplitudes(modal, lambda, t)?;
        let coeffs = modal.synthesize(&a);
        let (x, e) = energy_profile(modal, &coeffs);
        let total: f64 = e.iter().sum();
        let ends: f64 = x.iter().zip(&e).filter(|(x, _)| x.abs() > modal.half_length - end_window).map(|(_, e)| e).sum();
        let share = if total > 0.0 { ends / total } else { 0.0 };
        if t_max.is_none() && share > CONTAMINATION_LIMIT {
            t_max = Some(t);
        }
        amplitudes.push(a);
        end_share.push(share);
    }
    Ok(EvolutionProfile { lambda, times: times.to_vec(), amplitudes, end_share, t_max, end_window })
}

/// Independent Stormer-Verlet integration of `A u'' + B u = F cos(lambda t)`
/// from rest; returns basis coefficients at `t_end`.
pub fn leapfrog(modal: &ModalDecomposition, load: &[f64], lambda: f64, t_end: f64, dt: f64) -> Result<Vec<f64>> {
    let n = modal.a.nrows();
    if load.len() != n {
        return Err(Error::Shape("load length does not match the basis".into()));
    }
    let neg_a = Mat::from_fn(n, n, |i, j| -modal.a[(i, j)]);
    let llt = neg_a.llt(faer::Side::Lower).map_err(|_| Error::Invalid("pencil is indefinite".into()))?;
    let neg_b = Mat::from_fn(n, n, |i, j| -modal.b[(i, j)]);
    let kop = llt.solve(&neg_b);
    let h = llt.solve(Mat::from_fn(n, 1, |i, _| load[i]));
    let steps = (t_end / dt).round() as usize;
    let dt = t_end / steps as f64;
    let accel = |u: &Mat<f64>, t: f64| -> Mat<f64> {
        let c = (lambda * t).cos();
        let ku = &kop * u;
        Mat::from_fn(n, 1, |i, _| -h[(i, 0)] * c - ku[(i, 0)])
    };
    let mut prev = Mat::<f64>::zeros(n, 1);
    let a0 = accel(&prev, 0.0);
    let mut cur = Mat::from_fn(n, 1, |i, _| 0.5 * dt * dt * a0[(i, 0)]);
    for step in 1..steps {
        let a = accel(&cur, step as f64 * dt);
        let next = Mat::from_fn(n, 1, |i, _| 2.0 * cur[(i, 0)] - prev[(i, 0)] + dt * dt * a[(i, 0)]);
        prev = cur;
        cur = next;
    }
    Ok((0..n).map(|i| cur[(i, 0)]).collect())
}

/// Energy `1/2 sum (a_k'^2 + z_k a_k^2)` of free modal evolution from
/// `(a(0), a'(0))`, at each time.
pub fn free_energy(modal: &ModalDecomposition, a0: &[f64], v0: &[f64], times: &[f64]) -> Vec<f64> {
    times
        .iter()
        .map(|&t| {
            modal
                .eigenvalues
                .iter()
                .zip(a0.iter().zip(v0))
                .map(|(&z, (&a, &v))| {
                    let r = z.max(0.0).sqrt();
                    let (s, c) = (r * t).sin_cos();
                    let (at, vt) = if r > 0.0 { (a * c + v * s / r, -a * r * s + v * c) } else { (a + v * t, v) };
                    0.5 * (vt * vt + z * at * at)
                })
                .sum()
        })
        .collect()
}

/// Options of the leading-profile comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileErrorOptions {
    pub beta: f64,
    /// `e(t)` is taken over `|x1| <= x_max`.
    pub x_max: f64,
    /// Near-resonant window is `|z - lambda^2| <= near_fraction lambda^2`.
    pub near_fraction: f64,
    /// Reference time of the far-energy bound.
    pub far_reference_time: f64,
    /// Length of the averaging windows for the trend of `e(t)`.
    pub averaging_window: f64,
}

impl Default for ProfileErrorOptions {
    fn default() -> Self {
        Self { beta: -0.6, x_max: 9.0, near_fraction: 0.05, far_reference_time: 5.0, averaging_window: 2.0 * PI }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileErrorReport {
    pub options: ProfileErrorOptions,
    pub times: Vec<f64>,
    /// Weighted `H^{1,beta}` norm of `u(t) - Re(e^{i lambda t} u+)`.
    pub weighted_error: Vec<f64>,
    /// Unweighted `H^1` norm of the same difference over `|x1| <= x_max`.
    pub energy_error: Vec<f64>,
    /// Wave energy `1/2 (|a'|^2 + z |a|^2)` of the far-spectral remainder
    /// `r(t) = Re(e^{i lambda t} (1 - phi(P)) (W_t(P) - (P - lambda^2)^{-1}) f)`.
    pub far_energy: Vec<f64>,
    /// `||r(t)||^2` in `H^1_0`.
    pub far_h1: Vec<f64>,
    /// `sum (1 - phi(z_k))^2 c_k^2 / (z_k - lambda^2)^2`, the uniform bound of `far_h1`.
    pub far_h1_bound: f64,
    pub near_modes: usize,
    /// Smallest gap between consecutive retained eigenvalues in the near window.
    pub near_min_gap: Option<f64>,
    pub t_max: f64,
    /// `e(T_max / 4)` and `e(T_max)` at the nearest samples.
    pub e_quarter: f64,
    pub e_end: f64,
    /// Means of `e` over the `averaging_window` preceding each of those times.
    pub e_quarter_mean: f64,
    pub e_end_mean: f64,
    /// `max far_energy / far_energy(t_ref)` over `[t_ref, T_max]`.
    pub far_ratio_max: f64,
    /// Least-squares slope of `e(t)` over `[T_max / 4, T_max]`.
    pub trend_slope: f64,
    /// Windowed mean at `T_max` below the one at `T_max / 4`, and a negative trend slope.
    pub decreasing: bool,
    pub far_bounded: bool,
}

/// `phi(z)`: 1 on `|z - l2| <= delta`, 0 beyond `2 delta`, smooth between.
pub fn resonant_cutoff(z: f64, l2: f64, delta: f64) -> f64 {
    let t = ((z - l2).abs() - delta) / delta;
    if t <= 0.0 {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    let p = (-1.0 / t).exp();
    let q = (-1.0 / (1.0 - t)).exp();
    q / (p + q)
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// `u+` and its physical gradient at the nodes `x x s` of the modal flattening.
fn sample_stationary(modal: &ModalDecomposition, up: &StationarySolution, x: &[f64], s: &[f64]) -> [Vec<C64>; 3] {
    let ctx = &up.ctx;
    let d1 = ctx.dx1(&up.field);
    let d2 = ctx.dx2(&up.field);
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for &x1 in x {
        let cols = [ctx.column(&up.field, x1), ctx.column(&d1, x1), ctx.column(&d2, x1)];
        for &sr in s {
            let p = modal.physical(x1, sr);
            for (o, c) in out.iter_mut().zip(&cols) {
                o.push(c.eval(p[1]));
            }
        }
    }
    out
}

/// Compares `u(t)` with `Re(e^{i lambda t} u+)` and splits off the far
/// spectral part.
pub fn leading_profile_error(
    modal: &ModalDecomposition,
    profile: &EvolutionProfile,
    u_plus: &StationarySolution,
    opts: ProfileErrorOptions,
) -> Result<ProfileErrorReport> {
    let lambda = profile.lambda;
    if (u_plus.param.lambda - lambda).abs() > 1e-12 || u_plus.param.epsilon >= 0.0 {
        return Err(Error::Invalid("u+ must be solved at w = lambda - i eps with eps > 0".into()));
    }
    if opts.x_max > u_plus.ctx.trusted_half_width() + 1e-12 || opts.x_max >= modal.half_length {
        return Err(Error::Shape(format!(
            "comparison window {} exceeds the stationary trusted zone {} or the truncation {}",
            opts.x_max,
            u_plus.ctx.trusted_half_width(),
            modal.half_length
        )));
    }
    if !(opts.beta < -0.5) {
        return Err(Error::Invalid(format!("beta must be below -1/2, got {}", opts.beta)));
    }
    let rule = gl_rule(8);
    let (x, wx) = composite(-opts.x_max, opts.x_max, (4.0 * opts.x_max).ceil() as usize, &rule);
    let (s, ws) = composite(0.0, PI, modal.grid.modes_y.max(6), &rule);
    let [p0, p1, p2] = sample_stationary(modal, u_plus, &x, &s);
    let ns = s.len();

    let l2 = lambda * lambda;
    let delta = opts.near_fraction * l2;
    let far_weight: Vec<f64> = modal.eigenvalues.iter().map(|&z| 1.0 - resonant_cutoff(z, l2, delta)).collect();
    let near_vals: Vec<f64> = modal.eigenvalues.iter().copied().filter(|&z| (z - l2).abs() <= delta).collect();
    let near_min_gap = near_vals.windows(2).map(|w| w[1] - w[0]).reduce(f64::min);

    let mut weighted_error = Vec::new();
    let mut energy_error = Vec::new();
    let mut far_energy = Vec::new();
    let mut far_h1 = Vec::new();
    let far_h1_bound: f64 = modal
        .eigenvalues
        .iter()
        .zip(&modal.forcing)
        .zip(&far_weight)
        .map(|((&z, &c), &w)| (w * c / (z - l2)).powi(2))
        .sum();
    for (t, a) in profile.times.iter().zip(&profile.amplitudes) {
        let coeffs = modal.synthesize(a);
        let [v0, v1, v2] = modal.evaluate(&coeffs, &x, &s);
        let ph = C64::from_polar(1.0, lambda * t);
        let (mut we, mut ee) = (0.0, 0.0);
        for q in 0..x.len() {
            let d = PI - modal.channel.g(x[q]);
            let weight = (1.0 + x[q] * x[q]).powf(opts.beta);
            for r in 0..ns {
                let i = q * ns + r;
                let e = (v0[(q, r)] - (ph * p0[i]).re).powi(2)
                    + (v1[(q, r)] - (ph * p1[i]).re).powi(2)
                    + (v2[(q, r)] - (ph * p2[i]).re).powi(2);
                let w = wx[q] * ws[r] * d / PI;
                we += w * weight * e;
                ee += w * e;
            }
        }
        weighted_error.push(we.sqrt());
        energy_error.push(ee.sqrt());
        let (mut energy, mut h1) = (0.0, 0.0);
        for ((&z, &c), &w) in modal.eigenvalues.iter().zip(&modal.forcing).zip(&far_weight) {
            let r = z.sqrt();
            let amp = w * c / (z - l2);
            let (a, da) = (-amp * (t * r).cos(), amp * r * (t * r).sin());
            energy += 0.5 * (da * da + z * a * a);
            h1 += a * a;
        }
        far_energy.push(energy);
        far_h1.push(h1);
    }
    let times = &profile.times;
    let t_max = profile.t_max.unwrap_or(*times.last().ok_or_else(|| Error::Invalid("no time samples".into()))?);
    let nearest = |t: f64| {
        (0..times.len())
            .min_by(|&i, &j| (times[i] - t).abs().total_cmp(&(times[j] - t).abs()))
            .expect("non-empty")
    };
    let iq = nearest(t_max / 4.0);
    let ie = nearest(t_max);
    let e_quarter = weighted_error[iq];
    let e_end = weighted_error[ie];
    let trend_slope = ls_slope(&times[iq..=ie], &weighted_error[iq..=ie]);
    let window_mean = |t_end: f64| {
        let sel: Vec<f64> = times
            .iter()
            .zip(&weighted_error)
            .filter(|(t, _)| **t <= t_end + 1e-12 && **t >= t_end - opts.averaging_window - 1e-12)
            .map(|(_, e)| *e)
            .collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    };
    let e_quarter_mean = window_mean(times[iq]);
    let e_end_mean = window_mean(times[ie]);
    let iref = nearest(opts.far_reference_time);
    let fref = far_energy[iref];
    let far_ratio_max = times
        .iter()
        .zip(&far_energy)
        .filter(|(t, _)| **t >= times[iref] && **t <= t_max)
        .map(|(_, &e)| e / fref)
        .fold(0.0, f64::max);
    let far_bounded = far_ratio_max <= 2.0 && far_h1.iter().all(|&v| v <= far_h1_bound * (1.0 + 1e-9));
    Ok(ProfileErrorReport {
        options: opts,
        times: times.clone(),
        weighted_error,
        energy_error,
        far_energy,
        far_h1,
        far_h1_bound,
        near_modes: near_vals.len(),
        near_min_gap,
        t_max,
        e_quarter,
        e_end,
        e_quarter_mean,
        e_end_mean,
        far_ratio_max,
        trend_slope,
        decreasing: e_end_mean < e_quarter_mean && trend_slope < 0.0,
        far_bounded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w_limit_matches_formula() {
        let (l, t) = (0.7, 10.0);
        let lim = C64::new(0.0, -t / (2.0 * l)) + (C64::new(1.0, 0.0) - C64::from_polar(1.0, -2.0 * l * t)) / (4.0 * l * l);
        assert!((w_unchecked(l * l, t, l) - lim).norm() < 1e-14);
        assert!((w_unchecked(l * l + 1e-8, t, l) - lim).norm() < 1e-6);
    }

    #[test]
    fn flat_pencil_is_exact() {
        let m = discretize_p(&ChannelSpec::flat(), 6.0, ModalGrid { modes_x: 8, modes_y: 4 }).unwrap();
        let mut exact: Vec<f64> = (1..=8)
            .flat_map(|mm| {
                (1..=4).map(move |k| {
                    let mu = mm as f64 * PI / 12.0;
                    (k * k) as f64 / ((k * k) as f64 + mu * mu)
                })
            })
            .collect();
        exact.sort_by(f64::total_cmp);
        assert_eq!(m.len(), exact.len());
        for (a, b) in m.eigenvalues.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
    }
}
