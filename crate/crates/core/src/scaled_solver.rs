//! Complex-scaled stationary solver on the reference square.
//!
//! The horizontal reference coordinate is deformed to `z1 = y1 (1 + i tau rho(y1))`
//! and the transformed operator
//!
//! ```text
//! P_G(w) = -w^2 [ L^-2 dz1^2 + L^-1 a'(z1) (z2-1) dz2 + 2 L^-1 a dz1 (z2-1) dz2
//!                 + a^2 ((z2-1) dz2)^2 ] + 4 (1-w^2)/(pi-G)^2 dz2^2,
//! a = G'(L z1) / (pi - G(L z1)),
//! ```
//!
//! is collocated on a Chebyshev tensor grid with Dirichlet rows on the whole
//! boundary of the square. The sign of the deformation follows `Im w`: for
//! `Im w <= 0` the outgoing end modes decay in the collar, for `Im w > 0` the
//! incoming ones do, so the solve always returns the square-integrable
//! resolvent solution.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::end_analysis::weighted_norm;
use crate::error::{Error, Result};
use crate::geometry::{subcriticality_margin, ChannelSpec, ReferenceMap, SpectralParameter, DEPTH};
use crate::spectral_core::{
    assemble_tensor_operator, clenshaw_curtis_weights, dirichlet_solve, real_to_complex, Barycentric, Factor,
    SolveReport, TensorGrid, TensorOperator, TensorTerm, C64,
};

/// Threshold below which the deformation counts as absent.
pub const RHO_ZERO: f64 = 1e-12;

/// Largest tolerated `max(rho |f|) / max |f|` on the grid.
pub const FORCING_LEAK_LIMIT: f64 = 1e-8;

/// Interior residual above which traces are refused.
pub const TRACE_RESIDUAL_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RhoProfile {
    /// `0.5 (2 + tanh(s (y - e)) - tanh(s (y + e)))`.
    Tanh { steepness: f64, edge: f64 },
    /// Zero on `|y| <= inner`, one on `|y| >= outer`, smooth in between.
    SmoothStep { inner: f64, outer: f64 },
    /// No deformation.
    Zero,
}

fn bump_psi(t: f64) -> f64 {
    if t <= 0.0 { 0.0 } else { (-1.0 / t).exp() }
}

fn bump_dpsi(t: f64) -> f64 {
    if t <= 0.0 { 0.0 } else { (-1.0 / t).exp() / (t * t) }
}

impl RhoProfile {
    pub fn figure1() -> Self {
        RhoProfile::Tanh { steepness: 20.0, edge: 0.9 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RhoProfile::Tanh { steepness, edge } if steepness > 0.0 && edge > 0.0 && edge < 1.0 => Ok(()),
            RhoProfile::SmoothStep { inner, outer } if 0.0 < inner && inner < outer && outer < 1.0 => Ok(()),
            RhoProfile::Zero => Ok(()),
            other => Err(Error::Invalid(format!("invalid scaling profile {other:?}"))),
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        match *self {
            RhoProfile::Tanh { steepness: s, edge: e } => 0.5 * (2.0 + (s * (y - e)).tanh() - (s * (y + e)).tanh()),
            RhoProfile::SmoothStep { inner, outer } => {
                let t = (y.abs() - inner) / (outer - inner);
                if t <= 0.0 {
                    0.0
                } else if t >= 1.0 {
                    1.0
                } else {
                    let a = bump_psi(t);
                    a / (a + bump_psi(1.0 - t))
                }
            }
            RhoProfile::Zero => 0.0,
        }
    }

    pub fn deriv(&self, y: f64) -> f64 {
        match *self {
            RhoProfile::Tanh { steepness: s, edge: e } => {
                let sech2 = |u: f64| 1.0 / u.cosh().powi(2);
                0.5 * s * (sech2(s * (y - e)) - sech2(s * (y + e)))
            }
            RhoProfile::SmoothStep { inner, outer } => {
                let w = outer - inner;
                let t = (y.abs() - inner) / w;
                if t <= 0.0 || t >= 1.0 {
                    return 0.0;
                }
                let (a, b) = (bump_psi(t), bump_psi(1.0 - t));
                let ds = (bump_dpsi(t) * b + a * bump_dpsi(1.0 - t)) / (a + b).powi(2);
                ds * y.signum() / w
            }
            RhoProfile::Zero => 0.0,
        }
    }

    /// Largest `a` with `rho <= RHO_ZERO` on `[-a, a]`.
    fn flat_half_width(&self) -> f64 {
        match *self {
            RhoProfile::Zero => 1.0,
            RhoProfile::SmoothStep { inner, .. } => inner,
            RhoProfile::Tanh { .. } => {
                if self.value(0.0) > RHO_ZERO {
                    return 0.0;
                }
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if self.value(mid) <= RHO_ZERO {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            }
        }
    }
}

/// `tau`, `rho` and the trusted margin `delta`: `rho` vanishes on
/// `[-1 + delta, 1 - delta]`. `direction` is `+1` for outgoing decay and `-1`
/// for incoming decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingProfile {
    pub tau: f64,
    pub rho: RhoProfile,
    pub delta: f64,
    pub direction: f64,
}

impl ScalingProfile {
    pub fn new(tau: f64, rho: RhoProfile) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::Invalid(format!("tau must be finite and >= 0, got {tau}")));
        }
        rho.validate()?;
        Ok(Self { tau, rho, delta: 1.0 - rho.flat_half_width(), direction: 1.0 })
    }

    /// Orients the deformation so that the resolvent solution at `epsilon`
    /// decays in the collar.
    pub fn oriented(mut self, epsilon: f64) -> Self {
        self.direction = if epsilon > 0.0 { -1.0 } else { 1.0 };
        self
    }

    pub fn signed_tau(&self) -> f64 {
        self.direction * self.tau
    }
}

/// `(gamma_tau(y1), gamma_tau'(y1))`.
pub fn scaling_path(y1: f64, prof: &ScalingProfile) -> (C64, C64) {
    let t = prof.signed_tau();
    let r = prof.rho.value(y1);
    let dr = prof.rho.deriv(y1);
    (C64::new(y1, t * y1 * r), C64::new(1.0, t * (r + y1 * dr)))
}

/// Gaussian envelope in reference coordinates times a carrier `exp(i kappa x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forcing {
    pub amplitude: f64,
    pub center: [f64; 2],
    pub sigma: [f64; 2],
    pub carrier: f64,
}

impl Forcing {
    pub fn figure1(carrier: f64) -> Self {
        Self { amplitude: 1.0, center: [0.1, 0.0], sigma: [0.1, 0.1], carrier }
    }

    pub fn zero() -> Self {
        Self { amplitude: 0.0, center: [0.0, 0.0], sigma: [0.1, 0.1], carrier: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma[0] > 0.0 && self.sigma[1] > 0.0) || !self.amplitude.is_finite() || !self.carrier.is_finite() {
            return Err(Error::Invalid(format!("invalid forcing {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn at_reference(&self, y1: f64, y2: f64, half_length: f64) -> C64 {
        if self.amplitude == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let a = (y1 - self.center[0]) / self.sigma[0];
        let b = (y2 - self.center[1]) / self.sigma[1];
        let env = self.amplitude * (-0.5 * (a * a + b * b)).exp();
        C64::from_polar(env, self.carrier * half_length * y1)
    }

    pub fn at_physical(&self, x: [f64; 2], map: &ReferenceMap) -> C64 {
        let y = map.forward_unchecked(x);
        self.at_reference(y[0], y[1], map.half_length)
    }

    /// Physical `x1` range outside which the envelope is below `eta`.
    pub fn support_interval(&self, half_length: f64, eta: f64) -> [f64; 2] {
        if self.amplitude == 0.0 {
            return [0.0, 0.0];
        }
        let r = self.sigma[0] * (2.0 * (self.amplitude.abs() / eta).ln().max(0.0)).sqrt();
        [(self.center[0] - r) * half_length, (self.center[0] + r) * half_length]
    }

    pub fn support_radius(&self, half_length: f64, eta: f64) -> f64 {
        let [a, b] = self.support_interval(half_length, eta);
        a.abs().max(b.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub channel: ChannelSpec,
    pub lambda: f64,
    pub epsilon: f64,
    pub half_length: f64,
    pub tau: f64,
    pub rho: RhoProfile,
    pub forcing: Forcing,
    pub n1: usize,
    pub n2: usize,
}

impl SolverConfig {
    /// `L = 15`, `tau = 0.5`, `omega = 0.7 - 1e-5 i`, `G = exp(-x^2/10)`,
    /// carrier `exp(5 i x1)`, grid `160 x 60`.
    pub fn figure1() -> Self {
        Self {
            channel: ChannelSpec::figure1(),
            lambda: 0.7,
            epsilon: -1e-5,
            half_length: 15.0,
            tau: 0.5,
            rho: RhoProfile::figure1(),
            forcing: Forcing::figure1(5.0),
            n1: 160,
            n2: 60,
        }
    }

    pub fn param(&self) -> Result<SpectralParameter> {
        SpectralParameter::new(self.lambda, self.epsilon)
    }

    pub fn scaling(&self) -> Result<ScalingProfile> {
        Ok(ScalingProfile::new(self.tau, self.rho)?.oriented(self.epsilon))
    }
}

/// Grid, maps and topography samples shared by everything defined on one
/// deformed reference square.
#[derive(Debug, Clone)]
pub struct GridContext {
    pub grid: TensorGrid,
    pub map: ReferenceMap,
    pub scaling: ScalingProfile,
    /// `gamma_tau(y1)` per node.
    pub z1: Vec<C64>,
    /// `gamma_tau'(y1)` per node.
    pub dz1: Vec<C64>,
    /// `(G, G', G'')` at `L z1`.
    pub topo: Vec<(C64, C64, C64)>,
    d1: Mat<C64>,
    d2: Mat<C64>,
}

impl GridContext {
    pub fn new(channel: ChannelSpec, half_length: f64, scaling: ScalingProfile, n1: usize, n2: usize) -> Result<Self> {
        let grid = TensorGrid::new(n1, n2)?;
        let map = ReferenceMap::new(channel, half_length)?;
        let mut z1 = Vec::with_capacity(n1 + 1);
        let mut dz1 = Vec::with_capacity(n1 + 1);
        let mut topo = Vec::with_capacity(n1 + 1);
        for &y in &grid.g1.nodes {
            let (z, dz) = scaling_path(y, &scaling);
            z1.push(z);
            dz1.push(dz);
            topo.push(channel.topography.eval_c(half_length * z));
        }
        for (j, t) in topo.iter().enumerate() {
            let depth = DEPTH - t.0;
            let vals = [t.0, t.1, t.2, depth];
            if vals.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) || depth.norm() < 1e-8 {
                return Err(Error::Invalid(format!("topography continuation is singular at node {j}")));
            }
        }
        let d1 = real_to_complex(grid.d1.as_ref());
        let d2 = real_to_complex(grid.d2.as_ref());
        Ok(Self { grid, map, scaling, z1, dz1, topo, d1, d2 })
    }

    pub fn half_length(&self) -> f64 {
        self.map.half_length
    }

    pub fn channel(&self) -> &ChannelSpec {
        &self.map.channel
    }

    /// Half-width `(1 - delta) L` of the region where the field is physical.
    pub fn trusted_half_width(&self) -> f64 {
        (1.0 - self.scaling.delta) * self.half_length()
    }

    /// Complex abscissa `L gamma_tau(y1)` of column `j1`.
    pub fn abscissa(&self, j1: usize) -> C64 {
        self.half_length() * self.z1[j1]
    }

    /// Real physical position of node `(j1, j2)` ignoring the deformation.
    pub fn physical_point(&self, j1: usize, j2: usize) -> [f64; 2] {
        self.map.inverse_unchecked(self.grid.point(j1, j2))
    }

    fn a_coeff(&self, j1: usize) -> C64 {
        let (g, g1, _) = self.topo[j1];
        g1 / (DEPTH - g)
    }

    /// `d/dx1` at fixed `x2`, through the deformed map.
    pub fn dx1(&self, u: &[C64]) -> Vec<C64> {
        let l = self.half_length();
        let u1 = self.grid.apply_axis0(self.d1.as_ref(), u);
        let u2 = self.grid.apply_axis1(self.d2.as_ref(), u);
        let m2 = self.grid.m2();
        let mut out = vec![C64::new(0.0, 0.0); u.len()];
        for j1 in 0..self.grid.m1() {
            let a = self.a_coeff(j1);
            let inv = 1.0 / (l * self.dz1[j1]);
            for j2 in 0..m2 {
                let k = j1 * m2 + j2;
                out[k] = inv * u1[k] + a * (self.grid.g2.nodes[j2] - 1.0) * u2[k];
            }
        }
        out
    }

    /// `d/dx2` at fixed `x1`.
    pub fn dx2(&self, u: &[C64]) -> Vec<C64> {
        let u2 = self.grid.apply_axis1(self.d2.as_ref(), u);
        let m2 = self.grid.m2();
        let mut out = u2;
        for j1 in 0..self.grid.m1() {
            let s = 2.0 / (DEPTH - self.topo[j1].0);
            for v in &mut out[j1 * m2..(j1 + 1) * m2] {
                *v *= s;
            }
        }
        out
    }

    fn y1_field<F: Fn(usize) -> C64>(&self, f: F) -> Vec<C64> {
        let m2 = self.grid.m2();
        let mut out = Vec::with_capacity(self.grid.size());
        for j1 in 0..self.grid.m1() {
            let v = f(j1);
            out.extend(std::iter::repeat_n(v, m2));
        }
        out
    }

    /// The bracketed horizontal part of the display plus the vertical part,
    /// i.e. the scaled Laplacian.
    pub fn laplacian_terms(&self) -> Vec<TensorTerm> {
        let mut terms = self.horizontal_terms(C64::new(1.0, 0.0));
        terms.extend(self.vertical_terms(C64::new(1.0, 0.0)));
        terms
    }

    /// `scale * 4/(pi - G)^2 dz2^2`, the scaled `d^2/dx2^2`.
    pub fn vertical_terms(&self, scale: C64) -> Vec<TensorTerm> {
        let q = self.y1_field(|j| scale * 4.0 / (DEPTH - self.topo[j].0).powi(2));
        vec![TensorTerm { coeff: q, y1: vec![], y2: vec![Factor::Deriv(2)] }]
    }

    /// `scale * [ L^-2 dz1^2 + L^-1 a' (z2-1) dz2 + 2 L^-1 a dz1 (z2-1) dz2 + a^2 ((z2-1) dz2)^2 ]`.
    pub fn horizontal_terms(&self, scale: C64) -> Vec<TensorTerm> {
        let l = self.half_length();
        let inv_dz: Vec<C64> = self.dz1.iter().map(|d| 1.0 / d).collect();
        let shift: Vec<C64> = self.grid.g2.nodes.iter().map(|&y| C64::new(y - 1.0, 0.0)).collect();
        let ones = vec![scale / (l * l); self.grid.size()];
        // L^-1 da/dz1 = G''/(pi-G) + G'^2/(pi-G)^2
        let a1 = self.y1_field(|j| {
            let (g, g1, g2) = self.topo[j];
            let d = DEPTH - g;
            scale * (g2 / d + g1 * g1 / (d * d))
        });
        let a = self.y1_field(|j| scale * 2.0 / l * self.a_coeff(j));
        let a2 = self.y1_field(|j| scale * self.a_coeff(j).powi(2));
        vec![
            TensorTerm {
                coeff: ones,
                y1: vec![Factor::Diag(inv_dz.clone()), Factor::Deriv(1), Factor::Diag(inv_dz.clone()), Factor::Deriv(1)],
                y2: vec![],
            },
            TensorTerm { coeff: a1, y1: vec![], y2: vec![Factor::Diag(shift.clone()), Factor::Deriv(1)] },
            TensorTerm {
                coeff: a,
                y1: vec![Factor::Diag(inv_dz), Factor::Deriv(1)],
                y2: vec![Factor::Diag(shift.clone()), Factor::Deriv(1)],
            },
            TensorTerm {
                coeff: a2,
                y1: vec![],
                y2: vec![Factor::Diag(shift.clone()), Factor::Deriv(1), Factor::Diag(shift), Factor::Deriv(1)],
            },
        ]
    }

    /// Terms of `P_G(omega)`, in the order of the display.
    pub fn p_gamma_terms(&self, omega: C64) -> Vec<TensorTerm> {
        let w2 = omega * omega;
        let mut terms = self.horizontal_terms(-w2);
        terms.extend(self.vertical_terms(1.0 - w2));
        terms
    }

    pub fn p_gamma(&self, omega: C64) -> Result<TensorOperator> {
        TensorOperator::new(self.grid.clone(), &self.p_gamma_terms(omega))
    }

    pub fn sample_forcing(&self, f: &Forcing) -> Vec<C64> {
        let l = self.half_length();
        self.grid.sample(|y1, y2| f.at_reference(y1, y2, l))
    }

    /// Interpolates a grid field to column `x1` (physical, undeformed region).
    pub fn column(&self, values: &[C64], x1: f64) -> Column {
        let bary = Barycentric::new(&self.grid.g1);
        let coef = bary.coefficients(x1 / self.half_length());
        let m2 = self.grid.m2();
        let mut col = vec![C64::new(0.0, 0.0); m2];
        for (j1, &c) in coef.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for j2 in 0..m2 {
                col[j2] += c * values[j1 * m2 + j2];
            }
        }
        Column {
            x1,
            depth: DEPTH - self.channel().g(x1),
            values: col,
            bary: Barycentric::new(&self.grid.g2),
        }
    }

    /// Field value at a physical point of the undeformed region.
    pub fn eval(&self, values: &[C64], x: [f64; 2]) -> C64 {
        self.column(values, x[0]).eval(x[1])
    }
}

/// A grid field restricted to one vertical line `x1 = const`.
#[derive(Debug, Clone)]
pub struct Column {
    pub x1: f64,
    pub depth: f64,
    pub values: Vec<C64>,
    bary: Barycentric,
}

impl Column {
    pub fn eval(&self, x2: f64) -> C64 {
        let y2 = 1.0 + 2.0 * x2 / self.depth;
        self.bary.eval(&self.values, y2.clamp(-1.0, 1.0))
    }
}

pub fn assemble_p_gamma(
    chan: &ChannelSpec,
    omega: C64,
    n1: usize,
    n2: usize,
    prof: &ScalingProfile,
    half_length: f64,
) -> Result<crate::spectral_core::DenseComplexOperator> {
    let ctx = GridContext::new(*chan, half_length, *prof, n1, n2)?;
    assemble_tensor_operator(&ctx.grid, &ctx.p_gamma_terms(omega))
}

#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub config: SolverConfig,
    pub param: SpectralParameter,
    pub ctx: GridContext,
    pub field: Vec<C64>,
    pub report: SolveReport,
}

impl StationarySolution {
    /// Wraps an externally supplied field, e.g. for analysis of synthetic data.
    pub fn from_field(config: SolverConfig, field: Vec<C64>) -> Result<Self> {
        let ctx = GridContext::new(config.channel, config.half_length, config.scaling()?, config.n1, config.n2)?;
        if field.len() != ctx.grid.size() {
            return Err(Error::Shape(format!("field has {} entries, grid has {}", field.len(), ctx.grid.size())));
        }
        Ok(Self {
            config,
            param: config.param()?,
            ctx,
            field,
            report: SolveReport { interior_residual: 0.0, residual_abs: 0.0, condition_estimate: 0.0, refinement_steps: 0 },
        })
    }

    pub fn omega(&self) -> C64 {
        self.param.omega()
    }

    pub fn interior_residual(&self) -> f64 {
        self.report.interior_residual
    }

    pub fn condition_estimate(&self) -> f64 {
        self.report.condition_estimate
    }

    pub fn eval(&self, x: [f64; 2]) -> C64 {
        self.ctx.eval(&self.field, x)
    }
}

pub fn solve_stationary(config: &SolverConfig) -> Result<StationarySolution> {
    let param = config.param()?;
    let margin = subcriticality_margin(&config.channel, param.lambda)?;
    if margin <= 0.0 {
        return Err(Error::NotSubcritical { lambda: param.lambda, margin });
    }
    if config.n1 < 8 || config.n2 < 8 {
        return Err(Error::Invalid(format!("grid {}x{} too coarse, need at least 8x8", config.n1, config.n2)));
    }
    config.forcing.validate()?;
    let scaling = config.scaling()?;
    let ctx = GridContext::new(config.channel, config.half_length, scaling, config.n1, config.n2)?;
    let f = ctx.sample_forcing(&config.forcing);
    check_forcing_support(&ctx, &f)?;
    let op = assemble_tensor_operator(&ctx.grid, &ctx.p_gamma_terms(param.omega()))?;
    let mask = ctx.grid.boundary_mask();
    let (field, report) = dirichlet_solve(op, &f, &mask)?;
    Ok(StationarySolution { config: *config, param, ctx, field, report })
}

fn check_forcing_support(ctx: &GridContext, f: &[C64]) -> Result<()> {
    let m2 = ctx.grid.m2();
    let fmax = f.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if fmax == 0.0 {
        return Ok(());
    }
    let mut leak = 0.0f64;
    for (j1, &y1) in ctx.grid.g1.nodes.iter().enumerate() {
        let r = ctx.scaling.rho.value(y1);
        for v in &f[j1 * m2..(j1 + 1) * m2] {
            leak = leak.max(r * v.norm());
        }
    }
    if leak / fmax > FORCING_LEAK_LIMIT {
        return Err(Error::Support(format!(
            "forcing reaches the deformed collar: max(rho |f|)/max|f| = {:.3e}",
            leak / fmax
        )));
    }
    Ok(())
}

/// A one-form `v(theta) d theta` sampled on one boundary component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDensity {
    pub side: crate::dynamics::Side,
    pub theta: Vec<f64>,
    pub samples: Vec<C64>,
    pub weights: Vec<f64>,
}

/// Scaled Neumann data `-2 w sqrt(1-w^2) j^*(L^+ u d ell^+)` on both sides,
/// sampled at the grid columns (`theta = L y1`).
pub fn neumann_trace(sol: &StationarySolution) -> Result<(BoundaryDensity, BoundaryDensity)> {
    if !(sol.report.interior_residual <= TRACE_RESIDUAL_LIMIT) {
        return Err(Error::Unreliable(format!("interior residual {:.3e} too large for a trace", sol.report.interior_residual)));
    }
    Ok(neumann_trace_of(&sol.ctx, &sol.field, sol.omega()))
}

pub fn neumann_trace_of(ctx: &GridContext, u: &[C64], omega: C64) -> (BoundaryDensity, BoundaryDensity) {
    let ux1 = ctx.dx1(u);
    let ux2 = ctx.dx2(u);
    let root = (1.0 - omega * omega).sqrt();
    let m2 = ctx.grid.m2();
    let l = ctx.half_length();
    let w = clenshaw_curtis_weights(ctx.grid.g1.n);
    let theta: Vec<f64> = ctx.grid.g1.nodes.iter().map(|y| l * y).collect();
    let weights: Vec<f64> = w.iter().map(|w| w * l).collect();
    let mut up = Vec::with_capacity(theta.len());
    let mut down = Vec::with_capacity(theta.len());
    for j1 in 0..ctx.grid.m1() {
        let top = j1 * m2;
        let bot = j1 * m2 + m2 - 1;
        let lplus = |k: usize| 0.5 * (omega * ux1[k] + root * ux2[k]);
        let gp = ctx.topo[j1].1;
        up.push(-2.0 * omega * root * lplus(top) / omega);
        down.push(-2.0 * omega * root * lplus(bot) * (1.0 / omega + gp / root));
    }
    use crate::dynamics::Side;
    (
        BoundaryDensity { side: Side::Up, theta: theta.clone(), samples: up, weights: weights.clone() },
        BoundaryDensity { side: Side::Down, theta, samples: down, weights },
    )
}

/// `-(1 - w^2) du/dx2` on both sides, valid where `G' = 0`.
pub fn flat_end_trace(ctx: &GridContext, u: &[C64], omega: C64) -> (Vec<C64>, Vec<C64>) {
    let ux2 = ctx.dx2(u);
    let m2 = ctx.grid.m2();
    let s = -(1.0 - omega * omega);
    let up = (0..ctx.grid.m1()).map(|j| s * ux2[j * m2]).collect();
    let down = (0..ctx.grid.m1()).map(|j| s * ux2[j * m2 + m2 - 1]).collect();
    (up, down)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    /// `|omega_{j+1} - omega_j|`.
    pub step: f64,
    /// `|P(m) d - 2 m Lap u_m|` over `|2 m Lap u_m|`, interior max norms.
    pub residual: f64,
    /// `|h|^2/4 |Lap d|` over the same scale: the exact truncation term.
    pub truncation: f64,
}

#[derive(Debug, Clone)]
pub struct LapSweep {
    pub epsilons: Vec<f64>,
    pub solutions: Vec<StationarySolution>,
    /// Weighted `H^{1,beta}` norms of consecutive differences.
    pub differences: Vec<f64>,
    /// Weighted norms of consecutive finite-difference `d_omega u`.
    pub derivative_norms: Vec<f64>,
    /// Weighted norms of differences between consecutive `d_omega u`.
    pub derivative_differences: Vec<f64>,
    pub derivative_checks: Vec<DerivativeCheck>,
    pub beta: f64,
}

pub fn lap_sweep(config: &SolverConfig, eps_list: &[f64], beta: f64) -> Result<LapSweep> {
    if eps_list.is_empty() {
        return Err(Error::Invalid("empty epsilon list".into()));
    }
    let sign = eps_list[0].signum();
    if sign == 0.0 || eps_list.iter().any(|e| e.signum() != sign) {
        return Err(Error::Invalid("epsilon list must be nonzero and of one sign".into()));
    }
    if eps_list.windows(2).any(|w| w[1].abs() >= w[0].abs()) {
        return Err(Error::Invalid("epsilon list must decrease in magnitude".into()));
    }
    let mut solutions = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let mut cfg = *config;
        cfg.epsilon = eps;
        solutions.push(solve_stationary(&cfg)?);
    }
    let ctx = &solutions[0].ctx;
    let x_max = ctx.trusted_half_width();
    let mut differences = Vec::new();
    let mut derivs: Vec<Vec<C64>> = Vec::new();
    let mut checks = Vec::new();
    let lap = TensorOperator::new(ctx.grid.clone(), &ctx.laplacian_terms())?;
    let mask = ctx.grid.boundary_mask();
    for pair in solutions.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let diff: Vec<C64> = b.field.iter().zip(&a.field).map(|(x, y)| x - y).collect();
        differences.push(weighted_norm(ctx, &diff, 1, beta, x_max)?);
        let h = b.omega() - a.omega();
        let d: Vec<C64> = diff.iter().map(|v| v / h).collect();
        let m = 0.5 * (a.omega() + b.omega());
        let um: Vec<C64> = a.field.iter().zip(&b.field).map(|(x, y)| 0.5 * (x + y)).collect();
        let p = ctx.p_gamma(m)?;
        let pd = p.apply(&d);
        let lum = lap.apply(&um);
        let lapd = lap.apply(&d);
        let mut res = 0.0f64;
        let mut scale = 0.0f64;
        let mut trunc = 0.0f64;
        for k in 0..pd.len() {
            if mask[k] {
                continue;
            }
            let rhs = 2.0 * m * lum[k];
            res = res.max((pd[k] - rhs).norm());
            scale = scale.max(rhs.norm());
            trunc = trunc.max((h * h / 4.0 * lapd[k]).norm());
        }
        checks.push(DerivativeCheck { step: h.norm(), residual: res / scale, truncation: trunc / scale });
        derivs.push(d);
    }
    let derivative_norms = derivs.iter().map(|d| weighted_norm(ctx, d, 1, beta, x_max)).collect::<Result<Vec<_>>>()?;
    let mut derivative_differences = Vec::new();
    for w in derivs.windows(2) {
        let dd: Vec<C64> = w[1].iter().zip(&w[0]).map(|(x, y)| x - y).collect();
        derivative_differences.push(weighted_norm(ctx, &dd, 1, beta, x_max)?);
    }
    Ok(LapSweep {
        epsilons: eps_list.to_vec(),
        solutions,
        differences,
        derivative_norms,
        derivative_differences,
        derivative_checks: checks,
        beta,
    })
}

/// Crest orientation of the two beam families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSlope {
    /// Energy-weighted mean of the family slopes `|dx2/dx1|` along crests.
    pub slope: f64,
    /// Slopes of the families with `xi1 xi2 > 0` and `xi1 xi2 < 0`.
    pub family_slopes: [f64; 2],
    pub family_coherence: [f64; 2],
    pub family_energy: [f64; 2],
    pub window: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamSlopeOptions {
    /// `x1` interval sampled.
    pub window: [f64; 2],
    /// Samples in `x1` (power of two).
    pub nx: usize,
    /// Samples over the oddly extended period `[-pi, pi)` (power of two).
    pub ny: usize,
    pub min_coherence: f64,
}

impl Default for BeamSlopeOptions {
    fn default() -> Self {
        Self { window: [3.0, 11.0], nx: 512, ny: 128, min_coherence: 0.8 }
    }
}

/// Splits the field into its two beam families by the sign of `xi1 xi2` and
/// returns, per family, the energy-weighted median crest slope `|xi1 / xi2|`
/// of the spectral components. The coherence of the family structure tensor
/// `int grad u grad u^H = sum |u^(xi)|^2 xi xi^T` guards against mixed
/// orientations. The field is tapered in `x1` and extended oddly across
/// `x2 = 0`.
pub fn measure_beam_slope(ctx: &GridContext, u: &[C64], opts: &BeamSlopeOptions) -> Result<BeamSlope> {
    let (nx, ny) = (opts.nx, opts.ny);
    if !nx.is_power_of_two() || !ny.is_power_of_two() || ny < 8 || nx < 8 {
        return Err(Error::Invalid("beam-slope sample counts must be powers of two".into()));
    }
    let [xa, xb] = opts.window;
    if !(xb > xa) {
        return Err(Error::Invalid(format!("empty beam window {:?}", opts.window)));
    }
    let hx = (xb - xa) / nx as f64;
    let hy = 2.0 * std::f64::consts::PI / ny as f64;
    // zero padding refines the x1 frequency grid
    let np = 16 * nx;
    let mut buf = vec![C64::new(0.0, 0.0); np * ny];
    for i in 0..nx {
        let x1 = xa + (i as f64 + 0.5) * hx;
        let taper = (std::f64::consts::PI * (i as f64 + 0.5) / nx as f64).sin().powi(2);
        let col = ctx.column(u, x1);
        let bottom = ctx.channel().bottom(x1);
        for j in 1..ny / 2 {
            let x2 = -(j as f64) * hy;
            if x2 <= bottom {
                continue;
            }
            let v = taper * col.eval(x2);
            buf[j * np + i] = -v;
            buf[(ny - j) * np + i] = v;
        }
    }
    // row j holds x2 = j hy (mod 2 pi), odd in x2
    let mut planner = rustfft::FftPlanner::new();
    let fx = planner.plan_fft_forward(np);
    for row in buf.chunks_mut(np) {
        fx.process(row);
    }
    let fy = planner.plan_fft_forward(ny);
    let mut col = vec![C64::new(0.0, 0.0); ny];
    for i in 0..np {
        for j in 0..ny {
            col[j] = buf[j * np + i];
        }
        fy.process(&mut col);
        for j in 0..ny {
            buf[j * np + i] = col[j];
        }
    }
    let freq = |k: usize, n: usize, h: f64| {
        let m = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        2.0 * std::f64::consts::PI * m / (n as f64 * h)
    };
    let mut j_fam = [[0.0f64; 3]; 2];
    let mut orient: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    for j in 0..ny {
        let xi2 = freq(j, ny, hy);
        for i in 0..np {
            let xi1 = freq(i, np, hx);
            let p = xi1 * xi2;
            if p == 0.0 {
                continue;
            }
            let e = buf[j * np + i].norm_sqr();
            let f = if p > 0.0 { 0 } else { 1 };
            j_fam[f][0] += e * xi1 * xi1;
            j_fam[f][1] += e * xi2 * xi2;
            j_fam[f][2] += e * xi1 * xi2;
            // crest direction (-xi2, xi1)
            orient[f].push(((xi1 / xi2).abs(), e));
        }
    }
    let mut slopes = [0.0; 2];
    let mut coh = [0.0; 2];
    let mut energy = [0.0; 2];
    for f in 0..2 {
        let [a, b, c] = j_fam[f];
        let tr = a + b;
        energy[f] = orient[f].iter().map(|o| o.1).sum();
        if tr <= 0.0 {
            continue;
        }
        coh[f] = (((a - b).powi(2) + 4.0 * c * c).sqrt() / tr).powi(2);
        slopes[f] = weighted_median(&mut orient[f]);
    }
    let total = energy[0] + energy[1];
    if total <= 0.0 {
        return Err(Error::Unreliable("field vanishes in the beam window".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for f in 0..2 {
        if energy[f] > 0.0 && coh[f] < opts.min_coherence {
            return Err(Error::Unreliable(format!("beam family {f} has coherence {:.3}", coh[f])));
        }
        num += energy[f] * slopes[f];
        den += energy[f];
    }
    Ok(BeamSlope { slope: num / den, family_slopes: slopes, family_coherence: coh, family_energy: energy, window: opts.window })
}

/// Weighted median with the cumulative weight interpolated linearly
/// between bin midpoints.
fn weighted_median(v: &mut [(f64, f64)]) -> f64 {
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = v.iter().map(|x| x.1).sum();
    let half = 0.5 * total;
    let mut acc = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for x in v.iter() {
        let mid = acc + 0.5 * x.1;
        if mid >= half {
            return match prev {
                Some((p, pm)) if mid > pm => p + (x.0 - p) * (half - pm) / (mid - pm),
                _ => x.0,
            };
        }
        prev = Some((x.0, mid));
        acc += x.1;
    }
    v.last().map_or(0.0, |x| x.0)
}

/// `max_x2 |u|` per grid column inside the undeformed region, ordered by `x1`.
pub fn column_maxima(ctx: &GridContext, u: &[C64]) -> Vec<(f64, f64)> {
    let m2 = ctx.grid.m2();
    let xmax = ctx.trusted_half_width();
    let mut out: Vec<(f64, f64)> = (0..ctx.grid.m1())
        .map(|j1| (ctx.half_length() * ctx.grid.g1.nodes[j1], u[j1 * m2..(j1 + 1) * m2].iter().map(|z| z.norm()).fold(0.0, f64::max)))
        .filter(|(x, _)| x.abs() <= xmax)
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Relative l2 difference `|a - b| / |a|` on a uniform `(nx+1) x (ny+1)`
/// physical sample of the common undeformed region.
pub fn trusted_difference(a: &StationarySolution, b: &StationarySolution, nx: usize, ny: usize) -> Result<f64> {
    if a.config.channel != b.config.channel {
        return Err(Error::Invalid("solutions live on different channels".into()));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::Invalid("sample counts must be positive".into()));
    }
    let x = a.ctx.trusted_half_width().min(b.ctx.trusted_half_width());
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=nx {
        let x1 = -x + 2.0 * x * i as f64 / nx as f64;
        let ca = a.ctx.column(&a.field, x1);
        let cb = b.ctx.column(&b.field, x1);
        let bot = a.ctx.channel().bottom(x1);
        for j in 0..=ny {
            let x2 = bot * (1.0 - j as f64 / ny as f64);
            let (u, v) = (ca.eval(x2), cb.eval(x2));
            num += (u - v).norm_sqr();
            den += u.norm_sqr();
        }
    }
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_profile_trusted_width() {
        let p = ScalingProfile::new(0.5, RhoProfile::figure1()).unwrap();
        let a = 1.0 - p.delta;
        assert!(a > 0.15 && a < 0.25, "{a}");
        assert!(p.rho.value(a) <= RHO_ZERO * 1.0001);
    }

    #[test]
    fn smoothstep_is_exactly_flat_inside() {
        let r = RhoProfile::SmoothStep { inner: 0.6, outer: 0.85 };
        assert_eq!(r.value(0.59), 0.0);
        assert_eq!(r.value(-0.6), 0.0);
        assert_eq!(r.value(0.9), 1.0);
        for y in [0.62, 0.7, 0.8, -0.75] {
            let h = 1e-6;
            let fd = (r.value(y + h) - r.value(y - h)) / (2.0 * h);
            assert!((fd - r.deriv(y)).abs() < 1e-6);
        }
    }

    #[test]
    fn orientation_follows_epsilon() {
        let p = ScalingProfile::new(0.5, RhoProfile::figure1()).unwrap();
        assert_eq!(p.oriented(-1e-3).signed_tau(), 0.5);
        assert_eq!(p.oriented(1e-3).signed_tau(), -0.5);
    }

    #[test]
    fn leaking_forcing_is_refused() {
        let mut cfg = SolverConfig::figure1();
        cfg.n1 = 24;
        cfg.n2 = 12;
        cfg.forcing.center = [0.85, 0.0];
        assert!(matches!(solve_stationary(&cfg), Err(Error::Support(_))));
    }
}
