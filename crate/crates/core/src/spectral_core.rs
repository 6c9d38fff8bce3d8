//! Chebyshev collocation on `[-1,1]^2`: nodes, differentiation matrices,
//! tensor-product operators with variable coefficients, and Dirichlet solves
//! by dense LU.
//!
//! Grid fields are stored row-major in `(j1, j2)`: index `j1 * (n2 + 1) + j2`.

use std::f64::consts::PI;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::lu::partial_pivoting::{factor, solve};
use faer::perm::PermRef;
use faer::{Conj, Mat, MatMut, MatRef, Par};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Chebyshev–Gauss–Lobatto grid `x_j = cos(j pi / n)`, descending.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebGrid {
    pub n: usize,
    pub nodes: Vec<f64>,
}

impl ChebGrid {
    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn cheb_nodes(n: usize) -> Result<ChebGrid> {
    if n == 0 {
        return Err(Error::Invalid("Chebyshev grid needs n >= 1".into()));
    }
    // sin form keeps the nodes exactly antisymmetric
    let nodes = (0..=n).map(|j| (PI * (n as f64 - 2.0 * j as f64) / (2.0 * n as f64)).sin()).collect();
    Ok(ChebGrid { n, nodes })
}

/// Collocation differentiation matrix; the diagonal is minus the off-diagonal
/// row sum.
pub fn cheb_diff(grid: &ChebGrid) -> Mat<f64> {
    let n = grid.n;
    let m = n + 1;
    let c = |i: usize| {
        let base = if i == 0 || i == n { 2.0 } else { 1.0 };
        if i % 2 == 0 { base } else { -base }
    };
    let mut d = Mat::<f64>::zeros(m, m);
    for i in 0..m {
        let mut sum = 0.0;
        for j in 0..m {
            if i == j {
                continue;
            }
            // x_i - x_j without cancellation
            let diff = 2.0
                * ((i + j) as f64 * PI / (2.0 * n as f64)).sin()
                * ((j as f64 - i as f64) * PI / (2.0 * n as f64)).sin();
            let v = c(i) / c(j) / diff;
            d[(i, j)] = v;
            sum += v;
        }
        d[(i, i)] = -sum;
    }
    d
}

/// Clenshaw–Curtis weights on the Chebyshev–Lobatto nodes of `[-1,1]`.
pub fn clenshaw_curtis_weights(n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n + 1];
    if n == 1 {
        return vec![1.0, 1.0];
    }
    let theta = |j: usize| PI * j as f64 / n as f64;
    let mut v = vec![1.0; n - 1];
    if n % 2 == 0 {
        w[0] = 1.0 / (n * n - 1) as f64;
        w[n] = w[0];
        for k in 1..n / 2 {
            for (j, vj) in v.iter_mut().enumerate() {
                *vj -= 2.0 * (2.0 * k as f64 * theta(j + 1)).cos() / (4 * k * k - 1) as f64;
            }
        }
        for (j, vj) in v.iter_mut().enumerate() {
            *vj -= (n as f64 * theta(j + 1)).cos() / (n * n - 1) as f64;
        }
    } else {
        w[0] = 1.0 / (n * n) as f64;
        w[n] = w[0];
        for k in 1..=(n - 1) / 2 {
            for (j, vj) in v.iter_mut().enumerate() {
                *vj -= 2.0 * (2.0 * k as f64 * theta(j + 1)).cos() / (4 * k * k - 1) as f64;
            }
        }
    }
    for j in 1..n {
        w[j] = 2.0 * v[j - 1] / n as f64;
    }
    w
}

/// Barycentric Lagrange interpolation on Chebyshev–Lobatto nodes.
#[derive(Debug, Clone)]
pub struct Barycentric {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Barycentric {
    pub fn new(grid: &ChebGrid) -> Self {
        let n = grid.n;
        let weights = (0..=n)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == n { 0.5 * s } else { s }
            })
            .collect();
        Self { nodes: grid.nodes.clone(), weights }
    }

    /// Coefficients `l_j(x)` with `p(x) = sum_j l_j(x) p_j`.
    pub fn coefficients(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes.len()];
        if let Some(k) = self.nodes.iter().position(|&t| t == x) {
            out[k] = 1.0;
            return out;
        }
        let mut denom = 0.0;
        for (j, (&t, &w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let q = w / (x - t);
            out[j] = q;
            denom += q;
        }
        for v in &mut out {
            *v /= denom;
        }
        out
    }

    pub fn eval(&self, values: &[C64], x: f64) -> C64 {
        self.coefficients(x).iter().zip(values).map(|(&l, &v)| v * l).sum()
    }

    /// The interpolating polynomial at a complex point.
    pub fn eval_complex(&self, values: &[C64], z: C64) -> C64 {
        let mut num = C64::new(0.0, 0.0);
        let mut den = C64::new(0.0, 0.0);
        for ((&t, &w), &v) in self.nodes.iter().zip(&self.weights).zip(values) {
            let d = z - t;
            if d.norm() == 0.0 {
                return v;
            }
            let q = w / d;
            num += q * v;
            den += q;
        }
        num / den
    }

    /// Rows of the interpolation matrix from the grid to `targets`.
    pub fn matrix(&self, targets: &[f64]) -> Mat<f64> {
        let m = self.nodes.len();
        let mut out = Mat::<f64>::zeros(targets.len(), m);
        for (i, &x) in targets.iter().enumerate() {
            for (j, l) in self.coefficients(x).into_iter().enumerate() {
                out[(i, j)] = l;
            }
        }
        out
    }
}

/// The tensor grid together with its 1D differentiation matrices.
#[derive(Debug, Clone)]
pub struct TensorGrid {
    pub g1: ChebGrid,
    pub g2: ChebGrid,
    pub d1: Mat<f64>,
    pub d2: Mat<f64>,
}

impl TensorGrid {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        let g1 = cheb_nodes(n1)?;
        let g2 = cheb_nodes(n2)?;
        let d1 = cheb_diff(&g1);
        let d2 = cheb_diff(&g2);
        Ok(Self { g1, g2, d1, d2 })
    }

    pub fn m1(&self) -> usize {
        self.g1.n + 1
    }

    pub fn m2(&self) -> usize {
        self.g2.n + 1
    }

    pub fn size(&self) -> usize {
        self.m1() * self.m2()
    }

    #[inline]
    pub fn index(&self, j1: usize, j2: usize) -> usize {
        j1 * self.m2() + j2
    }

    pub fn point(&self, j1: usize, j2: usize) -> [f64; 2] {
        [self.g1.nodes[j1], self.g2.nodes[j2]]
    }

    pub fn sample<F: Fn(f64, f64) -> C64>(&self, f: F) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.size());
        for &y1 in &self.g1.nodes {
            for &y2 in &self.g2.nodes {
                out.push(f(y1, y2));
            }
        }
        out
    }

    /// True on every node with `y1 = +-1` or `y2 = +-1`.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let (m1, m2) = (self.m1(), self.m2());
        let mut mask = vec![false; m1 * m2];
        for j1 in 0..m1 {
            for j2 in 0..m2 {
                mask[j1 * m2 + j2] = j1 == 0 || j1 + 1 == m1 || j2 == 0 || j2 + 1 == m2;
            }
        }
        mask
    }

    /// Apply a 1D matrix along `y1` (axis 0) of a grid field.
    pub fn apply_axis0(&self, a: MatRef<'_, C64>, u: &[C64]) -> Vec<C64> {
        let (m1, m2) = (self.m1(), self.m2());
        let um = MatRef::from_row_major_slice(u, m1, m2);
        let v = a * um;
        to_row_major(v.as_ref())
    }

    /// Apply a 1D matrix along `y2` (axis 1) of a grid field.
    pub fn apply_axis1(&self, a: MatRef<'_, C64>, u: &[C64]) -> Vec<C64> {
        let (m1, m2) = (self.m1(), self.m2());
        let um = MatRef::from_row_major_slice(u, m1, m2);
        let v = um * a.transpose();
        to_row_major(v.as_ref())
    }

    pub fn d1_complex(&self) -> Mat<C64> {
        real_to_complex(self.d1.as_ref())
    }

    pub fn d2_complex(&self) -> Mat<C64> {
        real_to_complex(self.d2.as_ref())
    }
}

pub fn real_to_complex(a: MatRef<'_, f64>) -> Mat<C64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| C64::new(a[(i, j)], 0.0))
}

fn to_row_major(v: MatRef<'_, C64>) -> Vec<C64> {
    let mut out = Vec::with_capacity(v.nrows() * v.ncols());
    for i in 0..v.nrows() {
        for j in 0..v.ncols() {
            out.push(v[(i, j)]);
        }
    }
    out
}

/// One factor of an ordered 1D product.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    /// Multiplication by a function of that coordinate, sampled on its nodes.
    Diag(Vec<C64>),
    /// `d^k / dy^k`.
    Deriv(usize),
}

/// `coeff(y1, y2) * (F1_1 F1_2 ... ) ⊗ (F2_1 F2_2 ...)`, with each list an
/// ordered product acting on one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorTerm {
    pub coeff: Vec<C64>,
    pub y1: Vec<Factor>,
    pub y2: Vec<Factor>,
}

impl TensorTerm {
    pub fn constant(grid: &TensorGrid, c: C64, y1: Vec<Factor>, y2: Vec<Factor>) -> Self {
        Self { coeff: vec![c; grid.size()], y1, y2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Identity,
    Diagonal,
    Dense,
}

#[derive(Debug, Clone)]
struct Lowered {
    coeff: Vec<C64>,
    a1: Mat<C64>,
    s1: Shape,
    a2: Mat<C64>,
    s2: Shape,
}

fn lower_factors(factors: &[Factor], d: MatRef<'_, f64>) -> Result<(Mat<C64>, Shape)> {
    let m = d.nrows();
    let mut out = Mat::<C64>::identity(m, m);
    let mut shape = Shape::Identity;
    let dc = real_to_complex(d);
    for f in factors {
        match f {
            Factor::Diag(v) => {
                if v.len() != m {
                    return Err(Error::Shape(format!("diagonal factor of length {} on a {m}-node axis", v.len())));
                }
                // out * diag(v): scale columns
                for j in 0..m {
                    for i in 0..m {
                        out[(i, j)] *= v[j];
                    }
                }
                if shape == Shape::Identity {
                    shape = Shape::Diagonal;
                }
            }
            Factor::Deriv(k) => {
                for _ in 0..*k {
                    out = &out * &dc;
                    shape = Shape::Dense;
                }
            }
        }
    }
    Ok((out, shape))
}

/// A sum of tensor terms; applies matrix-free and assembles densely.
#[derive(Debug, Clone)]
pub struct TensorOperator {
    pub grid: TensorGrid,
    terms: Vec<Lowered>,
}

impl TensorOperator {
    pub fn new(grid: TensorGrid, terms: &[TensorTerm]) -> Result<Self> {
        let size = grid.size();
        let mut lowered = Vec::with_capacity(terms.len());
        for (k, t) in terms.iter().enumerate() {
            if t.coeff.len() != size {
                return Err(Error::Shape(format!("term {k}: coefficient field has {} entries, grid has {size}", t.coeff.len())));
            }
            if t.coeff.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(Error::Invalid(format!("term {k}: non-finite coefficient")));
            }
            let (a1, s1) = lower_factors(&t.y1, grid.d1.as_ref())?;
            let (a2, s2) = lower_factors(&t.y2, grid.d2.as_ref())?;
            lowered.push(Lowered { coeff: t.coeff.clone(), a1, s1, a2, s2 });
        }
        Ok(Self { grid, terms: lowered })
    }

    pub fn size(&self) -> usize {
        self.grid.size()
    }

    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.size()];
        for t in &self.terms {
            let v = if t.s1 == Shape::Identity { u.to_vec() } else { self.grid.apply_axis0(t.a1.as_ref(), u) };
            let v = if t.s2 == Shape::Identity { v } else { self.grid.apply_axis1(t.a2.as_ref(), &v) };
            for ((o, c), x) in out.iter_mut().zip(&t.coeff).zip(v) {
                *o += c * x;
            }
        }
        out
    }

    pub fn assemble(&self) -> Mat<C64> {
        let (m1, m2) = (self.grid.m1(), self.grid.m2());
        let n = m1 * m2;
        let mut mat = Mat::<C64>::zeros(n, n);
        for t in &self.terms {
            for j1 in 0..m1 {
                for j2 in 0..m2 {
                    let col = mat.col_as_slice_mut(j1 * m2 + j2);
                    let rows1: Box<dyn Iterator<Item = usize>> =
                        if t.s1 == Shape::Dense { Box::new(0..m1) } else { Box::new(std::iter::once(j1)) };
                    for i1 in rows1 {
                        let a = t.a1[(i1, j1)];
                        if a == C64::new(0.0, 0.0) {
                            continue;
                        }
                        let base = i1 * m2;
                        if t.s2 == Shape::Dense {
                            for i2 in 0..m2 {
                                col[base + i2] += t.coeff[base + i2] * a * t.a2[(i2, j2)];
                            }
                        } else {
                            col[base + j2] += t.coeff[base + j2] * a * t.a2[(j2, j2)];
                        }
                    }
                }
            }
        }
        mat
    }
}

/// A dense operator on the flattened tensor grid. When built from tensor terms
/// it keeps them for matrix-free residuals after the matrix is factored.
#[derive(Debug, Clone)]
pub struct DenseComplexOperator {
    pub n1: usize,
    pub n2: usize,
    pub matrix: Mat<C64>,
    source: Option<TensorOperator>,
}

impl DenseComplexOperator {
    pub fn from_matrix(n1: usize, n2: usize, matrix: Mat<C64>) -> Result<Self> {
        let size = (n1 + 1) * (n2 + 1);
        if matrix.nrows() != size || matrix.ncols() != size {
            return Err(Error::Shape(format!("matrix is {}x{}, grid needs {size}", matrix.nrows(), matrix.ncols())));
        }
        Ok(Self { n1, n2, matrix, source: None })
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        match &self.source {
            Some(op) => op.apply(u),
            None => {
                let um = MatRef::from_column_major_slice(u, u.len(), 1);
                let v = &self.matrix * um;
                (0..v.nrows()).map(|i| v[(i, 0)]).collect()
            }
        }
    }
}

pub fn assemble_tensor_operator(grid: &TensorGrid, terms: &[TensorTerm]) -> Result<DenseComplexOperator> {
    let op = TensorOperator::new(grid.clone(), terms)?;
    let matrix = op.assemble();
    Ok(DenseComplexOperator { n1: grid.g1.n, n2: grid.g2.n, matrix, source: Some(op) })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveReport {
    /// `max |A u - rhs|` over interior rows, divided by `max |rhs|`.
    pub interior_residual: f64,
    pub residual_abs: f64,
    /// 1-norm condition estimate.
    pub condition_estimate: f64,
    pub refinement_steps: usize,
}

pub const CONDITION_LIMIT: f64 = 1e14;

struct Factored {
    lu: Mat<C64>,
    fwd: Vec<usize>,
    bwd: Vec<usize>,
}

impl Factored {
    fn new(mut a: Mat<C64>) -> Self {
        let n = a.nrows();
        let mut fwd = vec![0usize; n];
        let mut bwd = vec![0usize; n];
        let mut buf = MemBuffer::new(factor::lu_in_place_scratch::<usize, C64>(n, n, Par::Seq, Default::default()));
        factor::lu_in_place(a.as_mut(), &mut fwd, &mut bwd, Par::Seq, MemStack::new(&mut buf), Default::default());
        Self { lu: a, fwd, bwd }
    }

    fn perm(&self) -> PermRef<'_, usize> {
        PermRef::new_checked(&self.fwd, &self.bwd, self.fwd.len())
    }

    fn solve(&self, rhs: &[C64]) -> Vec<C64> {
        self.solve_impl(rhs, false)
    }

    /// Solves with the conjugate transpose.
    fn solve_adjoint(&self, rhs: &[C64]) -> Vec<C64> {
        self.solve_impl(rhs, true)
    }

    fn solve_impl(&self, rhs: &[C64], adjoint: bool) -> Vec<C64> {
        let n = rhs.len();
        let mut x = rhs.to_vec();
        let mut buf = MemBuffer::new(solve::solve_in_place_scratch::<usize, C64>(n, 1, Par::Seq));
        let xm: MatMut<'_, C64> = MatMut::from_column_major_slice_mut(&mut x, n, 1);
        let lu = self.lu.as_ref();
        if adjoint {
            solve::solve_transpose_in_place_with_conj(lu, lu, self.perm(), Conj::Yes, xm, Par::Seq, MemStack::new(&mut buf));
        } else {
            solve::solve_in_place_with_conj(lu, lu, self.perm(), Conj::No, xm, Par::Seq, MemStack::new(&mut buf));
        }
        x
    }
}

fn inf_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Hager–Higham estimate of `||A^{-1}||_1`.
fn inverse_one_norm(f: &Factored) -> f64 {
    let n = f.fwd.len();
    let mut x = vec![C64::new(1.0 / n as f64, 0.0); n];
    let mut est = 0.0;
    for _ in 0..5 {
        let y = f.solve(&x);
        est = y.iter().map(|z| z.norm()).sum::<f64>();
        let xi: Vec<C64> = y.iter().map(|z| if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) }).collect();
        let z = f.solve_adjoint(&xi);
        let (jmax, zmax) = z.iter().enumerate().fold((0, 0.0), |acc, (j, v)| if v.norm() > acc.1 { (j, v.norm()) } else { acc });
        let ztx: f64 = z.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum();
        if zmax <= ztx {
            break;
        }
        x = vec![C64::new(0.0, 0.0); n];
        x[jmax] = C64::new(1.0, 0.0);
    }
    let alt: Vec<C64> = (0..n)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            C64::new(s * (1.0 + i as f64 / (n.max(2) - 1) as f64), 0.0)
        })
        .collect();
    let y = f.solve(&alt);
    let est2 = 2.0 * y.iter().map(|z| z.norm()).sum::<f64>() / (3.0 * n as f64);
    est.max(est2)
}

/// Replaces the masked rows by identity rows with zero data, factors by LU
/// with partial pivoting and solves. Rejects systems whose condition estimate
/// exceeds [`CONDITION_LIMIT`].
pub fn dirichlet_solve(op: DenseComplexOperator, rhs: &[C64], mask: &[bool]) -> Result<(Vec<C64>, SolveReport)> {
    let grid = TensorGrid::new(op.n1, op.n2)?;
    let n = op.size();
    if rhs.len() != n || mask.len() != n {
        return Err(Error::Shape(format!("rhs {} / mask {} entries for a {n}-row operator", rhs.len(), mask.len())));
    }
    if mask != grid.boundary_mask().as_slice() {
        return Err(Error::Invalid("boundary mask must mark exactly the nodes with y1 = +-1 or y2 = +-1".into()));
    }
    let DenseComplexOperator { matrix: mut a, source, .. } = op;
    let masked: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    for j in 0..n {
        let col = a.col_as_slice_mut(j);
        for &i in &masked {
            col[i] = C64::new(if i == j { 1.0 } else { 0.0 }, 0.0);
        }
    }
    let b: Vec<C64> = rhs.iter().zip(mask).map(|(&v, &m)| if m { C64::new(0.0, 0.0) } else { v }).collect();
    let a_norm = (0..n).map(|j| a.col_as_slice(j).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);

    // Without tensor terms a copy is the only way to form residuals later.
    let kept = if source.is_none() { Some(a.clone()) } else { None };
    let residual = |u: &[C64]| -> Vec<C64> {
        let au = match (&source, &kept) {
            (Some(s), _) => s.apply(u),
            (None, Some(m)) => {
                let um = MatRef::from_column_major_slice(u, n, 1);
                let v = m * um;
                (0..n).map(|i| v[(i, 0)]).collect()
            }
            _ => unreachable!(),
        };
        au.iter()
            .zip(&b)
            .zip(mask)
            .zip(u)
            .map(|(((&x, &y), &m), &ui)| if m { ui } else { x - y })
            .collect()
    };

    let fac = Factored::new(a);
    let mut u = fac.solve(&b);
    let mut r = residual(&u);
    let mut res = inf_norm(&r);
    let mut steps = 0;
    for _ in 0..2 {
        if res == 0.0 {
            break;
        }
        let du = fac.solve(&r);
        let cand: Vec<C64> = u.iter().zip(&du).map(|(x, d)| x - d).collect();
        let rc = residual(&cand);
        let rn = inf_norm(&rc);
        if rn < res {
            u = cand;
            r = rc;
            res = rn;
            steps += 1;
        } else {
            break;
        }
    }
    for (ui, &m) in u.iter_mut().zip(mask) {
        if m {
            *ui = C64::new(0.0, 0.0);
        }
    }
    let bnorm = inf_norm(&b);
    let cond = a_norm * inverse_one_norm(&fac);
    if !cond.is_finite() || cond > CONDITION_LIMIT {
        return Err(Error::IllConditioned(cond));
    }
    let rel = if bnorm > 0.0 { res / bnorm } else { res };
    Ok((u, SolveReport { interior_residual: rel, residual_abs: res, condition_estimate: cond, refinement_steps: steps }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_small_cases() {
        let g = cheb_nodes(2).unwrap();
        assert_eq!(g.nodes, vec![1.0, 0.0, -1.0]);
        let g = cheb_nodes(4).unwrap();
        assert!((g.nodes[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(cheb_nodes(0).is_err());
        for n in 1..20 {
            let g = cheb_nodes(n).unwrap();
            assert_eq!(g.nodes[0], 1.0);
            assert_eq!(g.nodes[n], -1.0);
            assert!(g.nodes.windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn diff_rows_sum_to_zero() {
        let d = cheb_diff(&cheb_nodes(17).unwrap());
        for i in 0..18 {
            let s: f64 = (0..18).map(|j| d[(i, j)]).sum();
            assert!(s.abs() < 1e-10);
        }
    }

    #[test]
    fn clenshaw_curtis_integrates_polynomials() {
        for n in [4, 7, 16] {
            let g = cheb_nodes(n).unwrap();
            let w = clenshaw_curtis_weights(n);
            let s: f64 = g.nodes.iter().zip(&w).map(|(x, w)| w * x * x).sum();
            assert!((s - 2.0 / 3.0).abs() < 1e-14);
            let s: f64 = w.iter().sum();
            assert!((s - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn barycentric_reproduces_polynomial() {
        let g = cheb_nodes(9).unwrap();
        let b = Barycentric::new(&g);
        let vals: Vec<C64> = g.nodes.iter().map(|&x| C64::new(x.powi(5) - x, 0.3 * x)).collect();
        for x in [-0.93, 0.1, 0.77] {
            let v = b.eval(&vals, x);
            assert!((v - C64::new(x.powi(5) - x, 0.3 * x)).norm() < 1e-13);
        }
    }

    #[test]
    fn assemble_matches_apply() {
        let grid = TensorGrid::new(6, 5).unwrap();
        let a1: Vec<C64> = grid.g1.nodes.iter().map(|&y| C64::new(1.0 + y * y, y)).collect();
        let a2: Vec<C64> = grid.g2.nodes.iter().map(|&y| C64::new(y - 2.0, 0.0)).collect();
        let coeff = grid.sample(|y1, y2| C64::new(y1 * y2, 1.0));
        let terms = vec![
            TensorTerm { coeff: coeff.clone(), y1: vec![Factor::Deriv(1), Factor::Diag(a1)], y2: vec![Factor::Diag(a2), Factor::Deriv(1)] },
            TensorTerm { coeff, y1: vec![], y2: vec![Factor::Deriv(2)] },
        ];
        let op = assemble_tensor_operator(&grid, &terms).unwrap();
        let u = grid.sample(|y1, y2| C64::new((y1 * 2.0).sin(), y2 * y2 * y1));
        let um = MatRef::from_column_major_slice(&u, u.len(), 1);
        let dense = &op.matrix * um;
        let free = op.apply(&u);
        for i in 0..u.len() {
            assert!((dense[(i, 0)] - free[i]).norm() < 1e-10);
        }
    }
}
