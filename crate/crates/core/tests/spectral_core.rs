use std::f64::consts::PI;

use iwave::spectral_core::*;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn apply_real(d: &faer::Mat<f64>, v: &[f64]) -> Vec<f64> {
    (0..d.nrows()).map(|i| (0..d.ncols()).map(|j| d[(i, j)] * v[j]).sum()).collect()
}

#[test]
fn nodes() {
    assert_eq!(cheb_nodes(2).unwrap().nodes, vec![1.0, 0.0, -1.0]);
    let g = cheb_nodes(4).unwrap();
    assert!(g.nodes.iter().any(|&x| (x - 0.5f64.sqrt()).abs() < 1e-15));
    for n in 1..40 {
        let g = cheb_nodes(n).unwrap();
        assert_eq!(g.nodes[0], 1.0);
        assert_eq!(g.nodes[n], -1.0);
        assert!(g.nodes.windows(2).all(|w| w[1] < w[0]));
    }
    assert!(cheb_nodes(0).is_err());
}

#[test]
fn differentiation_is_exact_on_low_degree() {
    for n in [2, 5, 16, 33] {
        let g = cheb_nodes(n).unwrap();
        let d = cheb_diff(&g);
        let ones = vec![1.0; n + 1];
        assert!(apply_real(&d, &ones).iter().all(|v| v.abs() < 1e-13));
        let dx = apply_real(&d, &g.nodes);
        assert!(dx.iter().all(|v| (v - 1.0).abs() < 1e-13));
        let sq: Vec<f64> = g.nodes.iter().map(|x| x * x).collect();
        let dsq = apply_real(&d, &sq);
        assert!(dsq.iter().zip(&g.nodes).all(|(v, x)| (v - 2.0 * x).abs() < 1e-12));
    }
}

#[test]
fn second_derivative_term() {
    let grid = TensorGrid::new(10, 12).unwrap();
    let op = assemble_tensor_operator(&grid, &[TensorTerm::constant(&grid, c(1.0), vec![], vec![Factor::Deriv(2)])]).unwrap();
    let u = grid.sample(|_, y2| c(1.0 - y2 * y2));
    assert!(op.apply(&u).iter().all(|v| (v + 2.0).norm() < 1e-12));
}

#[test]
fn ordered_products_differ_by_the_commutator() {
    let grid = TensorGrid::new(24, 6).unwrap();
    let a: Vec<C64> = grid.g1.nodes.iter().map(|&y| c(y.sin())).collect();
    let left = assemble_tensor_operator(&grid, &[TensorTerm::constant(&grid, c(1.0), vec![Factor::Diag(a.clone()), Factor::Deriv(1)], vec![])]).unwrap();
    let right = assemble_tensor_operator(&grid, &[TensorTerm::constant(&grid, c(1.0), vec![Factor::Deriv(1), Factor::Diag(a)], vec![])]).unwrap();
    let u = grid.sample(|y1, y2| C64::new(y1.exp() * y2.cos(), y1 * y2));
    let (l, r) = (left.apply(&u), right.apply(&u));
    for j1 in 0..grid.m1() {
        for j2 in 0..grid.m2() {
            let k = grid.index(j1, j2);
            let want = -grid.g1.nodes[j1].cos() * u[k];
            assert!((l[k] - r[k] - want).norm() < 1e-10);
        }
    }
}

#[test]
fn empty_terms_and_linearity() {
    let grid = TensorGrid::new(6, 7).unwrap();
    let zero = assemble_tensor_operator(&grid, &[]).unwrap();
    assert!(zero.matrix.col_iter().all(|col| col.iter().all(|z| *z == c(0.0))));
    let t1 = TensorTerm::constant(&grid, C64::new(0.3, 1.0), vec![Factor::Deriv(1)], vec![Factor::Deriv(1)]);
    let t2 = TensorTerm { coeff: grid.sample(|a, b| c(a + b)), y1: vec![], y2: vec![Factor::Deriv(2)] };
    let both = assemble_tensor_operator(&grid, &[t1.clone(), t2.clone()]).unwrap();
    let a = assemble_tensor_operator(&grid, &[t1]).unwrap();
    let b = assemble_tensor_operator(&grid, &[t2]).unwrap();
    let u = grid.sample(|y1, y2| C64::new((2.0 * y1).sin() * y2, y2.exp()));
    let (x, y, z) = (both.apply(&u), a.apply(&u), b.apply(&u));
    assert!(x.iter().zip(y.iter().zip(&z)).all(|(p, (q, r))| (p - q - r).norm() < 1e-11));
}

fn laplacian(grid: &TensorGrid) -> DenseComplexOperator {
    let terms = [
        TensorTerm::constant(grid, c(1.0), vec![Factor::Deriv(2)], vec![]),
        TensorTerm::constant(grid, c(1.0), vec![], vec![Factor::Deriv(2)]),
    ];
    assemble_tensor_operator(grid, &terms).unwrap()
}

#[test]
fn manufactured_polynomial_solution() {
    let grid = TensorGrid::new(16, 16).unwrap();
    let exact = grid.sample(|a, b| c((1.0 - a * a) * (1.0 - b * b)));
    let rhs = grid.sample(|a, b| c(-2.0 * (1.0 - b * b) - 2.0 * (1.0 - a * a)));
    let mask = grid.boundary_mask();
    let (u, rep) = dirichlet_solve(laplacian(&grid), &rhs, &mask).unwrap();
    assert!(u.iter().zip(&exact).all(|(x, y)| (x - y).norm() < 1e-10));
    assert!(rep.interior_residual < 1e-12);
    assert!(u.iter().zip(&mask).all(|(v, &m)| !m || *v == c(0.0)));
}

#[test]
fn zero_data_gives_zero() {
    let grid = TensorGrid::new(9, 7).unwrap();
    let (u, _) = dirichlet_solve(laplacian(&grid), &vec![c(0.0); grid.size()], &grid.boundary_mask()).unwrap();
    assert!(u.iter().all(|v| *v == c(0.0)));
}

#[test]
fn spectral_convergence() {
    let err = |n: usize| {
        let grid = TensorGrid::new(n, n).unwrap();
        let f = |a: f64, b: f64| (PI * a).sin() * (PI * b).sin() * (0.5 * a).exp();
        // Laplacian of sin(pi a) sin(pi b) e^{a/2}
        let lap = |a: f64, b: f64| {
            let e = (0.5 * a).exp();
            let sa = (PI * a).sin();
            let ca = (PI * a).cos();
            let sb = (PI * b).sin();
            e * sb * ((0.25 - 2.0 * PI * PI) * sa + PI * ca)
        };
        let (u, _) = dirichlet_solve(laplacian(&grid), &grid.sample(|a, b| c(lap(a, b))), &grid.boundary_mask()).unwrap();
        let exact = grid.sample(|a, b| c(f(a, b)));
        u.iter().zip(&exact).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    };
    let (e8, e16, e32) = (err(8), err(16), err(32));
    // faster than any fixed power: the ratio itself shrinks
    assert!(e16 < e8 * 1e-4, "{e8:e} {e16:e}");
    assert!(e32 < 1e-11, "{e32:e}");
}

#[test]
fn masks_must_match_the_grid() {
    let grid = TensorGrid::new(5, 5).unwrap();
    let mut mask = grid.boundary_mask();
    mask[grid.index(2, 2)] = true;
    assert!(dirichlet_solve(laplacian(&grid), &vec![c(1.0); grid.size()], &mask).is_err());
}
