use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use iwave::evolution::*;
use iwave::geometry::{ChannelSpec, ReferenceMap};
use iwave::scaled_solver::{solve_stationary, Forcing, RhoProfile, SolverConfig};
use iwave::spectral_core::C64;

/// Composite Gauss-Legendre integral of `f` over `[a, b]`.
fn integrate(f: impl Fn(f64) -> C64, a: f64, b: f64, panels: usize) -> C64 {
    let rule = GaussLegendre::new(NonZeroUsize::new(10).unwrap());
    let h = (b - a) / panels as f64;
    let mut s = C64::new(0.0, 0.0);
    for p in 0..panels {
        let l = a + h * p as f64;
        for (x, w) in rule.as_node_weight_pairs() {
            s += 0.5 * h * w * f(l + 0.5 * h * (x + 1.0));
        }
    }
    s
}

#[test]
fn profile_vanishes_at_time_zero() {
    for z in [0.01, 0.3, 0.49, 0.9] {
        for lambda in [0.2, 0.7] {
            assert_eq!(w_profile(z, 0.0, lambda).unwrap(), C64::new(0.0, 0.0));
        }
    }
    assert!(w_profile(0.0, 1.0, 0.7).is_err() && w_profile(0.5, 1.0, 1.0).is_err());
}

#[test]
fn profile_matches_its_defining_integral() {
    let (lambda, t) = (0.7f64, 10.0);
    for z in [lambda * lambda, 0.2, 0.8] {
        let r: f64 = z.sqrt();
        let q = integrate(|s| (s * r).sin() / r * C64::new(0.0, -lambda * s).exp(), 0.0, t, 40);
        assert!((w_profile(z, t, lambda).unwrap() - q).norm() < 1e-10);
    }
}

#[test]
fn cesaro_average_tends_to_the_resolvent() {
    let lambda: f64 = 0.7;
    let z: f64 = 0.05;
    let r = z.sqrt();
    let limit = 1.0 / (z - lambda * lambda);
    // exact finite-T average: the limit plus an oscillating O(1/T) remainder
    let finite = |t: f64| {
        let rem = |a: f64| (1.0 - C64::new(0.0, -t * a).exp()) / (C64::i() * a * a);
        limit - (rem(lambda + r) - rem(lambda - r)) / (2.0 * r * t)
    };
    let t = 1e3;
    let avg = integrate(|s| w_profile(z, s, lambda).unwrap(), 0.0, t, 4000) / t;
    assert!((avg - finite(t)).norm() < 1e-9);
    let bound = ((lambda + r).powi(-2) + (lambda - r).powi(-2)) / (r * t);
    assert!((avg - limit).norm() < bound);
    let t = 1e5;
    let avg = integrate(|s| w_profile(z, s, lambda).unwrap(), 0.0, t, 200_000) / t;
    assert!((avg - limit).norm() < 1e-3, "{avg} {limit}");
}

#[test]
fn profile_is_continuous_at_resonance() {
    let (lambda, t) = (0.7f64, 10.0);
    let a = 2.0 * lambda;
    let pq = C64::new(2.0 * (0.5 * t * a).sin().powi(2), (t * a).sin()) / a;
    let limit = (pq - C64::new(0.0, t)) / a;
    for dz in [1e-8, -1e-8] {
        let d = (w_profile(lambda * lambda + dz, t, lambda).unwrap() - limit).norm();
        assert!(d < 1e-6, "{d:e}");
    }
}

fn flat(modes_x: usize, modes_y: usize) -> ModalDecomposition {
    discretize_p(&ChannelSpec::flat(), 12.0, ModalGrid { modes_x, modes_y }).unwrap()
}

#[test]
fn flat_spectrum_is_separable() {
    let m = flat(30, 6);
    let mut want: Vec<f64> = (1..=30)
        .flat_map(|mm| {
            (1..=6).map(move |k| {
                let mu = mm as f64 * PI / 24.0;
                let k2 = (k * k) as f64;
                k2 / (k2 + mu * mu)
            })
        })
        .collect();
    want.sort_by(f64::total_cmp);
    let mut got = m.eigenvalues.clone();
    got.sort_by(f64::total_cmp);
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want).take(20) {
        assert!((g - w).abs() < 1e-8);
    }
    assert!(got.iter().all(|&z| z > -SPECTRUM_SLACK && z < 1.0 + SPECTRUM_SLACK));
    assert!(m.residuals.iter().all(|&r| r < EIGEN_RESIDUAL_LIMIT));
}

#[test]
fn eigenvectors_are_a_orthogonal() {
    let m = discretize_p(&ChannelSpec::figure1(), 20.0, ModalGrid { modes_x: 40, modes_y: 5 }).unwrap();
    assert!(m.eigenvalues.iter().all(|&z| z > 0.0 && z < 1.0));
    let g = m.vectors.transpose() * &m.a * &m.vectors;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if i != j {
                worst = worst.max(g[(i, j)].abs() / (g[(i, i)] * g[(j, j)]).abs().sqrt());
            }
        }
    }
    assert!(worst < 1e-9, "{worst:e}");
    assert!(m.orthogonality < 1e-9);
}

#[test]
fn starts_from_rest() {
    let mut m = flat(20, 4);
    let map = ReferenceMap::new(ChannelSpec::flat(), 15.0).unwrap();
    let f = Forcing { amplitude: 1.0, center: [0.0, 0.0], sigma: [0.1, 0.3], carrier: 0.0 };
    m.expand_forcing(|x| f.at_physical(x, &map).re).unwrap();
    assert!(modal_amplitudes(&m, 0.7, 0.0).unwrap().iter().all(|&a| a == 0.0));
    assert!(m.forcing.iter().any(|&c| c != 0.0));
}

#[test]
fn single_mode_forcing_stays_in_its_mode() {
    let mut m = discretize_p(&ChannelSpec::figure1(), 20.0, ModalGrid { modes_x: 40, modes_y: 5 }).unwrap();
    let k = 17;
    let n = m.vectors.nrows();
    let phi = faer::Mat::from_fn(n, 1, |i, _| m.vectors[(i, k)]);
    let load = &m.a * &phi;
    let load: Vec<f64> = (0..n).map(|i| load[(i, 0)]).collect();
    m.set_load(&load).unwrap();
    let norm = m.forcing[k];
    assert!(norm > 0.0);
    for t in [0.5, 7.0, 31.0] {
        let a = modal_amplitudes(&m, 0.7, t).unwrap();
        let want = (C64::new(0.0, 0.7 * t).exp() * w_profile(m.eigenvalues[k], t, 0.7).unwrap()).re * norm;
        for (j, &v) in a.iter().enumerate() {
            if j == k {
                assert!((v - want).abs() < 1e-12 * (1.0 + want.abs()));
            } else {
                assert!(v.abs() < 1e-10 * norm);
            }
        }
    }
}

#[test]
fn agrees_with_time_stepping() {
    let mut m = flat(40, 8);
    let map = ReferenceMap::new(ChannelSpec::flat(), 15.0).unwrap();
    let f = Forcing { amplitude: 1.0, center: [0.0, 0.0], sigma: [0.1, 0.3], carrier: 0.0 };
    let load = m.load_vector(|x| f.at_physical(x, &map).re);
    m.set_load(&load).unwrap();
    let u = m.synthesize(&modal_amplitudes(&m, 0.7, 20.0).unwrap());
    let v = leapfrog(&m, &load, 0.7, 20.0, 0.005).unwrap();
    let num: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(num < 1e-4 * den, "{:e}", num / den);
}

#[test]
fn free_energy_is_conserved() {
    let m = flat(16, 4);
    let a0: Vec<f64> = (0..m.len()).map(|k| ((k * 7 % 11) as f64 - 5.0) / 5.0).collect();
    let v0: Vec<f64> = (0..m.len()).map(|k| ((k * 3 % 7) as f64 - 3.0) / 3.0).collect();
    let times: Vec<f64> = (0..50).map(|i| 2.3 * i as f64).collect();
    let e = free_energy(&m, &a0, &v0, &times);
    assert!(e[0] > 0.0);
    assert!(e.iter().all(|v| (v - e[0]).abs() < 1e-8 * e[0]));
}

#[test]
fn zero_forcing_has_zero_profile_error() {
    let mut m = flat(40, 6);
    m.expand_forcing(|_| 0.0).unwrap();
    let times: Vec<f64> = (0..=8).map(|i| 2.5 * i as f64).collect();
    let prof = evolve_profile(&m, 0.7, &times, 3.0).unwrap();
    let c = SolverConfig {
        channel: ChannelSpec::flat(),
        rho: RhoProfile::SmoothStep { inner: 0.6, outer: 0.85 },
        forcing: Forcing::zero(),
        n1: 32,
        n2: 12,
        epsilon: -1e-3,
        ..SolverConfig::figure1()
    };
    let up = solve_stationary(&c).unwrap();
    let opts = ProfileErrorOptions { x_max: 6.0, ..ProfileErrorOptions::default() };
    let rep = leading_profile_error(&m, &prof, &up, opts).unwrap();
    assert!(rep.weighted_error.iter().all(|&e| e == 0.0));
    assert!(rep.energy_error.iter().all(|&e| e == 0.0));
}
