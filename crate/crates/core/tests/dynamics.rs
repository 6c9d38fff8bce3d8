use std::f64::consts::PI;

use iwave::dynamics::*;
use iwave::geometry::{c_slope, ChannelSpec, Sign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(seed: u64, n: usize) -> Vec<BoundaryPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t = rng.random_range(-20.0..20.0);
            if rng.random_bool(0.5) { BoundaryPoint::up(t) } else { BoundaryPoint::down(t) }
        })
        .collect()
}

#[test]
fn flat_gamma_is_a_shift() {
    let c = c_slope(0.7).unwrap();
    let p = gamma(&ChannelSpec::flat(), BoundaryPoint::up(1.25), 0.7, Sign::Plus).unwrap();
    assert_eq!(p.side, Side::Down);
    assert!((p.theta - (1.25 + PI / c)).abs() < 1e-12);
}

#[test]
fn flat_billiard_map_is_a_shift() {
    let c = c_slope(0.7).unwrap();
    for t in [-3.0, 0.0, 2.5] {
        let q = billiard_map(&ChannelSpec::flat(), BoundaryPoint::up(t), 0.7, 1).unwrap();
        assert_eq!(q.side, Side::Up);
        assert!((q.theta - (t + 2.0 * PI / c)).abs() < 1e-12);
    }
}

#[test]
fn zero_iterates() {
    for p in random_points(5, 10) {
        assert_eq!(billiard_map(&ChannelSpec::figure1(), p, 0.7, 0).unwrap(), p);
    }
}

#[test]
fn gamma_is_an_involution() {
    let b = Billiard::new(ChannelSpec::figure1(), 0.7).unwrap();
    for p in random_points(17, 100) {
        for s in Sign::BOTH {
            let q = b.gamma(p, s).unwrap();
            assert_ne!(q.side, p.side);
            let r = b.gamma(q, s).unwrap();
            assert_eq!(r.side, p.side);
            assert!((r.theta - p.theta).abs() < 1e-10);
        }
    }
}

#[test]
fn billiard_inverse() {
    let b = Billiard::new(ChannelSpec::figure1(), 0.7).unwrap();
    for p in random_points(23, 50) {
        let q = b.billiard_map(b.billiard_map(p, 1).unwrap(), -1).unwrap();
        assert!((q.theta - p.theta).abs() < 1e-10);
    }
}

#[test]
fn gamma_matches_a_scan_root() {
    // from the lid at theta = 0 along ell^+: theta' + (G(theta') - pi)/c = 0
    let chan = ChannelSpec::figure1();
    let c = c_slope(0.7).unwrap();
    let h = |t: f64| t + (chan.g(t) - PI) / c;
    let step = 1e-3;
    let mut a = -10.0;
    while h(a) * h(a + step) > 0.0 {
        a += step;
    }
    let mut b = a + step;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if h(a) * h(m) <= 0.0 { b = m } else { a = m }
    }
    let p = gamma(&chan, BoundaryPoint::up(0.0), 0.7, Sign::Plus).unwrap();
    assert!((p.theta - 0.5 * (a + b)).abs() < 1e-8);
}

#[test]
fn lid_orbits_drift_right() {
    let b = Billiard::new(ChannelSpec::figure1(), 0.7).unwrap();
    for t in [-12.0, -4.0, -1.0, 0.0, 2.0, 9.0] {
        let orbit = b.orbit(BoundaryPoint::up(t), 5).unwrap();
        assert!(orbit.windows(2).all(|w| w[1].theta > w[0].theta));
    }
}

#[test]
fn flat_escape_count() {
    let chan = ChannelSpec::flat();
    let s = black_box_scales(&chan, 1.0, [0.7, 0.7]).unwrap();
    let c = c_slope(0.7).unwrap();
    // b shifts by 2 pi / c; the segment [-4M, 4M] leaves after the first n with n 2pi/c > 8M
    let n = (8.0 * s.m * c / (2.0 * PI)).floor() as u32 + 1;
    assert_eq!(s.n, n);
    assert!(s.m > 10.0 * PI / c);
    assert_eq!(verify_scales(&chan, &s, &[0.7]).unwrap(), None);
}

#[test]
fn gaussian_scales_revalidate() {
    let chan = ChannelSpec::figure1();
    let interval = [0.68, 0.72];
    let s = black_box_scales(&chan, 2.0, interval).unwrap();
    assert_eq!(verify_scales(&chan, &s, &validation_lambdas(interval, 64)).unwrap(), None);
    assert!(s.l > 4.0 * s.m);
}

#[test]
fn supercritical_is_refused() {
    let e = Billiard::new(ChannelSpec::figure1(), 0.99).unwrap_err();
    assert!(matches!(e, iwave::Error::NotSubcritical { .. }));
}
