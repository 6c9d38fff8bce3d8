//! End-to-end acceptance run. Prints one line per criterion and exits
//! nonzero if any fails. Heavy solves run one at a time and are shared
//! between criteria.

use std::f64::consts::PI;
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gauss_quad::legendre::GaussLegendre;
use iwave::dynamics::{black_box_scales, validation_lambdas, verify_scales, Billiard, BoundaryPoint};
use iwave::end_analysis::{classify_io, default_mode_count, fit_end_modes, End, IOReport, Verdict};
use iwave::evolution::{
    discretize_p, evolve_profile, leading_profile_error, leapfrog, modal_amplitudes, w_profile, ModalGrid, ProfileErrorOptions,
};
use iwave::geometry::{c_slope, ChannelSpec, ReferenceMap, Sign};
use iwave::layer_potential::{
    boundary_equation_residual, kernel_spectral_mass, probe_points, reconstruction_residual, Cutoff, KernelCase, QuadratureRule,
};
use iwave::scaled_solver::{
    lap_sweep, measure_beam_slope, solve_stationary, trusted_difference, BeamSlopeOptions, Forcing, LapSweep, RhoProfile,
    SolverConfig, StationarySolution,
};
use iwave::spectral_core::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

const STUDY_EPSILONS: [f64; 4] = [-1e-2, -1e-3, -1e-4, -1e-5];

fn study(n1: usize, n2: usize, tau: f64, epsilon: f64) -> SolverConfig {
    SolverConfig {
        rho: RhoProfile::SmoothStep { inner: 0.6, outer: 0.85 },
        forcing: study_forcing(),
        n1,
        n2,
        tau,
        epsilon,
        ..SolverConfig::figure1()
    }
}

fn study_forcing() -> Forcing {
    Forcing { amplitude: 1.0, center: [0.0, 0.0], sigma: [0.1, 0.3], carrier: 0.0 }
}

fn solve(c: &SolverConfig) -> Result<StationarySolution, String> {
    solve_stationary(c).map_err(|e| e.to_string())
}

fn io_report(sol: &StationarySolution) -> Result<IOReport, String> {
    let l = sol.config.half_length;
    let k = default_mode_count(sol.config.n2);
    let w = [0.73 * l, 0.995 * l];
    let left = fit_end_modes(sol, End::Left, k, [-w[1], -w[0]]).map_err(|e| e.to_string())?;
    let right = fit_end_modes(sol, End::Right, k, w).map_err(|e| e.to_string())?;
    classify_io(&left, &right, 1e-2).map_err(|e| e.to_string())
}

fn figure_reproduction(fig: &StationarySolution, elapsed: Duration) -> Outcome {
    let c = c_slope(0.7).map_err(|e| e.to_string())?;
    let beam = measure_beam_slope(&fig.ctx, &fig.field, &BeamSlopeOptions::default()).map_err(|e| e.to_string())?;
    let rel = (beam.slope - c).abs() / c;
    let res = fig.report.interior_residual;
    let ok = elapsed < Duration::from_secs(300) && rel < 0.05 && res < 1e-8;
    Ok((ok, format!("time {:.0}s, slope {:.4} vs {:.4} ({:.2}%), residual {res:.1e}", elapsed.as_secs_f64(), beam.slope, c, 100.0 * rel)))
}

fn scaling_invariance(reference: &StationarySolution) -> Outcome {
    let a = solve(&study(128, 48, 0.4, reference.config.epsilon))?;
    let b = solve(&study(128, 48, 0.6, reference.config.epsilon))?;
    let d = trusted_difference(&a, &b, 120, 40).map_err(|e| e.to_string())?;
    Ok((d < 1e-3, format!("|u(0.4) - u(0.6)| / |u| = {d:.2e} on |x1| <= {}", a.ctx.trusted_half_width())))
}

fn resolution_convergence(finest: &StationarySolution) -> Outcome {
    let floor = 1e-4;
    let eps = finest.config.epsilon;
    let coarse = [solve(&study(32, 12, 0.5, eps))?, solve(&study(64, 24, 0.5, eps))?];
    let d = [
        trusted_difference(&coarse[1], &coarse[0], 120, 40).map_err(|e| e.to_string())?,
        trusted_difference(finest, &coarse[1], 120, 40).map_err(|e| e.to_string())?,
    ];
    let ok = d[1] <= d[0] / 10.0 || d[1] < floor;
    Ok((ok, format!("refinement differences {:.2e} -> {:.2e} (x{:.0}), floor {floor:.0e}", d[0], d[1], d[0] / d[1])))
}

fn outgoing_classification(fig: &StationarySolution, minus: &StationarySolution) -> Outcome {
    let f = io_report(fig)?;
    let m = io_report(minus)?;
    let plus = solve(&study(128, 48, 0.5, -minus.config.epsilon))?;
    let p = io_report(&plus)?;
    let mirrored = p.outgoing_energy / p.incoming_energy;
    let ok = f.verdict == Verdict::Outgoing
        && f.ratio < 1e-2
        && m.verdict == Verdict::Outgoing
        && m.ratio < 1e-2
        && p.verdict == Verdict::Incoming
        && mirrored < 1e-2;
    Ok((
        ok,
        format!(
            "figure run in/out {:.1e} ({:?}); study -i eps in/out {:.1e} ({:?}); +i eps out/in {:.1e} ({:?})",
            f.ratio, f.verdict, m.ratio, m.verdict, mirrored, p.verdict
        ),
    ))
}

fn lap_convergence(sweep: &LapSweep) -> Outcome {
    let d = &sweep.differences;
    let decreasing = d.windows(2).all(|w| w[1] < w[0]);
    let checks = &sweep.derivative_checks;
    // the residual is the central-difference truncation term, so it scales like h^2
    let at_order = checks.iter().all(|c| c.residual <= 2.0 * c.truncation);
    let scaling = checks.windows(2).all(|w| {
        let q = (w[0].residual / w[1].residual) / (w[0].step / w[1].step).powi(2);
        (0.5..=2.0).contains(&q)
    });
    let res: Vec<String> = checks.iter().map(|c| format!("{:.1e}", c.residual)).collect();
    let ds: Vec<String> = d.iter().map(|v| format!("{v:.2e}")).collect();
    Ok((decreasing && at_order && scaling, format!("differences [{}], derivative residuals [{}]", ds.join(", "), res.join(", "))))
}

fn layer_potentials(sol: &StationarySolution) -> Outcome {
    let cutoff = Cutoff::new(5.0, 8.0).map_err(|e| e.to_string())?;
    let probes = probe_points(sol.ctx.channel(), 6.5, 50, 7);
    let rules = [QuadratureRule::coarse(), QuadratureRule::medium()];
    let mut rec = Vec::new();
    let mut bdr = Vec::new();
    for rule in rules {
        rec.push(reconstruction_residual(sol, cutoff, &probes, rule).map_err(|e| e.to_string())?.relative);
        bdr.push(boundary_equation_residual(sol, cutoff, 40, rule).map_err(|e| e.to_string())?.relative);
    }
    let omega = C64::new(sol.param.lambda, 1e-3);
    let mut worst: f64 = 1.0;
    for case in [KernelCase::Two, KernelCase::Four] {
        for s in Sign::BOTH {
            let m = kernel_spectral_mass(sol.ctx.channel(), omega, case, s, 0.3, 40.0, 1 << 16).map_err(|e| e.to_string())?;
            let want_positive = (case == KernelCase::Two) == (s == Sign::Plus);
            worst = worst.min(if want_positive { m.positive } else { m.negative });
        }
    }
    let ok = rec[1] <= 0.02 && rec[1] < rec[0] && bdr[1] <= 0.05 && bdr[1] < bdr[0] && worst >= 0.95;
    Ok((
        ok,
        format!(
            "reconstruction {:.1e} -> {:.1e}, boundary equation {:.1e} -> {:.1e}, min single-sided mass {:.4}",
            rec[0], rec[1], bdr[0], bdr[1], worst
        ),
    ))
}

fn dynamics_exactness() -> Outcome {
    let c = c_slope(0.7).map_err(|e| e.to_string())?;
    let flat = Billiard::new(ChannelSpec::flat(), 0.7).map_err(|e| e.to_string())?;
    let mut shift_err: f64 = 0.0;
    for t in [-7.5, -1.0, 0.0, 2.25, 9.0] {
        let q = flat.billiard_map(BoundaryPoint::up(t), 1).map_err(|e| e.to_string())?;
        shift_err = shift_err.max((q.theta - (t + 2.0 * PI / c)).abs());
        // bottom points travel the other way
        let q = flat.billiard_map(BoundaryPoint::down(t), 1).map_err(|e| e.to_string())?;
        shift_err = shift_err.max((q.theta - (t - 2.0 * PI / c)).abs());
    }
    let chan = ChannelSpec::figure1();
    let bil = Billiard::new(chan, 0.7).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut inv_err: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.random_range(-20.0..20.0);
        let p = if rng.random_bool(0.5) { BoundaryPoint::up(t) } else { BoundaryPoint::down(t) };
        for s in Sign::BOTH {
            let q = bil.gamma(bil.gamma(p, s).map_err(|e| e.to_string())?, s).map_err(|e| e.to_string())?;
            if q.side != p.side {
                return Ok((false, format!("involution changed side at {p:?}")));
            }
            inv_err = inv_err.max((q.theta - p.theta).abs());
        }
    }
    let interval = [0.68, 0.72];
    let radius = study_forcing().support_radius(15.0, chan.eta_supp);
    let scales = black_box_scales(&chan, radius, interval).map_err(|e| e.to_string())?;
    let violation = verify_scales(&chan, &scales, &validation_lambdas(interval, 64)).map_err(|e| e.to_string())?;
    let ok = shift_err < 1e-12 && inv_err < 1e-10 && violation.is_none();
    Ok((
        ok,
        format!(
            "flat shift error {shift_err:.1e}, involution error {inv_err:.1e}, scales M={:.1} N={} L={:.1} revalidated: {}",
            scales.m,
            scales.n,
            scales.l,
            violation.as_deref().unwrap_or("ok")
        ),
    ))
}

fn evolution(u_plus: &StationarySolution) -> Outcome {
    // flat pencil against separation of variables, smoothest 20 pairs
    let le = 12.0;
    let flat = discretize_p(&ChannelSpec::flat(), le, ModalGrid { modes_x: 40, modes_y: 8 }).map_err(|e| e.to_string())?;
    let mut pairs: Vec<(f64, f64)> = (1..=40)
        .flat_map(|m| {
            (1..=8).map(move |k| {
                let mu = m as f64 * PI / (2.0 * le);
                let k2 = (k * k) as f64;
                (k2 + mu * mu, k2 / (k2 + mu * mu))
            })
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let eig_err = pairs
        .iter()
        .take(20)
        .map(|&(_, z)| flat.eigenvalues.iter().map(|v| (v - z).abs()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);

    // W at resonance against composite Gauss-Legendre quadrature
    let (lambda, t) = (0.7f64, 10.0);
    let rule = GaussLegendre::new(NonZeroUsize::new(10).unwrap());
    let mut q = C64::new(0.0, 0.0);
    let h = t / 40.0;
    for p in 0..40 {
        for (x, w) in rule.as_node_weight_pairs() {
            let s = h * p as f64 + 0.5 * h * (x + 1.0);
            q += 0.5 * h * w * (s * lambda).sin() / lambda * C64::new(0.0, -lambda * s).exp();
        }
    }
    let w_err = (w_profile(lambda * lambda, t, lambda).map_err(|e| e.to_string())? - q).norm();

    // modal evolution against leapfrog
    let mut flat = flat;
    let map = ReferenceMap::new(ChannelSpec::flat(), 15.0).map_err(|e| e.to_string())?;
    let f = study_forcing();
    let load = flat.load_vector(|x| f.at_physical(x, &map).re);
    flat.set_load(&load).map_err(|e| e.to_string())?;
    let u = flat.synthesize(&modal_amplitudes(&flat, lambda, 20.0).map_err(|e| e.to_string())?);
    let v = leapfrog(&flat, &load, lambda, 20.0, 0.005).map_err(|e| e.to_string())?;
    let num: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let lf_err = num / den;

    // long-time profile over the Gaussian channel
    let chan = ChannelSpec::figure1();
    let mut modal = discretize_p(&chan, 30.0, ModalGrid { modes_x: 128, modes_y: 12 }).map_err(|e| e.to_string())?;
    let map = ReferenceMap::new(chan, 15.0).map_err(|e| e.to_string())?;
    modal.expand_forcing(|x| f.at_physical(x, &map).re).map_err(|e| e.to_string())?;
    let times: Vec<f64> = (0..=160).map(|i| 0.5 * i as f64).collect();
    let prof = evolve_profile(&modal, lambda, &times, 5.0).map_err(|e| e.to_string())?;
    let rep = leading_profile_error(&modal, &prof, u_plus, ProfileErrorOptions::default()).map_err(|e| e.to_string())?;

    let ok = eig_err < 1e-8 && w_err < 1e-10 && lf_err < 1e-4 && rep.decreasing && rep.far_bounded && rep.far_ratio_max <= 2.0;
    Ok((
        ok,
        format!(
            "eigenvalues {eig_err:.1e}, W {w_err:.1e}, leapfrog {lf_err:.1e}, T_max {:.1}, windowed e {:.3} -> {:.3} (slope {:.1e}), far energy ratio {:.3}",
            rep.t_max, rep.e_quarter_mean, rep.e_end_mean, rep.trend_slope, rep.far_ratio_max
        ),
    ))
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).map(|r| r.filter_map(|e| e.ok().map(|e| e.path())).collect()).unwrap_or_default();
    v.sort();
    v
}

fn determinism() -> Outcome {
    let a = solve(&study(64, 24, 0.5, -1e-3))?;
    let b = solve(&study(64, 24, 0.5, -1e-3))?;
    let same_field = a.field.iter().zip(&b.field).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits());

    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/flat_quickstart.toml");
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut compared = 0;
    let mut mismatch = Vec::new();
    for cmd in ["solve", "evolve"] {
        let dirs: Vec<PathBuf> = (0..2).map(|i| root.join(format!("{cmd}_{i}"))).collect();
        for d in &dirs {
            let _ = fs::remove_dir_all(d);
            let o = Command::new(env!("CARGO_BIN_EXE_iwave"))
                .arg("--config")
                .arg(&config)
                .arg("--out")
                .arg(d)
                .args(["--quiet", cmd])
                .output()
                .map_err(|e| e.to_string())?;
            if !o.status.success() {
                return Err(format!("{cmd} failed: {}", String::from_utf8_lossy(&o.stderr)));
            }
        }
        let (fa, fb) = (files_under(&dirs[0]), files_under(&dirs[1]));
        if fa.iter().map(|p| p.file_name()).ne(fb.iter().map(|p| p.file_name())) {
            mismatch.push(format!("{cmd}: file sets differ"));
        }
        for (x, y) in fa.iter().zip(&fb) {
            compared += 1;
            if fs::read(x).ok() != fs::read(y).ok() {
                mismatch.push(x.display().to_string());
            }
        }
    }
    let ok = same_field && mismatch.is_empty() && compared > 0;
    Ok((ok, format!("in-process field identical: {same_field}, {compared} artifacts compared, mismatches: {mismatch:?}")))
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, started: Instant, outcome: Outcome) {
    let secs = started.elapsed().as_secs_f64();
    let (ok, detail) = match outcome {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    println!("criterion {id} {name}: {} ({secs:.0}s) {detail}", if ok { "PASS" } else { "FAIL" });
    results.push(ok);
}

fn main() {
    let mut results = Vec::new();

    let t = Instant::now();
    let fig = solve(&SolverConfig::figure1());
    let solve_time = t.elapsed();
    let c1 = fig.as_ref().map_err(Clone::clone).and_then(|f| figure_reproduction(f, solve_time));
    report(&mut results, 1, "figure reproduction", t, c1);

    let t = Instant::now();
    let sweep = lap_sweep(&study(128, 48, 0.5, STUDY_EPSILONS[0]), &STUDY_EPSILONS, -0.6).map_err(|e| e.to_string());
    let sweep_time = t.elapsed();

    let t = Instant::now();
    let c2 = sweep.as_ref().map_err(Clone::clone).and_then(|s| scaling_invariance(&s.solutions[1]));
    report(&mut results, 2, "complex-scaling invariance", t, c2);

    let t = Instant::now();
    let c3 = sweep.as_ref().map_err(Clone::clone).and_then(|s| resolution_convergence(&s.solutions[1]));
    report(&mut results, 3, "resolution convergence", t, c3);

    let t = Instant::now();
    let c4 = match (&fig, &sweep) {
        (Ok(f), Ok(s)) => outgoing_classification(f, &s.solutions[3]),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    report(&mut results, 4, "outgoing classification", t, c4);
    drop(fig);

    let t = Instant::now() - sweep_time;
    let c5 = sweep.as_ref().map_err(Clone::clone).and_then(lap_convergence);
    report(&mut results, 5, "limiting absorption", t, c5);

    let t = Instant::now();
    let c6 = sweep.as_ref().map_err(Clone::clone).and_then(|s| layer_potentials(&s.solutions[1]));
    report(&mut results, 6, "layer-potential cross-validation", t, c6);

    let t = Instant::now();
    report(&mut results, 7, "dynamics exactness", t, dynamics_exactness());

    let t = Instant::now();
    let c8 = sweep.as_ref().map_err(Clone::clone).and_then(|s| evolution(&s.solutions[3]));
    report(&mut results, 8, "evolution", t, c8);
    drop(sweep);

    let t = Instant::now();
    report(&mut results, 9, "determinism", t, determinism());

    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
