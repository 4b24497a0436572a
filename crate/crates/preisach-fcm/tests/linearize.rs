mod common;

use std::f64::consts::PI;

use common::*;
use num_complex::Complex64;
use preisach_fcm::hps::*;
use preisach_fcm::linearize::*;
use preisach_fcm::preisach::*;
use preisach_fcm::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Base with an internal minor loop: a third harmonic large enough to add extrema.
fn minor_loop_base(samples: usize, amp: f64) -> PeriodicSignal {
    PeriodicSignal::from_fn(samples, 1.0, |t| amp * ((2.0 * PI * t).cos() + 0.6 * (6.0 * PI * t + 0.3).cos()) / 1.6).unwrap()
}

fn cmat_max(a: &nalgebra::DMatrix<Complex64>) -> f64 {
    a.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

#[test]
fn reduces_to_memoryless_path() {
    let model = transformer_like();
    let cl = CentreLineOnly(&model);
    let i = PeriodicSignal::from_fn(2000, 0.02, |t| 1.4 * (100.0 * PI * t).cos() + 0.2 * (300.0 * PI * t).sin()).unwrap();
    let base = validate_base(&i).unwrap();
    let p = linearize_preisach(&cl, &base, 11).unwrap();
    let q = memoryless_linearize(|x, _| model.centre_line_slope(x), &i, 11).unwrap();
    let scale = cmat_max(&q.y1);
    assert!(p.max_abs_diff(&q) < 1e-8 * scale, "{:e}", p.max_abs_diff(&q));
}

#[test]
fn linear_inductor_admittance() {
    let l = 0.3;
    let model = SyntheticModel::linear_inductor(l, 10.0);
    let i = cosine(400, 2.0, 0.02);
    let base = validate_base(&i).unwrap();
    let w = i.omega();
    for policy in [DcPolicy::Excluded, DcPolicy::FreeFlux] {
        let out = analytic_fcm(&model, &base, &LinearizeOptions { order: 11, inversion_order: None, policy }).unwrap();
        let y = &out.fcm.pair;
        assert!(out.fcm.dc_column_unbounded);
        for n in 0..=11 {
            for m in 0..=11 {
                let want = if n == m && n > 0 { 1.0 / (J * n as f64 * w * l) } else { Complex64::new(0.0, 0.0) };
                assert!((y.y1[(n, m)] - want).norm() < 1e-9 / (w * l), "{policy} ({n}, {m})");
                assert!(y.y2[(n, m)].norm() < 1e-9 / (w * l));
            }
        }
    }
}

#[test]
fn zero_model_gives_zero_pair() {
    let model = SyntheticModel::linear_inductor(0.0, 10.0);
    let base = validate_base(&minor_loop_base(256, 1.0)).unwrap();
    let p = linearize_preisach(&model, &base, 11).unwrap();
    assert_eq!(cmat_max(&p.y1), 0.0);
    assert_eq!(cmat_max(&p.y2), 0.0);
}

/// ΔΛ from simulating i_B + ψ·Re{c e^{jmωt}} and transforming.
fn simulated_response<M: HysteresisModel>(model: &M, base: &PeriodicSignal, order: usize, m: usize, c: Complex64) -> Vec<Complex64> {
    let n = base.len();
    let run = |s: f64| {
        let i: Vec<f64> = (0..n)
            .map(|k| {
                let th = 2.0 * PI * ((m * k) % n) as f64 / n as f64;
                base.samples()[k] + s * (c * Complex64::from_polar(1.0, th)).re
            })
            .collect();
        hps_forward(&simulate(model, &base.with_samples(i).unwrap()).unwrap(), order).unwrap()
    };
    let psi = 1e-5;
    let (up, down) = (run(psi), run(-psi));
    (0..=order).map(|k| (up.get(k) - down.get(k)) / (2.0 * psi)).collect()
}

#[test]
fn pair_matches_central_differences() {
    let order = 11;
    for (model, base) in [
        (transformer_like(), PeriodicSignal::from_fn(2000, 1.0, |t| 1.5 * (2.0 * PI * t).cos() + 0.3 * (4.0 * PI * t).sin()).unwrap()),
        (transformer_like(), minor_loop_base(2000, 2.0)),
        (curved_model(), minor_loop_base(1000, 0.9)),
    ] {
        let b = validate_base(&base).unwrap();
        let p = linearize_preisach(&model, &b, order).unwrap();
        for m in 0..=order {
            let dirs: &[Complex64] = if m == 0 { &[Complex64::new(1.0, 0.0)] } else { &[Complex64::new(1.0, 0.0), J] };
            for &c in dirs {
                let fd = simulated_response(&model, &base, order, m, c);
                let an: Vec<Complex64> = (0..=order).map(|n| p.y1[(n, m)] * c + p.y2[(n, m)] * c.conj()).collect();
                let scale = an.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-12);
                let err = cmax_abs(&fd, &an);
                assert!(err < 1e-3 * scale, "column {m} dir {c}: {err:e} of {scale:e}");
            }
        }
    }
}

#[test]
fn phase_sweep_traces_circle() {
    let model = transformer_like();
    let base = minor_loop_base(2000, 2.0);
    let b = validate_base(&base).unwrap();
    let p = linearize_preisach(&model, &b, 5).unwrap();
    for (n, m) in [(1, 1), (3, 1), (1, 3), (3, 3)] {
        let centre = p.y1[(n, m)];
        let radius = p.y2[(n, m)].norm();
        for k in 0..12 {
            let c = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / 12.0);
            let apparent = simulated_response(&model, &base, 5, m, c)[n] / c;
            let dev = ((apparent - centre).norm() - radius).abs();
            assert!(dev < 0.01 * radius, "({n}, {m}) phase {k}: {dev:e} of {radius:e}");
        }
    }
}

#[test]
fn inversion_consistency() {
    let model = transformer_like();
    let b = validate_base(&minor_loop_base(2000, 2.0)).unwrap();
    let p = linearize_preisach(&model, &b, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = b.current.omega();
    let f = invert_fcm(&p).unwrap();
    let g = invert_flux_pair(&p, true).unwrap();
    for _ in 0..20 {
        let x = random_harmonics(&mut rng, 11, w);
        let back = apply_fcm(&f, &apply_fcm(&p, &x).unwrap()).unwrap();
        assert!(cmax_abs(back.coeffs(), x.coeffs()) < 1e-9);
        // without the DC degree of freedom
        let mut y = x.clone();
        y.coeffs_mut()[0] = Complex64::new(0.0, 0.0);
        let mut py = apply_fcm(&p, &y).unwrap();
        py.coeffs_mut()[0] = Complex64::new(0.0, 0.0);
        let back = apply_fcm(&g, &py).unwrap();
        assert!(cmax_abs(&back.coeffs()[1..], &y.coeffs()[1..]) < 1e-9);
    }
}

#[test]
fn policies_agree_on_half_wave_symmetric_base() {
    // no even harmonics in the base: the DC row only couples to even columns
    let model = transformer_like();
    let i = PeriodicSignal::from_fn(2000, 0.02, |t| 1.4 * (100.0 * PI * t).cos() + 0.2 * (300.0 * PI * t).sin()).unwrap();
    let b = validate_base(&i).unwrap();
    let opts = |policy| LinearizeOptions { order: 11, inversion_order: None, policy };
    let ex = analytic_fcm(&model, &b, &opts(DcPolicy::Excluded)).unwrap().fcm.pair;
    let ff = analytic_fcm(&model, &b, &opts(DcPolicy::FreeFlux)).unwrap().fcm.pair;
    let scale = cmat_max(&ex.y1);
    for n in (1..=11).step_by(2) {
        for m in (1..=11).step_by(2) {
            assert!((ex.y1[(n, m)] - ff.y1[(n, m)]).norm() < 1e-9 * scale);
            assert!((ex.y2[(n, m)] - ff.y2[(n, m)]).norm() < 1e-9 * scale);
        }
    }
    for n in 0..=11 {
        assert_eq!(ex.y1[(n, 0)].norm() + ff.y1[(n, 0)].norm(), 0.0);
    }
}

#[test]
fn validate_base_cases() {
    let b = validate_base(&cosine(500, 1.0, 1.0)).unwrap();
    assert_eq!((b.minima(), b.maxima()), (1, 1));
    assert!(b.wipe_samples.is_empty());
    let mix = PeriodicSignal::from_fn(4000, 0.04, |t| 1.2 * (2.0 * PI * 50.0 * t).sin() + 0.5 * (2.0 * PI * 25.0 * t).sin()).unwrap();
    let b = validate_base(&mix).unwrap();
    assert_eq!((b.minima(), b.maxima()), (2, 2));
    assert!(!b.wipe_samples.is_empty());
    let flat = PeriodicSignal::new(vec![0.2; 10], 1.0).unwrap();
    assert!(matches!(validate_base(&flat), Err(Error::Invalid(_))));
    let tied = PeriodicSignal::from_fn(500, 1.0, |t| (4.0 * PI * t).cos()).unwrap();
    assert!(matches!(validate_base(&tied), Err(Error::InvalidBase { condition: 'd', .. })));
    // an internal maximum widened to a two-sample plateau
    let mut x = minor_loop_base(500, 1.0).into_samples();
    let e = validate_base(&minor_loop_base(500, 1.0)).unwrap();
    let inner = e.extrema.iter().find(|x| x.is_max && x.index != e.global_max).unwrap().index;
    x[inner + 1] = x[inner];
    let clipped = PeriodicSignal::new(x, 1.0).unwrap();
    assert!(matches!(validate_base(&clipped), Err(Error::InvalidBase { condition: 'b', .. })));
}

fn drive(rms: f64, samples: usize) -> HarmonicVector {
    let omega = 100.0 * PI;
    let v = PeriodicSignal::from_fn(samples, 0.02, |t| rms * 2f64.sqrt() * (omega * t).cos()).unwrap();
    hps_forward(&v, 11).unwrap()
}

#[test]
fn newton_base_solve() {
    let opts = NewtonOptions { samples: 2000, max_iter: 30, tol: 1e-10, policy: DcPolicy::Excluded };
    let lin = SyntheticModel::linear_inductor(0.5, 10.0);
    let s = solve_base_from_voltage(&lin, &drive(100.0, 2000), opts).unwrap();
    assert!(s.iterations <= 1);
    let model = transformer_like();
    let v = drive(230.0, 2000);
    let s = solve_base_from_voltage(&model, &v, NewtonOptions { tol: 1e-8, ..opts }).unwrap();
    assert!(s.iterations <= 10, "{} iterations: {:?}", s.iterations, s.history);
    // the solved current reproduces the flux of the drive
    let lam = hps_forward(&simulate(&model, &s.base.current).unwrap(), 11).unwrap();
    let d = DifferentialOperator::new(11, v.omega()).unwrap();
    for n in 1..=11 {
        assert!((lam.get(n) * d.d(n) - v.get(n)).norm() < 1e-8 * n as f64 * v.omega());
    }
    assert!(solve_base_from_voltage(&model, &drive(5000.0, 2000), opts).is_err());
}

#[test]
fn sensitivity_is_exact_for_sampled_operator() {
    let model = curved_model();
    let base = minor_loop_base(600, 0.9);
    let b = validate_base(&base).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = hps_inverse(&random_harmonics(&mut rng, 7, base.omega()), 600).unwrap();
    let an = directional_derivative(&model, &b, &w).unwrap();
    let psi = 1e-6;
    let shift = |s: f64| simulate(&model, &base.with_samples(base.samples().iter().zip(w.samples()).map(|(x, y)| x + s * y).collect()).unwrap()).unwrap();
    let (up, down) = (shift(psi), shift(-psi));
    let fd: Vec<f64> = up.samples().iter().zip(down.samples()).map(|(a, b)| (a - b) / (2.0 * psi)).collect();
    let scale = an.samples().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(max_abs(&fd, an.samples()) < 1e-6 * scale);
}
