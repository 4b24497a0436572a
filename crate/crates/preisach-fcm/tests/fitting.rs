mod common;

use std::f64::consts::PI;

use common::*;
use preisach_fcm::fitting::*;
use preisach_fcm::hps::PeriodicSignal;
use preisach_fcm::jet::Jet;
use preisach_fcm::preisach::*;
use preisach_fcm::spline::{uniform_knots, Surface2D};
use proptest::prelude::*;

#[test]
fn twelve_amplitude_round_trip() {
    let model = transformer_like();
    let rms: Vec<f64> = (1..=12).map(|k| 20.0 * k as f64).collect();
    let recs = recordings(&model, &rms, 3);
    let out = fit_model(&recs, &FitConfig::default()).unwrap();
    assert_eq!(out.report.tests.len(), 12);
    for (rec, t) in recs.iter().zip(&out.report.tests) {
        assert!(t.kkt_residual < 1e-9, "KKT residual {:e}", t.kkt_residual);
        let cleaned = clean_waveforms(&rec.voltage, &rec.current, rec.sample_interval, rec.period).unwrap();
        let truth = simulate(&model, &cleaned.current).unwrap();
        let fitted = simulate(&out.model, &cleaned.current).unwrap();
        let amp = truth.samples().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let rms_err = (truth.samples().iter().zip(fitted.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            / truth.len() as f64)
            .sqrt();
        assert!(rms_err < 0.01 * amp, "γ = {}: rms error {rms_err:e} of {amp}", t.gamma_m);
    }
    assert!(out.report.continuity_defect < 1e-9);
    assert!(out.report.min_lambda_s > -1e-6);
}

#[test]
fn m_hat_identities() {
    for a in [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0] {
        assert!(m_hat(0.0, a).abs() < 1e-12);
        assert!((m_hat(1.0, a) - 1.0).abs() < 1e-12);
        assert!(m_hat(Jet::var1(1.0), a).e1.abs() < 1e-12);
    }
    assert_eq!(splitting(-0.3, 20.0), -m_hat(0.3, 20.0));
}

proptest! {
    #[test]
    fn m_hat_is_monotone(a in 0.1..100.0f64, z1 in 0.0..1.0f64, z2 in 0.0..1.0f64) {
        let (lo, hi) = if z1 < z2 { (z1, z2) } else { (z2, z1) };
        prop_assert!(m_hat(hi, a) >= m_hat(lo, a) - 1e-15);
        prop_assert!(m_hat(Jet::var1(lo), a).e1 >= -1e-12);
    }

    #[test]
    fn condition3_of_shape_generated_surface(g in prop::collection::vec(-0.99..0.99f64, 4)) {
        let model = curved_model();
        let mut q = [g[0], g[1], g[2], g[3]];
        q.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let r = condition3_residual(|i, b, a| lambda_s_from_shape(&model, i, b, a), &[q]);
        prop_assert!(r[0].abs() < 1e-12, "residual {:e}", r[0]);
    }
}

#[test]
fn m0_closed_form() {
    let k = 0.7;
    // λ_s = 2k(γ² − i²) = 2kγ²(1 − ζ²)
    let mut p = [[0.0; 4]; 4];
    p[0][2] = 2.0 * k;
    p[2][2] = -2.0 * k;
    let s = Surface2D::from_polynomial(uniform_knots(-1.0, 1.0, 300), uniform_knots(0.0, 2.0, 12), p).unwrap();
    let gammas: Vec<f64> = (1..=200).map(|j| 2.0 * j as f64 / 200.0).collect();
    let m0 = m0_measure(&s, &gammas);
    for (g, v) in gammas.iter().zip(&m0.values) {
        let want = 4.0 * k * g;
        assert!(((v - want) / want).abs() < 1e-9, "γ = {g}: {v} vs {want}");
    }
}

#[test]
fn splitting_selection_on_binding_surface() {
    let s = binding_surface();
    let gammas: Vec<f64> = (1..=200).map(|j| j as f64 / 200.0).collect();
    let zetas = uniform_knots(0.0, 1.0, 200);
    let m = approximate_measures(&s, &zetas, &gammas);
    assert!(m.iter().all(|c| c.values.iter().all(|&v| v >= 0.0)));
    let choice = select_splitting(&m, &[1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0]).unwrap();
    assert_eq!(choice.a, 20.0);
    // a = 10 fails only close to the origin
    let fails: Vec<f64> = zetas
        .iter()
        .zip(&choice.required)
        .filter(|(&z, &r)| m_hat(z, 10.0) < r - 1e-12)
        .map(|(&z, _)| z)
        .collect();
    assert!(!fails.is_empty() && fails.iter().all(|&z| z < 0.05), "{fails:?}");
}

#[test]
fn infeasible_measures_reported() {
    let c = MeasureCurve {
        abscissa: vec![0.0, 0.5, 1.0],
        values: vec![0.0, 1.2, 1.0],
        flagged: vec![],
    };
    let m = [c.clone(), c.clone(), c];
    assert!(matches!(select_splitting(&m, &[20.0]), Err(preisach_fcm::Error::Infeasible { .. })));
}

#[test]
fn clean_exact_integration_and_drift() {
    let n = 2000;
    let (dt, period) = (1e-5, 0.02);
    let w = 2.0 * PI / period;
    let v: Vec<f64> = (0..12 * n).map(|k| (w * k as f64 * dt).cos()).collect();
    let i: Vec<f64> = (0..12 * n).map(|k| (w * k as f64 * dt).sin()).collect();
    let c = clean_waveforms(&v, &i, dt, period).unwrap();
    assert_eq!(c.cycles_averaged, 11);
    let t0 = c.start_index as f64 * dt;
    let want = PeriodicSignal::from_fn(n, period, |t| (w * (t + t0)).sin() / w).unwrap();
    // trapezoidal error of a sinusoid at 2000 samples per period
    assert!(max_abs(c.flux.samples(), want.samples()) < 1e-8 / w * 1e2);
    // a linear flux drift (constant voltage offset) is removed
    let vd: Vec<f64> = v.iter().map(|x| x + 0.05).collect();
    let d = clean_waveforms(&vd, &i, dt, period).unwrap();
    assert_eq!(d.start_index, c.start_index);
    assert!(max_abs(d.flux.samples(), c.flux.samples()) < 1e-8);
    assert!((d.drift.1 - 0.05).abs() < 1e-9);
    assert!(clean_waveforms(&v[..n + n / 2], &i[..n + n / 2], dt, period).is_err());
}

#[test]
fn cycle_averaging_reduces_noise() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let n = 400;
    let (dt, period) = (1.0 / 400.0, 1.0);
    let w = 2.0 * PI;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut ratios = vec![];
    for _ in 0..20 {
        let v: Vec<f64> = (0..12 * n).map(|k| (w * k as f64 * dt).cos()).collect();
        let i: Vec<f64> = (0..12 * n).map(|k| -(w * k as f64 * dt).cos() + noise.sample(&mut rng)).collect();
        let c = clean_waveforms(&v, &i, dt, period).unwrap();
        let t0 = c.start_index as f64 * dt;
        let resid: Vec<f64> = c.current.samples().iter().enumerate().map(|(k, x)| x + (w * (k as f64 * dt + t0)).cos()).collect();
        let rms = (resid.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
        ratios.push(0.01 / rms);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((mean - 11f64.sqrt()).abs() < 0.5, "noise reduction {mean}");
}

#[test]
fn symmetrize_cases() {
    let i = cosine(1000, 1.0, 1.0);
    let s = symmetrize_current(&i).unwrap();
    assert!(s.a.abs() < 1e-12 && (s.b - 1.0).abs() < 1e-12 && s.c.abs() < 1e-12);
    assert!(max_abs(s.current.samples(), i.samples()) < 1e-12);
    // offset and even distortion
    let j = PeriodicSignal::from_fn(1000, 1.0, |t| 0.1 + (2.0 * PI * t).cos() + 0.05 * (4.0 * PI * t).cos()).unwrap();
    let s = symmetrize_current(&j).unwrap();
    assert!(s.fallback.is_none());
    let lo = s.current.samples().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = s.current.samples().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!((lo + hi).abs() < 1e-10);
    assert!(s.current.mean().abs() < 1e-10);
    let dc = PeriodicSignal::new(vec![0.4; 8], 1.0).unwrap();
    assert!(symmetrize_current(&dc).is_err());
}

#[test]
fn split_major_loop_branches() {
    let model = curved_model();
    let i = cosine(800, -0.9, 1.0);
    let lam = simulate(&model, &i).unwrap();
    let d = split_major_loop(0, &i, &lam).unwrap();
    assert!((d.gamma_m - 0.9).abs() < 1e-12);
    assert!(d.rising.windows(2).all(|w| w[1].0 > w[0].0));
    assert!(d.dropping.windows(2).all(|w| w[1].0 < w[0].0));
    assert!(d.closure_residual < 1e-10);
}

#[test]
fn branch_fits_are_c2_and_optimal() {
    let model = curved_model();
    let gammas: Vec<f64> = (1..=12).map(|k| k as f64 / 12.0).collect();
    let br = synthetic_branches(&model, &gammas, 2000, |t| -(2.0 * PI * t).cos()).unwrap();
    let out = fit_from_branches(&br, &FitConfig { zeta_cells: 100, ..Default::default() }).unwrap();
    for t in &out.report.tests {
        assert!(t.kkt_residual < 1e-9);
    }
    assert!(out.rising.continuity_defect(3) < 1e-9);
    assert!(out.dropping.continuity_defect(3) < 1e-9);
    assert!(out.report.measures.iter().all(|m| m.values.iter().all(|&v| v >= 0.0)));
}
