#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use preisach_fcm::bench::{FluxAnchor, PreisachDevice, VoltageDevice};
use preisach_fcm::fitting::{m_hat, TestRecord};
use preisach_fcm::hps::{HarmonicVector, PeriodicSignal};
use preisach_fcm::jet::{Jet, Scalar};
use preisach_fcm::preisach::{CentreLine, PolynomialShape, SyntheticModel};
use preisach_fcm::spline::{uniform_knots, Surface2D};
use rand::Rng;

/// h(β, α) = −k(α − β)² + 2kL(α − β) and c = 0: the closed-form spot-value model.
pub fn quadratic_model(k: f64, l: f64, limit: f64) -> SyntheticModel {
    SyntheticModel {
        shape: PolynomialShape::quadratic(k, l),
        centre: CentreLine::Linear { inductance: 0.0 },
        spread: 0.0,
        current_limit: limit,
    }
}

/// Saturating core with a lens-shaped loop and a loop-span dependent common mode.
pub fn transformer_like() -> SyntheticModel {
    SyntheticModel {
        shape: PolynomialShape {
            weights: vec![vec![0.02]],
            shift: 0.0,
            diag_slope: 0.005,
        },
        centre: CentreLine::Saturating {
            air: 0.02,
            saturation: 1.0,
            knee: 1.0,
        },
        spread: 0.01,
        current_limit: 6.0,
    }
}

/// Polynomial profile on [−1, 1]²; its density changes sign, so some branches are not monotone.
pub fn curved_model() -> SyntheticModel {
    SyntheticModel {
        shape: PolynomialShape {
            weights: vec![vec![0.3, 0.0, 0.2], vec![0.0], vec![0.2]],
            shift: 0.0,
            diag_slope: 0.5,
        },
        centre: CentreLine::Saturating {
            air: 0.05,
            saturation: 1.0,
            knee: 0.4,
        },
        spread: 0.02,
        current_limit: 1.0,
    }
}

pub fn cosine(samples: usize, amplitude: f64, period: f64) -> PeriodicSignal {
    PeriodicSignal::from_fn(samples, period, |t| amplitude * (2.0 * PI * t / period).cos()).unwrap()
}

pub fn random_harmonics<R: Rng>(rng: &mut R, order: usize, omega: f64) -> HarmonicVector {
    HarmonicVector::new(
        (0..=order)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect(),
        omega,
    )
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn cmax_abs(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

const FREQ: f64 = 50.0;
const RATE: f64 = 100e3;

/// Voltage-driven open-circuit recordings of `model`: `cycles` repeated periods per amplitude.
pub fn recordings(model: &SyntheticModel, rms: &[f64], cycles: usize) -> Vec<TestRecord> {
    let n = (RATE / FREQ) as usize;
    let dev = PreisachDevice::new(model.clone(), FluxAnchor::FluxMean);
    rms.iter()
        .map(|&r| {
            let v = PeriodicSignal::from_fn(n, 1.0 / FREQ, |t| r * 2f64.sqrt() * (2.0 * PI * FREQ * t).sin()).unwrap();
            let i = dev.steady_current(&v).unwrap();
            TestRecord {
                voltage: (0..n * cycles).map(|k| v.samples()[k % n]).collect(),
                current: (0..n * cycles).map(|k| i.samples()[k % n]).collect(),
                sample_interval: 1.0 / RATE,
                period: 1.0 / FREQ,
            }
        })
        .collect()
}

/// Transformer-like differential surface λ_s = Aγ²(1 − ζ²)(1 + r(|ζ|)) whose approximate
/// measures require a splitting sharper than a = 10 below ζ = 0.05 but within a = 20.
pub fn binding_surface() -> Surface2D {
    let amp = 0.5;
    let q = |z: Jet| m_hat(z, 20.0) * (z * -9.0).exp() * 0.95;
    // r/(1 + r) = q
    let f = |z: f64, side: f64| {
        let x = Jet::var1(z.abs());
        let qq = q(x);
        let r = qq / (Jet::cst(1.0) - qq);
        let v = (Jet::cst(1.0) - Jet::var1(z) * Jet::var1(z)) * amp;
        let val = v.re * (1.0 + r.re);
        let d = v.e1 * (1.0 + r.re) + v.re * r.e1 * side;
        (val, d)
    };
    let zk = uniform_knots(-1.0, 1.0, 300);
    let gk = uniform_knots(0.0, 1.0, 12);
    let mut coeffs = vec![];
    for &g0 in &gk[..gk.len() - 1] {
        for w in zk.windows(2) {
            let h = w[1] - w[0];
            // one-sided slopes inside the cell so the |ζ| kink sits on the knot
            let side = if w[0] + w[1] > 0.0 { 1.0 } else { -1.0 };
            let (f0, d0) = f(w[0], side);
            let (f1, d1) = f(w[1], side);
            let s = [f0, d0, (3.0 * (f1 - f0) / h - 2.0 * d0 - d1) / h, (d0 + d1 - 2.0 * (f1 - f0) / h) / (h * h)];
            // times γ² = g0² + 2g0·dγ + dγ²
            let mut a = [[0.0; 4]; 4];
            for gg in 0..4 {
                a[gg][0] = s[gg] * g0 * g0;
                a[gg][1] = s[gg] * 2.0 * g0;
                a[gg][2] = s[gg];
            }
            coeffs.push(a);
        }
    }
    Surface2D::new(zk, gk, coeffs).unwrap()
}
