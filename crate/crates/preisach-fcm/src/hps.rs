//! Harmonic phasor series (one-sided Fourier series) and frequency coupling
//! matrix algebra.
//!
//! A periodic real signal is written `s(t) = Re Σₙ Sₙ e^{jnωt}`, n = 0..N,
//! so `Sₙ = (2 − δ[n])/T ∫ s(t) e^{−jnωt} dt`. A linearised device maps a
//! harmonic perturbation ΔV to ΔI = Y⁽¹⁾ΔV + Y⁽²⁾conj(ΔV).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

const J: Complex64 = Complex64::new(0.0, 1.0);

/// One period of a uniformly sampled real waveform. Sample `k` sits at `t = k·T/len`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicSignal {
    samples: Vec<f64>,
    period: f64,
}

impl PeriodicSignal {
    pub fn new(samples: Vec<f64>, period: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("periodic signal needs at least one sample".into()));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::Invalid(format!("period must be positive, got {period}")));
        }
        Ok(PeriodicSignal { samples, period })
    }

    /// Sample `f(t)` at `n` uniform points of one period.
    pub fn from_fn(n: usize, period: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let dt = period / n as f64;
        Self::new((0..n).map(|k| f(k as f64 * dt)).collect(), period)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn sample_interval(&self) -> f64 {
        self.period / self.samples.len() as f64
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI / self.period
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.sample_interval()
    }

    /// Same time base, new sample values.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != self.samples.len() {
            return Err(Error::Dimension {
                expected: self.samples.len(),
                got: samples.len(),
            });
        }
        Ok(PeriodicSignal {
            samples,
            period: self.period,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        PeriodicSignal {
            samples: self.samples.iter().map(|&x| f(x)).collect(),
            period: self.period,
        }
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn mean_square(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }
}

/// HPS coefficients S₀..S_N of a real periodic signal.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicVector {
    coeffs: Vec<Complex64>,
    omega: f64,
}

impl HarmonicVector {
    /// The DC entry is forced real.
    pub fn new(mut coeffs: Vec<Complex64>, omega: f64) -> Self {
        if let Some(c) = coeffs.first_mut() {
            c.im = 0.0;
        }
        HarmonicVector { coeffs, omega }
    }

    /// Keeps the coefficients untouched, including any imaginary DC part.
    pub fn raw(coeffs: Vec<Complex64>, omega: f64) -> Self {
        HarmonicVector { coeffs, omega }
    }

    pub fn zeros(order: usize, omega: f64) -> Self {
        HarmonicVector {
            coeffs: vec![Complex64::new(0.0, 0.0); order + 1],
            omega,
        }
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn get(&self, n: usize) -> Complex64 {
        self.coeffs.get(n).copied().unwrap_or_default()
    }

    /// Zero-padded or truncated copy with the given order.
    pub fn resized(&self, order: usize) -> Self {
        HarmonicVector {
            coeffs: (0..=order).map(|n| self.get(n)).collect(),
            omega: self.omega,
        }
    }

    /// V₀² + ½Σ|Vₙ|², the mean square of the synthesised signal.
    pub fn mean_square(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(n, c)| if n == 0 { c.re * c.re } else { 0.5 * c.norm_sqr() })
            .sum()
    }
}

/// Linearised device: ΔOut = y1·ΔIn + y2·conj(ΔIn), plus the operating point it was built about.
#[derive(Clone, Debug)]
pub struct CouplingMatrixPair {
    pub y1: DMatrix<Complex64>,
    pub y2: DMatrix<Complex64>,
    pub base_input: Option<HarmonicVector>,
    pub base_output: Option<HarmonicVector>,
}

impl CouplingMatrixPair {
    pub fn new(y1: DMatrix<Complex64>, y2: DMatrix<Complex64>) -> Result<Self> {
        if !y1.is_square() || y1.shape() != y2.shape() {
            return Err(Error::Invalid(format!(
                "coupling matrices must be square and equal-sized, got {:?} and {:?}",
                y1.shape(),
                y2.shape()
            )));
        }
        Ok(CouplingMatrixPair {
            y1,
            y2,
            base_input: None,
            base_output: None,
        })
    }

    pub fn zeros(order: usize) -> Self {
        let z = DMatrix::zeros(order + 1, order + 1);
        CouplingMatrixPair {
            y1: z.clone(),
            y2: z,
            base_input: None,
            base_output: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.y1.nrows()
    }

    pub fn order(&self) -> usize {
        self.dim() - 1
    }

    /// Action on raw coefficient slices (no DC realness enforced).
    pub fn act(&self, dv: &[Complex64]) -> Result<Vec<Complex64>> {
        if dv.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: dv.len(),
            });
        }
        let x = DVector::from_column_slice(dv);
        let out = &self.y1 * &x + &self.y2 * x.map(|c| c.conj());
        Ok(out.iter().copied().collect())
    }

    pub fn max_abs_diff(&self, other: &CouplingMatrixPair) -> f64 {
        let d1 = (&self.y1 - &other.y1).iter().map(|c| c.norm()).fold(0.0, f64::max);
        let d2 = (&self.y2 - &other.y2).iter().map(|c| c.norm()).fold(0.0, f64::max);
        d1.max(d2)
    }
}

pub(crate) fn nyquist_check(order: usize, samples: usize) -> Result<()> {
    let required = 2 * (order + 1);
    if samples < required {
        return Err(Error::Nyquist {
            order,
            samples,
            required,
        });
    }
    Ok(())
}

/// Highest order the Nyquist guard admits for `samples` per period.
pub fn max_order(samples: usize) -> usize {
    (samples / 2).saturating_sub(1)
}

/// Documented default sample count for a given truncation order.
pub fn default_sample_count(order: usize) -> usize {
    (20 * order).max(2 * (order + 1))
}

fn twiddles(m: usize) -> Vec<Complex64> {
    (0..m)
        .map(|r| Complex64::from_polar(1.0, -2.0 * PI * r as f64 / m as f64))
        .collect()
}

/// HPS coefficients by the trapezoidal rule on the periodic grid.
pub fn hps_forward(signal: &PeriodicSignal, order: usize) -> Result<HarmonicVector> {
    let m = signal.len();
    nyquist_check(order, m)?;
    let tw = twiddles(m);
    let s = signal.samples();
    let coeffs = (0..=order)
        .map(|n| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &x) in s.iter().enumerate() {
                acc += tw[(k * n) % m] * x;
            }
            let w = if n == 0 { 1.0 } else { 2.0 };
            acc * (w / m as f64)
        })
        .collect();
    Ok(HarmonicVector::new(coeffs, signal.omega()))
}

pub fn hps_inverse(coeffs: &HarmonicVector, sample_count: usize) -> Result<PeriodicSignal> {
    nyquist_check(coeffs.order(), sample_count)?;
    if !(coeffs.omega() > 0.0) {
        return Err(Error::Invalid("fundamental frequency must be positive".into()));
    }
    let tw = twiddles(sample_count);
    let samples = (0..sample_count)
        .map(|k| {
            coeffs
                .coeffs()
                .iter()
                .enumerate()
                .map(|(n, c)| {
                    if n == 0 {
                        c.re
                    } else {
                        // e^{+jθ} = conj(e^{−jθ})
                        (c * tw[(k * n) % sample_count].conj()).re
                    }
                })
                .sum()
        })
        .collect();
    PeriodicSignal::new(samples, 2.0 * PI / coeffs.omega())
}

pub fn apply_fcm(pair: &CouplingMatrixPair, dv: &HarmonicVector) -> Result<HarmonicVector> {
    Ok(HarmonicVector::raw(pair.act(dv.coeffs())?, dv.omega()))
}

/// Two-sided coefficient c_k of the slope waveform (c₀ = Y₀, c_k = Y_k/2, c₋ₖ = conj(Y_k)/2).
fn two_sided(yv: &HarmonicVector, k: isize) -> Complex64 {
    let n = k.unsigned_abs();
    if n >= yv.len() {
        return Complex64::new(0.0, 0.0);
    }
    let c = yv.coeffs()[n];
    if k == 0 {
        Complex64::new(c.re, 0.0)
    } else if k > 0 {
        c * 0.5
    } else {
        c.conj() * 0.5
    }
}

/// Toeplitz (Y⁽¹⁾) and Hankel (Y⁽²⁾) coupling matrices of a time-varying slope
/// with HPS coefficients `yv`, truncated at `order`. Slope harmonics up to
/// 2·order are used when supplied; missing ones are taken as zero.
pub fn toeplitz_fcm(yv: &HarmonicVector, order: usize) -> CouplingMatrixPair {
    let d = order + 1;
    let y1 = DMatrix::from_fn(d, d, |n, m| {
        let w = if n == 0 { 0.5 } else { 1.0 };
        two_sided(yv, n as isize - m as isize) * w
    });
    let y2 = DMatrix::from_fn(d, d, |n, m| {
        let w = if n == 0 { 0.5 } else { 1.0 };
        two_sided(yv, (n + m) as isize) * w
    });
    CouplingMatrixPair {
        y1,
        y2,
        base_input: None,
        base_output: None,
    }
}

/// Direct term-by-term convolution of slope and perturbation harmonics.
pub fn hps_convolve(yv: &HarmonicVector, dv: &HarmonicVector) -> Result<HarmonicVector> {
    if yv.len() != dv.len() {
        return Err(Error::Dimension {
            expected: yv.len(),
            got: dv.len(),
        });
    }
    let big_n = dv.order();
    let y = yv.coeffs();
    let v = dv.coeffs();
    let out = (0..=big_n)
        .map(|n| {
            let mut first = Complex64::new(0.0, 0.0);
            for m in 0..=n {
                first += v[n - m] * y[m];
            }
            let mut second = Complex64::new(0.0, 0.0);
            for m in 0..=big_n {
                if n + m <= big_n {
                    second += v[n + m] * y[m].conj() + v[m].conj() * y[n + m];
                }
            }
            let denom = if n == 0 { 4.0 } else { 2.0 };
            first * 0.5 + second / denom
        })
        .collect();
    Ok(HarmonicVector::raw(out, dv.omega()))
}

/// Linearise a memoryless `y = f(v, t)` about `v_base` given its analytic slope.
pub fn memoryless_linearize(
    slope_fn: impl Fn(f64, f64) -> f64,
    v_base: &PeriodicSignal,
    order: usize,
) -> Result<CouplingMatrixPair> {
    nyquist_check(order, v_base.len())?;
    let slope: Vec<f64> = v_base
        .samples()
        .iter()
        .enumerate()
        .map(|(k, &v)| slope_fn(v, v_base.time(k)))
        .collect();
    let slope = v_base.with_samples(slope)?;
    let yv = hps_forward(&slope, (2 * order).min(max_order(v_base.len())))?;
    let mut pair = toeplitz_fcm(&yv, order);
    pair.base_input = Some(hps_forward(v_base, order)?);
    Ok(pair)
}

/// Real block form acting on stacked `[ΔVᴿ; ΔVᴵ]`.
pub fn split_real_imag(pair: &CouplingMatrixPair) -> DMatrix<f64> {
    let d = pair.dim();
    let sum = &pair.y1 + &pair.y2;
    let diff = &pair.y1 - &pair.y2;
    let mut k = DMatrix::zeros(2 * d, 2 * d);
    for n in 0..d {
        for m in 0..d {
            k[(n, m)] = sum[(n, m)].re;
            k[(n, d + m)] = -diff[(n, m)].im;
            k[(d + n, m)] = sum[(n, m)].im;
            k[(d + n, d + m)] = diff[(n, m)].re;
        }
    }
    k
}

/// Re-pack a real block matrix into a complex pair.
pub fn pack_real_imag(k: &DMatrix<f64>) -> Result<CouplingMatrixPair> {
    if !k.is_square() || !k.nrows().is_multiple_of(2) {
        return Err(Error::Invalid(format!("block matrix must be square of even size, got {:?}", k.shape())));
    }
    let d = k.nrows() / 2;
    let y1 = DMatrix::from_fn(d, d, |n, m| {
        let (a, b, c, dd) = (k[(n, m)], k[(n, d + m)], k[(d + n, m)], k[(d + n, d + m)]);
        Complex64::new(0.5 * (a + dd), 0.5 * (c - b))
    });
    let y2 = DMatrix::from_fn(d, d, |n, m| {
        let (a, b, c, dd) = (k[(n, m)], k[(n, d + m)], k[(d + n, m)], k[(d + n, d + m)]);
        Complex64::new(0.5 * (a - dd), 0.5 * (c + b))
    });
    CouplingMatrixPair::new(y1, y2)
}

/// 2-norm condition number from the singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

const SINGULAR_RCOND: f64 = 1e-13;

/// Invert a square real matrix, rejecting numerically singular input.
pub(crate) fn invert_real(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let cond = condition_number(a);
    if !cond.is_finite() || cond > 1.0 / SINGULAR_RCOND {
        return Err(Error::Singular {
            condition: cond,
            context: context.to_string(),
        });
    }
    a.clone().try_inverse().ok_or_else(|| Error::Singular {
        condition: cond,
        context: context.to_string(),
    })
}

/// Inverse pair (F⁽¹⁾, F⁽²⁾) through the real block form.
///
/// Pairs that map real-DC inputs to real-DC outputs have an identically zero
/// DC-imaginary row and column; that degree of freedom is dropped before
/// inversion and kept zero in the result.
pub fn invert_fcm(pair: &CouplingMatrixPair) -> Result<CouplingMatrixPair> {
    let k = split_real_imag(pair);
    let d = pair.dim();
    let scale = k.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let tol = 1e-14 * scale.max(f64::MIN_POSITIVE);
    let dc_im = d;
    let row_zero = (0..2 * d).all(|j| k[(dc_im, j)].abs() <= tol);
    let col_zero = (0..2 * d).all(|i| k[(i, dc_im)].abs() <= tol);
    let inv = if row_zero && col_zero {
        let keep: Vec<usize> = (0..2 * d).filter(|&i| i != dc_im).collect();
        let r = DMatrix::from_fn(keep.len(), keep.len(), |a, b| k[(keep[a], keep[b])]);
        let ri = invert_real(&r, "coupling matrix inversion")?;
        let mut full = DMatrix::zeros(2 * d, 2 * d);
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                full[(i, j)] = ri[(a, b)];
            }
        }
        full
    } else {
        invert_real(&k, "coupling matrix inversion")?
    };
    pack_real_imag(&inv)
}

/// The flux-to-voltage operator D = diag(0, jω, 2jω, …) and its pseudo-inverse.
#[derive(Clone, Debug)]
pub struct DifferentialOperator {
    pub omega: f64,
    pub order: usize,
}

impl DifferentialOperator {
    pub fn new(order: usize, omega: f64) -> Result<Self> {
        if !(omega > 0.0) {
            return Err(Error::Invalid(format!("omega must be positive, got {omega}")));
        }
        Ok(DifferentialOperator { omega, order })
    }

    pub fn d(&self, n: usize) -> Complex64 {
        J * (n as f64 * self.omega)
    }

    /// `None` marks the unbounded DC entry.
    pub fn d_inv(&self, n: usize) -> Option<Complex64> {
        if n == 0 {
            None
        } else {
            Some(Complex64::new(0.0, -1.0 / (n as f64 * self.omega)))
        }
    }

    pub fn dc_unbounded(&self) -> bool {
        true
    }

    pub fn d_matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.order + 1, self.order + 1, |n, m| {
            if n == m {
                self.d(n)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    /// D⁻¹ with the unbounded DC entry replaced by zero; check [`Self::dc_unbounded`].
    pub fn d_inv_matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.order + 1, self.order + 1, |n, m| {
            if n == m {
                self.d_inv(n).unwrap_or_default()
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }
}

/// D operator for `order` and `omega`, convenience wrapper.
pub fn differential_operator(order: usize, omega: f64) -> Result<DifferentialOperator> {
    DifferentialOperator::new(order, omega)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn constant_and_cosine() {
        let s = PeriodicSignal::from_fn(64, 0.02, |_| 2.5).unwrap();
        let h = hps_forward(&s, 5).unwrap();
        assert!((h.get(0).re - 2.5).abs() < 1e-14);
        assert!(h.coeffs()[1..].iter().all(|c| c.norm() < 1e-14));

        let w = 2.0 * PI / 0.02;
        let s = PeriodicSignal::from_fn(64, 0.02, |t| 3.0 * (w * t + PI / 4.0).cos()).unwrap();
        let h = hps_forward(&s, 5).unwrap();
        assert!((h.get(1) - Complex64::from_polar(3.0, PI / 4.0)).norm() < 1e-13);
        for n in [0, 2, 3, 4, 5] {
            assert!(h.get(n).norm() < 1e-13);
        }
    }

    #[test]
    fn nyquist_guard_rejects() {
        let s = PeriodicSignal::from_fn(10, 1.0, |t| t).unwrap();
        assert!(matches!(hps_forward(&s, 5), Err(Error::Nyquist { .. })));
        assert!(hps_forward(&s, 4).is_ok());
        let h = HarmonicVector::zeros(5, 1.0);
        assert!(hps_inverse(&h, 11).is_err());
    }

    #[test]
    fn inverse_examples() {
        let h = HarmonicVector::new(vec![c(2.5, 0.0), c(0.0, 0.0)], 1.0);
        let s = hps_inverse(&h, 8).unwrap();
        assert!(s.samples().iter().all(|&x| (x - 2.5).abs() < 1e-15));
        let h = HarmonicVector::new(vec![c(0.0, 0.0), c(1.0, 0.0)], 2.0 * PI);
        let s = hps_inverse(&h, 100).unwrap();
        for (k, &x) in s.samples().iter().enumerate() {
            assert!((x - (2.0 * PI * k as f64 / 100.0).cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn apply_examples() {
        let d = 3;
        let id = DMatrix::<Complex64>::identity(d, d);
        let z = DMatrix::<Complex64>::zeros(d, d);
        let dv = HarmonicVector::raw(vec![c(1.0, 0.0), c(0.2, -0.3), c(-1.0, 2.0)], 1.0);
        let p = CouplingMatrixPair::new(id.clone(), z.clone()).unwrap();
        assert_eq!(apply_fcm(&p, &dv).unwrap().coeffs(), dv.coeffs());
        let p = CouplingMatrixPair::new(z, id).unwrap();
        let dv = HarmonicVector::raw(vec![c(0.0, 0.0), c(0.0, 1.0), c(0.0, 0.0)], 1.0);
        let out = apply_fcm(&p, &dv).unwrap();
        assert_eq!(out.get(1), c(0.0, -1.0));
        let bad = HarmonicVector::zeros(5, 1.0);
        assert!(matches!(apply_fcm(&p, &bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn toeplitz_layout() {
        let y2v = c(0.7, -0.4);
        let yv = HarmonicVector::new(vec![c(0.0, 0.0), c(0.0, 0.0), y2v], 1.0);
        let p = toeplitz_fcm(&yv, 3);
        assert_eq!(p.y1[(3, 1)], y2v / 2.0);
        assert_eq!(p.y2[(1, 1)], y2v / 2.0);
        // halved first row, doubled diagonal
        let yv = HarmonicVector::new(vec![c(1.3, 0.0), c(0.4, 0.1)], 1.0);
        let p = toeplitz_fcm(&yv, 2);
        assert_eq!(p.y1[(0, 0)], c(0.65, 0.0));
        assert_eq!(p.y1[(1, 1)], c(1.3, 0.0));
        assert_eq!(p.y1[(0, 1)], c(0.4, -0.1) / 4.0);
        assert_eq!(p.y1[(1, 0)], c(0.4, 0.1) / 2.0);
        assert_eq!(p.y2[(0, 1)], c(0.4, 0.1) / 4.0);
    }

    #[test]
    fn resistor_slope() {
        let g = 0.37;
        let yv = HarmonicVector::new(vec![c(g, 0.0), c(0.0, 0.0), c(0.0, 0.0)], 1.0);
        let p = toeplitz_fcm(&yv, 2);
        let dv = HarmonicVector::new(vec![c(0.5, 0.0), c(1.0, -2.0), c(0.0, 3.0)], 1.0);
        let di = apply_fcm(&p, &dv).unwrap();
        for n in 0..3 {
            assert!((di.get(n) - dv.get(n) * g).norm() < 1e-15);
        }
    }

    #[test]
    fn convolve_examples() {
        let out = hps_convolve(
            &HarmonicVector::new(vec![c(2.0, 0.0)], 1.0),
            &HarmonicVector::new(vec![c(3.0, 0.0)], 1.0),
        )
        .unwrap();
        assert_eq!(out.get(0), c(6.0, 0.0));

        let y1 = c(0.3, 0.8);
        let v1 = c(-1.1, 0.5);
        let zero = c(0.0, 0.0);
        let out = hps_convolve(
            &HarmonicVector::new(vec![zero, y1, zero], 1.0),
            &HarmonicVector::new(vec![zero, v1, zero], 1.0),
        )
        .unwrap();
        assert!((out.get(0) - (v1 * y1.conj()).re * 0.5).norm() < 1e-15);
        assert!((out.get(2) - v1 * y1 * 0.5).norm() < 1e-15);
    }

    #[test]
    fn differential_operator_examples() {
        let d = differential_operator(2, 100.0 * PI).unwrap();
        assert_eq!(d.d(0), c(0.0, 0.0));
        assert!((d.d(1) - c(0.0, 100.0 * PI)).norm() < 1e-12);
        assert!((d.d(2) - c(0.0, 200.0 * PI)).norm() < 1e-12);
        assert!(d.d_inv(0).is_none());
        for n in 1..=2 {
            assert!((d.d(n) * d.d_inv(n).unwrap() - 1.0).norm() < 1e-15);
        }
        let flux = d.d_inv(1).unwrap() * c(1.0, 0.0);
        assert!((flux - c(1.0, 0.0) / c(0.0, 100.0 * PI)).norm() < 1e-18);
    }

    #[test]
    fn split_examples() {
        let x = 2.5;
        let d = 2;
        let y1 = DMatrix::from_element(d, d, c(0.0, 0.0)) + DMatrix::identity(d, d) * c(0.0, x);
        let p = CouplingMatrixPair::new(y1, DMatrix::zeros(d, d)).unwrap();
        let k = split_real_imag(&p);
        for n in 0..d {
            assert_eq!(k[(n, n)], 0.0);
            assert_eq!(k[(n, d + n)], -x);
            assert_eq!(k[(d + n, n)], x);
            assert_eq!(k[(d + n, d + n)], 0.0);
        }
        let p = CouplingMatrixPair::new(DMatrix::identity(d, d), DMatrix::zeros(d, d)).unwrap();
        assert_eq!(split_real_imag(&p), DMatrix::identity(2 * d, 2 * d));
        let back = pack_real_imag(&split_real_imag(&p)).unwrap();
        assert_eq!(back.max_abs_diff(&p), 0.0);
    }

    #[test]
    fn invert_diagonal_cases() {
        let diag = [c(2.0, 1.0), c(0.5, -3.0), c(-1.0, 0.25)];
        let y1 = DMatrix::from_fn(3, 3, |n, m| if n == m { diag[n] } else { c(0.0, 0.0) });
        let p = CouplingMatrixPair::new(y1, DMatrix::zeros(3, 3)).unwrap();
        let f = invert_fcm(&p).unwrap();
        for n in 0..3 {
            assert!((f.y1[(n, n)] - diag[n].inv()).norm() < 1e-14);
        }
        assert!(f.y2.iter().all(|z| z.norm() < 1e-14));

        // Y = d·conj(V) → V = conj(Y / d) = conj(1/d)·conj(Y)
        let y2 = DMatrix::from_fn(3, 3, |n, m| if n == m { diag[n] } else { c(0.0, 0.0) });
        let p = CouplingMatrixPair::new(DMatrix::zeros(3, 3), y2).unwrap();
        let f = invert_fcm(&p).unwrap();
        assert!(f.y1.iter().all(|z| z.norm() < 1e-14));
        for n in 0..3 {
            assert!((f.y2[(n, n)] - diag[n].inv().conj()).norm() < 1e-14);
        }
    }

    #[test]
    fn invert_singular_rejected() {
        let p = CouplingMatrixPair::zeros(2);
        assert!(matches!(invert_fcm(&p), Err(Error::Singular { .. })));
    }

    #[test]
    fn square_wave_series() {
        // Samples at cell midpoints avoid the jump values; error is the O(1/M) aliasing of the jump.
        let m = 20000;
        let s = PeriodicSignal::new(
            (0..m).map(|k| if (k as f64 + 0.5) / (m as f64) < 0.5 { 1.0 } else { -1.0 }).collect(),
            1.0,
        )
        .unwrap();
        let h = hps_forward(&s, 9).unwrap();
        // shift back by the half-sample offset
        for n in 1..=9usize {
            let shift = Complex64::from_polar(1.0, -PI * n as f64 / m as f64);
            let got = h.get(n) * shift;
            let want = if n % 2 == 1 { c(0.0, -4.0 / (n as f64 * PI)) } else { c(0.0, 0.0) };
            assert!((got - want).norm() < 1e-6, "n={n}: {got} vs {want}");
        }
    }
}
