//! Flux-linkage spectra, EMF coefficients by frequency-domain
//! differentiation, and total harmonic distortion.
//!
//! Samples are taken at electrical angles `t_j = 2 pi j / N`, `j = 0..N`. With
//! `C_n = (1/N) sum_j Psi_j e^{-i n t_j}` the EMF coefficients are
//! `c_n = i n C_n`, and the real cosine/sine pairs are
//! `A_n = c_n + c_{-n}`, `B_n = i (c_n - c_{-n})`.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

type C = Complex64;

/// Normalized forward transform: `C_n = (1/N) sum_j s_j e^{-i n t_j}`.
pub fn dft(samples: &[f64]) -> Vec<C> {
    let n = samples.len();
    let mut buf: Vec<C> = samples.iter().map(|&s| C::new(s, 0.0)).collect();
    if n == 0 {
        return buf;
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let inv = 1.0 / n as f64;
    buf.iter_mut().for_each(|z| *z *= inv);
    buf
}

/// Inverse of [`dft`]; returns the complex samples.
pub fn idft(coeffs: &[C]) -> Vec<C> {
    let mut buf = coeffs.to_vec();
    if !buf.is_empty() {
        FftPlanner::new()
            .plan_fft_inverse(buf.len())
            .process(&mut buf);
    }
    buf
}

/// EMF cosine and sine coefficients for `n = 0..N/2 - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmfSpectrum {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl EmfSpectrum {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// `|c_n| = sqrt(A_n^2 + B_n^2) / 2`.
    pub fn magnitude(&self, n: usize) -> f64 {
        self.a[n].hypot(self.b[n]) / 2.0
    }

    /// Complex coefficient `c_n = (A_n - i B_n) / 2`.
    pub fn c(&self, n: usize) -> C {
        C::new(self.a[n], -self.b[n]) / 2.0
    }
}

/// Number of resolvable harmonics for `n_samples` samples.
pub fn resolvable(n_samples: usize) -> usize {
    (n_samples / 2).saturating_sub(1)
}

pub fn emf_spectrum(samples: &[f64]) -> Result<EmfSpectrum> {
    if samples.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "need at least 4 samples per period, got {}",
            samples.len()
        )));
    }
    let cn = dft(samples);
    let h = samples.len() / 2;
    let mut a = Vec::with_capacity(h);
    let mut b = Vec::with_capacity(h);
    for (n, z) in cn.iter().take(h).enumerate() {
        let nf = n as f64;
        a.push(-2.0 * nf * z.im);
        b.push(-2.0 * nf * z.re);
    }
    Ok(EmfSpectrum { a, b })
}

/// Checks that `angles` are `start + j * period / N` up to `tol * period`.
pub fn check_uniform_period(angles: &[f64], period: f64, tol: f64) -> Result<()> {
    let n = angles.len();
    if n == 0 {
        return Err(Error::InvalidInput("no sample angles".into()));
    }
    let step = period / n as f64;
    for (j, &a) in angles.iter().enumerate() {
        if (a - angles[0] - j as f64 * step).abs() > tol * period {
            return Err(Error::InvalidInput(format!(
                "sample {j} at {a} breaks uniform spacing {step} over one period"
            )));
        }
    }
    Ok(())
}

/// `sqrt(sum_{n in I, n != 1} (A_n^2 + B_n^2) / (A_1^2 + B_1^2))`.
pub fn thd(spec: &EmfSpectrum, index_set: &[usize]) -> Result<f64> {
    let (num, den) = thd_parts(spec, index_set)?;
    Ok((num / den).sqrt())
}

fn thd_parts(spec: &EmfSpectrum, index_set: &[usize]) -> Result<(f64, f64)> {
    if !index_set.contains(&1) {
        return Err(Error::InvalidInput(
            "index set must contain the fundamental".into(),
        ));
    }
    if let Some(&n) = index_set.iter().find(|&&n| n >= spec.len()) {
        return Err(Error::InvalidInput(format!(
            "harmonic {n} not resolvable with {} coefficients",
            spec.len()
        )));
    }
    let den = spec.a[1] * spec.a[1] + spec.b[1] * spec.b[1];
    if !(den > 0.0) {
        return Err(Error::DegenerateSignal(
            "fundamental EMF amplitude is zero".into(),
        ));
    }
    let num = index_set
        .iter()
        .filter(|&&n| n != 1)
        .map(|&n| spec.a[n] * spec.a[n] + spec.b[n] * spec.b[n])
        .sum();
    Ok((num, den))
}

/// Linear maps from samples to `A` and `B`; rows are harmonics.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeDft {
    pub ma: Vec<Vec<f64>>,
    pub mb: Vec<Vec<f64>>,
}

impl DerivativeDft {
    pub fn apply(&self, s: &[f64]) -> EmfSpectrum {
        let mv = |m: &Vec<Vec<f64>>| -> Vec<f64> {
            m.iter()
                .map(|r| r.iter().zip(s).map(|(a, b)| a * b).sum())
                .collect()
        };
        EmfSpectrum {
            a: mv(&self.ma),
            b: mv(&self.mb),
        }
    }
}

/// Builds `M_a`, `M_b` by transforming identity columns; `n_harmonics` rows.
pub fn build_derivative_dft(n_samples: usize, n_harmonics: usize) -> Result<DerivativeDft> {
    if n_harmonics > n_samples / 2 {
        return Err(Error::InvalidInput(format!(
            "{n_harmonics} harmonics exceed what {n_samples} samples resolve"
        )));
    }
    let mut ma = vec![vec![0.0; n_samples]; n_harmonics];
    let mut mb = vec![vec![0.0; n_samples]; n_harmonics];
    let mut e = vec![0.0; n_samples];
    for j in 0..n_samples {
        e[j] = 1.0;
        let s = emf_spectrum(&e)?;
        for n in 0..n_harmonics {
            ma[n][j] = s.a[n];
            mb[n][j] = s.b[n];
        }
        e[j] = 0.0;
    }
    Ok(DerivativeDft { ma, mb })
}

/// `dJ/dPsi_i` of the THD for every sample, by the quotient rule on
/// `J^2 = num / den` with `A'_k = (M_a)_{k,i}`, `B'_k = (M_b)_{k,i}`.
/// At `J = 0` the non-differentiable square root is given derivative 0.
pub fn thd_sensitivity(
    spec: &EmfSpectrum,
    index_set: &[usize],
    m: &DerivativeDft,
) -> Result<Vec<f64>> {
    let (num, den) = thd_parts(spec, index_set)?;
    let n_samples = m.ma.first().map_or(0, Vec::len);
    if let Some(&k) = index_set.iter().find(|&&k| k >= m.ma.len()) {
        return Err(Error::InvalidInput(format!(
            "harmonic {k} beyond the transform rows"
        )));
    }
    let j = (num / den).sqrt();
    if j == 0.0 {
        return Ok(vec![0.0; n_samples]);
    }
    Ok((0..n_samples)
        .map(|i| {
            let dnum: f64 = index_set
                .iter()
                .filter(|&&k| k != 1)
                .map(|&k| 2.0 * (spec.a[k] * m.ma[k][i] + spec.b[k] * m.mb[k][i]))
                .sum();
            let dden = 2.0 * (spec.a[1] * m.ma[1][i] + spec.b[1] * m.mb[1][i]);
            (dnum * den - num * dden) / (den * den) / (2.0 * j)
        })
        .collect())
}

/// Default index set `1..=N/2 - 1`.
pub fn default_index_set(n_samples: usize) -> Vec<usize> {
    (1..=resolvable(n_samples)).collect()
}
