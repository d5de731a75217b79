//! Periodogram band powers and differential-entropy features.

use ndarray::{Array2, ArrayView1};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::dataio::{Epoch, FeatureSample};
use crate::montage::{in_passband, Band, N_BANDS, N_CHANNELS};
use crate::Scalar;

/// Floor applied to band variances before the logarithm.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("band {band} upper edge {hi_hz} Hz exceeds the Nyquist frequency {nyquist_hz} Hz")]
    BandOutOfRange { band: Band, hi_hz: f64, nyquist_hz: f64 },
    #[error("window of {0} samples is too short for spectral estimation")]
    WindowTooShort(usize),
    #[error("variance must be positive and finite, got {0}")]
    NonPositiveVariance(f64),
    #[error("epoch has {0} channels, expected {N_CHANNELS}")]
    ChannelCount(usize),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// One-sided power spectrum of a mean-removed window: `(frequency_hz, power)`
/// pairs whose powers sum to the window's variance.
fn power_spectrum<T: Scalar>(x: ArrayView1<'_, T>, sample_rate_hz: f64) -> Result<Vec<(f64, T)>> {
    let n = x.len();
    if n < 2 {
        return Err(FeatureError::WindowTooShort(n));
    }
    let mean = x.sum() / T::from_usize_lossy(n);
    let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v - mean, T::zero())).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let n2 = T::from_usize_lossy(n * n);
    let two = T::lit(2.0);
    Ok((0..=n / 2)
        .map(|k| {
            let weight = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { T::one() } else { two };
            let freq = k as f64 * sample_rate_hz / n as f64;
            (freq, weight * buf[k].norm_sqr() / n2)
        })
        .collect())
}

fn check_band(band: Band, sample_rate_hz: f64) -> Result<()> {
    let (_, hi) = band.limits();
    let nyquist = sample_rate_hz / 2.0;
    if hi > nyquist {
        return Err(FeatureError::BandOutOfRange {
            band,
            hi_hz: hi,
            nyquist_hz: nyquist,
        });
    }
    Ok(())
}

fn sum_band<T: Scalar>(spectrum: &[(f64, T)], band: Band) -> T {
    let raw = spectrum
        .iter()
        .filter(|(f, _)| band.contains(*f))
        .fold(T::zero(), |acc, (_, p)| acc + *p);
    raw.max(T::lit(VARIANCE_FLOOR))
}

/// Variance of one channel restricted to `band`, from the periodogram of the
/// mean-removed window (rectangular window, no smoothing).
pub fn band_power<T: Scalar>(channel: ArrayView1<'_, T>, sample_rate_hz: f64, band: Band) -> Result<T> {
    check_band(band, sample_rate_hz)?;
    Ok(sum_band(&power_spectrum(channel, sample_rate_hz)?, band))
}

/// Differential entropy of a Gaussian with variance `variance`, in nats.
pub fn differential_entropy<T: Scalar>(variance: T) -> Result<T> {
    if !(variance > T::zero() && variance.is_finite()) {
        return Err(FeatureError::NonPositiveVariance(variance.as_f64()));
    }
    let two_pi_e = T::lit(2.0) * T::PI() * T::E();
    Ok(T::lit(0.5) * (two_pi_e * variance).ln())
}

/// 14×5 DE matrix for one epoch.
pub fn extract_features<T: Scalar>(epoch: &Epoch<T>, sample_rate_hz: f64) -> Result<FeatureSample<T>> {
    if epoch.window.nrows() != N_CHANNELS {
        return Err(FeatureError::ChannelCount(epoch.window.nrows()));
    }
    for band in Band::ALL {
        check_band(band, sample_rate_hz)?;
    }
    let mut features = Array2::zeros((N_CHANNELS, N_BANDS));
    for (c, row) in epoch.window.outer_iter().enumerate() {
        let spectrum = power_spectrum(row, sample_rate_hz)?;
        for band in Band::ALL {
            features[[c, band.index()]] = differential_entropy(sum_band(&spectrum, band))?;
        }
    }
    Ok(FeatureSample {
        subject_id: epoch.subject_id.clone(),
        label: epoch.label,
        features,
    })
}

/// The channel with every spectral component outside 0.5–50 Hz removed
/// (mean included).
pub fn band_limit<T: Scalar>(channel: ArrayView1<'_, T>, sample_rate_hz: f64) -> Vec<T> {
    let n = channel.len();
    let mut buf: Vec<Complex<T>> = channel.iter().map(|&v| Complex::new(v, T::zero())).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        if !in_passband(bin as f64 * sample_rate_hz / n as f64) {
            *c = Complex::new(T::zero(), T::zero());
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = T::from_usize_lossy(n);
    buf.into_iter().map(|c| c.re / scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Emotion;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const RATE: f64 = 128.0;

    fn sine(freq: f64, amp: f64, n: usize) -> Array1<f64> {
        Array1::from_shape_fn(n, |t| amp * (2.0 * std::f64::consts::PI * freq * t as f64 / RATE).sin())
    }

    /// Time-domain variance of the signal rebuilt from the DFT bins in `keep`,
    /// by a direct O(N²) transform.
    fn isolated_variance(x: &[f64], keep: impl Fn(f64) -> bool) -> f64 {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let xc: Vec<f64> = x.iter().map(|v| v - mean).collect();
        let tau = 2.0 * std::f64::consts::PI / n as f64;
        let spec: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                xc.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, v)| {
                    let a = tau * (k * t) as f64;
                    (re + v * a.cos(), im - v * a.sin())
                })
            })
            .collect();
        let rebuilt: Vec<f64> = (0..n)
            .map(|t| {
                (0..n)
                    .filter(|&k| keep(k.min(n - k) as f64 * RATE / n as f64))
                    .map(|k| {
                        let a = tau * (k * t) as f64;
                        spec[k].0 * a.cos() - spec[k].1 * a.sin()
                    })
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
        rebuilt.iter().map(|v| v * v).sum::<f64>() / n as f64
    }

    #[test]
    fn sinusoid_lands_in_alpha() {
        let x = sine(10.0, 2.0, 128);
        for band in Band::ALL {
            let p = band_power(x.view(), RATE, band).unwrap();
            if band == Band::Alpha {
                assert!((p - 2.0).abs() < 1e-9, "{p}");
                let oracle = isolated_variance(x.as_slice().unwrap(), |f| band.contains(f));
                assert!((p - oracle).abs() < 1e-9);
            } else {
                assert!(p <= 1e-12 * (1.0 + 1e-9), "{band}: {p}");
            }
        }
    }

    #[test]
    fn constant_signal_hits_floor() {
        let x = Array1::from_elem(128, 3.5f64);
        for band in Band::ALL {
            assert_eq!(band_power(x.view(), RATE, band).unwrap(), VARIANCE_FLOOR);
        }
    }

    #[test]
    fn white_noise_parseval() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..128).map(|_| rng.sample(StandardNormal)).collect();
            let total: f64 = Band::ALL
                .iter()
                .map(|b| band_power(ArrayView1::from(&x), RATE, *b).unwrap())
                .sum();
            let oracle = isolated_variance(&x, in_passband);
            assert!((total - oracle).abs() <= 0.05 * oracle, "seed {seed}: {total} vs {oracle}");
        }
    }

    #[test]
    fn band_above_nyquist_is_rejected() {
        let x = sine(10.0, 1.0, 64);
        assert!(matches!(
            band_power(x.view(), 90.0, Band::Gamma),
            Err(FeatureError::BandOutOfRange { .. })
        ));
        assert!(band_power(x.view(), 90.0, Band::Beta).is_ok());
    }

    #[test]
    fn de_closed_form_values() {
        let at_unit_arg = 1.0 / (2.0 * std::f64::consts::PI * std::f64::consts::E);
        assert_eq!(differential_entropy(at_unit_arg).unwrap(), 0.0);
        assert!((differential_entropy(1.0f64).unwrap() - 1.418_938_533_204_672_7).abs() < 1e-12);
        for s2 in [1e-6, 0.3, 1.0, 17.0] {
            let d = differential_entropy(4.0 * s2).unwrap() - differential_entropy(s2).unwrap();
            assert!((d - std::f64::consts::LN_2).abs() < 1e-12);
        }
        assert!(matches!(differential_entropy(0.0f64), Err(FeatureError::NonPositiveVariance(_))));
        assert!(differential_entropy(-1.0f64).is_err());
        assert!(differential_entropy(f64::NAN).is_err());
    }

    fn noise_epoch(seed: u64, amp: f64) -> Epoch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Epoch {
            subject_id: "s1".into(),
            label: Emotion::Rage,
            offset: 0,
            window: Array2::from_shape_fn((N_CHANNELS, 128), |_| amp * rng.sample::<f64, _>(StandardNormal)),
        }
    }

    #[test]
    fn amplitude_doubling_adds_ln2() {
        let e = noise_epoch(3, 1.0);
        let mut e2 = e.clone();
        e2.window *= 2.0;
        let a = extract_features(&e, RATE).unwrap();
        let b = extract_features(&e2, RATE).unwrap();
        assert_eq!(a.label, Emotion::Rage);
        assert_eq!(a.subject_id, "s1");
        for (x, y) in a.features.iter().zip(b.features.iter()) {
            assert!((y - x - std::f64::consts::LN_2).abs() < 1e-9);
        }
    }

    #[test]
    fn channel_permutation_equivariance() {
        let e = noise_epoch(5, 1.0);
        let perm: Vec<usize> = (0..N_CHANNELS).rev().collect();
        let mut p = e.clone();
        for (dst, &src) in perm.iter().enumerate() {
            p.window.row_mut(dst).assign(&e.window.row(src));
        }
        let a = extract_features(&e, RATE).unwrap();
        let b = extract_features(&p, RATE).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(a.features.row(src), b.features.row(dst));
        }
    }

    #[test]
    fn white_noise_features_per_band_density() {
        // unit white noise spreads variance evenly over the 64 positive bins, so
        // the band DE is ½ln(2πe · width/64) with width the bin count in band
        let widths = [3.0, 4.0, 5.0, 19.0, 19.0]; // bins 1..=3, 4..=7, 8..=12, 13..=31, 32..=50
        let mut mean = Array2::<f64>::zeros((N_CHANNELS, N_BANDS));
        let trials = 100;
        for seed in 0..trials {
            let f = extract_features(&noise_epoch(seed, 1.0), RATE).unwrap();
            assert!(f.features.iter().all(|v| v.is_finite()));
            mean += &f.features;
        }
        mean /= trials as f64;
        for c in 0..N_CHANNELS {
            for (b, w) in widths.iter().enumerate() {
                let expected = differential_entropy(w / 64.0).unwrap();
                // log of a chi-square mean: biased low by ~1/dof (≈0.09 nats for delta)
                assert!((mean[[c, b]] - expected).abs() < 0.2, "{c},{b}: {} vs {expected}", mean[[c, b]]);
            }
        }
    }

    #[test]
    fn band_limit_removes_out_of_band() {
        let x = &sine(10.0, 1.0, 128) + &sine(60.0, 1.0, 128) + 5.0;
        let y = band_limit(x.view(), RATE);
        let expected = sine(10.0, 1.0, 128);
        for (a, b) in y.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
