//! Temporal smoothing, normalization, augmentation and the inter-dancer
//! proximity signal.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::JointSequence;

/// Standard deviations below this are replaced by 1.
pub const STD_FLOOR: f64 = 1e-6;

/// Orthonormal DCT-II / DCT-III pair of a fixed length, computed through a
/// mirrored FFT of length `2N`.
pub struct Dct {
    len: usize,
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl Dct {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(2 * len),
            inverse: planner.plan_fft_inverse(2 * len),
            scratch: vec![Complex::new(0.0, 0.0); 2 * len],
        }
    }

    fn weight(&self, k: usize) -> f64 {
        let n = self.len as f64;
        if k == 0 {
            (1.0 / n).sqrt()
        } else {
            (2.0 / n).sqrt()
        }
    }

    /// Orthonormal DCT-II.
    pub fn forward(&mut self, signal: &[f64]) -> Vec<f64> {
        let n = self.len;
        assert_eq!(signal.len(), n);
        for (i, &x) in signal.iter().enumerate() {
            self.scratch[i] = Complex::new(x, 0.0);
            self.scratch[2 * n - 1 - i] = Complex::new(x, 0.0);
        }
        self.forward.process(&mut self.scratch);
        (0..n)
            .map(|k| {
                let angle = -std::f64::consts::PI * k as f64 / (2 * n) as f64;
                let twiddle = Complex::from_polar(1.0, angle);
                0.5 * (twiddle * self.scratch[k]).re * self.weight(k)
            })
            .collect()
    }

    /// Orthonormal DCT-III, the inverse of [`Dct::forward`].
    pub fn inverse(&mut self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.len;
        assert_eq!(coeffs.len(), n);
        for k in 0..2 * n {
            self.scratch[k] = if k < n {
                let angle = std::f64::consts::PI * k as f64 / (2 * n) as f64;
                Complex::from_polar(coeffs[k] * self.weight(k), angle)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        self.inverse.process(&mut self.scratch);
        self.scratch[..n].iter().map(|c| c.re).collect()
    }
}

/// Number of DCT coefficients retained for `keep_fraction` of `frames`.
pub fn retained_coefficients(frames: usize, keep_fraction: f64) -> usize {
    ((keep_fraction * frames as f64).ceil() as usize).min(frames)
}

/// Zeroes every DCT coefficient with index `>= ceil(keep_fraction * T)` on each
/// scalar channel independently.
pub fn dct_lowpass(seq: &JointSequence, keep_fraction: f64) -> Result<JointSequence> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::arg(format!(
            "keep_fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    let t = seq.frames();
    if t < 2 {
        return Err(Error::arg("dct_lowpass needs at least 2 frames"));
    }
    let keep = retained_coefficients(t, keep_fraction);
    let mut dct = Dct::new(t);
    let mut out = seq.clone();
    for ch in 0..seq.frame_dim() {
        let mut coeffs = dct.forward(&seq.channel(ch));
        coeffs[keep..].iter_mut().for_each(|c| *c = 0.0);
        out.set_channel(ch, &dct.inverse(&coeffs));
    }
    Ok(out)
}

/// Per-channel (`M x D`) mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub joints: usize,
    pub coords: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn new(joints: usize, coords: usize, mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        let w = joints * coords;
        if mean.len() != w || std.len() != w {
            return Err(Error::dim(format!("norm stats need {w} channels")));
        }
        let std = std
            .into_iter()
            .map(|s| if s < STD_FLOOR { 1.0 } else { s })
            .collect();
        Ok(Self {
            joints,
            coords,
            mean,
            std,
        })
    }

    pub fn identity(joints: usize, coords: usize) -> Self {
        Self {
            joints,
            coords,
            mean: vec![0.0; joints * coords],
            std: vec![1.0; joints * coords],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Pools every frame of every sequence; population standard deviation.
pub fn compute_norm_stats(train_seqs: &[&JointSequence]) -> Result<NormStats> {
    let first = train_seqs
        .first()
        .ok_or_else(|| Error::NoData("no sequences for normalization statistics".into()))?;
    if train_seqs.iter().any(|s| !s.same_layout_channels(first)) {
        return Err(Error::dim("sequences have differing joint layouts"));
    }
    let w = first.frame_dim();
    let total: usize = train_seqs.iter().map(|s| s.frames()).sum();
    if total == 0 {
        return Err(Error::NoData("sequences contain no frames".into()));
    }
    let mut mean = vec![0.0; w];
    for s in train_seqs {
        for t in 0..s.frames() {
            for (m, v) in mean.iter_mut().zip(s.frame(t)) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= total as f64);
    let mut var = vec![0.0; w];
    for s in train_seqs {
        for t in 0..s.frames() {
            for ((acc, v), m) in var.iter_mut().zip(s.frame(t)).zip(&mean) {
                *acc += (v - m).powi(2);
            }
        }
    }
    let std = var.iter().map(|v| (v / total as f64).sqrt()).collect();
    NormStats::new(first.joints(), first.coords(), mean, std)
}

impl JointSequence {
    fn same_layout_channels(&self, other: &JointSequence) -> bool {
        self.joints() == other.joints() && self.coords() == other.coords()
    }
}

/// `(x - mean) / std` per channel, or `x * std + mean` when `inverse`.
pub fn normalize(seq: &JointSequence, stats: &NormStats, inverse: bool) -> Result<JointSequence> {
    if seq.joints() != stats.joints || seq.coords() != stats.coords {
        return Err(Error::dim(format!(
            "sequence layout {}x{} does not match statistics {}x{}",
            seq.joints(),
            seq.coords(),
            stats.joints,
            stats.coords
        )));
    }
    let mut out = seq.clone();
    for t in 0..out.frames() {
        for ((v, m), s) in out.frame_mut(t).iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = if inverse { *v * s + m } else { (*v - m) / s };
        }
    }
    Ok(out)
}

/// Elementwise `|a - b|`.
pub fn proximity_signal(a: &JointSequence, b: &JointSequence) -> Result<JointSequence> {
    if !a.same_layout(b) {
        return Err(Error::dim(format!(
            "proximity needs equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).collect();
    JointSequence::new(data, a.frames(), a.joints(), a.coords(), a.fps)
}

/// Adds iid `N(0, sigma^2)` noise to every coordinate.
pub fn gaussian_augment(seq: &JointSequence, sigma: f64, rng: &mut impl Rng) -> Result<JointSequence> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::arg(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut out = seq.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::arg(e.to_string()))?;
    for v in out.data_mut() {
        *v += normal.sample(rng);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_channel(values: &[f64]) -> JointSequence {
        let data = values.iter().flat_map(|&v| [v, 0.0, 0.0]).collect();
        JointSequence::new(data, values.len(), 1, 3, 30.0).unwrap()
    }

    /// Direct evaluation of the orthonormal DCT-II definition.
    fn dct_by_definition(x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        (0..x.len())
            .map(|k| {
                let w = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                w * x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                    .sum::<f64>()
            })
            .collect()
    }

    #[test]
    fn fft_dct_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 3, 7, 16, 64] {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = Dct::new(n).forward(&x);
            for (a, b) in fast.iter().zip(dct_by_definition(&x)) {
                assert!((a - b).abs() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn alternating_signal_lowpass_matches_definition() {
        let x: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let coeffs = dct_by_definition(&x);
        let keep = retained_coefficients(64, 0.25);
        assert_eq!(keep, 16);
        let top = coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max);
        assert_eq!(top, coeffs[63].abs());
        // odd-index coefficients below the cut are small but not zero
        assert!(coeffs[..keep].iter().step_by(2).all(|c| c.abs() < 1e-9));
        assert!(coeffs[..keep].iter().skip(1).step_by(2).all(|c| c.abs() > 0.17));

        let n = x.len() as f64;
        let expected: Vec<f64> = (0..64)
            .map(|i| {
                (0..keep)
                    .map(|k| {
                        let w = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                        w * coeffs[k] * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n).cos()
                    })
                    .sum()
            })
            .collect();
        let out = dct_lowpass(&single_channel(&x), 0.25).unwrap().channel(0);
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
        let peak = out.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!((peak - 0.25).abs() < 1e-9, "{peak}");
        let kept: f64 = out.iter().map(|v| v * v).sum::<f64>() / 64.0;
        assert!(kept < 0.005);
    }

    #[test]
    fn constant_channel_and_identity_keep() {
        let c = single_channel(&[2.5; 10]);
        let out = dct_lowpass(&c, 0.1).unwrap();
        for v in out.channel(0) {
            assert!((v - 2.5).abs() < 1e-9);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = single_channel(&x);
        let out = dct_lowpass(&s, 1.0).unwrap();
        for (a, b) in out.data().iter().zip(s.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dct_lowpass_argument_errors() {
        let s = single_channel(&[1.0, 2.0, 3.0]);
        assert!(matches!(dct_lowpass(&s, 0.0), Err(Error::Argument(_))));
        assert!(matches!(dct_lowpass(&s, 1.5), Err(Error::Argument(_))));
        assert!(dct_lowpass(&single_channel(&[1.0]), 0.5).is_err());
    }

    #[test]
    fn norm_stats_hand_cases() {
        let s = single_channel(&[1.0, 3.0]);
        let stats = compute_norm_stats(&[&s]).unwrap();
        assert_eq!(stats.mean[0], 2.0);
        assert_eq!(stats.std[0], 1.0);
        // the y/z channels are constant zero: floored to 1
        assert_eq!(stats.mean[1], 0.0);
        assert_eq!(stats.std[1], 1.0);
        assert!(matches!(compute_norm_stats(&[]), Err(Error::NoData(_))));
    }

    #[test]
    fn pooled_equals_concatenated() {
        let a = single_channel(&[1.0, 4.0, -2.0]);
        let b = single_channel(&[0.5, 7.0]);
        let joined = single_channel(&[1.0, 4.0, -2.0, 0.5, 7.0]);
        let s1 = compute_norm_stats(&[&a, &b]).unwrap();
        let s2 = compute_norm_stats(&[&joined]).unwrap();
        for i in 0..3 {
            assert!((s1.mean[i] - s2.mean[i]).abs() < 1e-15);
            assert!((s1.std[i] - s2.std[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn floored_constant_channel_normalizes_to_zero() {
        let s = single_channel(&[5.0; 4]);
        let stats = compute_norm_stats(&[&s]).unwrap();
        assert_eq!(stats.std[0], 1.0);
        let n = normalize(&s, &stats, false).unwrap();
        assert!(n.channel(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn self_normalized_has_zero_mean_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..50 * 6).map(|_| rng.random_range(-4.0..9.0)).collect();
        let s = JointSequence::new(data, 50, 2, 3, 30.0).unwrap();
        let stats = compute_norm_stats(&[&s]).unwrap();
        let n = normalize(&s, &stats, false).unwrap();
        for ch in 0..6 {
            let c = n.channel(ch);
            let m = c.iter().sum::<f64>() / 50.0;
            let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-9);
            assert!((v - 1.0).abs() < 1e-6);
        }
        let back = normalize(&n, &stats, true).unwrap();
        for (a, b) in back.data().iter().zip(s.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn proximity_cases() {
        let a = single_channel(&[1.0, -2.0, 3.0]);
        let b = single_channel(&[0.0, -3.0, 2.0]);
        assert!(proximity_signal(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(proximity_signal(&a, &b).unwrap().channel(0).iter().all(|&v| v == 1.0));
        assert_eq!(proximity_signal(&a, &b).unwrap(), proximity_signal(&b, &a).unwrap());
        let short = single_channel(&[1.0]);
        assert!(matches!(proximity_signal(&a, &short), Err(Error::Dimension(_))));
    }

    #[test]
    fn augmentation_contract() {
        let s = JointSequence::zeros(1000, 20, 5, 30.0);
        assert_eq!(gaussian_augment(&s, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap(), s);
        let a = gaussian_augment(&s, 0.01, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = gaussian_augment(&s, 0.01, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let n = a.data().len() as f64;
        assert_eq!(n, 1e5);
        let m = a.data().iter().sum::<f64>() / n;
        let sd = (a.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 0.01).abs() / 0.01 < 0.02, "empirical std {sd}");
        assert!(matches!(
            gaussian_augment(&s, -0.1, &mut ChaCha8Rng::seed_from_u64(1)),
            Err(Error::Argument(_))
        ));
    }
}
