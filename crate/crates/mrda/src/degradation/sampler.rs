//! Random degradation sampling for training and the fixed test suite.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensure_arg;
use crate::error::Result;

use super::kernel::{KernelSpec, DEFAULT_KERNEL_SIZE};
use super::pipeline::{DegradationSpec, Stage};

/// Training degradation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationMode {
    /// Noise-free isotropic Gaussian blur, width uniform in a per-scale range.
    ClassicIso,
    /// Anisotropic Gaussian blur plus additive Gaussian noise.
    ClassicAnisoNoise,
    /// Shuffled blur / downsample / noise / JPEG pipeline.
    Realworld,
}

impl DegradationMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classic_iso" => Ok(DegradationMode::ClassicIso),
            "classic_aniso_noise" => Ok(DegradationMode::ClassicAnisoNoise),
            "realworld" => Ok(DegradationMode::Realworld),
            other => Err(crate::invalid_arg!("unknown degradation mode '{other}'")),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DegradationMode::ClassicIso => "classic_iso",
            DegradationMode::ClassicAnisoNoise => "classic_aniso_noise",
            DegradationMode::Realworld => "realworld",
        }
    }
}

/// Knobs for `sample_degradation`; defaults follow the training protocol
/// (iso width U(0.2,2.0) at x2 / U(0.2,4.0) at x4, anisotropic eigenvalues
/// U(0.2,4), angle U(0,pi), discrete noise levels).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kernel_size: usize,
    /// When set, isotropic widths are drawn from this discrete set instead
    /// of the continuous range (used by desk-scale experiments).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iso_widths: Option<Vec<f64>>,
    pub noise_levels: Vec<f64>,
    pub jpeg_quality_range: (u8, u8),
    pub realworld_blur_range: (f64, f64),
    pub realworld_noise_range: (f64, f64),
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kernel_size: DEFAULT_KERNEL_SIZE,
            iso_widths: None,
            noise_levels: vec![0.0, 10.0, 20.0, 25.0],
            jpeg_quality_range: (30, 95),
            realworld_blur_range: (0.2, 3.0),
            realworld_noise_range: (1.0, 15.0),
        }
    }
}

/// Isotropic width range for a scale factor.
pub fn iso_sigma_range(scale: usize) -> Result<(f64, f64)> {
    match scale {
        2 => Ok((0.2, 2.0)),
        4 => Ok((0.2, 4.0)),
        other => Err(crate::invalid_arg!("unsupported scale {other}")),
    }
}

/// Draws one degradation. All randomness (including the noise realization
/// seed) comes from `rng`, so equal rng states give equal specs.
pub fn sample_degradation(
    mode: DegradationMode,
    scale: usize,
    rng: &mut impl Rng,
) -> Result<DegradationSpec> {
    sample_degradation_with(mode, scale, &SamplerConfig::default(), rng)
}

pub fn sample_degradation_with(
    mode: DegradationMode,
    scale: usize,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<DegradationSpec> {
    ensure_arg!(scale == 2 || scale == 4, "unsupported scale {scale}");
    let spec = match mode {
        DegradationMode::ClassicIso => {
            let sigma = match &cfg.iso_widths {
                Some(widths) if !widths.is_empty() => widths[rng.random_range(0..widths.len())],
                _ => {
                    let (lo, hi) = iso_sigma_range(scale)?;
                    rng.random_range(lo..=hi)
                }
            };
            DegradationSpec {
                kernel: KernelSpec::Isotropic { sigma },
                scale,
                noise_sigma: 0.0,
                jpeg_quality: None,
                op_order: Vec::new(),
                rng_seed: rng.random(),
                kernel_size: cfg.kernel_size,
            }
        }
        DegradationMode::ClassicAnisoNoise => {
            let lambda1 = rng.random_range(0.2..=4.0);
            let lambda2 = rng.random_range(0.2..=4.0);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let noise = cfg.noise_levels[rng.random_range(0..cfg.noise_levels.len())];
            DegradationSpec {
                kernel: KernelSpec::Anisotropic {
                    lambda1,
                    lambda2,
                    theta,
                },
                scale,
                noise_sigma: noise,
                jpeg_quality: None,
                op_order: Vec::new(),
                rng_seed: rng.random(),
                kernel_size: cfg.kernel_size,
            }
        }
        DegradationMode::Realworld => {
            let sigma = rng.random_range(cfg.realworld_blur_range.0..=cfg.realworld_blur_range.1);
            let noise = rng.random_range(cfg.realworld_noise_range.0..=cfg.realworld_noise_range.1);
            let (qlo, qhi) = cfg.jpeg_quality_range;
            let quality = rng.random_range(qlo..=qhi);
            let mut order = vec![Stage::Blur, Stage::Downsample, Stage::Noise, Stage::Jpeg];
            // Fisher-Yates shuffle driven by the task rng.
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            DegradationSpec {
                kernel: KernelSpec::Isotropic { sigma },
                scale,
                noise_sigma: noise,
                jpeg_quality: Some(quality),
                op_order: order,
                rng_seed: rng.random(),
                kernel_size: cfg.kernel_size,
            }
        }
    };
    Ok(spec)
}

/// Fixed 8-kernel isotropic test suite, widths evenly spaced across the
/// configured per-scale range.
pub fn gaussian8_suite(scale: usize) -> Result<Vec<KernelSpec>> {
    let range = match scale {
        2 => (0.8, 1.6),
        4 => (1.8, 3.2),
        other => return Err(crate::invalid_arg!("unsupported scale {other}")),
    };
    Ok(gaussian8_suite_with_range(range.0, range.1))
}

pub fn gaussian8_suite_with_range(lo: f64, hi: f64) -> Vec<KernelSpec> {
    (0..8)
        .map(|i| KernelSpec::Isotropic {
            sigma: lo + (hi - lo) * i as f64 / 7.0,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iso_widths_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..10_000 {
            let spec = sample_degradation(DegradationMode::ClassicIso, 4, &mut rng).unwrap();
            match spec.kernel {
                KernelSpec::Isotropic { sigma } => {
                    min = min.min(sigma);
                    max = max.max(sigma);
                }
                _ => panic!("expected isotropic kernel"),
            }
            assert_eq!(spec.noise_sigma, 0.0);
        }
        assert!(min >= 0.2, "min width {min}");
        assert!(max <= 4.0, "max width {max}");
    }

    #[test]
    fn aniso_angles_in_half_turn() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2_000 {
            let spec =
                sample_degradation(DegradationMode::ClassicAnisoNoise, 2, &mut rng).unwrap();
            match spec.kernel {
                KernelSpec::Anisotropic { theta, .. } => {
                    assert!((0.0..std::f64::consts::PI).contains(&theta));
                }
                _ => panic!("expected anisotropic kernel"),
            }
            assert!([0.0, 10.0, 20.0, 25.0].contains(&spec.noise_sigma));
        }
    }

    #[test]
    fn same_seed_gives_same_spec() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for mode in [
            DegradationMode::ClassicIso,
            DegradationMode::ClassicAnisoNoise,
            DegradationMode::Realworld,
        ] {
            let sa = sample_degradation(mode, 2, &mut a).unwrap();
            let sb = sample_degradation(mode, 2, &mut b).unwrap();
            assert_eq!(sa, sb);
        }
    }

    #[test]
    fn gaussian8_spacing() {
        let suite = gaussian8_suite(4).unwrap();
        assert_eq!(suite.len(), 8);
        let widths: Vec<f64> = suite
            .iter()
            .map(|k| match k {
                KernelSpec::Isotropic { sigma } => *sigma,
                _ => panic!("expected isotropic"),
            })
            .collect();
        assert!((widths[0] - 1.8).abs() < 1e-12);
        assert!((widths[7] - 3.2).abs() < 1e-12);
        let step = widths[1] - widths[0];
        for pair in widths.windows(2) {
            assert!((pair[1] - pair[0] - step).abs() < 1e-12);
            assert!(pair[0] >= 1.8 && pair[1] <= 3.2);
        }
        assert!(gaussian8_suite(3).is_err());
    }

    #[test]
    fn realworld_order_is_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let spec = sample_degradation(DegradationMode::Realworld, 2, &mut rng).unwrap();
            let mut order = spec.op_order.clone();
            order.sort_by_key(|s| format!("{s:?}"));
            let mut all = vec![Stage::Blur, Stage::Downsample, Stage::Jpeg, Stage::Noise];
            all.sort_by_key(|s| format!("{s:?}"));
            assert_eq!(order, all);
            let q = spec.jpeg_quality.unwrap();
            assert!((30..=95).contains(&q));
        }
    }
}
