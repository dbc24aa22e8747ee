//! Gaussian blur kernel construction.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ensure_arg;
use crate::error::Result;

pub const DEFAULT_KERNEL_SIZE: usize = 21;

/// Square blur kernel, nonnegative, normalized to sum 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    weights: Array2<f64>,
}

impl BlurKernel {
    pub fn size(&self) -> usize {
        self.weights.dim().0
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    fn from_unnormalized(mut weights: Array2<f64>) -> Self {
        let sum: f64 = weights.sum();
        weights.mapv_inplace(|v| v / sum);
        Self { weights }
    }
}

/// How a kernel is parameterized; serialized into corpus manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// Identity kernel (single center tap).
    Delta,
    Isotropic {
        sigma: f64,
    },
    Anisotropic {
        lambda1: f64,
        lambda2: f64,
        theta: f64,
    },
}

impl KernelSpec {
    pub fn build(&self, size: usize) -> Result<BlurKernel> {
        match *self {
            KernelSpec::Delta => make_delta_kernel(size),
            KernelSpec::Isotropic { sigma } => make_isotropic_kernel(sigma, size),
            KernelSpec::Anisotropic {
                lambda1,
                lambda2,
                theta,
            } => make_anisotropic_kernel(lambda1, lambda2, theta, size),
        }
    }

    /// Compact label used in export rows and eval reports.
    pub fn label(&self) -> String {
        match *self {
            KernelSpec::Delta => "delta".to_string(),
            KernelSpec::Isotropic { sigma } => format!("iso{sigma:.4}"),
            KernelSpec::Anisotropic {
                lambda1,
                lambda2,
                theta,
            } => format!("aniso{lambda1:.3}_{lambda2:.3}_{theta:.3}"),
        }
    }
}

pub fn make_delta_kernel(size: usize) -> Result<BlurKernel> {
    ensure_arg!(size % 2 == 1, "kernel size must be odd, got {size}");
    let mut weights = Array2::zeros((size, size));
    weights[[size / 2, size / 2]] = 1.0;
    Ok(BlurKernel { weights })
}

/// Gaussian pdf evaluated on the integer grid centered at the kernel
/// center, normalized to sum 1.
pub fn make_isotropic_kernel(sigma: f64, size: usize) -> Result<BlurKernel> {
    ensure_arg!(sigma > 0.0, "sigma must be positive, got {sigma}");
    ensure_arg!(size % 2 == 1, "kernel size must be odd, got {size}");
    let center = (size / 2) as f64;
    let weights = Array2::from_shape_fn((size, size), |(i, j)| {
        let dy = i as f64 - center;
        let dx = j as f64 - center;
        (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
    });
    Ok(BlurKernel::from_unnormalized(weights))
}

/// Anisotropic Gaussian with covariance R(theta) diag(l1, l2) R(theta)^T.
pub fn make_anisotropic_kernel(
    lambda1: f64,
    lambda2: f64,
    theta: f64,
    size: usize,
) -> Result<BlurKernel> {
    ensure_arg!(
        lambda1 > 0.0 && lambda2 > 0.0,
        "eigenvalues must be positive, got {lambda1}, {lambda2}"
    );
    ensure_arg!(size % 2 == 1, "kernel size must be odd, got {size}");
    let (c, s) = (theta.cos(), theta.sin());
    // Sigma = R diag(l1,l2) R^T
    let sxx = c * c * lambda1 + s * s * lambda2;
    let syy = s * s * lambda1 + c * c * lambda2;
    let sxy = c * s * (lambda1 - lambda2);
    let det = sxx * syy - sxy * sxy;
    ensure_arg!(det > 0.0, "covariance is singular");
    // Inverse of the 2x2 covariance.
    let ixx = syy / det;
    let iyy = sxx / det;
    let ixy = -sxy / det;
    let center = (size / 2) as f64;
    let weights = Array2::from_shape_fn((size, size), |(i, j)| {
        let dy = i as f64 - center;
        let dx = j as f64 - center;
        let q = ixx * dx * dx + 2.0 * ixy * dx * dy + iyy * dy * dy;
        (-0.5 * q).exp()
    });
    Ok(BlurKernel::from_unnormalized(weights))
}
