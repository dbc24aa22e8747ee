//! Blur kernel generation and LR image synthesis.

mod kernel;
mod pipeline;
mod sampler;

pub use kernel::{
    make_anisotropic_kernel, make_delta_kernel, make_isotropic_kernel, BlurKernel, KernelSpec,
    DEFAULT_KERNEL_SIZE,
};
pub use pipeline::{
    add_gaussian_noise, convolve_reflect, degrade_classic, degrade_realworld, jpeg_roundtrip,
    subsample, DegradationSpec, Stage,
};
pub use sampler::{
    gaussian8_suite, gaussian8_suite_with_range, iso_sigma_range, sample_degradation,
    sample_degradation_with, DegradationMode, SamplerConfig,
};

/// Applies the spec through whichever pipeline it describes.
pub fn degrade(
    hr: &crate::image::ImageTensor,
    spec: &DegradationSpec,
) -> crate::error::Result<crate::image::ImageTensor> {
    if spec.op_order.is_empty() {
        degrade_classic(hr, spec)
    } else {
        degrade_realworld(hr, spec)
    }
}
