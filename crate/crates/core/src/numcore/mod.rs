//! Dense `f64` tensors, a reverse-mode tape, and the Adam optimizer.

mod adam;
mod gemm;
mod graph;
mod init;
mod params;
mod tensor;

pub use adam::Adam;
pub use gemm::{gemm, Layout};
pub use graph::{Graph, RunningStats, Var};
pub use init::{xavier_bound, xavier_init, xavier_uniform};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

/// Keeps large tensor buffers on the heap between steps.
///
/// Every training step allocates and frees the same multi-megabyte buffers.
/// With glibc's default thresholds each one is a fresh mmap whose pages are
/// faulted in and zeroed by the kernel, which costs more than the arithmetic
/// on small models. Raising the mmap and trim thresholds lets the buffers be
/// reused. No effect on other platforms. Numerical results do not change.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tuning parameters.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}
