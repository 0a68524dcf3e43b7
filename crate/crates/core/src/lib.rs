//! Sparse-view semantic radiance fields with a self-training loop.
//!
//! A teacher field is fit to a handful of posed views, renders semantics and
//! depth at many novel poses, and those rendered labels are filtered by a
//! bi-directional reprojection check before supervising a student field
//! that also reads a learnable codebook. Ground truth comes from an analytic
//! scene of labeled primitives ([`scene`]).

pub mod bdv;
pub mod error;
pub mod field;
pub mod geometry;
pub mod image;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod training;

pub use error::{Error, Result};

/// Keeps glibc from returning the large per-batch buffers to the OS after
/// every step; without it page faults cost about a third of training time.
pub(crate) fn retain_heap() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
        }
    });
}
