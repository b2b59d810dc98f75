//! Quad-pixel defocus simulation and disparity estimation.
//!
//! The crate covers the whole pipeline: thin-lens blur sizes ([`optics`]),
//! directional half-disk kernels ([`psf`]), layered rendering of the five
//! sub-aperture views ([`render`]), four-direction correlation pyramids and
//! lookup ([`matcher`]), the iterative estimator ([`solver`]), evaluation
//! ([`metrics`]) and the on-disk dataset format ([`io`]).

pub mod error;
pub mod grid;
pub mod io;
pub mod matcher;
pub mod metrics;
pub mod optics;
pub mod pipeline;
pub mod psf;
pub mod render;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{CocMap, DepthMap, DisparityMap, Image, MaskedPlane, View};
pub use matcher::{Direction, LocalCorrelationFeature};
pub use metrics::{evaluate, IrlsConfig, MetricReport};
pub use optics::CameraParams;
pub use pipeline::RunConfig;
pub use psf::{make_kernel, KernelFamily, KernelRegistry, PsfKernel};
pub use render::{render_qp, DepthLayering, FrameMeta, QpFrameSet};
pub use solver::{estimate, Estimate, SolverConfig};
