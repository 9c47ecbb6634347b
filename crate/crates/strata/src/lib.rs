//! HTTP service and command-line front end for mask-ordered editing
//! sessions.

pub mod api;
pub mod error;
pub mod mask_input;
pub mod perf;
pub mod registry;

pub use api::{router, serve};
pub use error::ApiError;
pub use mask_input::{fit_mask, MaskInput};
pub use registry::{AppState, ServiceConfig};
