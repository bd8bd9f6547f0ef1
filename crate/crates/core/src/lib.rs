//! Multi-query vehicle re-identification.
//!
//! The crate covers the full inference path of a viewpoint-aware
//! multi-query re-identification system at desk scale:
//!
//! - [`vcc`]: a two-branch network whose appearance branch is conditioned on
//!   a learned viewpoint feature at every layer,
//! - [`cvfr`]: encoder/decoder/predictor networks that recover the
//!   appearance feature of a missing viewpoint,
//! - [`inference`]: single, average and viewpoint-weighted multi-query
//!   ranking,
//! - [`metrics`]: CMC, mAP, mINP, a CGM variant and cross-scene precision,
//! - [`synth`]: a seeded generator of identities observed across many
//!   cameras, standing in for real surveillance data,
//! - [`experiment`]: the comparative experiments built from the above.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cvfr;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod vcc;
pub mod viewpoint;

pub use error::{Error, ErrorKind, Result};
pub use viewpoint::Viewpoint;
