//! Light-field super-resolution over 3D EPI volumes.
//!
//! A light field is decomposed into horizontal or vertical EPI volumes, each
//! volume is up-sampled by a cheap preliminary stage (bicubic spatial
//! resampling, or view synthesis between neighbouring views) and refined by a
//! 3D-convolutional residual network with channel, spatial and angular
//! attention, and the refined volumes are merged back into a light field.

pub mod error;
pub mod evrn;
pub mod lf;
pub mod lf_io;
pub mod metrics;
pub mod model_io;
pub mod nvs;
pub mod pipeline;
pub mod resample;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use lf::{AngularAxis, ColorSpace, EpiVolume, Image, LightField4D, Orientation, ViewIndex};
pub use evrn::{EvrnConfig, EvrnWeights};
pub use metrics::{MetricReport, Protocol};
pub use nvs::{NvsConfig, NvsWeights};
pub use pipeline::{super_resolve, vsr, SrMode, SrModels, SrTask};
pub use tensor::Tensor;
