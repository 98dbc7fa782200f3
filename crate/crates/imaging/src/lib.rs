//! Image-side tooling for UHD weather restoration: procedural rain and snow
//! synthesis, guidance priors, and full-reference quality metrics.

mod buffer;
pub mod dataset;
mod error;
pub mod filters;
pub mod metrics;
pub mod priors;
pub mod rng;
pub mod scenes;
pub mod synth;

pub use buffer::{ImageBuffer, LUMA_601};
pub use error::{ImagingError, Result};
pub use synth::{composite, gen_mask, SynthSpec, WeatherKind, RAIN_ANGLES};
pub use priors::{canny, load_normal_map, normal_from_heightfield, CannyParams, PriorPair};
pub use dataset::{build_dataset, DatasetManifest, ManifestEntry, Split};
pub use metrics::{psnr, ssim, MetricReport};
