//! Road-quality tile pipeline.
//!
//! `roadscope` turns crowd-sourced road vectors and geo-referenced RGB scenes
//! into labelled tile datasets, trains a small depthwise-separable CNN on
//! them, and runs the occlusion, cross-domain and class-activation-map
//! diagnostics used to judge how much a road classifier leans on the road
//! itself versus its surroundings.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`geo`]: coordinates, the local equirectangular frame, geotransforms.
//! - [`osm_ingest`]: GeoJSON road parsing and tag aggregation into [`RoadClass`].
//! - [`raster_store`]: the scene container and tile extraction.
//! - [`sampler`]: tile centers along road polylines.
//! - [`dataset_builder`]: cloud filtering, balancing, splits and manifests.
//! - [`maskgen`]: Bresenham rasterization, dilation and occlusion masks.
//! - [`nn`]: tensors, layers, Adam, training, model files, external embeddings.
//! - [`diagnostics`]: metrics, evaluation, experiment runners and CAMs.
//! - [`synth`]: synthetic scenes with a known class-signal location.
//! - [`cli`]: the `roadscope` command-line front-end.
//!
//! Runnable walkthroughs of each capability live in `examples/`.

pub mod cli;
pub mod dataset_builder;
pub mod diagnostics;
pub mod error;
pub mod geo;
pub mod imageio;
pub mod maskgen;
pub mod nn;
pub mod osm_ingest;
pub mod pipeline;
pub mod raster_store;
pub mod rng;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};
pub use geo::{GeoPoint, GeoTransform, LocalFrame, MeterPoint, PixelCoord, Polyline};
pub use osm_ingest::{RoadClass, RoadRecord};
