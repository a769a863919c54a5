//! Planar-graph reconstruction from raster images.
//!
//! The pipeline detects building-style corners in four direction-aware
//! heatmap channels, pairs them into candidate edges, boosts the candidate
//! features with self-attention, and classifies edges with deformable
//! cross-attention into coarse image features. Everything runs on a small
//! reverse-mode tape ([`tensor`]) so the whole model trains on CPU.
//!
//! Supporting machinery: planar-graph geometry and face extraction
//! ([`geometry`]), direction heatmap encoding/decoding ([`heatmap`]),
//! synthetic scene generation ([`synth`]), and corner/edge/region
//! precision-recall scoring ([`metrics`]).

pub mod geometry;
pub mod heatmap;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
