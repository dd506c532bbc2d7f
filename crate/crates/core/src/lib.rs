//! Two-stage multimodal contrastive pre-training at desk scale.
//!
//! Stage 1 trains a small convolutional image encoder with a pixel-level InfoNCE
//! objective: pixels of two augmented views that come from the same source pixel are
//! positives, every other sampled pixel of the batch is a negative. Stage 2 freezes that
//! encoder and distils its per-pixel embeddings into a point-cloud encoder through
//! z-buffered perspective correspondences.
//!
//! A synthetic RGB-D scene generator ([`synthdata`]) provides exact geometry so that
//! every step can be checked against an independent oracle.

pub mod augment;
pub mod config;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod seed;
pub mod synthdata;
pub mod viz;
