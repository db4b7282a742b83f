//! Pedestrian trajectory forecasting with dynamic guidance maps and
//! social-energy refinement.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`ingest`] parses `frame_id agent_id x y` annotation files into
//!    [`ingest::Scene`]s and cuts fixed-horizon [`ingest::TrajectorySample`]s.
//! 2. [`recwin`] selects record periods from the detection stream and
//!    [`gmap`] rasterizes them into guidance maps and agent-centred crops.
//! 3. [`model`] encodes the observed history and the local map, and decodes
//!    a one-shot preliminary forecast. It is trained with the tape-based
//!    autodiff in [`nn`].
//! 4. [`social`] builds a per-agent energy field from everyone's preliminary
//!    forecast and nudges each point downhill.
//!
//! [`eval`] scores forecasts with ADE/FDE and runs the leave-one-out
//! benchmark, the ablations and the dynamic-map experiment. [`cli`] wires
//! everything to a declarative [`config::RunConfig`].

pub mod cli;
pub mod config;
pub mod eval;
pub mod gmap;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod recwin;
pub mod social;
pub mod synth;

pub use ingest::{HorizonConfig, Scene, TrajPoint, TrajectorySample};
