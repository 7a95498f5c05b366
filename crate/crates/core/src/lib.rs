//! Streaming EEG acquisition, Bayesian source reconstruction and
//! motor-imagery decoding.

pub mod bci;
pub mod dsp;
pub mod event;
pub mod ingest;
pub mod inverse;
pub mod netstream;
pub mod pipeline;
pub mod report;
pub mod run;
pub mod simulate;
pub mod wire;

pub use event::{ClassLabel, EventMarker};
pub use inverse::{ForwardModel, InverseState, SourceEstimate, SpectralSolver};
pub use pipeline::{PipelineConfig, PipelineError, ReconstructionPipeline};
pub use wire::{EegPacket, RawFrame, StreamHeader};
