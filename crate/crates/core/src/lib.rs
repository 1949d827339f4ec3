//! Spiking seizure detection toolchain.
//!
//! The crate covers the whole path from raw EEG to a deployable integer
//! network:
//!
//! * [`sigproc`] reads EDF recordings, filters, resamples, segments and
//!   synthesizes labelled surrogate EEG.
//! * [`encoding`] turns signals into up/down spike rasters with a
//!   sigma-delta (level-crossing) encoder.
//! * [`lif`] holds the leaky integrate-and-fire neuron in a real-valued and a
//!   bit-shift integer flavour.
//! * [`wavesense`] builds and runs the WaveSense network.
//! * [`train`] trains it with surrogate-gradient BPTT and Adam.
//! * [`hwmap`] lowers a trained network to 8-bit weights under the Xylo
//!   resource model, simulates it bit-exactly and counts synaptic operations.
//! * [`stream`] runs sample-by-sample detection with the alarm state machine
//!   and measures detection latency.
//! * [`dataset`] glues the stages into the trial sets used for training.

// `!(x > 0.0)` style checks reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod encoding;
pub mod hwmap;
pub mod lif;
pub mod matrix;
pub mod sigproc;
pub mod stream;
pub mod train;
pub mod wavesense;

pub use encoding::SpikeRaster;
pub use matrix::Matrix;
pub use sigproc::{Recording, SeizureAnnotation, Trial, TrialLabel};
pub use wavesense::{Network, WaveSenseConfig};
