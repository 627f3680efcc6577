//! Windowed series datasets: synthetic generation, CSV ingestion,
//! windowing and normalization.

mod dataset;
mod io;
mod synth;

pub use dataset::{normalize, windowize, NormStats, SeriesDataset};
pub use io::{load_csv, load_factors, write_csv, write_factors, Schema};
pub use synth::{synth_generate, DomainShift, SynthSpec, Waveform};
