//! Radar cube types and the preprocessing block that turns raw beat-signal
//! samples into the real-valued time/Doppler/azimuth/elevation/range input
//! of the encoder.

mod frontend;
pub mod io;

pub use frontend::{
    preprocess, preprocess_frames, spectrum, ProcessedTensor, RadarCube, RadarDims,
};
