//! Network and video processing traces: types, file formats, validation,
//! synthetic generators and dataset splitting.

mod network;
mod split;
mod synth;
mod video;

pub use network::{annotate_shifts, load_network_trace, NetworkSample, NetworkTrace, CSV_HEADER};
pub use split::{split_dataset, DatasetSplit};
pub use synth::{
    gen_synthetic_network_trace, gen_synthetic_video_trace, gen_synthetic_video_trace_with,
    step_trace, NetworkModelParams,
    VideoModelParams,
};
pub use video::{
    load_video_trace_set, Bitrate, EncodingConfig, Resolution, StreamFormat, VideoTraceSet,
    VideoUnitRecord, BITRATE_CANDIDATES_KBPS, FRAME_RATE_CANDIDATES, GOP_LENGTH_CANDIDATES,
    RESOLUTION_CANDIDATES,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    IoBare(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid trace: {0}")]
    Validation(String),
    #[error("misaligned video trace: {0}")]
    Alignment(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
