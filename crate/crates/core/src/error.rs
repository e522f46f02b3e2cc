use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel exceeds image support: {kernel_height}x{kernel_width} kernel on {height}x{width} image")]
    KernelExceedsSupport {
        kernel_height: usize,
        kernel_width: usize,
        height: usize,
        width: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("degenerate frequency: {0}")]
    DegenerateFrequency(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("regularizer failed at HQS iteration {iteration}: {source}")]
    Regularizer {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("{0}")]
    WeightFile(String),

    #[error("tensor file: {0}")]
    TensorFile(String),

    #[error("prior spec: {0}")]
    PriorSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
