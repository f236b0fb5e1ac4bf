use thiserror::Error;

/// Problems reading one of the text weight/matrix formats.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("unexpected end of input")]
    UnexpectedEof,
    #[error("expected `{expected}`, found `{found}`")]
    Unexpected { expected: String, found: String },
    #[error("not a number: `{0}`")]
    BadNumber(String),
    #[error("inconsistent shapes: {0}")]
    Shape(String),
    #[error("unsupported format version `{0}`")]
    Version(String),
}

/// Crate-level error used by the harness and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
    #[error(transparent)]
    SceneGraph(#[from] crate::scene_graph::SgError),
    #[error(transparent)]
    EdgePoints(#[from] crate::edge_points::EdgeError),
    #[error(transparent)]
    Offload(#[from] crate::offload::OffloadError),
    #[error(transparent)]
    Twin(#[from] crate::twin::TwinError),
    #[error(transparent)]
    Plan(#[from] crate::planner::PlanError),
    #[error(transparent)]
    Config(#[from] crate::harness::ConfigError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
