use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] dog_core::CoreError),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {reason}")]
    Stage { stage: String, reason: String },

    #[error("output directory {0} is locked by another run (delete the .lock file if stale)")]
    Locked(std::path::PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("TOML parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn stage(stage: &str, reason: impl Into<String>) -> Self {
        LabError::Stage {
            stage: stage.to_string(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 for config problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Toml(_) => 2,
            _ => 1,
        }
    }
}
