use thiserror::Error;

/// Errors raised by model construction, validation and the experiment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not a proper rotation (orthonormality error {orthonormality:e}, det {det})")]
    InvalidRotation { orthonormality: f64, det: f64 },

    #[error("invalid sub-body parameters: {0}")]
    InvalidSubBody(String),

    #[error("invalid spatial inertia: {0}")]
    InvalidInertia(String),

    #[error("invalid deformable body: {0}")]
    InvalidBody(String),

    #[error("tree topology violation: {0}")]
    Topology(String),

    #[error("joint `{kind}` expects {expected} coordinates, got {got}")]
    JointDimension { kind: &'static str, expected: usize, got: usize },

    #[error("inertia matrix is singular or not positive definite")]
    SingularInertia,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("simulation diverged at t = {time:.4} s: {reason}")]
    Diverged { time: f64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Parses TOML into `T`, reporting failures against the dotted key path.
pub(crate) fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, root: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text)
        .map_err(|e| Error::Config { key: root.into(), message: e.message().to_string() })?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let message = e.inner().message().to_string();
        let mut key = e.path().to_string();
        if let Some(field) = message.strip_prefix("unknown field `").and_then(|m| m.split('`').next()) {
            if !key.ends_with(field) {
                key = if key == "." { field.to_string() } else { format!("{key}.{field}") };
            }
        }
        if key == "." {
            key = root.into();
        }
        Error::Config { key, message }
    })
}
