use addrtrap::TrapError;
use serde::de::DeserializeOwned;
use serde_json::Value;
use std::fmt;
use std::path::Path;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum Failure {
    Parse(String),
    Invalid(String),
    Physics(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Parse(_) => 2,
            Failure::Invalid(_) => 3,
            Failure::Physics(_) => 4,
            Failure::Io(_) => 5,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Parse(m) => write!(f, "parse error: {m}"),
            Failure::Invalid(m) => write!(f, "invalid parameter: {m}"),
            Failure::Physics(m) => write!(f, "{m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<TrapError> for Failure {
    fn from(e: TrapError) -> Self {
        match e {
            TrapError::InvalidParameter(m) => Failure::Invalid(m),
            TrapError::Parse(m) => Failure::Parse(m),
            TrapError::Io(io) => Failure::Io(io.to_string()),
            TrapError::Geometry(_) => Failure::Invalid(e.to_string()),
            TrapError::OutOfDomain { .. }
            | TrapError::SaddleNotMinimum(_)
            | TrapError::InsufficientData(_)
            | TrapError::NoSolution(_)
            | TrapError::Integration(_) => Failure::Physics(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        TrapError::from(e).into()
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        TrapError::from(e).into()
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

pub fn invalid<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Invalid(msg.into()))
}

pub fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))
}

/// Config file: a JSON object with one optional section per command.
#[derive(Debug, Default)]
pub struct ConfigFile {
    root: serde_json::Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        match read_json::<Value>(path)? {
            Value::Object(root) => Ok(ConfigFile { root }),
            _ => Err(Failure::Parse(format!("{}: config must be a JSON object", path.display()))),
        }
    }

    pub fn section<T: DeserializeOwned + Default>(&self, name: &str) -> CliResult<T> {
        match self.root.get(name) {
            None => Ok(T::default()),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Failure::Parse(format!("config section {name:?}: {e}"))),
        }
    }
}

/// Fill the `None` fields of a flag record from a config record.
pub trait Layered: Sized {
    fn layer(self, config: Self) -> Self;
}

#[macro_export]
macro_rules! layered {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::config::Layered for $ty {
            fn layer(self, config: Self) -> Self {
                Self { $($field: self.$field.or(config.$field)),* }
            }
        }
    };
}
