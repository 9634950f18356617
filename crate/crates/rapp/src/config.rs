use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use prbcast_core::series::{DEFAULT_CAPACITY, DEFAULT_STEP_SECONDS};
use prbcast_core::{Error, Result};

pub const ENV_PORT: &str = "PRBCAST_PORT";
pub const ENV_DATA_DIR: &str = "PRBCAST_DATA_DIR";
pub const ENV_CAPACITY: &str = "PRBCAST_CAPACITY";

/// Resolved service settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    pub bind: IpAddr,
    pub port: u16,
    pub data_dir: PathBuf,
    pub capacity: f64,
    pub step_seconds: i64,
    /// Write a snapshot after this many logged batches.
    pub snapshot_every: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            data_dir: PathBuf::from("prbcast-data"),
            capacity: DEFAULT_CAPACITY,
            step_seconds: DEFAULT_STEP_SECONDS,
            snapshot_every: 64,
        }
    }
}

/// Optional values from one configuration layer.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub bind: Option<IpAddr>,
    pub port: Option<u16>,
    pub data_dir: Option<PathBuf>,
    pub capacity: Option<f64>,
    pub step_seconds: Option<i64>,
    pub snapshot_every: Option<usize>,
}

impl ConfigLayer {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }

    /// Layer read from `PRBCAST_*` variables through `lookup`.
    pub fn from_env(lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        fn parse<T: std::str::FromStr>(name: &str, v: Option<String>) -> Result<Option<T>> {
            v.map(|s| {
                s.trim().parse().map_err(|_| Error::Config {
                    field: name.to_string(),
                    reason: format!("cannot parse `{s}`"),
                })
            })
            .transpose()
        }
        Ok(Self {
            port: parse(ENV_PORT, lookup(ENV_PORT))?,
            data_dir: lookup(ENV_DATA_DIR).map(PathBuf::from),
            capacity: parse(ENV_CAPACITY, lookup(ENV_CAPACITY))?,
            ..Self::default()
        })
    }

    fn apply(&self, cfg: &mut ServiceConfig) {
        if let Some(v) = self.bind {
            cfg.bind = v;
        }
        if let Some(v) = self.port {
            cfg.port = v;
        }
        if let Some(v) = &self.data_dir {
            cfg.data_dir = v.clone();
        }
        if let Some(v) = self.capacity {
            cfg.capacity = v;
        }
        if let Some(v) = self.step_seconds {
            cfg.step_seconds = v;
        }
        if let Some(v) = self.snapshot_every {
            cfg.snapshot_every = v;
        }
    }
}

impl ServiceConfig {
    /// Merge layers with precedence flags > env > file > defaults.
    pub fn resolve(file: Option<&ConfigLayer>, env: &ConfigLayer, flags: &ConfigLayer) -> Result<Self> {
        let mut cfg = Self::default();
        for layer in file.into_iter().chain([env, flags]) {
            layer.apply(&mut cfg);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(Error::Config {
                field: "capacity".into(),
                reason: "must be positive".into(),
            });
        }
        if self.step_seconds <= 0 {
            return Err(Error::Config {
                field: "step_seconds".into(),
                reason: "must be positive".into(),
            });
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config {
                field: "snapshot_every".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flags_env_file_defaults() {
        let file = ConfigLayer {
            port: Some(1000),
            capacity: Some(100.0),
            data_dir: Some("from-file".into()),
            ..ConfigLayer::default()
        };
        let env = ConfigLayer::from_env(|k| match k {
            ENV_PORT => Some("2000".into()),
            ENV_DATA_DIR => Some("from-env".into()),
            _ => None,
        })
        .unwrap();
        let flags = ConfigLayer {
            port: Some(3000),
            ..ConfigLayer::default()
        };
        let cfg = ServiceConfig::resolve(Some(&file), &env, &flags).unwrap();
        assert_eq!(cfg.port, 3000);
        assert_eq!(cfg.data_dir, PathBuf::from("from-env"));
        assert_eq!(cfg.capacity, 100.0);
        assert_eq!(cfg.step_seconds, 900);
    }

    #[test]
    fn bad_env_values_name_the_variable() {
        let err = ConfigLayer::from_env(|k| (k == ENV_CAPACITY).then(|| "lots".into())).unwrap_err();
        assert!(matches!(err, Error::Config { field, .. } if field == ENV_CAPACITY));
    }

    #[test]
    fn file_layer_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("svc.toml");
        std::fs::write(&path, "port = 9\nprot = 3\n").unwrap();
        assert!(ConfigLayer::from_file(&path).is_err());
        std::fs::write(&path, "port = 9\ncapacity = 50.0\n").unwrap();
        assert_eq!(ConfigLayer::from_file(&path).unwrap().port, Some(9));
    }

    #[test]
    fn invalid_capacity_is_rejected() {
        let flags = ConfigLayer {
            capacity: Some(-1.0),
            ..ConfigLayer::default()
        };
        assert!(ServiceConfig::resolve(None, &ConfigLayer::default(), &flags).is_err());
    }
}
