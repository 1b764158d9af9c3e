//! JSON run configs with `--set` and `--seed` overrides.
//!
//! Every config struct rejects unknown keys. Relative paths are resolved
//! against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    sets: Vec<(Vec<String>, Value)>,
    seed: Option<u64>,
}

impl Overrides {
    /// `KEY=VALUE` pairs; dotted keys address nested objects. Values that
    /// parse as JSON are taken as JSON, anything else as a string.
    pub fn parse(sets: &[String], seed: Option<u64>) -> CliResult<Self> {
        let sets = sets
            .iter()
            .map(|s| {
                let (k, v) = s
                    .split_once('=')
                    .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
                if k.is_empty() || k.split('.').any(str::is_empty) {
                    return Err(CliError::Config(format!("bad key in --set {s:?}")));
                }
                let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
                Ok((k.split('.').map(str::to_string).collect(), value))
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(Self { sets, seed })
    }

    fn apply(&self, root: &mut Value) -> CliResult<()> {
        for (path, value) in &self.sets {
            let mut node = &mut *root;
            for key in &path[..path.len() - 1] {
                let obj = node
                    .as_object_mut()
                    .ok_or_else(|| CliError::Config(format!("cannot set {} inside a non-object", path.join("."))))?;
                node = obj.entry(key.clone()).or_insert_with(|| Value::Object(Map::new()));
            }
            node.as_object_mut()
                .ok_or_else(|| CliError::Config(format!("cannot set {} inside a non-object", path.join("."))))?
                .insert(path[path.len() - 1].clone(), value.clone());
        }
        if let Some(seed) = self.seed {
            root.as_object_mut()
                .expect("checked by caller")
                .insert("seed".into(), Value::from(seed));
        }
        Ok(())
    }
}

/// A parsed config and the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub config: T,
    pub base: PathBuf,
}

impl<T> Loaded<T> {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        resolve(&self.base, path)
    }
}

pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

pub fn load<T: DeserializeOwned>(path: &Path, overrides: &Overrides) -> CliResult<Loaded<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut root: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if !root.is_object() {
        return Err(CliError::Config(format!(
            "{}: top level must be an object",
            path.display()
        )));
    }
    overrides.apply(&mut root)?;
    let config = serde_json::from_value(root).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("config types serialize");
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Inner {
        scale: f64,
    }

    #[derive(Debug, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Demo {
        name: String,
        epochs: usize,
        camera: Inner,
        #[serde(default)]
        seed: u64,
    }

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("c.json");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn overrides_replace_nested_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), r#"{"name": "a", "epochs": 1, "camera": {"scale": 0.3}}"#);
        let o = Overrides::parse(
            &["epochs=7".into(), "camera.scale=0.5".into(), "name=run 2".into()],
            Some(9),
        )
        .unwrap();
        let l: Loaded<Demo> = load(&p, &o).unwrap();
        assert_eq!(
            l.config,
            Demo {
                name: "run 2".into(),
                epochs: 7,
                camera: Inner { scale: 0.5 },
                seed: 9
            }
        );
        assert_eq!(l.resolve(Path::new("x.json")), dir.path().join("x.json"));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            r#"{"name": "a", "epochs": 1, "camera": {"scale": 0.3}, "extra": 1}"#,
        );
        let err = load::<Demo>(&p, &Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let p = write(dir.path(), r#"{"name": "a", "epochs": 1, "camera": {"scale": 0.3}}"#);
        let o = Overrides::parse(&["camera.zoom=2".into()], None).unwrap();
        assert!(matches!(load::<Demo>(&p, &o), Err(CliError::Config(_))));
        assert!(Overrides::parse(&["novalue".into()], None).is_err());
    }

    #[test]
    fn missing_config_is_io() {
        let err = load::<Demo>(Path::new("/nonexistent/c.json"), &Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
