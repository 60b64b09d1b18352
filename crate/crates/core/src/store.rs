//! File persistence: atomic writes and schema-versioned JSON.
//!
//! Every structured file carries a top-level `schema_version`. Readers reject
//! anything else before attempting to decode the body, so an old or newer file
//! produces a version error instead of a confusing field error.

use std::fs;
use std::io::Write;
use std::path::Path as FsPath;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &FsPath, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Refuses to replace an existing file unless `force` is set.
pub fn check_overwrite(path: &FsPath, force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::invalid(format!(
            "{} already exists (use --force to overwrite)",
            path.display()
        )));
    }
    Ok(())
}

pub fn to_versioned_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::invalid(e.to_string()))?;
    match &mut v {
        Value::Object(map) => {
            map.insert("schema_version".into(), SCHEMA_VERSION.into());
        }
        _ => return Err(Error::invalid("only objects can carry a schema version")),
    }
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn save_json<T: Serialize>(path: &FsPath, value: &T) -> Result<()> {
    write_atomic(path, to_versioned_json(value)?.as_bytes())
}

/// Checks and strips `schema_version`. A missing field counts as version 0.
pub(crate) fn check_version(path: &FsPath, map: &mut serde_json::Map<String, Value>) -> Result<()> {
    let found = match map.remove("schema_version") {
        None => 0,
        Some(v) => v
            .as_u64()
            .and_then(|x| u32::try_from(x).ok())
            .ok_or_else(|| Error::malformed(path, "schema_version is not an integer"))?,
    };
    if found != SCHEMA_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            expected: SCHEMA_VERSION,
            found,
        });
    }
    Ok(())
}

pub fn from_versioned_value<T: DeserializeOwned>(path: &FsPath, value: Value) -> Result<T> {
    let Value::Object(mut map) = value else {
        return Err(Error::malformed(path, "top level is not an object"));
    };
    check_version(path, &mut map)?;
    serde_json::from_value(Value::Object(map)).map_err(|e| Error::malformed(path, e))
}

pub fn read_to_string(path: &FsPath) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &FsPath) -> Result<T> {
    let text = read_to_string(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))?;
    from_versioned_value(path, value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Thing {
        x: f64,
        name: String,
    }

    #[test]
    fn versioned_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/thing.json");
        let t = Thing { x: 0.1 + 0.2, name: "q".into() };
        save_json(&p, &t).unwrap();
        assert_eq!(load_json::<Thing>(&p).unwrap(), t);
        assert!(!dir.path().join("a/b/thing.json.tmp").exists());
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.json");
        assert!(matches!(load_json::<Thing>(&missing), Err(Error::Io { .. })));

        let garbage = dir.path().join("garbage.json");
        fs::write(&garbage, "{not json").unwrap();
        assert!(matches!(load_json::<Thing>(&garbage), Err(Error::Malformed { .. })));

        let bumped = dir.path().join("bumped.json");
        fs::write(&bumped, r#"{"schema_version": 2, "x": 1.0, "name": "q"}"#).unwrap();
        assert!(matches!(
            load_json::<Thing>(&bumped),
            Err(Error::Version { found: 2, .. })
        ));

        let unversioned = dir.path().join("unversioned.json");
        fs::write(&unversioned, r#"{"x": 1.0, "name": "q"}"#).unwrap();
        assert!(matches!(
            load_json::<Thing>(&unversioned),
            Err(Error::Version { found: 0, .. })
        ));
    }

    #[test]
    fn overwrite_guard() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        check_overwrite(&p, false).unwrap();
        fs::write(&p, "1").unwrap();
        assert!(check_overwrite(&p, false).is_err());
        check_overwrite(&p, true).unwrap();
    }
}
