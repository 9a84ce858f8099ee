//! Artifact writing. Files are written to a temporary sibling and renamed
//! into place, so a reader never sees a partial file.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "output path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Comma-separated table with a mandatory header and LF line endings.
///
/// The first line is a `#` comment carrying the config hash and seed; the
/// header follows it.
#[derive(Debug, Clone)]
pub struct CsvTable {
    text: String,
    columns: usize,
}

impl CsvTable {
    pub fn new(cfg: &RunConfig, header: &[&str]) -> Self {
        let mut text = format!("# config_sha256={} seed={}\n", cfg.hash(), cfg.seed);
        text.push_str(&header.join(","));
        text.push('\n');
        CsvTable { text, columns: header.len() }
    }

    /// Appends one row. Floats use Rust's shortest round-trip formatting.
    pub fn row(&mut self, cells: &[Cell]) {
        assert_eq!(cells.len(), self.columns, "row width does not match the header");
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::F(x) => write!(self.text, "{x}"),
                Cell::U(x) => write!(self.text, "{x}"),
            }
            .expect("writing to a String");
        }
        self.text.push('\n');
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.text.as_bytes()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Cell {
    F(f64),
    U(u64),
}

/// JSON artifact: `body` plus the config hash, seed and canonical config.
pub fn json_artifact<T: Serialize>(cfg: &RunConfig, body: &T) -> Vec<u8> {
    let mut v = serde_json::to_value(body).expect("artifact serializes");
    let meta = serde_json::json!({
        "config_sha256": cfg.hash(),
        "seed": cfg.seed,
        "config": serde_json::to_value(cfg).expect("config serializes"),
    });
    match &mut v {
        Value::Object(m) => {
            if let Value::Object(extra) = meta {
                m.extend(extra);
            }
        }
        _ => v = serde_json::json!({ "result": v, "meta": meta }),
    }
    let mut s = serde_json::to_string_pretty(&v).expect("artifact serializes");
    s.push('\n');
    s.into_bytes()
}

/// Output directory plus the list of files written so far.
#[derive(Debug)]
pub struct Sink {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: PathBuf) -> io::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Sink { dir, written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// Number formatting for file names: `1` → `1`, `0.25` → `0.25`.
pub fn tag(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RunConfig {
        RunConfig::from_json(r#"{"version": 1, "model": "bs", "seed": 5}"#).unwrap()
    }

    #[test]
    fn csv_layout() {
        let mut t = CsvTable::new(&cfg(), &["a", "b"]);
        t.row(&[Cell::F(0.1), Cell::U(3)]);
        let s = String::from_utf8(t.as_bytes().to_vec()).unwrap();
        let lines: Vec<&str> = s.split('\n').collect();
        assert!(lines[0].starts_with("# config_sha256=") && lines[0].ends_with(" seed=5"));
        assert_eq!(&lines[1..], &["a,b", "0.1,3", ""]);
        assert!(!s.contains('\r'));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn json_artifact_embeds_hash() {
        let c = cfg();
        let v: Value = serde_json::from_slice(&json_artifact(&c, &serde_json::json!({"x": 1}))).unwrap();
        assert_eq!(v["config_sha256"], c.hash());
        assert_eq!(v["seed"], 5);
        assert_eq!(v["x"], 1);
        assert_eq!(v["config"]["model"], "bs");
    }
}
