//! Output files: provenance stamps and atomic writes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const VERSION: &str = concat!("egate-", env!("CARGO_PKG_VERSION"));

/// Provenance attached to every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    /// Absent for files that aggregate several seeds.
    pub seed: Option<u64>,
    pub version: String,
}

impl Meta {
    pub fn new(config_hash: &str, seed: Option<u64>) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            seed,
            version: VERSION.to_string(),
        }
    }

    /// `# config_hash=... seed=... version=...` header line for CSV files.
    pub fn csv_header(&self) -> String {
        let seed = self.seed.map_or_else(|| "all".to_string(), |s| s.to_string());
        format!("# config_hash={} seed={} version={}\n", self.config_hash, seed, self.version)
    }

    pub fn parse_csv_header(line: &str) -> Option<Self> {
        let body = line.strip_prefix("# ")?;
        let mut hash = None;
        let mut seed = None;
        let mut version = None;
        for field in body.split_whitespace() {
            let (k, v) = field.split_once('=')?;
            match k {
                "config_hash" => hash = Some(v.to_string()),
                "seed" => seed = Some(if v == "all" { None } else { Some(v.parse().ok()?) }),
                "version" => version = Some(v.to_string()),
                _ => return None,
            }
        }
        Some(Self {
            config_hash: hash?,
            seed: seed?,
            version: version?,
        })
    }
}

/// Write-to-temp then rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// CSV body behind a provenance header.
pub fn write_csv(path: &Path, meta: &Meta, body: &str) -> std::io::Result<()> {
    write_atomic(path, format!("{}{body}", meta.csv_header()).as_bytes())
}

/// `{"meta": ..., "data": ...}` with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, meta: &Meta, data: &T) -> std::io::Result<()> {
    let doc = serde_json::json!({ "meta": meta, "data": data });
    let mut text = serde_json::to_string_pretty(&doc).expect("json serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Reads a stamped JSON document.
pub fn read_json(path: &Path) -> std::io::Result<(Meta, Value)> {
    let text = std::fs::read_to_string(path)?;
    let mut doc: Value = serde_json::from_str(&text).map_err(std::io::Error::other)?;
    let meta: Meta = serde_json::from_value(doc["meta"].take()).map_err(std::io::Error::other)?;
    Ok((meta, doc["data"].take()))
}

/// Reads a stamped CSV, returning the header and the remaining text.
pub fn read_csv(path: &Path) -> std::io::Result<(Meta, String)> {
    let text = std::fs::read_to_string(path)?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let meta = Meta::parse_csv_header(first)
        .ok_or_else(|| std::io::Error::other(format!("{} lacks a provenance header", path.display())))?;
    Ok((meta, rest.to_string()))
}
