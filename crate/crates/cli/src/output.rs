//! Output plumbing: run manifests, atomic writes, CSV/JSON emission.
//!
//! Every declared output `FILE` is written atomically (temp file + rename)
//! and accompanied by a sidecar manifest `FILE.manifest.json` recording the
//! config hash, the resolved parameters, the seed, the tool version, and the
//! wall time. Identical inputs produce byte-identical data files; only the
//! sidecar's `wall_time_ms` varies between reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Provenance record attached to every output file.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub parameters: serde_json::Value,
    pub seed: u64,
    pub subcommand: String,
    pub tool_version: String,
    pub wall_time_ms: u64,
}

/// Builds manifests and stamps wall time at write.
pub struct ManifestWriter {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestWriter {
    pub fn new(
        subcommand: &str,
        config_text: &str,
        parameters: serde_json::Value,
        seed: u64,
    ) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(config_text.as_bytes());
        hasher.update(b"\x00");
        hasher.update(parameters.to_string().as_bytes());
        let digest = hasher.finalize();
        let config_hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self {
            manifest: RunManifest {
                config_hash,
                parameters,
                seed,
                subcommand: subcommand.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                wall_time_ms: 0,
            },
            started: Instant::now(),
        }
    }

    /// Writes `bytes` to `path` atomically plus the manifest sidecar.
    pub fn emit(&self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(path, bytes)?;
        let mut manifest = self.manifest.clone();
        manifest.wall_time_ms = self.started.elapsed().as_millis() as u64;
        let sidecar = sidecar_path(path);
        write_atomic(&sidecar, &(sorted_json(&manifest)? + "\n").into_bytes())?;
        Ok(())
    }

    pub fn emit_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), CliError> {
        self.emit(path, &(sorted_json(value)? + "\n").into_bytes())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// UTF-8 JSON with keys sorted (objects round-trip through the ordered
/// `serde_json::Value` representation).
pub fn sorted_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let v = serde_json::to_value(value).map_err(|e| CliError::Io(format!("encode JSON: {e}")))?;
    serde_json::to_string_pretty(&v).map_err(|e| CliError::Io(format!("encode JSON: {e}")))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("create {}: {e}", parent.display())))?;
        }
    }
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::Io(format!("write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::Io(format!("rename onto {}: {e}", path.display())))?;
    Ok(())
}

/// In-memory CSV builder (RFC 4180, `\n` terminators, shortest-round-trip
/// float formatting via the csv crate).
pub struct CsvBuilder {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvBuilder {
    pub fn new(header: &[&str]) -> Result<Self, CliError> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer
            .write_record(header)
            .map_err(|e| CliError::Io(format!("encode CSV: {e}")))?;
        Ok(Self { writer })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        self.writer
            .write_record(fields)
            .map_err(|e| CliError::Io(format!("encode CSV: {e}")))
    }

    pub fn finish(self) -> Result<Vec<u8>, CliError> {
        self.writer
            .into_inner()
            .map_err(|e| CliError::Io(format!("encode CSV: {e}")))
    }
}

pub fn fmt_f64(x: f64) -> String {
    let mut buf = ryu_format(x);
    if buf == "-0" {
        buf = "0".to_string();
    }
    buf
}

fn ryu_format(x: f64) -> String {
    // Display on f64 is the shortest representation that round-trips.
    format!("{x}")
}

/// Reads a CSV emitted by this tool back as header + rows of f64-or-string
/// fields. Used by the round-trip checks.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Io(format!("read {}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::Io(format!("read {}: {e}", path.display())))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Io(format!("read {}: {e}", path.display())))?;
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    Ok((header, rows))
}

/// Minimal gnuplot script template pointing at a CSV.
pub fn gnuplot_script(csv_path: &Path, title: &str, columns: &[(usize, &str)]) -> String {
    let mut plot_terms: Vec<String> = Vec::new();
    for (col, label) in columns {
        plot_terms.push(format!(
            "'{}' using 1:{} with lines title '{}'",
            csv_path.file_name().unwrap_or_default().to_string_lossy(),
            col,
            label
        ));
    }
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset title '{}'\nplot {}\n",
        title,
        plot_terms.join(", \\\n     ")
    )
}
