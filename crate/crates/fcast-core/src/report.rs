//! Report emission: deterministic CSV/JSON writers with fixed column order
//! and 6-significant-digit floats, content digests, and the run manifest.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Fixed significant-digit float rendering (normalized scientific form, so
/// parse → format round-trips to the same string).
pub fn format_sig(v: f64, sig: usize) -> String {
    if v.is_nan() {
        return "NaN".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    format!("{:.*e}", sig.saturating_sub(1), v)
}

pub fn format_f64(v: f64) -> String {
    format_sig(v, 6)
}

/// A rectangular report: named columns, string cells, emitted in row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }
}

pub fn write_csv(path: &Path, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let columns: Vec<String> = r.headers()?.iter().map(|s| s.to_string()).collect();
    let mut rows = vec![];
    for rec in r.records() {
        rows.push(rec?.iter().map(|s| s.to_string()).collect());
    }
    Ok(Table { columns, rows })
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HparamRecord {
    pub window: usize,
    pub model: String,
    pub chosen: String,
    pub val_mse: f64,
    /// None for combinations, whose members carry their own complexity.
    pub complexity: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Verbatim configuration the run was launched with.
    pub config_echo: String,
    pub version: String,
    pub seed: u64,
    pub jobs: usize,
    /// (stage name, wall-clock seconds). Timings vary run to run; digests
    /// must not depend on them, so the manifest is excluded from its own
    /// file list.
    pub stages: Vec<(String, f64)>,
    pub window_hparams: Vec<HparamRecord>,
    pub files: Vec<ManifestFile>,
    pub warnings: Vec<String>,
    pub failed_stage: Option<String>,
}

impl RunManifest {
    pub fn new(config_echo: String, seed: u64, jobs: usize) -> Self {
        Self {
            config_echo,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            jobs,
            stages: vec![],
            window_hparams: vec![],
            files: vec![],
            warnings: vec![],
            failed_stage: None,
        }
    }

    /// Registers an emitted file by digesting its current content.
    pub fn add_file(&mut self, dir: &Path, name: &str) -> Result<()> {
        let digest = sha256_hex(&dir.join(name))?;
        self.files.push(ManifestFile { name: name.to_string(), sha256: digest });
        Ok(())
    }
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    write_manifest_as(dir, "manifest.json", manifest)
}

pub fn write_manifest_as(dir: &Path, file_name: &str, manifest: &RunManifest) -> Result<PathBuf> {
    let path = dir.join(file_name);
    let mut f = fs::File::create(&path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    let json = serde_json::to_string_pretty(manifest)?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(path)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join("manifest.json");
    let text =
        fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Re-digests every file listed in the manifest; returns mismatches.
pub fn verify_digests(dir: &Path, manifest: &RunManifest) -> Result<Vec<String>> {
    let mut bad = vec![];
    for f in &manifest.files {
        let now = sha256_hex(&dir.join(&f.name))?;
        if now != f.sha256 {
            bad.push(f.name.clone());
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits_and_round_trip() {
        let cases = [0.123456789, -1234.56789, 1e-7, 3.0, 0.5, 698123.456, -2.0e-12];
        for &v in &cases {
            let s = format_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(format_f64(back), s, "not idempotent for {v}: {s}");
            // Relative error bounded by rounding at the 6th digit.
            assert!((back - v).abs() <= 1e-5 * v.abs().max(1e-300), "{v} → {s}");
        }
        assert_eq!(format_f64(0.0), "0");
        assert_eq!(format_f64(f64::NAN), "NaN");
        assert_eq!(format_f64(f64::INFINITY), "inf");
        assert_eq!(format_f64(0.5), "5.00000e-1");
    }

    #[test]
    fn csv_round_trip_preserves_table() {
        let dir = std::env::temp_dir().join("fcast_report_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut t = Table::new(&["model", "value"]);
        t.push(vec!["ols".into(), format_f64(0.123456789)]);
        t.push(vec!["lasso".into(), format_f64(-7.5e-4)]);
        let path = dir.join("t.csv");
        write_csv(&path, &t).unwrap();
        let back = read_csv_table(&path).unwrap();
        assert_eq!(back, t);
        // Empty table → header-only file that still round-trips.
        let empty = Table::new(&["a", "b", "c"]);
        let path2 = dir.join("e.csv");
        write_csv(&path2, &empty).unwrap();
        let back2 = read_csv_table(&path2).unwrap();
        assert_eq!(back2, empty);
    }

    #[test]
    fn digests_track_content() {
        let dir = std::env::temp_dir().join("fcast_digest_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("x.csv");
        std::fs::write(&p, b"a,b\n1,2\n").unwrap();
        let d1 = sha256_hex(&p).unwrap();
        std::fs::write(&p, b"a,b\n1,3\n").unwrap();
        let d2 = sha256_hex(&p).unwrap();
        assert_ne!(d1, d2);
        let mut m = RunManifest::new("cfg".into(), 7, 2);
        m.add_file(&dir, "x.csv").unwrap();
        assert!(verify_digests(&dir, &m).unwrap().is_empty());
        std::fs::write(&p, b"corrupted").unwrap();
        assert_eq!(verify_digests(&dir, &m).unwrap(), vec!["x.csv".to_string()]);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = std::env::temp_dir().join("fcast_manifest_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut m = RunManifest::new("[data]\nsource='simulate'".into(), 42, 4);
        m.stages.push(("fit".into(), 1.25));
        m.window_hparams.push(HparamRecord {
            window: 0,
            model: "lasso".into(),
            chosen: "lambda=1.00000e-2".into(),
            val_mse: 0.5,
            complexity: Some(7.0),
        });
        m.warnings.push("example".into());
        write_manifest(&dir, &m).unwrap();
        let back = read_manifest(&dir).unwrap();
        assert_eq!(back.seed, 42);
        assert_eq!(back.window_hparams.len(), 1);
        assert_eq!(back.window_hparams[0].model, "lasso");
        assert!(back.failed_stage.is_none());
    }
}
