//! Output directory handling: run manifest, CSV tables, SVG figures and the
//! text report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use sideband::scenario::{Resolved, MANIFEST_TABLE};

use crate::svg::Figure;
use crate::{CliError, Outcome};

pub const MANIFEST_FILE: &str = "run_manifest.toml";

/// Shortest round-trip form, with an exponent for very small or large
/// magnitudes; negative zero is written as `0`.
pub fn num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v}")
    } else {
        format!("{v:?}")
    }
}

/// Identity of a run: the resolved scenario without the output directory and
/// thread count, the command and the program version.
pub fn run_hash(command: &str, r: &Resolved) -> String {
    let mut s = r.scenario.clone();
    s.run.output = String::new();
    s.run.threads = 0;
    let mut h = Sha256::new();
    h.update(s.to_toml().as_bytes());
    h.update(command.as_bytes());
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    hex::encode(h.finalize())
}

pub struct Run {
    pub dir: PathBuf,
    pub command: &'static str,
    pub hash: String,
    files: Vec<PathBuf>,
    report: String,
}

impl Run {
    /// Create the output directory and write the manifest.
    pub fn create(command: &'static str, r: &Resolved, threads: usize) -> Result<Self, CliError> {
        let dir = PathBuf::from(&r.scenario.run.output);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let mut run = Self {
            hash: run_hash(command, r),
            dir,
            command,
            files: Vec::new(),
            report: String::new(),
        };
        let manifest = run.manifest_text(r, threads);
        run.write_text(MANIFEST_FILE, &manifest)?;
        Ok(run)
    }

    fn manifest_text(&self, r: &Resolved, threads: usize) -> String {
        let mut derived = toml::Table::new();
        for (k, v) in r.derived() {
            derived.insert(k.into(), toml::Value::Float(v));
        }
        let mut m = toml::Table::new();
        m.insert("command".into(), self.command.into());
        m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        m.insert("hash".into(), self.hash.clone().into());
        m.insert("threads_used".into(), toml::Value::Integer(threads as i64));
        m.insert("derived".into(), toml::Value::Table(derived));
        let mut outer = toml::Table::new();
        outer.insert(MANIFEST_TABLE.into(), toml::Value::Table(m));
        format!(
            "# Run manifest. `sideband {} --config {MANIFEST_FILE}` reproduces this run;\n\
             # the [{MANIFEST_TABLE}] table is ignored on reload.\n\n{}\n{}",
            self.command,
            r.scenario.to_toml(),
            toml::to_string(&outer).expect("manifest table serializes")
        )
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_text(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, content).map_err(|e| CliError::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    /// CSV with `# key: value` metadata lines, a header row and data rows.
    pub fn write_csv<I>(&mut self, name: &str, meta: &[(&str, String)], header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.path(name);
        let mut buf = String::new();
        let _ = writeln!(buf, "# command: {}", self.command);
        let _ = writeln!(buf, "# run-manifest-sha256: {}", self.hash);
        for (k, v) in meta {
            let _ = writeln!(buf, "# {k}: {v}");
        }
        let mut w = csv::Writer::from_writer(buf.into_bytes());
        let csv_err = |e: csv::Error| CliError::io(&path, std::io::Error::other(e));
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::io(&path, std::io::Error::other(e.to_string())))?;
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    pub fn write_svg(&mut self, name: &str, fig: Figure) -> Result<(), CliError> {
        self.write_text(name, &fig.finish())
    }

    pub fn figure(&self, width: f64, height: f64, title: &str) -> Figure {
        Figure::new(width, height, title, self.hash.clone())
    }

    /// Append a `key = value` line to the report.
    pub fn record(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.report, "{key} = {value}");
    }

    pub fn note(&mut self, line: &str) {
        let _ = writeln!(self.report, "# {line}");
    }

    pub fn report(&self) -> &str {
        &self.report
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    pub(crate) fn finish(self, error: Option<CliError>) -> Outcome {
        Outcome {
            dir: self.dir,
            files: self.files,
            report: self.report,
            error,
        }
    }
}

pub fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
