//! Run-directory output: atomic writes, a config echo, and a manifest with
//! content hashes for auditability. Nothing here carries a timestamp, so
//! identical runs produce byte-identical directories.

use sha2::{Digest, Sha256};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub struct RunWriter {
    dir: PathBuf,
    artifacts: Vec<(String, u64, String)>,
}

impl RunWriter {
    pub fn new(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    /// Writes through a temp file and renames into place.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, self.dir.join(name))?;
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.artifacts.push((name.to_string(), bytes.len() as u64, hex));
        Ok(())
    }

    /// Writes the config echo and the manifest, consuming the writer.
    pub fn finish(mut self, config_echo: &str) -> io::Result<()> {
        self.write("config.echo.toml", config_echo.as_bytes())?;
        self.artifacts.sort_by(|a, b| a.0.cmp(&b.0));
        let mut manifest = String::from("{\n  \"artifacts\": [\n");
        for (i, (name, bytes, sha)) in self.artifacts.iter().enumerate() {
            manifest.push_str(&format!(
                "    {{\"name\": \"{name}\", \"bytes\": {bytes}, \"sha256\": \"{sha}\"}}{}\n",
                if i + 1 < self.artifacts.len() { "," } else { "" }
            ));
        }
        manifest.push_str("  ]\n}\n");
        let tmp = self.dir.join(".manifest.json.tmp");
        fs::write(&tmp, manifest.as_bytes())?;
        fs::rename(&tmp, self.dir.join("manifest.json"))?;
        Ok(())
    }
}

/// CSV assembly with a mandatory header; floats are rendered in shortest
/// round-trip form, so output bytes are reproducible.
pub struct Csv {
    buf: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Self {
            buf,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "ragged CSV row");
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}
