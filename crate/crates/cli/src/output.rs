//! Output files of one command, the manifest, and cleanup on failure.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
    created_dir: bool,
}

impl Output {
    pub fn new(dir: &Path) -> io::Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            created_dir,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    /// Create `name` in the output directory and fill it with `body`.
    pub fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> io::Result<PathBuf> {
        let path = self.dir.join(name);
        self.files.push(path.clone());
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    /// Manifest listing each file with its SHA-256.
    pub fn manifest(&mut self, command: &str, config_hash: &str, seed: u64, extra: &[(String, String)]) -> io::Result<PathBuf> {
        let mut lines = vec![
            format!("# command = {command}"),
            format!("# config_hash = {config_hash}"),
            format!("# seed = {seed}"),
            format!("# version = {}", env!("CARGO_PKG_VERSION")),
        ];
        lines.extend(extra.iter().map(|(k, v)| format!("# {k} = {v}")));
        lines.push("# columns = file,sha256".into());
        for f in &self.files {
            let digest = hex::encode(Sha256::digest(fs::read(f)?));
            let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            lines.push(format!("{name},{digest}"));
        }
        let body = lines.join("\n") + "\n";
        self.write("manifest.txt", |w| w.write_all(body.as_bytes()))
    }

    /// Remove every file written so far, and the directory if this run made it.
    pub fn discard(&mut self) {
        for f in self.files.drain(..) {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}
