//! File-tree abstraction so the store can live on disk or in memory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::StoreError;

#[derive(Debug)]
pub(crate) enum Backend {
    Disk(PathBuf),
    Memory(Mutex<BTreeMap<String, String>>),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

impl Backend {
    pub(crate) fn read(&self, rel: &str) -> Result<Option<String>, StoreError> {
        match self {
            Backend::Disk(root) => {
                let p = root.join(rel);
                match fs::read_to_string(&p) {
                    Ok(s) => Ok(Some(s)),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                    Err(e) => Err(io(&p)(e)),
                }
            }
            Backend::Memory(m) => Ok(m.lock().expect("store map").get(rel).cloned()),
        }
    }

    pub(crate) fn exists(&self, rel: &str) -> bool {
        match self {
            Backend::Disk(root) => root.join(rel).exists(),
            Backend::Memory(m) => {
                let m = m.lock().expect("store map");
                let dir = format!("{rel}/");
                m.contains_key(rel) || m.keys().any(|k| k.starts_with(&dir))
            }
        }
    }

    /// Whole-file replacement; on disk via a temporary file and rename.
    pub(crate) fn write(&self, rel: &str, content: &str) -> Result<(), StoreError> {
        match self {
            Backend::Disk(root) => {
                let p = root.join(rel);
                if let Some(dir) = p.parent() {
                    fs::create_dir_all(dir).map_err(io(dir))?;
                }
                let tmp = p.with_extension("tmp~");
                fs::write(&tmp, content).map_err(io(&tmp))?;
                fs::rename(&tmp, &p).map_err(io(&p))
            }
            Backend::Memory(m) => {
                m.lock().expect("store map").insert(rel.to_string(), content.to_string());
                Ok(())
            }
        }
    }

    pub(crate) fn append(&self, rel: &str, content: &str) -> Result<(), StoreError> {
        match self {
            Backend::Disk(root) => {
                let p = root.join(rel);
                if let Some(dir) = p.parent() {
                    fs::create_dir_all(dir).map_err(io(dir))?;
                }
                let mut f = fs::OpenOptions::new().create(true).append(true).open(&p).map_err(io(&p))?;
                f.write_all(content.as_bytes()).map_err(io(&p))
            }
            Backend::Memory(m) => {
                m.lock().expect("store map").entry(rel.to_string()).or_default().push_str(content);
                Ok(())
            }
        }
    }

    /// Relative paths of every file under `prefix`, sorted.
    pub(crate) fn list(&self, prefix: &str) -> Result<Vec<String>, StoreError> {
        match self {
            Backend::Disk(root) => {
                let mut out = Vec::new();
                let base = root.join(prefix);
                if base.is_dir() {
                    walk(root, &base, &mut out)?;
                } else if base.is_file() {
                    out.push(prefix.to_string());
                }
                out.sort();
                Ok(out)
            }
            Backend::Memory(m) => {
                let m = m.lock().expect("store map");
                Ok(m.keys().filter(|k| prefix.is_empty() || k.starts_with(prefix)).cloned().collect())
            }
        }
    }
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), StoreError> {
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        let entry = entry.map_err(io(dir))?;
        let p = entry.path();
        if p.is_dir() {
            walk(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("under root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
