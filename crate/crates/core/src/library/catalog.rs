use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datapipe::blob::write_atomic;
use crate::error::{Error, Result};
use crate::peft::AdapterBundle;

use super::format::{bundle_load, bundle_save};

const INDEX: &str = "index.toml";

/// One catalog row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub task: String,
    pub file: String,
    pub method: String,
    pub classes: usize,
    pub stored_params: usize,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    #[serde(default)]
    tasks: BTreeMap<String, LibraryEntry>,
}

/// Directory of per-task bundles plus an index manifest.
///
/// Every write goes through a temporary file and a rename, so a reader
/// sees either the old or the new state of a file. Mutations assume one
/// writer at a time.
#[derive(Debug, Clone)]
pub struct AdapterLibrary {
    dir: PathBuf,
}

fn check_task_id(task: &str) -> Result<()> {
    let ok = !task.is_empty()
        && task.len() <= 128
        && task.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        && !task.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "task id {task:?} must be 1-128 characters of [A-Za-z0-9._-] not starting with '.'"
        )))
    }
}

impl AdapterLibrary {
    /// Opens a library directory, creating it if needed.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let lib = AdapterLibrary { dir };
        lib.read_index()?;
        Ok(lib)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn read_index(&self) -> Result<Index> {
        let path = self.dir.join(INDEX);
        match std::fs::read_to_string(&path) {
            Ok(text) => toml::from_str(&text).map_err(|e| Error::format(0, format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Index::default()),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    fn write_index(&self, index: &Index) -> Result<()> {
        let text = toml::to_string(index).map_err(|e| Error::invalid(e.to_string()))?;
        write_atomic(self.dir.join(INDEX), text.as_bytes())
    }

    /// Stores `bundle` under its task id. An existing task is replaced only
    /// with `overwrite`.
    pub fn add(&self, bundle: &AdapterBundle, overwrite: bool) -> Result<LibraryEntry> {
        check_task_id(&bundle.task)?;
        let mut index = self.read_index()?;
        if index.tasks.contains_key(&bundle.task) && !overwrite {
            return Err(Error::invalid(format!("task {:?} already in the library", bundle.task)));
        }
        let file = format!("{}.cmfb", bundle.task);
        bundle_save(self.dir.join(&file), bundle)?;
        let entry = LibraryEntry {
            task: bundle.task.clone(),
            file,
            method: bundle.method.name().to_string(),
            classes: bundle.classes(),
            stored_params: bundle.stored_params(),
        };
        index.tasks.insert(bundle.task.clone(), entry.clone());
        self.write_index(&index)?;
        Ok(entry)
    }

    pub fn get(&self, task: &str) -> Result<AdapterBundle> {
        let index = self.read_index()?;
        let entry = index
            .tasks
            .get(task)
            .ok_or_else(|| Error::NotFound(format!("task {task:?} is not in the library")))?;
        bundle_load(self.dir.join(&entry.file))
    }

    pub fn list(&self) -> Result<Vec<LibraryEntry>> {
        Ok(self.read_index()?.tasks.into_values().collect())
    }

    pub fn remove(&self, task: &str) -> Result<LibraryEntry> {
        let mut index = self.read_index()?;
        let entry = index
            .tasks
            .remove(task)
            .ok_or_else(|| Error::NotFound(format!("task {task:?} is not in the library")))?;
        self.write_index(&index)?;
        let path = self.dir.join(&entry.file);
        std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        Ok(entry)
    }

    /// Every stored bundle, in task order.
    pub fn bundles(&self) -> Result<Vec<AdapterBundle>> {
        self.list()?.iter().map(|e| self.get(&e.task)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, EncoderWeights};
    use crate::numerics::rng::seeded;
    use crate::peft::{adapter_init, AdapterSpec, Method};

    fn bundle(task: &str, seed: u64) -> AdapterBundle {
        let cfg = EncoderConfig {
            hidden: 8,
            ffn: 16,
            ..EncoderConfig::default()
        };
        let w0 = EncoderWeights::xavier(cfg, false, &mut seeded(0)).unwrap();
        let spec = AdapterSpec {
            rank: 2,
            ..AdapterSpec::new(Method::Lora)
        };
        let mut b = adapter_init(task, &spec, &w0, 3, seed).unwrap();
        b.round_to_f32();
        b
    }

    #[test]
    fn add_get_isolation() {
        let dir = tempfile::tempdir().unwrap();
        let lib = AdapterLibrary::open(dir.path()).unwrap();
        let (a, b) = (bundle("a", 1), bundle("b", 2));
        lib.add(&a, false).unwrap();
        lib.add(&b, false).unwrap();
        assert_eq!(lib.get("a").unwrap(), a);
        assert_eq!(lib.get("b").unwrap(), b);
        let tasks: Vec<String> = lib.list().unwrap().into_iter().map(|e| e.task).collect();
        assert_eq!(tasks, vec!["a", "b"]);
    }

    #[test]
    fn duplicate_needs_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let lib = AdapterLibrary::open(dir.path()).unwrap();
        lib.add(&bundle("a", 1), false).unwrap();
        assert!(lib.add(&bundle("a", 2), false).is_err());
        lib.add(&bundle("a", 2), true).unwrap();
        assert_eq!(lib.get("a").unwrap(), bundle("a", 2));
    }

    #[test]
    fn remove_then_get_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let lib = AdapterLibrary::open(dir.path()).unwrap();
        lib.add(&bundle("a", 1), false).unwrap();
        lib.remove("a").unwrap();
        assert!(matches!(lib.get("a"), Err(Error::NotFound(_))));
        assert!(matches!(lib.remove("a"), Err(Error::NotFound(_))));
        assert!(!dir.path().join("a.cmfb").exists());
    }

    #[test]
    fn bad_task_ids() {
        let dir = tempfile::tempdir().unwrap();
        let lib = AdapterLibrary::open(dir.path()).unwrap();
        for id in ["", "../x", "a/b", ".hidden"] {
            assert!(lib.add(&bundle(id, 1), false).is_err(), "{id:?}");
        }
    }
}
