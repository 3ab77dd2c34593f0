use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{load_dataset, DatasetError, DatasetManifest, DatasetRecord};

/// Overrides the directory relative dataset paths resolve against.
pub const DATA_ROOT_ENV: &str = "PCT_DATA_ROOT";

#[derive(Deserialize)]
struct RegistryFile {
    #[serde(default, rename = "dataset")]
    datasets: Vec<DatasetManifest>,
}

/// Named dataset manifests, read from a TOML file of `[[dataset]]` tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    root: PathBuf,
    datasets: BTreeMap<String, DatasetManifest>,
}

impl Registry {
    /// Parses registry TOML; relative paths resolve against `root` unless
    /// the data-root environment variable is set.
    pub fn from_toml(content: &str, root: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let file: RegistryFile =
            toml::from_str(content).map_err(|e| DatasetError::Registry(e.to_string()))?;
        let root = std::env::var_os(DATA_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| root.into());
        let mut datasets = BTreeMap::new();
        for mut m in file.datasets {
            if m.path.is_relative() {
                m.path = root.join(&m.path);
            }
            let name = m.name.clone();
            if datasets.insert(name.clone(), m).is_some() {
                return Err(DatasetError::Registry(format!("duplicate dataset name {name:?}")));
            }
        }
        Ok(Registry { root, datasets })
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let content = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&content, dir)
    }

    /// The fixture datasets shipped with this crate.
    pub fn bundled() -> Self {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/data");
        Self::from_toml(include_str!("../../fixtures/data/registry.toml"), dir)
            .expect("bundled registry is valid")
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn get(&self, name: &str) -> Result<&DatasetManifest, DatasetError> {
        self.datasets
            .get(name)
            .ok_or_else(|| DatasetError::Unknown(name.to_string()))
    }

    pub fn manifests(&self) -> impl Iterator<Item = &DatasetManifest> {
        self.datasets.values()
    }

    pub fn load_records(&self, name: &str) -> Result<Vec<DatasetRecord>, DatasetError> {
        load_dataset(self.get(name)?)
    }
}
