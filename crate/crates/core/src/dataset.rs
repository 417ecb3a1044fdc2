//! Layout of a data directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::catalog::{load_catalog, Catalog};
use crate::error::Result;
use crate::evf::EVF_DIM;
use crate::features::{load_vectors, metadata_store, FeatureStore, Source};

pub const METADATA_FILE: &str = "metadata.csv";
pub const TRANSACTIONS_FILE: &str = "transactions.csv";
pub const DNN_FILE: &str = "dnn.vec";
pub const EVF_FILE: &str = "evf.vec";

/// Vector file backing `source`, or `None` for metadata (encoded from the catalog).
pub fn vector_file(source: Source) -> Option<&'static str> {
    match source {
        Source::Metadata => None,
        Source::Dnn => Some(DNN_FILE),
        Source::Evf => Some(EVF_FILE),
    }
}

/// Every file needed to serve `sources` from `dir`.
pub fn required_files(dir: &Path, sources: &[Source]) -> Vec<PathBuf> {
    let mut files = vec![dir.join(METADATA_FILE), dir.join(TRANSACTIONS_FILE)];
    files.extend(
        sources
            .iter()
            .filter_map(|&s| vector_file(s))
            .map(|f| dir.join(f)),
    );
    files
}

pub fn load_dir_catalog(dir: &Path) -> Result<Catalog> {
    load_catalog(&dir.join(METADATA_FILE), &dir.join(TRANSACTIONS_FILE))
}

pub fn load_stores(
    dir: &Path,
    catalog: &Catalog,
    sources: &[Source],
) -> Result<BTreeMap<Source, FeatureStore>> {
    let mut stores = BTreeMap::new();
    for &source in sources {
        let store = match source {
            Source::Metadata => metadata_store(catalog)?,
            Source::Dnn => load_vectors(&dir.join(DNN_FILE), source, None)?,
            Source::Evf => load_vectors(&dir.join(EVF_FILE), source, Some(EVF_DIM))?,
        };
        stores.insert(source, store);
    }
    Ok(stores)
}

/// First missing file among those `sources` need.
pub fn first_missing(dir: &Path, sources: &[Source]) -> Option<PathBuf> {
    required_files(dir, sources)
        .into_iter()
        .find(|p| !p.is_file())
}
