//! Dataset files: one question table and one metadata store per split, plus
//! document-level split creation.

mod metadata;
mod table;

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use metadata::{metadata_from_str, metadata_to_string, read_metadata, write_metadata, MetadataStore};
pub use table::{
    parse_super_section_cell, read_split, read_split_from, super_section_cell, write_split, write_split_to, SplitTable,
    SPLIT_HEADER,
};

/// Document counts of the published train/val/test split.
pub const PUBLISHED_SPLIT_COUNTS: (usize, usize, usize) = (2209, 314, 623);

/// Default ratios: the published split fractions.
pub fn default_split_ratios() -> (f64, f64, f64) {
    let (a, b, c) = PUBLISHED_SPLIT_COUNTS;
    let n = (a + b + c) as f64;
    (a as f64 / n, b as f64 / n, c as f64 / n)
}

/// Writes `bytes` to `path` while holding an exclusive lock on it.
pub(crate) fn write_locked(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = OpenOptions::new().create(true).write(true).truncate(false).open(path).map_err(|e| Error::io(path, e))?;
    f.lock().map_err(|e| Error::io(path, e))?;
    let res = f.set_len(0).and_then(|_| f.write_all(bytes)).and_then(|_| f.flush());
    let _ = f.unlock();
    res.map_err(|e| Error::io(path, e))
}

pub(crate) fn read_locked(path: &Path) -> Result<Vec<u8>> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    f.lock_shared().map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    let res = f.read_to_end(&mut buf);
    let _ = f.unlock();
    res.map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Document ids of each split, each list sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Shuffles the distinct ids with `seed` and cuts them by `ratios`
/// (train, val, test). Val and test sizes are floored; train takes the rest.
pub fn make_splits(doc_ids: &[String], ratios: (f64, f64, f64), seed: u64) -> Result<Splits> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(0.0..=1.0).contains(r)) || ((rt + rv + rs) - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let mut ids: Vec<String> = doc_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty corpus".into()));
    }
    let n = ids.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    // epsilon absorbs ratios that are exact fractions of n
    let n_val = ((n as f64 * rv) + 1e-9).floor() as usize;
    let n_test = (((n as f64 * rs) + 1e-9).floor() as usize).min(n - n_val);
    let n_train = n - n_val - n_test;
    let mut train = ids[..n_train].to_vec();
    let mut val = ids[n_train..n_train + n_val].to_vec();
    let mut test = ids[n_train + n_val..].to_vec();
    train.sort();
    val.sort();
    test.sort();
    Ok(Splits { train, val, test })
}

/// Answers that do not resolve in the split's metadata.
pub fn check_split_consistency(table: &SplitTable, store: &MetadataStore) -> Vec<String> {
    let mut out = Vec::new();
    for row in &table.rows {
        match store.get(&row.document_id) {
            None => out.push(format!("question {}: document {} not in metadata", row.id, row.document_id)),
            Some(doc) => {
                for v in row.violations(Some(doc)) {
                    out.push(format!("question {}: {v}", row.id));
                }
            }
        }
    }
    out
}

/// File paths of one split inside a dataset directory.
pub fn split_paths(dir: &Path, split: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{split}.csv")), dir.join(format!("{split}_metadata.json")))
}

pub fn write_split_bundle(dir: &Path, split: &str, table: &SplitTable, store: &MetadataStore) -> Result<()> {
    let (csv, meta) = split_paths(dir, split);
    write_split(table, &csv)?;
    write_metadata(store, &meta)
}

/// Reads a split's table and metadata and checks they agree.
pub fn read_split_bundle(dir: &Path, split: &str) -> Result<(SplitTable, MetadataStore)> {
    let (csv, meta) = split_paths(dir, split);
    let table = read_split(&csv)?;
    let store = read_metadata(&meta)?;
    let problems = check_split_consistency(&table, &store);
    if let Some(first) = problems.first() {
        return Err(Error::Schema { path: csv.display().to_string(), message: first.clone() });
    }
    Ok((table, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("PMC{i:07}")).collect()
    }

    #[test]
    fn published_counts_from_default_ratios() {
        let s = make_splits(&corpus(3146), default_split_ratios(), 0).unwrap();
        assert_eq!(s.sizes(), (2209, 314, 623));
    }

    #[test]
    fn ten_docs_floor_rule() {
        assert_eq!(make_splits(&corpus(10), (0.8, 0.1, 0.1), 0).unwrap().sizes(), (8, 1, 1));
        assert_eq!(make_splits(&corpus(7), (0.5, 0.25, 0.25), 0).unwrap().sizes(), (5, 1, 1));
    }

    #[test]
    fn same_seed_same_partition() {
        let a = make_splits(&corpus(50), (0.7, 0.1, 0.2), 42).unwrap();
        let b = make_splits(&corpus(50), (0.7, 0.1, 0.2), 42).unwrap();
        let c = make_splits(&corpus(50), (0.7, 0.1, 0.2), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(make_splits(&[], (0.7, 0.1, 0.2), 0).is_err());
        assert!(make_splits(&corpus(5), (0.7, 0.1, 0.1), 0).is_err());
        assert!(make_splits(&corpus(5), (1.2, -0.1, -0.1), 0).is_err());
    }

    #[test]
    fn locked_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("f.txt");
        write_locked(&p, b"a long first version").unwrap();
        write_locked(&p, b"short").unwrap();
        assert_eq!(read_locked(&p).unwrap(), b"short");
    }

    proptest! {
        #[test]
        fn splits_partition_documents(n in 1usize..200, seed in 0u64..50, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let ratios = (lo, hi - lo, 1.0 - hi);
            let ids = corpus(n);
            let s = make_splits(&ids, ratios, seed).unwrap();
            let mut all: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
            prop_assert_eq!(all.len(), n);
            all.sort();
            all.dedup();
            prop_assert_eq!(all, ids);
        }
    }
}
