//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.tsv                id  label  split  base_lattice_path  chatter_lattice_path
//! <dir>/lattices/base/<split>.lat   LAT v1 records, manifest order
//! <dir>/lattices/chatter/<split>.lat
//! <dir>/utterances.tsv              id  label  split  words
//! ```
//!
//! Lattice paths in the manifest are relative to `<dir>`; each resolves to
//! the record inside that file whose utterance id matches the manifest row.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{Dataset, Label, SamplePair, Split, Utterance};
use crate::fsutil::write_atomic;
use crate::lattice::{read_lattices, write_record, Lattice, LatticeError, LmTag};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Lattice { path: PathBuf, source: LatticeError },
    #[error("manifest id `{id}` does not resolve to a {tag} lattice in {path}")]
    Unresolved { id: String, tag: LmTag, path: PathBuf },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io { path: path.to_path_buf(), source }
}

fn lattice_rel(tag: LmTag, split: Split) -> String {
    format!("lattices/{}/{split}.lat", tag.as_str().to_lowercase())
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<(), ManifestError> {
    let mut files: HashMap<String, String> = HashMap::new();
    let mut manifest = String::new();
    for p in &data.pairs {
        let base_rel = lattice_rel(LmTag::Base, p.split);
        let chat_rel = lattice_rel(LmTag::Chatter, p.split);
        write_record(&p.base, files.entry(base_rel.clone()).or_default());
        write_record(&p.chatter, files.entry(chat_rel.clone()).or_default());
        writeln!(manifest, "{}\t{}\t{}\t{}\t{}", p.utterance_id, p.label, p.split, base_rel, chat_rel).unwrap();
    }
    let mut names: Vec<&String> = files.keys().collect();
    names.sort();
    for name in names {
        let path = dir.join(name);
        write_atomic(&path, files[name].as_bytes()).map_err(io_err(&path))?;
    }
    // Manifest last: its presence means the lattices are complete.
    let path = dir.join("manifest.tsv");
    write_atomic(&path, manifest.as_bytes()).map_err(io_err(&path))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, ManifestError> {
    let manifest_path = dir.join("manifest.tsv");
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let mut cache: HashMap<String, HashMap<String, Lattice>> = HashMap::new();
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let perr = |msg: String| ManifestError::Parse { path: manifest_path.clone(), line: i + 1, msg };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(perr(format!("expected 5 columns, found {}", f.len())));
        }
        let label: Label = f[1].parse().map_err(perr)?;
        let split: Split = f[2].parse().map_err(perr)?;
        let mut resolve = |rel: &str, tag: LmTag| -> Result<Lattice, ManifestError> {
            if !cache.contains_key(rel) {
                let path = dir.join(rel);
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                let lats = read_lattices(&text).map_err(|source| ManifestError::Lattice { path: path.clone(), source })?;
                cache.insert(rel.to_string(), lats.into_iter().map(|l| (l.utterance_id.clone(), l)).collect());
            }
            cache[rel]
                .get(f[0])
                .filter(|l| l.lm_tag == tag)
                .cloned()
                .ok_or_else(|| ManifestError::Unresolved { id: f[0].to_string(), tag, path: dir.join(rel) })
        };
        let base = resolve(f[3], LmTag::Base)?;
        let chatter = resolve(f[4], LmTag::Chatter)?;
        pairs.push(SamplePair { utterance_id: f[0].to_string(), label, split, base, chatter });
    }
    Ok(Dataset { pairs })
}

pub fn write_utterances(path: &Path, utterances: &[Utterance]) -> Result<(), ManifestError> {
    let mut s = String::new();
    for u in utterances {
        writeln!(s, "{}\t{}\t{}\t{}", u.id, u.label, u.split, u.words.join(" ")).unwrap();
    }
    write_atomic(path, s.as_bytes()).map_err(io_err(path))
}

pub fn read_utterances(path: &Path) -> Result<Vec<Utterance>, ManifestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let perr = |msg: String| ManifestError::Parse { path: path.to_path_buf(), line: i + 1, msg };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(perr(format!("expected 4 columns, found {}", f.len())));
            }
            Ok(Utterance {
                id: f[0].to_string(),
                label: f[1].parse().map_err(perr)?,
                split: f[2].parse().map_err(perr)?,
                words: f[3].split_whitespace().map(String::from).collect(),
                augment_index: 0,
            })
        })
        .collect()
}
