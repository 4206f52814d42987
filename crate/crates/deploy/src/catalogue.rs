//! Component catalogues: where bundle documents are fetched from.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use gloss_core::xml;
use roxmltree::Document;

#[derive(Debug, thiserror::Error)]
pub enum CatalogueError {
    #[error("no payload for `{0}`")]
    NotFound(String),
    #[error("catalogue index: {0}")]
    BadIndex(String),
    #[error("fetching `{reference}`: {reason}")]
    Fetch { reference: String, reason: String },
}

/// Maps a payload reference (a bundle's code reference or a URN) to a
/// bundle document.
///
/// A directory catalogue consults `index.xml` first
/// (`<catalogue><entry ref=".." file=".."/></catalogue>`) and otherwise
/// treats the reference as a file name inside the directory. An HTTP
/// catalogue fetches `<base>/<reference>`.
#[derive(Debug, Clone)]
pub enum Catalogue {
    Dir(PathBuf),
    Http(String),
    Memory(BTreeMap<String, String>),
}

impl Catalogue {
    /// `http://` and `https://` locations are HTTP catalogues, anything
    /// else a directory.
    pub fn from_location(loc: &str) -> Self {
        if loc.starts_with("http://") || loc.starts_with("https://") {
            Catalogue::Http(loc.trim_end_matches('/').to_string())
        } else {
            Catalogue::Dir(PathBuf::from(loc))
        }
    }

    pub fn memory<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Catalogue::Memory(
            entries
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        )
    }

    pub fn fetch(&self, reference: &str) -> Result<String, CatalogueError> {
        match self {
            Catalogue::Memory(m) => m
                .get(reference)
                .cloned()
                .ok_or_else(|| CatalogueError::NotFound(reference.into())),
            Catalogue::Dir(dir) => fetch_dir(dir, reference),
            Catalogue::Http(base) => fetch_http(base, reference),
        }
    }
}

fn read_index(dir: &Path) -> Result<BTreeMap<String, String>, CatalogueError> {
    let path = dir.join("index.xml");
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(CatalogueError::BadIndex(e.to_string())),
    };
    let doc = Document::parse(&text).map_err(|e| CatalogueError::BadIndex(e.to_string()))?;
    let mut map = BTreeMap::new();
    for e in xml::children(doc.root_element(), "entry") {
        match (e.attribute("ref"), e.attribute("file")) {
            (Some(r), Some(f)) => {
                map.insert(r.to_string(), f.to_string());
            }
            _ => return Err(CatalogueError::BadIndex("entry needs ref and file".into())),
        }
    }
    Ok(map)
}

fn plain_file_name(s: &str) -> bool {
    !s.is_empty() && s != "." && s != ".." && !s.contains(['/', '\\'])
}

fn fetch_dir(dir: &Path, reference: &str) -> Result<String, CatalogueError> {
    let index = read_index(dir)?;
    let file = match index.get(reference) {
        Some(f) => f.as_str(),
        None if plain_file_name(reference) => reference,
        None => return Err(CatalogueError::NotFound(reference.into())),
    };
    match std::fs::read_to_string(dir.join(file)) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(CatalogueError::NotFound(reference.into()))
        }
        Err(e) => Err(CatalogueError::Fetch {
            reference: reference.into(),
            reason: e.to_string(),
        }),
    }
}

fn fetch_http(base: &str, reference: &str) -> Result<String, CatalogueError> {
    let url = format!("{base}/{reference}");
    let fail = |reason: String| CatalogueError::Fetch {
        reference: reference.into(),
        reason,
    };
    match ureq::get(&url).call() {
        Ok(mut resp) => {
            let mut body = String::new();
            resp.body_mut()
                .as_reader()
                .read_to_string(&mut body)
                .map_err(|e| fail(e.to_string()))?;
            Ok(body)
        }
        Err(ureq::Error::StatusCode(404)) => Err(CatalogueError::NotFound(reference.into())),
        Err(e) => Err(fail(e.to_string())),
    }
}
