#![allow(dead_code)]

pub mod e2e;
pub mod matching;
pub mod routing;

use std::path::PathBuf;

/// Core fixture path; also resolves when this module is included from a
/// sibling crate's tests.
pub fn fixture(rel: &str) -> PathBuf {
    let here = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let own = here.join("fixtures").join("events");
    let root = if own.is_dir() {
        here.join("fixtures")
    } else {
        here.join("../core/fixtures")
    };
    root.join(rel)
}

/// The eleven event documents, in numbered order, as (file name, text).
pub fn golden_documents() -> Vec<(String, String)> {
    let dir = fixture("events");
    let mut names: Vec<_> = std::fs::read_dir(&dir)
        .expect("fixtures/events")
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".xml"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let text = std::fs::read_to_string(dir.join(&n)).unwrap();
            (n, text)
        })
        .collect()
}
