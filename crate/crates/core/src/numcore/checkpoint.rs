//! Parameter checkpoints: a text manifest plus a little-endian f32 blob.
//!
//! Manifest lines are `name<TAB>d0,d1,...<TAB>byte_offset`, in store order.
//! The blob is every tensor's data concatenated in the same order.

use std::fs;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "params.manifest";
pub const BLOB_FILE: &str = "params.bin";

pub fn encode(store: &ParamStore<f32>) -> (String, Vec<u8>) {
    let mut manifest = String::new();
    let mut blob = Vec::with_capacity(store.num_scalars() * 4);
    for p in store.iter() {
        let dims: Vec<String> = p.tensor.shape().iter().map(usize::to_string).collect();
        manifest.push_str(&format!("{}\t{}\t{}\n", p.name, dims.join(","), blob.len()));
        for v in p.tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    (manifest, blob)
}

pub fn decode(manifest: &str, blob: &[u8]) -> Result<ParamStore<f32>> {
    let bad = |line: usize, msg: String| Error::Checkpoint(format!("manifest line {line}: {msg}"));
    let mut store = ParamStore::new();
    let mut expected_offset = 0usize;
    for (i, line) in manifest.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, dims, offset] = fields[..] else {
            return Err(bad(lineno, format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let shape = dims
            .split(',')
            .map(str::parse::<usize>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(lineno, format!("shape `{dims}`: {e}")))?;
        let offset: usize = offset
            .parse()
            .map_err(|e| bad(lineno, format!("offset `{offset}`: {e}")))?;
        if offset != expected_offset {
            return Err(bad(lineno, format!("offset {offset}, expected {expected_offset}")));
        }
        let numel: usize = shape.iter().product();
        let end = offset + numel * 4;
        let bytes = blob
            .get(offset..end)
            .ok_or_else(|| bad(lineno, format!("blob too short for `{name}`")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(name, Tensor::new(&shape, data)?)?;
        expected_offset = end;
    }
    if expected_offset != blob.len() {
        return Err(Error::Checkpoint(format!(
            "blob has {} trailing bytes",
            blob.len() - expected_offset
        )));
    }
    Ok(store)
}

pub fn save(store: &ParamStore<f32>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (manifest, blob) = encode(store);
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    fs::write(dir.join(BLOB_FILE), blob)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<ParamStore<f32>> {
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let blob = fs::read(dir.join(BLOB_FILE))?;
    decode(&manifest, &blob)
}
