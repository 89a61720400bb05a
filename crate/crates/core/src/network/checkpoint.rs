//! Model serialization: JSON with the flat parameter vector and its layout.
//!
//! serde_json prints f64 with shortest round-trip formatting, so a
//! save/load cycle reproduces parameters bit for bit.

use super::{unflatten, BlockId, LayoutEntry, Model, NetSpec};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SavedModel {
    version: u32,
    spec: NetSpec,
    dropped: BTreeSet<BlockId>,
    hidden: BTreeMap<BlockId, usize>,
    layout: Vec<LayoutEntry>,
    values: Vec<f64>,
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let pv = model.flatten();
    let saved = SavedModel {
        version: VERSION,
        spec: model.spec.clone(),
        dropped: model.dropped.clone(),
        hidden: model.hidden.clone(),
        layout: pv.layout,
        values: pv.values,
    };
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer(f, &saved)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let f = BufReader::new(File::open(path)?);
    let saved: SavedModel = serde_json::from_reader(f)?;
    if saved.version != VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {} (expected {VERSION})",
            saved.version
        )));
    }
    let m = unflatten(
        &saved.spec,
        &saved.dropped,
        &saved.hidden,
        &super::ParamVector { values: saved.values, layout: saved.layout.clone() },
    )?;
    if m.layout() != saved.layout {
        return Err(Error::Invariant("checkpoint layout does not match its spec".into()));
    }
    Ok(m)
}
