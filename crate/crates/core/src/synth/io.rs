//! Dataset files: one JSON record per instance plus a config sidecar.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, RelationshipInstance, SynthConfig};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Record {
    scene_id: usize,
    subj: usize,
    obj: usize,
    label: usize,
    feature: Vec<f64>,
}

pub fn write_jsonl<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    for inst in ds.instances() {
        let rec = Record {
            scene_id: inst.scene_id,
            subj: inst.subject_class,
            obj: inst.object_class,
            label: inst.relation_label,
            feature: inst.feature.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads records written by [`write_jsonl`]. Consecutive records with the
/// same `scene_id` form one scene; instance ids follow line order.
pub fn read_jsonl<R: BufRead>(config: SynthConfig, input: R) -> Result<Dataset> {
    let mut scenes: Vec<(usize, Option<usize>, Vec<RelationshipInstance>)> = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::data(format!("line {}: {e}", lineno + 1)))?;
        let inst = RelationshipInstance {
            id: 0,
            scene_id: rec.scene_id,
            subject_class: rec.subj,
            object_class: rec.obj,
            relation_label: rec.label,
            feature: rec.feature,
        };
        match scenes.last_mut() {
            Some((sid, _, members)) if *sid == rec.scene_id => members.push(inst),
            _ => scenes.push((rec.scene_id, None, vec![inst])),
        }
    }
    Dataset::from_scenes(config, scenes)
}

pub fn save_dataset(ds: &Dataset, jsonl: &Path, sidecar: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(jsonl)?);
    write_jsonl(ds, &mut w)?;
    w.flush()?;
    let mut s = BufWriter::new(File::create(sidecar)?);
    serde_json::to_writer_pretty(&mut s, &ds.config)?;
    s.write_all(b"\n")?;
    s.flush()?;
    Ok(())
}

pub fn load_dataset(jsonl: &Path, sidecar: &Path) -> Result<Dataset> {
    let config: SynthConfig = serde_json::from_reader(BufReader::new(File::open(sidecar)?))?;
    read_jsonl(config, BufReader::new(File::open(jsonl)?))
}
