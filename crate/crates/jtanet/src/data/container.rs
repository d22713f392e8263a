//! On-disk patch container: versioned binary file holding both splits of a
//! [`DatasetSplit`] with pixels stored as f32 and per-record metadata as u32
//! columns. Round-trips are bit-exact.

use super::{DatasetSplit, PatchRecord};
use crate::container::{ContainerBuilder, ContainerReader};
use crate::error::{Error, Result};
use std::path::Path;

const MAGIC: &[u8; 4] = b"JTPC";
const VERSION: u32 = 1;

fn add_split(b: &mut ContainerBuilder, prefix: &str, records: &[PatchRecord], side: usize) {
    let n = records.len();
    let labels: Vec<u32> = records.iter().map(|r| r.label).collect();
    let source: Vec<u32> = records.iter().map(|r| r.source_image).collect();
    let cx: Vec<u32> = records.iter().map(|r| r.center.0).collect();
    let cy: Vec<u32> = records.iter().map(|r| r.center.1).collect();
    let mut pixels = Vec::with_capacity(n * 3 * side * side);
    for r in records {
        pixels.extend_from_slice(&r.pixels);
    }
    b.add_u32(&format!("{prefix}.labels"), &[n], &labels);
    b.add_u32(&format!("{prefix}.source"), &[n], &source);
    b.add_u32(&format!("{prefix}.center_x"), &[n], &cx);
    b.add_u32(&format!("{prefix}.center_y"), &[n], &cy);
    b.add_f32(&format!("{prefix}.pixels"), &[n, 3, side, side], &pixels);
}

fn read_split(r: &ContainerReader, prefix: &str, side: usize) -> Result<Vec<PatchRecord>> {
    let (_, labels) = r.u32(&format!("{prefix}.labels"))?;
    let (_, source) = r.u32(&format!("{prefix}.source"))?;
    let (_, cx) = r.u32(&format!("{prefix}.center_x"))?;
    let (_, cy) = r.u32(&format!("{prefix}.center_y"))?;
    let (pshape, pixels) = r.f32(&format!("{prefix}.pixels"))?;
    let n = labels.len();
    if source.len() != n || cx.len() != n || cy.len() != n {
        return Err(Error::shape(format!(
            "{prefix} metadata columns disagree on record count"
        )));
    }
    let per = 3 * side * side;
    if pshape != [n, 3, side, side] {
        return Err(Error::shape(format!(
            "{prefix}.pixels has shape {pshape:?}, expected {:?}",
            [n, 3, side, side]
        )));
    }
    Ok((0..n)
        .map(|i| PatchRecord {
            pixels: pixels[i * per..(i + 1) * per].to_vec(),
            label: labels[i],
            source_image: source[i],
            center: (cx[i], cy[i]),
        })
        .collect())
}

pub fn save_patches(split: &DatasetSplit, path: &Path) -> Result<()> {
    split.validate()?;
    let mut b = ContainerBuilder::new();
    add_split(&mut b, "train", &split.train, split.side);
    add_split(&mut b, "test", &split.test, split.side);
    let meta = serde_json::json!({
        "side": split.side,
        "split_seed": split.split_seed,
        "class_names": split.class_names,
        "n_train": split.train.len(),
        "n_test": split.test.len(),
    });
    b.write(path, MAGIC, VERSION, meta)
}

pub fn load_patches(path: &Path) -> Result<DatasetSplit> {
    let r = ContainerReader::open(path, MAGIC, VERSION)?;
    let side = r.meta["side"]
        .as_u64()
        .ok_or_else(|| Error::format(path, "missing side in header".to_string()))?
        as usize;
    let split_seed = r.meta["split_seed"]
        .as_u64()
        .ok_or_else(|| Error::format(path, "missing split_seed in header".to_string()))?;
    let class_names: Vec<String> = serde_json::from_value(r.meta["class_names"].clone())
        .map_err(|e| Error::format(path, format!("bad class_names: {e}")))?;
    let split = DatasetSplit {
        train: read_split(&r, "train", side)?,
        test: read_split(&r, "test", side)?,
        class_names,
        side,
        split_seed,
    };
    split.validate()?;
    Ok(split)
}
