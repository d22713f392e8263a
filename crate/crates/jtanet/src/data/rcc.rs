//! Ingestion of annotated nuclei images into 64x64 training patches.
//!
//! The input is a directory of H&E source images (PNG or BMP) where each
//! image `name.png` has a sidecar `name.csv` listing one nucleus per line as
//! `x,y,label` (pixel column, pixel row, class index 0-3 or class name; an
//! optional header line is skipped). Around every nucleus a 32x32 crop is
//! taken, clamped inside the image near borders, bilinearly resized to
//! 64x64, and scaled from [0,255] to [-1,1].
//!
//! The split is stratified: the test set size is `round(N * 2000/22444)` and
//! every class contributes proportionally (largest-remainder rounding), with
//! membership chosen by the split seed. On the published dataset this yields
//! the 20,444 / 2,000 split; the class census is reported so callers can
//! warn when counts do not match the published (7722, 5712, 6971, 2039).

use super::{resize_bilinear, DatasetSplit, PatchRecord};
use crate::derive_seed;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub const RCC_CLASS_NAMES: [&str; 4] = ["epithelial", "fibroblast", "inflammatory", "others"];
pub const RCC_PUBLISHED_COUNTS: [usize; 4] = [7722, 5712, 6971, 2039];
const PUBLISHED_TOTAL: usize = 22444;
const PUBLISHED_TEST: usize = 2000;
const CROP: usize = 32;
const OUT_SIDE: usize = 64;

/// Class census of an ingestion run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub class_counts: Vec<usize>,
    pub total: usize,
    pub n_images: usize,
    pub matches_published: bool,
}

fn parse_label(field: &str, path: &Path, line_no: usize) -> Result<u32> {
    let field = field.trim();
    if let Ok(v) = field.parse::<u32>() {
        if (v as usize) < RCC_CLASS_NAMES.len() {
            return Ok(v);
        }
        return Err(Error::format(
            path,
            format!("line {line_no}: label {v} out of range 0-3"),
        ));
    }
    RCC_CLASS_NAMES
        .iter()
        .position(|n| n.eq_ignore_ascii_case(field))
        .map(|p| p as u32)
        .ok_or_else(|| Error::format(path, format!("line {line_no}: unknown label {field:?}")))
}

fn parse_annotations(path: &Path) -> Result<Vec<(u32, u32, u32)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::format(
                path,
                format!("line {}: expected x,y,label, got {line:?}", i + 1),
            ));
        }
        let coords: Option<(u32, u32)> = fields[0]
            .trim()
            .parse()
            .ok()
            .zip(fields[1].trim().parse().ok());
        match coords {
            Some((x, y)) => rows.push((x, y, parse_label(fields[2], path, i + 1)?)),
            // A single non-numeric leading line is treated as a header.
            None if i == 0 => continue,
            None => {
                return Err(Error::format(
                    path,
                    format!("line {}: non-numeric coordinates in {line:?}", i + 1),
                ))
            }
        }
    }
    Ok(rows)
}

fn crop_patch(rgb: &image::RgbImage, cx: u32, cy: u32) -> Vec<f32> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let x0 = (cx as usize).saturating_sub(CROP / 2).min(w - CROP);
    let y0 = (cy as usize).saturating_sub(CROP / 2).min(h - CROP);
    let mut out = Vec::with_capacity(3 * OUT_SIDE * OUT_SIDE);
    let mut plane = vec![0.0f64; CROP * CROP];
    for c in 0..3 {
        for dy in 0..CROP {
            for dx in 0..CROP {
                let p = rgb.get_pixel((x0 + dx) as u32, (y0 + dy) as u32);
                plane[dy * CROP + dx] = p.0[c] as f64 / 255.0 * 2.0 - 1.0;
            }
        }
        let resized = resize_bilinear(&plane, CROP, CROP, OUT_SIDE, OUT_SIDE)
            .expect("fixed 32->64 resize cannot fail");
        out.extend(resized.iter().map(|&v| v as f32));
    }
    out
}

/// Test-set quota per class: proportional shares of `round(total * f)` with
/// largest-remainder rounding, so every class is within one sample of exact
/// proportionality.
fn test_quotas(class_counts: &[usize]) -> Vec<usize> {
    let total: usize = class_counts.iter().sum();
    if total == 0 {
        return vec![0; class_counts.len()];
    }
    let target = ((total * PUBLISHED_TEST) as f64 / PUBLISHED_TOTAL as f64).round() as usize;
    let exact: Vec<f64> = class_counts
        .iter()
        .map(|&c| c as f64 * target as f64 / total as f64)
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|&e| e.floor() as usize).collect();
    let mut short = target - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..class_counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if short == 0 {
            break;
        }
        if quotas[c] < class_counts[c] {
            quotas[c] += 1;
            short -= 1;
        }
    }
    quotas
}

pub fn ingest_rcc(root: &Path, split_seed: u64) -> Result<(DatasetSplit, IngestReport)> {
    let mut image_paths: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("bmp"))
        })
        .collect();
    image_paths.sort();
    if image_paths.is_empty() {
        return Err(Error::invalid(format!(
            "no PNG/BMP source images found under {}",
            root.display()
        )));
    }

    let mut records = Vec::new();
    for (img_id, img_path) in image_paths.iter().enumerate() {
        let ann_path = img_path.with_extension("csv");
        if !ann_path.exists() {
            return Err(Error::format(
                &ann_path,
                format!("missing annotation file for {}", img_path.display()),
            ));
        }
        let rgb = image::open(img_path)?.to_rgb8();
        let (w, h) = (rgb.width(), rgb.height());
        if (w as usize) < CROP || (h as usize) < CROP {
            return Err(Error::format(
                img_path,
                format!("image {w}x{h} is smaller than the {CROP}x{CROP} crop window"),
            ));
        }
        for (x, y, label) in parse_annotations(&ann_path)? {
            if x >= w || y >= h {
                return Err(Error::format(
                    &ann_path,
                    format!("nucleus at ({x}, {y}) lies outside the {w}x{h} image"),
                ));
            }
            records.push(PatchRecord {
                pixels: crop_patch(&rgb, x, y),
                label,
                source_image: img_id as u32,
                center: (x, y),
            });
        }
    }

    let mut class_counts = vec![0usize; RCC_CLASS_NAMES.len()];
    for r in &records {
        class_counts[r.label as usize] += 1;
    }
    let quotas = test_quotas(&class_counts);

    // Choose test members per class by seed, then emit both splits in the
    // original (image id, annotation row) order.
    let mut is_test = vec![false; records.len()];
    for (class, &quota) in quotas.iter().enumerate() {
        let mut members: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label as usize == class)
            .map(|(i, _)| i)
            .collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(split_seed, "rcc.split", class as u64));
        members.shuffle(&mut rng);
        for &i in members.iter().take(quota) {
            is_test[i] = true;
        }
    }
    let mut train = Vec::with_capacity(records.len());
    let mut test = Vec::new();
    for (i, r) in records.into_iter().enumerate() {
        if is_test[i] {
            test.push(r);
        } else {
            train.push(r);
        }
    }

    let total = train.len() + test.len();
    let report = IngestReport {
        matches_published: class_counts == RCC_PUBLISHED_COUNTS && total == PUBLISHED_TOTAL,
        class_counts,
        total,
        n_images: image_paths.len(),
    };
    let split = DatasetSplit {
        train,
        test,
        class_names: RCC_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        side: OUT_SIDE,
        split_seed,
    };
    split.validate()?;
    Ok((split, report))
}
