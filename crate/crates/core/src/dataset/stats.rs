//! Dataset summary statistics, recounted from disk.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::export::{read_manifest, resolve};
use super::formats::{read_gray_png, FormatError};
use crate::masks::{occupied_cells, QuadLabel};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelHistogram {
    pub black: u64,
    pub dark_grey: u64,
    pub light_grey: u64,
    pub white: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub pairs: usize,
    pub divergent_pairs: usize,
    pub divergent_fraction: f64,
    pub second_pass_fraction: f64,
    pub template_counts: BTreeMap<String, usize>,
    pub label_histogram: LabelHistogram,
    /// Mean over pairs of the per-frame fraction of grid cells touched by the affected region.
    pub mean_affected_cell_fraction: f64,
}

pub fn dataset_stats(dir: &Path) -> Result<DatasetStats, FormatError> {
    let mut stats = DatasetStats::default();
    let mut second = 0usize;
    let mut cell_fraction_sum = 0.0;
    for rec in read_manifest(dir)? {
        let rec = rec.map_err(|e| FormatError::Image(format!("manifest: {e}")))?;
        stats.pairs += 1;
        stats.divergent_pairs += rec.first_divergence_frame.is_some() as usize;
        second += rec.needs_second_pass as usize;
        *stats.template_counts.entry(rec.template.clone()).or_default() += 1;
        let g = rec.grid.max(1);
        let mut frac = 0.0;
        for t in 0..rec.frames {
            let img = read_gray_png(&resolve(dir, &rec.paths.quadmask, t))?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut affected = vec![false; w * h];
            for (i, &b) in img.as_raw().iter().enumerate() {
                let h = &mut stats.label_histogram;
                match QuadLabel::from_byte(b) {
                    Some(QuadLabel::Black) => h.black += 1,
                    Some(QuadLabel::DarkGrey) => {
                        h.dark_grey += 1;
                        affected[i] = true;
                    }
                    Some(QuadLabel::LightGrey) => {
                        h.light_grey += 1;
                        affected[i] = true;
                    }
                    Some(QuadLabel::White) => h.white += 1,
                    None => return Err(FormatError::Image(format!("{}: quadmask value {b}", rec.scene_id))),
                }
            }
            frac += occupied_cells(&affected, w, h, g).len() as f64 / (g * g) as f64;
        }
        cell_fraction_sum += if rec.frames > 0 { frac / rec.frames as f64 } else { 0.0 };
    }
    if stats.pairs > 0 {
        let n = stats.pairs as f64;
        stats.divergent_fraction = stats.divergent_pairs as f64 / n;
        stats.second_pass_fraction = second as f64 / n;
        stats.mean_affected_cell_fraction = cell_fraction_sum / n;
    }
    Ok(stats)
}
