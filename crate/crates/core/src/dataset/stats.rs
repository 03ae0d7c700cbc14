use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ImageRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_images: usize,
    pub num_empty_images: usize,
    pub num_instances: usize,
    pub num_categories: usize,
    /// Mean of instance area over image area, in percent.
    pub mean_scale_percent: f64,
    /// Instances per distinct logo id.
    pub mean_instances_per_category: f64,
}

impl DatasetStats {
    /// Flat `key=value` report, one entry per line.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "num_images={}", self.num_images);
        let _ = writeln!(out, "num_empty_images={}", self.num_empty_images);
        let _ = writeln!(out, "num_instances={}", self.num_instances);
        let _ = writeln!(out, "num_categories={}", self.num_categories);
        let _ = writeln!(out, "mean_scale_percent={:.6}", self.mean_scale_percent);
        let _ = writeln!(
            out,
            "mean_instances_per_category={:.6}",
            self.mean_instances_per_category
        );
        out
    }
}

pub fn dataset_stats(records: &[ImageRecord]) -> Result<DatasetStats> {
    if records.is_empty() {
        return Err(Error::invalid("dataset_stats needs at least one image"));
    }
    let mut logos = BTreeSet::new();
    let mut scale_sum = 0.0;
    let mut num_instances = 0usize;
    for rec in records {
        let image_area = rec.area();
        for a in &rec.annotations {
            scale_sum += a.area() / image_area;
            num_instances += 1;
            logos.insert(a.label.logo_id);
        }
    }
    let (mean_scale_percent, mean_instances_per_category) = if num_instances == 0 {
        (0.0, 0.0)
    } else {
        (
            100.0 * scale_sum / num_instances as f64,
            num_instances as f64 / logos.len() as f64,
        )
    };
    Ok(DatasetStats {
        num_images: records.len(),
        num_empty_images: records.iter().filter(|r| r.annotations.is_empty()).count(),
        num_instances,
        num_categories: logos.len(),
        mean_scale_percent,
        mean_instances_per_category,
    })
}
