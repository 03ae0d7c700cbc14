use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Detection;
use crate::dataset::LabelTriple;
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Reads a detection results file, one detection per line:
/// `image_id,x,y,w,h,type_id,brand_id,logo_id,confidence`. Blank lines and
/// `#` comments are skipped. Any malformed line fails the whole load.
pub fn load_results(path: &Path) -> Result<Vec<Detection>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text, path)
}

pub fn parse_results(text: &str, origin: &Path) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: idx + 1,
            message,
        };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 9 {
            return Err(err(format!("expected 9 fields, found {}", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("field {} (`{}`) is not a finite number", i + 1, f[i])))
        };
        let id = |i: usize| -> Result<u32> {
            f[i].parse::<u32>()
                .map_err(|_| err(format!("field {} (`{}`) is not a non-negative integer", i + 1, f[i])))
        };
        let (w, h) = (num(3)?, num(4)?);
        if w <= 0.0 || h <= 0.0 {
            return Err(err("box width and height must be positive".into()));
        }
        let confidence = num(8)?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(err(format!("confidence {confidence} outside [0, 1]")));
        }
        out.push(Detection {
            image_id: f[0].to_string(),
            bbox: BBox::from_xywh(num(1)?, num(2)?, w, h),
            label: LabelTriple::new(id(5)?, id(6)?, id(7)?),
            confidence,
        });
    }
    Ok(out)
}

pub fn format_results(dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        let (x, y, w, h) = d.bbox.to_xywh();
        let _ = writeln!(
            s,
            "{},{x:?},{y:?},{w:?},{h:?},{},{},{},{:?}",
            d.image_id, d.label.type_id, d.label.brand_id, d.label.logo_id, d.confidence
        );
    }
    s
}

pub fn write_results(path: &Path, dets: &[Detection]) -> Result<()> {
    fs::write(path, format_results(dets)).map_err(|e| Error::io(path, e))
}
