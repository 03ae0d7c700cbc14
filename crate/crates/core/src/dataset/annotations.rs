use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;

use super::{ImageRecord, InstanceAnnotation, LabelTriple, Taxonomy};
use crate::error::{Error, Result};

/// A rejected line of an annotation file.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<ImageRecord>,
    pub rejected: Vec<LineError>,
}

impl LoadReport {
    pub fn num_instances(&self) -> usize {
        self.records.iter().map(|r| r.annotations.len()).sum()
    }
}

/// Reads an annotation file.
///
/// One instance per line: `image_id,W,H,x,y,w,h,type_id,brand_id,logo_id`.
/// A line with only `image_id,W,H` declares an image without instances.
/// Blank lines and `#` comments are skipped. Bad lines are collected in
/// [`LoadReport::rejected`] rather than aborting the load.
pub fn load_annotations(path: &Path, taxonomy: &Taxonomy) -> Result<LoadReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report = parse_annotations(&text, taxonomy);
    for err in &report.rejected {
        warn!("{}:{}: {}", path.display(), err.line, err.message);
    }
    Ok(report)
}

pub fn parse_annotations(text: &str, taxonomy: &Taxonomy) -> LoadReport {
    let mut report = LoadReport::default();
    let mut by_id: HashMap<String, usize> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_line(line, taxonomy) {
            Ok((image_id, width, height, instance)) => {
                let slot = match by_id.get(&image_id) {
                    Some(&slot) => {
                        let rec = &report.records[slot];
                        if rec.width != width || rec.height != height {
                            report.rejected.push(LineError {
                                line: line_no,
                                message: format!(
                                    "image `{image_id}` declared as {}x{} earlier, {width}x{height} here",
                                    rec.width, rec.height
                                ),
                            });
                            continue;
                        }
                        slot
                    }
                    None => {
                        report
                            .records
                            .push(ImageRecord::new(image_id.clone(), width, height));
                        by_id.insert(image_id, report.records.len() - 1);
                        report.records.len() - 1
                    }
                };
                if let Some(instance) = instance {
                    report.records[slot].annotations.push(instance);
                }
            }
            Err(message) => report.rejected.push(LineError {
                line: line_no,
                message,
            }),
        }
    }
    report
}

type ParsedLine = (String, u32, u32, Option<InstanceAnnotation>);

fn parse_line(line: &str, taxonomy: &Taxonomy) -> std::result::Result<ParsedLine, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 3 && fields.len() != 10 {
        return Err(format!(
            "expected 3 or 10 comma-separated fields, found {}",
            fields.len()
        ));
    }
    let image_id = fields[0];
    if image_id.is_empty() {
        return Err("empty image id".into());
    }
    let int = |s: &str, what: &str| -> std::result::Result<u32, String> {
        s.parse::<u32>()
            .map_err(|_| format!("{what} `{s}` is not a non-negative integer"))
    };
    let real = |s: &str, what: &str| -> std::result::Result<f64, String> {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("{what} `{s}` is not a finite number")),
        }
    };
    let width = int(fields[1], "image width")?;
    let height = int(fields[2], "image height")?;
    if width == 0 || height == 0 {
        return Err(format!("image size {width}x{height} must be positive"));
    }
    if fields.len() == 3 {
        return Ok((image_id.to_string(), width, height, None));
    }

    let x = real(fields[3], "x")?;
    let y = real(fields[4], "y")?;
    let w = real(fields[5], "width")?;
    let h = real(fields[6], "height")?;
    if w <= 0.0 || h <= 0.0 {
        return Err(format!("box size {w}x{h} must be positive"));
    }
    let label = LabelTriple::new(
        int(fields[7], "type_id")?,
        int(fields[8], "brand_id")?,
        int(fields[9], "logo_id")?,
    );
    taxonomy.check(&label).map_err(|e| e.to_string())?;

    let clipped = InstanceAnnotation::new(x, y, w, h, label)
        .bbox()
        .clip(width as f64, height as f64);
    if clipped.width() <= 0.0 || clipped.height() <= 0.0 {
        return Err(format!(
            "box ({x},{y},{w},{h}) lies outside the {width}x{height} image"
        ));
    }
    let instance = if clipped == InstanceAnnotation::new(x, y, w, h, label).bbox() {
        InstanceAnnotation::new(x, y, w, h, label)
    } else {
        let (cx, cy, cw, ch) = clipped.to_xywh();
        InstanceAnnotation::new(cx, cy, cw, ch, label)
    };
    Ok((image_id.to_string(), width, height, Some(instance)))
}

/// Inverse of [`parse_annotations`]; floats use shortest round-trip formatting
/// so a reload reproduces every value bit for bit.
pub fn format_annotations(records: &[ImageRecord]) -> String {
    let mut out = String::from("# image_id,W,H,x,y,w,h,type_id,brand_id,logo_id\n");
    for rec in records {
        if rec.annotations.is_empty() {
            let _ = writeln!(out, "{},{},{}", rec.image_id, rec.width, rec.height);
        }
        for a in &rec.annotations {
            let _ = writeln!(
                out,
                "{},{},{},{:?},{:?},{:?},{:?},{},{},{}",
                rec.image_id,
                rec.width,
                rec.height,
                a.x,
                a.y,
                a.width,
                a.height,
                a.label.type_id,
                a.label.brand_id,
                a.label.logo_id
            );
        }
    }
    out
}

pub fn write_annotations(path: &Path, records: &[ImageRecord]) -> Result<()> {
    fs::write(path, format_annotations(records)).map_err(|e| Error::io(path, e))
}
