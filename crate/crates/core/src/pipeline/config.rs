use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ann::IvfParams;
use crate::dataset::Level;
use crate::embed::GradientHistogramEmbedder;
use crate::error::{Error, Result};
use crate::eval::{coco_iou_thresholds, EvalConfig};

/// Settings shared by every subcommand.
///
/// Stored as flat `key = value` lines (`#` comments). Every key can also be
/// set from the command line with a flag of the same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub annotations: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub nlist: usize,
    pub nprobe: usize,
    pub m: usize,
    pub ksub: usize,
    pub seed: u64,
    pub kmeans_iters: usize,
    pub patch_size: usize,
    pub grid_cells: usize,
    pub orientation_bins: usize,
    pub dims: usize,
    pub top_k: usize,
    pub confidence_threshold: f64,
    pub iou_thresholds: Vec<f64>,
    pub negative_threshold: f64,
    pub eval_level: Level,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            annotations: None,
            images: None,
            taxonomy: None,
            index: None,
            results: None,
            report: None,
            output: None,
            nlist: 256,
            nprobe: 8,
            m: 16,
            ksub: 256,
            seed: 0,
            kmeans_iters: 25,
            patch_size: 64,
            grid_cells: 16,
            orientation_bins: 16,
            dims: 4096,
            top_k: 5,
            confidence_threshold: 0.5,
            iou_thresholds: coco_iou_thresholds(),
            negative_threshold: 0.99,
            eval_level: Level::Logo,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "annotations",
    "images",
    "taxonomy",
    "index",
    "results",
    "report",
    "output",
    "nlist",
    "nprobe",
    "m",
    "ksub",
    "seed",
    "kmeans_iters",
    "patch_size",
    "grid_cells",
    "orientation_bins",
    "dims",
    "top_k",
    "confidence_threshold",
    "iou_thresholds",
    "negative_threshold",
    "eval_level",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

/// `lo:hi:step` or a comma-separated list.
fn parse_thresholds(value: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("`iou_thresholds`: cannot parse `{value}`"));
    let parts: Vec<&str> = value.split(':').map(str::trim).collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].parse().map_err(|_| bad())?;
        let step: f64 = parts[2].parse().map_err(|_| bad())?;
        if !(step > 0.0) || hi < lo {
            return Err(bad());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| lo + step * i as f64).collect());
    }
    value
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected `key = value`", path.display(), idx + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "annotations" => self.annotations = path(),
            "images" => self.images = path(),
            "taxonomy" => self.taxonomy = path(),
            "index" => self.index = path(),
            "results" => self.results = path(),
            "report" => self.report = path(),
            "output" => self.output = path(),
            "nlist" => self.nlist = parse_num(key, value)?,
            "nprobe" => self.nprobe = parse_num(key, value)?,
            "m" => self.m = parse_num(key, value)?,
            "ksub" => self.ksub = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "kmeans_iters" => self.kmeans_iters = parse_num(key, value)?,
            "patch_size" => self.patch_size = parse_num(key, value)?,
            "grid_cells" => self.grid_cells = parse_num(key, value)?,
            "orientation_bins" => self.orientation_bins = parse_num(key, value)?,
            "dims" => self.dims = parse_num(key, value)?,
            "top_k" => self.top_k = parse_num(key, value)?,
            "confidence_threshold" => self.confidence_threshold = parse_num(key, value)?,
            "iou_thresholds" => self.iou_thresholds = parse_thresholds(value)?,
            "negative_threshold" => self.negative_threshold = parse_num(key, value)?,
            "eval_level" => {
                self.eval_level = match value {
                    "type" => Level::Type,
                    "brand" => Level::Brand,
                    "logo" => Level::Logo,
                    _ => return Err(Error::Config(format!("`eval_level` must be type, brand or logo, got `{value}`"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.nlist == 0 {
            return fail("nlist must be at least 1".into());
        }
        if self.nprobe == 0 || self.nprobe > self.nlist {
            return fail(format!("nprobe must lie in 1..={}, got {}", self.nlist, self.nprobe));
        }
        if self.ksub == 0 || self.ksub > 256 {
            return fail(format!("ksub must lie in 1..=256, got {}", self.ksub));
        }
        if self.m == 0 || self.dims % self.m != 0 {
            return fail(format!("dims {} is not divisible by m {}", self.dims, self.m));
        }
        if self.grid_cells == 0 || self.patch_size % self.grid_cells != 0 {
            return fail(format!(
                "patch_size {} is not a multiple of grid_cells {}",
                self.patch_size, self.grid_cells
            ));
        }
        if self.dims != self.grid_cells * self.grid_cells * self.orientation_bins {
            return fail(format!(
                "dims {} must equal grid_cells^2 * orientation_bins = {}",
                self.dims,
                self.grid_cells * self.grid_cells * self.orientation_bins
            ));
        }
        if self.top_k == 0 {
            return fail("top_k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return fail("confidence_threshold must lie in [0, 1]".into());
        }
        if self.iou_thresholds.is_empty() || self.iou_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return fail("iou_thresholds must be a non-empty set within [0, 1]".into());
        }
        if !(self.negative_threshold > 0.0 && self.negative_threshold <= 1.0) {
            return fail("negative_threshold must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn require_path<'a>(&'a self, key: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("`{key}` is not set")))
    }

    pub fn ivf_params(&self) -> IvfParams {
        IvfParams {
            nlist: self.nlist,
            m: self.m,
            ksub: self.ksub,
            max_iters: self.kmeans_iters,
            seed: self.seed,
        }
    }

    pub fn embedder(&self) -> Result<GradientHistogramEmbedder> {
        GradientHistogramEmbedder::new(self.patch_size, self.grid_cells, self.orientation_bins)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            confidence_threshold: self.confidence_threshold,
            iou_thresholds: self.iou_thresholds.clone(),
            level: self.eval_level,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let paths = [
            ("annotations", &self.annotations),
            ("images", &self.images),
            ("taxonomy", &self.taxonomy),
            ("index", &self.index),
            ("results", &self.results),
            ("report", &self.report),
            ("output", &self.output),
        ];
        for (k, v) in paths {
            if let Some(p) = v {
                let _ = writeln!(s, "{k} = {}", p.display());
            }
        }
        let _ = writeln!(s, "nlist = {}", self.nlist);
        let _ = writeln!(s, "nprobe = {}", self.nprobe);
        let _ = writeln!(s, "m = {}", self.m);
        let _ = writeln!(s, "ksub = {}", self.ksub);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "kmeans_iters = {}", self.kmeans_iters);
        let _ = writeln!(s, "patch_size = {}", self.patch_size);
        let _ = writeln!(s, "grid_cells = {}", self.grid_cells);
        let _ = writeln!(s, "orientation_bins = {}", self.orientation_bins);
        let _ = writeln!(s, "dims = {}", self.dims);
        let _ = writeln!(s, "top_k = {}", self.top_k);
        let _ = writeln!(s, "confidence_threshold = {:?}", self.confidence_threshold);
        let t: Vec<String> = self.iou_thresholds.iter().map(|t| format!("{t:?}")).collect();
        let _ = writeln!(s, "iou_thresholds = {}", t.join(","));
        let _ = writeln!(s, "negative_threshold = {:?}", self.negative_threshold);
        let _ = writeln!(s, "eval_level = {}", self.eval_level.name());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
        assert_eq!(PipelineConfig::default().iou_thresholds.len(), 10);
    }

    #[test]
    fn text_round_trip() {
        let mut c = PipelineConfig::default();
        c.set("nlist", "16").unwrap();
        c.set("index", "/tmp/x.obix").unwrap();
        c.set("iou_thresholds", "0.5:0.95:0.05").unwrap();
        c.set("eval_level", "brand").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        fs::write(&p, c.to_text()).unwrap();
        assert_eq!(PipelineConfig::load(&p).unwrap(), c);
    }

    #[test]
    fn range_list_parse() {
        let t = parse_thresholds("0.5:0.95:0.05").unwrap();
        assert_eq!(t.len(), 10);
        assert!((t[9] - 0.95).abs() < 1e-12);
        assert_eq!(parse_thresholds("0.5, 0.75").unwrap(), vec![0.5, 0.75]);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let mut c = PipelineConfig::default();
        assert!(c.set("nlist", "many").unwrap_err().is_config_error());
        assert!(c.set("colour", "red").unwrap_err().is_config_error());
        c.nprobe = 300;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.dims = 1000;
        assert!(c.validate().is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let c = PipelineConfig::default();
        for k in CONFIG_KEYS {
            let text = c.to_text();
            let v = text
                .lines()
                .find_map(|l| l.strip_prefix(&format!("{k} = ")))
                .unwrap_or("p");
            let mut d = c.clone();
            d.set(k, v).unwrap();
        }
    }
}
