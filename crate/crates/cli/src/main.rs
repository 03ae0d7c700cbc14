use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;
use logoscope::geometry::BBox;
use logoscope::pipeline::{self, PipelineConfig, SynthConfig};
use logoscope::{Error, Result};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "logoscope", version, about = "Logo recognition by instance retrieval")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// One flag per configuration key, overriding the file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true, value_name = "PATH")]
    annotations: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    images: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    taxonomy: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    index: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    results: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    report: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<String>,
    #[arg(long, global = true)]
    nlist: Option<String>,
    #[arg(long, global = true)]
    nprobe: Option<String>,
    #[arg(long, global = true)]
    m: Option<String>,
    #[arg(long, global = true)]
    ksub: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long = "kmeans_iters", alias = "kmeans-iters", global = true)]
    kmeans_iters: Option<String>,
    #[arg(long = "patch_size", alias = "patch-size", global = true)]
    patch_size: Option<String>,
    #[arg(long = "grid_cells", alias = "grid-cells", global = true)]
    grid_cells: Option<String>,
    #[arg(long = "orientation_bins", alias = "orientation-bins", global = true)]
    orientation_bins: Option<String>,
    #[arg(long, global = true)]
    dims: Option<String>,
    #[arg(long = "top_k", alias = "top-k", global = true)]
    top_k: Option<String>,
    #[arg(long = "confidence_threshold", alias = "confidence-threshold", global = true)]
    confidence_threshold: Option<String>,
    #[arg(long = "iou_thresholds", alias = "iou-thresholds", global = true)]
    iou_thresholds: Option<String>,
    #[arg(long = "negative_threshold", alias = "negative-threshold", global = true)]
    negative_threshold: Option<String>,
    #[arg(long = "eval_level", alias = "eval-level", global = true)]
    eval_level: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("annotations", &self.annotations),
            ("images", &self.images),
            ("taxonomy", &self.taxonomy),
            ("index", &self.index),
            ("results", &self.results),
            ("report", &self.report),
            ("output", &self.output),
            ("nlist", &self.nlist),
            ("nprobe", &self.nprobe),
            ("m", &self.m),
            ("ksub", &self.ksub),
            ("seed", &self.seed),
            ("kmeans_iters", &self.kmeans_iters),
            ("patch_size", &self.patch_size),
            ("grid_cells", &self.grid_cells),
            ("orientation_bins", &self.orientation_bins),
            ("dims", &self.dims),
            ("top_k", &self.top_k),
            ("confidence_threshold", &self.confidence_threshold),
            ("iou_thresholds", &self.iou_thresholds),
            ("negative_threshold", &self.negative_threshold),
            ("eval_level", &self.eval_level),
        ]
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate an annotation file and print dataset statistics.
    Ingest {
        /// Exit 0 even when some lines were rejected.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Merge three annotators' files into one consensus file (`--output`).
    Qc {
        #[arg(long, num_args = 3, required = true, value_name = "PATH")]
        inputs: Vec<PathBuf>,
    },
    /// Embed every annotated instance and build the retrieval index.
    BuildIndex,
    /// Append new exemplars to an existing index without retraining.
    Add,
    /// Recognize one crop of an image.
    Search {
        #[arg(long)]
        image: PathBuf,
        /// Crop as `x,y,w,h` in pixels.
        #[arg(long = "box", value_name = "X,Y,W,H")]
        bbox: String,
        /// Print JSON instead of `key=value` lines.
        #[arg(long)]
        json: bool,
    },
    /// Score a detection results file against ground truth.
    Eval,
    /// Write a synthetic logo dataset to `--output`.
    Synth {
        #[arg(long, default_value_t = 50)]
        brands: u32,
        #[arg(long, default_value_t = 40)]
        instances: u32,
        #[arg(long, default_value_t = 0)]
        first_brand: u32,
        #[arg(long, default_value_t = 1)]
        logos_per_brand: u32,
        /// Mean instance area in percent of the image.
        #[arg(long, default_value_t = 1.2)]
        mean_scale: f64,
        #[arg(long, default_value_t = 0)]
        empty_images: u32,
        #[arg(long, default_value_t = 256)]
        image_size: u32,
    },
}

fn parse_box(text: &str) -> Result<BBox> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("--box expects x,y,w,h, got `{text}`")))?;
    match v[..] {
        [x, y, w, h] if w > 0.0 && h > 0.0 => Ok(BBox::from_xywh(x, y, w, h)),
        _ => Err(Error::Config(format!("--box expects x,y,w,h with positive size, got `{text}`"))),
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => Error::Config(e.to_string()),
            other => other,
        })?,
        None => PipelineConfig::default(),
    };
    for (key, value) in cli.overrides.pairs() {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

/// Runs the command and returns the text for stdout plus the exit code.
fn run(cli: &Cli) -> Result<(String, u8)> {
    let cfg = load_config(cli)?;
    let mut out = String::new();
    let mut code = 0;
    match &cli.command {
        Command::Ingest { allow_partial } => {
            let outcome = pipeline::cmd_ingest(&cfg)?;
            for e in &outcome.load.rejected {
                eprintln!("line {}: {}", e.line, e.message);
            }
            if let Some(stats) = &outcome.stats {
                out.push_str(&stats.to_key_value());
            }
            let _ = writeln!(out, "rejected={}", outcome.load.rejected.len());
            if !outcome.is_clean() && !allow_partial {
                code = EXIT_DATA;
            }
        }
        Command::Qc { inputs } => {
            let output = cfg.require_path("output", &cfg.output)?;
            let taxonomy = logoscope::dataset::Taxonomy::load(cfg.require_path("taxonomy", &cfg.taxonomy)?)?;
            let result = pipeline::cmd_qc([&inputs[0], &inputs[1], &inputs[2]], &taxonomy)?;
            pipeline::write_qc(output, &result)?;
            for (id, o) in &result.outcomes {
                match o {
                    Some(o) => {
                        let _ = writeln!(out, "{id},{},{:.6}", o.chosen, o.score);
                    }
                    None => {
                        let _ = writeln!(out, "{id},none,0");
                    }
                }
            }
            let _ = writeln!(out, "rejected={}", result.rejected);
        }
        Command::BuildIndex => {
            let s = pipeline::cmd_build_index(&cfg)?;
            let _ = writeln!(out, "count={}", s.count);
            let _ = writeln!(out, "coarse_distortion={:.6}", s.report.coarse_distortion);
            let _ = writeln!(out, "pq_distortion={:.6}", s.report.pq_distortion);
        }
        Command::Add => {
            let s = pipeline::cmd_add(&cfg)?;
            let _ = writeln!(out, "added={}", s.added);
            let _ = writeln!(out, "count={}", s.count);
            let _ = writeln!(out, "codebook_retrained={}", s.codebook_retrained);
        }
        Command::Search { image, bbox, json } => {
            let bbox = parse_box(bbox)?;
            let r = pipeline::cmd_search(&cfg, image, &bbox)?;
            for w in &r.warnings {
                warn!("{w}");
            }
            if *json {
                out.push_str(&serde_json::to_string_pretty(&r)?);
                out.push('\n');
            } else {
                out.push_str(&r.to_text());
            }
        }
        Command::Eval => {
            let report = pipeline::cmd_eval(&cfg)?;
            for w in &report.warnings {
                warn!("{w}");
            }
            out.push_str(&report.to_text());
        }
        Command::Synth {
            brands,
            instances,
            first_brand,
            logos_per_brand,
            mean_scale,
            empty_images,
            image_size,
        } => {
            let dir = cfg.require_path("output", &cfg.output)?;
            let synth = SynthConfig {
                seed: cfg.seed,
                num_brands: *brands,
                instances_per_brand: *instances,
                logos_per_brand: *logos_per_brand,
                first_brand: *first_brand,
                mean_scale_percent: *mean_scale,
                scale_spread_percent: mean_scale / 2.0,
                empty_images: *empty_images,
                image_size: *image_size,
                ..SynthConfig::default()
            };
            let data = pipeline::generate_synthetic_dataset(dir, &synth)?;
            let _ = writeln!(out, "num_images={}", data.records.len());
            let _ = writeln!(out, "num_instances={}", data.num_instances());
            let _ = writeln!(out, "num_logos={}", data.taxonomy.num_logos());
        }
    }
    Ok((out, code))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok((out, code)) => {
            print!("{out}");
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() {
                EXIT_USAGE
            } else if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_INTERNAL
            })
        }
    }
}
