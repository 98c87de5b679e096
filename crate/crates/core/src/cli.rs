//! Batch command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 input or schema error,
//! 4 numeric-domain error. Failures print one JSON object on stderr:
//! `{"error": {"kind": ..., "message": ..., "exit_code": ...}}`.

use std::ffi::OsString;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bda::{self, BdaDims, BdaInstance, BdaParams};
use crate::dataio::{self, split, StatsConfig, SynthSpec};
use crate::error::Error;
use crate::idc::{assign_labels, AssignmentConfig, Scenario, TrainingProgress};
use crate::metrics::{evaluate_with, EvalParams};
use crate::tensor::FeatureMap;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_DOMAIN: i32 = 4;

const AFTER_HELP: &str = "Exit codes: 0 success, 2 usage error, 3 input/schema error, 4 numeric-domain error.";

#[derive(Debug, Parser)]
#[command(name = "detcal", version, about = "Label assignment, attention gradient checks and detection evaluation", after_help = AFTER_HELP)]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write the primary output here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label anchors of a scenario file with dynamic IoU and adaptive thresholds.
    #[command(after_help = AFTER_HELP)]
    Assign(AssignArgs),
    /// COCO-style AP of detections against ground truth.
    #[command(after_help = AFTER_HELP)]
    Evaluate(EvaluateArgs),
    /// Instance counts and area-ratio histogram of a COCO file.
    #[command(after_help = AFTER_HELP)]
    Stats(StatsArgs),
    /// Patient-level train/test split of a COCO file.
    #[command(after_help = AFTER_HELP)]
    Split(SplitArgs),
    /// Generate a synthetic assignment scenario.
    #[command(after_help = AFTER_HELP)]
    Synth(SynthArgs),
    /// Verify attention input gradients against finite differences.
    #[command(name = "bda-check", after_help = AFTER_HELP)]
    BdaCheck(BdaCheckArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long = "lambda")]
    pub lambda_exp: Option<f64>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long = "gamma")]
    pub gamma_exp: Option<f64>,
    /// Reference object side length in pixels.
    #[arg(long)]
    pub area_scale: Option<f64>,
}

impl ConfigArgs {
    fn apply(&self, mut cfg: AssignmentConfig) -> AssignmentConfig {
        if let Some(v) = self.lambda_exp {
            cfg.lambda_exp = v;
        }
        if let Some(v) = self.alpha0 {
            cfg.alpha0 = v;
        }
        if let Some(v) = self.gamma_exp {
            cfg.gamma_exp = v;
        }
        if let Some(v) = self.area_scale {
            cfg.area_scale = v;
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    /// Scenario JSON; `-` reads stdin.
    #[arg(long, default_value = "-")]
    pub scenario: String,
    /// Training progress in [0, 1]; overrides the scenario's value (default 0).
    #[arg(long)]
    pub progress: Option<f64>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Also write positive regression boxes as COCO detections.
    #[arg(long)]
    pub dets_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub dets: PathBuf,
    /// Keep at most this many detections per image and category.
    #[arg(long)]
    pub max_dets: Option<usize>,
    /// Also write precision-recall curves as CSV.
    #[arg(long)]
    pub pr_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub coco: PathBuf,
    /// Comma-separated, strictly increasing area-ratio bin edges.
    #[arg(long, value_delimiter = ',')]
    pub bins: Option<Vec<f64>>,
    #[arg(long, default_value_t = dataio::SMALL_AREA_RATIO)]
    pub small_threshold: f64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub coco: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Per-image field holding the patient identifier.
    #[arg(long, default_value = dataio::DEFAULT_PATIENT_FIELD)]
    pub patient_field: String,
    #[arg(long)]
    pub train_out: Option<PathBuf>,
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub n_anchors: usize,
    #[arg(long, default_value_t = 10)]
    pub n_gts: usize,
    #[arg(long, default_value_t = 1333.0)]
    pub image_w: f64,
    #[arg(long, default_value_t = 800.0)]
    pub image_h: f64,
    #[arg(long, default_value_t = 8.0)]
    pub min_size: f64,
    #[arg(long, default_value_t = 128.0)]
    pub max_size: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.5)]
    pub pull: f64,
    /// Training progress stored in the scenario.
    #[arg(long)]
    pub progress: Option<f64>,
    /// Also write the ground truths as a one-image COCO file.
    #[arg(long)]
    pub gt_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BdaCheckArgs {
    /// Pyramid feature map (JSON or FMAP binary).
    #[arg(long, requires_all = ["c5", "params"], conflicts_with = "random")]
    pub p_i: Option<PathBuf>,
    /// Backbone feature map (JSON or FMAP binary).
    #[arg(long)]
    pub c5: Option<PathBuf>,
    /// Parameter JSON.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Upstream gradient map; a fixed pseudo-random map when omitted.
    #[arg(long)]
    pub upstream: Option<PathBuf>,
    /// Generate the instance from --seed and --dims.
    #[arg(long, requires = "dims")]
    pub random: bool,
    /// C,C5,Cp,H,W
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
}

#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
    code: i32,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Domain(_) => EXIT_DOMAIN,
            _ => EXIT_INPUT,
        };
        Failure {
            kind: e.kind(),
            message: e.to_string(),
            code,
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        kind: "usage",
        message: message.into(),
        code: EXIT_USAGE,
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

/// Output of one command: the primary payload plus warnings for stderr.
struct Outcome {
    body: Vec<u8>,
    warnings: Vec<String>,
}

fn to_json<T: Serialize>(v: &T) -> CmdResult<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v).map_err(Error::from)?;
    s.push(b'\n');
    Ok(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn read_file(path: &Path) -> CmdResult<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e).into())
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> CmdResult<T> {
    serde_json::from_slice(bytes).map_err(|source| {
        Error::Parse {
            path: path.to_owned(),
            source,
        }
        .into()
    })
}

fn csv_unsupported(cmd: &str) -> Failure {
    usage(format!("--format csv is not available for `{cmd}`"))
}

fn cmd_assign(args: &AssignArgs, format: Format, stdin: &mut dyn Read) -> CmdResult<Outcome> {
    if format == Format::Csv {
        return Err(csv_unsupported("assign"));
    }
    let (path, bytes) = if args.scenario == "-" {
        let mut buf = Vec::new();
        stdin.read_to_end(&mut buf).map_err(|e| Error::io("<stdin>", e))?;
        (PathBuf::from("<stdin>"), buf)
    } else {
        let p = PathBuf::from(&args.scenario);
        let b = read_file(&p)?;
        (p, b)
    };
    let scenario: Scenario = parse_json(&path, &bytes)?;
    let cfg = args.config.apply(scenario.config.unwrap_or_default());
    let progress = TrainingProgress::new(args.progress.or(scenario.progress).unwrap_or(0.0))?;
    let result = assign_labels(&scenario.anchors, &scenario.regressed, &scenario.gts, progress, &cfg)?;
    if let Some(p) = &args.dets_out {
        let dets = dataio::detections_from_assignment(&scenario, &result);
        write_file(p, &to_json(&dets)?)?;
    }
    Ok(Outcome {
        body: to_json(&result)?,
        warnings: vec![],
    })
}

fn cmd_evaluate(args: &EvaluateArgs, format: Format) -> CmdResult<Outcome> {
    let gt = dataio::load_coco(&args.gt)?;
    let dets = dataio::load_detections(&args.dets)?;
    let report = evaluate_with(
        &dets,
        &gt.ground_truths(),
        &EvalParams {
            max_dets: args.max_dets,
        },
    )?;
    let csv = || -> Vec<u8> {
        let mut buf = Vec::new();
        report.write_pr_csv(&mut buf).expect("writing to memory");
        buf
    };
    if let Some(p) = &args.pr_csv {
        write_file(p, &csv())?;
    }
    let body = match format {
        Format::Json => to_json(&report)?,
        Format::Csv => csv(),
    };
    Ok(Outcome {
        body,
        warnings: gt.bounds_violations(),
    })
}

fn cmd_stats(args: &StatsArgs, format: Format) -> CmdResult<Outcome> {
    let idx = dataio::load_coco(&args.coco)?;
    let mut cfg = StatsConfig {
        small_threshold: args.small_threshold,
        ..Default::default()
    };
    if let Some(b) = &args.bins {
        cfg.ar_bins = b.clone();
    }
    let report = dataio::compute_stats(&idx, &cfg)?;
    let body = match format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf).expect("writing to memory");
            buf
        }
    };
    Ok(Outcome {
        body,
        warnings: idx.bounds_violations(),
    })
}

fn cmd_split(args: &SplitArgs, seed: u64, format: Format) -> CmdResult<Outcome> {
    if format == Format::Csv {
        return Err(csv_unsupported("split"));
    }
    let idx = dataio::load_coco_with(&args.coco, &args.patient_field)?;
    let (train, test) = dataio::patient_split(&idx, args.train_fraction, seed)?;
    for (out, part) in [(&args.train_out, &train), (&args.test_out, &test)] {
        if let Some(p) = out {
            dataio::save_coco_with(part, p, &args.patient_field)?;
        }
    }
    Ok(Outcome {
        body: to_json(&split::summarize(&train, &test, args.train_fraction))?,
        warnings: vec![],
    })
}

fn cmd_synth(args: &SynthArgs, seed: u64, format: Format) -> CmdResult<Outcome> {
    if format == Format::Csv {
        return Err(csv_unsupported("synth"));
    }
    let spec = SynthSpec {
        n_anchors: args.n_anchors,
        n_gts: args.n_gts,
        image_w: args.image_w,
        image_h: args.image_h,
        gt_size_range: (args.min_size, args.max_size),
        noise: args.noise,
        pull: args.pull,
        seed,
    };
    let mut scenario = dataio::synth_scenario(&spec)?;
    if let Some(p) = args.progress {
        scenario.progress = Some(TrainingProgress::new(p)?.value());
    }
    if let Some(p) = &args.gt_out {
        let gt = dataio::scenario_ground_truth(&scenario, args.image_w.ceil() as u32, args.image_h.ceil() as u32);
        let text = gt.to_json_string(dataio::DEFAULT_PATIENT_FIELD)? + "\n";
        write_file(p, text.as_bytes())?;
    }
    Ok(Outcome {
        body: to_json(&scenario)?,
        warnings: vec![],
    })
}

fn load_map(path: &Path) -> CmdResult<FeatureMap> {
    let bytes = read_file(path)?;
    FeatureMap::from_bytes(&bytes).map_err(|e| match e {
        Error::Json(source) => Error::Parse {
            path: path.to_owned(),
            source,
        }
        .into(),
        other => other.into(),
    })
}

fn cmd_bda_check(args: &BdaCheckArgs, seed: u64, format: Format) -> CmdResult<Outcome> {
    if format == Format::Csv {
        return Err(csv_unsupported("bda-check"));
    }
    let inst = if args.random {
        let Some(&[c, c5, cp, h, w]) = args.dims.as_deref() else {
            return Err(usage("--dims takes five values: C,C5,Cp,H,W"));
        };
        let dims = BdaDims::new(c, c5, cp, h, w);
        BdaInstance::random(&dims, seed)?
    } else {
        let (Some(p), Some(c), Some(prm)) = (&args.p_i, &args.c5, &args.params) else {
            return Err(usage(
                "give either --random --dims C,C5,Cp,H,W or --p-i, --c5 and --params",
            ));
        };
        let params: BdaParams = parse_json(prm, &read_file(prm)?)?;
        BdaInstance {
            p_i: load_map(p)?,
            c5: load_map(c)?,
            params,
        }
    };
    let upstream = match &args.upstream {
        Some(p) => load_map(p)?,
        None => bda::default_upstream(inst.p_i.dims()),
    };
    let report = bda::grad_check_with_upstream(&inst.p_i, &inst.c5, &inst.params, &upstream, args.tolerance)?;
    Ok(Outcome {
        body: to_json(&report)?,
        warnings: vec![],
    })
}

fn dispatch(cli: &Cli, stdin: &mut dyn Read) -> CmdResult<Outcome> {
    match &cli.command {
        Command::Assign(a) => cmd_assign(a, cli.format, stdin),
        Command::Evaluate(a) => cmd_evaluate(a, cli.format),
        Command::Stats(a) => cmd_stats(a, cli.format),
        Command::Split(a) => cmd_split(a, cli.seed, cli.format),
        Command::Synth(a) => cmd_synth(a, cli.seed, cli.format),
        Command::BdaCheck(a) => cmd_bda_check(a, cli.seed, cli.format),
    }
}

fn report_failure(f: &Failure, stderr: &mut dyn Write) {
    let body = serde_json::json!({
        "error": { "kind": f.kind, "message": f.message, "exit_code": f.code }
    });
    let _ = writeln!(stderr, "{body}");
}

/// Runs the CLI against explicit streams and returns the exit code.
pub fn run_with<I, T>(argv: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{}", e.render());
                return EXIT_OK;
            }
            report_failure(&usage(e.render().to_string().trim_end()), stderr);
            return EXIT_USAGE;
        }
    };
    let outcome = match dispatch(&cli, stdin) {
        Ok(o) => o,
        Err(f) => {
            report_failure(&f, stderr);
            return f.code;
        }
    };
    for w in &outcome.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    let written = match &cli.output {
        Some(p) => write_file(p, &outcome.body),
        None => stdout
            .write_all(&outcome.body)
            .map_err(|e| Error::io("<stdout>", e).into()),
    };
    match written {
        Ok(()) => EXIT_OK,
        Err(f) => {
            report_failure(&f, stderr);
            f.code
        }
    }
}

/// Runs the CLI on the process streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdin.lock(), &mut stdout.lock(), &mut stderr.lock())
}
