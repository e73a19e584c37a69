//! The `splat7d` command-line tool.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<splat7d::Error> for CliError {
    fn from(e: splat7d::Error) -> Self {
        match e {
            splat7d::Error::Config { .. } => CliError::config(e.to_string()),
            other => CliError::runtime(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "splat7d", version, about = "7D Gaussian splatting on the CPU")]
pub struct Cli {
    /// Worker threads (falls back to S7D_WORKERS, then the number of logical cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML file layered over the built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override applied last, e.g. `--set lr.opacity=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum OpacityModeArg {
    Product,
    SqrtProduct,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SlicingModeArg {
    Joint,
    TwoStage,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dynamic scene: frames, manifest and hidden cloud.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fit a cloud to a dataset; writes checkpoint.s7dc, metrics.jsonl and config.toml.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        lambda_t: Option<f64>,
        #[arg(long)]
        lambda_d: Option<f64>,
        /// Disable the residual refinement networks.
        #[arg(long)]
        no_agr: bool,
        #[arg(long, value_enum)]
        opacity_mode: Option<OpacityModeArg>,
        #[arg(long, value_enum)]
        slicing_mode: Option<SlicingModeArg>,
        /// Continue from a checkpoint instead of a random initialization.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render one image from a checkpoint (`.png` or `.s7df` by extension).
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Take the camera from this manifest's frame `--frame`.
        #[arg(long, requires = "frame")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        frame: Option<usize>,
        /// Normalized time; defaults to the manifest frame's time, else 0.
        #[arg(long)]
        time: Option<f64>,
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        eye: Option<[f64; 3]>,
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, default_value = "0,0,0")]
        target: [f64; 3],
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, default_value = "0,0,1")]
        up: [f64; 3],
        /// Horizontal field of view in degrees.
        #[arg(long, default_value_t = 50.0)]
        fov: f64,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
    },
    /// PSNR/SSIM of a checkpoint against a dataset, as a tab-separated table.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Slicing throughput and frame timings of a checkpoint.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Use this manifest's cameras; otherwise orbit the cloud.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
    },
    /// Run the built-in oracle checks; exit code 3 when any fails.
    Verify {
        /// Fewer samples, for a fast smoke run.
        #[arg(long)]
        quick: bool,
    },
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got `{s}`"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| format!("`{p}` is not a number"))?;
    }
    Ok(out)
}

fn worker_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return if n == 0 { Err(CliError::usage("--workers must be at least 1")) } else { Ok(Some(n)) };
    }
    match std::env::var("S7D_WORKERS") {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::usage(format!("S7D_WORKERS=`{v}` is not a positive integer"))),
        },
        _ => Ok(None),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = worker_count(cli.workers).and_then(|workers| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = workers {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| CliError::runtime(e.to_string()))?;
        pool.install(|| commands::dispatch(cli.command))
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
