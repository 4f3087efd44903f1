//! Command-line pipeline: generate synthetic datasets, encode images, and
//! score encodings. Exit codes: 0 success, 1 I/O failure, 2 bad arguments or
//! malformed input.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lsbd::data_gen::{
    encode_images_pca, gen_perfect_embedding, gen_random_invertible, gen_square_translation,
    EmbeddingParams,
};
use lsbd::group::{FactorStructure, FrequencyVector};
use lsbd::io;
use lsbd::metric::{evaluate, EvaluateOptions, OmegaRange};
use lsbd::{Error, Result};

#[derive(Parser)]
#[command(
    name = "lsbd",
    version,
    about = "Scores how close latent encodings of a cyclic-factor dataset come to a \
             linearly disentangled (block-rotation) representation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (images or encodings) plus its manifest
    Generate(GenerateArgs),
    /// Encode an image dataset into latent vectors
    Encode(EncodeArgs),
    /// Score an encodings CSV and print a JSON report
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataset {
    /// Translating white square images (raw blob + manifest)
    Square,
    /// Exact toroidal embedding (CSV + manifest)
    Perfect,
    /// Toroidal embedding with Gaussian noise and optional linear map
    Noisy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Pca,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    dataset: Dataset,
    /// Comma-separated factor sizes, e.g. 64,64
    #[arg(long, default_value = "64,64")]
    sizes: String,
    /// Comma-separated integer frequencies, one per factor (perfect/noisy)
    #[arg(long, allow_hyphen_values = true)]
    freqs: Option<String>,
    /// RNG seed for noise (recorded in the manifest)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian noise scale (noisy only)
    #[arg(long, default_value_t = 0.1)]
    noise_sigma: f64,
    /// Apply a seeded random invertible linear map (noisy only)
    #[arg(long)]
    transform_seed: Option<u64>,
    /// Image side length in pixels (square only)
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    /// White square side length in pixels (square only)
    #[arg(long, default_value_t = 8)]
    square_size: usize,
    /// Output data file; the manifest is written next to it as <output>.json
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    /// Image dataset blob (its <input>.json manifest must exist)
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "pca")]
    method: Method,
    /// Number of latent dimensions to keep
    #[arg(long, default_value_t = 4)]
    dim: usize,
    /// Output encodings CSV; the manifest is written next to it
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Encodings CSV (a matching <input>.json manifest is checked if present)
    #[arg(long)]
    input: PathBuf,
    /// Frequency search range `lo:hi`, or one `lo:hi` per factor, comma-separated
    #[arg(long, default_value = "-10:10", allow_hyphen_values = true)]
    omega_range: String,
    /// Whiten principal components before fitting rotations
    #[arg(long)]
    whitening: bool,
    /// Include the full per-frequency loss table in the report
    #[arg(long)]
    full_table: bool,
    /// Write the report here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => generate(args),
        Command::Encode(args) => encode(args),
        Command::Evaluate(args) => evaluate_cmd(args),
    }
}

fn parse_sizes(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("{s:?} is not a factor size")))
        })
        .collect()
}

fn parse_freqs(text: &str) -> Result<Vec<i64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<i64>()
                .map_err(|_| Error::InvalidArgument(format!("{s:?} is not an integer frequency")))
        })
        .collect()
}

fn parse_ranges(text: &str) -> Result<Vec<OmegaRange>> {
    text.split(',')
        .map(|part| {
            let (lo, hi) = part
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("range {part:?} is not lo:hi")))?;
            let lo = lo.trim().parse::<i64>().map_err(|_| {
                Error::InvalidArgument(format!("{lo:?} is not an integer frequency bound"))
            })?;
            let hi = hi.trim().parse::<i64>().map_err(|_| {
                Error::InvalidArgument(format!("{hi:?} is not an integer frequency bound"))
            })?;
            OmegaRange::new(lo, hi)
        })
        .collect()
}

fn generate(args: GenerateArgs) -> Result<()> {
    let sizes = parse_sizes(&args.sizes)?;
    match args.dataset {
        Dataset::Square => {
            if sizes.len() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "the square dataset needs exactly two factor sizes, got {}",
                    sizes.len()
                )));
            }
            let grid =
                gen_square_translation(sizes[0], sizes[1], args.image_size, args.square_size)?;
            let note = format!(
                "translating {s}x{s} white square on a {i}x{i} black background, periodic wrap",
                s = args.square_size,
                i = args.image_size
            );
            io::write_image_grid(&args.output, &grid, None, Some(&note))?;
            eprintln!(
                "wrote {} images of {}x{} pixels to {}",
                grid.num_images(),
                args.image_size,
                args.image_size,
                args.output.display()
            );
        }
        Dataset::Perfect | Dataset::Noisy => {
            let fs = FactorStructure::from_sizes(&sizes)?;
            let freqs = match &args.freqs {
                Some(text) => parse_freqs(text)?,
                None => vec![1; fs.num_factors()],
            };
            let noisy = matches!(args.dataset, Dataset::Noisy);
            let params = EmbeddingParams {
                frequencies: FrequencyVector::new(freqs.clone()),
                noise_sigma: if noisy { args.noise_sigma } else { 0.0 },
                linear_transform: if noisy {
                    args.transform_seed
                        .map(|s| gen_random_invertible(2 * fs.num_factors(), s))
                        .transpose()?
                } else {
                    None
                },
            };
            let grid = gen_perfect_embedding(&fs, &params, args.seed)?;
            let note = format!(
                "toroidal embedding, frequencies {freqs:?}, noise {}, transform seed {:?}",
                params.noise_sigma, args.transform_seed
            );
            io::write_encoding_grid(&args.output, &grid, Some(args.seed), Some(&note))?;
            eprintln!(
                "wrote {} encodings of dimension {} to {}",
                grid.data().nrows(),
                grid.latent_dim(),
                args.output.display()
            );
        }
    }
    Ok(())
}

fn encode(args: EncodeArgs) -> Result<()> {
    let (images, _manifest) = io::read_image_grid(&args.input)?;
    let Method::Pca = args.method;
    let encodings = encode_images_pca(&images, args.dim)?;
    let note = format!(
        "top-{} principal-component scores of {}",
        args.dim,
        args.input.display()
    );
    io::write_encoding_grid(&args.output, &encodings, None, Some(&note))?;
    eprintln!(
        "wrote {} encodings of dimension {} to {}",
        encodings.data().nrows(),
        args.dim,
        args.output.display()
    );
    Ok(())
}

/// Worker threads for the frequency sweep: `LSBD_THREADS` caps it, otherwise
/// whatever the machine offers. The sweep result does not depend on this.
fn sweep_threads() -> Result<usize> {
    match std::env::var("LSBD_THREADS") {
        Ok(text) => match text.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::InvalidArgument(format!(
                "LSBD_THREADS is {text:?}, expected a positive integer"
            ))),
        },
        Err(std::env::VarError::NotPresent) => {
            Ok(std::thread::available_parallelism().map(usize::from).unwrap_or(1))
        }
        Err(e) => Err(Error::InvalidArgument(format!("LSBD_THREADS is unreadable: {e}"))),
    }
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let bytes = std::fs::read(&args.input)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| Error::Format(format!("{}: not UTF-8: {e}", args.input.display())))?;
    let grid = io::parse_encoding_csv(&text).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", args.input.display())),
        other => other,
    })?;
    if io::manifest_path(&args.input).exists() {
        let manifest = io::read_manifest(&args.input)?;
        io::check_encoding_manifest(&manifest, &grid)?;
    }

    let ranges = parse_ranges(&args.omega_range)?;
    let k = grid.factor_structure().num_factors();
    let resolved: Vec<OmegaRange> = if ranges.len() == 1 { vec![ranges[0]; k] } else { ranges };
    let combinations: usize = resolved.iter().map(|r| r.len()).product();
    if combinations > 1_000_000 {
        eprintln!(
            "warning: searching {combinations} frequency combinations; this may take a while"
        );
    }

    let options = EvaluateOptions { whitening: args.whitening, threads: sweep_threads()? };
    let report = evaluate(&grid, &resolved, options)?;

    let meta = io::ReportMeta {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        input_path: args.input.display().to_string(),
        input_sha256: io::sha256_hex(&bytes),
        omega_ranges: resolved,
        duration_seconds: started.elapsed().as_secs_f64(),
        include_table: args.full_table,
    };
    let rendered = io::render_report(&report, grid.factor_structure(), &meta);
    match &args.output {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}
