use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rfdvc::codec::{decode_all, encode_batch, Bitstream, CodecParams};
use rfdvc::harness::{self, Check, ExperimentConfig, RunConfig};
use rfdvc::pnm;
use rfdvc::scene::{write_scenario, SceneSpec, MAX_BATCH_LEN};
use rfdvc::types::{Environment, FrameRole, Traffic};
use rfdvc::{Error, Result};

#[derive(Parser)]
#[command(name = "rfdvc", version, about = "Delta video coding against a shared background model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scenario to PPM frames and PGM ground-truth masks.
    Gen(GenArgs),
    /// Encode or decode a batch of frames with the block codec.
    #[command(subcommand)]
    Codec(CodecCommand),
    /// Run one batch through encoder, channel and decoder.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the scenario grid and write per-run and summary CSVs.
    Grid(ExperimentArgs),
    /// Sweep BLER targets and write SSIM curves.
    Sweep(ExperimentArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "noon")]
    condition: Environment,
    #[arg(long, default_value = "sparse")]
    traffic: Traffic,
    #[arg(long, default_value_t = MAX_BATCH_LEN)]
    frames: u32,
    /// Place one object covering the whole view.
    #[arg(long)]
    full_occluder: bool,
}

#[derive(Subcommand)]
enum CodecCommand {
    Encode {
        /// Directory of PPM frames, taken in natural file-name order. Frames
        /// whose sides are not multiples of 16 are padded by repeating the
        /// last row and column.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = CodecParams::default().quant_step)]
        q: u32,
        #[arg(long, default_value_t = CodecParams::default().gop_len)]
        gop: u32,
        #[arg(long, default_value_t = CodecParams::default().slice_rows)]
        slice_rows: u32,
        /// Only encode files whose name ends with this suffix.
        #[arg(long, default_value = ".ppm")]
        suffix: String,
    },
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
    /// Evaluate the acceptance checks; exit nonzero if any fails.
    #[arg(long)]
    check: bool,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Returns `Ok(false)` when a requested check failed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen(a) => {
            let mut spec = SceneSpec {
                batch_len: a.frames,
                full_occluder: a.full_occluder,
                ..SceneSpec::for_condition(a.seed, a.condition, a.traffic)
            };
            if let Some(seed) = harness::seed_from_env()? {
                spec = SceneSpec { seed, background_id: seed % 7, ..spec };
            }
            let dir = write_scenario(&a.out, &spec)?;
            println!("{}", dir.display());
            Ok(true)
        }
        Command::Codec(CodecCommand::Encode { input, out, q, gop, slice_rows, suffix }) => {
            let params = CodecParams { quant_step: q, gop_len: gop, slice_rows };
            let frames = load_frames(&input, &suffix)?;
            let bits = encode_batch(&frames, &params)?;
            fs::write(&out, bits.bytes())?;
            println!("{} frames, {} bytes", frames.len(), bits.total_bytes());
            Ok(true)
        }
        Command::Codec(CodecCommand::Decode { input, out }) => {
            let bits = Bitstream::parse(fs::read(&input)?)?;
            let decoded = decode_all(&bits)?;
            fs::create_dir_all(&out)?;
            for (t, f) in decoded.frames.iter().enumerate() {
                pnm::save_ppm(out.join(format!("{t}.ppm")), f)?;
            }
            println!("{} frames", decoded.frames.len());
            Ok(true)
        }
        Command::Run { config, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = harness::seed_from_env()? {
                cfg.scene.seed = seed;
            }
            let result = harness::run_single(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&result.report)?);
            Ok(true)
        }
        Command::Grid(a) => {
            let cfg = experiment(&a)?;
            let out = harness::run_grid(&cfg, a.jobs)?;
            println!(
                "{} runs, {} failed, written to {}",
                out.rows.len(),
                out.failures(),
                cfg.output_dir.display()
            );
            Ok(!a.check || report_checks(&harness::check_grid(&cfg, &out)))
        }
        Command::Sweep(a) => {
            let cfg = experiment(&a)?;
            let out = harness::sweep_bler(&cfg, a.jobs)?;
            for p in out.curves.weathers.iter().chain(&out.curves.rain) {
                println!("{} bler {} ssim {:.4}", p.variant, p.bler_target, p.ssim_rec_mean);
            }
            Ok(!a.check || report_checks(&harness::check_sweep(&cfg, &out)))
        }
    }
}

fn experiment(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    cfg.apply_seed_env()?;
    if let Some(out) = &a.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn report_checks(checks: &[Check]) -> bool {
    for c in checks {
        println!("{c}");
    }
    checks.iter().all(|c| c.passed)
}

/// Sort key that orders `2_cav.ppm` before `10_cav.ppm`.
fn natural_key(name: &str) -> (u64, String) {
    let digits: String = name.chars().take_while(char::is_ascii_digit).collect();
    (digits.parse().unwrap_or(u64::MAX), name.to_owned())
}

fn load_frames(dir: &Path, suffix: &str) -> Result<Vec<rfdvc::types::Frame>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(suffix) && n.ends_with(".ppm"))
        .collect();
    names.sort_by_key(|n| natural_key(n));
    if names.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no *{suffix} frames in {}",
            dir.display()
        )));
    }
    names
        .iter()
        .map(|n| pnm::frame_from_image(&pnm::load_ppm(dir.join(n))?, FrameRole::Cav))
        .collect()
}
