use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rtfbeam::beamformer::DEFAULT_MVDR_LOADING;
use rtfbeam::commands::{
    self, BeamformConfig, BeampatternConfig, EstimateConfig, EvaluateConfig, PatternSource, SimulateConfig,
};
use rtfbeam::covariance::DEFAULT_LOADING;
use rtfbeam::io::WavFormat;
use rtfbeam::pipeline::{Method, PipelineConfig};
use rtfbeam::rtf::{ArraySide, DEFAULT_BETA};
use rtfbeam::simulator::Motion;
use rtfbeam::stft::StftConfig;

const DEFAULT_OUT: &str = "rtfbeam-out";

#[derive(Parser)]
#[command(version, about = "RTF tracking, MVDR beamforming and moving-speaker simulation")]
struct Cli {
    /// Root directory for outputs.
    #[arg(long, global = true, env = "RTFBEAM_OUT", default_value = DEFAULT_OUT)]
    root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render scenario bundles with consecutive seeds.
    Simulate(SimulateArgs),
    /// Estimate left- and right-referenced RTF trajectories for a bundle.
    EstimateRtf(EstimateArgs),
    /// Beamform a bundle mixture into a two-channel output.
    Beamform(BeamformArgs),
    /// Export narrowband and wideband beampatterns of a bundle.
    Beampattern(BeampatternArgs),
    /// Sweep scenarios x SNRs x methods into a results table.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Pcm16,
    Float32,
}

impl From<FormatArg> for WavFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Pcm16 => WavFormat::Pcm16,
            FormatArg::Float32 => WavFormat::Float32,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Left,
    Right,
    Both,
}

impl SideArg {
    fn sides(self) -> Vec<ArraySide> {
        match self {
            SideArg::Left => vec![ArraySide::Left],
            SideArg::Right => vec![ArraySide::Right],
            SideArg::Both => ArraySide::BOTH.to_vec(),
        }
    }
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// PAST forgetting factor in (0, 1].
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    /// Leading noise-only frames [default: taken from the ground truth].
    #[arg(long)]
    noise_frames: Option<usize>,
    /// Diagonal loading before whitening, relative to the mean noise eigenvalue.
    #[arg(long, default_value_t = DEFAULT_LOADING)]
    loading: f64,
    /// Diagonal loading inside the MVDR weights, relative to the mean noise eigenvalue.
    #[arg(long, default_value_t = DEFAULT_MVDR_LOADING)]
    mvdr_loading: f64,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            stft: StftConfig::default(),
            noise_frames: self.noise_frames,
            beta: self.beta,
            loading: self.loading,
            mvdr_loading: self.mvdr_loading,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// First scenario seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of bundles.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Mixture SNR in dB at the left reference microphone.
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    snr: f64,
    /// Keep the target at its start angle.
    #[arg(long = "static")]
    static_source: bool,
    #[arg(long, value_enum, default_value = "float32")]
    format: FormatArg,
    /// STFT window length in samples.
    #[arg(long, default_value_t = 512)]
    window_len: usize,
    /// STFT hop in samples.
    #[arg(long, default_value_t = 256)]
    hop: usize,
    /// Output directory [default: <root>/scenes].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Bundle directory.
    bundle: PathBuf,
    #[arg(long, default_value = "past")]
    method: Method,
    /// Skip scoring against the ground truth.
    #[arg(long)]
    no_mse: bool,
    /// Output directory [default: the bundle].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct BeamformArgs {
    /// Bundle directory.
    bundle: PathBuf,
    #[arg(long, default_value = "past")]
    method: Method,
    #[arg(long, value_enum, default_value = "float32")]
    format: FormatArg,
    /// Results table to add the metrics row to.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Output directory [default: the bundle].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct BeampatternArgs {
    /// Bundle directory.
    bundle: PathBuf,
    #[arg(long, default_value = "past", conflicts_with = "steer")]
    method: Method,
    /// Use fixed delay-and-sum weights toward this angle (degrees) instead.
    #[arg(long, allow_negative_numbers = true)]
    steer: Option<f64>,
    #[arg(long, value_enum, default_value = "both")]
    side: SideArg,
    #[arg(long, default_value_t = -90.0, allow_negative_numbers = true)]
    angle_start: f64,
    #[arg(long, default_value_t = 90.0, allow_negative_numbers = true)]
    angle_stop: f64,
    /// Angle grid step in degrees.
    #[arg(long, default_value_t = 1.0)]
    angle_step: f64,
    /// Add per-bin rows to the CSV (large).
    #[arg(long)]
    narrowband_csv: bool,
    /// Output directory [default: the bundle].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of bundles, or a single bundle [default: <root>/scenes].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated SNRs in dB.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "-10,0,10,20,30",
        allow_negative_numbers = true
    )]
    snr: Vec<f64>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "cw-batch,past,oracle,none")]
    methods: Vec<Method>,
    /// Skip beampattern DOA scoring.
    #[arg(long)]
    no_doa: bool,
    /// Output directory [default: <root>/eval].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn fmt_db(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.2} dB"))
}

fn run(cli: Cli) -> rtfbeam::Result<ExitCode> {
    match cli.command {
        Command::Simulate(a) => {
            let config = SimulateConfig {
                out: a.out.unwrap_or_else(|| cli.root.join("scenes")),
                seed: a.seed,
                count: a.count,
                snr_db: a.snr,
                motion: if a.static_source {
                    Motion::Static
                } else {
                    Motion::Moving
                },
                format: a.format.into(),
                stft: StftConfig {
                    window_len: a.window_len,
                    hop: a.hop,
                    ..StftConfig::default()
                },
            };
            for dir in commands::cmd_simulate(&config)? {
                println!("{}", dir.display());
            }
        }
        Command::EstimateRtf(a) => {
            let s = commands::cmd_estimate_rtf(&EstimateConfig {
                bundle: a.bundle,
                method: a.method,
                out: a.out,
                pipeline: a.pipeline.config(),
                mse: !a.no_mse,
            })?;
            println!(
                "{}: mse left {}, right {}",
                s.method,
                fmt_db(s.rtf_mse_left_db),
                fmt_db(s.rtf_mse_right_db)
            );
            for f in s.files {
                println!("{}", f.display());
            }
        }
        Command::Beamform(a) => {
            let s = commands::cmd_beamform(&BeamformConfig {
                bundle: a.bundle,
                method: a.method,
                out: a.out,
                pipeline: a.pipeline.config(),
                format: a.format.into(),
                report: a.report,
            })?;
            println!("{}", s.output.display());
            if let Some(r) = s.report {
                println!(
                    "si-sdr left {} (input {}), right {} (input {})",
                    fmt_db(r.si_sdr_left),
                    fmt_db(r.si_sdr_input_left),
                    fmt_db(r.si_sdr_right),
                    fmt_db(r.si_sdr_input_right)
                );
            }
        }
        Command::Beampattern(a) => {
            let source = match a.steer {
                Some(deg) => PatternSource::Steer(deg),
                None => PatternSource::Method(a.method),
            };
            let s = commands::cmd_beampattern(&BeampatternConfig {
                bundle: a.bundle,
                source,
                sides: a.side.sides(),
                angle_start: a.angle_start,
                angle_stop: a.angle_stop,
                angle_step: a.angle_step,
                narrowband_csv: a.narrowband_csv,
                out: a.out,
                pipeline: a.pipeline.config(),
            })?;
            for side in &s.sides {
                if let Some(d) = &side.doa {
                    println!(
                        "{}: mean DOA error {:.2} deg, {:.0}% of frames within 10 deg",
                        side.side.name(),
                        d.mean_deg,
                        100.0 * d.fraction_within(10.0)
                    );
                }
            }
            for f in s.files {
                println!("{}", f.display());
            }
        }
        Command::Evaluate(a) => {
            let out = a.out.unwrap_or_else(|| cli.root.join("eval"));
            let s = commands::cmd_evaluate(&EvaluateConfig {
                data: a.data.unwrap_or_else(|| cli.root.join("scenes")),
                out: out.clone(),
                snrs: a.snr,
                methods: a.methods,
                pipeline: a.pipeline.config(),
                doa: !a.no_doa,
            })?;
            println!(
                "{} computed, {} skipped, {} failed -> {}",
                s.computed,
                s.skipped,
                s.failed,
                out.join(commands::RESULTS_CSV).display()
            );
            if s.failed > 0 {
                eprintln!("error: {} runs failed, see the status column", s.failed);
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
