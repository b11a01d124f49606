//! Subcommands of the `rtfbeam` binary, operating on scenario bundles.
//!
//! A bundle is a directory with fixed file names:
//!
//! | file | content |
//! |---|---|
//! | `bundle.json` | mixing SNR, STFT configuration, WAV sample format |
//! | `scenario.json` | the [`Scenario`] that produced the bundle |
//! | `ground_truth.json` | [`TruthMeta`]: per-frame DOA, activity, source position |
//! | `doa.csv` | `frame,time_s,doa_deg,active` |
//! | `mixture.wav` | M-channel mixture at the bundle SNR |
//! | `clean.wav` | M-channel clean target image |
//! | `noise.wav` | M-channel babble before SNR scaling |
//! | `clean_left.wav`, `clean_right.wav` | clean target at the two reference microphones |
//! | `rtf_true_left.rtf`, `rtf_true_right.rtf` | analytic RTF trajectories |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::beamformer::{self, BeampatternGrid, SPEED_OF_SOUND};
use crate::error::{Error, Result};
use crate::io::{self, Audio, WavFormat};
use crate::metrics::{self, DoaError};
use crate::par;
use crate::pipeline::{self, EvalOptions, EvalReport, Method, PipelineConfig};
use crate::rtf::{self, ArraySide};
use crate::simulator::{self, GroundTruth, Motion, Scenario, Scene, TruthMeta};
use crate::stft::StftConfig;
use crate::tensor_io::{self, TensorKind};

pub const BUNDLE_JSON: &str = "bundle.json";
pub const SCENARIO_JSON: &str = "scenario.json";
pub const TRUTH_JSON: &str = "ground_truth.json";
pub const DOA_CSV: &str = "doa.csv";
pub const MIXTURE_WAV: &str = "mixture.wav";
pub const CLEAN_WAV: &str = "clean.wav";
pub const NOISE_WAV: &str = "noise.wav";
pub const RESULTS_CSV: &str = "results.csv";

fn clean_ref_wav(side: ArraySide) -> String {
    format!("clean_{}.wav", side.name())
}

fn true_rtf_file(side: ArraySide) -> String {
    format!("rtf_true_{}.rtf", side.name())
}

/// Directory name of the bundle for `seed`.
pub fn bundle_name(seed: u64) -> String {
    format!("scene_{seed:06}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleInfo {
    pub snr_db: f64,
    pub stft: StftConfig,
    pub format: WavFormat,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    io::write_bytes_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn require_dir(dir: &Path, what: &str) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", dir.display())))
    }
}

fn write_doa_csv(path: &Path, meta: &TruthMeta) -> Result<()> {
    io::write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["frame", "time_s", "doa_deg", "active"])?;
        for l in 0..meta.frames {
            csv.write_record([
                l.to_string(),
                meta.frame_time_s[l].to_string(),
                meta.doa_deg[l].to_string(),
                u8::from(meta.active[l]).to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })
}

/// Writes every file of a bundle into `dir`.
pub fn write_bundle(dir: &Path, scenario: &Scenario, scene: &Scene, info: &BundleInfo) -> Result<()> {
    fs::create_dir_all(dir)?;
    let rate = scenario.sample_rate_hz;
    let audio = |channels: Vec<Vec<f64>>| Audio {
        sample_rate: rate,
        channels,
    };
    write_json(&dir.join(BUNDLE_JSON), info)?;
    write_json(&dir.join(SCENARIO_JSON), scenario)?;
    write_json(&dir.join(TRUTH_JSON), &scene.truth.meta)?;
    write_doa_csv(&dir.join(DOA_CSV), &scene.truth.meta)?;
    io::write_wav(&dir.join(MIXTURE_WAV), &audio(scene.mixture(info.snr_db)?), info.format)?;
    io::write_wav(&dir.join(CLEAN_WAV), &audio(scene.clean.clone()), info.format)?;
    io::write_wav(&dir.join(NOISE_WAV), &audio(scene.noise.clone()), info.format)?;
    for side in ArraySide::BOTH {
        io::write_wav(
            &dir.join(clean_ref_wav(side)),
            &audio(vec![scene.truth.clean(side).to_vec()]),
            info.format,
        )?;
        tensor_io::write_rtf(&dir.join(true_rtf_file(side)), scene.truth.rtf(side), &info.stft)?;
    }
    Ok(())
}

/// A bundle read back from disk. Ground truth is optional so that
/// externally recorded mixtures can be processed too.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub info: BundleInfo,
    pub scenario: Scenario,
    pub mixture: Vec<Vec<f64>>,
    pub clean: Option<Vec<Vec<f64>>>,
    pub truth: Option<GroundTruth>,
}

impl Bundle {
    pub fn load(dir: &Path) -> Result<Self> {
        require_dir(dir, "bundle")?;
        for name in [BUNDLE_JSON, SCENARIO_JSON, MIXTURE_WAV] {
            if !dir.join(name).is_file() {
                return Err(Error::Config(format!("bundle {} has no {name}", dir.display())));
            }
        }
        let info: BundleInfo = read_json(&dir.join(BUNDLE_JSON))?;
        info.stft.validate()?;
        let scenario: Scenario = read_json(&dir.join(SCENARIO_JSON))?;
        scenario.validate()?;
        let mixture = io::read_wav_at(&dir.join(MIXTURE_WAV), info.stft.sample_rate_hz)?.channels;
        if mixture.len() != scenario.array.count {
            return Err(Error::Shape(format!(
                "mixture has {} channels, the scenario array {}",
                mixture.len(),
                scenario.array.count
            )));
        }

        let has_truth = [TRUTH_JSON, CLEAN_WAV]
            .into_iter()
            .map(String::from)
            .chain(ArraySide::BOTH.map(true_rtf_file))
            .all(|name| dir.join(name).is_file());
        let (clean, truth) = if has_truth {
            let clean = io::read_wav_at(&dir.join(CLEAN_WAV), info.stft.sample_rate_hz)?.channels;
            if clean.len() != mixture.len() || clean[0].len() != mixture[0].len() {
                return Err(Error::Shape("clean image does not match the mixture".into()));
            }
            let meta: TruthMeta = read_json(&dir.join(TRUTH_JSON))?;
            let (rtf_left, _) = tensor_io::read_rtf(&dir.join(true_rtf_file(ArraySide::Left)))?;
            let (rtf_right, _) = tensor_io::read_rtf(&dir.join(true_rtf_file(ArraySide::Right)))?;
            let truth = GroundTruth {
                meta,
                rtf_left,
                rtf_right,
                clean_left: clean[0].clone(),
                clean_right: clean[clean.len() - 1].clone(),
            };
            (Some(clean), Some(truth))
        } else {
            (None, None)
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            info,
            scenario,
            mixture,
            clean,
            truth,
        })
    }

    pub fn truth(&self) -> Result<&GroundTruth> {
        self.truth
            .as_ref()
            .ok_or_else(|| Error::Config(format!("bundle {} has no ground truth", self.dir.display())))
    }

    /// Clean image, babble and ground truth, for re-mixing at other SNRs.
    pub fn scene(&self) -> Result<Scene> {
        let truth = self.truth()?.clone();
        let clean = self.clean.clone().unwrap_or_default();
        let noise = io::read_wav_at(&self.dir.join(NOISE_WAV), self.info.stft.sample_rate_hz)?.channels;
        if noise.len() != clean.len() || noise[0].len() != clean[0].len() {
            return Err(Error::Shape("noise does not match the clean image".into()));
        }
        Ok(Scene { clean, noise, truth })
    }

    /// Noise-only frame count: the override if given, else the ground truth.
    pub fn noise_frames(&self, config: &PipelineConfig) -> Result<usize> {
        match (config.noise_frames, &self.truth) {
            (Some(n), _) => Ok(n),
            (None, Some(t)) => Ok(t.meta.noise_frames),
            (None, None) => Err(Error::Config(
                "bundle has no ground truth; pass the noise frame count explicitly".into(),
            )),
        }
    }

    fn pipeline_config(&self, config: &PipelineConfig) -> PipelineConfig {
        PipelineConfig {
            stft: self.info.stft,
            ..config.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub count: usize,
    pub snr_db: f64,
    pub motion: Motion,
    pub format: WavFormat,
    pub stft: StftConfig,
}

/// Renders `count` scenarios with consecutive seeds; returns the bundle directories.
pub fn cmd_simulate(config: &SimulateConfig) -> Result<Vec<PathBuf>> {
    config.stft.validate()?;
    if config.count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    if !config.snr_db.is_finite() {
        return Err(Error::Config(format!("SNR must be finite, got {}", config.snr_db)));
    }
    if config.stft.sample_rate_hz != simulator::SAMPLE_RATE_HZ {
        return Err(Error::Config(format!(
            "the simulator renders at {} Hz",
            simulator::SAMPLE_RATE_HZ
        )));
    }
    let info = BundleInfo {
        snr_db: config.snr_db,
        stft: config.stft,
        format: config.format,
    };
    let seeds: Vec<u64> = (0..config.count as u64)
        .map(|i| {
            config
                .seed
                .checked_add(i)
                .ok_or_else(|| Error::Config("seed range overflows u64".into()))
        })
        .collect::<Result<_>>()?;
    par::map_slice(&seeds, |&seed| -> Result<PathBuf> {
        let mut scenario = simulator::sample_scenario(seed);
        scenario.source.motion = config.motion;
        let scene = simulator::render_scene(&scenario, &config.stft)?;
        let dir = config.out.join(bundle_name(seed));
        write_bundle(&dir, &scenario, &scene, &info)?;
        info!("wrote {}", dir.display());
        Ok(dir)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone)]
pub struct EstimateConfig {
    pub bundle: PathBuf,
    pub method: Method,
    /// Output directory; defaults to the bundle itself.
    pub out: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    /// Score against the ground truth and write the per-frame MSE table.
    pub mse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateSummary {
    pub method: Method,
    pub rtf_mse_left_db: Option<f64>,
    pub rtf_mse_right_db: Option<f64>,
    pub files: Vec<PathBuf>,
}

/// Estimates left- and right-referenced RTF trajectories for a bundle.
pub fn cmd_estimate_rtf(config: &EstimateConfig) -> Result<EstimateSummary> {
    if config.method == Method::None {
        return Err(Error::Config("method 'none' produces no RTF".into()));
    }
    let bundle = Bundle::load(&config.bundle)?;
    let cfg = bundle.pipeline_config(&config.pipeline);
    cfg.validate()?;
    if config.mse || config.method == Method::Oracle {
        bundle.truth()?;
    }
    let out = config.out.clone().unwrap_or_else(|| bundle.dir.clone());
    let front = pipeline::prepare(&bundle.mixture, bundle.noise_frames(&cfg)?, &cfg)?;

    let mut files = Vec::new();
    let mut per_frame = Vec::new();
    let mut mse = [None, None];
    for (i, side) in ArraySide::BOTH.into_iter().enumerate() {
        let a = pipeline::estimate_rtf(&front, config.method, side, &cfg, bundle.truth.as_ref())?
            .ok_or_else(|| Error::Config("method produced no RTF".into()))?;
        let path = out.join(format!("rtf_{}_{}.rtf", config.method, side.name()));
        tensor_io::write_rtf(&path, &a, &cfg.stft)?;
        files.push(path);
        if config.mse {
            let truth = bundle.truth()?.rtf(side);
            mse[i] = Some(rtf::rtf_mse(&a, truth)?);
            per_frame.push(rtf::rtf_mse_per_frame(&a, truth)?);
        }
    }
    if config.mse {
        let path = out.join(format!("rtf_mse_{}.csv", config.method));
        write_mse_csv(&path, &per_frame[0], &per_frame[1], &cfg.stft)?;
        files.push(path);
    }
    Ok(EstimateSummary {
        method: config.method,
        rtf_mse_left_db: mse[0],
        rtf_mse_right_db: mse[1],
        files,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-frame MSE table; empty cells mark frames without valid cells.
pub fn write_mse_csv(path: &Path, left: &[Option<f64>], right: &[Option<f64>], stft: &StftConfig) -> Result<()> {
    io::write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["frame", "time_s", "mse_left_db", "mse_right_db"])?;
        for (l, (a, b)) in left.iter().zip(right).enumerate() {
            csv.write_record([
                l.to_string(),
                stft.padded_frame_center_s(l).to_string(),
                fmt_opt(*a),
                fmt_opt(*b),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })
}

#[derive(Debug, Clone)]
pub struct BeamformConfig {
    pub bundle: PathBuf,
    pub method: Method,
    pub out: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub format: WavFormat,
    /// Results table that receives the metrics row, keyed like `evaluate`.
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformSummary {
    pub output: PathBuf,
    pub report: Option<EvalReport>,
}

/// Writes the two-channel (left, right) beamformer output of a bundle.
pub fn cmd_beamform(config: &BeamformConfig) -> Result<BeamformSummary> {
    let bundle = Bundle::load(&config.bundle)?;
    let cfg = bundle.pipeline_config(&config.pipeline);
    cfg.validate()?;
    if config.method == Method::Oracle || config.report.is_some() {
        bundle.truth()?;
    }
    let front = pipeline::prepare(&bundle.mixture, bundle.noise_frames(&cfg)?, &cfg)?;
    let mut channels = Vec::with_capacity(2);
    for side in ArraySide::BOTH {
        let a = pipeline::estimate_rtf(&front, config.method, side, &cfg, bundle.truth.as_ref())?;
        let w = pipeline::weights(&front, a.as_ref(), side, &cfg)?;
        channels.push(pipeline::enhance(&front, &w)?);
    }
    let out = config.out.clone().unwrap_or_else(|| bundle.dir.clone());
    let output = out.join(format!("enhanced_{}.wav", config.method));
    io::write_wav(
        &output,
        &Audio {
            sample_rate: cfg.stft.sample_rate_hz,
            channels,
        },
        config.format,
    )?;

    let report = match (&bundle.truth, &bundle.clean) {
        (Some(truth), Some(clean)) => {
            let detail = pipeline::evaluate_mixture(
                &bundle.mixture,
                clean,
                truth,
                &bundle.scenario,
                bundle.info.snr_db,
                config.method,
                &cfg,
                EvalOptions {
                    beamform: true,
                    doa: false,
                },
            )?;
            Some(detail.report)
        }
        _ => None,
    };
    if let (Some(path), Some(row)) = (&config.report, &report) {
        let mut rows = read_results(path)?;
        rows.insert(row.key(), row.clone());
        write_results(path, &rows)?;
    }
    Ok(BeamformSummary { output, report })
}

/// Where the beamformer weights for a beampattern come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatternSource {
    Method(Method),
    /// Fixed delay-and-sum toward this angle in degrees.
    Steer(f64),
}

impl PatternSource {
    fn tag(self) -> String {
        match self {
            PatternSource::Method(m) => m.name().to_string(),
            PatternSource::Steer(deg) => format!("steer{deg}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BeampatternConfig {
    pub bundle: PathBuf,
    pub source: PatternSource,
    pub sides: Vec<ArraySide>,
    pub angle_start: f64,
    pub angle_stop: f64,
    pub angle_step: f64,
    /// Also emit per-bin rows in the CSV.
    pub narrowband_csv: bool,
    pub out: Option<PathBuf>,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SidePattern {
    pub side: ArraySide,
    pub peak_deg: Vec<f64>,
    pub doa: Option<DoaError>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeampatternSummary {
    pub source: String,
    pub angles: usize,
    pub frames: usize,
    pub sides: Vec<SidePattern>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

/// Narrowband and wideband beampatterns as CSV and tensor files, plus a
/// `doa_<tag>.json` summary scored against the ground truth when present.
pub fn cmd_beampattern(config: &BeampatternConfig) -> Result<BeampatternSummary> {
    let angles = beamformer::angle_grid(config.angle_start, config.angle_stop, config.angle_step)?;
    if config.sides.is_empty() {
        return Err(Error::Config("no array side selected".into()));
    }
    let bundle = Bundle::load(&config.bundle)?;
    let cfg = bundle.pipeline_config(&config.pipeline);
    cfg.validate()?;
    if config.source == PatternSource::Method(Method::Oracle) {
        bundle.truth()?;
    }
    let out = config.out.clone().unwrap_or_else(|| bundle.dir.clone());
    let tag = config.source.tag();
    let front = pipeline::prepare(&bundle.mixture, bundle.noise_frames(&cfg)?, &cfg)?;

    let mut files = Vec::new();
    let mut sides = Vec::new();
    let mut frames = 0;
    for &side in &config.sides {
        let w = match config.source {
            PatternSource::Method(method) => {
                let a = pipeline::estimate_rtf(&front, method, side, &cfg, bundle.truth.as_ref())?;
                pipeline::weights(&front, a.as_ref(), side, &cfg)?
            }
            PatternSource::Steer(deg) => beamformer::delay_and_sum_weights(
                &bundle.scenario.linear_array(side),
                deg,
                &cfg.stft,
                SPEED_OF_SOUND,
                front.spec.frames(),
                side,
            )?,
        };
        let grid = pipeline::beampattern(&w, &bundle.scenario, &angles, &cfg)?;
        frames = grid.frames;
        let stem = format!("beampattern_{tag}_{}", side.name());
        let csv_path = out.join(format!("{stem}.csv"));
        write_beampattern_csv(&csv_path, &grid, config.narrowband_csv)?;
        files.push(csv_path);
        for (kind, suffix) in [(TensorKind::Wideband, "wide"), (TensorKind::Narrowband, "narrow")] {
            let path = out.join(format!("{stem}.{suffix}.bp"));
            io::write_bytes_atomic(&path, &tensor_io::encode_beampattern(&grid, kind, side, &cfg.stft)?)?;
            files.push(path);
        }
        let doa = match &bundle.truth {
            Some(t) => Some(metrics::doa_error(&grid, &t.meta.doa_deg, &t.meta.active)?),
            None => None,
        };
        sides.push(SidePattern {
            side,
            peak_deg: (0..grid.frames).map(|l| grid.peak_angle(l)).collect(),
            doa,
        });
    }
    let summary = BeampatternSummary {
        source: tag.clone(),
        angles: angles.len(),
        frames,
        sides,
        files,
    };
    let json = out.join(format!("doa_{tag}.json"));
    write_json(&json, &summary)?;
    let mut summary = summary;
    summary.files.push(json);
    Ok(summary)
}

/// Long-format beampattern table `frame,bin,angle_deg,value`. Wideband
/// rows carry `wideband` in the bin column and `P(θ, l)` as value;
/// narrowband rows carry `|B(k, θ, l)|`.
pub fn write_beampattern_csv(path: &Path, grid: &BeampatternGrid, narrowband: bool) -> Result<()> {
    io::write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["frame", "bin", "angle_deg", "value"])?;
        for l in 0..grid.frames {
            for (a, theta) in grid.angles.iter().enumerate() {
                csv.write_record([
                    l.to_string(),
                    "wideband".into(),
                    theta.to_string(),
                    grid.wide(a, l).to_string(),
                ])?;
            }
            if narrowband {
                for k in 0..grid.bins {
                    for (a, theta) in grid.angles.iter().enumerate() {
                        csv.write_record([
                            l.to_string(),
                            k.to_string(),
                            theta.to_string(),
                            grid.narrow(k, a, l).to_string(),
                        ])?;
                    }
                }
            }
        }
        csv.flush()?;
        Ok(())
    })
}

type ResultKey = (u64, String, Method);

/// Reads an `evaluate` results table; a missing file is an empty table.
pub fn read_results(path: &Path) -> Result<BTreeMap<ResultKey, EvalReport>> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = BTreeMap::new();
    for row in reader.deserialize::<EvalReport>() {
        let row = row?;
        rows.insert(row.key(), row);
    }
    Ok(rows)
}

/// Rewrites the results table sorted by scenario, SNR and method.
pub fn write_results(path: &Path, rows: &BTreeMap<ResultKey, EvalReport>) -> Result<()> {
    let mut sorted: Vec<&EvalReport> = rows.values().collect();
    sorted.sort_by(|a, b| {
        a.scenario
            .cmp(&b.scenario)
            .then(a.snr_db.total_cmp(&b.snr_db))
            .then(a.method.cmp(&b.method))
    });
    io::write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for row in sorted {
            csv.serialize(row)?;
        }
        csv.flush()?;
        Ok(())
    })
}

/// Bundle directories under `data`, sorted by name; `data` itself if it is one.
pub fn find_bundles(data: &Path) -> Result<Vec<PathBuf>> {
    require_dir(data, "data directory")?;
    if data.join(BUNDLE_JSON).is_file() {
        return Ok(vec![data.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(data)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.join(BUNDLE_JSON).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!("no bundles found in {}", data.display())));
    }
    Ok(dirs)
}

#[derive(Debug, Clone)]
pub struct EvaluateConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub snrs: Vec<f64>,
    pub methods: Vec<Method>,
    pub pipeline: PipelineConfig,
    pub doa: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvaluateSummary {
    pub computed: usize,
    pub skipped: usize,
    pub failed: usize,
}

fn detail_name(seed: u64, snr_db: f64, method: Method) -> String {
    format!(
        "{}_snr{}_{}.json",
        bundle_name(seed),
        pipeline::format_snr(snr_db),
        method
    )
}

/// Scenario × SNR × method sweep over every bundle in `data`.
///
/// Completed rows of an existing `results.csv` are kept and not recomputed;
/// failed rows are retried. The table is rewritten after every bundle.
pub fn cmd_evaluate(config: &EvaluateConfig) -> Result<EvaluateSummary> {
    config.pipeline.validate()?;
    if config.snrs.is_empty() || config.methods.is_empty() {
        return Err(Error::Config("need at least one SNR and one method".into()));
    }
    if let Some(s) = config.snrs.iter().find(|s| !s.is_finite()) {
        return Err(Error::Config(format!("SNR must be finite, got {s}")));
    }
    let bundles = find_bundles(&config.data)?;
    let results_path = config.out.join(RESULTS_CSV);
    let details = config.out.join("details");
    fs::create_dir_all(&details)?;
    let table = Mutex::new(read_results(&results_path)?);
    let options = EvalOptions {
        beamform: true,
        doa: config.doa,
    };

    let counts = par::map_slice(&bundles, |dir| -> Result<EvaluateSummary> {
        let mut counts = EvaluateSummary {
            computed: 0,
            skipped: 0,
            failed: 0,
        };
        let bundle = Bundle::load(dir)?;
        let seed = bundle.scenario.seed;
        let pending: Vec<(f64, Method)> = {
            let done = table
                .lock()
                .map_err(|_| Error::InvalidInput("results table poisoned".into()))?;
            config
                .snrs
                .iter()
                .flat_map(|&snr| config.methods.iter().map(move |&m| (snr, m)))
                .filter(|&(snr, m)| {
                    let hit = done
                        .get(&(seed, pipeline::format_snr(snr), m))
                        .is_some_and(|r| r.status == "ok");
                    counts.skipped += usize::from(hit);
                    !hit
                })
                .collect()
        };
        if pending.is_empty() {
            return Ok(counts);
        }
        let cfg = bundle.pipeline_config(&config.pipeline);
        let scene = bundle.scene()?;
        let mut rows = Vec::with_capacity(pending.len());
        for (snr, method) in pending {
            match pipeline::evaluate_scene(&scene, &bundle.scenario, snr, method, &cfg, options) {
                Ok(detail) => {
                    write_json(&details.join(detail_name(seed, snr, method)), &detail)?;
                    rows.push(detail.report);
                    counts.computed += 1;
                }
                Err(e) => {
                    warn!("{} snr {snr} {method}: {e}", dir.display());
                    rows.push(EvalReport::failed(seed, snr, method, &e));
                    counts.failed += 1;
                }
            }
        }
        let mut table = table
            .lock()
            .map_err(|_| Error::InvalidInput("results table poisoned".into()))?;
        for row in rows {
            table.insert(row.key(), row);
        }
        write_results(&results_path, &table)?;
        info!("evaluated {}", dir.display());
        Ok(counts)
    });

    let mut total = EvaluateSummary {
        computed: 0,
        skipped: 0,
        failed: 0,
    };
    let mut first_err = None;
    for c in counts {
        match c {
            Ok(c) => {
                total.computed += c.computed;
                total.skipped += c.skipped;
                total.failed += c.failed;
            }
            Err(e) => {
                warn!("bundle failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    let table = table
        .into_inner()
        .map_err(|_| Error::InvalidInput("results table poisoned".into()))?;
    write_results(&results_path, &table)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(total),
    }
}
