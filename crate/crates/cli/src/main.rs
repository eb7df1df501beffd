//! `gcftrack`: localize or track a sound source from microphone-array audio.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gcftrack::audio_io::{load_audio, MicArrayGeometry};
use gcftrack::pipeline::{
    load_truth, map_slice, run_static, run_tracking, slice_csv, Mode, PassOne, PipelineConfig,
    RunOptions,
};
use gcftrack::scene_sim::{render, SceneSpec};
use gcftrack::smooth_eval::CoordFrame;
use gcftrack::Error;
use log::{info, warn};

const EXIT_BAD_INPUT: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;

#[derive(Parser)]
#[command(name = "gcftrack", version, about = "Sound source localization and tracking with GCC-PHAT and a coherence-field particle filter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Locate a static source and write the estimate as JSON.
    Localize {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a moving source and write the trajectory as CSV.
    Track {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        out: PathBuf,
        /// Reference trajectory CSV, with or without an `active` column.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Activity CSV (`timestamp_s,active`) for the reference.
        #[arg(long, requires = "truth")]
        activity: Option<PathBuf>,
        /// Where to write the evaluation report (JSON).
        #[arg(long, requires = "truth")]
        report: Option<PathBuf>,
        /// Where to write the front/back ratio curves (CSV).
        #[arg(long)]
        ratios: Option<PathBuf>,
        /// Overrides the configured random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured front/back threshold.
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Render a synthetic scene: audio.wav, geometry.json, truth.csv and activity.csv.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 48_000)]
        sample_rate: u32,
    },
    /// Write one horizontal slice of a cached frame's coherence field as CSV.
    DumpMap {
        /// First-pass cache written by `localize` or `track`.
        #[arg(long)]
        cache: PathBuf,
        /// Zero-based frame position in the cache.
        #[arg(long)]
        frame_index: usize,
        /// Height of the slice; the nearest grid plane is used.
        #[arg(long)]
        z: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Input {
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    geometry: PathBuf,
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for the first pass. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Also keep the first-pass cache at this path.
    #[arg(long)]
    cache: Option<PathBuf>,
}

struct Loaded {
    cfg: PipelineConfig,
    clip: gcftrack::audio_io::AudioClip,
    geometry: MicArrayGeometry,
    opts: RunOptions,
}

impl Input {
    fn load(&self, mode: Mode) -> gcftrack::Result<Loaded> {
        let cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::for_mode(mode),
        };
        if cfg.mode != mode {
            warn!("configuration is for {:?} runs but a {mode:?} run was requested", cfg.mode);
        }
        Ok(Loaded {
            cfg,
            clip: load_audio(&self.audio)?,
            geometry: MicArrayGeometry::load(&self.geometry)?,
            opts: RunOptions {
                threads: self.threads,
                cache_path: self.cache.clone(),
            },
        })
    }
}

fn write(path: &Path, text: &str) -> gcftrack::Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs a command; `Ok(true)` means the result is degenerate.
fn run(cli: Cli) -> gcftrack::Result<bool> {
    match cli.command {
        Command::Localize { input, out } => {
            let l = input.load(Mode::Static)?;
            let r = run_static(&l.cfg, &l.clip, &l.geometry, &l.opts)?;
            write(&out, &r.to_json())?;
            let p = r.position;
            println!("estimate: x = {:.3} m, y = {:.3} m, z = {:.3} m", p[0], p[1], p[2]);
            Ok(r.low_confidence)
        }
        Command::Track {
            input,
            out,
            truth,
            activity,
            report,
            ratios,
            seed,
            kappa,
        } => {
            let mut l = input.load(Mode::Tracking)?;
            if let Some(s) = seed {
                l.cfg.seed = s;
            }
            if let Some(k) = kappa {
                l.cfg.kappa = k;
                l.cfg.validate()?;
            }
            let frame = if l.geometry.is_moving() {
                CoordFrame::World
            } else {
                CoordFrame::ArrayLocal
            };
            let gt = truth
                .as_deref()
                .map(|t| load_truth(t, activity.as_deref(), frame))
                .transpose()?;
            let r = run_tracking(&l.cfg, &l.clip, &l.geometry, gt.as_ref(), &l.opts)?;
            r.trajectory.write_csv(&out)?;
            if let Some(d) = &r.turning {
                info!("front/back decision: {:?} at frame {:?}", d.kind, d.frame);
                if let Some(path) = &ratios {
                    write(path, &d.ratio_csv())?;
                }
            } else if ratios.is_some() {
                warn!("front/back stage did not run; no ratio curves written");
            }
            if let Some(rep) = &r.report {
                println!("{rep}");
                if let Some(path) = &report {
                    write(path, &rep.to_json())?;
                }
            }
            Ok(r.is_degenerate())
        }
        Command::Simulate {
            scene,
            out_dir,
            sample_rate,
        } => {
            let spec = SceneSpec::load(&scene)?;
            let s = render(&spec, sample_rate)?;
            s.write_to(&out_dir)?;
            println!(
                "rendered {:.2} s, {} channels, into {}",
                s.clip.duration(),
                s.clip.channel_count(),
                out_dir.display()
            );
            Ok(false)
        }
        Command::DumpMap {
            cache,
            frame_index,
            z,
            out,
        } => {
            let pass = PassOne::read(&cache)?;
            let slice = map_slice(&pass, frame_index, z)?;
            write(&out, &slice_csv(&slice))?;
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(EXIT_DEGENERATE),
        Err(Error::Degenerate(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DEGENERATE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_BAD_INPUT)
        }
    }
}
