//! `lbphy`: waveforms, spectra, mask checks and SER curves from the command
//! line, plus scenario files and reproduction presets.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lbphy_core::analytic::{lora_ser_reference, AnalyticOptions};
use lbphy_core::channel::ChannelMode;
use lbphy_core::decoder::DecoderKind;
use lbphy_core::harness::{
    analytic_curve, init_threads, load_mask, mc_ser, parse_range, parse_scenario, preset, run_scenario, trial_bins,
    ChannelSpec, FadingSpec, SerJob, TrialBudget, PRESETS,
};
use lbphy_core::spectral::{mask_check, psd_analytic};
use lbphy_core::waveform::{lb_level_index, waveform, ModulationConfig, WaveformKind};
use lbphy_core::Error;

#[derive(Parser)]
#[command(name = "lbphy", version, about = "Quantized-phase chirp backscatter PHY toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Lb,
    Lora,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Awgn,
    Fading,
    Waterfill,
}

#[derive(Clone, Copy, ValueEnum)]
enum Decoders {
    Ml,
    Fft,
}

impl From<Decoders> for DecoderKind {
    fn from(d: Decoders) -> Self {
        match d {
            Decoders::Ml => DecoderKind::Ml,
            Decoders::Fft => DecoderKind::Fft,
        }
    }
}

#[derive(clap::Args, Clone)]
struct Modulation {
    #[arg(long)]
    sf: u32,
    /// Level-count exponent: the tag switches among 2^N loads.
    #[arg(long = "n")]
    n: u32,
    #[arg(long, default_value_t = 125e3)]
    bandwidth: f64,
}

impl Modulation {
    fn config(&self) -> Result<ModulationConfig, Error> {
        ModulationConfig::new(self.sf, self.n, self.bandwidth)
    }
}

#[derive(clap::Args, Clone)]
struct Link {
    #[arg(long, value_enum, default_value = "awgn")]
    mode: Mode,
    #[arg(long, default_value_t = 2.0)]
    m1: f64,
    #[arg(long, default_value_t = 1.0)]
    m2: f64,
    /// Tag placement d2/d1 at fixed d1 + d2.
    #[arg(long, default_value_t = 1.0)]
    d_ratio: f64,
    #[arg(long)]
    monostatic: bool,
}

impl Link {
    fn channel(&self) -> ChannelSpec {
        let f = FadingSpec {
            m1: self.m1,
            m2: self.m2,
            omega1: None,
            omega2: None,
            d1: Some(1.0),
            d2: Some(self.d_ratio),
            mode: if self.monostatic { ChannelMode::Monostatic } else { ChannelMode::Bistatic },
        };
        match self.mode {
            Mode::Awgn => ChannelSpec::Awgn,
            Mode::Fading => ChannelSpec::Nakagami(f),
            Mode::Waterfill => ChannelSpec::Waterfill(f),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Samples of one symbol waveform as CSV: k, Re, Im, phase, level.
    Waveform {
        #[command(flatten)]
        modulation: Modulation,
        #[arg(long, default_value_t = 0)]
        symbol: usize,
        #[arg(long, value_enum, default_value = "lb")]
        kind: Kind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form continuous PSD as f/B and 10 log10(G B).
    Psd {
        #[command(flatten)]
        modulation: Modulation,
        /// Half-width of the range in units of B.
        #[arg(long, default_value_t = 3.5)]
        fmax: f64,
        #[arg(long, default_value_t = 4096)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Spectral lines as f/B and 10 log10(power).
        #[arg(long)]
        lines: Option<PathBuf>,
    },
    /// Checks RBW-integrated emissions against a mask.
    Mask {
        #[command(flatten)]
        modulation: Modulation,
        #[arg(long)]
        power_dbm: f64,
        #[arg(long, default_value_t = 1000.0)]
        rbw: f64,
        /// Mask file, or `etsi_g1` for the shipped mask.
        #[arg(long, default_value = "etsi_g1")]
        mask: String,
        /// Per-bin levels as offset Hz and dBm.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic SER curve as SNR dB and SER.
    Ser {
        #[command(flatten)]
        modulation: Modulation,
        #[command(flatten)]
        link: Link,
        #[arg(long, value_enum, default_value = "ml")]
        decoder: Decoders,
        /// `start:stop:step` in dB.
        #[arg(long, allow_hyphen_values = true)]
        snr_db: String,
        /// Orthogonal LoRa reference instead of the LB curve (AWGN only).
        #[arg(long)]
        lora_ref: bool,
        #[arg(long, default_value_t = 64)]
        gh_order: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo SER as SNR dB and SER; CI and counts go to stdout.
    Mc {
        #[command(flatten)]
        modulation: Modulation,
        #[command(flatten)]
        link: Link,
        #[arg(long, value_enum, default_value = "ml")]
        decoder: Decoders,
        #[arg(long, value_enum, default_value = "lb")]
        kind: Kind,
        #[arg(long, allow_hyphen_values = true)]
        snr_db: String,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 100)]
        min_errors: u64,
        #[arg(long, default_value_t = 10_000_000)]
        max_trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Writes the bin magnitudes of the first trial of every SNR point.
        #[arg(long)]
        dump_bins: Option<PathBuf>,
    },
    /// Runs a scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Runs a shipped preset (`--list` shows the ids).
    Repro {
        id: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        list: bool,
        /// Prints the preset scenario instead of running it.
        #[arg(long)]
        show: bool,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(Error::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn two_col(rows: impl IntoIterator<Item = (f64, f64)>) -> String {
    let mut s = String::new();
    for (x, y) in rows {
        writeln!(s, "{x:.10e} {y:.10e}").unwrap();
    }
    s
}

fn run(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::Waveform { modulation, symbol, kind, out } => {
            let cfg = modulation.config()?;
            let k = match kind {
                Kind::Lb => WaveformKind::Lb,
                Kind::Lora => WaveformKind::Lora,
            };
            let w = waveform(k, symbol, &cfg)?;
            let mut s = String::from("k,re,im,phase,level\n");
            for (i, v) in w.samples.iter().enumerate() {
                let level = match k {
                    WaveformKind::Lb => lb_level_index(symbol, i, &cfg).to_string(),
                    WaveformKind::Lora => String::new(),
                };
                writeln!(s, "{i},{:.17e},{:.17e},{:.17e},{level}", v.re, v.im, v.arg()).unwrap();
            }
            emit(out.as_deref(), &s)
        }
        Cmd::Psd { modulation, fmax, points, out, lines } => {
            let cfg = modulation.config()?;
            let b = cfg.bandwidth_hz;
            let spec = psd_analytic(&cfg, fmax * b, points)?;
            emit(
                out.as_deref(),
                &two_col(spec.freqs.iter().zip(&spec.continuous_psd).map(|(f, g)| (f / b, 10.0 * (g * b).log10()))),
            )?;
            if let Some(p) = lines {
                emit(Some(&p), &two_col(spec.discrete_lines.iter().map(|(f, pw)| (f / b, 10.0 * pw.log10()))))?;
            }
            Ok(())
        }
        Cmd::Mask { modulation, power_dbm, rbw, mask, out } => {
            let cfg = modulation.config()?;
            let spec = load_mask(&mask)?;
            let r = mask_check(&cfg, power_dbm, rbw, &spec)?;
            println!(
                "{} worst_margin_db={:.3} at_offset_hz={:.0} violations={}",
                if r.pass { "PASS" } else { "FAIL" },
                r.worst_margin_db,
                r.worst_offset_hz,
                r.violations.len()
            );
            if let Some(p) = out {
                emit(Some(&p), &two_col(r.bins.iter().filter(|(f, _)| *f >= 0.0).copied()))?;
            }
            Ok(())
        }
        Cmd::Ser { modulation, link, decoder, snr_db, lora_ref, gh_order, out } => {
            let grid = parse_range(&snr_db)?;
            let rows: Vec<(f64, f64)> = if lora_ref {
                grid.iter()
                    .map(|&db| lora_ser_reference(10f64.powf(db / 10.0), modulation.sf).map(|p| (db, p.ser)))
                    .collect::<Result<_, _>>()?
            } else {
                let cfg = modulation.config()?;
                let opts = AnalyticOptions { gh_order, ..Default::default() };
                analytic_curve(&cfg, decoder.into(), &link.channel(), &grid, &opts)?
                    .iter()
                    .map(|p| (p.snr_db(), p.ser))
                    .collect()
            };
            emit(out.as_deref(), &two_col(rows))
        }
        Cmd::Mc { modulation, link, decoder, kind, snr_db, trials, min_errors, max_trials, seed, out, dump_bins } => {
            let job = SerJob {
                cfg: modulation.config()?,
                family: match kind {
                    Kind::Lb => WaveformKind::Lb,
                    Kind::Lora => WaveformKind::Lora,
                },
                channel: link.channel(),
                decoders: vec![decoder.into()],
                snr_db: parse_range(&snr_db)?,
                budget: TrialBudget { trials, min_errors, max_trials },
                seed,
            };
            let pts = mc_ser(&job)?;
            println!("# snr_db ser ci_lo ci_hi errors trials");
            for p in &pts {
                let e = &p.estimates[0];
                println!(
                    "{} {:.6e} {:.6e} {:.6e} {} {}",
                    p.snr_db, e.ser_hat, e.ci_lo, e.ci_hi, e.errors_count, e.trials
                );
            }
            if let Some(path) = out {
                emit(Some(&path), &two_col(pts.iter().map(|p| (p.snr_db, p.estimates[0].ser_hat))))?;
            }
            if let Some(path) = dump_bins {
                let mut s = String::new();
                for i in 0..job.snr_db.len() {
                    let t = trial_bins(&job, i, 0)?;
                    writeln!(s, "# snr_db={} sent={} decided={}", t.snr_db, t.sent, t.decided[0]).unwrap();
                    for (k, v) in t.bins[0].iter().enumerate() {
                        writeln!(s, "{k} {v:.10e}").unwrap();
                    }
                }
                emit(Some(&path), &s)?;
            }
            Ok(())
        }
        Cmd::Run { scenario, out_dir } => {
            let sc = parse_scenario(&std::fs::read_to_string(&scenario)?)?;
            report(run_scenario(&sc, out_dir.as_deref())?);
            Ok(())
        }
        Cmd::Repro { id, out_dir, list, show } => {
            if list || id.is_none() {
                for (k, _) in PRESETS {
                    println!("{k}");
                }
                return Ok(());
            }
            let id = id.unwrap();
            if show {
                let text = PRESETS.iter().find(|(k, _)| *k == id).map(|(_, t)| *t);
                preset(&id)?;
                print!("{}", text.unwrap_or_default());
                return Ok(());
            }
            let sc = preset(&id)?;
            report(run_scenario(&sc, out_dir.as_deref())?);
            Ok(())
        }
    }
}

fn report(r: lbphy_core::harness::RunReport) {
    for f in &r.files {
        println!("{}", f.display());
    }
    println!("{}", r.sidecar.display());
    log::info!("{} finished in {:.1} s", r.name, r.elapsed_s);
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads().and_then(|_| run(cli.cmd)) {
        eprintln!("error: {e}");
        return match e {
            Error::Config { .. } | Error::Parse(_) => ExitCode::from(2),
            _ => ExitCode::from(1),
        };
    }
    ExitCode::SUCCESS
}
