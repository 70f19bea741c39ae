//! Non-coherent ML and FFT symbol decoders.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::{correlate_batch, downchirp, waveform_table, ModulationConfig, WaveformKind};

/// Decision rule applied to a received symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// Largest `|Σ_k r[k] x_i*[k]|` over the `M` candidate waveforms.
    Ml,
    /// Dechirp, DFT, largest bin magnitude.
    Fft,
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml" => Ok(Self::Ml),
            "fft" => Ok(Self::Fft),
            _ => Err(Error::Config { key: "decoder".into(), msg: format!("expected ml or fft, got {s}") }),
        }
    }
}

impl std::fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ml => "ml",
            Self::Fft => "fft",
        })
    }
}

/// Decision and per-bin magnitudes.
#[derive(Debug, Clone)]
pub struct DecoderOutput {
    pub decided_symbol: usize,
    pub bin_magnitudes: Vec<f64>,
    pub decoder_kind: DecoderKind,
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Reusable decoder holding the candidate table or FFT plan for one
/// configuration.
pub struct Decoder {
    kind: DecoderKind,
    m: usize,
    candidates: Vec<Complex64>,
    down: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Decoder {
    /// Decoder for LB waveforms.
    pub fn new(cfg: &ModulationConfig, kind: DecoderKind) -> Self {
        Self::for_family(cfg, kind, WaveformKind::Lb)
    }

    /// Decoder whose ML candidates are the given waveform family.
    pub fn for_family(cfg: &ModulationConfig, kind: DecoderKind, family: WaveformKind) -> Self {
        let m = cfg.m();
        let candidates = match kind {
            DecoderKind::Ml => waveform_table(family, cfg),
            DecoderKind::Fft => Vec::new(),
        };
        Self { kind, m, candidates, down: downchirp(m), fft: FftPlanner::new().plan_fft_forward(m) }
    }

    pub fn kind(&self) -> DecoderKind {
        self.kind
    }

    /// Bin magnitudes for a batch of received vectors laid out row-major.
    pub fn bins_batch(&self, received: &[Complex64]) -> Result<Vec<f64>> {
        if received.is_empty() || !received.len().is_multiple_of(self.m) {
            return Err(Error::Length { expected: self.m, got: received.len() });
        }
        Ok(match self.kind {
            DecoderKind::Ml => correlate_batch(received, &self.candidates, self.m).iter().map(|v| v.norm()).collect(),
            DecoderKind::Fft => {
                let mut buf: Vec<Complex64> =
                    received.iter().zip(self.down.iter().cycle()).map(|(r, d)| r * d).collect();
                self.fft.process(&mut buf);
                buf.iter().map(|v| v.norm()).collect()
            }
        })
    }

    /// Decisions for a batch of received vectors laid out row-major.
    pub fn decide_batch(&self, received: &[Complex64]) -> Result<Vec<usize>> {
        Ok(self.bins_batch(received)?.chunks(self.m).map(argmax).collect())
    }

    /// Decodes one received vector.
    pub fn decode(&self, received: &[Complex64]) -> Result<DecoderOutput> {
        if received.len() != self.m {
            return Err(Error::Length { expected: self.m, got: received.len() });
        }
        let bin_magnitudes = self.bins_batch(received)?;
        Ok(DecoderOutput { decided_symbol: argmax(&bin_magnitudes), bin_magnitudes, decoder_kind: self.kind })
    }
}

/// ML decision over the LB candidate set.
pub fn ml_decode(received: &[Complex64], cfg: &ModulationConfig) -> Result<DecoderOutput> {
    check_len(received, cfg)?;
    Decoder::new(cfg, DecoderKind::Ml).decode(received)
}

/// Dechirp-and-DFT decision.
pub fn fft_decode(received: &[Complex64], cfg: &ModulationConfig) -> Result<DecoderOutput> {
    check_len(received, cfg)?;
    Decoder::new(cfg, DecoderKind::Fft).decode(received)
}

fn check_len(received: &[Complex64], cfg: &ModulationConfig) -> Result<()> {
    if received.len() != cfg.m() {
        return Err(Error::Length { expected: cfg.m(), got: received.len() });
    }
    Ok(())
}
