use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::SeriesDataset;
use crate::rng::{self, tag};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Waveform {
    Sine,
    Square,
    Sawtooth,
}

impl Waveform {
    /// Unit-amplitude periodic shape at phase angle `theta`.
    pub fn eval(self, theta: f64) -> f64 {
        match self {
            Waveform::Sine => theta.sin(),
            Waveform::Square => {
                if theta.sin() >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Waveform::Sawtooth => {
                let u = theta / (2.0 * PI);
                2.0 * (u - u.floor()) - 1.0
            }
        }
    }
}

/// Changes applied to every row of domain 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    pub offset: f64,
    pub freq_scale: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        DomainShift {
            offset: 0.0,
            freq_scale: 1.0,
        }
    }
}

/// Factor-controlled univariate generator:
/// `x_t = a·wave(2π f t / T + φ) + s·t/T + ε_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub window: usize,
    /// Discrete amplitude levels, drawn uniformly.
    pub amplitudes: Vec<f64>,
    /// Cycles per window, drawn uniformly from `[lo, hi]`.
    pub freq_range: (f64, f64),
    pub phase_range: (f64, f64),
    pub slope_range: (f64, f64),
    /// The waveform index is the class label.
    pub waveforms: Vec<Waveform>,
    pub noise_std: f64,
    pub shift: DomainShift,
    pub samples_per_domain: usize,
    /// 1 or 2; rows of domain 1 receive `shift`.
    pub domains: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            window: 128,
            amplitudes: vec![0.5, 1.0, 1.5, 2.0],
            freq_range: (1.0, 8.0),
            phase_range: (0.0, 2.0 * PI),
            slope_range: (-1.0, 1.0),
            waveforms: vec![Waveform::Sine, Waveform::Square, Waveform::Sawtooth],
            noise_std: 0.1,
            shift: DomainShift::default(),
            samples_per_domain: 1000,
            domains: 1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(format!("invalid synthetic spec: {m}")));
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.window == 0 || self.samples_per_domain == 0 {
            return bad("window and samples per domain must be positive".into());
        }
        if self.amplitudes.is_empty() || self.amplitudes.iter().any(|a| !a.is_finite()) {
            return bad("amplitude levels must be finite and nonempty".into());
        }
        if !range_ok(self.freq_range) || self.freq_range.0 < 1.0 {
            return bad(format!("frequency range {:?} must lie at or above 1 cycle", self.freq_range));
        }
        if !range_ok(self.phase_range) || !range_ok(self.slope_range) {
            return bad("phase and slope ranges must be finite with lo <= hi".into());
        }
        if self.waveforms.is_empty() {
            return bad("waveform set is empty".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise std {} must be >= 0", self.noise_std));
        }
        if !(1..=2).contains(&self.domains) {
            return bad(format!("{} domains requested, only 1 or 2 supported", self.domains));
        }
        if !(self.shift.offset.is_finite() && self.shift.freq_scale.is_finite()) {
            return bad("domain shift must be finite".into());
        }
        if self.domains == 2 && self.freq_range.0 * self.shift.freq_scale < 1.0 {
            return bad("frequency scaling drops below 1 cycle per window".into());
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Generates `samples_per_domain` windows per domain. Factor rows hold
/// `(amplitude, frequency, phase, slope, class)` before any domain shift.
pub fn synth_generate(spec: &SynthSpec) -> Result<SeriesDataset> {
    spec.validate()?;
    let t_len = spec.window;
    let n = spec.samples_per_domain * spec.domains;
    let mut windows = Vec::with_capacity(n * t_len);
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut domains = Vec::with_capacity(n);
    let mut factors = Vec::with_capacity(n);
    for domain in 0..spec.domains {
        let (offset, scale) = if domain == 1 {
            (spec.shift.offset, spec.shift.freq_scale)
        } else {
            (0.0, 1.0)
        };
        for i in 0..spec.samples_per_domain {
            let mut r = rng::stream(spec.seed, &[tag::ROW, domain as u64, i as u64]);
            let a = spec.amplitudes[r.random_range(0..spec.amplitudes.len())];
            let f = draw(&mut r, spec.freq_range);
            let phi = draw(&mut r, spec.phase_range);
            let s = draw(&mut r, spec.slope_range);
            let class = r.random_range(0..spec.waveforms.len());
            let wave = spec.waveforms[class];
            for t in 0..t_len {
                let u = t as f64 / t_len as f64;
                let eps: f64 = StandardNormal.sample(&mut r);
                windows.push(a * wave.eval(2.0 * PI * f * scale * u + phi) + s * u + spec.noise_std * eps + offset);
            }
            ids.push(format!("d{domain}-{i}"));
            labels.push(Some(class));
            domains.push(domain);
            factors.push(vec![a, f, phi, s, class as f64]);
        }
    }
    SeriesDataset::new(t_len, 1, windows, ids, labels, domains)?.with_factors(factors)
}
