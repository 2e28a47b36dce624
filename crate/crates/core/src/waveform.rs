//! Phase-cut mains supply and the per-sample solve of a parallel load bank
//! sitting behind a finite source resistance.
//!
//! Sample `k` of a period sits at phase `2πk/S`. A sample whose cell
//! `[k - ½, k + ½]` straddles a switching instant carries the RMS of the
//! conducting part of that cell, so sums of squares integrate the cut sine
//! without a half-sample bias at the edge.

use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};
use core::fmt;

use crate::loads::{LoadError, LoadInstance};

/// Which end of each half-period the dimmer removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum EdgeMode {
    /// Triac style: the start of every half-period is blanked.
    #[default]
    Leading,
    /// The end of every half-period is blanked.
    Trailing,
}

/// Settings for the damped fixed-point solve on the load voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SolverSettings {
    pub damping: f64,
    /// Tolerance on the change of total current between iterates, amperes.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            damping: 0.5,
            tolerance: 1e-9,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SupplyConfig {
    /// Hz.
    pub mains_frequency: f64,
    /// Volts RMS of the uncut sine.
    pub nominal_rms_voltage: f64,
    pub samples_per_period: usize,
    /// Ohms between the ideal source and the load bank.
    pub source_resistance: f64,
    pub edge_mode: EdgeMode,
    pub solver: SolverSettings,
}

impl Default for SupplyConfig {
    fn default() -> Self {
        SupplyConfig {
            mains_frequency: 50.0,
            nominal_rms_voltage: 230.0,
            samples_per_period: 400,
            source_resistance: 0.5,
            edge_mode: EdgeMode::Leading,
            solver: SolverSettings::default(),
        }
    }
}

impl SupplyConfig {
    /// An ideal (zero impedance) source with otherwise default settings.
    pub fn ideal() -> Self {
        SupplyConfig {
            source_resistance: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), WaveformError> {
        let bad = |field: &'static str| Err(WaveformError::InvalidConfig(field));
        if !(self.mains_frequency > 0.0 && self.mains_frequency.is_finite()) {
            return bad("mains_frequency must be > 0");
        }
        if !(self.nominal_rms_voltage > 0.0 && self.nominal_rms_voltage.is_finite()) {
            return bad("nominal_rms_voltage must be > 0");
        }
        if self.samples_per_period < 100 {
            return bad("samples_per_period must be >= 100");
        }
        if !(self.source_resistance >= 0.0 && self.source_resistance.is_finite()) {
            return bad("source_resistance must be >= 0");
        }
        let s = &self.solver;
        if !(s.damping > 0.0 && s.damping <= 1.0) {
            return bad("solver.damping must be in (0, 1]");
        }
        if !(s.tolerance > 0.0) || s.max_iterations == 0 {
            return bad("solver.tolerance and solver.max_iterations must be positive");
        }
        Ok(())
    }

    pub fn peak_voltage(&self) -> f64 {
        SQRT_2 * self.nominal_rms_voltage
    }

    /// Integration step, seconds.
    pub fn dt(&self) -> f64 {
        1.0 / (self.mains_frequency * self.samples_per_period as f64)
    }

    pub fn period(&self) -> f64 {
        1.0 / self.mains_frequency
    }
}

/// Fraction of each half-period during which the dimmer disconnects the load.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "f64", into = "f64"))]
pub struct CutoffRatio(f64);

impl CutoffRatio {
    pub const UNCUT: CutoffRatio = CutoffRatio(0.0);

    pub fn new(ratio: f64) -> Result<Self, WaveformError> {
        if (0.0..1.0).contains(&ratio) {
            Ok(CutoffRatio(ratio))
        } else {
            Err(WaveformError::InvalidCutoff(ratio))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for CutoffRatio {
    type Error = WaveformError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        CutoffRatio::new(v)
    }
}

impl From<CutoffRatio> for f64 {
    fn from(c: CutoffRatio) -> f64 {
        c.0
    }
}

/// Load voltage and total line current for one AC period.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PeriodTrace {
    pub v_load: Vec<f64>,
    pub i_total: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WaveformError {
    InvalidConfig(&'static str),
    InvalidCutoff(f64),
    EmptyInput,
    LengthMismatch { left: usize, right: usize },
}

impl fmt::Display for WaveformError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaveformError::InvalidConfig(why) => write!(f, "invalid supply config: {why}"),
            WaveformError::InvalidCutoff(r) => write!(f, "cutoff ratio {r} outside [0, 1)"),
            WaveformError::EmptyInput => f.write_str("empty input"),
            WaveformError::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
        }
    }
}

impl core::error::Error for WaveformError {}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    EmptyBank,
    /// The per-sample fixed point did not settle within the iteration cap.
    NonConvergence { sample: usize, residual: f64 },
    Load(LoadError),
    Config(WaveformError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::EmptyBank => f.write_str("load bank is empty"),
            SimError::NonConvergence { sample, residual } => write!(
                f,
                "coupling solve did not converge at sample {sample} (last current change {residual:e} A)"
            ),
            SimError::Load(e) => write!(f, "load model failure: {e}"),
            SimError::Config(e) => e.fmt(f),
        }
    }
}

impl core::error::Error for SimError {}

impl From<LoadError> for SimError {
    fn from(e: LoadError) -> Self {
        SimError::Load(e)
    }
}

impl From<WaveformError> for SimError {
    fn from(e: WaveformError) -> Self {
        SimError::Config(e)
    }
}

/// Integral of `sin²(2πx/S)` over the conducting part of the cell centred
/// on `k`, or `None` when the whole cell conducts.
fn conducting_energy(k: usize, cutoff: CutoffRatio, cfg: &SupplyConfig) -> Option<f64> {
    let alpha = cutoff.get();
    if alpha == 0.0 {
        return None;
    }
    let s = cfg.samples_per_period as f64;
    let half = s / 2.0;
    let blank = alpha * half;
    let (on_start, on_end) = match cfg.edge_mode {
        EdgeMode::Leading => (blank, half),
        EdgeMode::Trailing => (0.0, half - blank),
    };
    let x = k as f64;
    let n = libm::floor(x / half);
    let antiderivative = |t: f64| t / 2.0 - s / (8.0 * PI) * libm::sin(4.0 * PI * t / s);
    let mut covered = 0.0;
    let mut energy = 0.0;
    for m in [n - 1.0, n, n + 1.0] {
        let base = m * half;
        let a = libm::fmax(x - 0.5, base + on_start);
        let b = libm::fmin(x + 0.5, base + on_end);
        if b > a {
            covered += b - a;
            energy += antiderivative(b) - antiderivative(a);
        }
    }
    if covered >= 1.0 {
        None
    } else {
        Some(energy.max(0.0))
    }
}

/// Open-circuit voltage of the dimmed supply at sample `k`.
pub fn open_circuit_voltage(sample_index: usize, cutoff: CutoffRatio, cfg: &SupplyConfig) -> f64 {
    let s = cfg.samples_per_period;
    let k = sample_index % s;
    // Reduce to the positive half-period so zero crossings are exact and
    // the negative half mirrors the positive one bit for bit.
    let v = if 2 * k < s {
        cfg.peak_voltage() * libm::sin(2.0 * PI * k as f64 / s as f64)
    } else {
        let x = k as f64 - s as f64 / 2.0;
        -cfg.peak_voltage() * libm::sin(2.0 * PI * x / s as f64)
    };
    match conducting_energy(k, cutoff, cfg) {
        None => v,
        Some(_) if v == 0.0 => 0.0,
        // Edge cells carry the exact energy of their conducting part.
        Some(e) => libm::copysign(cfg.peak_voltage() * libm::sqrt(e), v),
    }
}

/// One period of open-circuit samples.
pub fn open_circuit_period(cutoff: CutoffRatio, cfg: &SupplyConfig) -> Vec<f64> {
    (0..cfg.samples_per_period)
        .map(|k| open_circuit_voltage(k, cutoff, cfg))
        .collect()
}

pub fn rms(samples: &[f64]) -> Result<f64, WaveformError> {
    if samples.is_empty() {
        return Err(WaveformError::EmptyInput);
    }
    let ms = samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64;
    Ok(libm::sqrt(ms))
}

pub fn real_power(v: &[f64], i: &[f64]) -> Result<f64, WaveformError> {
    if v.len() != i.len() {
        return Err(WaveformError::LengthMismatch {
            left: v.len(),
            right: i.len(),
        });
    }
    if v.is_empty() {
        return Err(WaveformError::EmptyInput);
    }
    Ok(v.iter().zip(i).map(|(a, b)| a * b).sum::<f64>() / v.len() as f64)
}

/// Running sums for the per-period RMS and real-power readings.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PeriodAccumulator {
    vv: f64,
    ii: f64,
    vi: f64,
    n: usize,
}

impl PeriodAccumulator {
    fn push(&mut self, v: f64, i: f64) {
        self.vv += v * v;
        self.ii += i * i;
        self.vi += v * i;
        self.n += 1;
    }

    /// (RMS voltage, RMS current, real power)
    pub(crate) fn finish(&self) -> (f64, f64, f64) {
        let n = self.n as f64;
        (
            libm::sqrt(self.vv / n),
            libm::sqrt(self.ii / n),
            self.vi / n,
        )
    }
}

/// Precomputed open-circuit period, reused across periods with the same cutoff.
pub(crate) struct Drive {
    pub(crate) v_open: Vec<f64>,
}

impl Drive {
    pub(crate) fn new(cutoff: CutoffRatio, cfg: &SupplyConfig) -> Self {
        Drive {
            v_open: open_circuit_period(cutoff, cfg),
        }
    }
}

fn bank_current(bank: &[LoadInstance], v: f64, dt: f64) -> f64 {
    bank.iter().map(|l| l.trial_current(v, dt)).sum()
}

/// Steps the bank through one period of `drive`, calling `sink(v_load, i_total)`
/// for every sample.
pub(crate) fn step_period(
    bank: &mut [LoadInstance],
    drive: &Drive,
    cfg: &SupplyConfig,
    mut sink: impl FnMut(f64, f64),
) -> Result<(), SimError> {
    if bank.is_empty() {
        return Err(SimError::EmptyBank);
    }
    let dt = cfg.dt();
    let rs = cfg.source_resistance;
    let SolverSettings {
        damping,
        tolerance,
        max_iterations,
    } = cfg.solver;
    for (k, &v_open) in drive.v_open.iter().enumerate() {
        let v = if rs == 0.0 {
            v_open
        } else {
            // Start from the ideal-source voltage minus the drop the loads
            // would cause at that voltage.
            let mut v = v_open;
            let mut i_prev = bank_current(bank, v, dt);
            v -= rs * i_prev;
            let mut converged = false;
            let mut delta = f64::INFINITY;
            for _ in 0..max_iterations {
                let i_now = bank_current(bank, v, dt);
                delta = libm::fabs(i_now - i_prev);
                if delta <= tolerance {
                    converged = true;
                    break;
                }
                i_prev = i_now;
                v += damping * (v_open - rs * i_now - v);
            }
            if !converged {
                return Err(SimError::NonConvergence {
                    sample: k,
                    residual: delta,
                });
            }
            v
        };
        let mut i_total = 0.0;
        for load in bank.iter_mut() {
            i_total += load.load_current(v, dt)?;
        }
        sink(v, i_total);
    }
    Ok(())
}

pub(crate) fn accumulate_period(
    bank: &mut [LoadInstance],
    drive: &Drive,
    cfg: &SupplyConfig,
) -> Result<PeriodAccumulator, SimError> {
    let mut acc = PeriodAccumulator::default();
    step_period(bank, drive, cfg, |v, i| acc.push(v, i))?;
    Ok(acc)
}

/// Simulates one AC period of `bank` under the dimmed supply. Load states are
/// advanced in place.
pub fn simulate_period(
    bank: &mut [LoadInstance],
    cutoff: CutoffRatio,
    cfg: &SupplyConfig,
) -> Result<PeriodTrace, SimError> {
    cfg.validate()?;
    let drive = Drive::new(cutoff, cfg);
    let mut trace = PeriodTrace {
        v_load: Vec::with_capacity(cfg.samples_per_period),
        i_total: Vec::with_capacity(cfg.samples_per_period),
    };
    step_period(bank, &drive, cfg, |v, i| {
        trace.v_load.push(v);
        trace.i_total.push(i);
    })?;
    Ok(trace)
}
