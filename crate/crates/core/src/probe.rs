//! The dimming schedule and the measurement matrices it produces.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::catalog::Catalog;
use crate::loads::{LoadClass, LoadInstance};
use crate::waveform::{accumulate_period, CutoffRatio, Drive, SimError, SupplyConfig};

pub const MATRIX_ROWS: usize = 14;
pub const MATRIX_COLS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DimmingSchedule {
    pub ratios: Vec<CutoffRatio>,
    pub periods_per_ratio: usize,
    /// Uncut periods run (and discarded) before every ratio block.
    pub settle_periods: usize,
}

impl Default for DimmingSchedule {
    /// 10 % to 75 % in 5 % steps, 20 periods each, 5 settle periods.
    fn default() -> Self {
        let ratios = (0..MATRIX_ROWS)
            .map(|r| CutoffRatio::new((10 + 5 * r) as f64 / 100.0).expect("ratio in range"))
            .collect();
        DimmingSchedule {
            ratios,
            periods_per_ratio: MATRIX_COLS,
            settle_periods: 5,
        }
    }
}

impl DimmingSchedule {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.ratios.is_empty() || self.periods_per_ratio == 0 {
            return Err(ProbeError::EmptySchedule);
        }
        if self.ratios.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ProbeError::UnorderedRatios);
        }
        Ok(())
    }

    /// Total number of simulated AC periods.
    pub fn total_periods(&self) -> usize {
        self.ratios.len() * (self.settle_periods + self.periods_per_ratio)
    }
}

/// Row-major 2-D grid of readings.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Grid { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// RMS voltage, RMS current and real power per (cutoff ratio, period) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrices {
    pub v_rms: Grid,
    pub i_rms: Grid,
    pub real_power: Grid,
}

impl MeasurementMatrices {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        MeasurementMatrices {
            v_rms: Grid::zeros(rows, cols),
            i_rms: Grid::zeros(rows, cols),
            real_power: Grid::zeros(rows, cols),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.v_rms.rows, self.v_rms.cols)
    }

    /// Checks shape agreement, finiteness, non-negative RMS readings and
    /// passivity (`real_power >= -eps`).
    pub fn validate(&self, rows: usize, cols: usize, eps: f64) -> Result<(), ProbeError> {
        for g in [&self.v_rms, &self.i_rms, &self.real_power] {
            if g.rows != rows || g.cols != cols {
                return Err(ProbeError::Shape {
                    expected: (rows, cols),
                    found: (g.rows, g.cols),
                });
            }
            if g.data.iter().any(|v| !v.is_finite()) {
                return Err(ProbeError::NonFinite);
            }
        }
        if self.v_rms.data.iter().chain(&self.i_rms.data).any(|&v| v < 0.0) {
            return Err(ProbeError::NegativeRms);
        }
        if let Some(&p) = self.real_power.data.iter().find(|&&p| p < -eps) {
            return Err(ProbeError::ActivePowerInjected(p));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeError {
    EmptySchedule,
    UnorderedRatios,
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    NonFinite,
    NegativeRms,
    ActivePowerInjected(f64),
    NonPositiveScale,
    Sim(SimError),
}

impl fmt::Display for ProbeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeError::EmptySchedule => f.write_str("dimming schedule is empty"),
            ProbeError::UnorderedRatios => f.write_str("cutoff ratios must be strictly increasing"),
            ProbeError::Shape { expected, found } => write!(
                f,
                "matrix shape {}x{} where {}x{} was expected",
                found.0, found.1, expected.0, expected.1
            ),
            ProbeError::NonFinite => f.write_str("matrix holds a non-finite value"),
            ProbeError::NegativeRms => f.write_str("negative RMS reading"),
            ProbeError::ActivePowerInjected(p) => {
                write!(f, "negative real power {p} W from a passive bank")
            }
            ProbeError::NonPositiveScale => f.write_str("feature scales must be > 0"),
            ProbeError::Sim(e) => e.fmt(f),
        }
    }
}

impl core::error::Error for ProbeError {}

impl From<SimError> for ProbeError {
    fn from(e: SimError) -> Self {
        ProbeError::Sim(e)
    }
}

/// Runs the dimming schedule against `bank` and fills the three matrices.
pub fn run_probe(
    bank: &mut [LoadInstance],
    cfg: &SupplyConfig,
    sched: &DimmingSchedule,
) -> Result<MeasurementMatrices, ProbeError> {
    cfg.validate().map_err(SimError::from)?;
    sched.validate()?;
    if bank.is_empty() {
        return Err(SimError::EmptyBank.into());
    }
    let uncut = Drive::new(CutoffRatio::UNCUT, cfg);
    let mut m = MeasurementMatrices::zeros(sched.ratios.len(), sched.periods_per_ratio);
    for (r, &ratio) in sched.ratios.iter().enumerate() {
        for _ in 0..sched.settle_periods {
            accumulate_period(bank, &uncut, cfg)?;
        }
        let drive = Drive::new(ratio, cfg);
        for c in 0..sched.periods_per_ratio {
            let (v, i, p) = accumulate_period(bank, &drive, cfg)?.finish();
            m.v_rms.set(r, c, v);
            m.i_rms.set(r, c, i);
            m.real_power.set(r, c, p);
        }
    }
    Ok(m)
}

/// Per-channel divisors for the classifier input.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct FeatureScale {
    pub real_power: f64,
    pub apparent_power: f64,
}

impl FeatureScale {
    pub fn uniform(s: f64) -> Self {
        FeatureScale {
            real_power: s,
            apparent_power: s,
        }
    }
}

/// Largest uncut apparent power among the zero-jitter parameterizations of
/// `catalog`, measured over `periods` periods after a warm-up.
pub fn max_nominal_apparent_power(
    catalog: &Catalog,
    cfg: &SupplyConfig,
) -> Result<f64, ProbeError> {
    cfg.validate().map_err(SimError::from)?;
    let uncut = Drive::new(CutoffRatio::UNCUT, cfg);
    let mut best: f64 = 0.0;
    for class in LoadClass::ALL {
        for inst in catalog.nominal_instances(class) {
            let mut bank = [inst];
            for _ in 0..10 {
                accumulate_period(&mut bank, &uncut, cfg)?;
            }
            let (v, i, _) = accumulate_period(&mut bank, &uncut, cfg)?.finish();
            best = best.max(v * i);
        }
    }
    Ok(best)
}

/// Classifier input: channel 0 real power, channel 1 apparent power, each
/// divided by its scale. Stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub const CHANNELS: usize = 2;

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == Self::CHANNELS * rows * cols).then_some(FeatureTensor { rows, cols, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (Self::CHANNELS, self.rows, self.cols)
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub fn features(m: &MeasurementMatrices, scale: FeatureScale) -> Result<FeatureTensor, ProbeError> {
    if !(scale.real_power > 0.0 && scale.apparent_power > 0.0) {
        return Err(ProbeError::NonPositiveScale);
    }
    let (rows, cols) = m.shape();
    let mut data = Vec::with_capacity(2 * rows * cols);
    data.extend(m.real_power.data.iter().map(|p| p / scale.real_power));
    data.extend(
        m.v_rms
            .data
            .iter()
            .zip(&m.i_rms.data)
            .map(|(v, i)| v * i / scale.apparent_power),
    );
    Ok(FeatureTensor { rows, cols, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn small_schedule() -> DimmingSchedule {
        DimmingSchedule {
            periods_per_ratio: 4,
            settle_periods: 1,
            ..DimmingSchedule::default()
        }
    }

    #[test]
    fn default_schedule_shape() {
        let s = DimmingSchedule::default();
        assert_eq!(s.ratios.len(), 14);
        assert_eq!(s.ratios[0].get(), 0.10);
        assert_eq!(s.ratios[13].get(), 0.75);
        assert!(s.ratios.windows(2).all(|w| w[0] < w[1]));
        // 14 * 25 periods at 50 Hz is seven seconds of mains time.
        assert_eq!(s.total_periods(), 350);
        assert_eq!(s.total_periods() as f64 / 50.0, 7.0);
    }

    #[test]
    fn resistor_matrix_matches_closed_form() {
        let cfg = SupplyConfig::ideal();
        let sched = DimmingSchedule::default();
        let r = 200.0;
        let m = run_probe(&mut [LoadInstance::resistor(r)], &cfg, &sched).unwrap();
        assert_eq!(m.shape(), (14, 20));
        for (row, ratio) in sched.ratios.iter().enumerate() {
            let a = ratio.get();
            let vr2 = cfg.peak_voltage().powi(2)
                * ((1.0 - a) / 2.0 + libm::sin(2.0 * PI * a) / (4.0 * PI));
            for c in 0..20 {
                let p = m.real_power.get(row, c);
                assert!((p - vr2 / r).abs() / p < 1e-4, "row {row}: {p} vs {}", vr2 / r);
                assert_eq!(p, m.real_power.get(row, 0));
            }
        }
    }

    #[test]
    fn features_contracts() {
        let z = MeasurementMatrices::zeros(14, 20);
        let f = features(&z, FeatureScale::uniform(10.0)).unwrap();
        assert!(f.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(f.shape(), (2, 14, 20));
        assert_eq!(
            features(&z, FeatureScale::uniform(0.0)),
            Err(ProbeError::NonPositiveScale)
        );

        let cfg = SupplyConfig::ideal();
        let m = run_probe(&mut [LoadInstance::resistor(300.0)], &cfg, &small_schedule()).unwrap();
        let scale = FeatureScale {
            real_power: 100.0,
            apparent_power: 50.0,
        };
        let f = features(&m, scale).unwrap();
        for (p, s) in f.channel(0).iter().zip(f.channel(1)) {
            assert!((p - s * 50.0 / 100.0).abs() < 1e-9 * p.abs().max(1.0));
        }
    }

    #[test]
    fn validate_flags_bad_matrices() {
        let mut m = MeasurementMatrices::zeros(14, 20);
        assert!(m.validate(14, 20, 1e-9).is_ok());
        assert!(matches!(m.validate(14, 21, 1e-9), Err(ProbeError::Shape { .. })));
        m.real_power.set(3, 3, -1.0);
        assert!(matches!(
            m.validate(14, 20, 1e-9),
            Err(ProbeError::ActivePowerInjected(_))
        ));
        m.real_power.set(3, 3, f64::NAN);
        assert_eq!(m.validate(14, 20, 1e-9), Err(ProbeError::NonFinite));
    }

    #[test]
    fn schedule_validation() {
        let mut s = DimmingSchedule::default();
        s.ratios.swap(0, 1);
        assert_eq!(s.validate(), Err(ProbeError::UnorderedRatios));
        s.ratios.clear();
        assert_eq!(s.validate(), Err(ProbeError::EmptySchedule));
    }
}
