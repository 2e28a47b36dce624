//! Circuit models of the appliance classes.
//!
//! Each model exposes a pure trial evaluation (`trial_current`) used inside
//! the coupling solve and a committing step (`load_current`) that advances
//! internal state once the terminal voltage for the sample is settled.
//! All models are integrated implicitly or with a step far below their
//! time constants, so 400 samples per period is stable for every default
//! parameter set.

use core::f64::consts::PI;
use core::fmt;

use rand::Rng as _;

use crate::seed::Rng;

/// The eleven appliance labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LoadClass {
    Usb,
    BatteryCharger4A,
    BatteryCharger800mA,
    Fan,
    Hairdryer,
    LedBulb,
    LedSpotlight,
    Incandescents,
    Laptop,
    Monitor,
    SolderingIron,
}

/// On/off, finite-state, continuously variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplianceType {
    I,
    II,
    III,
}

impl LoadClass {
    pub const COUNT: usize = 11;

    pub const ALL: [LoadClass; 11] = [
        LoadClass::Usb,
        LoadClass::BatteryCharger4A,
        LoadClass::BatteryCharger800mA,
        LoadClass::Fan,
        LoadClass::Hairdryer,
        LoadClass::LedBulb,
        LoadClass::LedSpotlight,
        LoadClass::Incandescents,
        LoadClass::Laptop,
        LoadClass::Monitor,
        LoadClass::SolderingIron,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<LoadClass> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            LoadClass::Usb => "USB",
            LoadClass::BatteryCharger4A => "batterycharger4A",
            LoadClass::BatteryCharger800mA => "batterycharger800mA",
            LoadClass::Fan => "fan",
            LoadClass::Hairdryer => "hairdryer",
            LoadClass::LedBulb => "ledbulb",
            LoadClass::LedSpotlight => "ledspotlight",
            LoadClass::Incandescents => "INCANDESCENTS",
            LoadClass::Laptop => "laptop",
            LoadClass::Monitor => "monitor",
            LoadClass::SolderingIron => "solderingiron",
        }
    }

    pub fn from_label(s: &str) -> Option<LoadClass> {
        Self::ALL.iter().copied().find(|c| c.label() == s)
    }

    pub fn appliance_type(self) -> ApplianceType {
        use LoadClass::*;
        match self {
            Usb | BatteryCharger4A | BatteryCharger800mA | Laptop => ApplianceType::III,
            Fan => ApplianceType::II,
            Hairdryer | LedBulb | LedSpotlight | Incandescents | Monitor | SolderingIron => {
                ApplianceType::I
            }
        }
    }
}

impl fmt::Display for LoadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for LoadClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for LoadClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <alloc::string::String as serde::Deserialize>::deserialize(d)?;
        LoadClass::from_label(&s)
            .ok_or_else(|| serde::de::Error::custom(alloc::format!("unknown load class `{s}`")))
    }
}

/// DC-side consumer behind a rectifier.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum DcDraw {
    /// Switch-mode converter: constant power above `undervoltage` volts,
    /// resistive below it.
    ConstantPower { power: f64, undervoltage: f64 },
    Resistive { resistance: f64 },
}

impl DcDraw {
    fn current(&self, v_dc: f64, scale: f64) -> f64 {
        let v = v_dc.max(0.0);
        match *self {
            DcDraw::ConstantPower {
                power,
                undervoltage,
            } => {
                let p = power * scale;
                if v >= undervoltage {
                    p / v
                } else {
                    p * v / (undervoltage * undervoltage)
                }
            }
            DcDraw::Resistive { resistance } => scale * v / resistance,
        }
    }
}

/// Per-instance electrical parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoadParams {
    Resistive {
        resistance: f64,
    },
    /// Filament whose resistance moves between cold and hot values with a
    /// first-order thermal state.
    Incandescent {
        hot_resistance: f64,
        cold_resistance: f64,
        rated_power: f64,
        time_constant: f64,
    },
    /// Series R-L winding; `speed` is the fan's discrete setting.
    Motor {
        resistance: f64,
        inductance: f64,
        speed: u8,
    },
    /// Bridge rectifier with series resistance feeding a smoothing capacitor.
    Rectifier {
        series_resistance: f64,
        capacitance: f64,
        draw: DcDraw,
    },
    /// Bridge rectifier charging a battery through a series resistance,
    /// line-referred. EMF rises linearly with state of charge.
    Charger {
        series_resistance: f64,
        emf_empty: f64,
        emf_full: f64,
        full_charge_time: f64,
    },
}

/// Internal state; fields a model does not use stay at their defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadState {
    pub capacitor_voltage: f64,
    pub inductor_current: f64,
    pub previous_voltage: f64,
    pub filament_temperature: f64,
    pub state_of_charge: f64,
    /// Multiplier on the DC-side draw, moved by usage drift.
    pub draw_scale: f64,
}

impl Default for LoadState {
    fn default() -> Self {
        LoadState {
            capacitor_voltage: 0.0,
            inductor_current: 0.0,
            previous_voltage: 0.0,
            filament_temperature: 1.0,
            state_of_charge: 0.0,
            draw_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadError {
    /// A state variable left its admissible range.
    NumericalOverflow {
        class: LoadClass,
        what: &'static str,
        value: f64,
    },
    InvalidTimeStep(f64),
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::NumericalOverflow { class, what, value } => {
                write!(f, "{class}: {what} out of bounds ({value})")
            }
            LoadError::InvalidTimeStep(dt) => write!(f, "time step must be > 0, got {dt}"),
        }
    }
}

impl core::error::Error for LoadError {}

/// Capacitor voltages above this are treated as a blown-up integration.
pub const CAPACITOR_VOLTAGE_LIMIT: f64 = 2.0 * 230.0 * core::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadInstance {
    pub class: LoadClass,
    pub params: LoadParams,
    pub state: LoadState,
    /// Relative size of usage drift steps; zero disables drift.
    pub drift_magnitude: f64,
}

/// Rectifier step: returns (line current, new capacitor voltage).
#[inline]
fn rectifier_step(
    v: f64,
    dt: f64,
    series_resistance: f64,
    capacitance: f64,
    draw: &DcDraw,
    state: &LoadState,
) -> (f64, f64) {
    let vc = state.capacitor_voltage;
    let i_dc = draw.current(vc, state.draw_scale);
    let discharged = (vc - dt * i_dc / capacitance).max(0.0);
    let mag = v.abs();
    if mag > discharged {
        let k = dt / (series_resistance * capacitance);
        let vc_new = (vc + dt / capacitance * (mag / series_resistance - i_dc)) / (1.0 + k);
        let i = (mag - vc_new) / series_resistance;
        (i.copysign(v), vc_new)
    } else {
        (0.0, discharged)
    }
}

impl LoadInstance {
    pub fn new(class: LoadClass, params: LoadParams) -> Self {
        LoadInstance {
            class,
            params,
            state: LoadState::default(),
            drift_magnitude: 0.0,
        }
    }

    /// A plain resistor, tagged with the resistive `hairdryer` class.
    pub fn resistor(resistance: f64) -> Self {
        Self::new(LoadClass::Hairdryer, LoadParams::Resistive { resistance })
    }

    /// Current the load would draw at terminal voltage `v` over the next
    /// step, without committing any state.
    #[inline]
    pub fn trial_current(&self, v: f64, dt: f64) -> f64 {
        match &self.params {
            LoadParams::Resistive { resistance } => v / resistance,
            LoadParams::Incandescent {
                hot_resistance,
                cold_resistance,
                ..
            } => {
                let r = cold_resistance
                    + (hot_resistance - cold_resistance) * self.state.filament_temperature;
                v / r
            }
            LoadParams::Motor {
                resistance,
                inductance,
                ..
            } => {
                let a = resistance * dt / (2.0 * inductance);
                let b = dt / (2.0 * inductance);
                ((1.0 - a) * self.state.inductor_current + b * (self.state.previous_voltage + v))
                    / (1.0 + a)
            }
            LoadParams::Rectifier {
                series_resistance,
                capacitance,
                draw,
            } => rectifier_step(v, dt, *series_resistance, *capacitance, draw, &self.state).0,
            LoadParams::Charger {
                series_resistance,
                emf_empty,
                emf_full,
                ..
            } => {
                let emf = emf_empty + (emf_full - emf_empty) * self.state.state_of_charge;
                let mag = v.abs();
                if mag > emf {
                    ((mag - emf) / series_resistance).copysign(v)
                } else {
                    0.0
                }
            }
        }
    }

    /// Draws current at voltage `v` for one step of length `dt` and advances
    /// the internal state.
    pub fn load_current(&mut self, v: f64, dt: f64) -> Result<f64, LoadError> {
        if !(dt > 0.0) {
            return Err(LoadError::InvalidTimeStep(dt));
        }
        let i = match self.params {
            LoadParams::Resistive { .. } | LoadParams::Charger { .. } => self.trial_current(v, dt),
            LoadParams::Incandescent {
                rated_power,
                time_constant,
                ..
            } => {
                let i = self.trial_current(v, dt);
                let t = self.state.filament_temperature;
                let t = t + dt / time_constant * (v * i / rated_power - t);
                if !t.is_finite() || !(0.0..=100.0).contains(&t) {
                    return Err(self.overflow("filament temperature", t));
                }
                self.state.filament_temperature = t;
                i
            }
            LoadParams::Motor { .. } => {
                let i = self.trial_current(v, dt);
                self.state.inductor_current = i;
                self.state.previous_voltage = v;
                if !i.is_finite() {
                    return Err(self.overflow("inductor current", i));
                }
                i
            }
            LoadParams::Rectifier {
                series_resistance,
                capacitance,
                ref draw,
            } => {
                let (i, vc) =
                    rectifier_step(v, dt, series_resistance, capacitance, draw, &self.state);
                if !vc.is_finite() || vc > CAPACITOR_VOLTAGE_LIMIT {
                    return Err(self.overflow("capacitor voltage", vc));
                }
                self.state.capacitor_voltage = vc;
                i
            }
        };
        if !i.is_finite() {
            return Err(self.overflow("current", i));
        }
        Ok(i)
    }

    fn overflow(&self, what: &'static str, value: f64) -> LoadError {
        LoadError::NumericalOverflow {
            class: self.class,
            what,
            value,
        }
    }

    /// Usage drift over `elapsed` seconds. Only continuously variable
    /// (type III) loads move; everything else is returned untouched.
    pub fn drift(&mut self, elapsed: f64, rng: &mut Rng) {
        if elapsed <= 0.0
            || self.drift_magnitude <= 0.0
            || self.class.appliance_type() != ApplianceType::III
        {
            return;
        }
        let d = self.drift_magnitude;
        match self.params {
            LoadParams::Charger {
                series_resistance,
                emf_empty,
                emf_full,
                full_charge_time,
            } => {
                // Charge rate follows the closed-form charging power, which
                // falls as the EMF climbs towards the supply peak.
                let soc = self.state.state_of_charge;
                let p_now = charger_power_ratio(emf_empty, emf_full, soc, series_resistance);
                let noise = 1.0 + d * (2.0 * rng.gen::<f64>() - 1.0);
                let step = elapsed / full_charge_time * p_now * noise.max(0.0);
                self.state.state_of_charge = (soc + step).clamp(0.0, 1.0);
            }
            _ => {
                let horizon = libm::fmin(elapsed / DRIFT_TIME_SCALE, 1.0);
                let step = d * libm::sqrt(horizon) * (2.0 * rng.gen::<f64>() - 1.0);
                self.state.draw_scale = (self.state.draw_scale + step).clamp(1.0 - d, 1.0 + d);
            }
        }
    }

    /// Whether the state satisfies its admissible ranges.
    pub fn state_is_valid(&self) -> bool {
        let s = &self.state;
        s.capacitor_voltage.is_finite()
            && s.capacitor_voltage >= 0.0
            && s.capacitor_voltage <= CAPACITOR_VOLTAGE_LIMIT
            && s.inductor_current.is_finite()
            && s.filament_temperature.is_finite()
            && (0.0..=1.0).contains(&s.state_of_charge)
            && s.draw_scale.is_finite()
    }
}

/// Seconds over which a full drift step accumulates.
pub const DRIFT_TIME_SCALE: f64 = 600.0;

/// Mean charging power of a line-referred battery charger driven by an uncut
/// sine of peak `v_peak`, in watts: conduction happens while the sine is
/// above the EMF.
pub fn charger_power(v_peak: f64, emf: f64, series_resistance: f64) -> f64 {
    let m = emf / v_peak;
    if m >= 1.0 {
        return 0.0;
    }
    let m = m.max(0.0);
    let t1 = libm::asin(m);
    let shape = (PI - 2.0 * t1) / 2.0 + libm::sin(2.0 * t1) / 2.0 - 2.0 * m * libm::cos(t1);
    v_peak * v_peak / (PI * series_resistance) * shape
}

/// Charging power at `soc` relative to the power at empty. The peak voltage
/// cancels for a fixed EMF-to-peak ratio, so the rated peak stands in.
fn charger_power_ratio(emf_empty: f64, emf_full: f64, soc: f64, r: f64) -> f64 {
    let v_peak = RATED_PEAK;
    let emf = emf_empty + (emf_full - emf_empty) * soc;
    let p0 = charger_power(v_peak, emf_empty, r);
    if p0 <= 0.0 {
        0.0
    } else {
        charger_power(v_peak, emf, r) / p0
    }
}

pub(crate) const RATED_PEAK: f64 = 230.0 * core::f64::consts::SQRT_2;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{rms, simulate_period, CutoffRatio, SupplyConfig};

    #[test]
    fn labels_round_trip() {
        for c in LoadClass::ALL {
            assert_eq!(LoadClass::from_label(c.label()), Some(c));
            assert_eq!(LoadClass::from_index(c.index()), Some(c));
        }
        assert_eq!(LoadClass::ALL.len(), LoadClass::COUNT);
        let type3 = LoadClass::ALL
            .iter()
            .filter(|c| c.appliance_type() == ApplianceType::III)
            .count();
        assert_eq!(type3, 4);
        assert_eq!(LoadClass::Fan.appliance_type(), ApplianceType::II);
    }

    #[test]
    fn resistive_is_ohmic() {
        let mut r = LoadInstance::resistor(100.0);
        assert_eq!(r.load_current(230.0, 5e-5).unwrap(), 2.3);
        assert_eq!(r.load_current(0.0, 5e-5).unwrap(), 0.0);
        assert!(matches!(
            r.load_current(1.0, 0.0),
            Err(LoadError::InvalidTimeStep(_))
        ));
    }

    #[test]
    fn rectifier_blocks_when_capacitor_is_above_line() {
        let draw = DcDraw::Resistive { resistance: 10_000.0 };
        let mut l = LoadInstance::new(
            LoadClass::LedBulb,
            LoadParams::Rectifier {
                series_resistance: 50.0,
                capacitance: 2e-6,
                draw,
            },
        );
        l.state.capacitor_voltage = 300.0;
        let dt = 5e-5;
        let i = l.load_current(290.0, dt).unwrap();
        assert_eq!(i, 0.0);
        // Only the DC load drains the capacitor.
        let expected = 300.0 - dt * (300.0 / 10_000.0) / 2e-6;
        assert!((l.state.capacitor_voltage - expected).abs() < 1e-12);
    }

    #[test]
    fn rectifier_conducts_with_line_polarity() {
        let l = LoadInstance::new(
            LoadClass::Laptop,
            LoadParams::Rectifier {
                series_resistance: 5.0,
                capacitance: 50e-6,
                draw: DcDraw::ConstantPower {
                    power: 60.0,
                    undervoltage: 120.0,
                },
            },
        );
        let i_pos = l.trial_current(100.0, 5e-5);
        let i_neg = l.trial_current(-100.0, 5e-5);
        assert!(i_pos > 0.0);
        assert_eq!(i_neg, -i_pos);
    }

    #[test]
    fn motor_reaches_phasor_steady_state() {
        let cfg = SupplyConfig::ideal();
        let (r, l) = (850.0, 2.0);
        let mut bank = [LoadInstance::new(
            LoadClass::Fan,
            LoadParams::Motor {
                resistance: r,
                inductance: l,
                speed: 0,
            },
        )];
        let mut last = 0.0;
        for _ in 0..50 {
            let tr = simulate_period(&mut bank, CutoffRatio::UNCUT, &cfg).unwrap();
            last = rms(&tr.i_total).unwrap();
        }
        let w = 2.0 * PI * 50.0;
        let expected = 230.0 / libm::sqrt(r * r + (w * l) * (w * l));
        assert!((last - expected).abs() / expected < 0.01, "{last} vs {expected}");
    }

    #[test]
    fn charger_closed_form_matches_simulation() {
        let cfg = SupplyConfig::ideal();
        let (r, emf) = (40.0, 260.0);
        let mut bank = [LoadInstance::new(
            LoadClass::BatteryCharger4A,
            LoadParams::Charger {
                series_resistance: r,
                emf_empty: emf,
                emf_full: emf + 40.0,
                full_charge_time: 3600.0,
            },
        )];
        let tr = simulate_period(&mut bank, CutoffRatio::UNCUT, &cfg).unwrap();
        let p = crate::waveform::real_power(&tr.v_load, &tr.i_total).unwrap();
        let expected = charger_power(cfg.peak_voltage(), emf, r);
        assert!((p - expected).abs() / expected < 1e-3, "{p} vs {expected}");
    }

    #[test]
    fn non_drifting_types_are_unchanged() {
        let mut rng = crate::seed::rng(3);
        let mut l = LoadInstance::new(
            LoadClass::LedBulb,
            LoadParams::Rectifier {
                series_resistance: 50.0,
                capacitance: 2e-6,
                draw: DcDraw::Resistive { resistance: 1e4 },
            },
        );
        l.drift_magnitude = 0.3;
        let before = l;
        l.drift(10_000.0, &mut rng);
        assert_eq!(l, before);

        let mut usb = LoadInstance::new(LoadClass::Usb, before.params);
        usb.drift_magnitude = 0.3;
        let snapshot = usb;
        usb.drift(0.0, &mut rng);
        assert_eq!(usb, snapshot);
        usb.drift(600.0, &mut rng);
        assert_ne!(usb.state.draw_scale, 1.0);
        assert!((0.7..=1.3).contains(&usb.state.draw_scale));
    }

    #[test]
    fn resistor_with_no_voltage_draws_nothing() {
        let cfg = SupplyConfig::ideal();
        let mut l = LoadInstance::resistor(33.0);
        let dt = cfg.dt();
        for _ in 0..cfg.samples_per_period {
            assert_eq!(l.load_current(0.0, dt).unwrap(), 0.0);
        }
    }
}
