//! Nominal per-class parameters and jittered instantiation.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};
use core::fmt;

use rand::Rng as _;

use crate::loads::{charger_power, DcDraw, LoadClass, LoadInstance, LoadParams};
use crate::seed;

/// Relative uniform spreads applied at instantiation: a parameter `x`
/// becomes `x * (1 + s * U(-1, 1))`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct JitterSpec {
    /// Spread of the power-setting parameter.
    pub power: f64,
    /// Spread of secondary components (capacitance, series resistance,
    /// time constants, power factor).
    pub component: f64,
    /// Usage drift step size for type III loads.
    pub drift: f64,
}

impl Default for JitterSpec {
    fn default() -> Self {
        JitterSpec::NONE
    }
}

impl JitterSpec {
    pub const NONE: JitterSpec = JitterSpec {
        power: 0.0,
        component: 0.0,
        drift: 0.0,
    };

    pub fn validate(&self) -> Result<(), CatalogError> {
        for (name, v) in [
            ("power", self.power),
            ("component", self.component),
            ("drift", self.drift),
        ] {
            if !(0.0..0.5).contains(&v) {
                return Err(CatalogError::InvalidJitter(name, v));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct MotorSpeed {
    pub power: f64,
    pub power_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum DrawKind {
    /// Converter that holds its power down to `undervoltage_fraction` of the
    /// rated peak.
    ConstantPower { undervoltage_fraction: f64 },
    Resistive,
}

/// Designer-facing description of one parameterization of a class.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "model", rename_all = "snake_case", deny_unknown_fields))]
pub enum Nominal {
    Resistive {
        power: f64,
    },
    Incandescent {
        power: f64,
        /// Cold-to-hot resistance ratio.
        cold_ratio: f64,
        time_constant: f64,
    },
    Motor {
        speeds: Vec<MotorSpeed>,
    },
    Rectifier {
        power: f64,
        capacitance: f64,
        series_resistance: f64,
        draw: DrawKind,
    },
    Charger {
        /// Charging power at half charge.
        power: f64,
        /// EMF as a fraction of the rated peak at empty and full.
        emf_empty_ratio: f64,
        emf_full_ratio: f64,
        initial_soc: [f64; 2],
        full_charge_time: f64,
    },
}

impl Nominal {
    /// Headline power of this parameterization, watts.
    pub fn power(&self) -> f64 {
        match self {
            Nominal::Resistive { power }
            | Nominal::Incandescent { power, .. }
            | Nominal::Rectifier { power, .. }
            | Nominal::Charger { power, .. } => *power,
            Nominal::Motor { speeds } => {
                speeds.iter().map(|s| s.power).sum::<f64>() / speeds.len().max(1) as f64
            }
        }
    }

    /// Number of discrete operating states selectable per instance.
    fn states(&self) -> usize {
        match self {
            Nominal::Motor { speeds } => speeds.len(),
            _ => 1,
        }
    }

    fn validate(&self) -> Result<(), CatalogError> {
        let pos = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CatalogError::InvalidNominal(name))
            }
        };
        match self {
            Nominal::Resistive { power } => pos("power", *power),
            Nominal::Incandescent {
                power,
                cold_ratio,
                time_constant,
            } => {
                pos("power", *power)?;
                pos("time_constant", *time_constant)?;
                if !(*cold_ratio > 0.0 && *cold_ratio <= 1.0) {
                    return Err(CatalogError::InvalidNominal("cold_ratio"));
                }
                Ok(())
            }
            Nominal::Motor { speeds } => {
                if speeds.is_empty() {
                    return Err(CatalogError::InvalidNominal("speeds"));
                }
                for s in speeds {
                    pos("power", s.power)?;
                    if !(s.power_factor > 0.0 && s.power_factor < 1.0) {
                        return Err(CatalogError::InvalidNominal("power_factor"));
                    }
                }
                Ok(())
            }
            Nominal::Rectifier {
                power,
                capacitance,
                series_resistance,
                draw,
            } => {
                pos("power", *power)?;
                pos("capacitance", *capacitance)?;
                pos("series_resistance", *series_resistance)?;
                if let DrawKind::ConstantPower {
                    undervoltage_fraction,
                } = draw
                {
                    if !(*undervoltage_fraction > 0.0 && *undervoltage_fraction < 1.0) {
                        return Err(CatalogError::InvalidNominal("undervoltage_fraction"));
                    }
                }
                Ok(())
            }
            Nominal::Charger {
                power,
                emf_empty_ratio,
                emf_full_ratio,
                initial_soc,
                full_charge_time,
            } => {
                pos("power", *power)?;
                pos("full_charge_time", *full_charge_time)?;
                if !(0.0 < *emf_empty_ratio
                    && emf_empty_ratio <= emf_full_ratio
                    && *emf_full_ratio < 1.0)
                {
                    return Err(CatalogError::InvalidNominal("emf ratios"));
                }
                if !(0.0 <= initial_soc[0] && initial_soc[0] <= initial_soc[1] && initial_soc[1] <= 1.0)
                {
                    return Err(CatalogError::InvalidNominal("initial_soc"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ClassSpec {
    pub class: LoadClass,
    /// One entry per physical parameterization; grouped classes carry two
    /// and every instance picks one uniformly.
    pub variants: Vec<Nominal>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub jitter: JitterSpec,
}

impl ClassSpec {
    pub fn nominal_power(&self) -> f64 {
        self.variants.iter().map(Nominal::power).sum::<f64>() / self.variants.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CatalogError {
    InvalidJitter(&'static str, f64),
    InvalidNominal(&'static str),
    MissingClass(LoadClass),
    DuplicateClass(LoadClass),
    NoVariants(LoadClass),
}

impl fmt::Display for CatalogError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CatalogError::InvalidJitter(name, v) => {
                write!(f, "jitter.{name} = {v} must lie in [0, 0.5)")
            }
            CatalogError::InvalidNominal(name) => write!(f, "invalid nominal parameter `{name}`"),
            CatalogError::MissingClass(c) => write!(f, "catalog has no entry for {c}"),
            CatalogError::DuplicateClass(c) => write!(f, "catalog lists {c} twice"),
            CatalogError::NoVariants(c) => write!(f, "{c} has no variants"),
        }
    }
}

impl core::error::Error for CatalogError {}

/// Nominal description of all eleven classes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Catalog {
    /// Voltage the nominal powers refer to, volts RMS.
    pub rated_voltage: f64,
    /// Frequency the motor reactances refer to, Hz.
    pub rated_frequency: f64,
    pub classes: Vec<ClassSpec>,
}

fn spec(class: LoadClass, jitter: JitterSpec, variants: Vec<Nominal>) -> ClassSpec {
    ClassSpec {
        class,
        variants,
        jitter,
    }
}

impl Default for Catalog {
    fn default() -> Self {
        use LoadClass::*;
        let type1 = JitterSpec {
            power: 0.01,
            component: 0.05,
            drift: 0.0,
        };
        let type2 = JitterSpec {
            power: 0.02,
            component: 0.03,
            drift: 0.0,
        };
        let type3 = JitterSpec {
            power: 0.04,
            component: 0.05,
            drift: 0.1,
        };
        let smps = |power, capacitance, series_resistance, uv| Nominal::Rectifier {
            power,
            capacitance,
            series_resistance,
            draw: DrawKind::ConstantPower {
                undervoltage_fraction: uv,
            },
        };
        let linear = |power, capacitance, series_resistance| Nominal::Rectifier {
            power,
            capacitance,
            series_resistance,
            draw: DrawKind::Resistive,
        };
        let classes = vec![
            spec(
                Usb,
                type3,
                vec![smps(5.0, 4.7e-6, 22.0, 0.4), smps(10.0, 10e-6, 12.0, 0.45)],
            ),
            spec(
                BatteryCharger4A,
                type3,
                vec![Nominal::Charger {
                    power: 60.0,
                    emf_empty_ratio: 0.78,
                    emf_full_ratio: 0.90,
                    initial_soc: [0.2, 0.8],
                    full_charge_time: 8.0 * 3600.0,
                }],
            ),
            spec(
                BatteryCharger800mA,
                type3,
                vec![Nominal::Charger {
                    power: 12.0,
                    emf_empty_ratio: 0.66,
                    emf_full_ratio: 0.82,
                    initial_soc: [0.2, 0.8],
                    full_charge_time: 10.0 * 3600.0,
                }],
            ),
            spec(
                Fan,
                type2,
                vec![Nominal::Motor {
                    speeds: vec![
                        MotorSpeed {
                            power: 30.0,
                            power_factor: 0.70,
                        },
                        MotorSpeed {
                            power: 40.0,
                            power_factor: 0.78,
                        },
                        MotorSpeed {
                            power: 50.0,
                            power_factor: 0.85,
                        },
                    ],
                }],
            ),
            spec(Hairdryer, JitterSpec { power: 0.004, ..type1 }, vec![Nominal::Resistive { power: 1200.0 }]),
            spec(LedBulb, type1, vec![linear(9.0, 2.2e-6, 68.0)]),
            spec(LedSpotlight, type1, vec![linear(5.0, 1.0e-6, 120.0)]),
            spec(
                Incandescents,
                JitterSpec { power: 0.005, ..type1 },
                vec![
                    Nominal::Incandescent {
                        power: 140.0,
                        cold_ratio: 0.125,
                        time_constant: 0.12,
                    },
                    Nominal::Incandescent {
                        power: 180.0,
                        cold_ratio: 0.11,
                        time_constant: 0.16,
                    },
                ],
            ),
            spec(Laptop, type3, vec![smps(60.0, 68e-6, 3.0, 0.35)]),
            spec(Monitor, type1, vec![smps(30.0, 33e-6, 6.0, 0.6)]),
            spec(SolderingIron, type1, vec![Nominal::Resistive { power: 30.0 }]),
        ];
        Catalog {
            rated_voltage: 230.0,
            rated_frequency: 50.0,
            classes,
        }
    }
}

impl Catalog {
    /// Every class as a distinct ideal resistor with zero jitter.
    pub fn resistors(powers: [f64; LoadClass::COUNT]) -> Self {
        let classes = LoadClass::ALL
            .iter()
            .zip(powers)
            .map(|(&c, power)| spec(c, JitterSpec::NONE, vec![Nominal::Resistive { power }]))
            .collect();
        Catalog {
            classes,
            ..Catalog::default()
        }
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        if !(self.rated_voltage > 0.0) {
            return Err(CatalogError::InvalidNominal("rated_voltage"));
        }
        if !(self.rated_frequency > 0.0) {
            return Err(CatalogError::InvalidNominal("rated_frequency"));
        }
        let mut seen = [false; LoadClass::COUNT];
        for s in &self.classes {
            if core::mem::replace(&mut seen[s.class.index()], true) {
                return Err(CatalogError::DuplicateClass(s.class));
            }
            if s.variants.is_empty() {
                return Err(CatalogError::NoVariants(s.class));
            }
            s.jitter.validate()?;
            for v in &s.variants {
                v.validate()?;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(CatalogError::MissingClass(LoadClass::ALL[i]));
        }
        Ok(())
    }

    pub fn get(&self, class: LoadClass) -> Option<&ClassSpec> {
        self.classes.iter().find(|s| s.class == class)
    }

    fn rated_peak(&self) -> f64 {
        SQRT_2 * self.rated_voltage
    }

    /// A jittered instance of `class`; deterministic in `seed`.
    pub fn instantiate(&self, class: LoadClass, seed: u64) -> Result<LoadInstance, CatalogError> {
        let spec = self.get(class).ok_or(CatalogError::MissingClass(class))?;
        let mut rng = seed::rng(seed);
        let variant = if spec.variants.len() > 1 {
            rng.gen_range(0..spec.variants.len())
        } else {
            0
        };
        let nominal = &spec.variants[variant];
        let state = if nominal.states() > 1 {
            rng.gen_range(0..nominal.states())
        } else {
            0
        };
        let mut uniform = || rng.gen::<f64>();
        Ok(self.realize(class, nominal, state, &spec.jitter, &mut uniform))
    }

    /// Zero-jitter instances for every variant and discrete state of `class`.
    pub fn nominal_instances(&self, class: LoadClass) -> Vec<LoadInstance> {
        let Some(spec) = self.get(class) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for nominal in &spec.variants {
            for state in 0..nominal.states() {
                let mut mid = || 0.5;
                out.push(self.realize(class, nominal, state, &JitterSpec::NONE, &mut mid));
            }
        }
        out
    }

    fn realize(
        &self,
        class: LoadClass,
        nominal: &Nominal,
        state: usize,
        jitter: &JitterSpec,
        u: &mut dyn FnMut() -> f64,
    ) -> LoadInstance {
        let mut jit = |x: f64, s: f64| x * (1.0 + s * (2.0 * u() - 1.0));
        let vpk = self.rated_peak();
        let v2 = self.rated_voltage * self.rated_voltage;
        let mut soc = 0.0;
        let params = match nominal {
            Nominal::Resistive { power } => LoadParams::Resistive {
                resistance: v2 / jit(*power, jitter.power),
            },
            Nominal::Incandescent {
                power,
                cold_ratio,
                time_constant,
            } => {
                let p = jit(*power, jitter.power);
                let hot = v2 / p;
                LoadParams::Incandescent {
                    hot_resistance: hot,
                    cold_resistance: hot * cold_ratio,
                    rated_power: p,
                    time_constant: jit(*time_constant, jitter.component),
                }
            }
            Nominal::Motor { speeds } => {
                let s = speeds[state];
                let p = jit(s.power, jitter.power);
                let pf = jit(s.power_factor, jitter.component).clamp(0.05, 0.99);
                let z = v2 * pf / p;
                let w = 2.0 * PI * self.rated_frequency;
                LoadParams::Motor {
                    resistance: z * pf,
                    inductance: z * libm::sqrt(1.0 - pf * pf) / w,
                    speed: state as u8,
                }
            }
            Nominal::Rectifier {
                power,
                capacitance,
                series_resistance,
                draw,
            } => {
                let p = jit(*power, jitter.power);
                let c = jit(*capacitance, jitter.component);
                let rs = jit(*series_resistance, jitter.component);
                let draw = match draw {
                    DrawKind::ConstantPower {
                        undervoltage_fraction,
                    } => DcDraw::ConstantPower {
                        power: p,
                        undervoltage: undervoltage_fraction * vpk,
                    },
                    DrawKind::Resistive => {
                        let v_dc = 0.95 * vpk;
                        DcDraw::Resistive {
                            resistance: v_dc * v_dc / p,
                        }
                    }
                };
                LoadParams::Rectifier {
                    series_resistance: rs,
                    capacitance: c,
                    draw,
                }
            }
            Nominal::Charger {
                power,
                emf_empty_ratio,
                emf_full_ratio,
                initial_soc,
                full_charge_time,
            } => {
                let p = jit(*power, jitter.power);
                let e0 = emf_empty_ratio * vpk;
                let e1 = emf_full_ratio * vpk;
                let half = 0.5 * (e0 + e1);
                // Series resistance that yields `p` at half charge.
                let r = charger_power(vpk, half, 1.0) / p;
                soc = initial_soc[0] + (initial_soc[1] - initial_soc[0]) * u();
                LoadParams::Charger {
                    series_resistance: r,
                    emf_empty: e0,
                    emf_full: e1,
                    full_charge_time: *full_charge_time,
                }
            }
        };
        let mut inst = LoadInstance::new(class, params);
        inst.state.state_of_charge = soc;
        inst.drift_magnitude = jitter.drift;
        inst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_is_valid_and_complete() {
        let c = Catalog::default();
        c.validate().unwrap();
        assert_eq!(c.classes.len(), LoadClass::COUNT);
        assert_eq!(c.get(LoadClass::Usb).unwrap().variants.len(), 2);
        assert_eq!(c.get(LoadClass::Incandescents).unwrap().variants.len(), 2);
    }

    #[test]
    fn nominal_power_ordering() {
        let c = Catalog::default();
        let mut by_power: Vec<(f64, LoadClass)> = LoadClass::ALL
            .iter()
            .map(|&k| (c.get(k).unwrap().nominal_power(), k))
            .collect();
        by_power.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let top: Vec<_> = by_power[9..].iter().map(|x| x.1).collect();
        assert!(top.contains(&LoadClass::Hairdryer) && top.contains(&LoadClass::Incandescents));
        let bottom: Vec<_> = by_power[..3].iter().map(|x| x.1).collect();
        // USB is a 5 W / 10 W mixture, so its mean sits among the smallest.
        assert!(bottom.contains(&LoadClass::Usb) || bottom.contains(&LoadClass::BatteryCharger800mA));
    }

    #[test]
    fn instantiate_is_deterministic() {
        let c = Catalog::default();
        let a = c.instantiate(LoadClass::Usb, 42).unwrap();
        let b = c.instantiate(LoadClass::Usb, 42).unwrap();
        assert_eq!(a, b);
        let other = c.instantiate(LoadClass::Usb, 43).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn jitter_bounds_validated() {
        let mut c = Catalog::default();
        c.classes[0].jitter.power = 0.5;
        assert!(matches!(c.validate(), Err(CatalogError::InvalidJitter("power", _))));
        let mut c = Catalog::default();
        c.classes.pop();
        assert!(matches!(c.validate(), Err(CatalogError::MissingClass(_))));
        let mut c = Catalog::default();
        let dup = c.classes[0].clone();
        c.classes[1] = dup;
        assert!(matches!(c.validate(), Err(CatalogError::DuplicateClass(_))));
    }

    #[test]
    fn zero_jitter_resistor_matches_nominal() {
        let c = Catalog::resistors([1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0]);
        let inst = c.instantiate(LoadClass::Monitor, 9).unwrap();
        match inst.params {
            LoadParams::Resistive { resistance } => {
                assert_eq!(resistance, 230.0 * 230.0 / 512.0)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fan_picks_one_of_three_speeds() {
        let c = Catalog::default();
        let mut seen = [false; 3];
        for s in 0..64 {
            if let LoadParams::Motor { speed, .. } = c.instantiate(LoadClass::Fan, s).unwrap().params
            {
                seen[speed as usize] = true;
            }
        }
        assert_eq!(seen, [true; 3]);
    }
}
