//! Simulation and classification core for phase-cut smart-plug load
//! identification.
//!
//! The crate is `no_std` with `alloc`: waveform synthesis, appliance circuit
//! models, the dimming probe, dataset assembly, the multi-label CNN and the
//! evaluation protocols are all pure computation. File formats, the
//! parallel runner and the command line live in the `plugid` crate.

#![no_std]

extern crate alloc;

pub mod catalog;
pub mod dataset;
pub mod eval;
pub mod loads;
pub mod net;
pub mod probe;
pub mod seed;
pub mod waveform;

pub use catalog::{Catalog, ClassSpec, JitterSpec, Nominal};
pub use dataset::{
    encode_target, split, split_indices, Dataset, DatasetError, DatasetSpec, LabelSet, Sample,
    SplitPolicy, TargetVector,
};
pub use loads::{ApplianceType, LoadClass, LoadInstance, LoadParams};
pub use probe::{
    features, run_probe, DimmingSchedule, FeatureScale, FeatureTensor, Grid, MeasurementMatrices,
};
pub use waveform::{
    open_circuit_voltage, real_power, rms, simulate_period, CutoffRatio, EdgeMode, PeriodTrace,
    SupplyConfig,
};
