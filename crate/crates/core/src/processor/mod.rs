//! Multi-core processor with one shared core voltage domain, per-core
//! fault thresholds, a thermal model and seeded fault manifestation.

pub mod calibration;
pub mod fault;
pub mod platform;
pub mod profile;
pub mod region;
pub mod thermal;

pub use calibration::predicted_success_rate;
pub use fault::{classify_voltage, sample_crash, sample_fault, BitFlipPattern, CrashKind, FaultModel, Slice};
pub use platform::{Assignment, InterferenceFlags, PlatformError, PlatformState};
pub use profile::{
    bundled_profile, bundled_profile_names, load_profile, load_profile_file, ProcessorProfile, ProfileDocument,
    ProfileError,
};
pub use region::{Microvolts, RegionBands, VoltageRegion};
pub use thermal::update_temperature;
