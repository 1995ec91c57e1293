//! Dose finding with late-onset toxicities: the data-augmentation CRM, its
//! comparators, and the simulation harness used to compare them.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`). The
//! aliases at the crate root fix it to `f64`; [`f32`] has the single-precision
//! versions. Simulation and replay work in `f64`.

pub mod calibration;
pub mod comparators;
pub mod crm;
pub mod da;
pub mod error;
pub mod missingness;
pub mod quadrature;
pub mod replay;
pub mod scalar;
pub mod sim;
pub mod toxtime;
pub mod trial;

pub use error::{Error, Result};
pub use scalar::Real;
pub use trial::{ActionKind, DesignKind, DoseAction, TrialStatus};

pub type Skeleton = crm::Skeleton<f64>;
pub type CrmConfig = crm::CrmConfig<f64>;
pub type GridPosterior = crm::GridPosterior<f64>;
pub type Partition = toxtime::Partition<f64>;
pub type HazardModel = toxtime::HazardModel<f64>;
pub type TrialSnapshot = da::TrialSnapshot<f64>;
pub type SnapshotPatient = da::SnapshotPatient<f64>;
pub type DoseEstimate = da::DoseEstimate<f64>;
pub type PosteriorSummary = da::PosteriorSummary<f64>;
pub type DesignConfig = trial::DesignConfig<f64>;
pub type TrialState = trial::TrialState<f64>;
pub type PatientRecord = trial::PatientRecord<f64>;

pub mod f32 {
    use crate::{crm, da, toxtime, trial};

    pub type Skeleton = crm::Skeleton<f32>;
    pub type CrmConfig = crm::CrmConfig<f32>;
    pub type GridPosterior = crm::GridPosterior<f32>;
    pub type Partition = toxtime::Partition<f32>;
    pub type HazardModel = toxtime::HazardModel<f32>;
    pub type TrialSnapshot = da::TrialSnapshot<f32>;
    pub type SnapshotPatient = da::SnapshotPatient<f32>;
    pub type DoseEstimate = da::DoseEstimate<f32>;
    pub type PosteriorSummary = da::PosteriorSummary<f32>;
    pub type DesignConfig = trial::DesignConfig<f32>;
    pub type TrialState = trial::TrialState<f32>;
    pub type PatientRecord = trial::PatientRecord<f32>;
}
