//! HTTP service for running a DA-CRM trial in real time.
//!
//! Sites enroll patients and report toxicities as they happen; the design's
//! recommendation at any date is computed on demand and logged with the
//! snapshot and seed that produced it. See `docs/api-schema.json`.

pub mod api;
pub mod error;
pub mod store;
pub mod trial;

pub use api::{router, AppState};
pub use error::{ApiError, ApiResult};
pub use store::Store;
