//! Rate certificates, weighted total-variation distances, empirical
//! contraction and stationary-law estimation.

pub mod certificate;
pub mod decay;
pub mod stationary;
pub mod wv;

pub use certificate::{
    compute_rate_certificate, compute_rate_certificate_with, small_state_drift,
    validate_contraction, validate_f0_contraction, CertificateError, CertificateOptions,
    GridValidation, RateCertificate, Step,
};
pub use decay::{estimate_wv_decay, write_decay_csv, DecayEstimate};
pub use stationary::{estimate_stationary, StationaryConfig, StationaryEstimate};
pub use wv::{d_v, wv_exact_discrete, wv_ot_small, Discrete};
