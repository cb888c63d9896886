//! Decomposition of truncated multivariate moment sequences into weighted
//! sums of exponentials.
//!
//! Given moments `sigma_alpha` for `|alpha| <= d`, [`decompose`] recovers
//! `r` pairs `(w_i, xi_i)` with `sigma_alpha = sum_i w_i xi_i^alpha`. The
//! frequencies are read off the eigenvectors of multiplication matrices
//! built from an SVD of a truncated Hankel matrix and its shifts; the
//! weights come from the same eigenvectors without a Vandermonde solve.
//! [`rescale`] handles large-amplitude frequencies and [`newton`] polishes
//! a noisy fit.

// `!(x > y)` rejects NaN along with the failing comparison
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decompose;
pub mod error;
pub mod experiment;
pub mod hankel;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod moments;
pub mod newton;
pub mod rescale;

pub use decompose::{decompose, DecomposeOptions, DecomposeResult, Diagnostics};
pub use error::{Error, Result};
pub use hankel::{build_hankel, build_shifted_hankel, degree_split, hankel_on, HankelMatrix};
pub use model::{
    eval_moment, generate_moments, load_model, perturb, sample_instance, store_model,
    InstanceSpec, PerturbationSpec, PolyExpModel, Term,
};
pub use experiment::{run_experiment, run_pipeline, ExperimentSpec, PipelineOptions, PointParams, SweepVar};
pub use metrics::{match_and_score, ErrorReport};
pub use moments::{
    enumerate_monomials, load_moments, store_moments, MomentSequence, MonomialSet, MultiIndex,
};
pub use newton::{refine, NewtonOptions, Refinement};
pub use num_complex::Complex64;
pub use rescale::{scale_factor, scale_moments, unscale_model, RescaleFactor, RescaleMode};
