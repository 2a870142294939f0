//! Survival probabilities `μ(τ > t)` and the scaled limits `L_{α,s}`.

mod sampler;
mod scan;
mod survival;

pub(crate) use sampler::dithered_step;
pub use sampler::{stationary_sample, SampleSource, SampleStream, Sampler, SamplerConfig, StationarySample, DEFAULT_DITHER};
pub use survival::{survival_curve_mc, survival_curve_operator, SurvivalCurve, SurvivalMethod};
pub use scan::{
    alpha_zero_limit, detect_transition, l_alpha_scan, unit_bound_check, scaled_time, AlphaZeroResult, AlphaZeroRow,
    Extrapolant, MuSource, BoundReport, BoundViolation, ScanConfig, ScanMethod, ScanResult, ScanRow,
    TransitionEstimate, ViolationKind,
};
