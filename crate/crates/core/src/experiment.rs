//! The full recovery pipeline and seeded perturbation sweeps.
//!
//! Pipeline: rescale, decompose, Newton refinement on the rescaled moments,
//! unscale. A sweep varies one of `e, M, d, n, r` while the others stay
//! fixed, runs independent trials per value and reports one row per trial
//! followed by one aggregate row per value.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decompose::{decompose, DecomposeOptions, DecomposeResult};
use crate::error::{Error, Result};
use crate::metrics::match_and_score;
use crate::model::{generate_moments, perturb, sample_instance, InstanceSpec, PerturbationSpec, PolyExpModel};
use crate::moments::MomentSequence;
use crate::newton::{refine, NewtonOptions, Refinement};
use crate::rescale::{scale_moments, unscale_model, RescaleMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub decompose: DecomposeOptions,
    pub rescale: RescaleMode,
    /// `max_iters == 0` skips refinement.
    pub newton: NewtonOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            decompose: DecomposeOptions::default(),
            rescale: RescaleMode::Auto,
            newton: NewtonOptions {
                max_iters: 0,
                damping: true,
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub lambda: f64,
    /// Decomposition of the rescaled moments.
    pub decomposition: DecomposeResult,
    /// Decomposed model in original coordinates, before refinement.
    pub initial: PolyExpModel,
    pub refinement: Option<Refinement>,
    /// Final model in original coordinates.
    pub model: PolyExpModel,
}

pub fn run_pipeline(seq: &MomentSequence, opts: &PipelineOptions) -> Result<PipelineOutput> {
    let lambda = opts.rescale.resolve(seq);
    let scaled = if lambda == 1.0 { seq.clone() } else { scale_moments(seq, lambda) };
    let decomposition = decompose(&scaled, &opts.decompose)?;
    let initial = unscale_model(&decomposition.model, lambda);
    let (refinement, model) = if opts.newton.max_iters > 0 {
        let fit = scaled.monomials().indices().to_vec();
        let out = refine(&decomposition.model, &scaled, &fit, &opts.newton)?;
        let mut model = unscale_model(&out.model, lambda);
        model.sort_terms();
        (Some(out), model)
    } else {
        (None, initial.clone())
    };
    Ok(PipelineOutput {
        lambda,
        decomposition,
        initial,
        refinement,
        model,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepVar {
    /// Perturbation exponent, `epsilon = 10^-e`.
    E,
    /// Frequency amplitude.
    M,
    D,
    N,
    R,
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SweepVar::E => "e",
            SweepVar::M => "M",
            SweepVar::D => "d",
            SweepVar::N => "n",
            SweepVar::R => "r",
        };
        f.write_str(s)
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e" => Ok(SweepVar::E),
            "M" | "m" => Ok(SweepVar::M),
            "d" => Ok(SweepVar::D),
            "n" => Ok(SweepVar::N),
            "r" => Ok(SweepVar::R),
            _ => Err(Error::InvalidInput(format!("unknown sweep variable {s:?}, expected one of e, M, d, n, r"))),
        }
    }
}

/// Parameters of one sweep point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointParams {
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub amplitude: f64,
    /// `f64::INFINITY` means unperturbed.
    pub e: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub sweep: SweepVar,
    pub values: Vec<f64>,
    pub fixed: PointParams,
    pub trials: usize,
    pub base_seed: u64,
    pub pipeline: PipelineOptions,
    /// Decompose with the true rank instead of the numerical rank.
    pub oracle_rank: bool,
}

impl ExperimentSpec {
    pub fn new(sweep: SweepVar, values: Vec<f64>, fixed: PointParams) -> Self {
        ExperimentSpec {
            sweep,
            values,
            fixed,
            trials: 10,
            base_seed: 0,
            pipeline: PipelineOptions::default(),
            oracle_rank: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidInput("sweep value list is empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        for &v in &self.values {
            self.point(v)?;
        }
        Ok(())
    }

    /// Fixed parameters with the swept one replaced by `value`.
    pub fn point(&self, value: f64) -> Result<PointParams> {
        let mut p = self.fixed;
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidInput(format!("{} must be a non-negative integer, got {v}", self.sweep)))
            }
        };
        match self.sweep {
            SweepVar::E => p.e = value,
            SweepVar::M => p.amplitude = value,
            SweepVar::D => p.d = as_count(value)?,
            SweepVar::N => p.n = as_count(value)?,
            SweepVar::R => p.r = as_count(value)?,
        }
        InstanceSpec {
            n: p.n,
            r: p.r,
            d: p.d,
            amplitude: p.amplitude,
            seed: 0,
        }
        .validate()?;
        if p.e.is_nan() {
            return Err(Error::InvalidInput("perturbation exponent is NaN".into()));
        }
        Ok(p)
    }
}

/// FNV-1a over the bit pattern of the sweep value.
fn value_hash(v: f64) -> u64 {
    v.to_bits()
        .to_le_bytes()
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn trial_seed(base: u64, trial: usize, value: f64) -> u64 {
    base.wrapping_add(trial as u64).wrapping_add(value_hash(value))
}

/// Separates the noise stream from the instance stream of the same trial.
const NOISE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub params: PointParams,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub r_est: Option<usize>,
    /// Matched error of the decomposed model.
    pub err: f64,
    pub rel_err: f64,
    /// Matched error after refinement, when refinement ran.
    pub err_after_newton: Option<f64>,
    pub newton_iters: usize,
    /// `None` on success; an error class or `rank-mismatch` otherwise.
    pub failure: Option<String>,
    pub wall_ms: f64,
}

impl TrialOutcome {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Milliseconds since the returned closure was created; NaN where the
/// platform has no clock.
#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl Fn() -> f64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_secs_f64() * 1e3
}

#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl Fn() -> f64 {
    || f64::NAN
}

pub fn run_trial(params: &PointParams, trial: usize, seed: u64, spec: &ExperimentSpec) -> TrialOutcome {
    let elapsed = stopwatch();
    let mut out = TrialOutcome {
        trial,
        params: *params,
        seed,
        lambda: None,
        r_est: None,
        err: f64::INFINITY,
        rel_err: f64::INFINITY,
        err_after_newton: None,
        newton_iters: 0,
        failure: None,
        wall_ms: 0.0,
    };
    let result = (|| -> Result<()> {
        let truth = sample_instance(&InstanceSpec {
            n: params.n,
            r: params.r,
            d: params.d,
            amplitude: params.amplitude,
            seed,
        })?;
        let clean = generate_moments(&truth, params.d);
        let noisy = perturb(&clean, &PerturbationSpec::from_exponent(params.e, seed ^ NOISE_SALT))?;
        let mut opts = spec.pipeline.clone();
        opts.decompose.seed = seed;
        if spec.oracle_rank {
            opts.decompose.rank = Some(params.r);
        }
        let res = run_pipeline(&noisy, &opts)?;
        out.lambda = Some(res.lambda);
        out.r_est = Some(res.decomposition.rank);
        let before = match_and_score(&truth, &res.initial)?;
        out.err = before.err;
        out.rel_err = before.rel_err;
        if let Some(refinement) = &res.refinement {
            out.newton_iters = refinement.steps;
            out.err_after_newton = Some(match_and_score(&truth, &res.model)?.err);
        }
        if before.rank_mismatch {
            out.failure = Some("rank-mismatch".into());
        }
        Ok(())
    })();
    if let Err(e) = result {
        out.failure = Some(e.class().into());
    }
    out.wall_ms = elapsed();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub params: PointParams,
    pub trials: Vec<TrialOutcome>,
}

impl SweepPoint {
    pub fn successes(&self) -> impl Iterator<Item = &TrialOutcome> {
        self.trials.iter().filter(|t| t.succeeded())
    }

    pub fn failures(&self) -> usize {
        self.trials.iter().filter(|t| !t.succeeded()).count()
    }

    /// Mean over successful trials; NaN if there are none.
    pub fn mean(&self, f: impl Fn(&TrialOutcome) -> Option<f64>) -> f64 {
        let vals: Vec<f64> = self.successes().filter_map(f).collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    pub fn mean_err(&self) -> f64 {
        self.mean(|t| Some(t.err))
    }

    pub fn mean_rel_err(&self) -> f64 {
        self.mean(|t| Some(t.rel_err))
    }

    pub fn mean_err_after_newton(&self) -> f64 {
        self.mean(|t| t.err_after_newton)
    }
}

/// Runs every trial of every sweep value. Results are in sweep order, then
/// trial order, regardless of scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<SweepPoint>> {
    spec.validate()?;
    let jobs: Vec<(usize, usize, PointParams, u64)> = spec
        .values
        .iter()
        .enumerate()
        .flat_map(|(vi, &v)| {
            let params = spec.point(v).expect("validated");
            (0..spec.trials).map(move |t| (vi, t, params, trial_seed(spec.base_seed, t, v)))
        })
        .collect();
    let run = |&(_, t, p, seed): &(usize, usize, PointParams, u64)| run_trial(&p, t, seed, spec);
    #[cfg(feature = "parallel")]
    let outcomes: Vec<TrialOutcome> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<TrialOutcome> = jobs.iter().map(run).collect();

    let mut points: Vec<SweepPoint> = spec
        .values
        .iter()
        .map(|&v| SweepPoint {
            value: v,
            params: spec.point(v).expect("validated"),
            trials: Vec::with_capacity(spec.trials),
        })
        .collect();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        points[job.0].trials.push(outcome);
    }
    Ok(points)
}

pub const CSV_HEADER: [&str; 15] = [
    "trial",
    "n",
    "d",
    "r_true",
    "M",
    "e",
    "rescale",
    "lambda",
    "r_est",
    "err",
    "rel_err",
    "err_after_newton",
    "newton_iters",
    "failure_class",
    "wall_ms",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn row_prefix(p: &PointParams, rescale: &RescaleMode) -> [String; 6] {
    [
        p.n.to_string(),
        p.d.to_string(),
        p.r.to_string(),
        format!("{:e}", p.amplitude),
        format!("{}", p.e),
        rescale.to_string(),
    ]
}

/// One row per trial and a `mean` row per sweep value. Aggregate columns
/// average successful trials and carry `failures:<count>`.
pub fn write_csv<W: Write>(w: W, spec: &ExperimentSpec, points: &[SweepPoint]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    };
    csv.write_record(CSV_HEADER).map_err(io)?;
    let rescale = &spec.pipeline.rescale;
    for point in points {
        for t in &point.trials {
            let [n, d, r, m, e, rs] = row_prefix(&t.params, rescale);
            let finite = |x: f64| if t.r_est.is_some() { format!("{x:e}") } else { String::new() };
            csv.write_record([
                t.trial.to_string(),
                n,
                d,
                r,
                m,
                e,
                rs,
                fmt_opt(t.lambda),
                t.r_est.map(|r| r.to_string()).unwrap_or_default(),
                finite(t.err),
                finite(t.rel_err),
                fmt_opt(t.err_after_newton),
                t.newton_iters.to_string(),
                t.failure.clone().unwrap_or_default(),
                format!("{:.3}", t.wall_ms),
            ])
            .map_err(io)?;
        }
        let [n, d, r, m, e, rs] = row_prefix(&point.params, rescale);
        let nan_empty = |x: f64| if x.is_nan() { String::new() } else { format!("{x:e}") };
        csv.write_record([
            "mean".to_string(),
            n,
            d,
            r,
            m,
            e,
            rs,
            nan_empty(point.mean(|t| t.lambda)),
            nan_empty(point.mean(|t| t.r_est.map(|r| r as f64))),
            nan_empty(point.mean_err()),
            nan_empty(point.mean_rel_err()),
            nan_empty(point.mean_err_after_newton()),
            nan_empty(point.mean(|t| Some(t.newton_iters as f64))),
            format!("failures:{}", point.failures()),
            format!("{:.3}", point.trials.iter().map(|t| t.wall_ms).sum::<f64>() / point.trials.len() as f64),
        ])
        .map_err(io)?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed() -> PointParams {
        PointParams {
            n: 2,
            d: 6,
            r: 3,
            amplitude: 1.0,
            e: 8.0,
        }
    }

    #[test]
    fn sweep_var_parsing() {
        for v in [SweepVar::E, SweepVar::M, SweepVar::D, SweepVar::N, SweepVar::R] {
            assert_eq!(v.to_string().parse::<SweepVar>().unwrap(), v);
        }
        assert!("x".parse::<SweepVar>().is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::new(SweepVar::E, vec![], fixed());
        assert!(spec.validate().is_err());
        spec.values = vec![2.0];
        spec.trials = 0;
        assert!(spec.validate().is_err());
        spec.trials = 1;
        assert!(spec.validate().is_ok());
        let bad = ExperimentSpec::new(SweepVar::N, vec![1.5], fixed());
        assert!(bad.validate().is_err());
        let bad = ExperimentSpec::new(SweepVar::R, vec![0.0], fixed());
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seeds_differ_across_values_and_trials() {
        let a = trial_seed(7, 0, 2.0);
        assert_ne!(a, trial_seed(7, 1, 2.0));
        assert_ne!(a, trial_seed(7, 0, 4.0));
        assert_eq!(a, trial_seed(7, 0, 2.0));
    }

    #[test]
    fn pipeline_recovers_clean_instance() {
        let truth = sample_instance(&InstanceSpec { n: 2, r: 3, d: 6, amplitude: 20.0, seed: 4 }).unwrap();
        let seq = generate_moments(&truth, 6);
        let out = run_pipeline(&seq, &PipelineOptions::default()).unwrap();
        assert!(out.lambda < 0.2);
        assert!(match_and_score(&truth, &out.model).unwrap().rel_err < 1e-8);
    }

    #[test]
    fn newton_in_pipeline_does_not_hurt_noisy_fit() {
        let truth = sample_instance(&InstanceSpec { n: 2, r: 3, d: 6, amplitude: 1.0, seed: 9 }).unwrap();
        let seq = perturb(&generate_moments(&truth, 6), &PerturbationSpec::from_exponent(5.0, 1)).unwrap();
        let mut opts = PipelineOptions::default();
        opts.newton.max_iters = 5;
        let out = run_pipeline(&seq, &opts).unwrap();
        let trace = &out.refinement.as_ref().unwrap().trace;
        assert!(trace.last().unwrap() <= &trace[0]);
    }

    #[test]
    fn failures_are_recorded_not_raised() {
        let mut spec = ExperimentSpec::new(SweepVar::E, vec![1.0], fixed());
        spec.trials = 2;
        spec.pipeline.decompose.rank = Some(50);
        let points = run_experiment(&spec).unwrap();
        assert_eq!(points[0].failures(), 2);
        assert!(points[0].mean_err().is_nan());
        assert_eq!(points[0].trials[0].failure.as_deref(), Some("rank-too-large"));
    }
}
