//! Browser front end for `polyexp`.
//!
//! The plain functions take and return serde types so they can be tested
//! natively; the `#[wasm_bindgen]` wrappers exchange the same data as JSON
//! strings with the page in `www/`.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use polyexp::{
    generate_moments, match_and_score, perturb, run_experiment, run_pipeline, sample_instance, DecomposeOptions,
    ExperimentSpec, InstanceSpec, NewtonOptions, PerturbationSpec, PipelineOptions, PointParams, RescaleMode,
    SweepVar, Term,
};

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct RecoverRequest {
    pub n: usize,
    pub r: usize,
    pub d: usize,
    pub amplitude: f64,
    /// Noise exponent `e`; `None` keeps the moments exact.
    pub noise: Option<f64>,
    pub seed: u64,
    pub rescale: String,
    pub newton_iters: usize,
}

impl Default for RecoverRequest {
    fn default() -> Self {
        RecoverRequest {
            n: 2,
            r: 4,
            d: 8,
            amplitude: 1.0,
            noise: Some(6.0),
            seed: 1,
            rescale: "auto".into(),
            newton_iters: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RecoverReport {
    pub lambda: f64,
    pub rank: usize,
    pub rank_tol: f64,
    /// Singular values of the (rescaled) Hankel matrix, non-increasing.
    pub singular_values: Vec<f64>,
    pub truth: Vec<Term>,
    /// Estimated terms reordered so `estimate[i]` pairs with `truth[i]`;
    /// unmatched extras follow.
    pub estimate: Vec<Term>,
    pub err: f64,
    pub rel_err: f64,
    pub rank_mismatch: bool,
}

fn rescale_mode(s: &str) -> Result<RescaleMode, String> {
    s.parse().map_err(|e: polyexp::Error| e.to_string())
}

fn pipeline(rescale: &str, newton_iters: usize, seed: u64) -> Result<PipelineOptions, String> {
    Ok(PipelineOptions {
        decompose: DecomposeOptions { seed, ..Default::default() },
        rescale: rescale_mode(rescale)?,
        newton: NewtonOptions { max_iters: newton_iters, ..Default::default() },
    })
}

pub fn recover(req: &RecoverRequest) -> Result<RecoverReport, String> {
    let spec = InstanceSpec { n: req.n, r: req.r, d: req.d, amplitude: req.amplitude, seed: req.seed };
    let truth = sample_instance(&spec).map_err(|e| e.to_string())?;
    let clean = generate_moments(&truth, req.d);
    let seq = match req.noise {
        Some(e) => perturb(&clean, &PerturbationSpec::from_exponent(e, req.seed)).map_err(|e| e.to_string())?,
        None => clean,
    };
    let opts = pipeline(&req.rescale, req.newton_iters, req.seed)?;
    let out = run_pipeline(&seq, &opts).map_err(|e| e.to_string())?;
    let score = match_and_score(&truth, &out.model).map_err(|e| e.to_string())?;

    let found = out.model.terms();
    let mut estimate: Vec<Term> = score.matching.iter().filter_map(|&j| found.get(j).cloned()).collect();
    estimate.extend(
        (0..found.len())
            .filter(|j| !score.matching.contains(j))
            .map(|j| found[j].clone()),
    );
    Ok(RecoverReport {
        lambda: out.lambda,
        rank: out.decomposition.rank,
        rank_tol: opts.decompose.rank_tol,
        singular_values: out.decomposition.singular_values,
        truth: truth.terms().to_vec(),
        estimate,
        err: score.err,
        rel_err: score.rel_err,
        rank_mismatch: score.rank_mismatch,
    })
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct SweepRequest {
    /// `e` or `M`.
    pub sweep: String,
    pub values: Vec<f64>,
    pub n: usize,
    pub r: usize,
    pub d: usize,
    pub amplitude: f64,
    pub noise: f64,
    pub trials: usize,
    pub seed: u64,
    /// Decompose with the true rank instead of the numerical rank.
    pub oracle_rank: bool,
    /// One curve per mode.
    pub rescale: Vec<String>,
}

impl Default for SweepRequest {
    fn default() -> Self {
        SweepRequest {
            sweep: "e".into(),
            values: vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
            n: 2,
            r: 3,
            d: 8,
            amplitude: 1.0,
            noise: 6.0,
            trials: 5,
            seed: 0,
            oracle_rank: false,
            rescale: vec!["auto".into(), "off".into()],
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepCurve {
    pub rescale: String,
    /// Mean matched error over successful trials; `None` when all failed.
    pub mean_err: Vec<Option<f64>>,
    pub mean_rel_err: Vec<Option<f64>>,
    pub failures: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub sweep: String,
    pub values: Vec<f64>,
    pub trials: usize,
    pub curves: Vec<SweepCurve>,
}

pub fn sweep(req: &SweepRequest) -> Result<SweepReport, String> {
    let var: SweepVar = req.sweep.parse().map_err(|e: polyexp::Error| e.to_string())?;
    if !matches!(var, SweepVar::E | SweepVar::M) {
        return Err(format!("the demo sweeps e or M, got {}", req.sweep));
    }
    let fixed = PointParams { n: req.n, d: req.d, r: req.r, amplitude: req.amplitude, e: req.noise };
    let finite = |x: f64| x.is_finite().then_some(x);
    let mut curves = Vec::with_capacity(req.rescale.len());
    for mode in &req.rescale {
        let mut spec = ExperimentSpec::new(var, req.values.clone(), fixed);
        spec.trials = req.trials;
        spec.base_seed = req.seed;
        spec.pipeline = pipeline(mode, 0, 0)?;
        spec.oracle_rank = req.oracle_rank;
        let points = run_experiment(&spec).map_err(|e| e.to_string())?;
        curves.push(SweepCurve {
            rescale: mode.clone(),
            mean_err: points.iter().map(|p| finite(p.mean_err())).collect(),
            mean_rel_err: points.iter().map(|p| finite(p.mean_rel_err())).collect(),
            failures: points.iter().map(|p| p.failures()).collect(),
        });
    }
    Ok(SweepReport { sweep: req.sweep.clone(), values: req.values.clone(), trials: req.trials, curves })
}

fn json_call<Req, Resp>(request: &str, f: impl Fn(&Req) -> Result<Resp, String>) -> Result<String, JsValue>
where
    Req: for<'de> Deserialize<'de>,
    Resp: Serialize,
{
    let req: Req = serde_json::from_str(request).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let resp = f(&req).map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&resp).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// JSON [`RecoverRequest`] in, JSON [`RecoverReport`] out.
#[wasm_bindgen(js_name = recover)]
pub fn recover_json(request: &str) -> Result<String, JsValue> {
    json_call(request, recover)
}

/// JSON [`SweepRequest`] in, JSON [`SweepReport`] out.
#[wasm_bindgen(js_name = sweep)]
pub fn sweep_json(request: &str) -> Result<String, JsValue> {
    json_call(request, sweep)
}
