//! Newton refinement of a weighted sum of exponentials against observed
//! moments.
//!
//! The unknowns are `Xi = (w_i, xi_i1, ..., xi_in)_{i=1..r}`, `N = r (n + 1)`
//! complex numbers. For a fitted set `A` of multi-indices the residuals are
//! `F_a = sum_i w_i xi_i^a - sigma_a` and the misfit is `E = ||F||^2 / 2`.
//! Since `E` is real-valued it is treated as a function of the `2N` real
//! coordinates `x = (Re Xi, Im Xi)`. With `J` the complex Jacobian of `F`
//! (holomorphic in `Xi`) and `H_a` the complex Hessian of `F_a`:
//!
//! ```text
//! grad E = [Re(J^H F); Im(J^H F)]
//! hess E = [[Re K, -Im K], [Im K, Re K]] + [[Re G, -Im G], [-Im G, -Re G]]
//! K = J^H J,  G = sum_a conj(F_a) H_a
//! ```
//!
//! `G` is block diagonal: second derivatives mixing two different terms vanish.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PolyExpModel, Term};
use crate::moments::{MomentSequence, MultiIndex};
use crate::Complex64;

/// Step halvings tried before a damped step is rejected.
const MAX_HALVINGS: usize = 10;
/// Undamped steps in a row that may increase `E` before giving up.
const MAX_GROWTH_STREAK: usize = 3;
const REGULARIZATION: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Accept a step only if it lowers `E`, halving it up to 10 times.
    pub damping: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iters: 5,
            damping: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIterations,
    /// Zero gradient or negligible step.
    Converged,
    /// No damped step lowered the misfit.
    NoDecrease,
    /// The misfit grew for several undamped steps in a row.
    Diverged,
    SingularJacobian,
}

#[derive(Clone, Debug)]
pub struct Refinement {
    /// Lowest-misfit iterate encountered.
    pub model: PolyExpModel,
    /// `E` at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub steps: usize,
    pub stop: StopReason,
}

/// Parameter vector of a model: term-major `[w_i, xi_i1, ..., xi_in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonState {
    pub n: usize,
    pub params: Vec<Complex64>,
}

impl NewtonState {
    pub fn from_model(model: &PolyExpModel) -> Self {
        let params = model
            .terms()
            .iter()
            .flat_map(|t| std::iter::once(t.weight).chain(t.freq.iter().copied()))
            .collect();
        NewtonState {
            n: model.n(),
            params,
        }
    }

    pub fn to_model(&self) -> PolyExpModel {
        let terms = self
            .params
            .chunks(self.n + 1)
            .map(|c| Term {
                weight: c[0],
                freq: c[1..].to_vec(),
            })
            .collect();
        PolyExpModel::from_terms(self.n, terms)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Real coordinates `(Re params, Im params)`.
    pub fn to_real(&self) -> DVector<f64> {
        let n = self.params.len();
        DVector::from_fn(2 * n, |k, _| {
            if k < n {
                self.params[k].re
            } else {
                self.params[k - n].im
            }
        })
    }

    pub fn from_real(n: usize, x: &DVector<f64>) -> Self {
        let half = x.len() / 2;
        NewtonState {
            n,
            params: (0..half).map(|k| Complex64::new(x[k], x[k + half])).collect(),
        }
    }
}

/// Observed moments over the fitted index set.
struct Targets<'a> {
    indices: &'a [MultiIndex],
    values: Vec<Complex64>,
}

impl<'a> Targets<'a> {
    fn new(seq: &MomentSequence, indices: &'a [MultiIndex]) -> Result<Self> {
        let values = indices
            .iter()
            .map(|a| seq.get(a).ok_or_else(|| Error::Incomplete(a.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Targets { indices, values })
    }
}

/// `xi^(alpha - e_j - e_k)` times the falling-factorial coefficient that
/// differentiation brings down; `None` entries are not subtracted.
fn lowered(xi: &[Complex64], alpha: &MultiIndex, j: Option<usize>, k: Option<usize>) -> Complex64 {
    let mut exps: Vec<i64> = alpha.entries().iter().map(|&a| a as i64).collect();
    let mut coeff = 1.0;
    for v in [j, k].into_iter().flatten() {
        coeff *= exps[v] as f64;
        exps[v] -= 1;
        if coeff == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
    }
    let mono = xi
        .iter()
        .zip(&exps)
        .fold(Complex64::new(1.0, 0.0), |acc, (x, &e)| acc * x.powu(e as u32));
    mono * coeff
}

fn residual_of(state: &NewtonState, targets: &Targets) -> Vec<Complex64> {
    let n = state.n;
    targets
        .indices
        .iter()
        .zip(&targets.values)
        .map(|(alpha, &sigma)| {
            let model: Complex64 = state
                .params
                .chunks(n + 1)
                .map(|c| c[0] * alpha.eval(&c[1..]))
                .sum();
            model - sigma
        })
        .collect()
}

fn energy_of(f: &[Complex64]) -> f64 {
    0.5 * f.iter().map(|z| z.norm_sqr()).sum::<f64>()
}

/// `F_a = sum_i w_i xi_i^a - sigma_a` over `fit`.
pub fn residual(
    model: &PolyExpModel,
    seq: &MomentSequence,
    fit: &[MultiIndex],
) -> Result<Vec<Complex64>> {
    let targets = Targets::new(seq, fit)?;
    Ok(residual_of(&NewtonState::from_model(model), &targets))
}

pub fn energy(model: &PolyExpModel, seq: &MomentSequence, fit: &[MultiIndex]) -> Result<f64> {
    Ok(energy_of(&residual(model, seq, fit)?))
}

fn derivatives(state: &NewtonState, targets: &Targets) -> (Vec<Complex64>, DVector<f64>, DMatrix<f64>) {
    let n = state.n;
    let size = state.len();
    let f = residual_of(state, targets);
    let rows = targets.indices.len();

    let mut jac = DMatrix::<Complex64>::zeros(rows, size);
    let mut g = DMatrix::<Complex64>::zeros(size, size);
    for (a, alpha) in targets.indices.iter().enumerate() {
        let fbar = f[a].conj();
        for (i, c) in state.params.chunks(n + 1).enumerate() {
            let (w, xi) = (c[0], &c[1..]);
            let base = i * (n + 1);
            jac[(a, base)] = alpha.eval(xi);
            for j in 0..n {
                let dj = lowered(xi, alpha, Some(j), None);
                jac[(a, base + 1 + j)] = w * dj;
                // d^2 F / dw dxi_j
                g[(base, base + 1 + j)] += fbar * dj;
                g[(base + 1 + j, base)] += fbar * dj;
                for k in j..n {
                    let djk = w * lowered(xi, alpha, Some(j), Some(k)) * fbar;
                    g[(base + 1 + j, base + 1 + k)] += djk;
                    if k != j {
                        g[(base + 1 + k, base + 1 + j)] += djk;
                    }
                }
            }
        }
    }
    let jh = jac.adjoint();
    let grad_c = &jh * DVector::from_column_slice(&f);
    let k = &jh * &jac;

    let grad = DVector::from_fn(2 * size, |p, _| {
        if p < size {
            grad_c[p].re
        } else {
            grad_c[p - size].im
        }
    });
    let hess = DMatrix::from_fn(2 * size, 2 * size, |p, q| {
        let (pi, pblk) = (p % size, p / size);
        let (qi, qblk) = (q % size, q / size);
        let kk = k[(pi, qi)];
        let gg = g[(pi, qi)];
        match (pblk, qblk) {
            (0, 0) => kk.re + gg.re,
            (0, 1) => -kk.im - gg.im,
            (1, 0) => kk.im - gg.im,
            _ => kk.re - gg.re,
        }
    });
    (f, grad, hess)
}

/// Exact gradient and Hessian of `E` in the real coordinates of
/// [`NewtonState::to_real`].
pub fn gradient_and_jacobian(
    model: &PolyExpModel,
    seq: &MomentSequence,
    fit: &[MultiIndex],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let targets = Targets::new(seq, fit)?;
    let (_, grad, hess) = derivatives(&NewtonState::from_model(model), &targets);
    Ok((grad, hess))
}

/// Solves `hess * step = -grad`, regularizing with `tau I` when the LU
/// pivots show `hess` is singular to working precision.
fn newton_step(grad: &DVector<f64>, hess: &DMatrix<f64>) -> Option<DVector<f64>> {
    let solve = |m: DMatrix<f64>| -> Option<DVector<f64>> {
        let lu = m.lu();
        let diag = lu.u().diagonal();
        let max = diag.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let min = diag.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
        if !(max > 0.0) || min <= f64::EPSILON * max {
            return None;
        }
        lu.solve(&(-grad)).filter(|s| s.iter().all(|v| v.is_finite()))
    };
    solve(hess.clone()).or_else(|| {
        let dim = hess.nrows() as f64;
        let tau = REGULARIZATION * hess.trace().abs().max(f64::MIN_POSITIVE) / dim;
        solve(hess + DMatrix::identity(hess.nrows(), hess.ncols()) * tau)
    })
}

/// The undamped Newton step at `model`, exposed for fixed-point checks.
pub fn step(model: &PolyExpModel, seq: &MomentSequence, fit: &[MultiIndex]) -> Result<DVector<f64>> {
    let (grad, hess) = gradient_and_jacobian(model, seq, fit)?;
    newton_step(&grad, &hess).ok_or(Error::NonConvergence("newton step (singular Hessian)"))
}

/// Newton iteration on `grad E = 0`, returning the best iterate seen.
pub fn refine(
    model: &PolyExpModel,
    seq: &MomentSequence,
    fit: &[MultiIndex],
    opts: &NewtonOptions,
) -> Result<Refinement> {
    if model.n() != seq.n() {
        return Err(Error::Dimension {
            expected: seq.n(),
            got: model.n(),
        });
    }
    let targets = Targets::new(seq, fit)?;
    let n = model.n();
    let mut state = NewtonState::from_model(model);
    let (mut f, mut grad, mut hess) = derivatives(&state, &targets);
    let mut e = energy_of(&f);
    let mut best = (state.clone(), e);
    let mut trace = vec![e];
    let mut steps = 0;
    let mut growth = 0;
    let mut stop = StopReason::MaxIterations;

    while steps < opts.max_iters {
        if e == 0.0 || grad.iter().all(|&v| v == 0.0) {
            stop = StopReason::Converged;
            break;
        }
        let Some(dx) = newton_step(&grad, &hess) else {
            stop = StopReason::SingularJacobian;
            break;
        };
        let x = state.to_real();
        if dx.norm() <= f64::EPSILON * x.norm() {
            stop = StopReason::Converged;
            break;
        }
        let next = if opts.damping {
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let cand = NewtonState::from_real(n, &(&x + &dx * t));
                let fc = residual_of(&cand, &targets);
                let ec = energy_of(&fc);
                if ec < e {
                    accepted = Some(cand);
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some(c) => c,
                None => {
                    stop = StopReason::NoDecrease;
                    break;
                }
            }
        } else {
            NewtonState::from_real(n, &(&x + &dx))
        };

        state = next;
        (f, grad, hess) = derivatives(&state, &targets);
        let e_new = energy_of(&f);
        steps += 1;
        trace.push(e_new);
        growth = if e_new > e { growth + 1 } else { 0 };
        e = e_new;
        if e.is_finite() && e < best.1 {
            best = (state.clone(), e);
        }
        if growth >= MAX_GROWTH_STREAK || !e.is_finite() {
            stop = StopReason::Diverged;
            break;
        }
    }
    Ok(Refinement {
        model: best.0.to_model(),
        trace,
        steps,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_moments, perturb, sample_instance, InstanceSpec, PerturbationSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn one_term(w: Complex64, xi: Complex64) -> PolyExpModel {
        PolyExpModel::from_terms(1, vec![Term { weight: w, freq: vec![xi] }])
    }

    #[test]
    fn residual_examples() {
        let seq = MomentSequence::from_fn(1, 1, |_| c(0.0, 0.0));
        let fit = seq.monomials().indices().to_vec();
        let model = one_term(c(1.0, 0.0), c(0.0, 0.0));
        let f = residual(&model, &seq, &fit).unwrap();
        assert_eq!(f, vec![c(1.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(energy(&model, &seq, &fit).unwrap(), 0.5);

        let doubled = one_term(c(2.0, 0.0), c(0.0, 0.0));
        assert_eq!(residual(&doubled, &seq, &fit).unwrap(), vec![c(2.0, 0.0), c(0.0, 0.0)]);

        let missing = [MultiIndex::new(vec![4])];
        assert!(matches!(residual(&model, &seq, &missing), Err(Error::Incomplete(_))));
    }

    #[test]
    fn exact_fit_has_zero_gradient_and_gauss_newton_hessian() {
        // powers of 0.5 and 2 are exact in binary floating point
        let model = PolyExpModel::from_terms(
            1,
            vec![
                Term { weight: c(1.0, 0.0), freq: vec![c(0.5, 0.0)] },
                Term { weight: c(0.25, 0.0), freq: vec![c(2.0, 0.0)] },
            ],
        );
        let seq = generate_moments(&model, 6);
        let fit = seq.monomials().indices().to_vec();
        assert!(residual(&model, &seq, &fit).unwrap().iter().all(|z| *z == c(0.0, 0.0)));
        let (g, h) = gradient_and_jacobian(&model, &seq, &fit).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let targets = Targets::new(&seq, &fit).unwrap();
        let state = NewtonState::from_model(&model);
        let (_, _, h2) = derivatives(&state, &targets);
        assert_eq!(h, h2);

        let out = refine(&model, &seq, &fit, &NewtonOptions::default()).unwrap();
        assert_eq!(out.steps, 0);
        assert_eq!(out.stop, StopReason::Converged);
        assert_eq!(out.model, model);
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, r: usize) -> PolyExpModel {
        let terms = (0..r)
            .map(|_| Term {
                weight: c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                freq: (0..n)
                    .map(|_| c(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)))
                    .collect(),
            })
            .collect();
        PolyExpModel::from_terms(n, terms)
    }

    /// Central differences of E in the real coordinates.
    fn fd_gradient(model: &PolyExpModel, seq: &MomentSequence, fit: &[MultiIndex], h: f64) -> Vec<f64> {
        let state = NewtonState::from_model(model);
        let x = state.to_real();
        (0..x.len())
            .map(|k| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let ep = energy(&NewtonState::from_real(model.n(), &xp).to_model(), seq, fit).unwrap();
                let em = energy(&NewtonState::from_real(model.n(), &xm).to_model(), seq, fit).unwrap();
                (ep - em) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..12 {
            let n = 1 + trial % 3;
            let r = 1 + trial % 4;
            let truth = random_state(&mut rng, n, r);
            let seq = generate_moments(&truth, 4);
            let fit = seq.monomials().indices().to_vec();
            let guess = random_state(&mut rng, n, r);
            let (g, _) = gradient_and_jacobian(&guess, &seq, &fit).unwrap();
            let fd = fd_gradient(&guess, &seq, &fit, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * a.abs().max(1e-3 * g.amax()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = random_state(&mut rng, 2, 2);
        let seq = generate_moments(&truth, 4);
        let fit = seq.monomials().indices().to_vec();
        let guess = random_state(&mut rng, 2, 2);
        let (_, hess) = gradient_and_jacobian(&guess, &seq, &fit).unwrap();
        let x = NewtonState::from_model(&guess).to_real();
        let h = 1e-6;
        for k in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let (gp, _) = gradient_and_jacobian(&NewtonState::from_real(2, &xp).to_model(), &seq, &fit).unwrap();
            let (gm, _) = gradient_and_jacobian(&NewtonState::from_real(2, &xm).to_model(), &seq, &fit).unwrap();
            let col = (gp - gm) / (2.0 * h);
            let scale = hess.amax();
            for p in 0..x.len() {
                assert!((col[p] - hess[(p, k)]).abs() <= 1e-5 * scale, "({p},{k})");
            }
        }
        assert!((&hess - hess.transpose()).norm() <= 1e-10 * hess.norm());
    }

    #[test]
    fn fixed_point_step_is_negligible() {
        let spec = InstanceSpec { n: 2, r: 3, d: 6, amplitude: 1.0, seed: 8 };
        let truth = sample_instance(&spec).unwrap();
        let seq = generate_moments(&truth, 6);
        let fit = seq.monomials().indices().to_vec();
        let dx = step(&truth, &seq, &fit).unwrap();
        let x = NewtonState::from_model(&truth).to_real();
        assert!(dx.norm() <= 1e-12 * x.norm(), "{:e}", dx.norm());
    }

    #[test]
    fn univariate_noisy_refinement_lowers_misfit() {
        let truth = one_term(c(0.8, -0.3), c(0.9, 0.4));
        let seq = generate_moments(&truth, 6);
        let noisy = perturb(&seq, &PerturbationSpec::from_exponent(4.0, 3)).unwrap();
        let fit = seq.monomials().indices().to_vec();
        let start = one_term(c(0.79, -0.31), c(0.905, 0.395));
        let out = refine(&start, &noisy, &fit, &NewtonOptions::default()).unwrap();
        assert!(out.trace.len() <= 6);
        assert!(out.trace.last().unwrap() <= &out.trace[0]);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
        let e_best = energy(&out.model, &noisy, &fit).unwrap();
        assert!(e_best <= out.trace[0]);
        // converged to the noise level
        assert!(e_best <= 7.0 * 1e-8);
    }

    #[test]
    fn undamped_iteration_runs() {
        let truth = one_term(c(0.8, 0.0), c(0.5, 0.5));
        let seq = generate_moments(&truth, 5);
        let fit = seq.monomials().indices().to_vec();
        let start = one_term(c(0.81, 0.01), c(0.49, 0.51));
        let opts = NewtonOptions { max_iters: 8, damping: false };
        let out = refine(&start, &seq, &fit, &opts).unwrap();
        let err = (out.model.terms()[0].freq[0] - c(0.5, 0.5)).norm();
        assert!(err < 1e-10, "{err:e}");
    }

    #[test]
    fn state_round_trip() {
        let spec = InstanceSpec { n: 3, r: 2, d: 2, amplitude: 2.0, seed: 1 };
        let m = sample_instance(&spec).unwrap();
        let s = NewtonState::from_model(&m);
        assert_eq!(s.len(), 8);
        assert_eq!(NewtonState::from_real(3, &s.to_real()), s);
        assert_eq!(s.to_model(), m);
    }
}
