//! Polynomial-exponential series with constant weights,
//! `sigma(y) = sum_i w_i exp(<xi_i, y>)`, together with the random benchmark
//! instances and the moment noise model used by the experiments.
//!
//! Randomness comes from [`ChaCha20Rng`] seeded with `seed_from_u64`. Each
//! logical draw gets its own ChaCha stream so results do not depend on the
//! order in which terms or moments are visited:
//!
//! * [`sample_instance`]: stream `i` holds the draws for term `i`
//!   (`|w|`, `arg w`, then `|xi_j|`, `arg xi_j` for `j = 1..n`);
//! * [`noise`]: stream `p` holds `(p_alpha, q_alpha)` for the moment at
//!   canonical position `p`.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{parse_f64, parse_header, MomentSequence, MonomialSet, MultiIndex};

/// One exponential term `weight * exp(<freq, y>)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub weight: Complex64,
    pub freq: Vec<Complex64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyExpModel {
    n: usize,
    terms: Vec<Term>,
}

impl PolyExpModel {
    /// Builds a validated model: at least one term, nonzero weights, every
    /// frequency of dimension `n` and pairwise distinct.
    pub fn new(n: usize, terms: Vec<Term>) -> Result<Self> {
        if n == 0 || terms.is_empty() {
            return Err(Error::InvalidInput("model needs n >= 1 and r >= 1".into()));
        }
        for (i, t) in terms.iter().enumerate() {
            if t.freq.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: t.freq.len(),
                });
            }
            if t.weight == Complex64::new(0.0, 0.0) {
                return Err(Error::InvalidInput(format!("term {i} has zero weight")));
            }
            if terms[..i].iter().any(|o| o.freq == t.freq) {
                return Err(Error::InvalidInput(format!("term {i} repeats a frequency")));
            }
        }
        Ok(PolyExpModel { n, terms })
    }

    /// Model without the distinctness and nonzero-weight checks, for
    /// numerically recovered terms.
    pub(crate) fn from_terms(n: usize, terms: Vec<Term>) -> Self {
        PolyExpModel { n, terms }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn weights(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.terms.iter().map(|t| t.weight)
    }

    pub fn map_terms(&self, f: impl FnMut(&Term) -> Term) -> Self {
        PolyExpModel {
            n: self.n,
            terms: self.terms.iter().map(f).collect(),
        }
    }

    /// Sorts terms lexicographically by `(Re xi_1, Im xi_1, ..., Re xi_n, Im xi_n)`.
    pub fn sort_terms(&mut self) {
        self.terms.sort_by(|a, b| cmp_freq(&a.freq, &b.freq));
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# n={} r={}", self.n, self.rank())?;
        for t in &self.terms {
            write!(w, "{:.17e} {:.17e}", t.weight.re, t.weight.im)?;
            for x in &t.freq {
                write!(w, " {:.17e} {:.17e}", x.re, x.im)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut n = None;
        let mut r_expected = 0;
        let mut terms = Vec::new();
        for (no, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some(n) = n else {
                let h = parse_header(line, &["n", "r"], no + 1)?;
                n = Some(h[0]);
                r_expected = h[1];
                continue;
            };
            if line.starts_with('#') {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(|t| parse_f64(t, no + 1))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != 2 * (n + 1) {
                return Err(Error::Dimension {
                    expected: 2 * (n + 1),
                    got: vals.len(),
                });
            }
            let mut it = vals.chunks(2).map(|c| Complex64::new(c[0], c[1]));
            let weight = it.next().unwrap();
            terms.push(Term {
                weight,
                freq: it.collect(),
            });
        }
        let n = n.ok_or(Error::Parse {
            line: 0,
            msg: "empty model file".into(),
        })?;
        if terms.len() != r_expected {
            return Err(Error::Parse {
                line: 0,
                msg: format!("header declares r={r_expected}, found {} terms", terms.len()),
            });
        }
        PolyExpModel::new(n, terms)
    }
}

pub(crate) fn cmp_freq(a: &[Complex64], b: &[Complex64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PolyExpModel> {
    PolyExpModel::read_from(fs::File::open(path)?)
}

pub fn store_model(model: &PolyExpModel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    model.write_to(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// `sigma_alpha = sum_i w_i xi_i^alpha`, with `0^0 = 1`.
pub fn eval_moment(model: &PolyExpModel, alpha: &MultiIndex) -> Result<Complex64> {
    if alpha.dim() != model.n {
        return Err(Error::Dimension {
            expected: model.n,
            got: alpha.dim(),
        });
    }
    Ok(model
        .terms
        .iter()
        .map(|t| t.weight * alpha.eval(&t.freq))
        .sum())
}

pub fn generate_moments(model: &PolyExpModel, d: usize) -> MomentSequence {
    MomentSequence::from_fn(model.n, d, |alpha| {
        model
            .terms
            .iter()
            .map(|t| t.weight * alpha.eval(&t.freq))
            .sum()
    })
}

/// Parameters of a random benchmark instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n: usize,
    pub r: usize,
    pub d: usize,
    /// Frequency amplitude: `|xi_ij|` is drawn in `[0.5 M, 1.5 M]`.
    pub amplitude: f64,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.r < 1 || self.d < 1 || !(self.amplitude >= 1.0) {
            return Err(Error::InvalidInput(format!(
                "instance needs n, r, d >= 1 and M >= 1 (got n={} r={} d={} M={})",
                self.n, self.r, self.d, self.amplitude
            )));
        }
        Ok(())
    }
}

fn polar(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> Complex64 {
    let modulus = rng.random_range(lo..=hi);
    let arg = rng.random_range(-PI..=PI);
    Complex64::from_polar(modulus, arg)
}

/// Draws `r` terms with `|w| ~ U[0.5, 1]`, `|xi_ij| ~ U[0.5 M, 1.5 M]` and all
/// arguments `~ U[-pi, pi]`.
pub fn sample_instance(spec: &InstanceSpec) -> Result<PolyExpModel> {
    spec.validate()?;
    let m = spec.amplitude;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let terms = (0..spec.r)
        .map(|i| {
            rng.set_stream(i as u64);
            rng.set_word_pos(0);
            let weight = polar(&mut rng, 0.5, 1.0);
            let freq = (0..spec.n)
                .map(|_| polar(&mut rng, 0.5 * m, 1.5 * m))
                .collect();
            Term { weight, freq }
        })
        .collect();
    // continuous draws are distinct with probability one
    PolyExpModel::new(spec.n, terms)
}

/// Additive moment noise `eps * (p + i q)` with `p, q ~ U[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub epsilon: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    /// `eps = 10^(-e)`.
    pub fn from_exponent(e: f64, seed: u64) -> Self {
        PerturbationSpec {
            epsilon: 10f64.powf(-e),
            seed,
        }
    }

    pub fn exponent(&self) -> f64 {
        -self.epsilon.log10()
    }
}

/// The noise vector `eps * (p_alpha + i q_alpha)` in canonical order over `monomials`.
pub fn noise(monomials: &MonomialSet, spec: &PerturbationSpec) -> Vec<Complex64> {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    (0..monomials.len())
        .map(|p| {
            rng.set_stream(p as u64);
            rng.set_word_pos(0);
            let re = rng.random_range(-1.0..=1.0);
            let im = rng.random_range(-1.0..=1.0);
            spec.epsilon * Complex64::new(re, im)
        })
        .collect()
}

pub fn perturb(seq: &MomentSequence, spec: &PerturbationSpec) -> Result<MomentSequence> {
    if !(spec.epsilon >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "perturbation size must be non-negative, got {}",
            spec.epsilon
        )));
    }
    if spec.epsilon == 0.0 {
        return Ok(seq.clone());
    }
    let delta = noise(seq.monomials(), spec);
    let mut k = 0;
    Ok(seq.map(|_, v| {
        let out = v + delta[k];
        k += 1;
        out
    }))
}
