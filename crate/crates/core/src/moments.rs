//! Multi-indices, degree-graded monomial sets and truncated moment sequences.
//!
//! All matrices in the crate index rows and columns by a [`MonomialSet`], so
//! every module shares the single canonical order defined here: graded by
//! total degree, then lexicographically descending on the exponents
//! (`x1 > x2 > ... > xn`). For `n = 2` this gives
//! `1, x1, x2, x1^2, x1 x2, x2^2, ...`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex(entries)
    }

    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    /// The unit index `e_i` (0-based variable index).
    pub fn unit(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        MultiIndex(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.dim(), other.dim());
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `x^alpha` evaluated at `point`, with `0^0 = 1`.
    pub fn eval(&self, point: &[Complex64]) -> Complex64 {
        debug_assert_eq!(self.dim(), point.len());
        self.0
            .iter()
            .zip(point)
            .fold(Complex64::new(1.0, 0.0), |acc, (&a, &x)| acc * x.powu(a))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, a) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// All multi-indices of dimension `n` and degree at most `d`, in canonical order.
#[derive(Clone, Debug)]
pub struct MonomialSet {
    n: usize,
    d: usize,
    indices: Vec<MultiIndex>,
    position: HashMap<MultiIndex, usize>,
}

impl PartialEq for MonomialSet {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.d == other.d
    }
}

impl MonomialSet {
    pub fn new(n: usize, d: usize) -> Self {
        assert!(n >= 1, "monomial set needs at least one variable");
        let mut indices = Vec::with_capacity(binomial(n + d, n));
        let mut buf = vec![0u32; n];
        for k in 0..=d {
            push_degree(&mut indices, &mut buf, 0, k as u32);
        }
        let position = indices
            .iter()
            .enumerate()
            .map(|(p, a)| (a.clone(), p))
            .collect();
        MonomialSet {
            n,
            d,
            indices,
            position,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn get(&self, pos: usize) -> &MultiIndex {
        &self.indices[pos]
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.position.get(alpha).copied()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MultiIndex> {
        self.indices.iter()
    }

    /// Positions of the indices of exact degree `k`. The canonical order
    /// stores each degree slice contiguously.
    pub fn degree_slice(&self, k: usize) -> std::ops::Range<usize> {
        if k > self.d {
            return 0..0;
        }
        let start = if k == 0 { 0 } else { binomial(self.n + k - 1, self.n) };
        start..binomial(self.n + k, self.n)
    }
}

fn push_degree(out: &mut Vec<MultiIndex>, buf: &mut [u32], pos: usize, remaining: u32) {
    if pos + 1 == buf.len() {
        buf[pos] = remaining;
        out.push(MultiIndex(buf.to_vec()));
        return;
    }
    for a in (0..=remaining).rev() {
        buf[pos] = a;
        push_degree(out, buf, pos + 1, remaining - a);
    }
}

pub fn enumerate_monomials(n: usize, d: usize) -> MonomialSet {
    MonomialSet::new(n, d)
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Truncated moment sequence `(sigma_alpha)_{|alpha| <= d}`, stored densely
/// in canonical monomial order.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSequence {
    monomials: MonomialSet,
    values: Vec<Complex64>,
}

impl MomentSequence {
    pub fn new(monomials: MonomialSet, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != monomials.len() {
            return Err(Error::Dimension {
                expected: monomials.len(),
                got: values.len(),
            });
        }
        Ok(MomentSequence { monomials, values })
    }

    pub fn from_fn(n: usize, d: usize, mut f: impl FnMut(&MultiIndex) -> Complex64) -> Self {
        let monomials = MonomialSet::new(n, d);
        let values = monomials.iter().map(&mut f).collect();
        MomentSequence { monomials, values }
    }

    pub fn n(&self) -> usize {
        self.monomials.n()
    }

    pub fn d(&self) -> usize {
        self.monomials.d()
    }

    pub fn monomials(&self) -> &MonomialSet {
        &self.monomials
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn get(&self, alpha: &MultiIndex) -> Option<Complex64> {
        self.monomials.position(alpha).map(|p| self.values[p])
    }

    /// Applies `f(alpha, sigma_alpha)` to every stored moment.
    pub fn map(&self, mut f: impl FnMut(&MultiIndex, Complex64) -> Complex64) -> Self {
        let values = self
            .monomials
            .iter()
            .zip(&self.values)
            .map(|(a, &v)| f(a, v))
            .collect();
        MomentSequence {
            monomials: self.monomials.clone(),
            values,
        }
    }

    /// Largest modulus among the moments of exact degree `k`.
    pub fn max_abs_at_degree(&self, k: usize) -> f64 {
        self.values[self.monomials.degree_slice(k)]
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# n={} d={}", self.n(), self.d())?;
        for (alpha, v) in self.monomials.iter().zip(&self.values) {
            for a in alpha.entries() {
                write!(w, "{a} ")?;
            }
            writeln!(w, "{:.17e} {:.17e}", v.re, v.im)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines().enumerate();
        let (n, d) = loop {
            match lines.next() {
                Some((no, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let fields = parse_header(&line, &["n", "d"], no + 1)?;
                    break (fields[0], fields[1]);
                }
                None => {
                    return Err(Error::Parse {
                        line: 0,
                        msg: "empty file".into(),
                    })
                }
            }
        };
        if n == 0 {
            return Err(Error::Parse {
                line: 1,
                msg: "n must be positive".into(),
            });
        }
        let monomials = MonomialSet::new(n, d);
        let mut values: Vec<Option<Complex64>> = vec![None; monomials.len()];
        for (no, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = no + 1;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != n + 2 {
                return Err(Error::Dimension {
                    expected: n + 2,
                    got: tokens.len(),
                });
            }
            let alpha = tokens[..n]
                .iter()
                .map(|t| t.parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad exponent: {e}"),
                })?;
            let re = parse_f64(tokens[n], lineno)?;
            let im = parse_f64(tokens[n + 1], lineno)?;
            let alpha = MultiIndex(alpha);
            let pos = monomials.position(&alpha).ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("index {alpha} exceeds degree {d}"),
            })?;
            if values[pos].replace(Complex64::new(re, im)).is_some() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("duplicate moment {alpha}"),
                });
            }
        }
        let values = values
            .into_iter()
            .enumerate()
            .map(|(p, v)| v.ok_or_else(|| Error::Incomplete(monomials.get(p).to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(MomentSequence { monomials, values })
    }
}

pub(crate) fn parse_f64(token: &str, line: usize) -> Result<f64> {
    token.parse::<f64>().map_err(|e| Error::Parse {
        line,
        msg: format!("bad number {token:?}: {e}"),
    })
}

/// Parses a `# key=value key=value` header line, returning values in the
/// order of `keys`.
pub(crate) fn parse_header(line: &str, keys: &[&str], lineno: usize) -> Result<Vec<usize>> {
    let bad = |msg: String| Error::Parse { line: lineno, msg };
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| bad("missing '#' header".into()))?;
    let mut found: Vec<Option<usize>> = vec![None; keys.len()];
    for tok in body.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header field {tok:?}")))?;
        if let Some(slot) = keys.iter().position(|&key| key == k) {
            found[slot] = Some(
                v.parse()
                    .map_err(|_| bad(format!("bad header value {tok:?}")))?,
            );
        }
    }
    found
        .into_iter()
        .zip(keys)
        .map(|(v, k)| v.ok_or_else(|| bad(format!("header missing {k}="))))
        .collect()
}

pub fn load_moments(path: impl AsRef<Path>) -> Result<MomentSequence> {
    MomentSequence::read_from(fs::File::open(path)?)
}

pub fn store_moments(seq: &MomentSequence, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    seq.write_to(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}
