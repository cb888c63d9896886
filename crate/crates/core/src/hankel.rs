//! Truncated (and shifted) multivariate Hankel matrices
//! `[sigma_{alpha + beta}]` over the monomial sets of degree `<= d1` (rows)
//! and `<= d2` (columns).

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::moments::{MomentSequence, MonomialSet, MultiIndex};

#[derive(Clone, Debug)]
pub struct HankelMatrix {
    pub rows: MonomialSet,
    pub cols: MonomialSet,
    /// Variable `x_i` (0-based) the symbol was multiplied by, if any.
    pub shift: Option<usize>,
    pub entries: DMatrix<Complex64>,
}

impl HankelMatrix {
    pub fn shape(&self) -> (usize, usize) {
        self.entries.shape()
    }

    /// Tab-separated `re:im` rows, one matrix row per line.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        for row in self.entries.row_iter() {
            let line: Vec<String> = row
                .iter()
                .map(|z| format!("{:.17e}:{:.17e}", z.re, z.im))
                .collect();
            writeln!(w, "{}", line.join("\t"))?;
        }
        Ok(())
    }
}

/// Default split `d1 = ceil((d-1)/2)`, `d2 = floor((d-1)/2)` so that
/// `d1 + d2 + 1 = d`.
pub fn degree_split(d: usize) -> Result<(usize, usize)> {
    if d < 1 {
        return Err(Error::InvalidInput("degree split needs d >= 1".into()));
    }
    let m = d - 1;
    Ok((m.div_ceil(2), m / 2))
}

fn assemble(
    seq: &MomentSequence,
    d1: usize,
    d2: usize,
    shift: Option<usize>,
) -> Result<HankelMatrix> {
    let n = seq.n();
    let needed = d1 + d2 + usize::from(shift.is_some());
    if needed > seq.d() {
        return Err(Error::InsufficientDegree {
            needed,
            available: seq.d(),
        });
    }
    let offset = match shift {
        Some(i) if i >= n => {
            return Err(Error::InvalidInput(format!(
                "shift variable {} out of range for n={n}",
                i + 1
            )))
        }
        Some(i) => MultiIndex::unit(n, i),
        None => MultiIndex::zero(n),
    };
    let rows = MonomialSet::new(n, d1);
    let cols = MonomialSet::new(n, d2);
    let moments = seq.monomials();
    let values = seq.values();
    let entries = DMatrix::from_fn(rows.len(), cols.len(), |a, b| {
        let gamma = rows.get(a).add(cols.get(b)).add(&offset);
        // degree bound checked above, so every index is present
        values[moments.position(&gamma).expect("moment in range")]
    });
    Ok(HankelMatrix {
        rows,
        cols,
        shift,
        entries,
    })
}

pub fn build_hankel(seq: &MomentSequence, d1: usize, d2: usize) -> Result<HankelMatrix> {
    assemble(seq, d1, d2, None)
}

/// `[sigma_{a + b}]` for arbitrary row and column index lists.
pub fn hankel_on(
    seq: &MomentSequence,
    rows: &[MultiIndex],
    cols: &[MultiIndex],
) -> Result<DMatrix<Complex64>> {
    let mut out = DMatrix::zeros(rows.len(), cols.len());
    for (i, a) in rows.iter().enumerate() {
        for (j, b) in cols.iter().enumerate() {
            if a.dim() != seq.n() || b.dim() != seq.n() {
                return Err(Error::Dimension {
                    expected: seq.n(),
                    got: if a.dim() != seq.n() { a.dim() } else { b.dim() },
                });
            }
            let gamma = a.add(b);
            out[(i, j)] = seq.get(&gamma).ok_or_else(|| Error::InsufficientDegree {
                needed: gamma.degree(),
                available: seq.d(),
            })?;
        }
    }
    Ok(out)
}

/// Hankel matrix of `x_i * sigma`, entries `sigma_{alpha + beta + e_i}`.
/// `var` is the 0-based variable index.
pub fn build_shifted_hankel(
    seq: &MomentSequence,
    d1: usize,
    d2: usize,
    var: usize,
) -> Result<HankelMatrix> {
    assemble(seq, d1, d2, Some(var))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real_seq(n: usize, d: usize, vals: &[f64]) -> MomentSequence {
        let mut it = vals.iter();
        MomentSequence::from_fn(n, d, |_| Complex64::new(*it.next().unwrap(), 0.0))
    }

    fn re(m: &HankelMatrix) -> Vec<Vec<f64>> {
        m.entries
            .row_iter()
            .map(|r| {
                r.iter()
                    .map(|z| {
                        assert_eq!(z.im, 0.0);
                        z.re
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn split_examples() {
        assert_eq!(degree_split(10).unwrap(), (5, 4));
        assert_eq!(degree_split(4).unwrap(), (2, 1));
        assert_eq!(degree_split(1).unwrap(), (0, 0));
        assert!(degree_split(0).is_err());
        for d in 1..30 {
            let (a, b) = degree_split(d).unwrap();
            assert_eq!(a + b + 1, d);
        }
    }

    #[test]
    fn univariate_examples() {
        let pow2 = real_seq(1, 3, &[1.0, 2.0, 4.0, 8.0]);
        assert_eq!(re(&build_hankel(&pow2, 1, 1).unwrap()), [[1.0, 2.0], [2.0, 4.0]]);
        assert_eq!(
            re(&build_shifted_hankel(&pow2, 1, 1, 0).unwrap()),
            [[2.0, 4.0], [4.0, 8.0]]
        );
        let alt = real_seq(1, 3, &[2.0, 0.0, 2.0, 0.0]);
        assert_eq!(re(&build_hankel(&alt, 1, 1).unwrap()), [[2.0, 0.0], [0.0, 2.0]]);
        assert_eq!(
            re(&build_shifted_hankel(&alt, 1, 1, 0).unwrap()),
            [[0.0, 2.0], [2.0, 0.0]]
        );
    }

    #[test]
    fn bivariate_shift_column() {
        // sigma_00..sigma_21 = 1..8 in canonical order; only degree <= 2 is needed
        let seq = real_seq(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let h = build_shifted_hankel(&seq, 1, 0, 1).unwrap();
        assert_eq!(re(&h), [[3.0], [5.0], [6.0]]);
    }

    #[test]
    fn arbitrary_index_lists() {
        let seq = real_seq(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let idx = |v: &[&[u32]]| v.iter().map(|e| MultiIndex::new(e.to_vec())).collect::<Vec<_>>();
        let rows = idx(&[&[0, 0], &[1, 0], &[0, 1]]);
        let cols = idx(&[&[0, 0], &[1, 0], &[0, 1], &[2, 0]]);
        let h = hankel_on(&seq, &rows, &cols).unwrap();
        let expect = [[1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 5.0, 7.0], [3.0, 5.0, 6.0, 8.0]];
        for (i, row) in expect.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(h[(i, j)], Complex64::new(v, 0.0));
            }
        }
        assert!(hankel_on(&seq, &idx(&[&[2, 0]]), &idx(&[&[2, 0]])).is_err());
        assert!(hankel_on(&seq, &idx(&[&[0]]), &cols).is_err());
    }

    #[test]
    fn degree_errors() {
        let seq = real_seq(1, 3, &[1.0, 2.0, 4.0, 8.0]);
        assert!(matches!(
            build_hankel(&seq, 2, 2),
            Err(Error::InsufficientDegree { needed: 4, available: 3 })
        ));
        assert!(build_shifted_hankel(&seq, 2, 1, 0).is_err());
        assert!(build_shifted_hankel(&seq, 1, 1, 1).is_err());
    }

    #[test]
    fn dump_format() {
        let seq = real_seq(1, 2, &[1.0, 2.0, 4.0]);
        let mut buf = Vec::new();
        build_hankel(&seq, 1, 1).unwrap().dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split('\t').count(), 2);
        assert!(lines[1].starts_with("2.00000000000000000e0:0.00000000000000000e0\t"));
    }
}
