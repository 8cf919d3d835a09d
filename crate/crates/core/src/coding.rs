//! Coding matrices that reduce a C-class problem to L binary subproblems,
//! and the two decoders that map subproblem decision values back to classes.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CodingScheme {
    #[default]
    OneVsAll,
    OneVsOne,
    RandomDense,
}

impl FromStr for CodingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ova" => Ok(Self::OneVsAll),
            "ovo" => Ok(Self::OneVsOne),
            "random" => Ok(Self::RandomDense),
            other => Err(Error::Config(format!("unknown coding `{other}` (ova|ovo|random)"))),
        }
    }
}

impl fmt::Display for CodingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::OneVsAll => "ova",
            Self::OneVsOne => "ovo",
            Self::RandomDense => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeMode {
    /// Smallest code Hamming distance.
    Hamming,
    /// `argmax_r Σ_l M[r,l] c_l`, the differentiable form.
    #[default]
    LinearApprox,
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hamming" => Ok(Self::Hamming),
            "linear" => Ok(Self::LinearApprox),
            other => Err(Error::Config(format!("unknown decode mode `{other}` (linear|hamming)"))),
        }
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hamming => "hamming",
            Self::LinearApprox => "linear",
        })
    }
}

/// Random dense codes use `ceil(RANDOM_CODE_FACTOR · log2 C)` columns.
pub const RANDOM_CODE_FACTOR: f64 = 10.0;

/// A `C×L` codebook over `{-1, 0, +1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingMatrix {
    scheme: CodingScheme,
    classes: usize,
    subproblems: usize,
    entries: Vec<i8>,
}

impl CodingMatrix {
    pub fn scheme(&self) -> CodingScheme {
        self.scheme
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn subproblems(&self) -> usize {
        self.subproblems
    }

    pub fn get(&self, class: usize, column: usize) -> i8 {
        self.entries[class * self.subproblems + column]
    }

    pub fn code(&self, class: usize) -> &[i8] {
        &self.entries[class * self.subproblems..(class + 1) * self.subproblems]
    }

    pub fn column(&self, l: usize) -> Vec<i8> {
        (0..self.classes).map(|r| self.get(r, l)).collect()
    }

    /// Entries as a real `C×L` matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_parts(
            self.classes,
            self.subproblems,
            self.entries.iter().map(|&e| e as f64).collect(),
        )
    }

    /// Builds a matrix from explicit entries and checks the structural invariants.
    pub fn from_entries(scheme: CodingScheme, classes: usize, entries: Vec<Vec<i8>>) -> Result<Self> {
        let subproblems = entries.first().map_or(0, Vec::len);
        if entries.len() != classes || entries.iter().any(|r| r.len() != subproblems) {
            return Err(Error::ShapeMismatch("ragged coding matrix".into()));
        }
        let m = Self { scheme, classes, subproblems, entries: entries.concat() };
        m.validate()?;
        Ok(m)
    }

    /// Entries in `{-1,0,1}`; no all-zero, constant-sign or repeated column; distinct rows;
    /// plus the per-scheme shape rules.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("coding matrix: {msg}")));
        if self.classes < 2 || self.subproblems < 1 {
            return bad(format!("{}x{} is too small", self.classes, self.subproblems));
        }
        if self.entries.iter().any(|e| !(-1..=1).contains(e)) {
            return bad("entries must be -1, 0 or +1".into());
        }
        let mut cols = HashSet::new();
        for l in 0..self.subproblems {
            let col = self.column(l);
            if !col.contains(&1) || !col.contains(&-1) {
                return bad(format!("column {l} lacks one of the two signs"));
            }
            if !cols.insert(col) {
                return bad(format!("column {l} is repeated"));
            }
        }
        let rows: HashSet<&[i8]> = (0..self.classes).map(|r| self.code(r)).collect();
        if rows.len() != self.classes {
            return bad("two classes share a code".into());
        }
        match self.scheme {
            CodingScheme::OneVsAll => {
                if self.subproblems != self.classes
                    || (0..self.classes).any(|r| {
                        (0..self.classes).any(|l| self.get(r, l) != if r == l { 1 } else { -1 })
                    })
                {
                    return bad("not a one-vs-all matrix".into());
                }
            }
            CodingScheme::OneVsOne => {
                if self.subproblems != self.classes * (self.classes - 1) / 2 {
                    return bad("one-vs-one needs C(C-1)/2 columns".into());
                }
                for l in 0..self.subproblems {
                    let col = self.column(l);
                    let pos = col.iter().filter(|&&e| e == 1).count();
                    let neg = col.iter().filter(|&&e| e == -1).count();
                    if pos != 1 || neg != 1 {
                        return bad(format!("one-vs-one column {l} must have one +1 and one -1"));
                    }
                }
            }
            CodingScheme::RandomDense => {
                if self.entries.contains(&0) {
                    return bad("dense codes have no zeros".into());
                }
            }
        }
        Ok(())
    }
}

/// Column count used for random dense codes: `ceil(10·log2 C)`, capped at the
/// number of distinct non-constant sign columns, `2^C − 2`.
pub fn random_code_length(classes: usize) -> usize {
    let wanted = (RANDOM_CODE_FACTOR * (classes as f64).log2()).ceil() as usize;
    let available = if classes >= 63 { usize::MAX } else { (1usize << classes) - 2 };
    wanted.max(1).min(available)
}

/// Builds a coding matrix. `rng` is required for [`CodingScheme::RandomDense`] and ignored otherwise.
pub fn build_coding_matrix(
    scheme: CodingScheme,
    classes: usize,
    rng: Option<&mut RngState>,
) -> Result<CodingMatrix> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("coding needs at least 2 classes, got {classes}")));
    }
    let m = match scheme {
        CodingScheme::OneVsAll => {
            let entries = (0..classes)
                .flat_map(|r| (0..classes).map(move |l| if r == l { 1 } else { -1 }))
                .collect();
            CodingMatrix { scheme, classes, subproblems: classes, entries }
        }
        CodingScheme::OneVsOne => {
            let pairs: Vec<(usize, usize)> =
                (0..classes).flat_map(|a| (a + 1..classes).map(move |b| (a, b))).collect();
            let mut entries = vec![0i8; classes * pairs.len()];
            for (l, &(a, b)) in pairs.iter().enumerate() {
                entries[a * pairs.len() + l] = 1;
                entries[b * pairs.len() + l] = -1;
            }
            CodingMatrix { scheme, classes, subproblems: pairs.len(), entries }
        }
        CodingScheme::RandomDense => {
            let rng = rng.ok_or_else(|| {
                Error::InvalidArgument("random dense coding requires an rng state".into())
            })?;
            random_dense(classes, rng)
        }
    };
    debug_assert!(m.validate().is_ok());
    Ok(m)
}

fn random_dense(classes: usize, rng: &mut RngState) -> CodingMatrix {
    let l = random_code_length(classes);
    let exhaustive = classes < 20 && l as u64 * 4 >= (1u64 << classes) - 2;
    loop {
        let columns: Vec<Vec<i8>> = if exhaustive {
            // dense enough that rejection sampling would stall: enumerate every
            // non-constant column and take a random subset
            let mut all: Vec<u64> = (1..(1u64 << classes) - 1).collect();
            rng.shuffle(&mut all);
            all.truncate(l);
            all.iter()
                .map(|bits| (0..classes).map(|r| if bits >> r & 1 == 1 { 1 } else { -1 }).collect())
                .collect()
        } else {
            let mut seen = HashSet::new();
            let mut cols = Vec::with_capacity(l);
            while cols.len() < l {
                let col: Vec<i8> = (0..classes).map(|_| if rng.coin() { 1 } else { -1 }).collect();
                if col.contains(&1) && col.contains(&-1) && seen.insert(col.clone()) {
                    cols.push(col);
                }
            }
            cols
        };
        let mut entries = vec![0i8; classes * l];
        for (c, col) in columns.iter().enumerate() {
            for (r, &e) in col.iter().enumerate() {
                entries[r * l + c] = e;
            }
        }
        let m = CodingMatrix { scheme: CodingScheme::RandomDense, classes, subproblems: l, entries };
        if m.validate().is_ok() {
            return m;
        }
    }
}

/// Per-subproblem targets: entry `(i, l)` is `M[labels[i], l]`.
pub fn encode_labels(m: &CodingMatrix, labels: &[usize]) -> Result<Vec<Vec<i8>>> {
    labels
        .iter()
        .map(|&y| {
            if y >= m.classes {
                Err(Error::LabelOutOfRange { label: y, classes: m.classes })
            } else {
                Ok(m.code(y).to_vec())
            }
        })
        .collect()
}

fn sgn(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Decodes `n×L` decision values into labels and `n×C` class scores (higher is better).
///
/// In `Hamming` mode the scores are negated Hamming distances. In `LinearApprox`
/// mode they are `s_r = Σ_l M[r,l] c_l`. Ties go to the lowest class index.
pub fn decode_scores(m: &CodingMatrix, c_values: &Matrix, mode: DecodeMode) -> Result<(Vec<usize>, Matrix)> {
    if c_values.cols() != m.subproblems {
        return Err(Error::ShapeMismatch(format!(
            "{} decision columns for {} subproblems",
            c_values.cols(),
            m.subproblems
        )));
    }
    let n = c_values.rows();
    let mut scores = Matrix::zeros(n, m.classes);
    for i in 0..n {
        let c = c_values.row(i);
        let out = scores.row_mut(i);
        for (r, s) in out.iter_mut().enumerate() {
            let code = m.code(r);
            *s = match mode {
                DecodeMode::LinearApprox => code.iter().zip(c).map(|(&mr, &cl)| mr as f64 * cl).sum(),
                DecodeMode::Hamming => -code
                    .iter()
                    .zip(c)
                    .map(|(&mr, &cl)| (1.0 - sgn(mr as f64 * sgn(cl))) / 2.0)
                    .sum::<f64>(),
            };
        }
    }
    let labels = argmax_rows(&scores);
    Ok((labels, scores))
}

/// Row-wise argmax, lowest index on ties.
pub fn argmax_rows(scores: &Matrix) -> Vec<usize> {
    scores
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
