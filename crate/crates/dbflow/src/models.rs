//! Benchmark spin-chain Hamiltonians and their sparse Pauli structure.
//!
//! Models are built symbolically as [`PauliSum`]s (real coefficients, one
//! Pauli word per term) and materialized to dense [`Operator`]s on demand.
//! Both chains use open boundary conditions.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::operator::{pauli_decompose, BitString, Hermitian, Operator, OperatorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("chain needs at least 2 sites, got {0}")]
    TooFewSites(usize),
    #[error("term word length {found} does not match register size {expected}")]
    WordLength { expected: usize, found: usize },
    #[error("coefficient {0:?} is not a finite real number")]
    BadCoefficient(String),
    #[error("invalid Pauli letter {0:?}, expected one of I, X, Y, Z")]
    BadPauliLetter(char),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Single-site Pauli factor.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum PauliFactor {
    I,
    X,
    Y,
    Z,
}

impl PauliFactor {
    fn from_char(c: char) -> Result<Self, ModelError> {
        match c {
            'I' => Ok(Self::I),
            'X' => Ok(Self::X),
            'Y' => Ok(Self::Y),
            'Z' => Ok(Self::Z),
            other => Err(ModelError::BadPauliLetter(other)),
        }
    }

    fn to_char(self) -> char {
        match self {
            Self::I => 'I',
            Self::X => 'X',
            Self::Y => 'Y',
            Self::Z => 'Z',
        }
    }
}

/// One real-coefficient Pauli word, e.g. `2.0 * X1 X2`.
#[derive(Clone, PartialEq, Debug)]
pub struct PauliTerm {
    pub coeff: f64,
    pub word: Vec<PauliFactor>,
}

impl fmt::Display for PauliTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ", self.coeff)?;
        for p in &self.word {
            write!(f, "{}", p.to_char())?;
        }
        Ok(())
    }
}

/// A Hermitian operator in symbolic form: a merged list of real-coefficient
/// Pauli words on `sites` qubits.
#[derive(Clone, PartialEq, Debug)]
pub struct PauliSum {
    sites: usize,
    terms: Vec<PauliTerm>,
}

impl PauliSum {
    /// Build from raw terms; duplicate words are merged and exact zeros
    /// dropped.
    pub fn new(sites: usize, terms: Vec<PauliTerm>) -> Result<Self, ModelError> {
        let mut merged: BTreeMap<Vec<PauliFactor>, f64> = BTreeMap::new();
        for t in terms {
            if t.word.len() != sites {
                return Err(ModelError::WordLength {
                    expected: sites,
                    found: t.word.len(),
                });
            }
            if !t.coeff.is_finite() {
                return Err(ModelError::BadCoefficient(format!("{}", t.coeff)));
            }
            *merged.entry(t.word).or_insert(0.0) += t.coeff;
        }
        let terms = merged
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(word, coeff)| PauliTerm { coeff, word })
            .collect();
        Ok(Self { sites, terms })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn terms(&self) -> &[PauliTerm] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        1usize << self.sites
    }

    /// Materialize to a dense matrix.
    ///
    /// Each word maps basis state `b` to `b ^ xmask` with a phase collected
    /// per site: `Z` contributes `(-1)^{b_j}`, `Y` contributes
    /// `i (-1)^{b_j}`, `X` contributes `1`.
    pub fn to_operator(&self) -> Operator {
        let d = self.dim();
        let mut mat = Array2::<C64>::zeros((d, d));
        for term in &self.terms {
            let mut xmask = 0usize;
            for (j, p) in term.word.iter().enumerate() {
                if matches!(p, PauliFactor::X | PauliFactor::Y) {
                    xmask |= 1 << (self.sites - 1 - j);
                }
            }
            for b in 0..d {
                let mut amp = C64::new(term.coeff, 0.0);
                for (j, p) in term.word.iter().enumerate() {
                    let bit = (b >> (self.sites - 1 - j)) & 1 == 1;
                    match p {
                        PauliFactor::I | PauliFactor::X => {}
                        PauliFactor::Z => {
                            if bit {
                                amp = -amp;
                            }
                        }
                        PauliFactor::Y => {
                            amp *= C64::new(0.0, 1.0);
                            if bit {
                                amp = -amp;
                            }
                        }
                    }
                }
                mat[(b ^ xmask, b)] += amp;
            }
        }
        Operator::new(mat).expect("materialized Pauli sum is square and finite")
    }

    /// Materialize with the Hermitian tag; exact by construction since all
    /// coefficients are real.
    pub fn to_hermitian(&self) -> Result<Hermitian, ModelError> {
        Ok(Hermitian::with_default_tol(self.to_operator())?)
    }

    /// Text form: one `coefficient word` line per term.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.terms {
            out.push_str(&t.to_string());
            out.push('\n');
        }
        out
    }

    /// Parse the text form. Blank lines and `#` comments are skipped; the
    /// register size is inferred from the first term. Coefficients must be
    /// finite reals, which keeps every parsed sum Hermitian.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut sites: Option<usize> = None;
        let mut terms = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let coeff_str = parts.next().ok_or(ModelError::Parse {
                line: idx + 1,
                msg: "missing coefficient".into(),
            })?;
            let word_str = parts.next().ok_or(ModelError::Parse {
                line: idx + 1,
                msg: "missing Pauli word".into(),
            })?;
            if parts.next().is_some() {
                return Err(ModelError::Parse {
                    line: idx + 1,
                    msg: "expected exactly two fields: coefficient and word".into(),
                });
            }
            let coeff: f64 = coeff_str.parse().map_err(|_| ModelError::Parse {
                line: idx + 1,
                msg: format!("cannot parse {coeff_str:?} as a real coefficient"),
            })?;
            if !coeff.is_finite() {
                return Err(ModelError::BadCoefficient(coeff_str.to_string()));
            }
            let word = word_str
                .chars()
                .map(PauliFactor::from_char)
                .collect::<Result<Vec<_>, _>>()?;
            let l = *sites.get_or_insert(word.len());
            if word.len() != l {
                return Err(ModelError::WordLength {
                    expected: l,
                    found: word.len(),
                });
            }
            terms.push(PauliTerm { coeff, word });
        }
        let sites = sites.ok_or(ModelError::Parse {
            line: 0,
            msg: "no terms found".into(),
        })?;
        Self::new(sites, terms)
    }
}

/// Transverse-field Ising chain `J_X sum X_j X_{j+1} + sum Z_j` on `l` sites,
/// open boundaries.
pub fn build_tfim(l: usize, j_x: f64) -> Result<PauliSum, ModelError> {
    if l < 2 {
        return Err(ModelError::TooFewSites(l));
    }
    let mut terms = Vec::new();
    for j in 0..l - 1 {
        let mut word = vec![PauliFactor::I; l];
        word[j] = PauliFactor::X;
        word[j + 1] = PauliFactor::X;
        terms.push(PauliTerm { coeff: j_x, word });
    }
    for j in 0..l {
        let mut word = vec![PauliFactor::I; l];
        word[j] = PauliFactor::Z;
        terms.push(PauliTerm { coeff: 1.0, word });
    }
    PauliSum::new(l, terms)
}

/// Transverse and longitudinal-field Ising chain
/// `J_X sum X_j X_{j+1} + sum (Z_j + X_j)` on `l` sites, open boundaries.
pub fn build_tlfim(l: usize, j_x: f64) -> Result<PauliSum, ModelError> {
    let mut sum = build_tfim(l, j_x)?;
    let mut terms: Vec<PauliTerm> = sum.terms.drain(..).collect();
    for j in 0..l {
        let mut word = vec![PauliFactor::I; l];
        word[j] = PauliFactor::X;
        terms.push(PauliTerm { coeff: 1.0, word });
    }
    PauliSum::new(l, terms)
}

/// Off-diagonal support of an operator in the `Z_mu X_nu` basis.
///
/// The sparsity counts Pauli words with `nu != 0` and coefficient magnitude
/// above the threshold. Note: counted per word, so the transverse-field
/// chain on `l` sites reports `l - 1` nearest-neighbour couplings; see the
/// sample-size planner in [`crate::pinching`], which takes the sparsity as an
/// explicit input so any counting convention can be supplied.
#[derive(Clone, Debug)]
pub struct SparsitySummary {
    pub support: BTreeSet<(BitString, BitString)>,
    pub sparsity: usize,
    pub max_coupling: f64,
}

/// Compute the off-diagonal support set, its cardinality `S` and the largest
/// coupling magnitude over it.
///
/// `threshold = None` uses the default `1e-10 * max_coupling`.
pub fn sparsity_of(
    a: &Operator,
    sites: usize,
    threshold: Option<f64>,
) -> Result<SparsitySummary, ModelError> {
    if a.dim() != 1usize << sites {
        return Err(ModelError::Operator(OperatorError::NotPowerOfTwo {
            dim: a.dim(),
        }));
    }
    // Keep everything at decompose time, then threshold relative to the
    // largest off-diagonal coupling.
    let coeffs = pauli_decompose(a, Some(0.0))?;
    let mut max_coupling: f64 = 0.0;
    for ((_, nu), c) in &coeffs {
        if !nu.is_zero() {
            max_coupling = max_coupling.max(c.norm());
        }
    }
    let threshold = threshold.unwrap_or(1e-10 * max_coupling);
    let mut support = BTreeSet::new();
    for ((mu, nu), c) in &coeffs {
        if !nu.is_zero() && c.norm() > threshold {
            support.insert((mu.clone(), nu.clone()));
        }
    }
    Ok(SparsitySummary {
        sparsity: support.len(),
        max_coupling,
        support,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tfim_l2_terms() {
        let h = build_tfim(2, 1.0).unwrap();
        assert_eq!(h.terms().len(), 3);
        let text = h.to_text();
        assert!(text.contains("1 XX"));
        assert!(text.contains("1 ZI"));
        assert!(text.contains("1 IZ"));
    }

    #[test]
    fn tfim_rejects_single_site() {
        assert!(matches!(build_tfim(1, 1.0), Err(ModelError::TooFewSites(1))));
    }

    #[test]
    fn tfim_zero_coupling_is_diagonal() {
        let h = build_tfim(3, 0.0).unwrap().to_operator();
        assert_eq!(h.offdiag().hs_norm(), 0.0);
    }

    #[test]
    fn tlfim_l2_terms() {
        let h = build_tlfim(2, 2.0).unwrap();
        assert_eq!(h.terms().len(), 5);
        let m = h.to_operator();
        // X1 has matrix elements between |00> and |10>
        assert!((m.matrix()[(2, 0)].re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn materialized_pinch_and_offdiag_split_exactly() {
        let h = build_tfim(3, 1.5).unwrap().to_operator();
        let fields = build_tfim(3, 0.0).unwrap().to_operator();
        assert_eq!(h.pinch(), fields);
        let mut couplings = Vec::new();
        for j in 0..2usize {
            let mut word = vec![PauliFactor::I; 3];
            word[j] = PauliFactor::X;
            word[j + 1] = PauliFactor::X;
            couplings.push(PauliTerm { coeff: 1.5, word });
        }
        let xx = PauliSum::new(3, couplings).unwrap().to_operator();
        assert_eq!(h.offdiag(), xx);
    }

    #[test]
    fn materialization_is_hermitian() {
        let h = build_tlfim(4, 2.0).unwrap();
        assert!(h.to_hermitian().is_ok());
    }

    #[test]
    fn y_factor_materializes_correctly() {
        // Y = [[0, -i], [i, 0]]
        let y = PauliSum::new(
            1,
            vec![PauliTerm { coeff: 1.0, word: vec![PauliFactor::Y] }],
        )
        .unwrap()
        .to_operator();
        assert!((y.matrix()[(0, 1)] - C64::new(0.0, -1.0)).norm() < 1e-15);
        assert!((y.matrix()[(1, 0)] - C64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn sparsity_of_tfim() {
        let l = 4;
        let h = build_tfim(l, 1.0).unwrap().to_operator();
        let summary = sparsity_of(&h, l, None).unwrap();
        // Pauli-word count: L-1 nearest-neighbour XX couplings.
        assert_eq!(summary.sparsity, l - 1);
        assert!((summary.max_coupling - 1.0).abs() < 1e-12);
        for (mu, nu) in &summary.support {
            assert!(mu.is_zero());
            assert!(!nu.is_zero());
        }
    }

    #[test]
    fn sparsity_of_diagonal_is_zero() {
        let h = build_tfim(3, 0.0).unwrap().to_operator();
        let summary = sparsity_of(&h, 3, None).unwrap();
        assert_eq!(summary.sparsity, 0);
    }

    #[test]
    fn sparsity_support_stable_under_threshold_choice() {
        let l = 3;
        let h = build_tfim(l, 0.7).unwrap().to_operator();
        let base = sparsity_of(&h, l, Some(0.0)).unwrap();
        for thr in [1e-12, 1e-6, 0.69] {
            let s = sparsity_of(&h, l, Some(thr)).unwrap();
            assert_eq!(s.support, base.support);
        }
    }

    #[test]
    fn parse_rejects_malformed_input() {
        assert!(PauliSum::parse("abc XX").is_err());
        assert!(PauliSum::parse("1.0 XQ").is_err());
        assert!(PauliSum::parse("1.0 XX extra").is_err());
        assert!(PauliSum::parse("1.0 XX\n2.0 XXX").is_err());
        assert!(PauliSum::parse("").is_err());
        assert!(PauliSum::parse("inf XX").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn text_roundtrip(coeffs in proptest::collection::vec(-5.0f64..5.0, 1..6)) {
            let l = 3;
            let letters = [PauliFactor::I, PauliFactor::X, PauliFactor::Y, PauliFactor::Z];
            let terms: Vec<PauliTerm> = coeffs
                .iter()
                .enumerate()
                .map(|(i, &c)| PauliTerm {
                    coeff: c,
                    word: (0..l).map(|j| letters[(i + j) % 4]).collect(),
                })
                .collect();
            let sum = PauliSum::new(l, terms).unwrap();
            let back = PauliSum::parse(&sum.to_text());
            if sum.terms().is_empty() {
                prop_assert!(back.is_err());
            } else {
                prop_assert_eq!(back.unwrap(), sum);
            }
        }
    }
}
