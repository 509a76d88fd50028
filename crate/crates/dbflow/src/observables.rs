//! Physical diagnostics extracted from flowed Hamiltonians.
//!
//! Exact spectra come from a dense eigensolver and act as the oracle every
//! flow result is compared against. Per-state energies and fluctuations are
//! computed in the flowed frame, which is identical by construction to
//! propagating the state forwards and measuring the input Hamiltonian.

use serde::Serialize;
use thiserror::Error;

use crate::operator::{eigh_hermitized, BitString, Hermitian, Operator, OperatorError};

#[derive(Debug, Error)]
pub enum ObservableError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("eigendecomposition residual {residual:.3e} exceeds {limit:.3e}")]
    ResidualTooLarge { residual: f64, limit: f64 },
    #[error("basis state index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("negative variance {0:.3e} beyond numerical tolerance")]
    NegativeVariance(f64),
    #[error("trace does not retain data for state {0} at step {1}")]
    InsufficientRetainedData(String, usize),
}

/// Sorted exact spectrum versus the sorted diagonal of a flowed Hamiltonian.
#[derive(Clone, Debug, Serialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub sorted_diagonal: Vec<f64>,
    pub max_abs_deviation: f64,
}

/// Energy expectation and fluctuation of one computational basis state at
/// one flow step.
#[derive(Clone, Debug, Serialize)]
pub struct StateDiagnostics {
    pub mu: String,
    pub step: usize,
    pub energy: f64,
    pub fluctuation: f64,
}

/// Sorted eigenvalues of a Hermitian operator.
///
/// The reconstruction residual of the decomposition is verified against
/// `1e-9 * op_norm(H)`.
pub fn exact_spectrum(h: &Hermitian) -> Result<Vec<f64>, ObservableError> {
    let (vals, vecs) = eigh_hermitized(h.op().matrix())?;
    // Residual check: max |(V L V^dag - H)| against the operator norm scale.
    let scale = vals.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let mut scaled = vecs.clone();
    for (q, mut col) in scaled.columns_mut().into_iter().enumerate() {
        let v = vals[q];
        col.mapv_inplace(|z| z * v);
    }
    let recon = scaled.dot(&vecs.t().mapv(|z| z.conj()));
    let mut residual: f64 = 0.0;
    for (a, b) in recon.iter().zip(h.op().matrix().iter()) {
        residual = residual.max((a - b).norm());
    }
    let limit = 1e-9 * scale.max(1.0);
    if residual > limit {
        return Err(ObservableError::ResidualTooLarge { residual, limit });
    }
    let mut out: Vec<f64> = vals.to_vec();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(out)
}

/// `<mu| H |mu>` under the convention `Z_i |mu> = (-1)^{mu_i} |mu>`.
pub fn energy_expectation(h: &Operator, mu: &BitString) -> Result<f64, ObservableError> {
    let idx = mu.index();
    if idx >= h.dim() || h.dim() != 1usize << mu.len() {
        return Err(ObservableError::IndexOutOfRange { index: idx, dim: h.dim() });
    }
    Ok(h.matrix()[(idx, idx)].re)
}

/// Energy fluctuation `sqrt(<mu|H^2|mu> - <mu|H|mu>^2)`, computed from the
/// `mu`-th column only: `<mu|H^2|mu> = sum_a |H[a, mu]|^2` for Hermitian `H`.
///
/// Small negative radicands from rounding are clamped to zero; anything
/// beyond `-1e-10 * <H^2>` is reported as a numerical fault.
pub fn energy_fluctuation(h: &Operator, mu: &BitString) -> Result<f64, ObservableError> {
    let idx = mu.index();
    if idx >= h.dim() || h.dim() != 1usize << mu.len() {
        return Err(ObservableError::IndexOutOfRange { index: idx, dim: h.dim() });
    }
    let col = h.matrix().column(idx);
    let second_moment: f64 = col.iter().map(|z| z.norm_sqr()).sum();
    let mean = h.matrix()[(idx, idx)].re;
    let variance = second_moment - mean * mean;
    if variance < -1e-10 * second_moment.max(1.0) {
        return Err(ObservableError::NegativeVariance(variance));
    }
    Ok(variance.max(0.0).sqrt())
}

/// Compare the sorted exact spectrum of `h` against the sorted diagonal of a
/// flowed iterate `h_k` (which must be isospectral to `h`).
pub fn spectrum_comparison(
    h: &Hermitian,
    h_k: &Operator,
) -> Result<SpectrumReport, ObservableError> {
    let eigenvalues = exact_spectrum(h)?;
    let mut sorted_diagonal: Vec<f64> = h_k.diagonal().iter().map(|z| z.re).collect();
    sorted_diagonal.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max_abs_deviation = eigenvalues
        .iter()
        .zip(&sorted_diagonal)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(SpectrumReport {
        eigenvalues,
        sorted_diagonal,
        max_abs_deviation,
    })
}

/// Diagnostics for one state at one step, as recorded into flow traces.
pub fn diagnostics_for(
    h_k: &Operator,
    mu: &BitString,
    step: usize,
) -> Result<StateDiagnostics, ObservableError> {
    Ok(StateDiagnostics {
        mu: mu.to_string(),
        step,
        energy: energy_expectation(h_k, mu)?,
        fluctuation: energy_fluctuation(h_k, mu)?,
    })
}

/// Startup self-test of the basis convention `Z|0> = +|0>`.
///
/// The sign convention silently flips all energies if mishandled, so the CLI
/// asserts it once at startup.
pub fn assert_basis_convention() {
    let z = crate::operator::pauli_string(
        &BitString::parse("1").expect("valid bits"),
        &BitString::parse("0").expect("valid bits"),
    )
    .expect("1-site Pauli string");
    assert!(
        (z.matrix()[(0, 0)].re - 1.0).abs() < 1e-15 && (z.matrix()[(1, 1)].re + 1.0).abs() < 1e-15,
        "basis convention violated: expected Z|0> = +|0>, Z|1> = -|1>"
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_tfim, build_tlfim};
    use crate::operator::Matrix;
    use num_complex::Complex64 as C64;

    #[test]
    fn spectrum_of_diagonal_is_sorted() {
        let mut mat = Matrix::zeros((3, 3));
        for (i, v) in [3.0, 1.0, 2.0].iter().enumerate() {
            mat[(i, i)] = C64::new(*v, 0.0);
        }
        let h = Hermitian::with_default_tol(Operator::new(mat).unwrap()).unwrap();
        let spec = exact_spectrum(&h).unwrap();
        assert_eq!(spec, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn spectrum_of_z_plus_x() {
        let z = crate::operator::pauli_string(
            &BitString::parse("1").unwrap(),
            &BitString::parse("0").unwrap(),
        )
        .unwrap();
        let x = crate::operator::pauli_string(
            &BitString::parse("0").unwrap(),
            &BitString::parse("1").unwrap(),
        )
        .unwrap();
        let h = Hermitian::with_default_tol(z.add(&x).unwrap()).unwrap();
        let spec = exact_spectrum(&h).unwrap();
        let r = 2.0f64.sqrt();
        assert!((spec[0] + r).abs() < 1e-12);
        assert!((spec[1] - r).abs() < 1e-12);
    }

    #[test]
    fn tlfim_l9_ground_energy_below_minus_l() {
        let h = build_tlfim(9, 2.0).unwrap().to_hermitian().unwrap();
        let spec = exact_spectrum(&h).unwrap();
        assert_eq!(spec.len(), 512);
        assert!(spec[0] < -9.0, "ground energy {}", spec[0]);
    }

    #[test]
    fn energy_convention_all_zeros_gives_l() {
        // H = sum Z_j on L sites: <0...0|H|0...0> = L.
        let l = 3;
        let h = build_tfim(l, 0.0).unwrap().to_operator();
        let e = energy_expectation(&h, &BitString::zeros(l)).unwrap();
        assert!((e - l as f64).abs() < 1e-12);
    }

    #[test]
    fn ising_term_has_zero_expectation_in_basis_states() {
        let l = 3;
        let full = build_tfim(l, 1.0).unwrap().to_operator();
        let fields = build_tfim(l, 0.0).unwrap().to_operator();
        for mu in BitString::all(l) {
            let e_full = energy_expectation(&full, &mu).unwrap();
            let e_fields = energy_expectation(&fields, &mu).unwrap();
            assert!((e_full - e_fields).abs() < 1e-12);
        }
    }

    #[test]
    fn fluctuation_vanishes_for_diagonal() {
        let h = build_tfim(2, 0.0).unwrap().to_operator();
        for mu in BitString::all(2) {
            assert_eq!(energy_fluctuation(&h, &mu).unwrap(), 0.0);
        }
    }

    #[test]
    fn fluctuation_of_x_in_zero_state_is_one() {
        let x = crate::operator::pauli_string(
            &BitString::parse("0").unwrap(),
            &BitString::parse("1").unwrap(),
        )
        .unwrap();
        let xi = energy_fluctuation(&x, &BitString::parse("0").unwrap()).unwrap();
        assert!((xi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tfim_l2_fluctuation_oracle() {
        // H = XX + Z1 + Z2 at mu = 00: <H> = 2, <H^2> = 5, so Xi = 1.
        let h = build_tfim(2, 1.0).unwrap().to_operator();
        let mu = BitString::zeros(2);
        let e = energy_expectation(&h, &mu).unwrap();
        let xi = energy_fluctuation(&h, &mu).unwrap();
        assert!((e - 2.0).abs() < 1e-12);
        assert!((xi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn comparison_against_exactly_diagonalized() {
        let h = build_tfim(3, 1.0).unwrap().to_hermitian().unwrap();
        let spec = exact_spectrum(&h).unwrap();
        let mut mat = Matrix::zeros((8, 8));
        for (i, v) in spec.iter().enumerate() {
            mat[(i, i)] = C64::new(*v, 0.0);
        }
        let diag = Operator::new(mat).unwrap();
        let report = spectrum_comparison(&h, &diag).unwrap();
        assert!(report.max_abs_deviation <= 1e-9 * h.op().op_norm());
    }

    #[test]
    fn basis_convention_self_test() {
        assert_basis_convention();
    }
}
