//! Double-bracket diagonalizing flows on dense qubit Hamiltonians.
//!
//! The crate implements the Głazek-Wilson-Wegner (GWW) flow and its
//! variational generalizations as classical numerics, together with a
//! circuit-level emulation of the same flow built from two elemental
//! components — phase-flip pinching and the group commutator — plus the
//! randomized-pinching toolbox, query-count accounting and observable
//! extraction. Everything is checkable against an exact-diagonalization
//! oracle at desk scale (`L <= 9` qubits, `D <= 512`).
//!
//! Module map:
//!
//! - [`operator`] — dense complex operator algebra (restrictions, brackets,
//!   norms, exponentials, conjugations, Pauli strings).
//! - [`models`] — benchmark spin-chain Hamiltonians and sparsity analysis.
//! - [`flow`] — the discretized flow engine with per-step duration
//!   optimization, variational generator selection and circuit precompiling.
//! - [`emulator`] — the quantum-algorithm emulation: elemental components,
//!   the recursive frame-shifting scheme, repeated steps and error-bound
//!   certification.
//! - [`pinching`] — approximate pinching by uniformly random phase flips
//!   and the Hoeffding-based sample-size planner.
//! - [`observables`] — exact spectra, per-state energies and fluctuations,
//!   spectrum-vs-diagonal comparisons.

// Link against the system BLAS for complex matrix products.
extern crate blas_src;

pub mod emulator;
pub mod flow;
pub mod models;
pub mod observables;
pub mod operator;
pub mod pinching;

#[cfg(test)]
pub(crate) mod test_support;

pub use operator::{
    canonical_bracket, commutator, conjugate, default_tol, exp_antihermitian, hs_inner,
    pauli_decompose, pauli_string, AntiHermitian, BitString, Hermitian, Operator, OperatorError,
    Unitary,
};
