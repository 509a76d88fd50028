//! The discretized double-bracket flow engine.
//!
//! A flow step conjugates the current Hamiltonian `J` by `exp(-s W)` where
//! the generator `W` is an anti-Hermitian bracket selected per step: the
//! canonical bracket `[pinch(J), offdiag(J)]`, a fixed phase-flip bracket
//! `[Z_mu, J]`, or a caller-supplied diagonal bracket `[Delta, J]`. Step
//! durations are chosen by a global grid scan plus golden-section
//! refinement of the off-diagonal Hilbert-Schmidt norm, which also captures
//! the case where a later local minimum beats the first one.
//!
//! Index convention matches the discretization `U_k = U_{k-1} e^{-s W_k}`,
//! `H_k = U_k^dag H U_k = e^{s W_k} H_{k-1} e^{-s W_k}`, with `W_k` built
//! from `H_{k-1}`.

use ndarray::Array1;
use num_complex::Complex64 as C64;
use serde::Serialize;
use thiserror::Error;

use crate::models::{ModelError, PauliSum};
use crate::observables::{diagnostics_for, ObservableError, StateDiagnostics};
use crate::operator::{
    canonical_bracket, conjugate, default_tol, eigh_hermitized, exp_antihermitian,
    hs_inner, pauli_decompose, phase_conjugation, phase_flip_signs, AntiHermitian, BitString,
    Hermitian, Matrix, Operator, OperatorError, Unitary,
};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
    #[error("bracket vanishes: the flow has reached a fixed point for this generator")]
    ZeroBracket,
    #[error("all candidate generators have vanishing brackets")]
    AllBracketsZero,
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("custom generator must be a real diagonal operator (max off-diagonal {0:.3e})")]
    NotDiagonal(f64),
    #[error("invalid step search range: need 0 < s_min < s_max and >= 8 grid points")]
    BadSearchConfig,
    #[error("trace is empty")]
    EmptyTrace,
    #[error("generator decomposition has non-real residue {0:.3e}")]
    NonRealGenerator(f64),
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Which bracket generates a flow step.
#[derive(Clone, Debug)]
pub enum GeneratorKind {
    /// `[pinch(J), offdiag(J)]` of the current iterate.
    Canonical,
    /// `[Z_mu, J]` for a fixed phase flip.
    FixedFlip(BitString),
    /// `[Delta, J]` for a caller-supplied real diagonal operator.
    CustomDiagonal(Operator),
}

impl GeneratorKind {
    pub fn label(&self) -> String {
        match self {
            Self::Canonical => "canonical".to_string(),
            Self::FixedFlip(mu) => format!("flip:{mu}"),
            Self::CustomDiagonal(_) => "custom-diagonal".to_string(),
        }
    }
}

/// Commutator `[diag, J]` with a diagonal left argument, entrywise.
fn diag_commutator(diag: &[C64], j: &Operator) -> Operator {
    let d = j.dim();
    let mut mat = Matrix::zeros((d, d));
    let m = j.matrix();
    for a in 0..d {
        for b in 0..d {
            mat[(a, b)] = (diag[a] - diag[b]) * m[(a, b)];
        }
    }
    Operator::new(mat).expect("entrywise product of finite matrices")
}

/// The flow generator for `j` under the given kind; always anti-Hermitian.
pub fn bracket_for(j: &Hermitian, kind: &GeneratorKind) -> Result<AntiHermitian, FlowError> {
    match kind {
        GeneratorKind::Canonical => Ok(canonical_bracket(j)?),
        GeneratorKind::FixedFlip(mu) => {
            let signs: Vec<C64> = phase_flip_signs(mu)
                .into_iter()
                .map(|s| C64::new(s, 0.0))
                .collect();
            let w = diag_commutator(&signs, j.op());
            Ok(AntiHermitian::with_default_tol(w)?)
        }
        GeneratorKind::CustomDiagonal(delta) => {
            let off = delta.offdiag().max_entry_norm();
            let imag = delta
                .diagonal()
                .iter()
                .map(|z| z.im.abs())
                .fold(0.0, f64::max);
            let tol = default_tol(delta.dim()) * (1.0 + delta.max_entry_norm());
            if off > tol || imag > tol {
                return Err(FlowError::NotDiagonal(off.max(imag)));
            }
            let diag: Vec<C64> = delta.diagonal().to_vec();
            let w = diag_commutator(&diag, j.op());
            Ok(AntiHermitian::with_default_tol(w)?)
        }
    }
}

fn zero_bracket_tol(j: &Hermitian) -> f64 {
    1e-12 * j.op().hs_norm().max(1.0)
}

/// One flow step `e^{s W} J e^{-s W}` with `W = bracket_for(j, kind)`.
///
/// Negative `s` is accepted (it conjugates the other way), which the
/// finite-difference slope oracles rely on.
pub fn flow_step(j: &Hermitian, kind: &GeneratorKind, s: f64) -> Result<Hermitian, FlowError> {
    let w = bracket_for(j, kind)?;
    if s == 0.0 {
        return Ok(j.clone());
    }
    let u = exp_antihermitian(&w, -s)?;
    let rotated = conjugate(j.op(), &u)?;
    Ok(Hermitian::with_default_tol(rotated)?)
}

// ---------------------------------------------------------------------------
// Step duration search
// ---------------------------------------------------------------------------

/// Search space for the per-step duration optimization.
#[derive(Clone, Debug, Serialize)]
pub struct StepSearchConfig {
    pub s_min: f64,
    pub s_max: f64,
    pub grid_points: usize,
    pub refine_iterations: usize,
}

impl Default for StepSearchConfig {
    fn default() -> Self {
        Self {
            s_min: 1e-3,
            s_max: 3.0,
            grid_points: 60,
            refine_iterations: 20,
        }
    }
}

impl StepSearchConfig {
    fn validate(&self) -> Result<(), FlowError> {
        if !(self.s_min > 0.0 && self.s_min < self.s_max && self.grid_points >= 8) {
            return Err(FlowError::BadSearchConfig);
        }
        Ok(())
    }

    fn grid(&self) -> Vec<f64> {
        let n = self.grid_points;
        let ratio = self.s_max / self.s_min;
        (0..n)
            .map(|i| self.s_min * ratio.powf(i as f64 / (n - 1) as f64))
            .collect()
    }
}

/// Scans `s -> |offdiag(e^{sW} J e^{-sW})|_HS` cheaply by working in the
/// eigenbasis of the generator: one matrix product per probed duration.
struct DurationScanner {
    basis: Matrix,
    basis_adj: Matrix,
    freqs: Array1<f64>,
    rotated: Matrix,
    total_hs_sq: f64,
    dim: usize,
    generator_hs_norm: f64,
}

impl DurationScanner {
    fn new(j: &Hermitian, w: &AntiHermitian) -> Result<Self, FlowError> {
        let g = w.op().scaled(C64::new(0.0, 1.0));
        let (freqs, basis) = eigh_hermitized(g.matrix())?;
        let basis_adj = basis.t().mapv(|z| z.conj());
        let rotated = basis_adj.dot(j.op().matrix()).dot(&basis);
        Ok(Self {
            basis,
            basis_adj,
            freqs,
            rotated,
            total_hs_sq: j.op().hs_norm().powi(2),
            dim: j.dim(),
            generator_hs_norm: w.op().hs_norm(),
        })
    }

    /// Off-diagonal HS norm of the flowed iterate at duration `s`, via
    /// `|offdiag|^2 = |J|^2 - sum_i |diag_i|^2`.
    fn offdiag_norm_at(&self, s: f64) -> f64 {
        let d = self.dim;
        let mut twisted = self.rotated.clone();
        for p in 0..d {
            for q in 0..d {
                let phase = C64::from_polar(1.0, -s * (self.freqs[p] - self.freqs[q]));
                twisted[(p, q)] *= phase;
            }
        }
        let g2 = self.basis.dot(&twisted);
        let mut diag_sq = 0.0;
        for i in 0..d {
            let mut acc = C64::new(0.0, 0.0);
            for q in 0..d {
                acc += g2[(i, q)] * self.basis[(i, q)].conj();
            }
            diag_sq += acc.norm_sqr();
        }
        (self.total_hs_sq - diag_sq).max(0.0).sqrt()
    }

    /// The step unitary `e^{-sW}`.
    fn evolution_at(&self, s: f64) -> Result<Unitary, OperatorError> {
        let u = phase_conjugation(&self.basis, &self.freqs, s);
        Unitary::try_new(u, default_tol(self.dim))
    }

    /// The full flowed iterate `e^{sW} J e^{-sW}`.
    fn flowed_at(&self, s: f64) -> Operator {
        let d = self.dim;
        let mut twisted = self.rotated.clone();
        for p in 0..d {
            for q in 0..d {
                let phase = C64::from_polar(1.0, -s * (self.freqs[p] - self.freqs[q]));
                twisted[(p, q)] *= phase;
            }
        }
        let mat = self.basis.dot(&twisted).dot(&self.basis_adj);
        Operator::new(mat).expect("conjugation preserves shape")
    }
}

/// A fully evaluated candidate step: generator, optimal duration and the
/// decrease it achieves.
struct PreparedStep {
    kind: GeneratorKind,
    scanner: DurationScanner,
    s: f64,
    sigma_decrease: f64,
}

fn prepare_step(
    j: &Hermitian,
    kind: &GeneratorKind,
    cfg: &StepSearchConfig,
    offdiag_before: f64,
) -> Result<PreparedStep, FlowError> {
    cfg.validate()?;
    let w = bracket_for(j, kind)?;
    if w.op().hs_norm() <= zero_bracket_tol(j) {
        return Err(FlowError::ZeroBracket);
    }
    let scanner = DurationScanner::new(j, &w)?;
    let grid = cfg.grid();
    let values: Vec<f64> = grid.iter().map(|&s| scanner.offdiag_norm_at(s)).collect();
    let best_idx = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let (mut best_s, mut best_val) = (grid[best_idx], values[best_idx]);

    // Golden-section refinement inside the bracketing grid neighbours.
    let lo = if best_idx == 0 { grid[0] } else { grid[best_idx - 1] };
    let hi = if best_idx + 1 == grid.len() {
        grid[grid.len() - 1]
    } else {
        grid[best_idx + 1]
    };
    if hi > lo {
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let mut fc = scanner.offdiag_norm_at(c);
        let mut fd = scanner.offdiag_norm_at(d);
        for _ in 0..cfg.refine_iterations {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = scanner.offdiag_norm_at(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = scanner.offdiag_norm_at(d);
            }
        }
        for (s, v) in [(c, fc), (d, fd)] {
            if v < best_val {
                best_s = s;
                best_val = v;
            }
        }
    }

    Ok(PreparedStep {
        kind: kind.clone(),
        scanner,
        s: best_s,
        sigma_decrease: best_val - offdiag_before,
    })
}

/// Optimal step duration for one generator: the global grid minimizer of the
/// off-diagonal norm, refined locally. Returns `(s, sigma_decrease)`.
pub fn optimize_step_duration(
    j: &Hermitian,
    kind: &GeneratorKind,
    cfg: &StepSearchConfig,
) -> Result<(f64, f64), FlowError> {
    let before = j.op().offdiag().hs_norm();
    let prepared = prepare_step(j, kind, cfg, before)?;
    Ok((prepared.s, prepared.sigma_decrease))
}

/// Evaluate every candidate and pick the one with the most negative
/// sigma-decrease; ties break on smaller duration, then candidate order.
pub fn select_generator(
    j: &Hermitian,
    candidates: &[GeneratorKind],
    cfg: &StepSearchConfig,
) -> Result<(GeneratorKind, f64, f64), FlowError> {
    let before = j.op().offdiag().hs_norm();
    let prepared = select_prepared(j, candidates, cfg, before)?;
    Ok((prepared.kind.clone(), prepared.s, prepared.sigma_decrease))
}

fn select_prepared(
    j: &Hermitian,
    candidates: &[GeneratorKind],
    cfg: &StepSearchConfig,
    offdiag_before: f64,
) -> Result<PreparedStep, FlowError> {
    if candidates.is_empty() {
        return Err(FlowError::NoCandidates);
    }
    let mut best: Option<PreparedStep> = None;
    for kind in candidates {
        let prepared = match prepare_step(j, kind, cfg, offdiag_before) {
            Ok(p) => p,
            Err(FlowError::ZeroBracket) => continue,
            Err(e) => return Err(e),
        };
        best = Some(match best {
            None => prepared,
            Some(current) => {
                let better = prepared.sigma_decrease < current.sigma_decrease
                    || (prepared.sigma_decrease == current.sigma_decrease
                        && prepared.s < current.s);
                if better {
                    prepared
                } else {
                    current
                }
            }
        });
    }
    best.ok_or(FlowError::AllBracketsZero)
}

// ---------------------------------------------------------------------------
// Flow traces
// ---------------------------------------------------------------------------

/// Candidate generators offered to every step of a flow.
#[derive(Clone, Debug)]
pub struct GeneratorPolicy {
    pub candidates: Vec<GeneratorKind>,
}

impl GeneratorPolicy {
    pub fn canonical() -> Self {
        Self { candidates: vec![GeneratorKind::Canonical] }
    }

    /// Canonical bracket plus `[Z_mu, J]` for every nonzero `mu`, in
    /// lexicographic order.
    pub fn variational_with_flips(sites: usize) -> Self {
        let mut candidates = vec![GeneratorKind::Canonical];
        for mu in BitString::all(sites) {
            if !mu.is_zero() {
                candidates.push(GeneratorKind::FixedFlip(mu));
            }
        }
        Self { candidates }
    }

    pub fn custom(candidates: Vec<GeneratorKind>) -> Self {
        Self { candidates }
    }
}

/// Whether to retain full flowed-Hamiltonian snapshots in the trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotPolicy {
    /// Retain for registers up to 7 sites, drop beyond.
    Auto,
    Always,
    Never,
}

/// Which computational basis states get per-step diagnostics recorded.
#[derive(Clone, Debug)]
pub enum WatchPolicy {
    None,
    States(Vec<BitString>),
    All,
}

#[derive(Clone, Debug)]
pub struct FlowOptions {
    pub model: String,
    pub steps: usize,
    pub policy: GeneratorPolicy,
    pub search: StepSearchConfig,
    /// Stop when the best available sigma-decrease exceeds
    /// `-saturation_rel * hs_norm(H)`.
    pub saturation_rel: f64,
    pub snapshots: SnapshotPolicy,
    pub watch: WatchPolicy,
}

impl FlowOptions {
    pub fn canonical(steps: usize) -> Self {
        Self {
            model: "custom".to_string(),
            steps,
            policy: GeneratorPolicy::canonical(),
            search: StepSearchConfig::default(),
            saturation_rel: 1e-8,
            snapshots: SnapshotPolicy::Auto,
            watch: WatchPolicy::None,
        }
    }
}

/// Record of one accepted flow step.
#[derive(Clone, Debug, Serialize)]
pub struct FlowStep {
    pub index: usize,
    pub kind: String,
    pub s: f64,
    pub offdiag_norm_before: f64,
    pub offdiag_norm_after: f64,
    pub sigma_decrease: f64,
    pub generator_hs_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    /// All requested steps ran.
    Completed,
    /// Every candidate bracket vanished: the iterate is a fixed point.
    ZeroBracket,
    /// No candidate achieved a sigma-decrease beyond the saturation cutoff.
    NoDecreasingCandidate,
}

/// The full record of one flow run.
#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub model: String,
    pub sites: Option<usize>,
    pub dim: usize,
    pub steps: Vec<FlowStep>,
    pub termination: TerminationReason,
    pub initial_offdiag_norm: f64,
    pub state_rows: Vec<StateDiagnostics>,
    initial: Hermitian,
    final_h: Hermitian,
    composed: Unitary,
    snapshots: Option<Vec<Operator>>,
    step_kinds: Vec<GeneratorKind>,
    step_durations: Vec<f64>,
    diagonals: Vec<Vec<f64>>,
}

impl FlowTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn initial(&self) -> &Hermitian {
        &self.initial
    }

    pub fn final_hamiltonian(&self) -> &Hermitian {
        &self.final_h
    }

    /// The composed unitary `e^{-s_1 W_1} ... e^{-s_N W_N}`.
    pub fn composed_unitary(&self) -> &Unitary {
        &self.composed
    }

    /// Flowed Hamiltonian after step `k` (`k = 0` is the input), if retained.
    pub fn snapshot(&self, k: usize) -> Option<&Operator> {
        if k == 0 {
            return Some(self.initial.op());
        }
        self.snapshots.as_ref().and_then(|s| s.get(k - 1))
    }

    /// Real diagonal of the iterate after step `k` (`k = 0` is the input).
    pub fn diagonal_after(&self, k: usize) -> Option<&[f64]> {
        self.diagonals.get(k).map(|v| v.as_slice())
    }

    pub fn step_kinds(&self) -> &[GeneratorKind] {
        &self.step_kinds
    }

    pub fn step_durations(&self) -> &[f64] {
        &self.step_durations
    }

    /// Flat CSV: one row per step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "k,kind,s,offdiag_norm_before,offdiag_norm_after,sigma_decrease,generator_hs_norm\n",
        );
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.index,
                s.kind,
                s.s,
                s.offdiag_norm_before,
                s.offdiag_norm_after,
                s.sigma_decrease,
                s.generator_hs_norm
            ));
        }
        out
    }

    /// JSON document with the step ledger and per-state diagnostics.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "sites": self.sites,
            "dim": self.dim,
            "termination": self.termination,
            "initial_offdiag_norm": self.initial_offdiag_norm,
            "steps": self.steps,
            "states": self.state_rows,
        })
    }
}

/// Run the flow: per step, pick the best candidate generator and duration,
/// then conjugate. Stops early on fixed points or saturation.
pub fn run_flow(h: &Hermitian, opts: &FlowOptions) -> Result<FlowTrace, FlowError> {
    opts.search.validate()?;
    let dim = h.dim();
    let sites = h.op().num_sites().ok();
    let keep_snapshots = match opts.snapshots {
        SnapshotPolicy::Auto => sites.map_or(false, |l| l <= 7),
        SnapshotPolicy::Always => true,
        SnapshotPolicy::Never => false,
    };
    let watch_list: Vec<BitString> = match (&opts.watch, sites) {
        (WatchPolicy::None, _) => Vec::new(),
        (WatchPolicy::States(list), _) => list.clone(),
        (WatchPolicy::All, Some(l)) => BitString::all(l).collect(),
        (WatchPolicy::All, None) => Vec::new(),
    };

    let h_scale = h.op().hs_norm();
    let mut current = h.clone();
    let mut composed = Unitary::identity(dim);
    let mut offdiag_norm = h.op().offdiag().hs_norm();
    let mut steps = Vec::new();
    let mut step_kinds = Vec::new();
    let mut step_durations = Vec::new();
    let mut snapshots = keep_snapshots.then(Vec::new);
    let mut diagonals = vec![current.op().diagonal().iter().map(|z| z.re).collect::<Vec<_>>()];
    let mut state_rows = Vec::new();
    for mu in &watch_list {
        state_rows.push(diagnostics_for(current.op(), mu, 0)?);
    }
    let initial_offdiag_norm = offdiag_norm;
    let mut termination = TerminationReason::Completed;

    for k in 1..=opts.steps {
        let prepared = match select_prepared(&current, &opts.policy.candidates, &opts.search, offdiag_norm) {
            Ok(p) => p,
            Err(FlowError::AllBracketsZero) => {
                termination = TerminationReason::ZeroBracket;
                break;
            }
            Err(e) => return Err(e),
        };
        if prepared.sigma_decrease > -opts.saturation_rel * h_scale {
            termination = TerminationReason::NoDecreasingCandidate;
            break;
        }
        let flowed = prepared.scanner.flowed_at(prepared.s);
        let new_norm = flowed.offdiag().hs_norm();
        if new_norm >= offdiag_norm {
            // The scan promised a decrease the full conjugation does not
            // deliver; treat as saturation rather than record a bad step.
            termination = TerminationReason::NoDecreasingCandidate;
            break;
        }
        let step_u = prepared.scanner.evolution_at(prepared.s)?;
        composed = composed.compose(&step_u)?;
        current = Hermitian::with_default_tol(flowed)?;
        steps.push(FlowStep {
            index: k,
            kind: prepared.kind.label(),
            s: prepared.s,
            offdiag_norm_before: offdiag_norm,
            offdiag_norm_after: new_norm,
            sigma_decrease: new_norm - offdiag_norm,
            generator_hs_norm: prepared.scanner.generator_hs_norm,
        });
        step_kinds.push(prepared.kind.clone());
        step_durations.push(prepared.s);
        offdiag_norm = new_norm;
        diagonals.push(current.op().diagonal().iter().map(|z| z.re).collect());
        if let Some(snaps) = snapshots.as_mut() {
            snaps.push(current.op().clone());
        }
        for mu in &watch_list {
            state_rows.push(diagnostics_for(current.op(), mu, k)?);
        }
    }

    Ok(FlowTrace {
        model: opts.model.clone(),
        sites,
        dim,
        steps,
        termination,
        initial_offdiag_norm,
        state_rows,
        initial: h.clone(),
        final_h: current,
        composed,
        snapshots,
        step_kinds,
        step_durations,
        diagonals,
    })
}

/// Canonical-bracket discretization with a fixed step duration:
/// `U_N = prod_k e^{-s W_k}` with `W_k` rebuilt from each iterate.
///
/// This is the reference the circuit emulation converges to as the step
/// duration shrinks.
pub fn discretized_flow(
    h: &Hermitian,
    s: f64,
    n_steps: usize,
) -> Result<(Unitary, Hermitian), FlowError> {
    let mut current = h.clone();
    let mut composed = Unitary::identity(h.dim());
    for _ in 0..n_steps {
        let w = canonical_bracket(&current)?;
        if w.op().hs_norm() <= zero_bracket_tol(&current) {
            continue;
        }
        let u = exp_antihermitian(&w, -s)?;
        composed = composed.compose(&u)?;
        current = Hermitian::with_default_tol(conjugate(current.op(), &u)?)?;
    }
    Ok((composed, current))
}

// ---------------------------------------------------------------------------
// Slopes
// ---------------------------------------------------------------------------

/// Exact derivative of `|offdiag(J_s)|^2_HS` at `s = 0` for the canonical
/// bracket: `-2 |W|^2_HS`.
pub fn predicted_slope(j: &Hermitian) -> Result<f64, FlowError> {
    let w = canonical_bracket(j)?;
    Ok(-2.0 * w.op().hs_norm().powi(2))
}

/// Slope and Cauchy-Schwarz angle cosine for a variational generator:
/// `slope = -2 Re <W_kind, W_canonical>_HS`; the step is sigma-decreasing to
/// first order exactly when `cos_theta > 0`.
pub fn variational_slope(j: &Hermitian, kind: &GeneratorKind) -> Result<(f64, f64), FlowError> {
    let w_z = bracket_for(j, kind)?;
    if w_z.op().hs_norm() <= zero_bracket_tol(j) {
        return Err(FlowError::ZeroBracket);
    }
    let w = canonical_bracket(j)?;
    let ip = hs_inner(w_z.op(), w.op())?.re;
    let slope = -2.0 * ip;
    let denom = w_z.op().hs_norm() * w.op().hs_norm();
    let cos_theta = if denom > 0.0 {
        (ip / denom).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    Ok((slope, cos_theta))
}

// ---------------------------------------------------------------------------
// Precompiling
// ---------------------------------------------------------------------------

/// One precompiled flow step: duration plus the Hermitian generator
/// `G_k = i W_k` as a real Pauli sum, so the step unitary is
/// `e^{-s_k W_k} = e^{i s_k G_k}`.
#[derive(Clone, Debug)]
pub struct CircuitEntry {
    pub s: f64,
    pub generator: PauliSum,
}

/// A classically prescribed flow circuit `e^{-s_1 W_1} ... e^{-s_N W_N}`.
#[derive(Clone, Debug)]
pub struct PrecompiledCircuit {
    pub entries: Vec<CircuitEntry>,
}

impl PrecompiledCircuit {
    /// Text form: per step a block of `duration coefficient word` lines,
    /// blank-line separated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, entry) in self.entries.iter().enumerate() {
            out.push_str(&format!("# step {}\n", k + 1));
            for term in entry.generator.terms() {
                out.push_str(&format!("{} {}\n", entry.s, term));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, FlowError> {
        let mut entries = Vec::new();
        let mut block: Vec<(f64, String)> = Vec::new();
        let flush = |block: &mut Vec<(f64, String)>,
                     entries: &mut Vec<CircuitEntry>|
         -> Result<(), FlowError> {
            if block.is_empty() {
                return Ok(());
            }
            let s = block[0].0;
            let body: String = block.drain(..).map(|(_, line)| line + "\n").collect();
            entries.push(CircuitEntry { s, generator: PauliSum::parse(&body)? });
            Ok(())
        };
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() {
                flush(&mut block, &mut entries)?;
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let (s_str, rest) = line.split_once(char::is_whitespace).ok_or_else(|| {
                FlowError::Model(ModelError::Parse {
                    line: 0,
                    msg: "expected `duration coefficient word`".into(),
                })
            })?;
            let s: f64 = s_str.parse().map_err(|_| {
                FlowError::Model(ModelError::Parse {
                    line: 0,
                    msg: format!("cannot parse duration {s_str:?}"),
                })
            })?;
            block.push((s, rest.trim().to_string()));
        }
        flush(&mut block, &mut entries)?;
        Ok(Self { entries })
    }

    /// Re-materialize every generator, compose the circuit and conjugate
    /// `h0`; returns the composed unitary and the final flowed Hamiltonian.
    pub fn recompose(&self, h0: &Hermitian) -> Result<(Unitary, Operator), FlowError> {
        let dim = h0.dim();
        let mut composed = Unitary::identity(dim);
        for entry in &self.entries {
            let g = entry.generator.to_operator();
            // e^{i s G} via the Hermitian eigendecomposition of G.
            let (freqs, basis) = eigh_hermitized(g.matrix())?;
            let u = Unitary::try_new(
                phase_conjugation(&basis, &freqs, entry.s),
                default_tol(dim),
            )?;
            composed = composed.compose(&u)?;
        }
        let final_h = conjugate(h0.op(), &composed)?;
        Ok((composed, final_h))
    }
}

/// Emit the ordered generator prescription of a trace by replaying it from
/// the stored input Hamiltonian.
pub fn precompile(trace: &FlowTrace) -> Result<PrecompiledCircuit, FlowError> {
    if trace.is_empty() {
        return Err(FlowError::EmptyTrace);
    }
    let sites = trace
        .sites
        .ok_or(FlowError::Operator(OperatorError::NotPowerOfTwo { dim: trace.dim }))?;
    let mut current = trace.initial.clone();
    let mut entries = Vec::new();
    for (kind, &s) in trace.step_kinds.iter().zip(&trace.step_durations) {
        let w = bracket_for(&current, kind)?;
        let generator = hermitian_pauli_sum(&w.op().scaled(C64::new(0.0, 1.0)), sites)?;
        entries.push(CircuitEntry { s, generator });
        let u = exp_antihermitian(&w, -s)?;
        current = Hermitian::with_default_tol(conjugate(current.op(), &u)?)?;
    }
    Ok(PrecompiledCircuit { entries })
}

/// Decompose a Hermitian operator into a real-coefficient `{I,X,Y,Z}` Pauli
/// sum, converting from the `Z_mu X_nu` basis (`Z X = iY` per overlapping
/// site).
fn hermitian_pauli_sum(g: &Operator, sites: usize) -> Result<PauliSum, FlowError> {
    use crate::models::{PauliFactor, PauliTerm};
    let coeffs = pauli_decompose(g, None)?;
    let mut terms = Vec::new();
    let mut worst_imag: f64 = 0.0;
    for ((mu, nu), c) in &coeffs {
        let mut word = Vec::with_capacity(sites);
        let mut overlap = 0usize;
        for j in 0..sites {
            let factor = match (mu.bit(j), nu.bit(j)) {
                (false, false) => PauliFactor::I,
                (true, false) => PauliFactor::Z,
                (false, true) => PauliFactor::X,
                (true, true) => {
                    overlap += 1;
                    PauliFactor::Y
                }
            };
            word.push(factor);
        }
        // Z_mu X_nu = i^{overlap} * word, so the IXYZ coefficient is
        // c * i^{overlap}.
        let phase = C64::i().powu(overlap as u32);
        let coeff = c * phase;
        worst_imag = worst_imag.max(coeff.im.abs());
        terms.push(PauliTerm { coeff: coeff.re, word });
    }
    let scale = g.hs_norm().max(1.0);
    if worst_imag > 1e-9 * scale {
        return Err(FlowError::NonRealGenerator(worst_imag));
    }
    Ok(PauliSum::new(sites, terms)?)
}
