//! The server-side replay engine: one trace step and the final-marking
//! check as straight-line integer matrix arithmetic.
//!
//! Both entry points execute a fixed sequence of backend operations whose
//! shapes depend only on the compiled net, never on the marking or event
//! values. There is no data-dependent branching, so a backend that hides
//! its values (e.g. homomorphic encryption) leaks nothing about the trace
//! beyond its length.

use thiserror::Error;

use crate::backend::{ArithBackend, ArithError};
use crate::compiler::CompiledNet;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("scenario {0} has a zero divisor")]
    ZeroDivisor(usize),
    #[error("final marking is empty")]
    EmptyFinalMarking,
    #[error(transparent)]
    Arith(#[from] ArithError),
}

/// Result of one replay step.
pub struct StepOutcome<B: ArithBackend> {
    /// Marking after the step.
    pub marking: B::Vector,
    /// Tokens inserted to force the event when no scenario matched;
    /// zero on a fitting step.
    pub missing: B::Scalar,
}

/// Result of the end-of-trace check.
pub struct FinalOutcome<B: ArithBackend> {
    /// 1 iff the marking covers the final marking.
    pub covered: B::Scalar,
    /// Surplus tokens `sum(M) - sum(f)`; meaningful only when `covered`
    /// is 1 (the caller substitutes `sum(M)` otherwise).
    pub remaining: B::Scalar,
}

/// Pre-encoded matrices plus the two straight-line programs over them.
pub struct Engine<B: ArithBackend> {
    backend: B,
    /// Enablement matrix, scenarios x (places + visible).
    e: B::Matrix,
    /// Strictly lower-triangular ones; feeds the first-match priority mask.
    lower: B::Matrix,
    /// Transposed firing-sequence matrix, transitions x scenarios.
    s_t: B::Matrix,
    /// Transposed preset matrix, places x visible.
    p_t: B::Matrix,
    /// Incidence matrix, places x transitions.
    n: B::Matrix,
    /// Visible columns of the incidence matrix, places x visible.
    n_vis: B::Matrix,
    /// Final marking as a single-row matrix.
    f_row: B::Matrix,
    ones_rho: B::Vector,
    delta: Vec<i64>,
    f_total: i64,
    m0: Vec<i64>,
}

fn transpose(rows: &[Vec<i64>], cols: usize) -> Vec<Vec<i64>> {
    let mut out = vec![vec![0i64; rows.len()]; cols];
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            out[c][r] = v;
        }
    }
    out
}

impl<B: ArithBackend> Engine<B> {
    pub fn new(backend: B, compiled: &CompiledNet) -> Result<Self, EngineError> {
        let rho = compiled.scenario_count();
        let places = compiled.place_count();
        let visible = compiled.visible_count();
        let transitions = compiled.transition_count();

        if let Some(i) = compiled.delta.iter().position(|&d| d == 0) {
            return Err(EngineError::ZeroDivisor(i));
        }
        let f_total: i64 = compiled.f.iter().sum();
        if f_total == 0 {
            return Err(EngineError::EmptyFinalMarking);
        }

        let mut lower = vec![vec![0i64; rho]; rho];
        for (r, row) in lower.iter_mut().enumerate() {
            for v in row.iter_mut().take(r) {
                *v = 1;
            }
        }

        let n_vis: Vec<Vec<i64>> = compiled
            .incidence
            .iter()
            .map(|row| row[..visible].to_vec())
            .collect();

        Ok(Engine {
            e: backend.encode_matrix(&compiled.enablements)?,
            lower: backend.encode_matrix(&lower)?,
            s_t: backend.encode_matrix(&transpose(&compiled.sequences, transitions))?,
            p_t: backend.encode_matrix(&transpose(&compiled.presets, places))?,
            n: backend.encode_matrix(&compiled.incidence)?,
            n_vis: backend.encode_matrix(&n_vis)?,
            f_row: backend.encode_matrix(std::slice::from_ref(&compiled.f))?,
            ones_rho: backend.encode_vector(&vec![1; rho])?,
            backend,
            delta: compiled.delta.clone(),
            f_total,
            m0: compiled.m0.clone(),
        })
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    /// Encodes the initial marking for the start of a trace.
    pub fn initial_marking(&self) -> Result<B::Vector, EngineError> {
        Ok(self.backend.encode_vector(&self.m0)?)
    }

    /// Matched-scenario selector for `marking` and one-hot `event`,
    /// after first-match prioritization. Exposed for diagnostics.
    fn selector(
        &self,
        marking: &B::Vector,
        event: &B::Vector,
    ) -> Result<(B::Vector, B::Vector), EngineError> {
        let b = &self.backend;
        let m_hat = b.min_const(marking, 1)?;
        let joined = b.concat(&m_hat, event)?;
        let tmp = b.mat_vec(&self.e, &joined)?;
        let sel_all = b.div_const(&tmp, &self.delta)?;
        // Keep only the first matching scenario: a row is masked off when
        // any earlier row matched.
        let earlier = b.mat_vec(&self.lower, &sel_all)?;
        let blocked = b.min_const(&earlier, 1)?;
        let mask = b.sub_clamped(&self.ones_rho, &blocked)?;
        // Logical AND of two 0/1 vectors as max(a + b - 1, 0).
        let sel = b.sub_clamped(&b.add(&sel_all, &mask)?, &self.ones_rho)?;
        Ok((tmp, sel))
    }

    /// Decoded pre-division scores and final selector; test/debug hook.
    pub fn selector_diagnostics(
        &self,
        marking: &B::Vector,
        event: &B::Vector,
    ) -> Result<(Vec<i64>, Vec<i64>), EngineError> {
        let (tmp, sel) = self.selector(marking, event)?;
        Ok((
            self.backend.decode_vector(&tmp)?,
            self.backend.decode_vector(&sel)?,
        ))
    }

    /// Replays one event: if some enablement scenario matches, fire its
    /// silent prefix plus the event; otherwise force the event by inserting
    /// one token on each of its preset places. Both branches are computed
    /// and blended by the 0/1 match flag, so the operation sequence is the
    /// same either way.
    pub fn step(
        &self,
        marking: &B::Vector,
        event: &B::Vector,
    ) -> Result<StepOutcome<B>, EngineError> {
        let b = &self.backend;
        let (_, sel) = self.selector(marking, event)?;
        let matched = b.sum(&sel)?;
        let unmatched = b.affine_scalar(1, -1, &matched)?;

        let sigma = b.mat_vec(&self.s_t, &sel)?;
        let fit = b.add(marking, &b.mat_vec(&self.n, &sigma)?)?;

        let inserted = b.mat_vec(&self.p_t, event)?;
        let forced = b.add(
            &b.add(marking, &inserted)?,
            &b.mat_vec(&self.n_vis, event)?,
        )?;

        let next = b.add(
            &b.scale(&fit, &matched)?,
            &b.scale(&forced, &unmatched)?,
        )?;
        let missing = b.mul_scalar(&b.sum(&inserted)?, &unmatched)?;
        Ok(StepOutcome {
            marking: next,
            missing,
        })
    }

    /// End-of-trace check: 0/1 coverage of the final marking and the token
    /// surplus relative to it.
    pub fn check_final(&self, marking: &B::Vector) -> Result<FinalOutcome<B>, EngineError> {
        let b = &self.backend;
        let m_hat = b.min_const(marking, 1)?;
        let hits = b.mat_vec(&self.f_row, &m_hat)?;
        let covered = b.sum(&b.div_const(&hits, &[self.f_total])?)?;
        let surplus = b.affine_scalar(-self.f_total, 1, &b.sum(marking)?)?;
        let remaining = b.mul_scalar(&surplus, &covered)?;
        Ok(FinalOutcome { covered, remaining })
    }
}
