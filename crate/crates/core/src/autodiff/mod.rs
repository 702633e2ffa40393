//! Reverse-mode differentiation over the fixed set of primitives the
//! separator and its losses need.
//!
//! A [`Program`] records its computation on a [`Tape`]; [`backward`] sweeps
//! the tape once in reverse. [`finite_diff_check`] is the independent oracle:
//! it only ever evaluates programs forward.

pub mod kernels;
mod tape;

use alloc::vec::Vec;

pub use tape::{NodeId, Tape};

use crate::error::{Error, Result};

/// A scalar-valued computation over a flat parameter vector.
pub trait Program {
    type Input: ?Sized;

    /// Records the computation on `tape` and returns the scalar output node.
    fn record(&self, tape: &mut Tape, params: &[f64], input: &Self::Input) -> Result<NodeId>;
}

/// Gradient aligned with a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        Self(alloc::vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }
}

/// Runs `program` forward, returning its value and the tape for [`backward`].
pub fn forward_record<P: Program + ?Sized>(
    program: &P,
    params: &[f64],
    input: &P::Input,
) -> Result<(f64, Tape)> {
    let mut tape = Tape::new(params.len());
    let out = program.record(&mut tape, params, input)?;
    let value = tape.scalar(out)?;
    tape.set_root(out);
    Ok((value, tape))
}

/// Gradient of the tape's root with respect to the parameters.
pub fn backward(tape: &Tape) -> Result<GradientVector> {
    tape.backward().map(GradientVector)
}

/// Per-coordinate comparison of analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `None` where the coordinate was excluded as a non-differentiable point.
    pub relative_errors: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
    pub max_relative_error: f64,
    pub kink_margin: f64,
    pub passed: bool,
}

/// Denominator floor for relative errors: gradients much smaller than this
/// are compared in absolute terms, since central differences cannot resolve
/// them below the rounding noise of the loss value.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Compares [`backward`] against central differences with the given `step`.
///
/// A coordinate is excluded when perturbing it by `±step` changes any
/// branch decision on the tape (ReLU activity, minimum selection, SI-SDR
/// clamping): subgradients legitimately disagree with differences there.
pub fn finite_diff_check<P: Program + ?Sized>(
    program: &P,
    params: &[f64],
    input: &P::Input,
    step: f64,
    tolerance: f64,
) -> Result<FiniteDiffReport> {
    check_coordinates(program, params, input, step, tolerance, 0..params.len())
}

/// [`finite_diff_check`] restricted to a subset of coordinates; the other
/// entries of `numeric` are left at zero and marked excluded.
pub fn check_coordinates<P: Program + ?Sized>(
    program: &P,
    params: &[f64],
    input: &P::Input,
    step: f64,
    tolerance: f64,
    coordinates: impl IntoIterator<Item = usize>,
) -> Result<FiniteDiffReport> {
    if !(step > 0.0) {
        return Err(Error::Contract(alloc::format!("finite-difference step must be positive, got {step}")));
    }
    let (_, base) = forward_record(program, params, input)?;
    let analytic = backward(&base)?.0;
    let signature = base.branch_signature();
    let n = params.len();
    let mut numeric = alloc::vec![0.0; n];
    let mut relative_errors = alloc::vec![None; n];
    let mut checked = alloc::vec![false; n];
    let mut excluded = Vec::new();
    let mut max_relative_error: f64 = 0.0;
    let mut probe = params.to_vec();
    for i in coordinates {
        checked[i] = true;
        probe[i] = params[i] + step;
        let (plus, tape_plus) = forward_record(program, &probe, input)?;
        probe[i] = params[i] - step;
        let (minus, tape_minus) = forward_record(program, &probe, input)?;
        probe[i] = params[i];
        numeric[i] = (plus - minus) / (2.0 * step);
        if tape_plus.branch_signature() != signature || tape_minus.branch_signature() != signature {
            excluded.push(i);
            continue;
        }
        let denom = analytic[i].abs().max(numeric[i].abs()).max(RELATIVE_ERROR_FLOOR);
        let err = (analytic[i] - numeric[i]).abs() / denom;
        max_relative_error = max_relative_error.max(err);
        relative_errors[i] = Some(err);
    }
    for (i, c) in checked.iter().enumerate() {
        if !c {
            excluded.push(i);
        }
    }
    excluded.sort_unstable();
    Ok(FiniteDiffReport {
        analytic,
        numeric,
        relative_errors,
        excluded,
        max_relative_error,
        kink_margin: base.kink_margin(),
        passed: max_relative_error < tolerance,
    })
}

/// `Σ θ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SumOfParams;

impl Program for SumOfParams {
    type Input = ();
    fn record(&self, tape: &mut Tape, params: &[f64], _: &()) -> Result<NodeId> {
        let p = tape.param(params, 0, params.len(), 1)?;
        tape.sum(p)
    }
}

/// `½‖θ‖²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HalfSquaredNorm;

impl Program for HalfSquaredNorm {
    type Input = ();
    fn record(&self, tape: &mut Tape, params: &[f64], _: &()) -> Result<NodeId> {
        let p = tape.param(params, 0, params.len(), 1)?;
        let sq = tape.mul(p, p)?;
        let s = tape.sum(sq)?;
        tape.scale(s, 0.5)
    }
}
