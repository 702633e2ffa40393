//! The compact separation network `f(x; θ)`.
//!
//! Pipeline per input waveform:
//!
//! 1. 50%-overlap framing, learned analysis basis (`frame_len → basis`), ReLU;
//! 2. one hidden ReLU layer of width `hidden`;
//! 3. `M × basis` sigmoid masks per frame;
//! 4. each masked feature map decoded by a shared learned synthesis basis
//!    and overlap-added;
//! 5. mixture-consistency projection, so the `M` outputs sum to the input.
//!
//! Neither basis carries a bias, which makes the network map silence to
//! silence for every parameter value.

use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{self, kernels, GradientVector, NodeId, Tape};
use crate::error::{config_err, contract, Error, Result};
use crate::exec::Executor;
use crate::losses::{LossInstance, LossProgram};
use crate::math;
use crate::rng;
use crate::signal::{AudioBuffer, SourceStack};

/// Number of separated outputs everywhere in this crate.
pub const NUM_SOURCES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub basis: usize,
    pub hidden: usize,
    pub num_sources: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { frame_len: 32, hop: 16, basis: 64, hidden: 128, num_sources: NUM_SOURCES, seed: 0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("frame_len", self.frame_len),
            ("hop", self.hop),
            ("basis", self.basis),
            ("hidden", self.hidden),
            ("num_sources", self.num_sources),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(config_err!("model_{name} must be positive"));
            }
        }
        if self.hop > self.frame_len {
            return Err(config_err!("model_hop ({}) exceeds model_frame_len ({})", self.hop, self.frame_len));
        }
        Ok(())
    }
}

/// One named block of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub is_bias: bool,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Architecture dimensions plus the derived segment table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub frame_len: usize,
    pub hop: usize,
    pub basis: usize,
    pub hidden: usize,
    pub num_sources: usize,
    segments: Vec<Segment>,
}

impl Layout {
    pub const ENCODER: usize = 0;
    pub const HIDDEN_W: usize = 1;
    pub const HIDDEN_B: usize = 2;
    pub const MASK_W: usize = 3;
    pub const MASK_B: usize = 4;
    pub const DECODER: usize = 5;

    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let ModelConfig { frame_len, hop, basis, hidden, num_sources, .. } = *config;
        let shapes: [(&'static str, usize, usize, bool); 6] = [
            ("encoder.weight", basis, frame_len, false),
            ("hidden.weight", hidden, basis, false),
            ("hidden.bias", hidden, 1, true),
            ("mask.weight", num_sources * basis, hidden, false),
            ("mask.bias", num_sources * basis, 1, true),
            ("decoder.weight", frame_len, basis, false),
        ];
        let mut offset = 0;
        let segments = shapes
            .iter()
            .map(|&(name, rows, cols, is_bias)| {
                let s = Segment { name, rows, cols, offset, is_bias };
                offset += rows * cols;
                s
            })
            .collect();
        Ok(Self { frame_len, hop, basis, hidden, num_sources, segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, index: usize) -> &Segment {
        &self.segments[index]
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }
}

/// Flat model parameters together with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(contract!(
                "parameter vector of length {} does not match layout length {}",
                values.len(),
                layout.total_len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                node: alloc::string::String::from("params"),
                detail: alloc::format!("non-finite parameter at {i}"),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Two vectors can be averaged iff their layouts are identical.
    pub fn is_aggregable_with(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.layout.clone())
    }
}

/// Deterministic initialisation: weights uniform in `±sqrt(6/(fan_in+fan_out))`,
/// biases zero.
pub fn init_params(config: &ModelConfig) -> Result<ParamVector> {
    let layout = Layout::new(config)?;
    let mut rng = rng::stream(config.seed, &[rng::tag::INIT]);
    let mut values = alloc::vec![0.0; layout.total_len()];
    for seg in layout.segments() {
        if seg.is_bias {
            continue;
        }
        let limit = math::sqrt(6.0 / (seg.cols + seg.rows) as f64);
        for v in &mut values[seg.range()] {
            *v = rng.gen_range(-limit..limit);
        }
    }
    ParamVector::new(values, layout)
}

fn check_input(layout: &Layout, len: usize) -> Result<()> {
    if len < layout.frame_len {
        return Err(Error::Domain(alloc::format!(
            "mixture of {len} samples is shorter than one frame ({})",
            layout.frame_len
        )));
    }
    Ok(())
}

/// Separates `mixture` into `M` sources that sum to it.
pub fn separate(params: &ParamVector, mixture: &AudioBuffer) -> Result<SourceStack> {
    let layout = params.layout();
    check_input(layout, mixture.len())?;
    let outputs = separate_raw(layout, params.values(), mixture.samples());
    let sources = outputs
        .into_iter()
        .map(|s| AudioBuffer::new(s, mixture.sample_rate()))
        .collect::<Result<Vec<_>>>()?;
    SourceStack::new(sources)
}

/// Tape-free forward pass on raw slices; the reference the tape must match.
pub fn separate_raw(layout: &Layout, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let Layout { frame_len, hop, basis, hidden, num_sources, .. } = *layout;
    let seg = |i: usize| &params[layout.segment(i).range()];
    let frames = kernels::frame(x, frame_len, hop);
    let n = frames.len() / frame_len;
    let mut enc = kernels::matmul_t(&frames, n, frame_len, seg(Layout::ENCODER), basis);
    kernels::relu(&mut enc);
    let mut h = kernels::matmul_t(&enc, n, basis, seg(Layout::HIDDEN_W), hidden);
    kernels::add_bias(&mut h, seg(Layout::HIDDEN_B));
    kernels::relu(&mut h);
    let mask_cols = num_sources * basis;
    let mut masks = kernels::matmul_t(&h, n, hidden, seg(Layout::MASK_W), mask_cols);
    kernels::add_bias(&mut masks, seg(Layout::MASK_B));
    kernels::sigmoid(&mut masks);
    let raw: Vec<Vec<f64>> = (0..num_sources)
        .map(|m| {
            let mask = kernels::column_block(&masks, mask_cols, m * basis, basis);
            let feat: Vec<f64> = enc.iter().zip(&mask).map(|(e, k)| e * k).collect();
            let dec = kernels::matmul_t(&feat, n, basis, seg(Layout::DECODER), frame_len);
            kernels::overlap_add(&dec, frame_len, hop, x.len())
        })
        .collect();
    let views: Vec<&[f64]> = raw.iter().map(Vec::as_slice).collect();
    let share = kernels::consistency_share(&views, x);
    raw.iter()
        .map(|s| s.iter().zip(&share).map(|(a, b)| a + b).collect())
        .collect()
}

/// Records the separator on `tape` for input node `mixture` (a column
/// vector) and returns the `M` projected output nodes.
pub fn record_separator(
    tape: &mut Tape,
    layout: &Layout,
    params: &[f64],
    mixture: NodeId,
) -> Result<Vec<NodeId>> {
    let Layout { frame_len, hop, basis, num_sources, .. } = *layout;
    let len = tape.shape(mixture).0;
    check_input(layout, len)?;
    let param = |tape: &mut Tape, i: usize| {
        let s = layout.segment(i);
        tape.param(params, s.offset, s.rows, s.cols)
    };
    let w_enc = param(tape, Layout::ENCODER)?;
    let w_hidden = param(tape, Layout::HIDDEN_W)?;
    let b_hidden = param(tape, Layout::HIDDEN_B)?;
    let w_mask = param(tape, Layout::MASK_W)?;
    let b_mask = param(tape, Layout::MASK_B)?;
    let w_dec = param(tape, Layout::DECODER)?;

    let frames = tape.frame(mixture, frame_len, hop)?;
    let enc = tape.matmul_t(frames, w_enc)?;
    let enc = tape.relu(enc)?;
    let h = tape.matmul_t(enc, w_hidden)?;
    let h = tape.add_bias(h, b_hidden)?;
    let h = tape.relu(h)?;
    let masks = tape.matmul_t(h, w_mask)?;
    let masks = tape.add_bias(masks, b_mask)?;
    let masks = tape.sigmoid(masks)?;
    let mut raw = Vec::with_capacity(num_sources);
    for m in 0..num_sources {
        let mask = tape.column_block(masks, m * basis, basis)?;
        let feat = tape.mul(enc, mask)?;
        let dec = tape.matmul_t(feat, w_dec)?;
        raw.push(tape.overlap_add(dec, hop, len)?);
    }
    let share = tape.consistency_share(&raw, mixture)?;
    raw.iter().map(|&s| tape.add(s, share)).collect()
}

/// Mean loss and mean gradient over a mini-batch of same-kind instances.
///
/// Per-instance work is handed to `exec`; results are reduced in batch
/// order so the output does not depend on scheduling.
pub fn separate_with_grad<E: Executor>(
    params: &ParamVector,
    batch: &[LossInstance],
    exec: &E,
) -> Result<(f64, GradientVector)> {
    let first = batch.first().ok_or_else(|| contract!("empty mini-batch"))?;
    let kind = first.kind();
    if batch.iter().any(|b| b.kind() != kind) {
        return Err(contract!("mini-batch mixes supervised and unsupervised instances"));
    }
    let program = LossProgram::new(kind, params.layout().clone());
    let results = exec.map(batch.len(), |i| {
        let (loss, tape) = autodiff::forward_record(&program, params.values(), &batch[i])?;
        let grad = autodiff::backward(&tape)?;
        Ok::<_, Error>((loss, grad))
    });
    let mut total = 0.0;
    let mut grad = alloc::vec![0.0; params.len()];
    for r in results {
        let (loss, g) = r?;
        total += loss;
        for (acc, v) in grad.iter_mut().zip(&g.0) {
            *acc += v;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for g in &mut grad {
        *g *= inv;
    }
    Ok((total * inv, GradientVector(grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;

    fn small() -> ModelConfig {
        ModelConfig { frame_len: 8, hop: 4, basis: 4, hidden: 6, num_sources: 3, seed: 3 }
    }

    fn ramp(len: usize) -> AudioBuffer {
        AudioBuffer::new((0..len).map(|i| math::sin(i as f64 * 0.3) * 0.5).collect(), 8000).unwrap()
    }

    #[test]
    fn default_layout_length_matches_hand_count() {
        // encoder 64x32 + hidden 128x64 + 128 + mask 192x128 + 192 + decoder 32x64
        let layout = Layout::new(&ModelConfig::default()).unwrap();
        assert_eq!(layout.total_len(), 2048 + 8192 + 128 + 24576 + 192 + 2048);
        assert_eq!(layout.total_len(), 37184);
    }

    #[test]
    fn config_validation() {
        let mut c = small();
        c.hop = 9;
        assert!(matches!(init_params(&c), Err(Error::Config(_))));
        let mut c = small();
        c.basis = 0;
        assert!(matches!(init_params(&c), Err(Error::Config(_))));
        let mut c = small();
        c.hidden = 0;
        assert!(matches!(init_params(&c), Err(Error::Config(_))));
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        let a = init_params(&small()).unwrap();
        let b = init_params(&small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed = 4;
        assert_ne!(a.values(), init_params(&other).unwrap().values());
        let hb = a.layout().segment(Layout::HIDDEN_B).range();
        assert!(a.values()[hb].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_respects_limits() {
        let p = init_params(&ModelConfig::default()).unwrap();
        for seg in p.layout().segments() {
            let limit = math::sqrt(6.0 / (seg.rows + seg.cols) as f64);
            assert!(p.values()[seg.range()].iter().all(|v| v.abs() <= limit));
        }
    }

    #[test]
    fn output_shape_and_consistency() {
        let p = init_params(&small()).unwrap();
        let x = ramp(37);
        let out = separate(&p, &x).unwrap();
        assert_eq!(out.num_sources(), 3);
        assert_eq!(out.len(), 37);
        let sum = out.sum();
        for (a, b) in sum.samples().iter().zip(x.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn silence_maps_to_silence() {
        let p = init_params(&small()).unwrap();
        let out = separate(&p, &AudioBuffer::zeros(40, 8000).unwrap()).unwrap();
        assert!(out.sources().iter().all(|s| s.samples().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn too_short_input_is_domain_error() {
        let p = init_params(&small()).unwrap();
        assert!(matches!(separate(&p, &ramp(7)), Err(Error::Domain(_))));
    }

    #[test]
    fn tape_matches_direct_forward_bitwise() {
        let p = init_params(&small()).unwrap();
        let x = ramp(50);
        let direct = separate_raw(p.layout(), p.values(), x.samples());
        let mut tape = Tape::new(p.len());
        let input = tape.vector(x.samples()).unwrap();
        let outs = record_separator(&mut tape, p.layout(), p.values(), input).unwrap();
        for (d, o) in direct.iter().zip(outs) {
            assert_eq!(d.as_slice(), tape.value(o));
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let p = init_params(&small()).unwrap();
        assert!(separate_with_grad(&p, &[], &Sequential).is_err());
    }
}
