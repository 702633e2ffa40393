use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels;
use crate::error::{Error, Result};
use crate::signal::{self, CAP_DB};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Param { offset: usize },
    Constant,
    Frame { input: usize, frame_len: usize, hop: usize },
    MatMulT { a: usize, w: usize },
    AddBias { a: usize, bias: usize },
    Relu { a: usize },
    Sigmoid { a: usize },
    Mul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    ColumnBlock { a: usize, start: usize },
    OverlapAdd { frames: usize, hop: usize },
    ConsistencyShare { sources: Vec<usize>, mixture: usize },
    SiSdr { estimate: usize, target: usize },
    Sum { a: usize },
    Min2 { a: usize, b: usize },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Param { .. } | Op::Constant => Vec::new(),
            Op::Frame { input, .. } => vec![*input],
            Op::Relu { a } | Op::Sigmoid { a } | Op::Scale { a, .. } | Op::Sum { a } => vec![*a],
            Op::ColumnBlock { a, .. } => vec![*a],
            Op::OverlapAdd { frames, .. } => vec![*frames],
            Op::MatMulT { a, w } => vec![*a, *w],
            Op::AddBias { a, bias } => vec![*a, *bias],
            Op::Mul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Min2 { a, b } => vec![*a, *b],
            Op::SiSdr { estimate, target } => vec![*estimate, *target],
            Op::ConsistencyShare { sources, mixture } => {
                let mut v = sources.clone();
                v.push(*mixture);
                v
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Param { .. } => "param",
            Op::Constant => "constant",
            Op::Frame { .. } => "frame",
            Op::MatMulT { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Mul { .. } => "mul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Scale { .. } => "scale",
            Op::ColumnBlock { .. } => "column_block",
            Op::OverlapAdd { .. } => "overlap_add",
            Op::ConsistencyShare { .. } => "consistency_share",
            Op::SiSdr { .. } => "si_sdr",
            Op::Sum { .. } => "sum",
            Op::Min2 { .. } => "min",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes can only reference nodes recorded before them, so the recording
/// order is a topological order and backward is a single reverse sweep.
///
/// Alongside values the tape tracks every branch decision taken (ReLU
/// activity, which side of a minimum won, whether SI-SDR was clamped). The
/// finite-difference checker compares these signatures to detect
/// perturbations that cross a non-differentiable point.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    param_len: usize,
    root: Option<usize>,
    signature: u64,
    kink_margin: f64,
}

const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

impl Tape {
    pub fn new(param_len: usize) -> Self {
        Self {
            nodes: Vec::new(),
            param_len,
            root: None,
            signature: 0xCBF2_9CE4_8422_2325,
            kink_margin: f64::INFINITY,
        }
    }

    pub fn param_len(&self) -> usize {
        self.param_len
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of all branch decisions taken during recording.
    pub fn branch_signature(&self) -> u64 {
        self.signature
    }

    /// Smallest distance of any branch decision from its switching point.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let n = &self.nodes[id.0];
        if n.value.len() != 1 {
            return Err(Error::Contract(format!(
                "node {} ({}) is not scalar",
                id.0,
                n.op.name()
            )));
        }
        Ok(n.value[0])
    }

    pub fn set_root(&mut self, id: NodeId) {
        self.root = Some(id.0);
    }

    pub fn root(&self) -> Option<NodeId> {
        self.root.map(NodeId)
    }

    fn mix(&mut self, word: u64) {
        self.signature = (self.signature ^ word).wrapping_mul(FNV_PRIME);
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Result<NodeId> {
        debug_assert_eq!(rows * cols, value.len());
        let index = self.nodes.len();
        if let Some(i) = value.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                node: format!("{}#{}", op.name(), index),
                detail: format!("non-finite value {} at element {}", value[i], i),
            });
        }
        let needs_grad = matches!(op, Op::Param { .. })
            || op.inputs().iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { op, rows, cols, value, needs_grad });
        Ok(NodeId(index))
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::Construction(format!("unknown node {}", id.0)))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize)> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if (na.rows, na.cols) != (nb.rows, nb.cols) {
            return Err(Error::Construction(format!(
                "{what}: shape {}x{} vs {}x{}",
                na.rows, na.cols, nb.rows, nb.cols
            )));
        }
        Ok((na.rows, na.cols))
    }

    /// Leaf holding `params[offset..offset + rows*cols]`.
    pub fn param(&mut self, params: &[f64], offset: usize, rows: usize, cols: usize) -> Result<NodeId> {
        let end = offset + rows * cols;
        if params.len() != self.param_len || end > params.len() {
            return Err(Error::Construction(format!(
                "parameter segment {offset}..{end} outside vector of length {} (tape expects {})",
                params.len(),
                self.param_len
            )));
        }
        self.push(Op::Param { offset }, rows, cols, params[offset..end].to_vec())
    }

    pub fn constant(&mut self, values: Vec<f64>, rows: usize, cols: usize) -> Result<NodeId> {
        if rows * cols != values.len() {
            return Err(Error::Construction(format!(
                "constant of {} values cannot have shape {rows}x{cols}",
                values.len()
            )));
        }
        self.push(Op::Constant, rows, cols, values)
    }

    /// Column vector from a slice.
    pub fn vector(&mut self, values: &[f64]) -> Result<NodeId> {
        self.constant(values.to_vec(), values.len(), 1)
    }

    pub fn frame(&mut self, input: NodeId, frame_len: usize, hop: usize) -> Result<NodeId> {
        if frame_len == 0 || hop == 0 {
            return Err(Error::Construction("frame length and hop must be positive".into()));
        }
        let x = &self.node(input)?.value;
        let value = kernels::frame(x, frame_len, hop);
        let rows = value.len() / frame_len;
        self.push(Op::Frame { input: input.0, frame_len, hop }, rows, frame_len, value)
    }

    /// `a · wᵀ`.
    pub fn matmul_t(&mut self, a: NodeId, w: NodeId) -> Result<NodeId> {
        let (na, nw) = (self.node(a)?, self.node(w)?);
        if na.cols != nw.cols {
            return Err(Error::Construction(format!(
                "matmul: inner dimensions {} vs {}",
                na.cols, nw.cols
            )));
        }
        let (n, k, m) = (na.rows, na.cols, nw.rows);
        let value = kernels::matmul_t(&na.value, n, k, &nw.value, m);
        self.push(Op::MatMulT { a: a.0, w: w.0 }, n, m, value)
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (na, nb) = (self.node(a)?, self.node(bias)?);
        if nb.value.len() != na.cols {
            return Err(Error::Construction(format!(
                "add_bias: bias length {} vs {} columns",
                nb.value.len(),
                na.cols
            )));
        }
        let mut value = na.value.clone();
        kernels::add_bias(&mut value, &nb.value);
        let (rows, cols) = (na.rows, na.cols);
        self.push(Op::AddBias { a: a.0, bias: bias.0 }, rows, cols, value)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let na = self.node(a)?;
        let (rows, cols) = (na.rows, na.cols);
        let mut value = na.value.clone();
        let mut margin = self.kink_margin;
        let mut word = 0u64;
        let mut words = Vec::with_capacity(value.len() / 64 + 1);
        for (i, x) in na.value.iter().enumerate() {
            margin = margin.min(x.abs());
            if *x > 0.0 {
                word |= 1 << (i % 64);
            }
            if i % 64 == 63 {
                words.push(word);
                word = 0;
            }
        }
        words.push(word);
        kernels::relu(&mut value);
        self.kink_margin = margin;
        for w in words {
            self.mix(w);
        }
        self.push(Op::Relu { a: a.0 }, rows, cols, value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let na = self.node(a)?;
        let (rows, cols) = (na.rows, na.cols);
        let mut value = na.value.clone();
        kernels::sigmoid(&mut value);
        self.push(Op::Sigmoid { a: a.0 }, rows, cols, value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.same_shape(a, b, "mul")?;
        let value = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| x * y).collect();
        self.push(Op::Mul { a: a.0, b: b.0 }, rows, cols, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.same_shape(a, b, "add")?;
        let value = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| x + y).collect();
        self.push(Op::Add { a: a.0, b: b.0 }, rows, cols, value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.same_shape(a, b, "sub")?;
        let value = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| x - y).collect();
        self.push(Op::Sub { a: a.0, b: b.0 }, rows, cols, value)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let na = self.node(a)?;
        let (rows, cols) = (na.rows, na.cols);
        let value = na.value.iter().map(|x| x * factor).collect();
        self.push(Op::Scale { a: a.0, factor }, rows, cols, value)
    }

    pub fn column_block(&mut self, a: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let na = self.node(a)?;
        if width == 0 || start + width > na.cols {
            return Err(Error::Construction(format!(
                "column block {start}..{} outside {} columns",
                start + width,
                na.cols
            )));
        }
        let rows = na.rows;
        let value = kernels::column_block(&na.value, na.cols, start, width);
        self.push(Op::ColumnBlock { a: a.0, start }, rows, width, value)
    }

    /// Overlap-adds the rows of `frames` into a column vector of `len` samples.
    pub fn overlap_add(&mut self, frames: NodeId, hop: usize, len: usize) -> Result<NodeId> {
        let nf = self.node(frames)?;
        if hop == 0 || len == 0 {
            return Err(Error::Construction("overlap_add needs positive hop and length".into()));
        }
        let value = kernels::overlap_add(&nf.value, nf.cols, hop, len);
        self.push(Op::OverlapAdd { frames: frames.0, hop }, len, 1, value)
    }

    /// The per-sample share `(x - Σ sources) / M` of the consistency projection.
    pub fn consistency_share(&mut self, sources: &[NodeId], mixture: NodeId) -> Result<NodeId> {
        if sources.is_empty() {
            return Err(Error::Construction("consistency projection needs sources".into()));
        }
        for s in sources {
            self.same_shape(*s, mixture, "consistency_share")?;
        }
        let (rows, cols) = self.shape(mixture);
        let views: Vec<&[f64]> = sources.iter().map(|s| self.nodes[s.0].value.as_slice()).collect();
        let value = kernels::consistency_share(&views, &self.nodes[mixture.0].value);
        let op = Op::ConsistencyShare { sources: sources.iter().map(|s| s.0).collect(), mixture: mixture.0 };
        self.push(op, rows, cols, value)
    }

    /// Scalar SI-SDR of `estimate` against `target` in dB.
    pub fn si_sdr(&mut self, estimate: NodeId, target: NodeId) -> Result<NodeId> {
        self.same_shape(estimate, target, "si_sdr")?;
        let (ve, vt) = (&self.nodes[estimate.0].value, &self.nodes[target.0].value);
        if vt.iter().all(|&y| y == 0.0) {
            return Err(Error::Domain("si_sdr target is identically zero".into()));
        }
        let v = signal::si_sdr_slices(ve, vt);
        let clamped = v >= CAP_DB || v <= -CAP_DB;
        self.kink_margin = self.kink_margin.min((CAP_DB - v.abs()).abs());
        self.mix(clamped as u64 | 0x100);
        self.push(Op::SiSdr { estimate: estimate.0, target: target.0 }, 1, 1, vec![v])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let total = self.node(a)?.value.iter().sum();
        self.push(Op::Sum { a: a.0 }, 1, 1, vec![total])
    }

    /// Minimum of two scalars; ties resolve to `a`.
    pub fn min2(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let va = self.scalar(a)?;
        let vb = self.scalar(b)?;
        let pick_a = va <= vb;
        self.kink_margin = self.kink_margin.min((va - vb).abs());
        self.mix(pick_a as u64 | 0x200);
        self.push(Op::Min2 { a: a.0, b: b.0 }, 1, 1, vec![if pick_a { va } else { vb }])
    }

    /// Reverse sweep from the root. Returns the gradient with respect to
    /// the parameter vector the leaves were drawn from.
    pub fn backward(&self) -> Result<Vec<f64>> {
        let root = self.root.ok_or_else(|| Error::Contract("tape has no root".into()))?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, node {} has {} elements",
                root,
                self.nodes[root].value.len()
            )));
        }
        let mut grad = vec![0.0; self.param_len];
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        adj[root] = Some(vec![1.0]);

        // Adjoint buffer of node `i`; nodes that no parameter flows into get a
        // scratch buffer that is dropped immediately.
        fn slot<'a>(
            adj: &'a mut [Option<Vec<f64>>],
            scratch: &'a mut Vec<f64>,
            nodes: &[Node],
            i: usize,
        ) -> &'a mut [f64] {
            if nodes[i].needs_grad {
                adj[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()])
            } else {
                scratch.clear();
                scratch.resize(nodes[i].value.len(), 0.0);
                scratch
            }
        }
        let mut scratch = Vec::new();

        for i in (0..=root).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    node: format!("{}#{}", self.nodes[i].op.name(), i),
                    detail: format!("non-finite adjoint at element {k}"),
                });
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Param { offset } => {
                    for (d, v) in grad[*offset..*offset + g.len()].iter_mut().zip(&g) {
                        *d += v;
                    }
                }
                Op::Constant => {}
                Op::Frame { input, frame_len, hop } => {
                    let d = slot(&mut adj, &mut scratch, &self.nodes, *input);
                    kernels::frame_backward(&g, *frame_len, *hop, d);
                }
                Op::MatMulT { a, w } => {
                    let (na, nw) = (&self.nodes[*a], &self.nodes[*w]);
                    let (n, k, m) = (na.rows, na.cols, nw.rows);
                    // operands may be the same node; accumulate separately then merge
                    let mut da = if na.needs_grad { vec![0.0; na.value.len()] } else { Vec::new() };
                    let mut dw = if nw.needs_grad { vec![0.0; nw.value.len()] } else { Vec::new() };
                    kernels::matmul_t_backward(
                        &g,
                        &na.value,
                        n,
                        k,
                        &nw.value,
                        m,
                        na.needs_grad.then_some(da.as_mut_slice()),
                        nw.needs_grad.then_some(dw.as_mut_slice()),
                    );
                    if na.needs_grad {
                        accumulate(slot(&mut adj, &mut scratch, &self.nodes, *a), &da);
                    }
                    if nw.needs_grad {
                        accumulate(slot(&mut adj, &mut scratch, &self.nodes, *w), &dw);
                    }
                }
                Op::AddBias { a, bias } => {
                    accumulate(slot(&mut adj, &mut scratch, &self.nodes, *a), &g);
                    let db = slot(&mut adj, &mut scratch, &self.nodes, *bias);
                    let cols = db.len();
                    for row in g.chunks_exact(cols) {
                        accumulate(db, row);
                    }
                }
                Op::Relu { a } => {
                    let d = slot(&mut adj, &mut scratch, &self.nodes, *a);
                    for ((d, gv), y) in d.iter_mut().zip(&g).zip(&node.value) {
                        if *y > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Sigmoid { a } => {
                    let d = slot(&mut adj, &mut scratch, &self.nodes, *a);
                    for ((d, gv), y) in d.iter_mut().zip(&g).zip(&node.value) {
                        *d += gv * y * (1.0 - y);
                    }
                }
                Op::Mul { a, b } => {
                    let da: Vec<f64> = g.iter().zip(&self.nodes[*b].value).map(|(gv, y)| gv * y).collect();
                    let db: Vec<f64> = g.iter().zip(&self.nodes[*a].value).map(|(gv, x)| gv * x).collect();
                    accumulate(slot(&mut adj, &mut scratch, &self.nodes, *a), &da);
                    accumulate(slot(&mut adj, &mut scratch, &self.nodes, *b), &db);
                }
                Op::Add { a, b } => {
                    accumulate(slot(&mut adj, &mut scratch, &self.nodes, *a), &g);
                    accumulate(slot(&mut adj, &mut scratch, &self.nodes, *b), &g);
                }
                Op::Sub { a, b } => {
                    accumulate(slot(&mut adj, &mut scratch, &self.nodes, *a), &g);
                    let d = slot(&mut adj, &mut scratch, &self.nodes, *b);
                    for (d, gv) in d.iter_mut().zip(&g) {
                        *d -= gv;
                    }
                }
                Op::Scale { a, factor } => {
                    let d = slot(&mut adj, &mut scratch, &self.nodes, *a);
                    for (d, gv) in d.iter_mut().zip(&g) {
                        *d += gv * factor;
                    }
                }
                Op::ColumnBlock { a, start } => {
                    let cols = self.nodes[*a].cols;
                    let width = node.cols;
                    let d = slot(&mut adj, &mut scratch, &self.nodes, *a);
                    for (r, row) in g.chunks_exact(width).enumerate() {
                        accumulate(&mut d[r * cols + start..r * cols + start + width], row);
                    }
                }
                Op::OverlapAdd { frames, hop } => {
                    let frame_len = self.nodes[*frames].cols;
                    let d = slot(&mut adj, &mut scratch, &self.nodes, *frames);
                    kernels::overlap_add_backward(&g, frame_len, *hop, d);
                }
                Op::ConsistencyShare { sources, mixture } => {
                    let inv = 1.0 / sources.len() as f64;
                    let scaled: Vec<f64> = g.iter().map(|v| v * inv).collect();
                    accumulate(slot(&mut adj, &mut scratch, &self.nodes, *mixture), &scaled);
                    for s in sources {
                        let d = slot(&mut adj, &mut scratch, &self.nodes, *s);
                        for (d, v) in d.iter_mut().zip(&scaled) {
                            *d -= v;
                        }
                    }
                }
                Op::SiSdr { estimate, target } => {
                    let (ve, vt) = (&self.nodes[*estimate].value, &self.nodes[*target].value);
                    let mut de = vec![0.0; ve.len()];
                    let mut dt = vec![0.0; vt.len()];
                    kernels::si_sdr_backward(ve, vt, node.value[0], g[0], Some(&mut de), Some(&mut dt));
                    accumulate(slot(&mut adj, &mut scratch, &self.nodes, *estimate), &de);
                    accumulate(slot(&mut adj, &mut scratch, &self.nodes, *target), &dt);
                }
                Op::Sum { a } => {
                    let d = slot(&mut adj, &mut scratch, &self.nodes, *a);
                    for d in d.iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Min2 { a, b } => {
                    let va = self.nodes[*a].value[0];
                    let vb = self.nodes[*b].value[0];
                    let winner = if va <= vb { *a } else { *b };
                    slot(&mut adj, &mut scratch, &self.nodes, winner)[0] += g[0];
                }
            }
        }
        if let Some(k) = grad.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                node: String::from("param"),
                detail: format!("non-finite gradient at coordinate {k}"),
            });
        }
        Ok(grad)
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
