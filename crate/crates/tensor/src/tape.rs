//! Define-by-run computation tape with reverse-mode differentiation.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::conv::{self, ConvGeom};
use crate::error::{Result, TensorError};
use crate::kernels;
use crate::linalg::LuFactors;
use crate::sample::{self, Tap};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Conv2d { input: Var, kernel: Var, geom: ConvGeom, cols: Vec<f64> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    Softmax(Var),
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    Concat { parts: Vec<Var>, outer: usize, inners: Vec<usize> },
    Embedding { table: Var, index: usize, dim: usize },
    GridSample { map: Var, points: Var, taps: Vec<Tap>, c: usize, h: usize, w: usize },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose { a: Var, rows: usize, cols: usize },
    Slice { a: Var, start: usize },
    AddBroadcast { a: Var, bias: Var },
    ChannelBias { a: Var, bias: Var, spatial: usize },
    InstanceNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, spatial: usize },
    Solve { rhs: Var, lu: Arc<LuFactors>, cols: usize },
    SpatialMean { a: Var, spatial: usize },
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// How a watched feature map lays out its spatial positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadLayout {
    /// `C×H×W` (or `C×P`): position `p` is column `p` of every channel row.
    ChannelsFirst { positions: usize },
    /// `P×C`: position `p` is row `p`.
    PositionsFirst { positions: usize },
}

impl ReadLayout {
    fn positions(self) -> usize {
        match self {
            ReadLayout::ChannelsFirst { positions } | ReadLayout::PositionsFirst { positions } => positions,
        }
    }
}

/// Records which spatial cells of watched feature maps are read by forward ops.
#[derive(Debug, Default)]
struct ReadTracer {
    watched: HashMap<Var, ReadLayout>,
    touched: BTreeSet<usize>,
}

/// Ordered record of operations. Values are computed eagerly when an op is
/// recorded; [`Tape::backward`] replays the record in reverse exactly once.
#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
    tracer: Option<ReadTracer>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input: gradients are accumulated for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input without gradient tracking.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, if `v` received one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(!self.consumed, "recording onto a consumed tape");
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- read instrumentation -------------------------------------------------

    /// Start counting spatial reads of `map`; views (reshape/transpose) of a
    /// watched value are watched as well.
    pub fn watch_reads(&mut self, map: Var, layout: ReadLayout) {
        self.tracer.get_or_insert_with(ReadTracer::default).watched.insert(map, layout);
    }

    /// Number of distinct watched positions read since the previous call.
    pub fn take_reads(&mut self) -> usize {
        match self.tracer.as_mut() {
            Some(t) => {
                let n = t.touched.len();
                t.touched.clear();
                n
            }
            None => 0,
        }
    }

    pub(crate) fn trace_all(&mut self, v: Var) {
        if let Some(t) = self.tracer.as_mut() {
            if let Some(layout) = t.watched.get(&v).copied() {
                t.touched.extend(0..layout.positions());
            }
        }
    }

    pub(crate) fn trace_cells(&mut self, v: Var, cells: impl IntoIterator<Item = usize>) {
        if let Some(t) = self.tracer.as_mut() {
            if t.watched.contains_key(&v) {
                t.touched.extend(cells);
            }
        }
    }

    pub(crate) fn trace_view(&mut self, from: Var, to: Var, layout: impl Fn(ReadLayout) -> ReadLayout) {
        if let Some(t) = self.tracer.as_mut() {
            if let Some(l) = t.watched.get(&from).copied() {
                t.watched.insert(to, layout(l));
            }
        }
    }

    // ---- reverse pass ---------------------------------------------------------

    /// Accumulate `d loss / d v` for every tracked value reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::Usage("backward already ran on this tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    #[allow(clippy::needless_range_loop)]
    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        macro_rules! with_grad {
            ($v:expr, |$buf:ident| $body:expr) => {
                if let Some($buf) = grad_slot(nodes, grads, $v) {
                    $body;
                }
            };
        }
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                with_grad!(a, |ga| kernels::gemm_nt_acc(g, val(b), ga, m, k, n));
                with_grad!(b, |gb| kernels::gemm_tn_acc(val(a), g, gb, m, k, n));
            }
            Op::Conv2d { input, kernel, geom, cols } => {
                with_grad!(*kernel, |gk| conv::backward_kernel(cols, g, geom, gk));
                with_grad!(*input, |gi| conv::backward_input(val(*kernel), g, geom, gi));
            }
            Op::Add(a, b) => {
                with_grad!(*a, |ga| kernels::add_into(g, ga));
                with_grad!(*b, |gb| kernels::add_into(g, gb));
            }
            Op::Sub(a, b) => {
                with_grad!(*a, |ga| kernels::add_into(g, ga));
                with_grad!(*b, |gb| kernels::axpy(-1.0, g, gb));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                with_grad!(*a, |ga| for j in 0..g.len() {
                    ga[j] += g[j] * vb[j];
                });
                with_grad!(*b, |gb| for j in 0..g.len() {
                    gb[j] += g[j] * va[j];
                });
            }
            Op::Scale(a, s) => with_grad!(*a, |ga| kernels::axpy(*s, g, ga)),
            Op::Tanh(a) => with_grad!(*a, |ga| for j in 0..g.len() {
                ga[j] += g[j] * (1.0 - out[j] * out[j]);
            }),
            Op::Sigmoid(a) => with_grad!(*a, |ga| for j in 0..g.len() {
                ga[j] += g[j] * out[j] * (1.0 - out[j]);
            }),
            Op::Relu(a) => {
                let x = val(*a);
                with_grad!(*a, |ga| for j in 0..g.len() {
                    if x[j] > 0.0 {
                        ga[j] += g[j];
                    }
                });
            }
            Op::Abs(a) => {
                let x = val(*a);
                with_grad!(*a, |ga| for j in 0..g.len() {
                    if x[j] > 0.0 {
                        ga[j] += g[j];
                    } else if x[j] < 0.0 {
                        ga[j] -= g[j];
                    }
                });
            }
            Op::Clamp { a, lo, hi } => {
                let x = val(*a);
                with_grad!(*a, |ga| for j in 0..g.len() {
                    if x[j] >= *lo && x[j] <= *hi {
                        ga[j] += g[j];
                    }
                });
            }
            Op::Softmax(a) => {
                let inner = kernels::dot(g, out);
                with_grad!(*a, |ga| for j in 0..g.len() {
                    ga[j] += out[j] * (g[j] - inner);
                });
            }
            Op::CrossEntropy { logits, target, probs } => {
                with_grad!(*logits, |gl| for j in 0..probs.len() {
                    let onehot = if j == *target { 1.0 } else { 0.0 };
                    gl[j] += g[0] * (probs[j] - onehot);
                });
            }
            Op::Concat { parts, outer, inners } => {
                let total: usize = inners.iter().sum();
                let mut offset = 0;
                for (part, &inner) in parts.iter().zip(inners) {
                    with_grad!(*part, |gp| for o in 0..*outer {
                        kernels::add_into(
                            &g[o * total + offset..o * total + offset + inner],
                            &mut gp[o * inner..(o + 1) * inner],
                        );
                    });
                    offset += inner;
                }
            }
            Op::Embedding { table, index, dim } => {
                with_grad!(*table, |gt| kernels::add_into(g, &mut gt[index * dim..(index + 1) * dim]));
            }
            Op::GridSample { map, points, taps, c, h, w } => {
                with_grad!(*map, |gm| sample::backward_map(g, *c, *h, *w, taps, gm));
                with_grad!(*points, |gp| sample::backward_points(val(*map), g, *c, *h, *w, taps, gp));
            }
            Op::Sum(a) => with_grad!(*a, |ga| for x in ga.iter_mut() {
                *x += g[0];
            }),
            Op::Mean(a) => {
                let n = nodes[a.0].value.len() as f64;
                with_grad!(*a, |ga| for x in ga.iter_mut() {
                    *x += g[0] / n;
                });
            }
            Op::Reshape(a) => with_grad!(*a, |ga| kernels::add_into(g, ga)),
            Op::Transpose { a, rows, cols } => {
                with_grad!(*a, |ga| for r in 0..*rows {
                    for c in 0..*cols {
                        ga[r * cols + c] += g[c * rows + r];
                    }
                });
            }
            Op::Slice { a, start } => {
                with_grad!(*a, |ga| kernels::add_into(g, &mut ga[*start..*start + g.len()]));
            }
            Op::AddBroadcast { a, bias } => {
                with_grad!(*a, |ga| kernels::add_into(g, ga));
                let n = nodes[bias.0].value.len();
                with_grad!(*bias, |gb| for row in g.chunks(n) {
                    kernels::add_into(row, gb);
                });
            }
            Op::ChannelBias { a, bias, spatial } => {
                with_grad!(*a, |ga| kernels::add_into(g, ga));
                with_grad!(*bias, |gb| for (c, row) in g.chunks(*spatial).enumerate() {
                    gb[c] += row.iter().sum::<f64>();
                });
            }
            Op::InstanceNorm { x, gamma, beta, xhat, inv_std, spatial } => {
                let s = *spatial;
                let gam = val(*gamma);
                with_grad!(*gamma, |gg| for c in 0..gg.len() {
                    gg[c] += kernels::dot(&g[c * s..(c + 1) * s], &xhat[c * s..(c + 1) * s]);
                });
                with_grad!(*beta, |gb| for c in 0..gb.len() {
                    gb[c] += g[c * s..(c + 1) * s].iter().sum::<f64>();
                });
                with_grad!(*x, |gx| for c in 0..gam.len() {
                    let gs = &g[c * s..(c + 1) * s];
                    let xs = &xhat[c * s..(c + 1) * s];
                    let sum_d: f64 = gs.iter().sum::<f64>() * gam[c];
                    let sum_dx: f64 = kernels::dot(gs, xs) * gam[c];
                    let k = inv_std[c] / s as f64;
                    for j in 0..s {
                        let d = gs[j] * gam[c];
                        gx[c * s + j] += k * (s as f64 * d - sum_d - xs[j] * sum_dx);
                    }
                });
            }
            Op::Solve { rhs, lu, cols } => {
                with_grad!(*rhs, |gr| kernels::add_into(&lu.solve_transposed(g, *cols), gr));
            }
            Op::SpatialMean { a, spatial } => {
                let s = *spatial;
                with_grad!(*a, |ga| for (c, &gc) in g.iter().enumerate() {
                    for x in &mut ga[c * s..(c + 1) * s] {
                        *x += gc / s as f64;
                    }
                });
            }
        }
    }
}

fn grad_slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}
