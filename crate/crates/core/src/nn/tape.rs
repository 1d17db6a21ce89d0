//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! Every value on the [`Tape`] is a `rows x cols` matrix of f64 (scalars are
//! 1x1). Operations are appended in execution order, which is a topological
//! order, so [`Tape::backward`] visits each node exactly once walking the tape
//! from the end.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ParamStore;
use crate::error::{Error, Result};
use crate::sparse::{conv_backward_input, conv_backward_weight, conv_forward, KernelMap};

/// Probability clamp used by every log-loss.
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    Conv { x: Var, w: Var, b: Option<Var>, map: Arc<KernelMap>, in_ch: usize, out_ch: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Sigmoid(Var),
    Clamp01(Var),
    RoundSte(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Add(Var, Var),
    Scale(Var, f64),
    SegmentMean { x: Var, offsets: Vec<usize> },
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    Sum(Var),
    Mean(Var),
    Bce { p: Var, target: Vec<f64> },
    Focal { logits: Var, occupied: Vec<bool>, weights: Vec<f64>, xi: f64 },
    Mse { x: Var, target: Vec<f64>, scale: f64 },
    LaplaceBits { x: Var, log_scale: Var },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

/// Records operations for one forward pass.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    param_ids: Vec<String>,
    param_vars: HashMap<String, Var>,
    training: bool,
    rng: ChaCha8Rng,
}

/// Per-node gradients returned by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(msg: String) -> Error {
    Error::ShapeMismatch(msg)
}

impl Tape {
    /// A new tape. `training` enables dropout; `seed` drives dropout masks.
    pub fn new(training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            param_ids: Vec::new(),
            param_vars: HashMap::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    /// Value of a 1x1 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    /// A constant input.
    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var> {
        if value.len() != rows * cols {
            return Err(shape_err(format!("leaf of {} values for {rows}x{cols}", value.len())));
        }
        Ok(self.push(rows, cols, value, Op::Leaf))
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(1, 1, vec![v], Op::Leaf)
    }

    /// A trainable parameter, viewed as `(rows = numel / last_dim, cols = last_dim)`.
    /// Registering the same id twice returns the same node.
    pub fn param(&mut self, store: &ParamStore, id: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(id) {
            return Ok(v);
        }
        let p = store.get(id)?;
        let cols = *p.shape.last().unwrap_or(&1);
        let rows = p.numel() / cols.max(1);
        let idx = self.param_ids.len();
        self.param_ids.push(id.to_string());
        let v = self.push(rows, cols, p.value.clone(), Op::Param(idx));
        self.param_vars.insert(id.to_string(), v);
        Ok(v)
    }

    /// A parameter value recorded as a constant (no gradient flows to it).
    pub fn frozen_param(&mut self, store: &ParamStore, id: &str) -> Result<Var> {
        let p = store.get(id)?;
        let cols = *p.shape.last().unwrap_or(&1);
        let rows = p.numel() / cols.max(1);
        Ok(self.push(rows, cols, p.value.clone(), Op::Leaf))
    }

    /// Sparse (or transposed sparse) convolution through a prebuilt kernel map.
    pub fn conv(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        map: Arc<KernelMap>,
        in_ch: usize,
        out_ch: usize,
    ) -> Result<Var> {
        let (xr, xc) = self.shape(x);
        if xr != map.n_in() || xc != in_ch {
            return Err(shape_err(format!("conv input {xr}x{xc}, map expects {}x{in_ch}", map.n_in())));
        }
        if self.value(w).len() != map.volume() * in_ch * out_ch {
            return Err(shape_err(format!(
                "conv weight has {} values, expected {}",
                self.value(w).len(),
                map.volume() * in_ch * out_ch
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != out_ch {
                return Err(shape_err(format!("conv bias has {} values, expected {out_ch}", self.value(b).len())));
            }
        }
        let out = conv_forward(self.value(x), in_ch, self.value(w), b.map(|b| self.value(b)), out_ch, &map);
        let n_out = map.n_out();
        Ok(self.push(n_out, out_ch, out, Op::Conv { x, w, b, map, in_ch, out_ch }))
    }

    /// `x W + b` with `x: n x in`, `W: in x out`, `b: 1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, k) = self.shape(x);
        let (wk, m) = self.shape(w);
        if k != wk {
            return Err(shape_err(format!("linear {n}x{k} times {wk}x{m}")));
        }
        if let Some(b) = b {
            if self.value(b).len() != m {
                return Err(shape_err("linear bias width".into()));
            }
        }
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            let row = &mut out[r * m..(r + 1) * m];
            if let Some(b) = b {
                row.copy_from_slice(self.value(b));
            }
            for c in 0..k {
                let xv = xv[r * k + c];
                for j in 0..m {
                    row[j] += xv * wv[c * m + j];
                }
            }
        }
        Ok(self.push(n, m, out, Op::Linear { x, w, b }))
    }

    fn map_unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(x);
        let v = self.value(x).iter().map(|&a| f(a)).collect();
        self.push(r, c, v, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map_unary(x, |a| a.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map_unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn clamp01(&mut self, x: Var) -> Var {
        self.map_unary(x, |a| a.clamp(0.0, 1.0), Op::Clamp01(x))
    }

    /// Round half to even in the forward pass, identity in the backward pass.
    pub fn round_ste(&mut self, x: Var) -> Var {
        self.map_unary(x, f64::round_ties_even, Op::RoundSte(x))
    }

    /// Inverted dropout: in training mode zeroes each entry with probability
    /// `rate` and scales survivors by `1 / (1 - rate)`; identity otherwise.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return x;
        }
        let n = self.value(x).len();
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n).map(|_| if self.rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
        let (r, c) = self.shape(x);
        let v = self.value(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        self.push(r, c, v, Op::Dropout { x, mask })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("add {:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let (r, c) = self.shape(a);
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(r, c, v, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map_unary(x, |a| a * s, Op::Scale(x, s))
    }

    /// Mean of consecutive row groups; `offsets` are group boundaries
    /// (`offsets[0] = 0`, last = row count). Output has one row per group.
    pub fn segment_mean(&mut self, x: Var, offsets: Vec<usize>) -> Result<Var> {
        let (r, c) = self.shape(x);
        if offsets.first() != Some(&0) || offsets.last() != Some(&r) || offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(shape_err(format!("bad segment offsets for {r} rows")));
        }
        let xv = self.value(x);
        let mut out = vec![0.0; (offsets.len() - 1) * c];
        for s in 0..offsets.len() - 1 {
            let n = (offsets[s + 1] - offsets[s]) as f64;
            for row in offsets[s]..offsets[s + 1] {
                for j in 0..c {
                    out[s * c + j] += xv[row * c + j];
                }
            }
            for j in 0..c {
                out[s * c + j] /= n;
            }
        }
        Ok(self.push(offsets.len() - 1, c, out, Op::SegmentMean { x, offsets }))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start + len > c || len == 0 {
            return Err(shape_err(format!("slice {start}..{} of {c} columns", start + len)));
        }
        let xv = self.value(x);
        let v = (0..r).flat_map(|i| xv[i * c + start..i * c + start + len].iter().copied()).collect();
        Ok(self.push(r, len, v, Op::SliceCols { x, start }))
    }

    /// Rows `rows[k]` of `x`, in that order (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let (r, c) = self.shape(x);
        if let Some(bad) = rows.iter().find(|&&i| i >= r) {
            return Err(shape_err(format!("row {bad} of a {r}-row matrix")));
        }
        let xv = self.value(x);
        let v = rows.iter().flat_map(|&i| xv[i * c..(i + 1) * c].iter().copied()).collect();
        Ok(self.push(rows.len(), c, v, Op::GatherRows { x, rows }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(1, 1, vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(1, 1, vec![s], Op::Mean(x))
    }

    /// Mean binary cross-entropy of probabilities `p` against `target`.
    pub fn bce(&mut self, p: Var, target: Vec<f64>) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != target.len() || pv.is_empty() {
            return Err(shape_err(format!("bce of {} probabilities, {} targets", pv.len(), target.len())));
        }
        let loss = pv.iter().zip(&target).map(|(&q, &t)| bce(t, q)).sum::<f64>() / pv.len() as f64;
        Ok(self.push(1, 1, vec![loss], Op::Bce { p, target }))
    }

    /// Mean focal loss on occupancy logits. `weights` holds the per-element
    /// class weight (sigma) and `xi` the focusing exponent.
    pub fn focal(&mut self, logits: Var, occupied: Vec<bool>, weights: Vec<f64>, xi: f64) -> Result<Var> {
        let zv = self.value(logits);
        if zv.len() != occupied.len() || zv.len() != weights.len() || zv.is_empty() {
            return Err(Error::AlignmentError(format!(
                "{} logits, {} labels, {} weights",
                zv.len(),
                occupied.len(),
                weights.len()
            )));
        }
        let loss =
            zv.iter().zip(&occupied).zip(&weights).map(|((&z, &occ), &w)| focal_term(z, occ, w, xi).0).sum::<f64>()
                / zv.len() as f64;
        Ok(self.push(1, 1, vec![loss], Op::Focal { logits, occupied, weights, xi }))
    }

    /// `scale * mean((x - target)^2)`.
    pub fn mse(&mut self, x: Var, target: Vec<f64>, scale: f64) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != target.len() || xv.is_empty() {
            return Err(shape_err(format!("mse of {} values against {}", xv.len(), target.len())));
        }
        let loss = scale * xv.iter().zip(&target).map(|(a, t)| (a - t) * (a - t)).sum::<f64>() / xv.len() as f64;
        Ok(self.push(1, 1, vec![loss], Op::Mse { x, target, scale }))
    }

    /// Total bits of integer-valued `x` (n x C) under per-channel zero-mean
    /// Laplace bins of width one with scales `exp(log_scale)` (1 x C).
    pub fn laplace_bits(&mut self, x: Var, log_scale: Var) -> Result<Var> {
        let (_, c) = self.shape(x);
        if self.value(log_scale).len() != c {
            return Err(shape_err(format!("{} scales for {c} channels", self.value(log_scale).len())));
        }
        let scales: Vec<f64> = self.value(log_scale).iter().map(|s| laplace_scale(*s)).collect();
        let bits = self.value(x).iter().enumerate().map(|(i, &v)| laplace_bits(v, scales[i % c]).0).sum();
        Ok(self.push(1, 1, vec![bits], Op::LaplaceBits { x, log_scale }))
    }

    /// Back-propagates from scalar `loss`, accumulating parameter gradients into
    /// `store` and returning the gradient of every node.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() || self.node(loss).value.len() != 1 {
            return Err(Error::DetachedLoss);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    let param = store.get_mut(&self.param_ids[*p])?;
                    param.grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Conv { x, w, b, map, in_ch, out_ch } => {
                    let gx = conv_backward_input(&g, *in_ch, self.value(*w), *out_ch, map);
                    let gw = conv_backward_weight(self.value(*x), *in_ch, &g, *out_ch, map);
                    if let Some(b) = b {
                        acc(&mut grads, *b, col_sums(&g, *out_ch));
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                }
                Op::Linear { x, w, b } => {
                    let (n, k) = self.shape(*x);
                    let m = node.cols;
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let mut gx = vec![0.0; n * k];
                    let mut gw = vec![0.0; k * m];
                    for r in 0..n {
                        for c in 0..k {
                            let mut s = 0.0;
                            for j in 0..m {
                                s += g[r * m + j] * wv[c * m + j];
                                gw[c * m + j] += xv[r * k + c] * g[r * m + j];
                            }
                            gx[r * k + c] = s;
                        }
                    }
                    if let Some(b) = b {
                        acc(&mut grads, *b, col_sums(&g, m));
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                }
                Op::Relu(x) => {
                    let gx = self.value(*x).iter().zip(&g).map(|(&a, &d)| if a > 0.0 { d } else { 0.0 }).collect();
                    acc(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = node.value.iter().zip(&g).map(|(&y, &d)| d * y * (1.0 - y)).collect();
                    acc(&mut grads, *x, gx);
                }
                Op::Clamp01(x) => {
                    let gx = self
                        .value(*x)
                        .iter()
                        .zip(&g)
                        .map(|(&a, &d)| if (0.0..=1.0).contains(&a) { d } else { 0.0 })
                        .collect();
                    acc(&mut grads, *x, gx);
                }
                Op::RoundSte(x) => acc(&mut grads, *x, g.clone()),
                Op::Dropout { x, mask } => {
                    let gx = g.iter().zip(mask).map(|(d, m)| d * m).collect();
                    acc(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g.clone());
                }
                Op::Scale(x, s) => {
                    let gx = g.iter().map(|d| d * s).collect();
                    acc(&mut grads, *x, gx);
                }
                Op::SegmentMean { x, offsets } => {
                    let c = node.cols;
                    let mut gx = vec![0.0; self.value(*x).len()];
                    for s in 0..offsets.len() - 1 {
                        let n = (offsets[s + 1] - offsets[s]) as f64;
                        for row in offsets[s]..offsets[s + 1] {
                            for j in 0..c {
                                gx[row * c + j] = g[s * c + j] / n;
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start } => {
                    let (r, c) = self.shape(*x);
                    let len = node.cols;
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        gx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::GatherRows { x, rows } => {
                    let (r, c) = self.shape(*x);
                    let mut gx = vec![0.0; r * c];
                    for (k, &i) in rows.iter().enumerate() {
                        for j in 0..c {
                            gx[i * c + j] += g[k * c + j];
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    acc(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    acc(&mut grads, *x, vec![g[0] / n as f64; n]);
                }
                Op::Bce { p, target } => {
                    let n = target.len() as f64;
                    let gx = self.value(*p).iter().zip(target).map(|(&q, &t)| g[0] * bce_grad(t, q) / n).collect();
                    acc(&mut grads, *p, gx);
                }
                Op::Focal { logits, occupied, weights, xi } => {
                    let n = occupied.len() as f64;
                    let gx = self
                        .value(*logits)
                        .iter()
                        .zip(occupied)
                        .zip(weights)
                        .map(|((&z, &occ), &w)| g[0] * focal_term(z, occ, w, *xi).1 / n)
                        .collect();
                    acc(&mut grads, *logits, gx);
                }
                Op::Mse { x, target, scale } => {
                    let n = target.len() as f64;
                    let gx = self.value(*x).iter().zip(target).map(|(a, t)| g[0] * 2.0 * scale * (a - t) / n).collect();
                    acc(&mut grads, *x, gx);
                }
                Op::LaplaceBits { x, log_scale } => {
                    let (_, c) = self.shape(*x);
                    let ls = self.value(*log_scale);
                    let scales: Vec<f64> = ls.iter().map(|s| laplace_scale(*s)).collect();
                    let mut gx = vec![0.0; self.value(*x).len()];
                    let mut gs = vec![0.0; c];
                    for (i, &v) in self.value(*x).iter().enumerate() {
                        let ch = i % c;
                        let (_, dv, db) = laplace_bits(v, scales[ch]);
                        gx[i] = g[0] * dv;
                        // d/d(log b) = b d/db; zero where the scale floor is active.
                        if ls[ch].exp() >= MIN_SCALE {
                            gs[ch] += g[0] * db * scales[ch];
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *log_scale, gs);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn col_sums(g: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in g.chunks_exact(cols) {
        for (a, b) in out.iter_mut().zip(row) {
            *a += b;
        }
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy `-t ln q - (1 - t) ln(1 - q)` with `q` clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn bce(target: f64, p: f64) -> f64 {
    let q = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -target * q.ln() - (1.0 - target) * (1.0 - q).ln()
}

fn bce_grad(target: f64, p: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    -target / p + (1.0 - target) / (1.0 - p)
}

/// Focal loss of one logit and its derivative with respect to the logit.
///
/// With `q` the (clamped) probability of the true class and `s = +-1` its
/// sign, `loss = -w (1 - q)^xi ln q` and
/// `d loss / dz = -w s [(1 - q)^(xi + 1) - xi (1 - q)^xi q ln q]`.
pub fn focal_term(z: f64, occupied: bool, weight: f64, xi: f64) -> (f64, f64) {
    let s = if occupied { 1.0 } else { -1.0 };
    let raw = sigmoid(s * z);
    let q = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let one_m = 1.0 - q;
    let loss = -weight * one_m.powf(xi) * q.ln();
    let grad = if raw != q {
        0.0
    } else {
        let focus = if xi == 0.0 { 0.0 } else { xi * one_m.powf(xi) * q * q.ln() };
        -weight * s * (one_m.powf(xi + 1.0) - focus)
    };
    (loss, grad)
}

/// Smallest Laplace scale used by the rate model.
pub const MIN_SCALE: f64 = 1e-6;

/// `max(exp(log_scale), MIN_SCALE)`.
pub fn laplace_scale(log_scale: f64) -> f64 {
    log_scale.exp().max(MIN_SCALE)
}

/// `-log2 P(v)` for a zero-mean Laplace of scale `b` integrated over
/// `[v - 1/2, v + 1/2]`, plus derivatives with respect to `v` and `b`.
///
/// For `v != 0`, with `a = |v| - 1/2`: `P = e^(-a/b) (1 - e^(-1/b)) / 2`.
/// For `v = 0`: `P = 1 - e^(-1/(2b))`, and the `v`-derivative is taken as 0.
pub fn laplace_bits(v: f64, b: f64) -> (f64, f64, f64) {
    let ln2 = std::f64::consts::LN_2;
    let a = v.abs() - 0.5;
    if a < 0.0 {
        let ln_p = (-(-0.5 / b).exp_m1()).ln();
        let dlnp_db = -0.5 / (b * b * (0.5 / b).exp_m1());
        (-ln_p / ln2, 0.0, -dlnp_db / ln2)
    } else {
        let ln_p = -a / b + 0.5f64.ln() + (-(-1.0 / b).exp_m1()).ln();
        let dlnp_db = a / (b * b) - 1.0 / (b * b * (1.0 / b).exp_m1());
        let dlnp_dv = -v.signum() / b;
        (-ln_p / ln2, -dlnp_dv / ln2, -dlnp_db / ln2)
    }
}
