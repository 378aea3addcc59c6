//! Graph regressor: two mean-aggregation SAGE layers, mean readout, concatenation with
//! the global vector and two dense layers, trained on `log1p(joules)` with Adam.
//!
//! Everything is plain `f64` on flat row-major buffers; the backward pass is written out
//! by hand and verified against central differences in [`gradient_check`].

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{FeatureStats, GLOBAL_WIDTH, NODE_WIDTH};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GnnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("training target must be a finite non-negative energy, got {0}")]
    BadTarget(f64),
    #[error("invalid hyperparameter `{0}`")]
    Hyper(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("ground truth contains a non-positive value at index {0}")]
    ZeroTruth(usize),
    #[error("{preds} predictions for {truths} ground-truth values")]
    Length { preds: usize, truths: usize },
    #[error("no predictions")]
    Empty,
    #[error("error bound must be positive")]
    Delta,
}

/// Undirected adjacency lists, deduplicated, without self loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    lists: Vec<Vec<usize>>,
}

impl Neighborhood {
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Self {
        let mut lists = vec![Vec::new(); node_count];
        for &(a, b) in edges {
            if a != b && a < node_count && b < node_count {
                lists[a].push(b);
                lists[b].push(a);
            }
        }
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
        }
        Self { lists }
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn of(&self, v: usize) -> &[usize] {
        &self.lists[v]
    }
}

/// Model input for one graph: an `node_count × node_width` feature matrix, its
/// neighborhood structure and the global vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub node_count: usize,
    pub node_width: usize,
    pub features: Vec<f64>,
    pub neighbors: Arc<Neighborhood>,
    pub global: Vec<f64>,
}

impl GraphInput {
    fn check(&self, shape: &ModelShape) -> Result<(), GnnError> {
        if self.node_count == 0 {
            return Err(GnnError::Shape("graph has no nodes".into()));
        }
        if self.node_width != shape.node_width
            || self.features.len() != self.node_count * self.node_width
        {
            return Err(GnnError::Shape(format!(
                "node features are {}×{} ({} values), model expects width {}",
                self.node_count,
                self.node_width,
                self.features.len(),
                shape.node_width
            )));
        }
        if self.neighbors.len() != self.node_count {
            return Err(GnnError::Shape("adjacency size differs from node count".into()));
        }
        if self.global.len() != shape.global_width {
            return Err(GnnError::Shape(format!(
                "global vector has {} slots, model expects {}",
                self.global.len(),
                shape.global_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub node_width: usize,
    pub global_width: usize,
    pub hidden: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            node_width: NODE_WIDTH,
            global_width: GLOBAL_WIDTH,
            hidden: 64,
        }
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    c1w: usize,
    c1b: usize,
    c2w: usize,
    c2b: usize,
    h1w: usize,
    h1b: usize,
    h2w: usize,
    h2b: usize,
    end: usize,
}

impl ModelShape {
    fn layout(&self) -> Layout {
        let (f, g, h) = (self.node_width, self.global_width, self.hidden);
        let c1w = 0;
        let c1b = c1w + 2 * f * h;
        let c2w = c1b + h;
        let c2b = c2w + 2 * h * h;
        let h1w = c2b + h;
        let h1b = h1w + (h + g) * h;
        let h2w = h1b + h;
        let h2b = h2w + h;
        Layout {
            c1w,
            c1b,
            c2w,
            c2b,
            h1w,
            h1b,
            h2w,
            h2b,
            end: h2b + 1,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().end
    }
}

/// All weights in one flat vector. Weight matrices are stored `in × out`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub shape: ModelShape,
    pub values: Vec<f64>,
}

impl GnnParams {
    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.param_count()],
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier(shape: ModelShape, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(shape);
        let l = shape.layout();
        let (f, g, h) = (shape.node_width, shape.global_width, shape.hidden);
        for (start, fan_in, fan_out) in [
            (l.c1w, 2 * f, h),
            (l.c2w, 2 * h, h),
            (l.h1w, h + g, h),
            (l.h2w, h, 1),
        ] {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut p.values[start..start + fan_in * fan_out] {
                *w = rng.gen_range(-a..a);
            }
        }
        p
    }

    pub fn output_bias(&self) -> f64 {
        self.values[self.shape.layout().h2b]
    }

    pub fn set_output_bias(&mut self, b: f64) {
        let i = self.shape.layout().h2b;
        self.values[i] = b;
    }

    fn check(&self) -> Result<(), GnnError> {
        if self.values.len() != self.shape.param_count() {
            return Err(GnnError::Shape(format!(
                "{} parameters for a shape needing {}",
                self.values.len(),
                self.shape.param_count()
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// dense kernels

/// `out += a · w` with `a: rows × k`, `w: k × cols`.
fn gemm_acc(a: &[f64], rows: usize, k: usize, w: &[f64], cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        let arow = &a[r * k..(r + 1) * k];
        let orow = &mut out[r * cols..(r + 1) * cols];
        for (i, &x) in arow.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let wrow = &w[i * cols..(i + 1) * cols];
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += x * wv;
            }
        }
    }
}

/// `dw += aᵀ · d`.
fn grad_w_acc(a: &[f64], rows: usize, k: usize, d: &[f64], cols: usize, dw: &mut [f64]) {
    for r in 0..rows {
        let drow = &d[r * cols..(r + 1) * cols];
        if drow.iter().all(|&x| x == 0.0) {
            continue;
        }
        for (i, &x) in a[r * k..(r + 1) * k].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (g, &dv) in dw[i * cols..(i + 1) * cols].iter_mut().zip(drow) {
                *g += x * dv;
            }
        }
    }
}

/// `da = d · wᵀ`.
fn grad_input(d: &[f64], rows: usize, cols: usize, w: &[f64], k: usize) -> Vec<f64> {
    let mut da = vec![0.0; rows * k];
    for r in 0..rows {
        let drow = &d[r * cols..(r + 1) * cols];
        if drow.iter().all(|&x| x == 0.0) {
            continue;
        }
        for i in 0..k {
            da[r * k + i] = dot(drow, &w[i * cols..(i + 1) * cols]);
        }
    }
    da
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * c + j] * b[4 * c + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

fn add_bias(z: &mut [f64], rows: usize, b: &[f64]) {
    let cols = b.len();
    for r in 0..rows {
        for (x, bv) in z[r * cols..(r + 1) * cols].iter_mut().zip(b) {
            *x += bv;
        }
    }
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&x| x.max(0.0)).collect()
}

/// Row `v` becomes `[x_v, mean over neighbors of x]`; isolated nodes get a zero second half.
fn aggregate(x: &[f64], n: usize, width: usize, nb: &Neighborhood) -> Vec<f64> {
    let mut out = vec![0.0; n * 2 * width];
    for v in 0..n {
        let row = &mut out[v * 2 * width..(v + 1) * 2 * width];
        row[..width].copy_from_slice(&x[v * width..(v + 1) * width]);
        let ns = nb.of(v);
        if ns.is_empty() {
            continue;
        }
        let inv = 1.0 / ns.len() as f64;
        let mean = &mut row[width..];
        for &u in ns {
            for (m, &xu) in mean.iter_mut().zip(&x[u * width..(u + 1) * width]) {
                *m += xu;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv);
    }
    out
}

fn aggregate_backward(d_agg: &[f64], n: usize, width: usize, nb: &Neighborhood) -> Vec<f64> {
    let mut dx = vec![0.0; n * width];
    for v in 0..n {
        let row = &d_agg[v * 2 * width..(v + 1) * 2 * width];
        for (d, &g) in dx[v * width..(v + 1) * width].iter_mut().zip(&row[..width]) {
            *d += g;
        }
        let ns = nb.of(v);
        if ns.is_empty() {
            continue;
        }
        let inv = 1.0 / ns.len() as f64;
        for &u in ns {
            for (d, &g) in dx[u * width..(u + 1) * width].iter_mut().zip(&row[width..]) {
                *d += g * inv;
            }
        }
    }
    dx
}

/// One SAGE layer: `relu(concat(h_v, mean_{u∈N(v)} h_u) · W + b)`, with `weight`
/// stored `2·in × out`.
pub fn sage_forward(
    features: &[f64],
    node_count: usize,
    neighbors: &Neighborhood,
    weight: &[f64],
    bias: &[f64],
) -> Result<Vec<f64>, GnnError> {
    if node_count == 0 || features.is_empty() || features.len() % node_count != 0 {
        return Err(GnnError::Shape(format!(
            "{} feature values for {node_count} nodes",
            features.len()
        )));
    }
    let width = features.len() / node_count;
    let out = bias.len();
    if out == 0 || weight.len() != 2 * width * out || neighbors.len() != node_count {
        return Err(GnnError::Shape(format!(
            "weight has {} values, expected {}×{}",
            weight.len(),
            2 * width,
            out
        )));
    }
    let agg = aggregate(features, node_count, width, neighbors);
    let mut z = vec![0.0; node_count * out];
    gemm_acc(&agg, node_count, 2 * width, weight, out, &mut z);
    add_bias(&mut z, node_count, bias);
    Ok(relu(&z))
}

struct Forward {
    a1: Vec<f64>,
    z1: Vec<f64>,
    a2: Vec<f64>,
    z2: Vec<f64>,
    c: Vec<f64>,
    z3: Vec<f64>,
    h3: Vec<f64>,
    y: f64,
}

impl Forward {
    /// Sign pattern of every pre-activation; a change means a relu kink was crossed.
    fn pattern(&self) -> Vec<bool> {
        self.z1
            .iter()
            .chain(&self.z2)
            .chain(&self.z3)
            .map(|&z| z > 0.0)
            .collect()
    }
}

fn forward(p: &GnnParams, input: &GraphInput) -> Forward {
    let s = p.shape;
    let l = s.layout();
    let (n, f, h, g) = (input.node_count, s.node_width, s.hidden, s.global_width);
    let w = &p.values;

    let a1 = aggregate(&input.features, n, f, &input.neighbors);
    let mut z1 = vec![0.0; n * h];
    gemm_acc(&a1, n, 2 * f, &w[l.c1w..l.c1b], h, &mut z1);
    add_bias(&mut z1, n, &w[l.c1b..l.c2w]);
    let h1 = relu(&z1);

    let a2 = aggregate(&h1, n, h, &input.neighbors);
    let mut z2 = vec![0.0; n * h];
    gemm_acc(&a2, n, 2 * h, &w[l.c2w..l.c2b], h, &mut z2);
    add_bias(&mut z2, n, &w[l.c2b..l.h1w]);

    let mut c = vec![0.0; h + g];
    for v in 0..n {
        for (acc, &z) in c[..h].iter_mut().zip(&z2[v * h..(v + 1) * h]) {
            *acc += z.max(0.0);
        }
    }
    c[..h].iter_mut().for_each(|x| *x /= n as f64);
    c[h..].copy_from_slice(&input.global);

    let mut z3 = w[l.h1b..l.h2w].to_vec();
    gemm_acc(&c, 1, h + g, &w[l.h1w..l.h1b], h, &mut z3);
    let h3 = relu(&z3);
    let y = dot(&h3, &w[l.h2w..l.h2b]) + w[l.h2b];
    Forward {
        a1,
        z1,
        a2,
        z2,
        c,
        z3,
        h3,
        y,
    }
}

/// Accumulates `dy · ∂y/∂θ` into `grad`.
fn backward(p: &GnnParams, input: &GraphInput, fw: &Forward, dy: f64, grad: &mut [f64]) {
    let s = p.shape;
    let l = s.layout();
    let (n, f, h, g) = (input.node_count, s.node_width, s.hidden, s.global_width);
    let w = &p.values;

    for (gw, &x) in grad[l.h2w..l.h2b].iter_mut().zip(&fw.h3) {
        *gw += dy * x;
    }
    grad[l.h2b] += dy;

    let dz3: Vec<f64> = w[l.h2w..l.h2b]
        .iter()
        .zip(&fw.z3)
        .map(|(&wv, &z)| if z > 0.0 { dy * wv } else { 0.0 })
        .collect();
    grad_w_acc(&fw.c, 1, h + g, &dz3, h, &mut grad[l.h1w..l.h1b]);
    for (gb, d) in grad[l.h1b..l.h2w].iter_mut().zip(&dz3) {
        *gb += d;
    }
    let dpool = grad_input(&dz3, 1, h, &w[l.h1w..l.h1b], h + g);

    let inv_n = 1.0 / n as f64;
    let mut dz2 = vec![0.0; n * h];
    for v in 0..n {
        for j in 0..h {
            if fw.z2[v * h + j] > 0.0 {
                dz2[v * h + j] = dpool[j] * inv_n;
            }
        }
    }
    grad_w_acc(&fw.a2, n, 2 * h, &dz2, h, &mut grad[l.c2w..l.c2b]);
    for v in 0..n {
        for (gb, d) in grad[l.c2b..l.h1w].iter_mut().zip(&dz2[v * h..(v + 1) * h]) {
            *gb += d;
        }
    }
    let da2 = grad_input(&dz2, n, h, &w[l.c2w..l.c2b], 2 * h);
    let mut dz1 = aggregate_backward(&da2, n, h, &input.neighbors);
    for (d, &z) in dz1.iter_mut().zip(&fw.z1) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }
    grad_w_acc(&fw.a1, n, 2 * f, &dz1, h, &mut grad[l.c1w..l.c1b]);
    for v in 0..n {
        for (gb, d) in grad[l.c1b..l.c2w].iter_mut().zip(&dz1[v * h..(v + 1) * h]) {
            *gb += d;
        }
    }
}

/// Prediction in model space, `≈ log1p(joules)`.
pub fn model_forward(params: &GnnParams, input: &GraphInput) -> Result<f64, GnnError> {
    params.check()?;
    input.check(&params.shape)?;
    Ok(forward(params, input).y)
}

/// A graph labelled with its energy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub input: GraphInput,
    pub energy_joules: f64,
}

impl TrainExample {
    pub fn new(input: GraphInput, energy_joules: f64) -> Self {
        Self {
            input,
            energy_joules,
        }
    }

    pub fn target(&self) -> f64 {
        self.energy_joules.ln_1p()
    }
}

/// Samples per gradient work unit. The unit boundaries are fixed, so the reduction tree
/// (and hence every bit of the result) does not depend on the thread count.
const GRAD_CHUNK: usize = 16;

/// Mean squared error against `log1p(energy)` and its gradient.
pub fn loss_and_gradients(
    params: &GnnParams,
    batch: &[&TrainExample],
) -> Result<(f64, Vec<f64>), GnnError> {
    if batch.is_empty() {
        return Err(GnnError::EmptyBatch);
    }
    params.check()?;
    for ex in batch {
        ex.input.check(&params.shape)?;
        if !(ex.energy_joules >= 0.0 && ex.energy_joules.is_finite()) {
            return Err(GnnError::BadTarget(ex.energy_joules));
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let count = params.values.len();
    let partials: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; count];
            let mut loss = 0.0;
            for ex in chunk {
                let fw = forward(params, &ex.input);
                let r = fw.y - ex.target();
                loss += r * r;
                backward(params, &ex.input, &fw, 2.0 * r * scale, &mut grad);
            }
            (loss, grad)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; count];
    for (l, g) in partials {
        loss += l;
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += x;
        }
    }
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hyper: &TrainHyper) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 512,
            epochs: 100,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden: 64,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<(), GnnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GnnError::Hyper("learning_rate"));
        }
        if self.batch_size == 0 {
            return Err(GnnError::Hyper("batch_size"));
        }
        if self.hidden == 0 {
            return Err(GnnError::Hyper("hidden"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(GnnError::Hyper("beta"));
        }
        if !(self.epsilon > 0.0) {
            return Err(GnnError::Hyper("epsilon"));
        }
        Ok(())
    }
}

/// Stateful optimizer loop; supports warm-started continuation on a grown dataset.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: GnnParams,
    pub adam: AdamState,
    pub hyper: TrainHyper,
    rng: ChaCha8Rng,
    pub loss_history: Vec<f64>,
}

impl Trainer {
    /// Xavier-initialized parameters seeded from `hyper.seed`.
    pub fn new(node_width: usize, global_width: usize, hyper: TrainHyper) -> Result<Self, GnnError> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let shape = ModelShape {
            node_width,
            global_width,
            hidden: hyper.hidden,
        };
        let params = GnnParams::xavier(shape, &mut rng);
        Ok(Self {
            adam: AdamState::new(params.values.len()),
            params,
            hyper,
            rng,
            loss_history: Vec::new(),
        })
    }

    /// Continues from existing parameters with a fresh optimizer state.
    pub fn from_params(params: GnnParams, hyper: TrainHyper) -> Result<Self, GnnError> {
        hyper.validate()?;
        params.check()?;
        Ok(Self {
            adam: AdamState::new(params.values.len()),
            rng: ChaCha8Rng::seed_from_u64(hyper.seed),
            params,
            hyper,
            loss_history: Vec::new(),
        })
    }

    /// Starts the output at the mean target so the network only has to learn the spread.
    pub fn calibrate_output_bias(&mut self, data: &[TrainExample]) {
        if !data.is_empty() {
            let mean = data.iter().map(TrainExample::target).sum::<f64>() / data.len() as f64;
            self.params.set_output_bias(mean);
        }
    }

    /// Runs `epochs` passes of shuffled mini-batches, returning each epoch's mean loss.
    pub fn run_epochs(&mut self, data: &[TrainExample], epochs: usize) -> Result<&[f64], GnnError> {
        if data.is_empty() {
            return Err(GnnError::EmptyBatch);
        }
        let start = self.loss_history.len();
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..epochs {
            let epoch = self.loss_history.len();
            order.shuffle(&mut self.rng);
            let mut total = 0.0;
            for idx in order.chunks(self.hyper.batch_size) {
                let batch: Vec<&TrainExample> = idx.iter().map(|&i| &data[i]).collect();
                let (loss, grad) = loss_and_gradients(&self.params, &batch)?;
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(GnnError::NonFiniteLoss { epoch });
                }
                total += loss * batch.len() as f64;
                adam_step(&mut self.params.values, &grad, &mut self.adam, &self.hyper);
            }
            self.loss_history.push(total / data.len() as f64);
        }
        Ok(&self.loss_history[start..])
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: GnnParams,
    pub loss_history: Vec<f64>,
}

/// Trains a fresh model for `hyper.epochs` epochs.
pub fn train(data: &[TrainExample], hyper: &TrainHyper) -> Result<TrainOutcome, GnnError> {
    let first = data.first().ok_or(GnnError::EmptyBatch)?;
    let mut trainer = Trainer::new(first.input.node_width, first.input.global.len(), hyper.clone())?;
    trainer.calibrate_output_bias(data);
    trainer.run_epochs(data, hyper.epochs)?;
    Ok(TrainOutcome {
        params: trainer.params,
        loss_history: trainer.loss_history,
    })
}

// ---------------------------------------------------------------------------
// metrics

fn check_pairs(preds: &[f64], truths: &[f64]) -> Result<(), MetricError> {
    if preds.len() != truths.len() {
        return Err(MetricError::Length {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(i) = truths.iter().position(|&t| !(t > 0.0)) {
        return Err(MetricError::ZeroTruth(i));
    }
    Ok(())
}

/// Mean absolute percentage error, in percent.
pub fn mape(preds: &[f64], truths: &[f64]) -> Result<f64, MetricError> {
    check_pairs(preds, truths)?;
    let sum: f64 = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).abs() / t)
        .sum();
    Ok(sum / preds.len() as f64 * 100.0)
}

/// Percentage of predictions whose relative error is at most `delta` (a fraction).
pub fn eba(preds: &[f64], truths: &[f64], delta: f64) -> Result<f64, MetricError> {
    check_pairs(preds, truths)?;
    if !(delta > 0.0) {
        return Err(MetricError::Delta);
    }
    let hits = preds
        .iter()
        .zip(truths)
        .filter(|(p, t)| (*p - *t).abs() / *t <= delta)
        .count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

/// Error bounds reported by [`EvalReport`], as fractions.
pub const EBA_BOUNDS: [f64; 3] = [0.05, 0.10, 0.30];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub mape: f64,
    /// Keyed by bound in whole percent ("5", "10", "30").
    pub eba: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn compute(preds: &[f64], truths: &[f64]) -> Result<Self, MetricError> {
        let mut map = BTreeMap::new();
        for d in EBA_BOUNDS {
            map.insert(format!("{}", (d * 100.0).round()), eba(preds, truths, d)?);
        }
        Ok(Self {
            samples: preds.len(),
            mape: mape(preds, truths)?,
            eba: map,
        })
    }
}

// ---------------------------------------------------------------------------
// gradient check

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a relu kink.
    pub skipped: usize,
}

/// Absolute floor in the relative-error denominator.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

/// Compares analytic gradients with central differences on `coords` randomly chosen
/// parameters. Coordinates whose ±eps perturbation flips any relu are skipped.
pub fn gradient_check(
    params: &GnnParams,
    sample: &TrainExample,
    eps: f64,
    coords: usize,
    seed: u64,
) -> Result<GradCheckReport, GnnError> {
    let (_, grad) = loss_and_gradients(params, &[sample])?;
    let base = forward(params, &sample.input).pattern();
    let loss_at = |p: &GnnParams| -> (f64, bool) {
        let fw = forward(p, &sample.input);
        let r = fw.y - sample.target();
        (r * r, fw.pattern() == base)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.values.len();
    let picks = index::sample(&mut rng, n, coords.min(n)).into_vec();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in picks {
        let orig = probe.values[i];
        probe.values[i] = orig + eps;
        let (plus, same_plus) = loss_at(&probe);
        probe.values[i] = orig - eps;
        let (minus, same_minus) = loss_at(&probe);
        probe.values[i] = orig;
        if !(same_plus && same_minus) {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = grad[i].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        let rel = (grad[i] - numeric).abs() / denom;
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// checkpoint

pub const CHECKPOINT_FORMAT: &str = "infercarbon.checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint: shapes, seed, feature statistics and flattened weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub shape: ModelShape,
    pub seed: u64,
    pub stats: FeatureStats,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn new(predictor: &Predictor, seed: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: predictor.params.shape,
            seed,
            stats: predictor.stats.clone(),
            weights: predictor.params.values.clone(),
            manifest: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    /// Parses a checkpoint and checks it against the current feature widths.
    pub fn from_json(text: &str) -> Result<Self, GnnError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| GnnError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(GnnError::Checkpoint(format!(
                "unsupported container {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.shape.node_width != NODE_WIDTH || ck.shape.global_width != GLOBAL_WIDTH {
            return Err(GnnError::Checkpoint(format!(
                "feature widths {}/{} do not match {}/{}",
                ck.shape.node_width, ck.shape.global_width, NODE_WIDTH, GLOBAL_WIDTH
            )));
        }
        if ck.weights.len() != ck.shape.param_count() {
            return Err(GnnError::Checkpoint(format!(
                "{} weights for a shape needing {}",
                ck.weights.len(),
                ck.shape.param_count()
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), GnnError> {
        std::fs::write(path, self.to_json()).map_err(|e| GnnError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GnnError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GnnError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn predictor(&self) -> Predictor {
        Predictor {
            params: GnnParams {
                shape: self.shape,
                values: self.weights.clone(),
            },
            stats: self.stats.clone(),
        }
    }
}

/// Trained parameters together with the feature statistics they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub params: GnnParams,
    pub stats: FeatureStats,
}

impl Predictor {
    /// Predicted energy in joules.
    pub fn predict_joules(&self, input: &GraphInput) -> Result<f64, GnnError> {
        Ok(model_forward(&self.params, input)?.exp_m1())
    }
}
