//! Contrastive view recommender: past frames are projected, tagged with
//! sinusoidal offset embeddings, and aggregated into a learnable latent
//! slot by pre-norm self-attention. Candidates are scored by cosine
//! similarity and trained with InfoNCE. Row-vector convention throughout:
//! a projection is `x · W` with `W` stored `fan_in × fan_out`.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::instances::PAST_LEN;
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;
const UNIT_TOL: f64 = 1e-4;
const CHECKPOINT_FORMAT: &str = "pseudocam-checkpoint-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 1,
            tau: 0.07,
        }
    }
}

impl ModelConfig {
    pub fn d_hidden(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model < 2 || self.d_model % 2 != 0 {
            return Err(Error::InvalidInput(format!("d_model must be even and >= 2, got {}", self.d_model)));
        }
        if self.n_layers == 0 {
            return Err(Error::InvalidInput("n_layers must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// One resolved instance: raw features of the past frames and candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// `PAST_LEN × d_f`, oldest first.
    pub past: Array2<f64>,
    pub offsets: Vec<usize>,
    /// `k × d_f`.
    pub candidates: Array2<f64>,
    pub gt: usize,
}

impl Example {
    pub fn new(past: &[&[f64]], offsets: Vec<usize>, candidates: &[&[f64]], gt: usize) -> Result<Self> {
        if past.len() != PAST_LEN || offsets.len() != PAST_LEN {
            return Err(Error::InvalidInput(format!(
                "expected {PAST_LEN} past frames, got {} frames and {} offsets",
                past.len(),
                offsets.len()
            )));
        }
        if gt >= candidates.len() {
            return Err(Error::InvalidInput(format!("gt index {gt} out of {} candidates", candidates.len())));
        }
        let d_f = past[0].len();
        if past.iter().chain(candidates).any(|r| r.len() != d_f) {
            return Err(Error::InvalidInput("feature dimensions differ within an instance".into()));
        }
        let rows = |rs: &[&[f64]]| {
            Array2::from_shape_vec((rs.len(), d_f), rs.iter().flat_map(|r| r.iter().copied()).collect())
                .expect("shape checked")
        };
        Ok(Example {
            past: rows(past),
            offsets,
            candidates: rows(candidates),
            gt,
        })
    }

    pub fn k(&self) -> usize {
        self.candidates.nrows()
    }

    pub fn d_f(&self) -> usize {
        self.past.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_scale: Array1<f64>,
    pub ln1_shift: Array1<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub ln2_scale: Array1<f64>,
    pub ln2_shift: Array1<f64>,
    pub w_1: Array2<f64>,
    pub w_2: Array2<f64>,
}

/// Trainable parameters plus the fixed hyperparameters that shape them.
/// Gradients and optimizer moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub d_f: usize,
    pub k: usize,
    pub seed: u64,
    pub config: ModelConfig,
    pub w_in: Array2<f64>,
    pub z: Array1<f64>,
    pub blocks: Vec<Block>,
    pub w_out: Array2<f64>,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

impl ModelParams {
    pub fn init(config: &ModelConfig, d_f: usize, k: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if d_f == 0 || k < 2 {
            return Err(Error::InvalidInput(format!("need d_f >= 1 and k >= 2, got {d_f} and {k}")));
        }
        let d = config.d_model;
        let h = config.d_hidden();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_in = uniform_matrix(&mut rng, d_f, d);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1_scale: Array1::ones(d),
                ln1_shift: Array1::zeros(d),
                w_q: uniform_matrix(&mut rng, d, d),
                w_k: uniform_matrix(&mut rng, d, d),
                w_v: uniform_matrix(&mut rng, d, d),
                w_o: uniform_matrix(&mut rng, d, d),
                ln2_scale: Array1::ones(d),
                ln2_shift: Array1::zeros(d),
                w_1: uniform_matrix(&mut rng, d, h),
                w_2: uniform_matrix(&mut rng, h, d),
            })
            .collect();
        let w_out = uniform_matrix(&mut rng, d, d);
        Ok(ModelParams {
            d_f,
            k,
            seed,
            config: *config,
            w_in,
            z: Array1::zeros(d),
            blocks,
            w_out,
        })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// Names and shapes of every tensor, in serialization order.
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let m = |a: &Array2<f64>| a.shape().to_vec();
        let v = |a: &Array1<f64>| vec![a.len()];
        let mut out = vec![("w_in".to_string(), m(&self.w_in)), ("z".to_string(), v(&self.z))];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend([
                (format!("blocks.{i}.ln1_scale"), v(&b.ln1_scale)),
                (format!("blocks.{i}.ln1_shift"), v(&b.ln1_shift)),
                (format!("blocks.{i}.w_q"), m(&b.w_q)),
                (format!("blocks.{i}.w_k"), m(&b.w_k)),
                (format!("blocks.{i}.w_v"), m(&b.w_v)),
                (format!("blocks.{i}.w_o"), m(&b.w_o)),
                (format!("blocks.{i}.ln2_scale"), v(&b.ln2_scale)),
                (format!("blocks.{i}.ln2_shift"), v(&b.ln2_shift)),
                (format!("blocks.{i}.w_1"), m(&b.w_1)),
                (format!("blocks.{i}.w_2"), m(&b.w_2)),
            ]);
        }
        out.push(("w_out".to_string(), m(&self.w_out)));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.w_in.as_slice().unwrap(), self.z.as_slice().unwrap()];
        for b in &self.blocks {
            out.extend([
                b.ln1_scale.as_slice().unwrap(),
                b.ln1_shift.as_slice().unwrap(),
                b.w_q.as_slice().unwrap(),
                b.w_k.as_slice().unwrap(),
                b.w_v.as_slice().unwrap(),
                b.w_o.as_slice().unwrap(),
                b.ln2_scale.as_slice().unwrap(),
                b.ln2_shift.as_slice().unwrap(),
                b.w_1.as_slice().unwrap(),
                b.w_2.as_slice().unwrap(),
            ]);
        }
        out.push(self.w_out.as_slice().unwrap());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.w_in.as_slice_mut().unwrap(), self.z.as_slice_mut().unwrap()];
        for b in &mut self.blocks {
            out.extend([
                b.ln1_scale.as_slice_mut().unwrap(),
                b.ln1_shift.as_slice_mut().unwrap(),
                b.w_q.as_slice_mut().unwrap(),
                b.w_k.as_slice_mut().unwrap(),
                b.w_v.as_slice_mut().unwrap(),
                b.w_o.as_slice_mut().unwrap(),
                b.ln2_scale.as_slice_mut().unwrap(),
                b.ln2_shift.as_slice_mut().unwrap(),
                b.w_1.as_slice_mut().unwrap(),
                b.w_2.as_slice_mut().unwrap(),
            ]);
        }
        out.push(self.w_out.as_slice_mut().unwrap());
        out
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        if ex.d_f() != self.d_f {
            return Err(Error::InvalidInput(format!("feature dim {} but model expects {}", ex.d_f(), self.d_f)));
        }
        if ex.past.nrows() != PAST_LEN || ex.offsets.len() != PAST_LEN {
            return Err(Error::InvalidInput(format!("expected {PAST_LEN} past frames")));
        }
        if ex.gt >= ex.k() {
            return Err(Error::InvalidInput("gt index out of range".into()));
        }
        Ok(())
    }

    /// `f · W_in + PE(offset)`.
    pub fn encode_frame(&self, f: &[f64], offset: usize) -> Result<Array1<f64>> {
        if f.len() != self.d_f {
            return Err(Error::InvalidInput(format!("feature dim {} but model expects {}", f.len(), self.d_f)));
        }
        Ok(ArrayView1::from(f).dot(&self.w_in) + positional_embedding(offset, self.config.d_model)?)
    }

    /// Aggregates already encoded past frames (`PAST_LEN × d_model`) into a
    /// unit vector.
    pub fn encode_past(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.run_past(inputs)?.p)
    }

    /// Attention matrices of every block for the given encoded inputs.
    pub fn attention_maps(&self, inputs: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        Ok(self.run_past(inputs)?.blocks.into_iter().map(|b| b.attn).collect())
    }

    /// Unit candidate vectors `normalize(f_j · W_in + PE(0))`.
    pub fn encode_candidates(&self, candidates: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.encode_candidates_raw(candidates)?.0)
    }

    fn encode_candidates_raw(&self, candidates: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        if candidates.ncols() != self.d_f {
            return Err(Error::InvalidInput(format!(
                "feature dim {} but model expects {}",
                candidates.ncols(),
                self.d_f
            )));
        }
        let mut c = candidates.dot(&self.w_in) + positional_embedding(0, self.config.d_model)?;
        let mut norms = Vec::with_capacity(c.nrows());
        for mut row in c.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n <= 1e-12 {
                return Err(Error::DegenerateVector(n));
            }
            row /= n;
            norms.push(n);
        }
        Ok((c, norms))
    }

    fn encode_inputs(&self, ex: &Example) -> Result<Array2<f64>> {
        let mut x = ex.past.dot(&self.w_in);
        for (mut row, &o) in x.rows_mut().into_iter().zip(&ex.offsets) {
            row += &positional_embedding(o, self.config.d_model)?;
        }
        Ok(x)
    }

    fn run_past(&self, inputs: ArrayView2<f64>) -> Result<PastTrace> {
        let d = self.config.d_model;
        if inputs.nrows() != PAST_LEN || inputs.ncols() != d {
            return Err(Error::InvalidInput(format!(
                "past encoder expects {PAST_LEN} x {d} inputs, got {} x {}",
                inputs.nrows(),
                inputs.ncols()
            )));
        }
        let mut s = Array2::zeros((PAST_LEN + 1, d));
        s.row_mut(0).assign(&self.z);
        s.slice_mut(s![1.., ..]).assign(&inputs);
        let scale = 1.0 / (d as f64).sqrt();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let ln1 = layer_norm(&s, &b.ln1_scale, &b.ln1_shift);
            let q = ln1.out.dot(&b.w_q);
            let k = ln1.out.dot(&b.w_k);
            let v = ln1.out.dot(&b.w_v);
            let attn = softmax_rows(&(q.dot(&k.t()) * scale));
            let mixed = attn.dot(&v);
            let s1 = &s + &mixed.dot(&b.w_o);
            let ln2 = layer_norm(&s1, &b.ln2_scale, &b.ln2_shift);
            let h = ln2.out.dot(&b.w_1);
            let g = h.mapv(gelu);
            let s2 = &s1 + &g.dot(&b.w_2);
            blocks.push(BlockTrace {
                ln1,
                q,
                k,
                v,
                attn,
                mixed,
                ln2,
                h,
                g,
            });
            s = s2;
        }
        let y = s.row(0).dot(&self.w_out);
        let y_norm = y.dot(&y).sqrt();
        if y_norm <= 1e-12 {
            return Err(Error::DegenerateVector(y_norm));
        }
        let p = &y / y_norm;
        Ok(PastTrace {
            blocks,
            s_out: s,
            y_norm,
            p,
        })
    }

    /// Past feature and unit candidate vectors for an example.
    pub fn embed(&self, ex: &Example) -> Result<(Array1<f64>, Array2<f64>)> {
        self.check_example(ex)?;
        let x = self.encode_inputs(ex)?;
        let p = self.encode_past(x.view())?;
        Ok((p, self.encode_candidates(ex.candidates.view())?))
    }

    /// Similarities `s_j` between the past feature and each candidate.
    pub fn similarities(&self, ex: &Example) -> Result<Array1<f64>> {
        let (p, c) = self.embed(ex)?;
        Ok(c.dot(&p))
    }

    pub fn loss(&self, ex: &Example) -> Result<f64> {
        let (p, c) = self.embed(ex)?;
        Ok(info_nce(p.view(), c.view(), ex.gt, self.config.tau)?.0)
    }

    pub fn predict(&self, ex: &Example) -> Result<usize> {
        let (p, c) = self.embed(ex)?;
        Ok(predict(p.view(), c.view()))
    }

    /// Loss and exact gradients with respect to every trainable tensor.
    pub fn loss_and_grad(&self, ex: &Example) -> Result<(f64, ModelParams)> {
        self.check_example(ex)?;
        let d = self.config.d_model;
        let tau = self.config.tau;
        let x = self.encode_inputs(ex)?;
        let trace = self.run_past(x.view())?;
        let (c, c_norms) = self.encode_candidates_raw(ex.candidates.view())?;
        let (loss, probs) = info_nce(trace.p.view(), c.view(), ex.gt, tau)?;
        let mut grad = self.zeros_like();

        // Scores.
        let mut ds = probs;
        ds[ex.gt] -= 1.0;
        ds /= tau;
        let dp = c.t().dot(&ds);

        // Candidate branch.
        let mut dc_raw = Array2::zeros(c.raw_dim());
        for j in 0..c.nrows() {
            let cj = c.row(j);
            let dcj = &trace.p * ds[j];
            let along = cj.dot(&dcj);
            let g = (&dcj - &(&cj * along)) / c_norms[j];
            dc_raw.row_mut(j).assign(&g);
        }
        grad.w_in += &ex.candidates.t().dot(&dc_raw);

        // Output projection and normalization.
        let along = trace.p.dot(&dp);
        let dy = (&dp - &(&trace.p * along)) / trace.y_norm;
        let s0 = trace.s_out.row(0);
        grad.w_out.assign(&outer(s0, dy.view()));
        let mut ds_seq = Array2::zeros((PAST_LEN + 1, d));
        ds_seq.row_mut(0).assign(&self.w_out.dot(&dy));

        let scale = 1.0 / (d as f64).sqrt();
        for (bi, (b, t)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            let gb = &mut grad.blocks[bi];
            // MLP residual.
            gb.w_2.assign(&t.g.t().dot(&ds_seq));
            let dg = ds_seq.dot(&b.w_2.t());
            let dh = &dg * &t.h.mapv(gelu_grad);
            gb.w_1.assign(&t.ln2.out.t().dot(&dh));
            let dln2 = dh.dot(&b.w_1.t());
            let (dx, dscale, dshift) = layer_norm_backward(&t.ln2, &b.ln2_scale, &dln2);
            gb.ln2_scale.assign(&dscale);
            gb.ln2_shift.assign(&dshift);
            let ds1 = &ds_seq + &dx;

            // Attention residual.
            gb.w_o.assign(&t.mixed.t().dot(&ds1));
            let dmixed = ds1.dot(&b.w_o.t());
            let dattn = dmixed.dot(&t.v.t());
            let dv = t.attn.t().dot(&dmixed);
            let row_dot = (&t.attn * &dattn).sum_axis(Axis(1));
            let mut dlogits = &t.attn * &(&dattn - &row_dot.insert_axis(Axis(1)));
            dlogits *= scale;
            let dq = dlogits.dot(&t.k);
            let dk = dlogits.t().dot(&t.q);
            gb.w_q.assign(&t.ln1.out.t().dot(&dq));
            gb.w_k.assign(&t.ln1.out.t().dot(&dk));
            gb.w_v.assign(&t.ln1.out.t().dot(&dv));
            let dln1 = dq.dot(&b.w_q.t()) + dk.dot(&b.w_k.t()) + dv.dot(&b.w_v.t());
            let (dx, dscale, dshift) = layer_norm_backward(&t.ln1, &b.ln1_scale, &dln1);
            gb.ln1_scale.assign(&dscale);
            gb.ln1_shift.assign(&dshift);
            ds_seq = ds1 + dx;
        }

        grad.z.assign(&ds_seq.row(0));
        grad.w_in += &ex.past.t().dot(&ds_seq.slice(s![1.., ..]));
        Ok((loss, grad))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.to_string(),
            d_f: self.d_f,
            d_model: self.config.d_model,
            d_hidden: self.config.d_hidden(),
            n_layers: self.config.n_layers,
            k: self.k,
            tau: self.config.tau,
            seed: self.seed,
            tensors: self
                .tensor_specs()
                .into_iter()
                .map(|(name, shape)| TensorSpec { name, shape })
                .collect(),
        };
        let mut w = crate::jsonl::create(path)?;
        crate::jsonl::write_line(&mut w, &header)?;
        for t in self.tensors() {
            for x in t {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = crate::jsonl::source_name(path);
        let mut r = crate::jsonl::open(path)?;
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: CheckpointHeader = crate::jsonl::parse_line(&source, 1, line.trim_end())?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::format(&source, 1, format!("unknown checkpoint format {:?}", header.format)));
        }
        let config = ModelConfig {
            d_model: header.d_model,
            n_layers: header.n_layers,
            tau: header.tau,
        };
        if header.d_hidden != config.d_hidden() {
            return Err(Error::format(&source, 1, "d_hidden must be 4 * d_model"));
        }
        let mut params = ModelParams::init(&config, header.d_f, header.k, header.seed)
            .map_err(|e| Error::format(&source, 1, e.to_string()))?;
        let expected: Vec<TensorSpec> = params
            .tensor_specs()
            .into_iter()
            .map(|(name, shape)| TensorSpec { name, shape })
            .collect();
        if header.tensors != expected {
            return Err(Error::format(&source, 1, "tensor list does not match the declared shapes"));
        }
        let mut buf = [0u8; 8];
        for t in params.tensors_mut() {
            for x in t.iter_mut() {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::format(&source, 0, "checkpoint data is truncated"))?;
                *x = f64::from_le_bytes(buf);
            }
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::format(&source, 0, "trailing bytes after tensor data"));
        }
        if !params.is_finite() {
            return Err(Error::format(&source, 0, "checkpoint contains non-finite values"));
        }
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    format: String,
    d_f: usize,
    d_model: usize,
    d_hidden: usize,
    n_layers: usize,
    k: usize,
    tau: f64,
    seed: u64,
    tensors: Vec<TensorSpec>,
}

struct LnTrace {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    out: Array2<f64>,
}

struct BlockTrace {
    ln1: LnTrace,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    mixed: Array2<f64>,
    ln2: LnTrace,
    h: Array2<f64>,
    g: Array2<f64>,
}

struct PastTrace {
    blocks: Vec<BlockTrace>,
    s_out: Array2<f64>,
    y_norm: f64,
    p: Array1<f64>,
}

/// `PE[2i] = sin(offset / 10000^(2i/d))`, `PE[2i+1]` the matching cosine.
pub fn positional_embedding(offset: usize, d_model: usize) -> Result<Array1<f64>> {
    if d_model < 2 || d_model % 2 != 0 {
        return Err(Error::InvalidInput(format!("d_model must be even and >= 2, got {d_model}")));
    }
    let mut pe = Array1::zeros(d_model);
    for i in 0..d_model / 2 {
        let angle = offset as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
        pe[2 * i] = angle.sin();
        pe[2 * i + 1] = angle.cos();
    }
    Ok(pe)
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let t = (c * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - m).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

fn softmax(v: ArrayView1<f64>) -> Array1<f64> {
    let m = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let e = v.mapv(|x| (x - m).exp());
    let z = e.sum();
    e / z
}

fn layer_norm(x: &Array2<f64>, scale: &Array1<f64>, shift: &Array1<f64>) -> LnTrace {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (i, mut row) in xhat.rows_mut().into_iter().enumerate() {
        let mu = row.sum() / n;
        row -= mu;
        let var = row.dot(&row) / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row *= is;
        inv_std[i] = is;
    }
    let out = &xhat * scale + shift;
    LnTrace { xhat, inv_std, out }
}

fn layer_norm_backward(t: &LnTrace, scale: &Array1<f64>, dout: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dscale = (dout * &t.xhat).sum_axis(Axis(0));
    let dshift = dout.sum_axis(Axis(0));
    let dxhat = dout * scale;
    let n = dout.ncols() as f64;
    let mut dx = Array2::zeros(dout.raw_dim());
    for i in 0..dout.nrows() {
        let g = dxhat.row(i);
        let xh = t.xhat.row(i);
        let mean_g = g.sum() / n;
        let mean_gx = g.dot(&xh) / n;
        let row = (&g - mean_g - &(&xh * mean_gx)) * t.inv_std[i];
        dx.row_mut(i).assign(&row);
    }
    (dx, dscale, dshift)
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    a.insert_axis(Axis(1)).dot(&b.insert_axis(Axis(0)))
}

fn check_unit(v: ArrayView1<f64>, what: &str) -> Result<()> {
    let n = v.dot(&v).sqrt();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidInput(format!("{what} has norm {n}, expected a unit vector")));
    }
    Ok(())
}

/// InfoNCE over cosine similarities: returns the loss and the softmax
/// probabilities of `s / tau`.
pub fn info_nce(p: ArrayView1<f64>, candidates: ArrayView2<f64>, gt: usize, tau: f64) -> Result<(f64, Array1<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    if gt >= candidates.nrows() {
        return Err(Error::InvalidInput(format!("gt index {gt} out of {} candidates", candidates.nrows())));
    }
    check_unit(p, "past feature")?;
    for c in candidates.rows() {
        check_unit(c, "candidate")?;
    }
    Ok(info_nce_scores(candidates.dot(&p).view(), gt, tau))
}

/// InfoNCE from raw similarities.
pub fn info_nce_scores(s: ArrayView1<f64>, gt: usize, tau: f64) -> (f64, Array1<f64>) {
    let logits = s.mapv(|x| x / tau);
    let m = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = m + logits.mapv(|x| (x - m).exp()).sum().ln();
    let loss = (lse - logits[gt]).max(0.0);
    (loss, softmax(logits.view()))
}

/// Index of the most similar candidate; ties go to the lowest index.
pub fn predict(p: ArrayView1<f64>, candidates: ArrayView2<f64>) -> usize {
    argmax(candidates.dot(&p).view())
}

pub fn argmax(s: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in s.iter().enumerate() {
        if v > s[best] {
            best = j;
        }
    }
    best
}
