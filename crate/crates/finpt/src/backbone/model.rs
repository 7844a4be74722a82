//! The toy transformer backbone plus classifier head, with hand-written
//! forward and backward passes over named flat parameter arrays.
//!
//! Pre-LN blocks: x += Attn(LN(x)); x += FFN(LN(x)). The encoder variant
//! attends bidirectionally over unmasked positions, the decoder causally.
//! Hidden states are computed for real positions only; pad rows of the
//! public t×d output are zero, which makes padding invariance exact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::vocab::Vocab;
use super::{Arch, BackboneOutput, BackboneSpec, Prediction, TokenizedProfile, TrainablePolicy};
use crate::loss::{weighted_bce, weighted_bce_grad};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;
/// FFN hidden width as a multiple of the model dimension.
const FF_MULT: usize = 2;
const INIT_STD: f64 = 0.02;

/// One named parameter tensor, stored flat with its shape recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// All model parameters in a fixed canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn from_params(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.params.iter()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Zeroed gradient buffers matching every parameter.
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.data.len()]).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockIds {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct HeadIds {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    tok_emb: usize,
    pos_emb: usize,
    blocks: Vec<BlockIds>,
    head: HeadIds,
}

/// Canonical (name, shape) list for a model of the given dimensions.
fn param_plan(spec: &BackboneSpec, max_len: usize) -> Vec<(String, Vec<usize>)> {
    let d = spec.hidden_dim;
    let ff = FF_MULT * d;
    let mut plan = vec![
        ("tok_emb".to_string(), vec![spec.vocab_size, d]),
        ("pos_emb".to_string(), vec![max_len, d]),
    ];
    for i in 0..spec.layers {
        let p = |s: &str| format!("block{i}.{s}");
        plan.extend([
            (p("ln1.gamma"), vec![d]),
            (p("ln1.beta"), vec![d]),
            (p("attn.wq"), vec![d, d]),
            (p("attn.bq"), vec![d]),
            (p("attn.wk"), vec![d, d]),
            (p("attn.bk"), vec![d]),
            (p("attn.wv"), vec![d, d]),
            (p("attn.bv"), vec![d]),
            (p("attn.wo"), vec![d, d]),
            (p("attn.bo"), vec![d]),
            (p("ln2.gamma"), vec![d]),
            (p("ln2.beta"), vec![d]),
            (p("ffn.w1"), vec![ff, d]),
            (p("ffn.b1"), vec![ff]),
            (p("ffn.w2"), vec![d, ff]),
            (p("ffn.b2"), vec![d]),
        ]);
    }
    plan.extend([
        ("head.fc1.w".to_string(), vec![d, d]),
        ("head.fc1.b".to_string(), vec![d]),
        ("head.fc2.w".to_string(), vec![2, d]),
        ("head.fc2.b".to_string(), vec![2]),
    ]);
    plan
}

fn layout_from_plan(spec: &BackboneSpec) -> Layout {
    // Positions follow param_plan order: 2 embeddings, 16 ids per block, 4 head ids.
    let mut next = 2;
    let mut blocks = Vec::with_capacity(spec.layers);
    for _ in 0..spec.layers {
        blocks.push(BlockIds {
            ln1_g: next,
            ln1_b: next + 1,
            wq: next + 2,
            bq: next + 3,
            wk: next + 4,
            bk: next + 5,
            wv: next + 6,
            bv: next + 7,
            wo: next + 8,
            bo: next + 9,
            ln2_g: next + 10,
            ln2_b: next + 11,
            w1: next + 12,
            b1: next + 13,
            w2: next + 14,
            b2: next + 15,
        });
        next += 16;
    }
    let head = HeadIds { w1: next, b1: next + 1, w2: next + 2, b2: next + 3 };
    Layout { tok_emb: 0, pos_emb: 1, blocks, head }
}

/// Toy backbone plus classifier head over a corpus vocabulary.
pub struct Model {
    spec: BackboneSpec,
    max_len: usize,
    vocab: Vocab,
    params: ParamSet,
    layout: Layout,
}

impl Model {
    /// Fresh model with seeded Gaussian init. Layer norms start at identity
    /// and the final classifier layer at zero, so the initial prediction is
    /// exactly 0.5 for every input.
    pub fn init(mut spec: BackboneSpec, vocab: Vocab, max_len: usize, seed: u64) -> Result<Self> {
        spec.vocab_size = vocab.size();
        spec.validate()?;
        if max_len == 0 {
            return Err(Error::Backbone("max_len must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid distribution");
        let params = param_plan(&spec, max_len)
            .into_iter()
            .map(|(name, shape)| {
                let len = shape.iter().product();
                let leaf = name.rsplit('.').next().unwrap_or(&name);
                let data = if leaf == "gamma" {
                    vec![1.0; len]
                } else if leaf.starts_with('b') || name.starts_with("head.fc2") {
                    // Biases, LN betas, and the final classifier layer start
                    // at zero; the initial prediction is exactly 0.5.
                    vec![0.0; len]
                } else {
                    (0..len).map(|_| normal.sample(&mut rng)).collect()
                };
                Param { name, shape, data }
            })
            .collect();
        let layout = layout_from_plan(&spec);
        Ok(Self { spec, max_len, vocab, params: ParamSet { params }, layout })
    }

    /// Rebuilds a model from stored parameters, verifying names and shapes
    /// against the canonical plan.
    pub fn from_params(
        spec: BackboneSpec,
        vocab: Vocab,
        max_len: usize,
        params: ParamSet,
    ) -> Result<Self> {
        spec.validate()?;
        if spec.vocab_size != vocab.size() {
            return Err(Error::Backbone(format!(
                "spec vocab_size {} disagrees with vocabulary size {}",
                spec.vocab_size,
                vocab.size()
            )));
        }
        let plan = param_plan(&spec, max_len);
        if plan.len() != params.len() {
            return Err(Error::Backbone(format!(
                "expected {} parameters, got {}",
                plan.len(),
                params.len()
            )));
        }
        for ((name, shape), param) in plan.iter().zip(params.iter()) {
            if name != &param.name || shape != &param.shape {
                return Err(Error::Backbone(format!(
                    "parameter mismatch: expected {name} {shape:?}, got {} {:?}",
                    param.name, param.shape
                )));
            }
            let len: usize = shape.iter().product();
            if param.data.len() != len {
                return Err(Error::Backbone(format!(
                    "parameter {name}: {} values for shape {shape:?}",
                    param.data.len()
                )));
            }
        }
        let layout = layout_from_plan(&spec);
        Ok(Self { spec, max_len, vocab, params, layout })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Trainable/frozen partition by policy, aligned with parameter order.
    /// The classifier head is trainable under every policy.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let last_block = format!("block{}.", self.spec.layers - 1);
        self.params
            .iter()
            .map(|p| match self.spec.trainable_policy {
                TrainablePolicy::All => true,
                TrainablePolicy::LastBlock => {
                    p.name.starts_with("head.") || p.name.starts_with(&last_block)
                }
            })
            .collect()
    }

    fn data(&self, id: usize) -> &[f64] {
        &self.params.get(id).data
    }

    /// Full forward pass: t×d hidden states (pad rows zero) plus the pooled
    /// vector for the model's architecture.
    pub fn forward(&self, tokens: &TokenizedProfile) -> Result<BackboneOutput> {
        let trace = self.forward_traced(tokens)?;
        let d = self.spec.hidden_dim;
        let t = tokens.len();
        let mut hidden = vec![0.0; t * d];
        hidden[..trace.n * d].copy_from_slice(&trace.hidden);
        Ok(BackboneOutput { hidden, t, d, pooled: trace.pooled })
    }

    /// Pooled forward plus the classifier head.
    pub fn predict(&self, tokens: &TokenizedProfile) -> Result<Prediction> {
        let trace = self.forward_traced(tokens)?;
        Ok(Prediction { logits: trace.logits, prob_positive: trace.prob, label: trace.label() })
    }

    /// Feed-forward head over a pooled vector: d -> d (GELU) -> 2 logits.
    pub fn classify(&self, pooled: &[f64]) -> Result<Prediction> {
        let d = self.spec.hidden_dim;
        if pooled.len() != d {
            return Err(Error::Backbone(format!(
                "classify: pooled vector has {} entries, expected {d}",
                pooled.len()
            )));
        }
        if pooled.iter().any(|v| !v.is_finite()) {
            return Err(Error::Backbone("classify: non-finite pooled input".into()));
        }
        let (_, _, logits, prob) = self.head_forward(pooled);
        Ok(Prediction { logits, prob_positive: prob, label: u8::from(prob >= 0.5) })
    }

    fn head_forward(&self, pooled: &[f64]) -> (Vec<f64>, Vec<f64>, [f64; 2], f64) {
        let d = self.spec.hidden_dim;
        let h = &self.layout.head;
        let z = linear_fwd(pooled, 1, d, self.data(h.w1), self.data(h.b1), d);
        let g: Vec<f64> = z.iter().map(|&v| gelu(v)).collect();
        let logits_v = linear_fwd(&g, 1, d, self.data(h.w2), self.data(h.b2), 2);
        let logits = [logits_v[0], logits_v[1]];
        let prob = prob_positive(logits);
        (z, g, logits, prob)
    }

    fn forward_traced(&self, tokens: &TokenizedProfile) -> Result<Trace> {
        let d = self.spec.hidden_dim;
        let t = tokens.len();
        if t > self.max_len {
            return Err(Error::Backbone(format!(
                "sequence length {t} exceeds model max_len {}",
                self.max_len
            )));
        }
        for &id in tokens.token_ids() {
            if id as usize >= self.spec.vocab_size {
                return Err(Error::Backbone(format!(
                    "token id {id} out of vocabulary range {}",
                    self.spec.vocab_size
                )));
            }
        }
        let n = tokens.real_len();
        let ids = tokens.token_ids();

        // Embeddings over real positions only.
        let tok_emb = self.data(self.layout.tok_emb);
        let pos_emb = self.data(self.layout.pos_emb);
        let mut x = vec![0.0; n * d];
        for i in 0..n {
            let id = ids[i] as usize;
            for c in 0..d {
                x[i * d + c] = tok_emb[id * d + c] + pos_emb[i * d + c];
            }
        }

        let mut blocks = Vec::with_capacity(self.spec.layers);
        for ids in &self.layout.blocks {
            let (x_out, bt) = self.block_forward(&x, n, ids);
            blocks.push(bt);
            x = x_out;
        }

        let pooled = pool_real(&x, n, d, self.spec.arch);
        let (head_z, head_g, logits, prob) = self.head_forward(&pooled);
        Ok(Trace {
            ids: ids.to_vec(),
            n,
            hidden: x,
            pooled,
            head_z,
            head_g,
            logits,
            prob,
            blocks,
        })
    }

    fn block_forward(&self, x_in: &[f64], n: usize, ids: &BlockIds) -> (Vec<f64>, BlockTrace) {
        let d = self.spec.hidden_dim;
        let heads = self.spec.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let (a, xhat1, rstd1) =
            layernorm_fwd(x_in, n, d, self.data(ids.ln1_g), self.data(ids.ln1_b));
        let q = linear_fwd(&a, n, d, self.data(ids.wq), self.data(ids.bq), d);
        let k = linear_fwd(&a, n, d, self.data(ids.wk), self.data(ids.bk), d);
        let v = linear_fwd(&a, n, d, self.data(ids.wv), self.data(ids.bv), d);

        let mut attn = vec![0.0; heads * n * n];
        let mut ho = vec![0.0; n * d];
        let mut scores = vec![0.0; n];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let scope = match self.spec.arch {
                    Arch::Encoder => n,
                    Arch::Decoder => i + 1,
                };
                for (j, s) in scores.iter_mut().enumerate().take(scope) {
                    let qi = &q[i * d + off..i * d + off + dh];
                    let kj = &k[j * d + off..j * d + off + dh];
                    *s = dot(qi, kj) * scale;
                }
                softmax_inplace(&mut scores[..scope]);
                let row = &mut attn[h * n * n + i * n..h * n * n + i * n + scope];
                row.copy_from_slice(&scores[..scope]);
                for c in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..scope {
                        acc += row[j] * v[j * d + off + c];
                    }
                    ho[i * d + off + c] = acc;
                }
            }
        }

        let attn_out = linear_fwd(&ho, n, d, self.data(ids.wo), self.data(ids.bo), d);
        let mut x_mid = x_in.to_vec();
        for (m, ao) in x_mid.iter_mut().zip(&attn_out) {
            *m += ao;
        }

        let (b, xhat2, rstd2) =
            layernorm_fwd(&x_mid, n, d, self.data(ids.ln2_g), self.data(ids.ln2_b));
        let ff = FF_MULT * d;
        let z1 = linear_fwd(&b, n, d, self.data(ids.w1), self.data(ids.b1), ff);
        let g: Vec<f64> = z1.iter().map(|&z| gelu(z)).collect();
        let f = linear_fwd(&g, n, ff, self.data(ids.w2), self.data(ids.b2), d);
        let mut x_out = x_mid.clone();
        for (o, fi) in x_out.iter_mut().zip(&f) {
            *o += fi;
        }

        let bt = BlockTrace { xhat1, rstd1, a, q, k, v, attn, ho, xhat2, rstd2, b, z1, g };
        (x_out, bt)
    }

    /// Forward pass over a batch, returning the weighted BCE loss and the
    /// per-example positive probabilities.
    pub fn batch_loss(
        &self,
        batch: &[TokenizedProfile],
        labels: &[u8],
        w_pos: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let mut preds = Vec::with_capacity(batch.len());
        for tokens in batch {
            preds.push(self.forward_traced(tokens)?.prob);
        }
        let loss = weighted_bce(&preds, labels, w_pos)?;
        Ok((loss, preds))
    }

    /// Loss plus analytic gradients of the weighted BCE with respect to all
    /// parameters, accumulated into `grads` (one buffer per parameter).
    pub fn batch_loss_and_grads(
        &self,
        batch: &[TokenizedProfile],
        labels: &[u8],
        w_pos: f64,
        grads: &mut [Vec<f64>],
    ) -> Result<(f64, Vec<f64>)> {
        assert_eq!(grads.len(), self.params.len());
        let mut traces = Vec::with_capacity(batch.len());
        for tokens in batch {
            traces.push(self.forward_traced(tokens)?);
        }
        let preds: Vec<f64> = traces.iter().map(|tr| tr.prob).collect();
        let loss = weighted_bce(&preds, labels, w_pos)?;
        let dpreds = weighted_bce_grad(&preds, labels, w_pos)?;
        for (trace, dprob) in traces.iter().zip(dpreds) {
            self.backward(trace, dprob, grads);
        }
        Ok((loss, preds))
    }

    /// Predictions for a batch of tokenized profiles.
    pub fn predict_batch(&self, batch: &[TokenizedProfile]) -> Result<Vec<Prediction>> {
        batch.iter().map(|tokens| self.predict(tokens)).collect()
    }

    fn backward(&self, trace: &Trace, dprob: f64, grads: &mut [Vec<f64>]) {
        let d = self.spec.hidden_dim;
        let n = trace.n;
        let h = &self.layout.head;

        // Softmax over two logits: dprob/dz1 = p(1-p), dprob/dz0 = -p(1-p).
        let s = dprob * trace.prob * (1.0 - trace.prob);
        let dlogits = [-s, s];

        // Head fc2.
        let mut dg = vec![0.0; d];
        {
            let w2 = self.data(h.w2);
            for c in 0..2 {
                for j in 0..d {
                    grads[h.w2][c * d + j] += dlogits[c] * trace.head_g[j];
                    dg[j] += dlogits[c] * w2[c * d + j];
                }
                grads[h.b2][c] += dlogits[c];
            }
        }
        // GELU + fc1.
        let dz: Vec<f64> = dg
            .iter()
            .zip(&trace.head_z)
            .map(|(&dgj, &zj)| dgj * gelu_prime(zj))
            .collect();
        let mut dpooled = vec![0.0; d];
        {
            let w1 = self.data(h.w1);
            for j in 0..d {
                for c in 0..d {
                    grads[h.w1][j * d + c] += dz[j] * trace.pooled[c];
                    dpooled[c] += dz[j] * w1[j * d + c];
                }
                grads[h.b1][j] += dz[j];
            }
        }

        // Pooling.
        let mut dx = vec![0.0; n * d];
        match self.spec.arch {
            Arch::Encoder => {
                let inv = 1.0 / n as f64;
                for i in 0..n {
                    for c in 0..d {
                        dx[i * d + c] = dpooled[c] * inv;
                    }
                }
            }
            Arch::Decoder => {
                dx[(n - 1) * d..n * d].copy_from_slice(&dpooled);
            }
        }

        for (ids, bt) in self.layout.blocks.iter().zip(&trace.blocks).rev() {
            dx = self.block_backward(&dx, n, ids, bt, grads);
        }

        // Embeddings.
        for i in 0..n {
            let id = trace.ids[i] as usize;
            for c in 0..d {
                grads[self.layout.tok_emb][id * d + c] += dx[i * d + c];
                grads[self.layout.pos_emb][i * d + c] += dx[i * d + c];
            }
        }
    }

    fn block_backward(
        &self,
        dx_out: &[f64],
        n: usize,
        ids: &BlockIds,
        bt: &BlockTrace,
        grads: &mut [Vec<f64>],
    ) -> Vec<f64> {
        let d = self.spec.hidden_dim;
        let ff = FF_MULT * d;
        let heads = self.spec.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // x_out = x_mid + f(LN2(x_mid)): residual splits the gradient.
        let mut dx_mid = dx_out.to_vec();
        let df = dx_out;

        // FFN second linear.
        let mut dgelu = vec![0.0; n * ff];
        {
            let w2 = self.data(ids.w2);
            for i in 0..n {
                for c in 0..d {
                    let dfi = df[i * d + c];
                    grads[ids.b2][c] += dfi;
                    for j in 0..ff {
                        grads[ids.w2][c * ff + j] += dfi * bt.g[i * ff + j];
                        dgelu[i * ff + j] += dfi * w2[c * ff + j];
                    }
                }
            }
        }
        // GELU and first linear.
        let mut dz1 = vec![0.0; n * ff];
        for (idx, dz) in dz1.iter_mut().enumerate() {
            *dz = dgelu[idx] * gelu_prime(bt.z1[idx]);
        }
        let mut db_rows = vec![0.0; n * d];
        {
            let w1 = self.data(ids.w1);
            for i in 0..n {
                for j in 0..ff {
                    let dzij = dz1[i * ff + j];
                    grads[ids.b1][j] += dzij;
                    for c in 0..d {
                        grads[ids.w1][j * d + c] += dzij * bt.b[i * d + c];
                        db_rows[i * d + c] += dzij * w1[j * d + c];
                    }
                }
            }
        }
        // LN2.
        layernorm_bwd(
            &db_rows,
            &bt.xhat2,
            &bt.rstd2,
            self.data(ids.ln2_g),
            n,
            d,
            &mut grads[ids.ln2_g],
            &mut grads[ids.ln2_b],
            &mut dx_mid,
        );

        // x_mid = x_in + attn_out.
        let mut dx_in = dx_mid.clone();
        let dattn_out = &dx_mid;

        // Output projection.
        let mut dho = vec![0.0; n * d];
        {
            let wo = self.data(ids.wo);
            for i in 0..n {
                for c in 0..d {
                    let dai = dattn_out[i * d + c];
                    grads[ids.bo][c] += dai;
                    for j in 0..d {
                        grads[ids.wo][c * d + j] += dai * bt.ho[i * d + j];
                        dho[i * d + j] += dai * wo[c * d + j];
                    }
                }
            }
        }

        // Attention core.
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut da = vec![0.0; n];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let scope = match self.spec.arch {
                    Arch::Encoder => n,
                    Arch::Decoder => i + 1,
                };
                let row = &bt.attn[h * n * n + i * n..h * n * n + i * n + scope];
                let dctx = &dho[i * d + off..i * d + off + dh];
                for j in 0..scope {
                    let vj = &bt.v[j * d + off..j * d + off + dh];
                    da[j] = dot(dctx, vj);
                    for c in 0..dh {
                        dv[j * d + off + c] += row[j] * dctx[c];
                    }
                }
                let sum: f64 = row.iter().zip(&da[..scope]).map(|(&a, &g)| a * g).sum();
                for j in 0..scope {
                    let dscore = row[j] * (da[j] - sum) * scale;
                    for c in 0..dh {
                        dq[i * d + off + c] += dscore * bt.k[j * d + off + c];
                        dk[j * d + off + c] += dscore * bt.q[i * d + off + c];
                    }
                }
            }
        }

        // QKV projections back to the LN1 output.
        let mut da_rows = vec![0.0; n * d];
        for (dyy, w_id, b_id) in [(&dq, ids.wq, ids.bq), (&dk, ids.wk, ids.bk), (&dv, ids.wv, ids.bv)]
        {
            let w = self.data(w_id);
            for i in 0..n {
                for o in 0..d {
                    let dyo = dyy[i * d + o];
                    grads[b_id][o] += dyo;
                    for c in 0..d {
                        grads[w_id][o * d + c] += dyo * bt.a[i * d + c];
                        da_rows[i * d + c] += dyo * w[o * d + c];
                    }
                }
            }
        }
        // LN1.
        layernorm_bwd(
            &da_rows,
            &bt.xhat1,
            &bt.rstd1,
            self.data(ids.ln1_g),
            n,
            d,
            &mut grads[ids.ln1_g],
            &mut grads[ids.ln1_b],
            &mut dx_in,
        );
        dx_in
    }
}

struct BlockTrace {
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    ho: Vec<f64>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    b: Vec<f64>,
    z1: Vec<f64>,
    g: Vec<f64>,
}

struct Trace {
    ids: Vec<u32>,
    n: usize,
    hidden: Vec<f64>,
    pooled: Vec<f64>,
    head_z: Vec<f64>,
    head_g: Vec<f64>,
    logits: [f64; 2],
    prob: f64,
    blocks: Vec<BlockTrace>,
}

impl Trace {
    fn label(&self) -> u8 {
        u8::from(self.prob >= 0.5)
    }
}

fn pool_real(x: &[f64], n: usize, d: usize, arch: Arch) -> Vec<f64> {
    match arch {
        Arch::Encoder => {
            let mut out = vec![0.0; d];
            for i in 0..n {
                for (o, h) in out.iter_mut().zip(&x[i * d..(i + 1) * d]) {
                    *o += h;
                }
            }
            let inv = 1.0 / n as f64;
            for o in &mut out {
                *o *= inv;
            }
            out
        }
        Arch::Decoder => x[(n - 1) * d..n * d].to_vec(),
    }
}

/// Positive-class probability from two logits, shift-invariant.
pub fn prob_positive(logits: [f64; 2]) -> f64 {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    e1 / (e0 + e1)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// y[i] = W·x[i] + b for each of n rows; W is (dout × din) row-major.
fn linear_fwd(x: &[f64], n: usize, din: usize, w: &[f64], b: &[f64], dout: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * dout];
    for i in 0..n {
        let xi = &x[i * din..(i + 1) * din];
        for o in 0..dout {
            y[i * dout + o] = dot(&w[o * din..(o + 1) * din], xi) + b[o];
        }
    }
    y
}

fn layernorm_fwd(
    x: &[f64],
    n: usize,
    d: usize,
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for c in 0..d {
            let xh = (row[c] - mean) * r;
            xhat[i * d + c] = xh;
            y[i * d + c] = gamma[c] * xh + beta[c];
        }
    }
    (y, xhat, rstd)
}

#[allow(clippy::too_many_arguments)]
fn layernorm_bwd(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gamma: &[f64],
    n: usize,
    d: usize,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    dx: &mut [f64],
) {
    let inv_d = 1.0 / d as f64;
    for i in 0..n {
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for c in 0..d {
            let idx = i * d + c;
            dgamma[c] += dy[idx] * xhat[idx];
            dbeta[c] += dy[idx];
            let dxhat = dy[idx] * gamma[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat[idx];
        }
        for c in 0..d {
            let idx = i * d + c;
            let dxhat = dy[idx] * gamma[c];
            dx[idx] +=
                rstd[i] * (dxhat - inv_d * sum_dxhat - xhat[idx] * inv_d * sum_dxhat_xhat);
        }
    }
}

fn softmax_inplace(scores: &mut [f64]) {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - m).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

const GELU_C: f64 = 0.797884560802865; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::pool;
    use rand::Rng;

    fn tiny_model(arch: Arch) -> Model {
        let vocab = Vocab::build(["the quick brown fox jumps over lazy dog again and again"]);
        let spec = BackboneSpec {
            arch,
            hidden_dim: 8,
            layers: 2,
            heads: 2,
            vocab_size: 0,
            trainable_policy: TrainablePolicy::All,
        };
        Model::init(spec, vocab, 16, 7).unwrap()
    }

    fn randomize(model: &mut Model, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..model.params().len() {
            for v in &mut model.params_mut().get_mut(i).data {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }

    #[test]
    fn forward_shapes_and_pool_consistency() {
        for arch in [Arch::Encoder, Arch::Decoder] {
            let model = tiny_model(arch);
            let tp = model.vocab().tokenize("the quick brown fox", 8).unwrap();
            let out = model.forward(&tp).unwrap();
            assert_eq!(out.t, 8);
            assert_eq!(out.d, 8);
            assert_eq!(out.hidden.len(), 64);
            let pooled = pool(&out.hidden, out.d, tp.mask(), arch).unwrap();
            for (a, b) in pooled.iter().zip(&out.pooled) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn padding_never_changes_real_rows_or_pooling() {
        for arch in [Arch::Encoder, Arch::Decoder] {
            let model = tiny_model(arch);
            let short = model.vocab().tokenize("lazy dog jumps", 3).unwrap();
            let padded = short.with_extra_padding(5, crate::backbone::EOS_ID);
            let out_short = model.forward(&short).unwrap();
            let out_padded = model.forward(&padded).unwrap();
            for i in 0..3 {
                assert_eq!(out_short.hidden_row(i), out_padded.hidden_row(i));
            }
            for (a, b) in out_short.pooled.iter().zip(&out_padded.pooled) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decoder_causality() {
        let model = tiny_model(Arch::Decoder);
        let base = model.vocab().tokenize("the quick brown fox jumps", 5).unwrap();
        let out_base = model.forward(&base).unwrap();
        // Change the token at position 3; rows 0..3 must not move.
        let mut ids = base.token_ids().to_vec();
        ids[3] = model.vocab().id_of("dog");
        let changed = TokenizedProfile::new(ids, base.mask().to_vec()).unwrap();
        let out_changed = model.forward(&changed).unwrap();
        for i in 0..3 {
            assert_eq!(out_base.hidden_row(i), out_changed.hidden_row(i));
        }
        assert_ne!(out_base.hidden_row(3), out_changed.hidden_row(3));
    }

    #[test]
    fn encoder_is_bidirectional() {
        let model = tiny_model(Arch::Encoder);
        let base = model.vocab().tokenize("the quick brown fox jumps", 5).unwrap();
        let mut ids = base.token_ids().to_vec();
        ids[4] = model.vocab().id_of("dog");
        let changed = TokenizedProfile::new(ids, base.mask().to_vec()).unwrap();
        let a = model.forward(&base).unwrap();
        let b = model.forward(&changed).unwrap();
        assert_ne!(a.hidden_row(0), b.hidden_row(0), "early rows must see late tokens");
    }

    #[test]
    fn classify_known_values() {
        let model = tiny_model(Arch::Encoder);
        assert_eq!(prob_positive([0.0, 0.0]), 0.5);
        let p = prob_positive([-3.0, 3.0]);
        assert!((p - 0.9975273768433653).abs() < 1e-12);
        // Shift invariance.
        assert!((prob_positive([1.0, 2.0]) - prob_positive([101.0, 102.0])).abs() < 1e-12);

        let pred = model.classify(&vec![0.0; 8]).unwrap();
        assert_eq!(pred.prob_positive, 0.5);
        assert_eq!(pred.label, 1, "ties map to the positive label");

        assert!(model.classify(&vec![f64::NAN; 8]).is_err());
        assert!(model.classify(&vec![0.0; 5]).is_err());
    }

    #[test]
    fn forward_rejects_out_of_range_ids() {
        let model = tiny_model(Arch::Encoder);
        let big = model.spec().vocab_size as u32 + 3;
        let tp = TokenizedProfile::new(vec![big, 0], vec![1, 0]).unwrap();
        assert!(model.forward(&tp).is_err());
    }

    #[test]
    fn select_trainable_partition() {
        let mut model = tiny_model(Arch::Decoder);
        let all = model.trainable_mask();
        assert!(all.iter().all(|&t| t), "policy all trains everything");

        model.spec.trainable_policy = TrainablePolicy::LastBlock;
        let mask = model.trainable_mask();
        for (param, &trainable) in model.params().iter().zip(&mask) {
            let expect = param.name.starts_with("block1.") || param.name.starts_with("head.");
            assert_eq!(trainable, expect, "{}", param.name);
        }
        // Embeddings and block 0 frozen.
        assert!(!mask[0] && !mask[1]);
    }

    #[test]
    fn analytic_gradients_match_finite_differences_small() {
        for arch in [Arch::Encoder, Arch::Decoder] {
            let mut model = tiny_model(arch);
            randomize(&mut model, 99);
            let batch = vec![
                model.vocab().tokenize("the quick brown fox", 6).unwrap(),
                model.vocab().tokenize("lazy dog", 6).unwrap(),
            ];
            let labels = [1u8, 0];
            let w_pos = 3.0;
            let mut grads = model.params().zero_grads();
            model.batch_loss_and_grads(&batch, &labels, w_pos, &mut grads).unwrap();

            let h = 1e-5;
            let mut worst = 0.0f64;
            for pi in 0..model.params().len() {
                for vi in 0..model.params().get(pi).data.len() {
                    let orig = model.params().get(pi).data[vi];
                    model.params_mut().get_mut(pi).data[vi] = orig + h;
                    let (lp, _) = model.batch_loss(&batch, &labels, w_pos).unwrap();
                    model.params_mut().get_mut(pi).data[vi] = orig - h;
                    let (lm, _) = model.batch_loss(&batch, &labels, w_pos).unwrap();
                    model.params_mut().get_mut(pi).data[vi] = orig;
                    let fd = (lp - lm) / (2.0 * h);
                    let an = grads[pi][vi];
                    let denom = an.abs().max(fd.abs());
                    if denom > 1e-10 {
                        worst = worst.max((an - fd).abs() / denom);
                    }
                }
            }
            assert!(worst < 1e-3, "{arch:?}: max relative error {worst}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let model = tiny_model(Arch::Decoder);
        let tp = model.vocab().tokenize("fox jumps over the dog", 8).unwrap();
        let a = model.predict(&tp).unwrap();
        let b = model.predict(&tp).unwrap();
        assert_eq!(a, b);
    }
}
