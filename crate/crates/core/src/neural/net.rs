//! Forward/backward math for the transformer predictor.
//!
//! Parameters live in one flat `Vec<f64>`; a [`Layout`] maps named arrays
//! to ranges so the same storage serves matrix views here, elementwise
//! Adam updates, finite-difference probing, and checkpoint io.

use std::collections::HashMap;
use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use super::ModelConfig;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

/// Named arrays packed back to back into one flat buffer.
#[derive(Debug, Clone)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    index: HashMap<String, usize>,
    total: usize,
}

impl Layout {
    pub fn build(config: &ModelConfig) -> Layout {
        let d = config.embed_size;
        let mut entries = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, shape: Vec<usize>, offset: &mut usize| {
            let len: usize = shape.iter().product();
            entries.push(LayoutEntry { name, shape, offset: *offset });
            *offset += len;
        };
        push("tok_emb".into(), vec![config.token_vocab, d], &mut offset);
        push("pos_emb".into(), vec![config.max_seq_len, d], &mut offset);
        // Row 0 is the root sentinel; head position p uses row p + 1.
        push("head_emb".into(), vec![config.max_seq_len + 1, d], &mut offset);
        for l in 0..config.num_layers {
            for w in ["wq", "wk", "wv", "wo"] {
                push(format!("layer{l}.attn.{w}"), vec![d, d], &mut offset);
                // No key bias: a per-key constant shift cancels in the
                // row softmax, so it would be a dead parameter.
                if w != "wk" {
                    push(format!("layer{l}.attn.{}", w.replace('w', "b")), vec![d], &mut offset);
                }
            }
            push(format!("layer{l}.ln1.g"), vec![d], &mut offset);
            push(format!("layer{l}.ln1.b"), vec![d], &mut offset);
            push(format!("layer{l}.ff.w1"), vec![d, config.ff_size], &mut offset);
            push(format!("layer{l}.ff.b1"), vec![config.ff_size], &mut offset);
            push(format!("layer{l}.ff.w2"), vec![config.ff_size, d], &mut offset);
            push(format!("layer{l}.ff.b2"), vec![d], &mut offset);
            push(format!("layer{l}.ln2.g"), vec![d], &mut offset);
            push(format!("layer{l}.ln2.b"), vec![d], &mut offset);
        }
        push("exp_out.w".into(), vec![d, config.exp_vocab], &mut offset);
        push("exp_out.b".into(), vec![config.exp_vocab], &mut offset);
        push("exp_emb".into(), vec![config.exp_vocab, d], &mut offset);
        push("tok_out.w".into(), vec![d, config.token_vocab], &mut offset);
        push("tok_out.b".into(), vec![config.token_vocab], &mut offset);
        let index = entries.iter().enumerate().map(|(i, e)| (e.name.clone(), i)).collect();
        Layout { entries, index, total: offset }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn range(&self, name: &str) -> Range<usize> {
        let e = &self.entries[self.index[name]];
        e.offset..e.offset + e.shape.iter().product::<usize>()
    }

    pub fn view2<'a>(&self, buf: &'a [f64], name: &str) -> ArrayView2<'a, f64> {
        let e = &self.entries[self.index[name]];
        ArrayView2::from_shape((e.shape[0], e.shape[1]), &buf[self.range(name)])
            .expect("layout shape matches buffer")
    }

    pub fn view1<'a>(&self, buf: &'a [f64], name: &str) -> ArrayView1<'a, f64> {
        ArrayView1::from(&buf[self.range(name)])
    }

    pub fn add2(&self, buf: &mut [f64], name: &str, delta: &Array2<f64>) {
        let range = self.range(name);
        for (slot, &d) in buf[range].iter_mut().zip(delta.iter()) {
            *slot += d;
        }
    }

    pub fn add1(&self, buf: &mut [f64], name: &str, delta: &Array1<f64>) {
        let range = self.range(name);
        for (slot, &d) in buf[range].iter_mut().zip(delta.iter()) {
            *slot += d;
        }
    }

    pub fn add_row(&self, buf: &mut [f64], name: &str, row: usize, delta: ArrayView1<f64>) {
        let e = &self.entries[self.index[name]];
        let cols = e.shape[1];
        let start = e.offset + row * cols;
        for (slot, &d) in buf[start..start + cols].iter_mut().zip(delta.iter()) {
            *slot += d;
        }
    }
}

/// Encoded model input for one level transition.
#[derive(Debug, Clone)]
pub struct EncodedSeq {
    pub ids: Vec<usize>,
    /// Head-embedding rows: 0 for the root sentinel, position + 1 otherwise.
    pub head_rows: Vec<usize>,
    /// True where the input holds a dependency placeholder.
    pub placeholder: Vec<bool>,
}

/// Training targets parallel to an [`EncodedSeq`]; `None` marks `[pad]`
/// positions that are excluded from the loss.
#[derive(Debug, Clone)]
pub struct Targets {
    pub tok: Vec<Option<usize>>,
    pub exp: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct TrainExample {
    pub input: EncodedSeq,
    pub targets: Targets,
}

pub struct Forward {
    pub tok_logits: Array2<f64>,
    pub exp_logits: Array2<f64>,
    /// Expansion IDs that conditioned the token stream (gold or argmax).
    pub exp_ids: Vec<usize>,
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerCache {
    x_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln1: LnCache,
    x1: Array2<f64>,
    ff_z1: Array2<f64>,
    ff_a: Array2<f64>,
    ln2: LnCache,
}

pub struct Cache {
    layers: Vec<LayerCache>,
    /// Hidden state the expansion logits were projected from.
    x_mid: Array2<f64>,
    exp_ids: Vec<usize>,
    x_final: Array2<f64>,
    tok_probs: Array2<f64>,
    exp_probs: Array2<f64>,
}

impl Cache {
    pub(super) fn tok_probs(&self) -> &Array2<f64> {
        &self.tok_probs
    }

    pub(super) fn exp_probs(&self) -> &Array2<f64> {
        &self.exp_probs
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn layer_norm(x: &Array2<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (i, mut row) in xhat.rows_mut().into_iter().enumerate() {
        let mu = row.sum() / d;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = istd;
        for v in row.iter_mut() {
            *v = (*v - mu) * istd;
        }
    }
    let y = &xhat * &g.insert_axis(ndarray::Axis(0)) + &b.insert_axis(ndarray::Axis(0));
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: ArrayView1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let d = dy.ncols() as f64;
    let dg = (dy * &cache.xhat).sum_axis(ndarray::Axis(0));
    let db = dy.sum_axis(ndarray::Axis(0));
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dy_row = dy.row(i);
        let xhat_row = cache.xhat.row(i);
        let istd = cache.inv_std[i];
        let dxhat: Array1<f64> = &dy_row * &g;
        let sum_dxhat = dxhat.sum();
        let sum_dxhat_xhat = (&dxhat * &xhat_row).sum();
        for j in 0..dy.ncols() {
            dx[[i, j]] = istd / d * (d * dxhat[j] - sum_dxhat - xhat_row[j] * sum_dxhat_xhat);
        }
    }
    (dx, dg, db)
}

impl super::Model {
    /// Full forward pass for one sequence. With `gold_exp` the expansion
    /// conditioning is teacher-forced; otherwise the per-position argmax
    /// conditions the remaining layers, with `[pad]` forced at terminal
    /// positions to match how padded targets are teacher-forced.
    pub(super) fn forward_cached(&self, input: &EncodedSeq, gold_exp: Option<&[usize]>) -> (Forward, Cache) {
        let cfg = &self.config;
        let layout = &self.layout;
        let p = &self.params;
        let seq_len = input.ids.len();
        let d = cfg.embed_size;
        let heads = cfg.num_heads;
        let dh = d / heads;

        let tok_emb = layout.view2(p, "tok_emb");
        let pos_emb = layout.view2(p, "pos_emb");
        let head_emb = layout.view2(p, "head_emb");
        let mut x = Array2::zeros((seq_len, d));
        for i in 0..seq_len {
            let mut row = x.row_mut(i);
            row.assign(&tok_emb.row(input.ids[i]));
            row += &pos_emb.row(i);
            row += &head_emb.row(input.head_rows[i]);
        }

        let mut layers = Vec::with_capacity(cfg.num_layers);
        let mut x_mid = Array2::zeros((0, 0));
        let mut exp_logits = Array2::zeros((0, 0));
        let mut exp_ids = Vec::new();
        for l in 0..cfg.num_layers {
            let x_in = x.clone();
            let wq = layout.view2(p, &format!("layer{l}.attn.wq"));
            let bq = layout.view1(p, &format!("layer{l}.attn.bq"));
            let wk = layout.view2(p, &format!("layer{l}.attn.wk"));
            let wv = layout.view2(p, &format!("layer{l}.attn.wv"));
            let bv = layout.view1(p, &format!("layer{l}.attn.bv"));
            let wo = layout.view2(p, &format!("layer{l}.attn.wo"));
            let bo = layout.view1(p, &format!("layer{l}.attn.bo"));

            let q = x.dot(&wq) + &bq;
            let k = x.dot(&wk);
            let v = x.dot(&wv) + &bv;
            let mut ctx = Array2::zeros((seq_len, d));
            let mut attn = Vec::with_capacity(heads);
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let qh = q.slice(cols);
                let kh = k.slice(cols);
                let vh = v.slice(cols);
                // Self-attention over the whole input: no causal mask.
                let scores = qh.dot(&kh.t()) / (dh as f64).sqrt();
                let a = softmax_rows(&scores);
                ctx.slice_mut(cols).assign(&a.dot(&vh));
                attn.push(a);
            }
            let attn_out = ctx.dot(&wo) + &bo;
            let res1 = &x_in + &attn_out;
            let (x1, ln1) = layer_norm(
                &res1,
                layout.view1(p, &format!("layer{l}.ln1.g")),
                layout.view1(p, &format!("layer{l}.ln1.b")),
            );

            let w1 = layout.view2(p, &format!("layer{l}.ff.w1"));
            let b1 = layout.view1(p, &format!("layer{l}.ff.b1"));
            let w2 = layout.view2(p, &format!("layer{l}.ff.w2"));
            let b2 = layout.view1(p, &format!("layer{l}.ff.b2"));
            let ff_z1 = x1.dot(&w1) + &b1;
            let ff_a = ff_z1.mapv(|z| z.max(0.0));
            let ff_out = ff_a.dot(&w2) + &b2;
            let res2 = &x1 + &ff_out;
            let (x2, ln2) = layer_norm(
                &res2,
                layout.view1(p, &format!("layer{l}.ln2.g")),
                layout.view1(p, &format!("layer{l}.ln2.b")),
            );
            x = x2;
            layers.push(LayerCache { x_in, q, k, v, attn, ctx, ln1, x1, ff_z1, ff_a, ln2 });

            if l + 1 == cfg.exp_layer {
                // Dual output: expansions project from this intermediate
                // hidden state, and the chosen expansion's embedding is
                // added back in before the remaining layers.
                x_mid = x.clone();
                exp_logits = x.dot(&layout.view2(p, "exp_out.w")) + &layout.view1(p, "exp_out.b");
                exp_ids = match gold_exp {
                    Some(gold) => gold.to_vec(),
                    None => (0..seq_len)
                        .map(|i| {
                            if input.placeholder[i] {
                                argmax_row(&exp_logits.row(i).to_owned())
                            } else {
                                crate::vocab::EXP_PAD_ID
                            }
                        })
                        .collect(),
                };
                let exp_emb = layout.view2(p, "exp_emb");
                for i in 0..seq_len {
                    let mut row = x.row_mut(i);
                    row += &exp_emb.row(exp_ids[i]);
                }
            }
        }

        let x_final = x.clone();
        let mut tok_logits = x.dot(&layout.view2(p, "tok_out.w")) + &layout.view1(p, "tok_out.b");
        // Dependency placeholders can never be emitted as terminals.
        for &col in &self.masked_token_ids {
            tok_logits.column_mut(col).fill(f64::NEG_INFINITY);
        }
        let tok_probs = softmax_rows(&tok_logits);
        let exp_probs = softmax_rows(&exp_logits);
        (
            Forward { tok_logits, exp_logits: exp_logits.clone(), exp_ids: exp_ids.clone() },
            Cache { layers, x_mid, exp_ids, x_final, tok_probs, exp_probs },
        )
    }

    /// Backpropagates one sequence's cross-entropy terms into `grads`.
    /// `tok_scale`/`exp_scale` are 1/(batch non-pad counts) so the batch
    /// loss is a mean per channel.
    pub(super) fn backward(
        &self,
        input: &EncodedSeq,
        targets: &Targets,
        cache: &Cache,
        tok_scale: f64,
        exp_scale: f64,
        grads: &mut [f64],
    ) {
        let cfg = &self.config;
        let layout = &self.layout;
        let p = &self.params;
        let seq_len = input.ids.len();
        let d = cfg.embed_size;
        let heads = cfg.num_heads;
        let dh = d / heads;

        // d loss / d logits = softmax - onehot at supervised positions.
        let mut dtok_logits = Array2::zeros((seq_len, cfg.token_vocab));
        for i in 0..seq_len {
            if let Some(target) = targets.tok[i] {
                let mut row = dtok_logits.row_mut(i);
                row.assign(&cache.tok_probs.row(i));
                row[target] -= 1.0;
                row.mapv_inplace(|v| v * tok_scale);
            }
        }
        let mut dexp_logits = Array2::zeros((seq_len, cfg.exp_vocab));
        for i in 0..seq_len {
            if let Some(target) = targets.exp[i] {
                let mut row = dexp_logits.row_mut(i);
                row.assign(&cache.exp_probs.row(i));
                row[target] -= 1.0;
                row.mapv_inplace(|v| v * exp_scale);
            }
        }

        // Token head.
        let tok_w = layout.view2(p, "tok_out.w");
        layout.add2(grads, "tok_out.w", &cache.x_final.t().dot(&dtok_logits));
        layout.add1(grads, "tok_out.b", &dtok_logits.sum_axis(ndarray::Axis(0)));
        let mut dx = dtok_logits.dot(&tok_w.t());

        for l in (0..cfg.num_layers).rev() {
            if l + 1 == cfg.exp_layer {
                // Conditioning additions: expansion embedding rows get the
                // stream gradient; the choice itself is non-differentiable
                // and passes nothing.
                for i in 0..seq_len {
                    layout.add_row(grads, "exp_emb", cache.exp_ids[i], dx.row(i));
                }
                // Expansion head branches off the same hidden state.
                let exp_w = layout.view2(p, "exp_out.w");
                layout.add2(grads, "exp_out.w", &cache.x_mid.t().dot(&dexp_logits));
                layout.add1(grads, "exp_out.b", &dexp_logits.sum_axis(ndarray::Axis(0)));
                dx = dx + dexp_logits.dot(&exp_w.t());
            }
            let lc = &self.layer_cache(cache, l);

            // ln2
            let (dres2, dg2, db2) =
                layer_norm_backward(&dx, &lc.ln2, layout.view1(p, &format!("layer{l}.ln2.g")));
            layout.add1(grads, &format!("layer{l}.ln2.g"), &dg2);
            layout.add1(grads, &format!("layer{l}.ln2.b"), &db2);

            // Feed-forward with residual.
            let w1 = layout.view2(p, &format!("layer{l}.ff.w1"));
            let w2 = layout.view2(p, &format!("layer{l}.ff.w2"));
            let dff_out = dres2.clone();
            layout.add2(grads, &format!("layer{l}.ff.w2"), &lc.ff_a.t().dot(&dff_out));
            layout.add1(grads, &format!("layer{l}.ff.b2"), &dff_out.sum_axis(ndarray::Axis(0)));
            let mut dff_a = dff_out.dot(&w2.t());
            ndarray::Zip::from(&mut dff_a).and(&lc.ff_z1).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            layout.add2(grads, &format!("layer{l}.ff.w1"), &lc.x1.t().dot(&dff_a));
            layout.add1(grads, &format!("layer{l}.ff.b1"), &dff_a.sum_axis(ndarray::Axis(0)));
            let dx1 = dres2 + dff_a.dot(&w1.t());

            // ln1
            let (dres1, dg1, db1) =
                layer_norm_backward(&dx1, &lc.ln1, layout.view1(p, &format!("layer{l}.ln1.g")));
            layout.add1(grads, &format!("layer{l}.ln1.g"), &dg1);
            layout.add1(grads, &format!("layer{l}.ln1.b"), &db1);

            // Attention with residual.
            let wo = layout.view2(p, &format!("layer{l}.attn.wo"));
            let dattn_out = dres1.clone();
            layout.add2(grads, &format!("layer{l}.attn.wo"), &lc.ctx.t().dot(&dattn_out));
            layout.add1(grads, &format!("layer{l}.attn.bo"), &dattn_out.sum_axis(ndarray::Axis(0)));
            let dctx = dattn_out.dot(&wo.t());

            let mut dq = Array2::zeros((seq_len, d));
            let mut dk = Array2::zeros((seq_len, d));
            let mut dv = Array2::zeros((seq_len, d));
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let a = &lc.attn[h];
                let vh = lc.v.slice(cols);
                let qh = lc.q.slice(cols);
                let kh = lc.k.slice(cols);
                let dctx_h = dctx.slice(cols);
                let dattn = dctx_h.dot(&vh.t());
                dv.slice_mut(cols).assign(&a.t().dot(&dctx_h));
                // Row-wise softmax jacobian.
                let mut dscores = Array2::zeros((seq_len, seq_len));
                for i in 0..seq_len {
                    let a_row = a.row(i);
                    let da_row = dattn.row(i);
                    let dot = (&a_row * &da_row).sum();
                    for j in 0..seq_len {
                        dscores[[i, j]] = a_row[j] * (da_row[j] - dot);
                    }
                }
                let scale = 1.0 / (dh as f64).sqrt();
                dq.slice_mut(cols).assign(&(dscores.dot(&kh) * scale));
                dk.slice_mut(cols).assign(&(dscores.t().dot(&qh) * scale));
            }
            let wq = layout.view2(p, &format!("layer{l}.attn.wq"));
            let wk = layout.view2(p, &format!("layer{l}.attn.wk"));
            let wv = layout.view2(p, &format!("layer{l}.attn.wv"));
            layout.add2(grads, &format!("layer{l}.attn.wq"), &lc.x_in.t().dot(&dq));
            layout.add1(grads, &format!("layer{l}.attn.bq"), &dq.sum_axis(ndarray::Axis(0)));
            layout.add2(grads, &format!("layer{l}.attn.wk"), &lc.x_in.t().dot(&dk));
            layout.add2(grads, &format!("layer{l}.attn.wv"), &lc.x_in.t().dot(&dv));
            layout.add1(grads, &format!("layer{l}.attn.bv"), &dv.sum_axis(ndarray::Axis(0)));
            dx = dres1 + dq.dot(&wq.t()) + dk.dot(&wk.t()) + dv.dot(&wv.t());
        }

        for i in 0..seq_len {
            layout.add_row(grads, "tok_emb", input.ids[i], dx.row(i));
            layout.add_row(grads, "pos_emb", i, dx.row(i));
            layout.add_row(grads, "head_emb", input.head_rows[i], dx.row(i));
        }
    }

    fn layer_cache<'c>(&self, cache: &'c Cache, l: usize) -> &'c LayerCache {
        &cache.layers[l]
    }

    /// Cross-entropy sums and counts for one sequence; the caller divides
    /// by batch-wide counts.
    pub(super) fn ce_sums(&self, cache: &Cache, targets: &Targets) -> (f64, usize, f64, usize) {
        let mut tok_sum = 0.0;
        let mut tok_count = 0;
        for (i, target) in targets.tok.iter().enumerate() {
            if let Some(t) = target {
                tok_sum -= cache.tok_probs[[i, *t]].max(1e-300).ln();
                tok_count += 1;
            }
        }
        let mut exp_sum = 0.0;
        let mut exp_count = 0;
        for (i, target) in targets.exp.iter().enumerate() {
            if let Some(t) = target {
                exp_sum -= cache.exp_probs[[i, *t]].max(1e-300).ln();
                exp_count += 1;
            }
        }
        (tok_sum, tok_count, exp_sum, exp_count)
    }
}

pub(super) fn argmax_row(row: &Array1<f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}
