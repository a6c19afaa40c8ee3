use num_traits::Float;

use crate::blocks::{AttentionRecord, Window};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{kernels, Linear, ParamStore, Tensor, Var};
use crate::textfront::SymbolSequence;

fn cast_vec<T: Float>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| kernels::cast(x)).collect()
}

fn to_f64<T: Float>(x: T) -> f64 {
    x.to_f64().expect("finite float")
}

#[derive(Debug, Clone)]
struct Affine<T> {
    w: Vec<T>,
    b: Vec<T>,
    n_out: usize,
}

impl<T: Float> Affine<T> {
    fn load(l: &Linear, store: &ParamStore) -> Self {
        let (w, b) = l.effective(store);
        Affine {
            w: cast_vec(&w),
            b: cast_vec(&b),
            n_out: l.out_dim,
        }
    }

    #[inline]
    fn apply(&self, out: &mut [T], x: &[T]) {
        kernels::affine_row(out, x, &self.w, &self.b);
    }
}

#[derive(Debug, Clone)]
struct CausalConv<T> {
    w: Vec<T>,
    b: Vec<T>,
    width: usize,
    channels: usize,
}

#[derive(Debug, Clone)]
struct Layer<T> {
    conv: CausalConv<T>,
    query: Affine<T>,
    out: Affine<T>,
}

/// Decoder weights with weight normalization folded in, cast to `T`.
#[derive(Debug, Clone)]
pub struct InferenceModel<T> {
    prenet: Vec<Affine<T>>,
    layers: Vec<Layer<T>>,
    mel: Affine<T>,
    done: Affine<T>,
    pub reduction: usize,
    pub mel_bands: usize,
    pub channels: usize,
    pub attention_hidden: usize,
    position_weight: T,
    pub window_width: usize,
    pub done_threshold: f64,
}

impl<T: Float> InferenceModel<T> {
    pub fn new(model: &Model) -> Self {
        let store = &model.store;
        let dec = &model.net.decoder;
        let layers = dec
            .layers
            .iter()
            .map(|(conv, att)| {
                let (w, b) = conv.conv.effective(store);
                Layer {
                    conv: CausalConv {
                        w: cast_vec(&w),
                        b: cast_vec(&b),
                        width: conv.conv.width,
                        channels: conv.conv.c_in,
                    },
                    query: Affine::load(&att.query, store),
                    out: Affine::load(&att.out, store),
                }
            })
            .collect();
        InferenceModel {
            prenet: dec.prenet.iter().map(|l| Affine::load(l, store)).collect(),
            layers,
            mel: Affine::load(&dec.mel, store),
            done: Affine::load(&dec.done, store),
            reduction: dec.reduction,
            mel_bands: dec.mel_bands,
            channels: model.config.decoder_channels(),
            attention_hidden: model.config.attention_hidden,
            position_weight: kernels::cast(model.config.position[0]),
            window_width: model.config.window_width,
            done_threshold: model.config.done_threshold,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn group_size(&self) -> usize {
        self.reduction * self.mel_bands
    }
}

/// Per-utterance constants: encoder outputs, projected keys and the
/// speaker terms, evaluated once in double precision.
#[derive(Debug, Clone)]
pub struct UtteranceContext {
    pub speaker_id: usize,
    pub t_enc: usize,
    /// `[T_enc × e]`.
    pub values: Tensor,
    /// Per layer, `[T_enc × hidden]` keys with positional encoding.
    pub keys: Vec<Tensor>,
    pub query_rate: f64,
    /// Per layer, softsigned speaker bias for the conv value half.
    pub speaker_bias: Vec<Option<Vec<f64>>>,
}

impl UtteranceContext {
    pub fn new(model: &Model, seq: &SymbolSequence) -> Result<Self> {
        let mut g = model.graph(false, 0);
        let cond = model.conditioning(&mut g, seq.speaker_id)?;
        let enc = model.encode(&mut g, seq, &cond)?;
        let pw = model.config.position[0];
        let mut keys = Vec::new();
        let mut speaker_bias = Vec::new();
        for (conv, att) in &model.net.decoder.layers {
            let k = att.project_keys(&mut g, enc.keys, cond.key_rate, pw)?;
            keys.push(g.value(k).clone());
            let bias = match (conv.speaker, cond.speaker) {
                (Some(proj), Some(s)) => {
                    let b: Var = proj.forward(&mut g, s)?;
                    let b = g.softsign(b);
                    Some(g.value(b).data().to_vec())
                }
                (None, None) => None,
                (None, Some(_)) => return Err(Error::UnexpectedSpeaker),
                (Some(_), None) => return Err(Error::MissingSpeaker),
            };
            speaker_bias.push(bias);
        }
        Ok(UtteranceContext {
            speaker_id: seq.speaker_id,
            t_enc: seq.len(),
            values: g.value(enc.values).clone(),
            keys,
            query_rate: g.value(cond.query_rate).data()[0],
            speaker_bias,
        })
    }
}

/// Mutable state of one autoregressive decode. Every buffer is sized at
/// creation for `max_steps`, so stepping never allocates.
#[derive(Debug, Clone)]
pub struct DecodingStream<T> {
    speaker_id: usize,
    t_enc: usize,
    values: Vec<T>,
    keys: Vec<Vec<T>>,
    query_rate: T,
    speaker_bias: Vec<Option<Vec<T>>>,
    /// Per layer: last `k − 1` conv inputs and the slot of the oldest.
    rings: Vec<(Vec<T>, usize)>,
    /// Per layer: last attended position, when that layer is constrained.
    positions: Vec<Option<usize>>,
    clamped: Vec<bool>,
    input: Vec<T>,
    prenet_a: Vec<T>,
    prenet_b: Vec<T>,
    x: Vec<T>,
    conv_out: Vec<T>,
    gated: Vec<T>,
    q_in: Vec<T>,
    q: Vec<T>,
    logits: Vec<T>,
    weights: Vec<T>,
    ctx: Vec<T>,
    att_out: Vec<T>,
    /// Emitted frames, `[steps · r × mel]`.
    mel: Vec<T>,
    done_logits: Vec<T>,
    hidden: Vec<T>,
    /// Per layer, `[steps × T_enc]`.
    attention: Vec<Vec<T>>,
    step: usize,
    max_steps: usize,
    done: bool,
}

impl<T: Float> DecodingStream<T> {
    /// `constrained[l]` turns on the monotonic window for layer `l`,
    /// starting at position 0.
    pub fn new(
        model: &InferenceModel<T>,
        ctx: &UtteranceContext,
        constrained: &[bool],
        max_steps: usize,
    ) -> Result<Self> {
        if max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        let n = model.layers.len();
        if constrained.len() != n || ctx.keys.len() != n {
            return Err(Error::shape("decoding stream", "one entry per decoder layer expected"));
        }
        let c = model.channels;
        let e = ctx.values.cols();
        let h = model.attention_hidden;
        let widest = model.prenet.iter().map(|p| p.n_out).max().unwrap_or(0);
        let z = T::zero();
        Ok(DecodingStream {
            speaker_id: ctx.speaker_id,
            t_enc: ctx.t_enc,
            values: cast_vec(ctx.values.data()),
            keys: ctx.keys.iter().map(|k| cast_vec(k.data())).collect(),
            query_rate: kernels::cast(ctx.query_rate),
            speaker_bias: ctx
                .speaker_bias
                .iter()
                .map(|b| b.as_deref().map(cast_vec))
                .collect(),
            rings: model
                .layers
                .iter()
                .map(|l| (vec![z; (l.conv.width - 1) * l.conv.channels], 0))
                .collect(),
            positions: constrained.iter().map(|&on| on.then_some(0)).collect(),
            clamped: vec![false; n],
            input: vec![z; model.group_size()],
            prenet_a: vec![z; widest],
            prenet_b: vec![z; widest],
            x: vec![z; c],
            conv_out: vec![z; 2 * c],
            gated: vec![z; c],
            q_in: vec![z; c],
            q: vec![z; h],
            logits: vec![z; ctx.t_enc],
            weights: vec![z; ctx.t_enc],
            ctx: vec![z; e],
            att_out: vec![z; c],
            mel: Vec::with_capacity(max_steps * model.group_size()),
            done_logits: Vec::with_capacity(max_steps),
            hidden: Vec::with_capacity(max_steps * c),
            attention: (0..n).map(|_| Vec::with_capacity(max_steps * ctx.t_enc)).collect(),
            step: 0,
            max_steps,
            done: false,
        })
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn speaker_id(&self) -> usize {
        self.speaker_id
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// True once the step budget is spent.
    pub fn exhausted(&self) -> bool {
        self.step >= self.max_steps
    }

    /// Frames emitted so far, `[steps · r × mel]` (normalized).
    pub fn mel(&self) -> &[T] {
        &self.mel
    }

    pub fn done_logits(&self) -> &[T] {
        &self.done_logits
    }

    /// Decoder hidden states, `[steps × c]`.
    pub fn hidden(&self) -> &[T] {
        &self.hidden
    }

    pub fn last_group(&self) -> &[T] {
        let g = self.input.len();
        &self.mel[self.mel.len() - g..]
    }

    /// Attention records of every layer in double precision.
    pub fn records(&self) -> Result<Vec<AttentionRecord>> {
        self.attention
            .iter()
            .zip(&self.clamped)
            .map(|(w, &clamped)| {
                let data = w.iter().map(|&v| to_f64(v)).collect();
                Ok(AttentionRecord::from_weights(Tensor::new([self.step, self.t_enc], data)?, clamped))
            })
            .collect()
    }

    /// `[steps · r × mel]` frames as a double-precision tensor.
    pub fn mel_tensor(&self, mel_bands: usize) -> Result<Tensor> {
        Tensor::new(
            [self.mel.len() / mel_bands, mel_bands],
            self.mel.iter().map(|&v| to_f64(v)).collect(),
        )
    }

    pub fn hidden_tensor(&self, channels: usize) -> Result<Tensor> {
        Tensor::new(
            [self.hidden.len() / channels, channels],
            self.hidden.iter().map(|&v| to_f64(v)).collect(),
        )
    }
}

/// One decoder step on the stream's own previous output group. Returns
/// whether the done probability crossed the threshold.
pub fn fused_decode_step<T: Float>(stream: &mut DecodingStream<T>, model: &InferenceModel<T>) -> Result<bool> {
    step_impl(stream, model, None)
}

/// One decoder step on an externally supplied previous group (teacher
/// forcing through the incremental path).
pub fn fused_step_with_input<T: Float>(
    stream: &mut DecodingStream<T>,
    model: &InferenceModel<T>,
    previous_group: &[T],
) -> Result<bool> {
    if previous_group.len() != model.group_size() {
        return Err(Error::shape("fused step", "input group has the wrong width"));
    }
    step_impl(stream, model, Some(previous_group))
}

fn step_impl<T: Float>(
    s: &mut DecodingStream<T>,
    m: &InferenceModel<T>,
    previous_group: Option<&[T]>,
) -> Result<bool> {
    // Forced inputs ignore the done flag so teacher forcing can run the
    // full target length.
    if (s.done && previous_group.is_none()) || s.step >= s.max_steps {
        return Err(Error::StreamDone);
    }
    if let Some(p) = previous_group {
        s.input.copy_from_slice(p);
    }
    let t = s.step;

    // PreNet.
    let mut width = s.input.len();
    for (i, fc) in m.prenet.iter().enumerate() {
        let n = fc.n_out;
        if i == 0 {
            fc.apply(&mut s.prenet_a[..n], &s.input);
        } else {
            fc.apply(&mut s.prenet_a[..n], &s.prenet_b[..width]);
        }
        for v in &mut s.prenet_a[..n] {
            *v = kernels::relu(*v);
        }
        std::mem::swap(&mut s.prenet_a, &mut s.prenet_b);
        width = n;
    }
    s.x.copy_from_slice(&s.prenet_b[..width]);

    let c = m.channels;
    let pw = m.position_weight;
    for (l, layer) in m.layers.iter().enumerate() {
        // Causal conv over the ring buffer, oldest tap first.
        let conv = &layer.conv;
        let tap = conv.channels * 2 * c;
        let (ring, head) = &mut s.rings[l];
        let slots = conv.width - 1;
        s.conv_out.copy_from_slice(&conv.b);
        for j in 0..slots {
            let slot = (*head + j) % slots;
            kernels::accumulate_row(
                &mut s.conv_out,
                &ring[slot * c..(slot + 1) * c],
                &conv.w[j * tap..(j + 1) * tap],
            );
        }
        kernels::accumulate_row(&mut s.conv_out, &s.x, &conv.w[slots * tap..(slots + 1) * tap]);
        if slots > 0 {
            ring[*head * c..(*head + 1) * c].copy_from_slice(&s.x);
            *head = (*head + 1) % slots;
        }
        if let Some(bias) = &s.speaker_bias[l] {
            for k in 0..c {
                s.conv_out[k] = s.conv_out[k] + bias[k];
            }
        }
        kernels::glu_row(&mut s.gated, &s.conv_out);
        for k in 0..c {
            s.x[k] = kernels::residual(s.x[k], s.gated[k]);
        }

        // Attention.
        for k in 0..c {
            s.q_in[k] = s.x[k] + pw * kernels::positional_value(s.query_rate, t, k, c);
        }
        layer.query.apply(&mut s.q, &s.q_in);
        let h = m.attention_hidden;
        let scale: T = kernels::cast(1.0 / (h as f64).sqrt());
        let keys = &s.keys[l];
        for j in 0..s.t_enc {
            s.logits[j] = kernels::dot(&s.q, &keys[j * h..(j + 1) * h]) * scale;
        }
        let (lo, hi) = match s.positions[l] {
            Some(last) => {
                let ((lo, hi), clamped) = Window {
                    last,
                    width: m.window_width,
                }
                .bounds(s.t_enc);
                s.clamped[l] |= clamped;
                (lo, hi)
            }
            None => (0, s.t_enc),
        };
        kernels::softmax_window(&s.logits, &mut s.weights, lo, hi);
        if let Some(p) = &mut s.positions[l] {
            *p = kernels::argmax(&s.weights);
        }
        s.attention[l].extend_from_slice(&s.weights);
        s.ctx.fill(T::zero());
        kernels::accumulate_row(&mut s.ctx, &s.weights, &s.values);
        let norm: T = kernels::cast((s.t_enc as f64).sqrt());
        for v in &mut s.ctx {
            *v = *v * norm;
        }
        layer.out.apply(&mut s.att_out, &s.ctx);
        for k in 0..c {
            s.x[k] = kernels::residual(s.x[k], s.att_out[k]);
        }
    }

    s.hidden.extend_from_slice(&s.x);
    let group = m.group_size();
    let start = s.mel.len();
    s.mel.resize(start + group, T::zero());
    m.mel.apply(&mut s.mel[start..], &s.x);
    let mut done = [T::zero()];
    m.done.apply(&mut done, &s.x);
    s.done_logits.push(done[0]);
    s.input.copy_from_slice(&s.mel[start..]);
    s.step += 1;
    s.done = to_f64(kernels::sigmoid(done[0])) > m.done_threshold;
    Ok(s.done)
}

/// Newest step of a full-history recompute in `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryStep<T> {
    pub mel_group: Vec<T>,
    pub done_logit: T,
    pub hidden: Vec<T>,
}

/// Runs the unconstrained decoder on every row of `[zeros, history…]` with
/// whole-sequence convolutions and full attention, then keeps the last row.
/// No state is carried between calls.
pub fn recompute_in_precision<T: Float>(
    m: &InferenceModel<T>,
    ctx: &UtteranceContext,
    history: &[Vec<T>],
) -> Result<HistoryStep<T>> {
    let group = m.group_size();
    if history.iter().any(|h| h.len() != group) {
        return Err(Error::shape("history recompute", "group has the wrong width"));
    }
    let steps = history.len() + 1;
    let (c, h, t_enc) = (m.channels, m.attention_hidden, ctx.t_enc);
    let values: Vec<T> = cast_vec(ctx.values.data());
    let e = ctx.values.cols();
    let query_rate: T = kernels::cast(ctx.query_rate);
    let zero_group = vec![T::zero(); group];

    let mut x = Vec::with_capacity(steps * c);
    for t in 0..steps {
        let mut row = if t == 0 { zero_group.clone() } else { history[t - 1].clone() };
        for fc in &m.prenet {
            let mut out = vec![T::zero(); fc.n_out];
            fc.apply(&mut out, &row);
            row = out.into_iter().map(kernels::relu).collect();
        }
        x.extend_from_slice(&row);
    }

    for (l, layer) in m.layers.iter().enumerate() {
        let conv = &layer.conv;
        let tap = conv.channels * 2 * c;
        let zeros = vec![T::zero(); c];
        let keys: Vec<T> = cast_vec(ctx.keys[l].data());
        let bias = ctx.speaker_bias[l].as_deref().map(cast_vec::<T>);
        let mut next = Vec::with_capacity(steps * c);
        for t in 0..steps {
            let mut h_row = conv.b.clone();
            for j in 0..conv.width {
                let src = (t + j).checked_sub(conv.width - 1);
                let input = src.map_or(&zeros[..], |s| &x[s * c..(s + 1) * c]);
                kernels::accumulate_row(&mut h_row, input, &conv.w[j * tap..(j + 1) * tap]);
            }
            if let Some(b) = &bias {
                for k in 0..c {
                    h_row[k] = h_row[k] + b[k];
                }
            }
            let mut gated = vec![T::zero(); c];
            kernels::glu_row(&mut gated, &h_row);
            let xt = &x[t * c..(t + 1) * c];
            let y: Vec<T> = (0..c).map(|k| kernels::residual(xt[k], gated[k])).collect();

            let q_in: Vec<T> = (0..c)
                .map(|k| y[k] + m.position_weight * kernels::positional_value(query_rate, t, k, c))
                .collect();
            let mut q = vec![T::zero(); h];
            layer.query.apply(&mut q, &q_in);
            let scale: T = kernels::cast(1.0 / (h as f64).sqrt());
            let logits: Vec<T> = (0..t_enc)
                .map(|j| kernels::dot(&q, &keys[j * h..(j + 1) * h]) * scale)
                .collect();
            let mut weights = vec![T::zero(); t_enc];
            kernels::softmax_window(&logits, &mut weights, 0, t_enc);
            let mut att = vec![T::zero(); e];
            kernels::accumulate_row(&mut att, &weights, &values);
            let norm: T = kernels::cast((t_enc as f64).sqrt());
            let att: Vec<T> = att.into_iter().map(|v| v * norm).collect();
            let mut out = vec![T::zero(); c];
            layer.out.apply(&mut out, &att);
            next.extend((0..c).map(|k| kernels::residual(y[k], out[k])));
        }
        x = next;
    }

    let last = x[(steps - 1) * c..].to_vec();
    let mut mel_group = vec![T::zero(); group];
    m.mel.apply(&mut mel_group, &last);
    let mut done = [T::zero()];
    m.done.apply(&mut done, &last);
    Ok(HistoryStep {
        mel_group,
        done_logit: done[0],
        hidden: last,
    })
}
