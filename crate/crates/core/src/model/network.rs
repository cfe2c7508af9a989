//! Batched recurrent encoder/decoder over the autodiff tape. Every batch
//! tensor has one row per sentence; sequences are padded on the right and
//! carried with a `B×T` row-major mask.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::generator::{GeneratedParams, ParamScope};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b: Var,
}

impl LstmWeights {
    pub fn from_generated<T: Element>(scope: &ParamScope<'_, T>, g: &GeneratedParams<'_>, group: &str) -> Result<Self> {
        Ok(LstmWeights {
            w_ih: g.view(scope, &format!("{group}.w_ih"))?,
            w_hh: g.view(scope, &format!("{group}.w_hh"))?,
            b: g.view(scope, &format!("{group}.b"))?,
        })
    }
}

/// One LSTM step with gate order (i, f, g, o):
/// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_cell<T: Element>(tape: &Tape<T>, x: Var, h: Var, c: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let hidden = tape.shape(h)[1];
    let pre = tape.add(tape.matmul(x, w.w_ih)?, tape.matmul(h, w.w_hh)?)?;
    let pre = tape.add_bias(pre, w.b)?;
    if tape.shape(pre)[1] != 4 * hidden {
        return Err(Error::shape(format!(
            "lstm gates have width {}, expected {}",
            tape.shape(pre)[1],
            4 * hidden
        )));
    }
    let i = tape.sigmoid(tape.slice_cols(pre, 0, hidden)?)?;
    let f = tape.sigmoid(tape.slice_cols(pre, hidden, hidden)?)?;
    let g = tape.tanh(tape.slice_cols(pre, 2 * hidden, hidden)?)?;
    let o = tape.sigmoid(tape.slice_cols(pre, 3 * hidden, hidden)?)?;
    let c_next = tape.add(tape.mul(f, c)?, tape.mul(i, g)?)?;
    let h_next = tape.mul(o, tape.tanh(c_next)?)?;
    Ok((h_next, c_next))
}

/// Keeps `old` on rows where `keep` is 0 and takes `new` where it is 1.
fn masked_update<T: Element>(tape: &Tape<T>, old: Var, new: Var, keep: Var) -> Result<Var> {
    tape.add(old, tape.mul_col(tape.sub(new, old)?, keep)?)
}

fn column<T: Element>(tape: &Tape<T>, mask: &[bool], batch: usize, steps: usize, t: usize) -> Result<Var> {
    let data = (0..batch)
        .map(|b| if mask[b * steps + t] { T::one() } else { T::zero() })
        .collect();
    Ok(tape.constant(Tensor::new(vec![batch, 1], data)?))
}

/// Row-major `B×T` validity mask for right-padded lengths.
pub fn length_mask(lengths: &[usize], steps: usize) -> Vec<bool> {
    lengths.iter().flat_map(|&n| (0..steps).map(move |t| t < n)).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderWeights {
    pub fwd: LstmWeights,
    pub bwd: LstmWeights,
}

impl EncoderWeights {
    pub fn from_generated<T: Element>(scope: &ParamScope<'_, T>, g: &GeneratedParams<'_>) -> Result<Self> {
        Ok(EncoderWeights {
            fwd: LstmWeights::from_generated(scope, g, "fwd")?,
            bwd: LstmWeights::from_generated(scope, g, "bwd")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Per position `B×2H` (forward ‖ backward).
    pub annotations: Vec<Var>,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
    /// Forward state after each sentence's last token.
    pub final_fwd: Var,
    /// Backward state after each sentence's first token.
    pub final_bwd: Var,
}

impl EncoderOutput {
    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn steps(&self) -> usize {
        self.annotations.len()
    }

    /// The unpadded `len×2H` annotation matrix of sentence `row`.
    pub fn sentence<T: Element>(&self, tape: &Tape<T>, row: usize) -> Result<Var> {
        let width = tape.shape(self.annotations[0])[1];
        let n = self.lengths[row];
        let rows = (0..n)
            .map(|t| tape.slice(self.annotations[t], row * width, &[1, width]))
            .collect::<Result<Vec<_>>>()?;
        tape.reshape(tape.concat(&rows)?, &[n, width])
    }
}

/// Runs the bidirectional encoder over embedded positions `inputs[t]`
/// (`B×W` each) whose sentences have the given lengths.
pub fn encode<T: Element>(
    tape: &Tape<T>,
    w: &EncoderWeights,
    inputs: &[Var],
    lengths: &[usize],
) -> Result<EncoderOutput> {
    let steps = inputs.len();
    let batch = lengths.len();
    if steps == 0 || lengths.contains(&0) {
        return Err(Error::contract("cannot encode an empty sentence"));
    }
    if lengths.iter().any(|&n| n > steps) {
        return Err(Error::shape("sentence length exceeds padded width"));
    }
    let hidden = tape.shape(w.fwd.w_hh)[0];
    let mask = length_mask(lengths, steps);
    let keep: Vec<Var> = (0..steps)
        .map(|t| column(tape, &mask, batch, steps, t))
        .collect::<Result<_>>()?;
    let zeros = || tape.constant(Tensor::zeros(&[batch, hidden]));

    let (mut h, mut c) = (zeros(), zeros());
    let mut forward = Vec::with_capacity(steps);
    for t in 0..steps {
        let (hn, cn) = lstm_cell(tape, inputs[t], h, c, &w.fwd)?;
        h = masked_update(tape, h, hn, keep[t])?;
        c = masked_update(tape, c, cn, keep[t])?;
        forward.push(h);
    }
    let final_fwd = h;

    let (mut h, mut c) = (zeros(), zeros());
    let mut backward = vec![h; steps];
    for t in (0..steps).rev() {
        let (hn, cn) = lstm_cell(tape, inputs[t], h, c, &w.bwd)?;
        h = masked_update(tape, h, hn, keep[t])?;
        c = masked_update(tape, c, cn, keep[t])?;
        backward[t] = h;
    }
    let annotations = forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| tape.concat_cols(&[f, b]))
        .collect::<Result<_>>()?;
    Ok(EncoderOutput {
        annotations,
        mask,
        lengths: lengths.to_vec(),
        final_fwd,
        final_bwd: h,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub w_query: Var,
    pub w_key: Var,
    pub v: Var,
}

/// Additive attention `e_i = vᵀ tanh(W q + U a_i)` over the valid positions.
/// `keys[t]` is the precomputed `U a_t`. Returns the `B×2H` context and the
/// `B×T` weights.
pub fn attend<T: Element>(
    tape: &Tape<T>,
    w: &AttentionWeights,
    query: Var,
    keys: &[Var],
    annotations: &[Var],
    mask: &[bool],
) -> Result<(Var, Var)> {
    if keys.len() != annotations.len() || keys.is_empty() {
        return Err(Error::shape("attention keys and annotations must align"));
    }
    let q = tape.matmul(query, w.w_query)?;
    let scores = keys
        .iter()
        .map(|&k| tape.matmul(tape.tanh(tape.add(k, q)?)?, w.v))
        .collect::<Result<Vec<_>>>()?;
    let scores = tape.concat_cols(&scores)?;
    let weights = tape.softmax(scores, Some(mask))?;
    let mut context = None;
    for (t, &a) in annotations.iter().enumerate() {
        let term = tape.mul_col(a, tape.slice_cols(weights, t, 1)?)?;
        context = Some(match context {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok((context.expect("nonempty"), weights))
}

#[derive(Debug, Clone)]
pub struct DecoderWeights {
    pub bridge_w: Var,
    pub bridge_b: Var,
    pub attention: AttentionWeights,
    pub layers: Vec<LstmWeights>,
}

impl DecoderWeights {
    pub fn from_generated<T: Element>(
        scope: &ParamScope<'_, T>,
        g: &GeneratedParams<'_>,
        layers: usize,
    ) -> Result<Self> {
        Ok(DecoderWeights {
            bridge_w: g.view(scope, "bridge.w")?,
            bridge_b: g.view(scope, "bridge.b")?,
            attention: AttentionWeights {
                w_query: g.view(scope, "attention.w_query")?,
                w_key: g.view(scope, "attention.w_key")?,
                v: g.view(scope, "attention.v")?,
            },
            layers: (0..layers)
                .map(|l| LstmWeights::from_generated(scope, g, &format!("layer{l}")))
                .collect::<Result<_>>()?,
        })
    }
}

/// Source-side tensors the decoder reads at every step.
#[derive(Debug, Clone)]
pub struct AttentionMemory {
    pub annotations: Vec<Var>,
    pub keys: Vec<Var>,
    pub mask: Vec<bool>,
}

impl AttentionMemory {
    pub fn new<T: Element>(tape: &Tape<T>, w: &DecoderWeights, enc: &EncoderOutput) -> Result<Self> {
        let keys = enc
            .annotations
            .iter()
            .map(|&a| tape.matmul(a, w.attention.w_key))
            .collect::<Result<_>>()?;
        Ok(AttentionMemory {
            annotations: enc.annotations.clone(),
            keys,
            mask: enc.mask.clone(),
        })
    }

    pub fn batch(&self) -> usize {
        self.mask.len() / self.annotations.len()
    }

    /// Memory whose row `i` is row `rows[i]` of this one.
    pub fn select<T: Element>(&self, tape: &Tape<T>, rows: &[usize]) -> Result<Self> {
        let steps = self.annotations.len();
        let pick = |xs: &[Var]| {
            xs.iter()
                .map(|&x| tape.gather_rows(x, rows))
                .collect::<Result<Vec<_>>>()
        };
        Ok(AttentionMemory {
            annotations: pick(&self.annotations)?,
            keys: pick(&self.keys)?,
            mask: rows
                .iter()
                .flat_map(|&r| self.mask[r * steps..(r + 1) * steps].iter().copied())
                .collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DecoderState {
    /// `(h, c)` per layer, bottom first.
    pub layers: Vec<(Var, Var)>,
    /// Context vector of the previous step.
    pub context: Var,
}

impl DecoderState {
    /// Initial state: `tanh` affine map of the final encoder states gives
    /// each layer's `h`; cells start at zero.
    pub fn initial<T: Element>(tape: &Tape<T>, w: &DecoderWeights, enc: &EncoderOutput) -> Result<Self> {
        let hidden = tape.shape(w.layers[0].w_hh)[0];
        let batch = enc.batch();
        let finals = tape.concat_cols(&[enc.final_fwd, enc.final_bwd])?;
        let bridged = tape.tanh(tape.add_bias(tape.matmul(finals, w.bridge_w)?, w.bridge_b)?)?;
        let layers = (0..w.layers.len())
            .map(|l| {
                let h = tape.slice_cols(bridged, l * hidden, hidden)?;
                Ok((h, tape.constant(Tensor::zeros(&[batch, hidden]))))
            })
            .collect::<Result<_>>()?;
        let context = tape.constant(Tensor::zeros(&[batch, 2 * hidden]));
        Ok(DecoderState { layers, context })
    }

    pub fn top(&self) -> Var {
        self.layers.last().expect("at least one layer").0
    }

    /// State whose row `i` is row `rows[i]` of this one.
    pub fn select<T: Element>(&self, tape: &Tape<T>, rows: &[usize]) -> Result<Self> {
        Ok(DecoderState {
            layers: self
                .layers
                .iter()
                .map(|&(h, c)| Ok((tape.gather_rows(h, rows)?, tape.gather_rows(c, rows)?)))
                .collect::<Result<_>>()?,
            context: tape.gather_rows(self.context, rows)?,
        })
    }
}

/// Per-language target-side tensors.
#[derive(Debug, Clone, Copy)]
pub struct OutputLayer {
    pub words: Var,
    pub proj: Var,
    pub bias: Option<Var>,
}

/// Embeds `prev` tokens, attends with the previous top state, runs the
/// stacked cells (context joins the first layer's input) and projects the
/// new top state to target logits `B×V`.
pub fn decode_step<T: Element>(
    tape: &Tape<T>,
    w: &DecoderWeights,
    out: &OutputLayer,
    prev: &[usize],
    state: &DecoderState,
    memory: &AttentionMemory,
) -> Result<(Var, DecoderState)> {
    if state.layers.len() != w.layers.len() {
        return Err(Error::contract(format!(
            "decoder state has {} layers, weights have {}",
            state.layers.len(),
            w.layers.len()
        )));
    }
    let embedded = tape.gather_rows(out.words, prev)?;
    let (context, _) = attend(
        tape,
        &w.attention,
        state.top(),
        &memory.keys,
        &memory.annotations,
        &memory.mask,
    )?;
    let mut input = tape.concat_cols(&[embedded, context])?;
    let mut layers = Vec::with_capacity(w.layers.len());
    for (lw, &(h, c)) in w.layers.iter().zip(&state.layers) {
        let (hn, cn) = lstm_cell(tape, input, h, c, lw)?;
        layers.push((hn, cn));
        input = hn;
    }
    let mut logits = tape.matmul(input, out.proj)?;
    if let Some(b) = out.bias {
        logits = tape.add_bias(logits, b)?;
    }
    Ok((logits, DecoderState { layers, context }))
}

/// Mean label-smoothed cross-entropy over the unmasked positions of
/// `logits[t]` (`B×V`) against `targets[t]`.
pub fn sequence_loss<T: Element>(
    tape: &Tape<T>,
    logits: &[Var],
    targets: &[Vec<usize>],
    mask: &[Vec<bool>],
    smoothing: T,
) -> Result<Var> {
    if logits.len() != targets.len() || logits.len() != mask.len() {
        return Err(Error::shape("logit, target and mask sequences differ in length"));
    }
    let count = mask.iter().flatten().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::contract("every target position is masked"));
    }
    let mut total = None;
    for ((&z, y), m) in logits.iter().zip(targets).zip(mask) {
        let step = tape.smoothed_cross_entropy(z, y, m, smoothing)?;
        total = Some(match total {
            None => step,
            Some(acc) => tape.add(acc, step)?,
        });
    }
    tape.scale(total.expect("nonempty"), T::one() / T::lit(count as f64))
}
