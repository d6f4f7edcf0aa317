//! Scaled dot-product and multi-head attention, sinusoidal positions and
//! Pre-LN encoder/decoder blocks over batched `[batch, seq, d_model]` inputs.

use std::cell::RefCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{AttnMask, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

pub const LN_EPS: f64 = 1e-5;

/// Forward-pass context: the tape, the parameters it reads and the dropout
/// setting. Each parameter enters the tape at most once.
pub struct Graph<'t, 's> {
    tape: &'t Tape,
    store: &'s ParamStore,
    cache: RefCell<Vec<Option<Var<'t>>>>,
    dropout: f64,
    rng: RefCell<Option<ChaCha8Rng>>,
}

impl<'t, 's> Graph<'t, 's> {
    /// Evaluation mode: dropout is the identity.
    pub fn eval(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Graph {
            tape,
            store,
            cache: RefCell::new(vec![None; store.len()]),
            dropout: 0.0,
            rng: RefCell::new(None),
        }
    }

    /// Training mode with the given dropout rate.
    pub fn train(tape: &'t Tape, store: &'s ParamStore, dropout: f64, rng: ChaCha8Rng) -> Self {
        Graph {
            dropout,
            rng: RefCell::new(Some(rng)),
            ..Graph::eval(tape, store)
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Var<'t> {
        let mut cache = self.cache.borrow_mut();
        *cache[id.0].get_or_insert_with(|| self.tape.param(self.store, id))
    }

    pub fn dropout(&self, x: Var<'t>) -> Var<'t> {
        match self.rng.borrow_mut().as_mut() {
            Some(rng) if self.dropout > 0.0 => x.dropout(self.dropout, rng),
            _ => x,
        }
    }

    /// Draws standard normal noise from the training stream, or `None` in
    /// evaluation mode.
    pub fn noise(&self, shape: &[usize]) -> Option<Tensor> {
        self.rng.borrow_mut().as_mut().map(|rng| Tensor::randn(shape, rng))
    }

    /// Consumes the context, returning the training stream.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.rng.into_inner()
    }
}

/// Glorot-uniform matrix.
pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::uniform(&[rows, cols], -limit, limit, rng)
}

/// Sinusoidal table `[len, d_model]`: `sin` on even columns, `cos` on odd,
/// wavelengths growing geometrically up to `10000·2π`.
pub fn positional_encoding(len: usize, d_model: usize) -> Tensor {
    let mut data = vec![0.0; len * d_model];
    for pos in 0..len {
        for i in (0..d_model).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d_model as f64);
            data[pos * d_model + i] = angle.sin();
            if i + 1 < d_model {
                data[pos * d_model + i + 1] = angle.cos();
            }
        }
    }
    Tensor::new(&[len, d_model], data).expect("table length matches its shape")
}

/// `softmax(q·kᵀ / √d_k)·v` over the last two axes. Returns the output and
/// the attention weights `[.., q_len, k_len]`.
pub fn scaled_dot_attention<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    mask: Option<&AttnMask>,
) -> Result<(Var<'t>, Var<'t>), TensorError> {
    let dk = *q.shape().last().unwrap_or(&1);
    let scores = q.matmul_t(k)?.scale(1.0 / (dk as f64).sqrt());
    let weights = match mask {
        Some(m) => scores.softmax_masked(m)?,
        None => scores.softmax(),
    };
    Ok((weights.matmul(v)?, weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        LayerNormParams {
            gamma: store.insert(&format!("{prefix}.gamma"), Tensor::ones(&[d])),
            beta: store.insert(&format!("{prefix}.beta"), Tensor::zeros(&[d])),
        }
    }

    pub fn apply<'t>(&self, g: &Graph<'t, '_>, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        x.layer_norm(g.param(self.gamma), g.param(self.beta), LN_EPS)
    }
}

/// Query, key, value and output projections (no biases). The `d×d` query,
/// key and value matrices hold all heads side by side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, heads: usize, rng: &mut R) -> Self {
        assert!(
            heads > 0 && d.is_multiple_of(heads),
            "d_model must be divisible by heads"
        );
        AttentionParams {
            wq: store.insert(&format!("{prefix}.wq"), glorot(d, d, rng)),
            wk: store.insert(&format!("{prefix}.wk"), glorot(d, d, rng)),
            wv: store.insert(&format!("{prefix}.wv"), glorot(d, d, rng)),
            wo: store.insert(&format!("{prefix}.wo"), glorot(d, d, rng)),
            heads,
        }
    }
}

fn split_heads<'t>(x: Var<'t>, heads: usize) -> Result<Var<'t>, TensorError> {
    let s = x.shape();
    let (b, t, d) = (s[0], s[1], s[2]);
    x.reshape(&[b, t, heads, d / heads])?.permute(&[0, 2, 1, 3])
}

/// Multi-head attention of `xq` over `xkv` (both `[batch, len, d]`).
/// Returns the projected output and weights `[batch, heads, q_len, k_len]`.
pub fn multi_head_attention<'t>(
    g: &Graph<'t, '_>,
    xq: Var<'t>,
    xkv: Var<'t>,
    p: &AttentionParams,
    mask: Option<&AttnMask>,
) -> Result<(Var<'t>, Var<'t>), TensorError> {
    let qs = xq.shape();
    let ks = xkv.shape();
    if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != ks[2] {
        return Err(TensorError::ShapeMismatch {
            op: "multi_head_attention",
            left: qs,
            right: ks,
        });
    }
    if !qs[2].is_multiple_of(p.heads) {
        return Err(TensorError::ShapeMismatch {
            op: "multi_head_attention",
            left: qs,
            right: vec![p.heads],
        });
    }
    let (b, tq, d) = (qs[0], qs[1], qs[2]);
    let q = split_heads(xq.matmul(g.param(p.wq))?, p.heads)?;
    let k = split_heads(xkv.matmul(g.param(p.wk))?, p.heads)?;
    let v = split_heads(xkv.matmul(g.param(p.wv))?, p.heads)?;
    let (ctx, weights) = scaled_dot_attention(q, k, v, mask)?;
    let merged = ctx.permute(&[0, 2, 1, 3])?.reshape(&[b, tq, d])?;
    Ok((merged.matmul(g.param(p.wo))?, weights))
}

/// Two-layer ReLU network `d → d_ff → d` with biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedForwardParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForwardParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, d_ff: usize, rng: &mut R) -> Self {
        FeedForwardParams {
            w1: store.insert(&format!("{prefix}.w1"), glorot(d, d_ff, rng)),
            b1: store.insert(&format!("{prefix}.b1"), Tensor::zeros(&[d_ff])),
            w2: store.insert(&format!("{prefix}.w2"), glorot(d_ff, d, rng)),
            b2: store.insert(&format!("{prefix}.b2"), Tensor::zeros(&[d])),
        }
    }

    pub fn apply<'t>(&self, g: &Graph<'t, '_>, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        let h = x.matmul(g.param(self.w1))?.add(g.param(self.b1))?.relu();
        h.matmul(g.param(self.w2))?.add(g.param(self.b2))
    }
}

/// One Pre-LN block. Decoder blocks carry a cross-attention sublayer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockParams {
    pub self_attn: AttentionParams,
    pub ln_self: LayerNormParams,
    pub cross: Option<(AttentionParams, LayerNormParams)>,
    pub ff: FeedForwardParams,
    pub ln_ff: LayerNormParams,
}

impl BlockParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        d_ff: usize,
        heads: usize,
        with_cross: bool,
        rng: &mut R,
    ) -> Self {
        let self_attn = AttentionParams::init(store, &format!("{prefix}.self"), d, heads, rng);
        let ln_self = LayerNormParams::init(store, &format!("{prefix}.ln_self"), d);
        let cross = with_cross.then(|| {
            (
                AttentionParams::init(store, &format!("{prefix}.cross"), d, heads, rng),
                LayerNormParams::init(store, &format!("{prefix}.ln_cross"), d),
            )
        });
        let ff = FeedForwardParams::init(store, &format!("{prefix}.ff"), d, d_ff, rng);
        let ln_ff = LayerNormParams::init(store, &format!("{prefix}.ln_ff"), d);
        BlockParams {
            self_attn,
            ln_self,
            cross,
            ff,
            ln_ff,
        }
    }
}

/// How a block attends.
#[derive(Clone, Copy)]
pub enum BlockMode<'a, 't> {
    /// Self-attention restricted by a key mask (typically padding).
    EncoderSelf(Option<&'a AttnMask>),
    /// Causal self-attention, no cross-attention.
    DecoderSelfCausal,
    /// Causal self-attention followed by attention over `memory`.
    DecoderCross {
        memory: Var<'t>,
        memory_mask: Option<&'a AttnMask>,
    },
}

/// Block output plus the self-attention weights (and cross-attention
/// weights in cross mode).
pub struct BlockOutput<'t> {
    pub out: Var<'t>,
    pub self_weights: Var<'t>,
    pub cross_weights: Option<Var<'t>>,
}

/// `y = x + Attn(LN(x))`, optionally `y += CrossAttn(LN(y), memory)`, then
/// `y + FF(LN(y))`. Dropout applies to every sublayer output.
pub fn pre_ln_block<'t>(
    g: &Graph<'t, '_>,
    x: Var<'t>,
    p: &BlockParams,
    mode: BlockMode<'_, 't>,
) -> Result<BlockOutput<'t>, TensorError> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "pre_ln_block",
            left: s,
            right: vec![0, 0, 0],
        });
    }
    let causal;
    let self_mask = match mode {
        BlockMode::EncoderSelf(m) => m,
        BlockMode::DecoderSelfCausal | BlockMode::DecoderCross { .. } => {
            causal = AttnMask::causal(s[0], s[1]);
            Some(&causal)
        }
    };
    let h = p.ln_self.apply(g, x)?;
    let (a, self_weights) = multi_head_attention(g, h, h, &p.self_attn, self_mask)?;
    let mut y = x.add(g.dropout(a))?;
    let mut cross_weights = None;
    if let BlockMode::DecoderCross { memory, memory_mask } = mode {
        let (attn, ln) = p.cross.as_ref().ok_or(TensorError::ShapeMismatch {
            op: "pre_ln_block: block has no cross-attention",
            left: s.clone(),
            right: memory.shape(),
        })?;
        let h = ln.apply(g, y)?;
        let (c, w) = multi_head_attention(g, h, memory, attn, memory_mask)?;
        y = y.add(g.dropout(c))?;
        cross_weights = Some(w);
    }
    let h = p.ln_ff.apply(g, y)?;
    let f = p.ff.apply(g, h)?;
    Ok(BlockOutput {
        out: y.add(g.dropout(f))?,
        self_weights,
        cross_weights,
    })
}
