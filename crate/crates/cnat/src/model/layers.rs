//! Transformer building blocks shared by the C-NAT model, the causal LM
//! and the judge classifier: linear layers, multi-head attention,
//! feed-forward blocks, residual layer norm, sinusoidal positional
//! encodings and attention masks.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numcore::{Graph, NodeId, ParamId, ParamStore, Scalar};

/// Binds store parameters into a graph, once each, as trainable leaves or
/// (when frozen) as constants.
pub struct Bind<'a, F: Scalar> {
    store: &'a ParamStore<F>,
    frozen: bool,
    cache: RefCell<HashMap<ParamId, NodeId>>,
}

impl<'a, F: Scalar> Bind<'a, F> {
    pub fn trainable(store: &'a ParamStore<F>) -> Self {
        Self {
            store,
            frozen: false,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn frozen(store: &'a ParamStore<F>) -> Self {
        Self {
            store,
            frozen: true,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn node(&self, g: &mut Graph<F>, id: ParamId) -> NodeId {
        if let Some(&n) = self.cache.borrow().get(&id) {
            return n;
        }
        let p = self.store.get(id);
        let n = if self.frozen {
            g.constant(p.data.clone(), p.shape)
        } else {
            g.param(self.store, id)
        };
        self.cache.borrow_mut().insert(id, n);
        n
    }
}

/// Xavier-uniform init.
pub fn xavier<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<F> {
    let lim = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols)
        .map(|_| F::from_f64(rng.gen_range(-lim..lim)))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        let w = store.add(format!("{name}.w"), [d_in, d_out], xavier(rng, d_in, d_out));
        let b = store.add(format!("{name}.b"), [1, d_out], vec![F::zero(); d_out]);
        Self { w, b }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, bind: &Bind<F>, x: NodeId) -> NodeId {
        let w = bind.node(g, self.w);
        let b = bind.node(g, self.b);
        let y = g.matmul(x, w);
        g.add_bias(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), [1, d], vec![F::one(); d]);
        let beta = store.add(format!("{name}.beta"), [1, d], vec![F::zero(); d]);
        Self { gamma, beta }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, bind: &Bind<F>, x: NodeId) -> NodeId {
        let gamma = bind.node(g, self.gamma);
        let beta = bind.node(g, self.beta);
        g.layer_norm(x, gamma, beta, 1e-5)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        heads: usize,
    ) -> Self {
        assert_eq!(d % heads, 0, "d_model must divide by head count");
        Self {
            wq: Linear::new(store, rng, &format!("{name}.q"), d, d),
            wk: Linear::new(store, rng, &format!("{name}.k"), d, d),
            wv: Linear::new(store, rng, &format!("{name}.v"), d, d),
            wo: Linear::new(store, rng, &format!("{name}.o"), d, d),
            heads,
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        bind: &Bind<F>,
        q_in: NodeId,
        k_in: NodeId,
        v_in: NodeId,
        mask: Option<NodeId>,
    ) -> NodeId {
        self.forward_with_weights(g, bind, q_in, k_in, v_in, mask).0
    }

    /// Returns the output and each head's attention weight matrix.
    pub fn forward_with_weights<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        bind: &Bind<F>,
        q_in: NodeId,
        k_in: NodeId,
        v_in: NodeId,
        mask: Option<NodeId>,
    ) -> (NodeId, Vec<NodeId>) {
        let d = g.shape(q_in)[1];
        let dk = d / self.heads;
        let q = self.wq.forward(g, bind, q_in);
        let k = self.wk.forward(g, bind, k_in);
        let v = self.wv.forward(g, bind, v_in);
        let scale = F::from_f64(1.0 / (dk as f64).sqrt());
        let mut ctx_heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dk, (h + 1) * dk);
            let kh = g.slice_cols(k, h * dk, (h + 1) * dk);
            let vh = g.slice_cols(v, h * dk, (h + 1) * dk);
            let scores = g.matmul_bt(qh, kh);
            let mut scores = g.scale(scores, scale);
            if let Some(m) = mask {
                scores = g.add(scores, m);
            }
            let attn = g
                .softmax_rows(scores)
                .expect("attention scores finite");
            weights.push(attn);
            ctx_heads.push(g.matmul(attn, vh));
        }
        let mut ctx = ctx_heads[0];
        for &h in &ctx_heads[1..] {
            ctx = g.concat_cols(ctx, h);
        }
        (self.wo.forward(g, bind, ctx), weights)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

impl FeedForward {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        d_ff: usize,
    ) -> Self {
        Self {
            w1: Linear::new(store, rng, &format!("{name}.ff1"), d, d_ff),
            w2: Linear::new(store, rng, &format!("{name}.ff2"), d_ff, d),
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, bind: &Bind<F>, x: NodeId) -> NodeId {
        let h = self.w1.forward(g, bind, x);
        let h = g.relu(h);
        self.w2.forward(g, bind, h)
    }
}

/// Encoder layer: self-attention + feed-forward, post-norm residuals.
/// With a causal mask it doubles as a decoder-only LM layer.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ff: FeedForward,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
}

impl EncoderLayer {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        heads: usize,
        d_ff: usize,
    ) -> Self {
        Self {
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), d, heads),
            ff: FeedForward::new(store, rng, &format!("{name}.ff"), d, d_ff),
            ln1: LayerNormParams::new(store, &format!("{name}.ln1"), d),
            ln2: LayerNormParams::new(store, &format!("{name}.ln2"), d),
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        bind: &Bind<F>,
        x: NodeId,
        mask: Option<NodeId>,
        dropout: f64,
    ) -> NodeId {
        let a = self.attn.forward(g, bind, x, x, x, mask);
        let a = g.dropout(a, dropout);
        let x = g.add(x, a);
        let x = self.ln1.forward(g, bind, x);
        let f = self.ff.forward(g, bind, x);
        let f = g.dropout(f, dropout);
        let x = g.add(x, f);
        self.ln2.forward(g, bind, x)
    }
}

/// Decoder layer: self-attention (mode mask), positional attention
/// (queries and keys from the positional encoding, values from the
/// previous layer), cross-attention over the encoder output, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub pos_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub ff: FeedForward,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
    pub ln3: LayerNormParams,
    pub ln4: LayerNormParams,
}

impl DecoderLayer {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        heads: usize,
        d_ff: usize,
    ) -> Self {
        Self {
            self_attn: MultiHeadAttention::new(store, rng, &format!("{name}.self"), d, heads),
            pos_attn: MultiHeadAttention::new(store, rng, &format!("{name}.pos"), d, heads),
            cross_attn: MultiHeadAttention::new(store, rng, &format!("{name}.cross"), d, heads),
            ff: FeedForward::new(store, rng, &format!("{name}.ff"), d, d_ff),
            ln1: LayerNormParams::new(store, &format!("{name}.ln1"), d),
            ln2: LayerNormParams::new(store, &format!("{name}.ln2"), d),
            ln3: LayerNormParams::new(store, &format!("{name}.ln3"), d),
            ln4: LayerNormParams::new(store, &format!("{name}.ln4"), d),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        bind: &Bind<F>,
        x: NodeId,
        pe: NodeId,
        enc_h: NodeId,
        self_mask: Option<NodeId>,
        dropout: f64,
    ) -> NodeId {
        let a = self.self_attn.forward(g, bind, x, x, x, self_mask);
        let a = g.dropout(a, dropout);
        let x = g.add(x, a);
        let x = self.ln1.forward(g, bind, x);

        let p = self.pos_attn.forward(g, bind, pe, pe, x, self_mask);
        let p = g.dropout(p, dropout);
        let x = g.add(x, p);
        let x = self.ln2.forward(g, bind, x);

        let c = self.cross_attn.forward(g, bind, x, enc_h, enc_h, None);
        let c = g.dropout(c, dropout);
        let x = g.add(x, c);
        let x = self.ln3.forward(g, bind, x);

        let f = self.ff.forward(g, bind, x);
        let f = g.dropout(f, dropout);
        let x = g.add(x, f);
        self.ln4.forward(g, bind, x)
    }
}

/// Sinusoidal positional encoding table, `[t_max, d]` row-major.
pub fn sinusoidal_pe(t_max: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; t_max * d];
    for t in 0..t_max {
        for i in 0..d / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            pe[t * d + 2 * i] = (t as f64 * freq).sin();
            pe[t * d + 2 * i + 1] = (t as f64 * freq).cos();
        }
    }
    pe
}

/// Decode mode of the self-attention mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Nar,
    Ar,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Nar => write!(f, "nar"),
            Mode::Ar => write!(f, "ar"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nar" => Ok(Mode::Nar),
            "ar" => Ok(Mode::Ar),
            other => Err(format!("unknown mode `{other}` (expected nar|ar)")),
        }
    }
}

/// `[t, t]` allowed-attention pattern. NAR: every position attends every
/// position; AR: position `t` attends positions `<= t`.
pub fn build_self_attention_mask(t: usize, mode: Mode) -> Vec<bool> {
    let mut mask = vec![true; t * t];
    if mode == Mode::Ar {
        for i in 0..t {
            for j in i + 1..t {
                mask[i * t + j] = false;
            }
        }
    }
    mask
}

const MASK_NEG: f64 = -1e9;

/// Additive mask node: 0 where allowed, a large negative where not.
pub fn mask_node<F: Scalar>(g: &mut Graph<F>, allowed: &[bool], t: usize) -> NodeId {
    let data: Vec<F> = allowed
        .iter()
        .map(|&a| if a { F::zero() } else { F::from_f64(MASK_NEG) })
        .collect();
    g.constant(data, [t, t])
}
