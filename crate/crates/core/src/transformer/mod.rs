//! The block model: single-head attention with residual, residual MLP, block
//! forward, multi-layer stacks, and full forward traces at a readout position.

mod weights_io;

pub use weights_io::{export_weights_json, import_weights_json};

use crate::error::{CoreError, Result};
use crate::numerics::{
    activation_apply, activation_jacobian_diag, activation_lipschitz, operator_norm, softmax_row,
    ActivationKind, Matrix, Vector, OPERATOR_NORM_TOL,
};

/// Query/key/value/output projections of one attention layer, all d x d.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
}

impl AttentionWeights {
    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix, w_o: Matrix) -> Result<Self> {
        let d = w_q.rows();
        for (name, m) in [("W_Q", &w_q), ("W_K", &w_k), ("W_V", &w_v), ("W_O", &w_o)] {
            if m.rows() != d || m.cols() != d {
                return Err(CoreError::InvalidInput(format!(
                    "{name} must be {d}x{d}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(AttentionWeights { w_q, w_k, w_v, w_o })
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }
}

/// Residual MLP z + W_2 sigma(W_1 z). The paper's blocks use a square hidden
/// layer; rectangular W_1 (hidden x d) is supported as a generalization.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub w1: Matrix,
    pub w2: Matrix,
    pub kind: ActivationKind,
}

impl MlpWeights {
    pub fn new(w1: Matrix, w2: Matrix, kind: ActivationKind) -> Result<Self> {
        if w2.cols() != w1.rows() || w1.cols() != w2.rows() {
            return Err(CoreError::InvalidInput(format!(
                "MLP dimensions disagree: W_1 is {}x{}, W_2 is {}x{}",
                w1.rows(),
                w1.cols(),
                w2.rows(),
                w2.cols()
            )));
        }
        Ok(MlpWeights { w1, w2, kind })
    }

    pub fn dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }
}

/// One Transformer block: attention followed by MLP, both with residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub attn: AttentionWeights,
    pub mlp: MlpWeights,
}

impl BlockWeights {
    pub fn new(attn: AttentionWeights, mlp: MlpWeights) -> Result<Self> {
        if attn.dim() != mlp.dim() {
            return Err(CoreError::InvalidInput(format!(
                "attention dimension {} does not match MLP input dimension {}",
                attn.dim(),
                mlp.dim()
            )));
        }
        Ok(BlockWeights { attn, mlp })
    }

    pub fn dim(&self) -> usize {
        self.attn.dim()
    }
}

/// Context tokens followed by query tokens; the readout position indexes into
/// the query tokens.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    context: Vec<Vector>,
    query: Vec<Vector>,
    readout_index: usize,
}

impl TokenSequence {
    pub fn new(context: Vec<Vector>, query: Vec<Vector>, readout_index: usize) -> Result<Self> {
        if query.is_empty() {
            return Err(CoreError::InvalidInput("query tokens must be nonempty".into()));
        }
        if readout_index >= query.len() {
            return Err(CoreError::InvalidInput(format!(
                "readout index {readout_index} out of range for {} query tokens",
                query.len()
            )));
        }
        let d = query[0].len();
        if context.iter().chain(query.iter()).any(|t| t.len() != d) {
            return Err(CoreError::InvalidInput(
                "all tokens must share one dimension".into(),
            ));
        }
        Ok(TokenSequence {
            context,
            query,
            readout_index,
        })
    }

    /// Single query token, no context.
    pub fn single(x: Vector) -> Self {
        TokenSequence {
            context: Vec::new(),
            query: vec![x],
            readout_index: 0,
        }
    }

    /// Context tokens followed by one query token.
    pub fn with_context(context: Vec<Vector>, x: Vector) -> Result<Self> {
        TokenSequence::new(context, vec![x], 0)
    }

    pub fn dim(&self) -> usize {
        self.query[0].len()
    }

    pub fn len(&self) -> usize {
        self.context.len() + self.query.len()
    }

    pub fn is_empty(&self) -> bool {
        false // query is nonempty by construction
    }

    pub fn context_len(&self) -> usize {
        self.context.len()
    }

    pub fn readout_pos(&self) -> usize {
        self.context.len() + self.readout_index
    }

    /// All tokens in position order (context, then query).
    pub fn tokens(&self) -> Vec<Vector> {
        self.context.iter().chain(self.query.iter()).cloned().collect()
    }
}

/// Which positions may attend to which.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    /// Each position sees itself and everything before it (decoder order).
    Causal,
    /// Every position sees every position.
    Full,
}

impl Visibility {
    fn mask(&self, pos: usize, len: usize) -> Vec<bool> {
        match self {
            Visibility::Causal => (0..len).map(|j| j <= pos).collect(),
            Visibility::Full => vec![true; len],
        }
    }
}

/// Softmax attention row of `pos` over the visible positions: scores are
/// <q_pos, k_j> / sqrt(d). Masked positions get weight exactly 0.
pub fn attention_row(
    states: &[Vector],
    pos: usize,
    visible: &[bool],
    w: &AttentionWeights,
) -> Result<Vector> {
    if pos >= states.len() || visible.len() != states.len() {
        return Err(CoreError::InvalidInput(
            "attention position/mask does not match sequence".into(),
        ));
    }
    if !visible[pos] {
        return Err(CoreError::InvalidInput(
            "readout position must be visible to itself".into(),
        ));
    }
    let d = w.dim() as f64;
    let q = w.w_q.matvec(&states[pos]);
    let visible_idx: Vec<usize> = (0..states.len()).filter(|&j| visible[j]).collect();
    let scores: Vector = visible_idx
        .iter()
        .map(|&j| q.dot(&w.w_k.matvec(&states[j])) / d.sqrt())
        .collect();
    let probs = softmax_row(&scores)?;
    let mut row = Vector::zeros(states.len());
    for (k, &j) in visible_idx.iter().enumerate() {
        row[j] = probs[k];
    }
    Ok(row)
}

/// Attention output with residual at `pos`: token + W_O sum_j alpha_j v_j.
pub fn attn_with_residual(
    states: &[Vector],
    pos: usize,
    visible: &[bool],
    w: &AttentionWeights,
) -> Result<Vector> {
    let row = attention_row(states, pos, visible, w)?;
    let mut mix = Vector::zeros(w.dim());
    for (j, state) in states.iter().enumerate() {
        if row[j] != 0.0 {
            mix = mix.add_scaled(row[j], &w.w_v.matvec(state));
        }
    }
    Ok(&states[pos] + &w.w_o.matvec(&mix))
}

/// z + W_2 sigma(W_1 z)
pub fn mlp_forward(z: &Vector, mlp: &MlpWeights) -> Vector {
    let hidden = activation_apply(mlp.kind, &mlp.w1.matvec(z));
    z + &mlp.w2.matvec(&hidden)
}

/// I + W_2 diag(sigma'(W_1 z)) W_1
pub fn mlp_jacobian(z: &Vector, mlp: &MlpWeights) -> Matrix {
    let diag = activation_jacobian_diag(mlp.kind, &mlp.w1.matvec(z));
    let d = mlp.dim();
    let mut jac = Matrix::identity(d);
    // W_2 * diag * W_1 accumulated without forming the diagonal matrix
    for i in 0..d {
        for h in 0..mlp.hidden_dim() {
            let c = mlp.w2[(i, h)] * diag[h];
            if c == 0.0 {
                continue;
            }
            for j in 0..d {
                jac[(i, j)] += c * mlp.w1[(h, j)];
            }
        }
    }
    jac
}

/// 1 + L_sigma ||W_2|| ||W_1||, a Lipschitz constant of the residual MLP.
pub fn mlp_lipschitz(mlp: &MlpWeights) -> Result<f64> {
    let n1 = operator_norm(&mlp.w1, OPERATOR_NORM_TOL)?;
    let n2 = operator_norm(&mlp.w2, OPERATOR_NORM_TOL)?;
    Ok(1.0 + activation_lipschitz(mlp.kind) * n2 * n1)
}

/// One block at one position: MLP(Attn(pos)).
pub fn block_forward_at(
    states: &[Vector],
    pos: usize,
    visible: &[bool],
    block: &BlockWeights,
) -> Result<Vector> {
    let z = attn_with_residual(states, pos, visible, &block.attn)?;
    Ok(mlp_forward(&z, &block.mlp))
}

/// Everything recorded per layer while running a stack.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Attention row at the readout position (full sequence length, zeros on
    /// masked positions).
    pub attn_row: Vector,
    /// Value vector W_V h of every position, from the pre-layer states.
    pub values: Vec<Vector>,
    /// Post-attention vector (with residual) at the readout position.
    pub post_attn: Vector,
    /// Hidden state of every position after this layer.
    pub hidden: Vec<Vector>,
}

/// Full forward record of one (sequence, stack) run.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Layer-0 states (the input embeddings).
    pub embeddings: Vec<Vector>,
    pub layers: Vec<LayerTrace>,
    pub readout_pos: usize,
}

impl ForwardTrace {
    /// Final readout: hidden state at the readout position after the last
    /// layer.
    pub fn output(&self) -> &Vector {
        match self.layers.last() {
            Some(layer) => &layer.hidden[self.readout_pos],
            None => &self.embeddings[self.readout_pos],
        }
    }

    /// States entering layer `l` (1-based).
    pub fn states_before(&self, l: usize) -> &[Vector] {
        if l == 1 {
            &self.embeddings
        } else {
            &self.layers[l - 2].hidden
        }
    }

    /// Hidden state of the readout position after layer `l` (1-based);
    /// `l = 0` gives the embedding.
    pub fn readout_after(&self, l: usize) -> &Vector {
        if l == 0 {
            &self.embeddings[self.readout_pos]
        } else {
            &self.layers[l - 1].hidden[self.readout_pos]
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

/// Run all positions through all layers, recording the trace.
pub fn stack_forward(
    seq: &TokenSequence,
    stack: &[BlockWeights],
    visibility: Visibility,
) -> Result<ForwardTrace> {
    if stack.is_empty() {
        return Err(CoreError::InvalidInput("stack must have at least one block".into()));
    }
    let d = seq.dim();
    if stack.iter().any(|b| b.dim() != d) {
        return Err(CoreError::InvalidInput(
            "all blocks must match the token dimension".into(),
        ));
    }
    let embeddings = seq.tokens();
    let len = embeddings.len();
    let readout_pos = seq.readout_pos();
    let mut states = embeddings.clone();
    let mut layers = Vec::with_capacity(stack.len());
    for block in stack {
        let values: Vec<Vector> = states.iter().map(|h| block.attn.w_v.matvec(h)).collect();
        let mut next = Vec::with_capacity(len);
        let mut readout_row = None;
        let mut readout_post_attn = None;
        for pos in 0..len {
            let mask = visibility.mask(pos, len);
            let row = attention_row(&states, pos, &mask, &block.attn)?;
            let mut mix = Vector::zeros(d);
            for (j, v) in values.iter().enumerate() {
                if row[j] != 0.0 {
                    mix = mix.add_scaled(row[j], v);
                }
            }
            let z = &states[pos] + &block.attn.w_o.matvec(&mix);
            next.push(mlp_forward(&z, &block.mlp));
            if pos == readout_pos {
                readout_row = Some(row);
                readout_post_attn = Some(z);
            }
        }
        layers.push(LayerTrace {
            attn_row: readout_row.expect("readout position processed"),
            values,
            post_attn: readout_post_attn.expect("readout position processed"),
            hidden: next.clone(),
        });
        states = next;
    }
    Ok(ForwardTrace {
        embeddings,
        layers,
        readout_pos,
    })
}
