//! JSON import/export of stack weights.
//!
//! Document shape:
//! `{"d":int,"hidden":int,"activation":str,"layers":[{"W_Q":[[...]],...}]}`
//! with row-major nested arrays. Export renders every float with 17
//! significant digits so a round trip reproduces the exact f64 bits.

use serde::Deserialize;

use crate::error::{CoreError, Result};
use crate::numerics::{ActivationKind, Matrix};
use crate::transformer::{AttentionWeights, BlockWeights, MlpWeights};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsDoc {
    d: usize,
    hidden: usize,
    activation: String,
    layers: Vec<LayerDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct LayerDoc {
    W_Q: Vec<Vec<f64>>,
    W_K: Vec<Vec<f64>>,
    W_V: Vec<Vec<f64>>,
    W_O: Vec<Vec<f64>>,
    W_1: Vec<Vec<f64>>,
    W_2: Vec<Vec<f64>>,
}

fn matrix_from_nested(name: &str, rows: usize, cols: usize, data: &[Vec<f64>]) -> Result<Matrix> {
    if data.len() != rows || data.iter().any(|r| r.len() != cols) {
        return Err(CoreError::InvalidInput(format!(
            "{name} must be {rows}x{cols}"
        )));
    }
    Matrix::from_vec(rows, cols, data.iter().flatten().copied().collect())
}

pub fn import_weights_json(json: &str) -> Result<Vec<BlockWeights>> {
    let doc: WeightsDoc = serde_json::from_str(json)
        .map_err(|e| CoreError::InvalidInput(format!("weights document: {e}")))?;
    let kind = ActivationKind::parse(&doc.activation).ok_or_else(|| {
        CoreError::InvalidInput(format!("unknown activation {:?}", doc.activation))
    })?;
    if doc.layers.is_empty() {
        return Err(CoreError::InvalidInput("weights document has no layers".into()));
    }
    let (d, h) = (doc.d, doc.hidden);
    doc.layers
        .iter()
        .map(|l| {
            let attn = AttentionWeights::new(
                matrix_from_nested("W_Q", d, d, &l.W_Q)?,
                matrix_from_nested("W_K", d, d, &l.W_K)?,
                matrix_from_nested("W_V", d, d, &l.W_V)?,
                matrix_from_nested("W_O", d, d, &l.W_O)?,
            )?;
            let mlp = MlpWeights::new(
                matrix_from_nested("W_1", h, d, &l.W_1)?,
                matrix_from_nested("W_2", d, h, &l.W_2)?,
                kind,
            )?;
            BlockWeights::new(attn, mlp)
        })
        .collect()
}

fn push_matrix(out: &mut String, name: &str, m: &Matrix) {
    out.push('"');
    out.push_str(name);
    out.push_str("\":[");
    for i in 0..m.rows() {
        if i > 0 {
            out.push(',');
        }
        out.push('[');
        for (j, e) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{e:.16e}"));
        }
        out.push(']');
    }
    out.push(']');
}

pub fn export_weights_json(stack: &[BlockWeights]) -> Result<String> {
    let first = stack
        .first()
        .ok_or_else(|| CoreError::InvalidInput("cannot export an empty stack".into()))?;
    let (d, h, kind) = (first.dim(), first.mlp.hidden_dim(), first.mlp.kind);
    if stack
        .iter()
        .any(|b| b.dim() != d || b.mlp.hidden_dim() != h || b.mlp.kind != kind)
    {
        return Err(CoreError::InvalidInput(
            "all layers must share d, hidden and activation for export".into(),
        ));
    }
    let mut out = format!("{{\"d\":{d},\"hidden\":{h},\"activation\":\"{}\",\"layers\":[", kind.name());
    for (i, block) in stack.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('{');
        push_matrix(&mut out, "W_Q", &block.attn.w_q);
        out.push(',');
        push_matrix(&mut out, "W_K", &block.attn.w_k);
        out.push(',');
        push_matrix(&mut out, "W_V", &block.attn.w_v);
        out.push(',');
        push_matrix(&mut out, "W_O", &block.attn.w_o);
        out.push(',');
        push_matrix(&mut out, "W_1", &block.mlp.w1);
        out.push(',');
        push_matrix(&mut out, "W_2", &block.mlp.w2);
        out.push('}');
    }
    out.push_str("]}");
    Ok(out)
}
