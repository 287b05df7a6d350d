use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::tensor::{ParamId, ParamStore, SparseMatrix, Tape, TensorError, Var};

/// Affine layer `x W + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

/// Dense layers with ReLU between them and a linear final layer.
pub fn mlp(tape: &mut Tape, params: &ParamStore, layers: &[Dense], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        let w = tape.param(params, layer.w);
        let b = tape.param(params, layer.b);
        let xw = tape.matmul(h, w)?;
        h = tape.add_row(xw, b)?;
        if i + 1 < layers.len() {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Two-layer GCN over the normalized affinity graph:
/// `ReLU(Â · ReLU(Â · X · W1) · W2)`.
pub fn global_encode(
    tape: &mut Tape,
    a_hat: &Arc<SparseMatrix>,
    signals: &Arc<SparseMatrix>,
    w1: Var,
    w2: Var,
) -> Result<Var> {
    if a_hat.rows() != a_hat.cols() || a_hat.rows() != signals.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "global_encode",
            left: vec![a_hat.rows(), a_hat.cols()],
            right: vec![signals.rows(), signals.cols()],
        }
        .into());
    }
    let xw = tape.spmm(signals, w1)?;
    let h1 = tape.spmm(a_hat, xw)?;
    let h1 = tape.relu(h1)?;
    let hw = tape.matmul(h1, w2)?;
    let h2 = tape.spmm(a_hat, hw)?;
    Ok(tape.relu(h2)?)
}

/// Self-loop GCN layer `ReLU(P · h · W)` with `P` from
/// [`crate::molgraph::MolecularGraph::propagation`].
pub fn local_gcn_layer(
    tape: &mut Tape,
    propagation: &Arc<SparseMatrix>,
    h: Var,
    w: Var,
) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let p = tape.spmm(propagation, hw)?;
    Ok(tape.relu(p)?)
}

/// `z_v = (h_v + g) ∥ (h_v - g)` for every node row `h_v`.
pub fn message_broadcast(tape: &mut Tape, h: Var, g: Var) -> Result<Var> {
    let (hw, gw) = (tape.value(h).cols(), tape.value(g).cols());
    if hw != gw || tape.value(g).rows() != 1 {
        return Err(ModelError::Config(format!(
            "broadcast needs a single global row of the local width {hw}, got shape {:?}",
            tape.value(g).shape()
        )));
    }
    let plus = tape.add_row(h, g)?;
    let minus = tape.sub_row(h, g)?;
    Ok(tape.concat_cols(&[plus, minus])?)
}

/// Mean over node rows.
pub fn readout_pool(tape: &mut Tape, states: Var) -> Result<Var> {
    if tape.value(states).rows() == 0 {
        return Err(ModelError::Graph("readout of an empty graph".into()));
    }
    Ok(tape.mean_rows(states)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn broadcast_identities() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let zero = tape.constant(Tensor::zeros(&[1, 2]));
        let z = message_broadcast(&mut tape, h, zero).unwrap();
        assert_eq!(tape.value(z).row(0), &[1.0, -2.0, 1.0, -2.0]);
        let g = tape.constant(Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap());
        let z = message_broadcast(&mut tape, h, g).unwrap();
        assert_eq!(tape.value(z).row(0), &[2.0, -4.0, 0.0, 0.0]);
        let bad = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(message_broadcast(&mut tape, h, bad).is_err());
    }

    #[test]
    fn two_node_global_encoding() {
        // Single edge of weight 1: Â = [[0, 1], [1, 0]]; X = I; W1 = [[1], [2]], W2 = [[1]].
        let a = Arc::new(SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap());
        let x = Arc::new(SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap());
        let mut tape = Tape::new();
        let w1 = tape.constant(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let w2 = tape.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        let h = global_encode(&mut tape, &a, &x, w1, w2).unwrap();
        // X W1 = [1, 2]; Â(.) = [2, 1]; Â(.) = [1, 2]
        assert_eq!(tape.value(h).data(), &[1.0, 2.0]);
    }

    #[test]
    fn isolated_nodes_encode_to_zero() {
        let a = Arc::new(SparseMatrix::from_triplets(2, 2, &[]).unwrap());
        let x = Arc::new(SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap());
        let mut tape = Tape::new();
        let w1 = tape.constant(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let w2 = tape.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        let h = global_encode(&mut tape, &a, &x, w1, w2).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0, 0.0]);
    }
}
