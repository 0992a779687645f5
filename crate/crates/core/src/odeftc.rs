//! ODEFTC nodes: a local Kalman-Bucy-like filter per sensor, coupled to its
//! neighbors through estimate averaging and through the information-matrix
//! consensus of [`crate::consensus`].
//!
//! Rounds are synchronous: every node reads the messages its neighbors sent
//! at step `k` while computing step `k + 1`.

use crate::consensus::{ConsensusParams, ConsensusState, Discretization};
use crate::error::{invalid, Error, Result};
use crate::graph::GraphTopology;
use crate::linalg::{is_positive_definite, symmetrize_in_place, Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub xhat: Vector,
    pub p: Matrix,
    /// Gain used in the most recent step.
    pub gain: Matrix,
}

impl NodeState {
    pub fn new(xhat: Vector, p: Matrix, output_dim: usize) -> Self {
        let n = xhat.len();
        Self { xhat, p, gain: Matrix::zeros(n, output_dim) }
    }
}

/// What a node sends to each neighbor every round.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborMessage {
    pub sender: usize,
    pub xhat: Vector,
    pub zhat: Matrix,
}

impl NeighborMessage {
    /// Flat little-endian layout: `sender: u64`, `n: u64`, `xhat` (n f64),
    /// `zhat` row-major (n*n f64).
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.xhat.len();
        let mut out = Vec::with_capacity(16 + 8 * (n + n * n));
        out.extend_from_slice(&(self.sender as u64).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for v in self.xhat.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for i in 0..n {
            for j in 0..n {
                out.extend_from_slice(&self.zhat[(i, j)].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |k: usize| -> Result<[u8; 8]> {
            bytes
                .get(8 * k..8 * (k + 1))
                .map(|s| s.try_into().expect("slice of length 8"))
                .ok_or_else(|| Error::Message(format!("truncated at word {k}")))
        };
        let sender = u64::from_le_bytes(word(0)?) as usize;
        let n = u64::from_le_bytes(word(1)?) as usize;
        let expected = 8 * (2 + n + n * n);
        if bytes.len() != expected {
            return Err(Error::Message(format!("expected {expected} bytes for n = {n}, got {}", bytes.len())));
        }
        let float = |k: usize| f64::from_le_bytes(word(k).expect("length checked"));
        let xhat = Vector::from_fn(n, |i, _| float(2 + i));
        let zhat = Matrix::from_fn(n, n, |i, j| float(2 + n + i * n + j));
        Ok(Self { sender, xhat, zhat })
    }
}

/// Snapshot of the node's current estimate and published information matrix.
pub fn make_message(state: &NodeState, zhat: &Matrix, sender: usize) -> NeighborMessage {
    NeighborMessage { sender, xhat: state.xhat.clone(), zhat: zhat.clone() }
}

/// `K_i = N P_i C_i^T R_i^{-1}`.
pub fn local_gain(p: &Matrix, c: &Matrix, r: &Matrix, nodes: usize) -> Result<Matrix> {
    Ok(crate::centralized::central_gain(p, c, r)? * nodes as f64)
}

/// Sampled local model for one node.
#[derive(Debug, Clone)]
pub struct NodeInputs<'a> {
    pub a: &'a Matrix,
    pub w: &'a Matrix,
    pub c: &'a Matrix,
    pub r_inv: &'a Matrix,
}

/// Everything a node needs from the network for one step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub id: usize,
    pub neighbors: &'a [usize],
    pub nodes: usize,
    pub kappa: f64,
    pub h: f64,
}

/// One explicit Euler step of the node filter.
///
/// `zhat` is the node's own consensus output; `msgs` must hold exactly one
/// message per neighbor. Loss of positive definiteness in `P_i` is not an
/// error here; callers observe it through [`is_positive_definite`].
pub fn node_step(
    state: &NodeState,
    zhat: &Matrix,
    y: &Vector,
    msgs: &[&NeighborMessage],
    inputs: &NodeInputs<'_>,
    ctx: &StepContext<'_>,
) -> Result<NodeState> {
    if !(ctx.h > 0.0) {
        return Err(invalid("h", format!("must be positive, got {}", ctx.h)));
    }
    for msg in msgs {
        if !ctx.neighbors.contains(&msg.sender) {
            return Err(Error::UnexpectedMessage { node: ctx.id, sender: msg.sender });
        }
    }
    let mut coupling = Vector::zeros(state.xhat.len());
    for &neighbor in ctx.neighbors {
        let mut matching = msgs.iter().filter(|m| m.sender == neighbor);
        let msg = matching.next().ok_or(Error::MissingNeighborMessage { node: ctx.id, neighbor })?;
        if matching.next().is_some() {
            return Err(Error::Message(format!("node {} got two messages from {neighbor}", ctx.id)));
        }
        coupling += &msg.xhat - &state.xhat;
    }

    let gain = &state.p * inputs.c.transpose() * inputs.r_inv * ctx.nodes as f64;
    let innovation = y - inputs.c * &state.xhat;
    let drift = inputs.a * &state.xhat + &gain * innovation + &state.p * coupling * ctx.kappa;
    let xhat = &state.xhat + drift * ctx.h;
    let mut p = &state.p + crate::centralized::riccati_rhs(&state.p, inputs.a, inputs.w, zhat) * ctx.h;
    symmetrize_in_place(&mut p);
    Ok(NodeState { xhat, p, gain })
}

/// First step at which a node's covariance stopped being positive definite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndefiniteEvent {
    pub step: usize,
    pub t: f64,
}

/// All nodes of one network plus the information-matrix consensus.
#[derive(Debug, Clone)]
pub struct Network {
    graph: GraphTopology,
    nodes: Vec<NodeState>,
    consensus: ConsensusState,
    kappa: f64,
    params: ConsensusParams,
    scheme: Discretization,
    indefinite: Vec<Option<IndefiniteEvent>>,
}

impl Network {
    pub fn new(
        graph: GraphTopology,
        nodes: Vec<NodeState>,
        z_initial: &[Matrix],
        kappa: f64,
        params: ConsensusParams,
        scheme: Discretization,
    ) -> Result<Self> {
        if nodes.len() != graph.node_count() || z_initial.len() != graph.node_count() {
            return Err(Error::Dimension(format!(
                "graph has {} nodes, got {} node states and {} information matrices",
                graph.node_count(),
                nodes.len(),
                z_initial.len()
            )));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(invalid("kappa", format!("must be non-negative, got {kappa}")));
        }
        let count = nodes.len();
        Ok(Self {
            graph,
            nodes,
            consensus: ConsensusState::new(z_initial),
            kappa,
            params,
            scheme,
            indefinite: vec![None; count],
        })
    }

    pub fn graph(&self) -> &GraphTopology {
        &self.graph
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn consensus(&self) -> &ConsensusState {
        &self.consensus
    }

    pub fn indefinite_events(&self) -> &[Option<IndefiniteEvent>] {
        &self.indefinite
    }

    pub fn messages(&self) -> Vec<NeighborMessage> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, node)| make_message(node, self.consensus.zhat(i), i))
            .collect()
    }

    /// Advance every node and the consensus integrators from step `k` to `k + 1`.
    /// `z_next` is the local information at the new time.
    pub fn step(
        &mut self,
        ys: &[Vector],
        inputs: &[NodeInputs<'_>],
        z_next: &[Matrix],
        h: f64,
        k: usize,
        t: f64,
    ) -> Result<()> {
        let messages = self.messages();
        let count = self.nodes.len();
        let mut next = Vec::with_capacity(count);
        for i in 0..count {
            let neighbors = self.graph.neighbors(i)?;
            let inbox: Vec<&NeighborMessage> = neighbors.iter().map(|&j| &messages[j]).collect();
            let ctx = StepContext { id: i, neighbors, nodes: count, kappa: self.kappa, h };
            let node = node_step(&self.nodes[i], self.consensus.zhat(i), &ys[i], &inbox, &inputs[i], &ctx)?;
            if self.indefinite[i].is_none() && !is_positive_definite(&node.p) {
                self.indefinite[i] = Some(IndefiniteEvent { step: k + 1, t: t + h });
            }
            next.push(node);
        }
        self.nodes = next;
        self.consensus.advance(z_next, &self.graph, &self.params, h, self.scheme);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn local_gain_examples() {
        let eye = Matrix::identity(2, 2);
        let k1 = local_gain(&eye, &eye, &eye, 1).unwrap();
        assert_eq!(k1, crate::centralized::central_gain(&eye, &eye, &eye).unwrap());
        assert!((local_gain(&s(0.5), &s(1.0), &s(0.05), 7).unwrap()[(0, 0)] - 70.0).abs() < 1e-12);
        assert_eq!(local_gain(&eye, &Matrix::zeros(1, 2), &s(1.0), 3).unwrap(), Matrix::zeros(2, 1));
    }

    #[test]
    fn two_node_coupling_by_hand() {
        let (zero, one) = (s(0.0), s(1.0));
        let inputs = NodeInputs { a: &zero, w: &zero, c: &zero, r_inv: &one };
        let h = 1e-3;
        let nodes = [NodeState::new(Vector::from_element(1, 0.0), s(1.0), 1), NodeState::new(Vector::from_element(1, 2.0), s(1.0), 1)];
        let msgs: Vec<_> = nodes.iter().enumerate().map(|(i, n)| make_message(n, &zero, i)).collect();
        let next0 = node_step(
            &nodes[0],
            &zero,
            &Vector::zeros(1),
            &[&msgs[1]],
            &inputs,
            &StepContext { id: 0, neighbors: &[1], nodes: 2, kappa: 1.0, h },
        )
        .unwrap();
        let next1 = node_step(
            &nodes[1],
            &zero,
            &Vector::zeros(1),
            &[&msgs[0]],
            &inputs,
            &StepContext { id: 1, neighbors: &[0], nodes: 2, kappa: 1.0, h },
        )
        .unwrap();
        assert!((next0.xhat[0] - 2.0 * h).abs() < 1e-15);
        assert!((next1.xhat[0] - (2.0 - 2.0 * h)).abs() < 1e-15);
    }

    #[test]
    fn equal_estimates_remove_coupling() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let w = Matrix::identity(2, 2);
        let c = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let r_inv = s(4.0);
        let inputs = NodeInputs { a: &a, w: &w, c: &c, r_inv: &r_inv };
        let node = NodeState::new(Vector::from_vec(vec![0.3, -0.1]), Matrix::identity(2, 2), 1);
        let zhat = c.transpose() * &r_inv * &c;
        let peer = make_message(&node, &zhat, 1);
        let y = Vector::from_element(1, 0.7);
        let coupled = node_step(&node, &zhat, &y, &[&peer], &inputs, &StepContext { id: 0, neighbors: &[1], nodes: 2, kappa: 500.0, h: 1e-3 }).unwrap();
        let alone = node_step(&node, &zhat, &y, &[], &inputs, &StepContext { id: 0, neighbors: &[], nodes: 2, kappa: 500.0, h: 1e-3 }).unwrap();
        assert_eq!(coupled, alone);
    }

    #[test]
    fn message_checks() {
        let (zero, one) = (s(0.0), s(1.0));
        let inputs = NodeInputs { a: &zero, w: &zero, c: &zero, r_inv: &one };
        let node = NodeState::new(Vector::zeros(1), s(1.0), 1);
        let ctx = StepContext { id: 0, neighbors: &[1, 2], nodes: 3, kappa: 1.0, h: 1e-3 };
        let m1 = make_message(&node, &zero, 1);
        let m3 = make_message(&node, &zero, 3);
        let err = node_step(&node, &zero, &Vector::zeros(1), &[&m1], &inputs, &ctx).unwrap_err();
        assert_eq!(err, Error::MissingNeighborMessage { node: 0, neighbor: 2 });
        let err = node_step(&node, &zero, &Vector::zeros(1), &[&m1, &m3], &inputs, &ctx).unwrap_err();
        assert_eq!(err, Error::UnexpectedMessage { node: 0, sender: 3 });
    }

    #[test]
    fn messages_are_snapshots() {
        let mut node = NodeState::new(Vector::from_vec(vec![1.0, 2.0]), Matrix::identity(2, 2), 1);
        let zhat = Matrix::identity(2, 2);
        let msg = make_message(&node, &zhat, 4);
        assert_eq!(msg.xhat, Vector::from_vec(vec![1.0, 2.0]));
        node.xhat[0] = 99.0;
        assert_eq!(msg.xhat[0], 1.0);
    }

    #[test]
    fn decode_rejects_bad_lengths() {
        let msg = NeighborMessage { sender: 2, xhat: Vector::zeros(2), zhat: Matrix::zeros(2, 2) };
        let bytes = msg.to_bytes();
        assert_eq!(bytes.len(), 8 * (2 + 2 + 4));
        assert!(NeighborMessage::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(NeighborMessage::from_bytes(&bytes[..4]).is_err());
    }

    proptest! {
        #[test]
        fn message_bytes_roundtrip(sender in 0usize..1000, n in 1usize..5, values in proptest::collection::vec(any::<f64>(), 30)) {
            let xhat = Vector::from_fn(n, |i, _| values[i]);
            let zhat = Matrix::from_fn(n, n, |i, j| values[5 + i * n + j]);
            let msg = NeighborMessage { sender, xhat, zhat };
            let bytes = msg.to_bytes();
            let back = NeighborMessage::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
