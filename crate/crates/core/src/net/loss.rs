//! Cosine distillation objective.

use super::model::{Forward, SceneInputs};
use super::tape::cosine_eps;
use super::tensor::{Mat, Real};
use crate::features::FusedTargets;

/// Targets of one scene laid out in skeleton order. Absent rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTargets {
    pub node: Mat<f32>,
    pub node_present: Vec<bool>,
    pub edge: Mat<f32>,
    pub edge_present: Vec<bool>,
}

impl SceneTargets {
    pub fn align(inputs: &SceneInputs, targets: &FusedTargets) -> Result<Self, String> {
        let mut node = Mat::zeros(inputs.nodes.len(), targets.dim_obj);
        let mut node_present = vec![false; inputs.nodes.len()];
        for (r, &id) in inputs.nodes.iter().enumerate() {
            if let Some(f) = targets.node(id).and_then(|t| t.feature.as_ref()) {
                node.row_mut(r).copy_from_slice(f);
                node_present[r] = true;
            }
        }
        let mut edge = Mat::zeros(inputs.edges.len(), targets.dim_rel);
        let mut edge_present = vec![false; inputs.edges.len()];
        for (r, (i, j)) in inputs.edge_ids().enumerate() {
            if let Some(f) = targets.edge(i, j).and_then(|t| t.feature.as_ref()) {
                edge.row_mut(r).copy_from_slice(f);
                edge_present[r] = true;
            }
        }
        if !node_present.iter().chain(&edge_present).any(|&b| b) {
            return Err("no present target in scene".into());
        }
        Ok(Self {
            node,
            node_present,
            edge,
            edge_present,
        })
    }

    pub fn check_dims(&self, d_obj: usize, d_rel: usize) -> Result<(), String> {
        if self.node.cols != d_obj || self.edge.cols != d_rel {
            return Err(format!(
                "target dims ({}, {}) do not match model dims ({d_obj}, {d_rel})",
                self.node.cols, self.edge.cols
            ));
        }
        Ok(())
    }
}

/// Appends the loss to the forward tape and returns its handle.
pub fn distill_loss<T: Real>(fwd: &mut Forward<T>, targets: &SceneTargets) -> super::tape::Var {
    let n = fwd.tape.cosine_loss(fwd.node_out, targets.node.cast(), &targets.node_present);
    let e = fwd.tape.cosine_loss(fwd.edge_out, targets.edge.cast(), &targets.edge_present);
    fwd.tape.add(n, e)
}

fn term<T: Real>(pred: &Mat<T>, target: &Mat<T>, present: &[bool]) -> f64 {
    let rows: Vec<usize> = (0..pred.rows).filter(|&r| present[r]).collect();
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|&r| 1.0 - cosine_eps(pred.row(r), target.row(r))).sum::<f64>() / rows.len() as f64
}

/// Loss value for given predictions, without a tape.
pub fn distill_loss_value<T: Real>(node_pred: &Mat<T>, edge_pred: &Mat<T>, targets: &SceneTargets) -> f64 {
    term(node_pred, &targets.node.cast(), &targets.node_present)
        + term(edge_pred, &targets.edge.cast(), &targets.edge_present)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn targets(node: Vec<f32>, edge: Vec<f32>) -> SceneTargets {
        SceneTargets {
            node: Mat::from_vec(2, 2, node),
            node_present: vec![true, true],
            edge: Mat::from_vec(1, 2, edge),
            edge_present: vec![true],
        }
    }

    #[test]
    fn extremes() {
        let t = targets(vec![1.0, 0.0, 0.0, 2.0], vec![3.0, 4.0]);
        assert!(distill_loss_value(&t.node, &t.edge, &t).abs() < 1e-6);
        let orth_n = Mat::from_vec(2, 2, vec![0.0, 1.0, 5.0, 0.0]);
        let orth_e = Mat::from_vec(1, 2, vec![-4.0, 3.0]);
        assert!((distill_loss_value(&orth_n, &orth_e, &t) - 2.0).abs() < 1e-6);
        let anti_n = Mat::from_vec(2, 2, vec![-1.0, 0.0, 0.0, -7.0]);
        let anti_e = Mat::from_vec(1, 2, vec![-3.0, -4.0]);
        assert!((distill_loss_value(&anti_n, &anti_e, &t) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn absent_rows_are_ignored() {
        let mut t = targets(vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 0.0]);
        t.node_present[1] = false;
        let pred = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, -1.0]);
        assert!(distill_loss_value(&pred, &t.edge, &t).abs() < 1e-6);
    }
}
