//! Exhaustive ground truth for small instances.

use crate::error::{Error, Result};
use crate::graph::{Adjacency, GraphInstance};
use crate::model::MpnnModel;
use crate::perturbation::{enumerate_admissible, PerturbationSpec};

/// Minimum margin over the whole perturbation set and a minimizer. Ties keep
/// the first matrix in enumeration order, which starts at `A*`.
pub fn brute_force_verdict(
    model: &MpnnModel,
    instance: &GraphInstance,
    spec: &PerturbationSpec,
    cap: usize,
) -> Result<(f64, Adjacency)> {
    spec.validate_for(instance)?;
    let mut best: Option<(f64, Adjacency)> = None;
    for adj in enumerate_admissible(&instance.adjacency, spec, cap) {
        let adj = adj?;
        let m = model.margin(
            &instance.features,
            &adj,
            instance.label_true,
            instance.label_attack,
            instance.target,
        )?;
        if best.as_ref().map_or(true, |(b, _)| m < *b) {
            best = Some((m, adj));
        }
    }
    best.ok_or(Error::EmptyInput)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Target;
    use crate::model::{Activation, MpnnLayer, Pooling};
    use crate::perturbation::PerturbationMode;
    use crate::synth::path_fixture;
    use ndarray::array;

    #[test]
    fn zero_budget_returns_base() {
        let mut case = path_fixture();
        case.spec.global_budget = 0;
        let (m, a) = brute_force_verdict(&case.model, &case.instance, &case.spec, 10).unwrap();
        assert_eq!(m, 1.5);
        assert_eq!(a, case.instance.adjacency);
    }

    #[test]
    fn fixture_minimum() {
        let case = path_fixture();
        let (m, a) = brute_force_verdict(&case.model, &case.instance, &case.spec, 10).unwrap();
        assert_eq!(m, -0.5);
        assert!(a.get(0, 2));
    }

    #[test]
    fn remove_only_two_edges() {
        // margin at node 0 = x0 + sum of kept in-neighbor features
        let adj = Adjacency::from_edges(3, &[(1, 0), (2, 0)], true).unwrap();
        let inst = GraphInstance::new(
            array![[0.5], [-2.0], [1.0]],
            adj,
            true,
            Target::Node(0),
            0,
            1,
        )
        .unwrap();
        let layer = MpnnLayer::new(
            array![[1.0, 0.0]],
            array![[1.0, 0.0]],
            array![0.0, 0.0],
            Activation::Identity,
        )
        .unwrap();
        let model = MpnnModel::new(vec![layer], Pooling::None, vec![]).unwrap();
        let spec = PerturbationSpec::new(PerturbationMode::DirectedRemoveOnly, 2, vec![2; 3]);
        // subsets: {1,2} -> -0.5, {1} -> -1.5, {2} -> 1.5, {} -> 0.5
        let (m, a) = brute_force_verdict(&model, &inst, &spec, 10).unwrap();
        assert_eq!(m, -1.5);
        assert_eq!(a.edges(), vec![(1, 0)]);
    }

    #[test]
    fn cap_is_enforced() {
        let case = path_fixture();
        assert!(matches!(
            brute_force_verdict(&case.model, &case.instance, &case.spec, 2),
            Err(Error::CapExceeded(2))
        ));
    }
}
