use super::{AutodiffError, Graph, NodeId, ParamId, ParamStore};
use crate::Scalar;

/// Compares backward gradients against central differences.
///
/// `build` must construct the full forward graph from a parameter store and
/// return the scalar loss node. Returns the largest
/// `|analytic - numeric| / max(1, |numeric|)` over every element of every
/// parameter in `wrt`.
pub fn gradient_check<T, F>(store: &ParamStore<T>, wrt: &[ParamId], build: F, eps: f64) -> Result<f64, AutodiffError>
where
    T: Scalar,
    F: Fn(&ParamStore<T>) -> Result<(Graph<T>, NodeId), AutodiffError>,
{
    if !(eps > 0.0) {
        return Err(AutodiffError::InvalidAttribute(format!("epsilon must be positive, got {eps}")));
    }
    let (graph, loss) = build(store)?;
    if graph.has_active_dropout() {
        return Err(AutodiffError::ActiveDropout);
    }
    let (again, loss_again) = build(store)?;
    let first = graph.value(loss).data().to_vec();
    let second = again.value(loss_again).data().to_vec();
    if first.len() != second.len() || first.iter().zip(&second).any(|(a, b)| a.as_f64().to_bits() != b.as_f64().to_bits()) {
        return Err(AutodiffError::NonDeterministic(format!("{first:?} vs {second:?}")));
    }
    let analytic = graph.backward(loss, wrt, store)?;

    let loss_at = |s: &ParamStore<T>| -> Result<f64, AutodiffError> {
        let (g, l) = build(s)?;
        let v = g.value(l);
        v.as_scalar().map(|x| x.as_f64()).ok_or_else(|| AutodiffError::NonScalarLoss(v.shape().to_vec()))
    };

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for &id in wrt {
        let a = analytic.get(id).expect("backward covers wrt");
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = orig + T::lit(eps);
            let up = loss_at(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig - T::lit(eps);
            let down = loss_at(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = (a.data()[i].as_f64() - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
