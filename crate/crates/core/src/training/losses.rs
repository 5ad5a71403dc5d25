use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{LatteError, Result};

fn same_shape(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(LatteError::Dimension(format!(
            "{what}: prediction is {:?}, target is {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

/// Squared error over the masked cells divided by the number of masked
/// cells.
pub fn cutfill_loss(g: &Graph, pred: Var, target: Var, mask: &Tensor) -> Result<Var> {
    same_shape(g, pred, target, "cut-and-fill loss")?;
    if g.shape(pred) != mask.shape() {
        return Err(LatteError::Dimension("cut-and-fill mask shape".into()));
    }
    let cells = mask.sum();
    if cells <= 0.0 {
        return Err(LatteError::InvalidArgument(
            "cut-and-fill mask is empty".into(),
        ));
    }
    let m = g.constant(mask.clone());
    let err = g.mul(g.square(g.sub(pred, target)), m);
    Ok(g.scale(g.sum_all(err), 1.0 / cells))
}

/// Mean squared error over all cells.
pub fn reconstruction_loss(g: &Graph, pred: Var, target: Var) -> Result<Var> {
    same_shape(g, pred, target, "reconstruction loss")?;
    Ok(g.mean_all(g.square(g.sub(pred, target))))
}

/// Batch-mean softmax cross-entropy.
pub fn cross_entropy_loss(g: &Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (rows, classes) = g.shape(logits);
    if rows != labels.len() {
        return Err(LatteError::Dimension(format!(
            "{rows} logit rows for {} labels",
            labels.len()
        )));
    }
    if let Some(y) = labels.iter().find(|&&y| y >= classes) {
        return Err(LatteError::InvalidArgument(format!(
            "label {y} out of range for {classes} classes"
        )));
    }
    if !g.value(logits).all_finite() {
        return Err(LatteError::NonFinite("logits".into()));
    }
    Ok(g.cross_entropy(logits, labels))
}
