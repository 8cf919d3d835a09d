use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, Matrix};

/// Mean cross-entropy of `softmax(scores)` against `labels`, with its gradient.
pub fn meta_loss(scores: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (m, c) = scores.shape();
    if labels.len() != m {
        return Err(Error::ShapeMismatch(format!("{m} score rows, {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::LabelOutOfRange { label: bad, classes: c });
    }
    if m == 0 {
        return Err(Error::EmptyQuery);
    }
    let mut grad = softmax_rows(scores);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = scores.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        grad[(r, y)] -= 1.0;
    }
    let inv = 1.0 / m as f64;
    Ok((loss * inv, grad.scale(inv)))
}
