use ndarray::{Array1, Array2, ArrayView1};

use super::TcnError;

pub fn softmax_row(z: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = z.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// Weighted cross entropy averaged over every timestep of every sample
/// (`n` timesteps per sample). Masked timesteps (`None`) contribute zero
/// loss and zero gradient but still count towards the mean.
pub fn cross_entropy(
    logits: &Array2<f64>,
    targets: &[Option<usize>],
    weights: &[f64],
    n: usize,
) -> Result<(f64, Array2<f64>), TcnError> {
    let (rows, c) = logits.dim();
    if targets.len() != rows || weights.len() != c || n == 0 || rows % n != 0 {
        return Err(TcnError::ShapeMismatch(format!(
            "{rows}x{c} logits, {} targets, {} weights, n={n}",
            targets.len(),
            weights.len()
        )));
    }
    let denom = rows as f64;
    let mut grad = Array2::zeros((rows, c));
    let mut loss = 0.0;
    for (r, target) in targets.iter().enumerate() {
        let Some(y) = *target else { continue };
        if y >= c {
            return Err(TcnError::LabelOutOfRange { label: y, classes: c });
        }
        let row = logits.row(r);
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let w = weights[y];
        loss += w * (lse - row[y]);
        let mut g = grad.row_mut(r);
        for k in 0..c {
            g[k] = (row[k] - lse).exp() * w / denom;
        }
        g[y] -= w / denom;
    }
    Ok((loss / denom, grad))
}
