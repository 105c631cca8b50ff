use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Mean per-point cross-entropy of `[B × K × N]` logits against `[B × N]`
/// labels, evaluated with max subtraction.
pub fn cross_entropy<'t, T: Real>(logits: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let lv = logits.value();
    lv.expect_rank("cross_entropy", 3)?;
    let (b, k, n) = (lv.shape()[0], lv.shape()[1], lv.shape()[2]);
    if labels.len() != b * n {
        return Err(Error::contract(
            "cross_entropy",
            format!("{} labels for {} points", labels.len(), b * n),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::contract("cross_entropy", format!("label {bad} outside [0, {k})")));
    }
    let d = lv.data();
    let count = (b * n) as f64;
    // Softmax per point, kept for the backward rule.
    let mut probs = vec![0.0f64; d.len()];
    let mut total = 0.0f64;
    for bi in 0..b {
        for i in 0..n {
            let at = |c: usize| (bi * k + c) * n + i;
            let max = (0..k).map(|c| d[at(c)].as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..k).map(|c| (d[at(c)].as_f64() - max).exp()).sum();
            for c in 0..k {
                probs[at(c)] = (d[at(c)].as_f64() - max).exp() / z;
            }
            let label = labels[bi * n + i];
            total += z.ln() - (d[at(label)].as_f64() - max);
        }
    }
    let labels = labels.to_vec();
    Ok(logits.tape().record(
        "cross_entropy",
        &[logits],
        Tensor::scalar(T::of_f64(total / count)),
        Box::new(move |bw| {
            let scale = bw.grad.item().as_f64() / count;
            let mut g = probs.clone();
            for bi in 0..b {
                for i in 0..n {
                    g[(bi * k + labels[bi * n + i]) * n + i] -= 1.0;
                }
            }
            let g = g.into_iter().map(|v| T::of_f64(v * scale)).collect();
            vec![Some(Tensor::new([b, k, n], g).unwrap())]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn uniform_logits_give_log_k() {
        let tape = Tape::new();
        let l = cross_entropy(tape.leaf(Tensor::<f64>::full([2, 4, 3], 0.7)), &[0, 1, 2, 3, 0, 1]).unwrap();
        assert!((l.value().item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_gives_tiny_loss() {
        let tape = Tape::new();
        let mut logits = Tensor::<f64>::zeros([1, 3, 2]);
        logits.data_mut()[2 * 2] = 50.0; // class 2, point 0
        logits.data_mut()[1] = 50.0; // class 0, point 1
        let l = cross_entropy(tape.leaf(logits), &[2, 0]).unwrap();
        assert!(l.value().item() < 1e-6);
        assert!(l.value().item() >= 0.0);
    }

    #[test]
    fn label_out_of_range() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::zeros([1, 2, 2]));
        assert!(matches!(cross_entropy(x, &[0, 2]), Err(Error::Contract { .. })));
        assert!(cross_entropy(x, &[0]).is_err());
    }
}
