use crate::error::{Error, Result};

/// Accuracy and macro F1, both in percent. Classes absent from both the
/// labels and the predictions are left out of the F1 average.
pub fn accuracy_and_f1(predictions: &[usize], labels: &[usize], classes: usize) -> Result<(f64, f64)> {
    if labels.is_empty() || predictions.len() != labels.len() {
        return Err(Error::contract(
            "evaluate",
            format!("{} predictions for {} labels", predictions.len(), labels.len()),
        ));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    let acc = 100.0 * correct as f64 / labels.len() as f64;
    let mut f1_sum = 0.0;
    let mut present = 0;
    for c in 0..classes {
        let tp = predictions.iter().zip(labels).filter(|&(&p, &l)| p == c && l == c).count() as f64;
        let fp = predictions.iter().zip(labels).filter(|&(&p, &l)| p == c && l != c).count() as f64;
        let fn_ = predictions.iter().zip(labels).filter(|&(&p, &l)| p != c && l == c).count() as f64;
        if tp + fp + fn_ == 0.0 {
            continue;
        }
        present += 1;
        f1_sum += 2.0 * tp / (2.0 * tp + fp + fn_);
    }
    Ok((acc, 100.0 * f1_sum / present as f64))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
