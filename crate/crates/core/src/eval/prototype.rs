//! Nearest-support baseline by cosine similarity.

use crate::tensor::dot;

/// Similarity of a query to a support: cosine, or negative Euclidean
/// distance when either vector has zero norm.
pub fn similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Label of the most similar support for every query. Ties go to the support
/// with the lowest class index.
pub fn prototype_classify(supports: &[(Vec<f64>, usize)], queries: &[Vec<f64>]) -> Vec<usize> {
    queries
        .iter()
        .map(|q| {
            let mut best: Option<(f64, usize)> = None;
            for (s, label) in supports {
                let sim = similarity(q, s);
                best = match best {
                    Some((b, l)) if b > sim || (b == sim && l < *label) => Some((b, l)),
                    _ => Some((sim, *label)),
                };
            }
            best.expect("at least one support").1
        })
        .collect()
}
