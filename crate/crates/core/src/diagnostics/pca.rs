use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

const MAX_ITERS: usize = 10_000;
const TOL: f64 = 1e-13;

/// Top two principal directions of a row-per-item matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `[n × 2]` coordinates of the centred rows.
    pub coords: Vec<[f64; 2]>,
    pub components: [Vec<f64>; 2],
    /// Variance along each component.
    pub variances: [f64; 2],
    /// Total variance over all dimensions.
    pub total_variance: f64,
}

/// The learned speaker table, `[speakers × dim]`, when the model has one.
pub fn speaker_embeddings(model: &Model) -> Option<Tensor> {
    model.net.speaker_table.map(|id| model.store.get(id).clone())
}

/// Mean-centres the rows and finds two components by power iteration on the
/// covariance, deflating after the first.
pub fn speaker_pca(embeddings: &Tensor) -> Result<Pca> {
    if embeddings.shape().len() != 2 || embeddings.rows() < 2 {
        return Err(Error::shape("speaker pca", "need at least two embedding rows"));
    }
    let (n, d) = (embeddings.rows(), embeddings.cols());
    if d < 2 {
        return Err(Error::shape("speaker pca", "need at least two dimensions"));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(embeddings.row(i)) {
            *m += v / n as f64;
        }
    }
    let centred: Vec<Vec<f64>> = (0..n)
        .map(|i| embeddings.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for row in &centred {
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += row[a] * row[b] / n as f64;
            }
        }
    }
    let total_variance: f64 = (0..d).map(|a| cov[a * d + a]).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let first = power_iteration(&cov, d, None, &mut rng);
    let l1 = rayleigh(&cov, d, &first);
    for a in 0..d {
        for b in 0..d {
            cov[a * d + b] -= l1 * first[a] * first[b];
        }
    }
    let second = power_iteration(&cov, d, Some(&first), &mut rng);
    let l2 = rayleigh(&cov, d, &second).max(0.0);

    let coords = centred
        .iter()
        .map(|r| [dot(r, &first), dot(r, &second)])
        .collect();
    Ok(Pca {
        coords,
        components: [first, second],
        variances: [l1, l2],
        total_variance,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat_vec(m: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d).map(|a| dot(&m[a * d..(a + 1) * d], v)).collect()
}

fn rayleigh(m: &[f64], d: usize, v: &[f64]) -> f64 {
    dot(v, &mat_vec(m, d, v))
}

fn normalize(v: &mut [f64]) -> bool {
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Unit vector, kept orthogonal to `against`, with its largest entry
/// positive.
fn power_iteration(m: &[f64], d: usize, against: Option<&[f64]>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let project = |v: &mut Vec<f64>| {
        if let Some(u) = against {
            let p = dot(v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
    };
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    project(&mut v);
    normalize(&mut v);
    for _ in 0..MAX_ITERS {
        let mut next = mat_vec(m, d, &v);
        project(&mut next);
        if !normalize(&mut next) {
            break;
        }
        let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if delta < TOL {
            break;
        }
    }
    let lead = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// `speaker_id,pc1,pc2` rows.
pub fn pca_csv(pca: &Pca) -> String {
    let mut s = String::from("speaker_id,pc1,pc2\n");
    for (i, [a, b]) in pca.coords.iter().enumerate() {
        let _ = writeln!(s, "{i},{a},{b}");
    }
    s
}

/// Splits `values` into two clusters with 1-D k-means (seeded at the
/// extremes) and returns the share of items whose label is their cluster's
/// majority label.
pub fn two_means_purity(values: &[f64], labels: &[usize]) -> Result<f64> {
    if values.len() != labels.len() || values.is_empty() {
        return Err(Error::shape("two-means", "one label per value expected"));
    }
    let mut centres = [
        values.iter().copied().fold(f64::INFINITY, f64::min),
        values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    ];
    let mut assign = vec![0usize; values.len()];
    for _ in 0..100 {
        let next: Vec<usize> = values
            .iter()
            .map(|v| usize::from((v - centres[1]).abs() < (v - centres[0]).abs()))
            .collect();
        for (c, centre) in centres.iter_mut().enumerate() {
            let members: Vec<f64> = values.iter().zip(&next).filter(|(_, &a)| a == c).map(|(v, _)| *v).collect();
            if !members.is_empty() {
                *centre = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
        if next == assign {
            break;
        }
        assign = next;
    }
    let mut majority = 0;
    for c in 0..2 {
        let mut counts = std::collections::BTreeMap::new();
        for (&a, &l) in assign.iter().zip(labels) {
            if a == c {
                *counts.entry(l).or_insert(0usize) += 1;
            }
        }
        majority += counts.values().max().copied().unwrap_or(0);
    }
    Ok(majority as f64 / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_embeddings() {
        let rows = vec![
            vec![3.0, 0.5],
            vec![-3.0, 0.5],
            vec![2.0, -0.5],
            vec![-2.0, -0.5],
        ];
        let pca = speaker_pca(&Tensor::from_rows(&rows).unwrap()).unwrap();
        assert!((pca.components[0][0].abs() - 1.0).abs() < 1e-9);
        assert!(pca.components[0][1].abs() < 1e-9);
        assert!((pca.components[1][1].abs() - 1.0).abs() < 1e-9);
        assert!((pca.variances[0] - 6.5).abs() < 1e-9);
        assert!((pca.variances[1] - 0.25).abs() < 1e-9);
        for (c, r) in pca.coords.iter().zip(&rows) {
            assert!((c[0].abs() - r[0].abs()).abs() < 1e-9);
            assert!((c[1].abs() - r[1].abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_one_has_no_second_component() {
        let dir = [0.3, -1.2, 0.7, 2.0];
        let rows: Vec<Vec<f64>> = [-2.0, -0.5, 0.25, 1.0, 3.5]
            .iter()
            .map(|s| dir.iter().map(|d| 5.0 + s * d).collect())
            .collect();
        let pca = speaker_pca(&Tensor::from_rows(&rows).unwrap()).unwrap();
        assert!(pca.variances[1] / pca.variances[0] < 1e-6);
        assert!((pca.variances[0] - pca.total_variance).abs() < 1e-9 * pca.total_variance);
        assert!(pca.coords.iter().all(|c| c[1].abs() < 1e-6));
    }

    #[test]
    fn purity_of_separated_groups() {
        let values = [-2.0, -1.8, -2.2, 1.9, 2.1, 2.0, 1.0];
        let labels = [0, 0, 0, 1, 1, 1, 0];
        let p = two_means_purity(&values, &labels).unwrap();
        assert!((p - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(two_means_purity(&values[..6], &labels[..6]).unwrap(), 1.0);
        assert!(two_means_purity(&values, &labels[..3]).is_err());
    }

    #[test]
    fn csv_rows() {
        let rows = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 0.2]];
        let csv = pca_csv(&speaker_pca(&Tensor::from_rows(&rows).unwrap()).unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "speaker_id,pc1,pc2");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("1,"));
    }
}
