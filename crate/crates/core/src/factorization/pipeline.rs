use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{kmeans, Matrix, Rng};

use super::{semi_nmf, FactorizationModel, Method, ModelMeta};

/// Lloyd iteration cap for the clustering stage.
pub const KMEANS_MAX_ITERS: usize = 300;

// The clustering stage draws from a stream far away from the per-cluster
// streams 0..C, so cluster 0 sees the same randomness as a plain Semi-NMF run.
const KMEANS_STREAM_OFFSET: u64 = 1 << 40;

/// Clusters the rows of `x` with KMeans, then fits a separate Semi-NMF to
/// each cluster's rows.
///
/// Clusters with fewer than `d_prime` rows are merged into the cluster with
/// the nearest centroid before fitting. A cluster emptied this way keeps the
/// index but reuses the up-projection of the cluster that absorbed it, so the
/// model still has `C` up-projections.
pub fn factorize_kmeans(
    x: &Matrix,
    clusters: usize,
    d_prime: usize,
    steps: usize,
    rng: &mut Rng,
) -> Result<FactorizationModel> {
    if clusters == 0 {
        return Err(Error::InvalidArgument("need at least one cluster".into()));
    }
    if d_prime == 0 || d_prime > x.rows().min(x.cols()) {
        return Err(Error::InvalidArgument(format!(
            "d_prime must be in 1..={}, got {d_prime}",
            x.rows().min(x.cols())
        )));
    }
    let km = kmeans(x, clusters, &mut rng.fork(KMEANS_STREAM_OFFSET), KMEANS_MAX_ITERS)?;
    let (assignments, absorbed_by) = rebalance(&km.centroids, km.assignments, d_prime);

    let members: Vec<Vec<usize>> = (0..clusters)
        .map(|c| (0..x.rows()).filter(|&v| assignments[v] == c).collect())
        .collect();
    let fits = members
        .par_iter()
        .enumerate()
        .filter(|(_, rows)| !rows.is_empty())
        .map(|(c, rows)| semi_nmf(&x.select_rows(rows), d_prime, steps, &mut rng.fork(c as u64)).map(|fit| (c, fit)))
        .collect::<Result<Vec<_>>>()?;

    let mut factors = Matrix::zeros(x.rows(), d_prime);
    let mut ups: Vec<Option<Matrix>> = vec![None; clusters];
    for (c, fit) in fits {
        for (k, &v) in members[c].iter().enumerate() {
            factors.row_mut(v).copy_from_slice(fit.f.row(k));
        }
        ups[c] = Some(fit.g);
    }
    let ups = (0..clusters)
        .map(|c| ups[absorbed_by[c]].clone().expect("absorbing cluster is non-empty"))
        .collect();

    let meta = ModelMeta::new(Method::Kmeans, d_prime, clusters, x.cols(), steps, rng.seed());
    FactorizationModel::new(factors, Arc::new(ups), assignments, None, meta)
}

/// Merges undersized clusters, smallest first (lowest index on ties), into
/// the surviving cluster with the nearest centroid. Returns the new
/// assignments and, per original cluster, the cluster holding its rows.
fn rebalance(centroids: &Matrix, mut assignments: Vec<usize>, min_size: usize) -> (Vec<usize>, Vec<usize>) {
    let clusters = centroids.rows();
    let mut sizes = vec![0usize; clusters];
    for &a in &assignments {
        sizes[a] += 1;
    }
    let mut absorbed_by: Vec<usize> = (0..clusters).collect();
    loop {
        let alive: Vec<usize> = (0..clusters).filter(|&c| sizes[c] > 0).collect();
        if alive.len() < 2 {
            break;
        }
        let Some(&small) = alive
            .iter()
            .filter(|&&c| sizes[c] < min_size)
            .min_by_key(|&&c| (sizes[c], c))
        else {
            break;
        };
        let target = alive
            .iter()
            .copied()
            .filter(|&c| c != small)
            .min_by(|&a, &b| {
                let da = squared_distance(centroids.row(small), centroids.row(a));
                let db = squared_distance(centroids.row(small), centroids.row(b));
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("at least two clusters alive");
        for a in assignments.iter_mut().filter(|a| **a == small) {
            *a = target;
        }
        sizes[target] += sizes[small];
        sizes[small] = 0;
        for slot in absorbed_by.iter_mut().filter(|s| **s == small) {
            *slot = target;
        }
    }
    // clusters KMeans left empty inherit from the nearest surviving one
    for c in 0..clusters {
        if sizes[absorbed_by[c]] == 0 {
            absorbed_by[c] = (0..clusters)
                .filter(|&o| sizes[o] > 0)
                .min_by(|&a, &b| {
                    squared_distance(centroids.row(c), centroids.row(a))
                        .total_cmp(&squared_distance(centroids.row(c), centroids.row(b)))
                })
                .expect("some cluster has rows");
        }
    }
    (assignments, absorbed_by)
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorization::reconstruction_error;

    #[test]
    fn single_cluster_matches_semi_nmf() {
        let mut data = Rng::new(4);
        let x = Matrix::from_fn(20, 8, |_, _| data.normal(0.0, 1.0) as f32);
        let model = factorize_kmeans(&x, 1, 4, 300, &mut Rng::new(17)).unwrap();
        let plain = semi_nmf(&x, 4, 300, &mut Rng::new(17)).unwrap();
        assert_eq!(model.factors(), &plain.f);
        assert_eq!(&model.up_projections()[0], &plain.g);
        let err_plain = x.distance(&plain.f.matmul(&plain.g).unwrap()).unwrap();
        let err_model = reconstruction_error(&model, &x).unwrap();
        assert!((err_plain - err_model).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_subspaces_favor_two_clusters() {
        // rows live either in span(e0..e3) or span(e4..e7)
        let mut rng = Rng::new(21);
        let x = Matrix::from_fn(40, 8, |i, j| {
            let block = if i < 20 { 0 } else { 4 };
            if (block..block + 4).contains(&j) {
                rng.normal(0.0, 1.0) as f32
            } else {
                0.0
            }
        });
        let one = factorize_kmeans(&x, 1, 4, 1000, &mut Rng::new(2)).unwrap();
        let two = factorize_kmeans(&x, 2, 4, 1000, &mut Rng::new(2)).unwrap();
        let e1 = reconstruction_error(&one, &x).unwrap();
        let e2 = reconstruction_error(&two, &x).unwrap();
        assert!(e2 <= e1, "C=2 {e2} vs C=1 {e1}");
    }

    #[test]
    fn partition_and_shapes() {
        let mut rng = Rng::new(5);
        let x = Matrix::from_fn(30, 6, |_, _| rng.normal(0.0, 1.0) as f32);
        let model = factorize_kmeans(&x, 3, 2, 50, &mut Rng::new(1)).unwrap();
        assert_eq!(model.assignments().len(), 30);
        assert!(model.assignments().iter().all(|&a| a < 3));
        assert_eq!(model.clusters(), 3);
        assert!(model.up_projections().iter().all(|g| g.shape() == (2, 6)));
        assert!(model
            .up_projections()
            .iter()
            .all(|g| g.data().iter().all(|&v| v >= 0.0)));
        assert_eq!(model.meta().method, Method::Kmeans);
    }

    #[test]
    fn rebalance_merges_small_clusters_into_nearest() {
        let centroids = Matrix::from_rows(&[[0.0f32], [1.0], [10.0]]).unwrap();
        let assignments = vec![0, 0, 0, 1, 2, 2, 2];
        let (a, absorbed) = rebalance(&centroids, assignments, 2);
        assert_eq!(a, [0, 0, 0, 0, 2, 2, 2]);
        assert_eq!(absorbed, [0, 0, 2]);
    }

    #[test]
    fn rebalance_keeps_last_cluster() {
        let centroids = Matrix::from_rows(&[[0.0f32], [1.0]]).unwrap();
        let (a, absorbed) = rebalance(&centroids, vec![0, 1], 5);
        assert_eq!(a, [1, 1]);
        assert_eq!(absorbed, [1, 1]);
    }

    #[test]
    fn tiny_clusters_still_factorize() {
        // one far outlier would form a singleton cluster
        let mut rng = Rng::new(8);
        let mut x = Matrix::from_fn(12, 4, |_, _| rng.normal(0.0, 0.1) as f32);
        x.row_mut(11).copy_from_slice(&[50.0, 50.0, 50.0, 50.0]);
        let model = factorize_kmeans(&x, 2, 3, 50, &mut Rng::new(0)).unwrap();
        let used: std::collections::BTreeSet<_> = model.assignments().iter().collect();
        assert_eq!(used.len(), 1);
        assert_eq!(model.up_projections()[0], model.up_projections()[1]);
    }

    #[test]
    fn argument_errors() {
        let x = Matrix::zeros(4, 3);
        assert!(factorize_kmeans(&x, 0, 2, 10, &mut Rng::new(0)).is_err());
        assert!(factorize_kmeans(&x, 2, 4, 10, &mut Rng::new(0)).is_err());
    }
}
