use crate::error::{Error, Result};

use super::{Matrix, Rng};

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub sse_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn sse(&self) -> f64 {
        self.sse_trace.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &c)| {
            let d = f64::from(x) - c;
            d * d
        })
        .sum()
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Assignment ties go to the lowest cluster index. A cluster left empty after
/// an assignment step is re-seeded with the point farthest from its current
/// centroid, taken from a cluster that keeps at least one other member.
/// Stops early once assignments no longer change.
pub fn kmeans(x: &Matrix, clusters: usize, rng: &mut Rng, max_iters: usize) -> Result<KMeansResult> {
    if clusters == 0 {
        return Err(Error::InvalidArgument("kmeans needs at least one cluster".into()));
    }
    if clusters > x.rows() {
        return Err(Error::InvalidArgument(format!(
            "kmeans asked for {clusters} clusters on {} rows",
            x.rows()
        )));
    }
    if max_iters == 0 {
        return Err(Error::InvalidArgument("kmeans needs max_iters >= 1".into()));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("kmeans input"));
    }

    let n = x.rows();
    let dim = x.cols();
    let mut centroids = seed_plus_plus(x, clusters, rng);
    let mut assignments = vec![usize::MAX; n];
    let mut sse_trace = Vec::new();

    for _ in 0..max_iters {
        let mut changed = false;
        let mut dists = vec![0.0f64; n];
        for i in 0..n {
            let row = x.row(i);
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(row, centroid);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
            dists[i] = best_d;
        }

        let mut sizes = vec![0usize; clusters];
        for &a in &assignments {
            sizes[a] += 1;
        }
        for c in 0..clusters {
            if sizes[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[assignments[i]] > 1)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dists[b] >= dists[i] => Some(b),
                    _ => Some(i),
                })
                .expect("clusters <= rows guarantees a donor");
            sizes[assignments[far]] -= 1;
            sizes[c] += 1;
            assignments[far] = c;
            dists[far] = 0.0;
            changed = true;
        }

        let mut sums = vec![vec![0.0f64; dim]; clusters];
        for i in 0..n {
            for (s, &v) in sums[assignments[i]].iter_mut().zip(x.row(i)) {
                *s += f64::from(v);
            }
        }
        for (c, sum) in sums.iter_mut().enumerate() {
            let k = sizes[c] as f64;
            sum.iter_mut().for_each(|s| *s /= k);
        }
        centroids = sums;

        let sse: f64 = (0..n).map(|i| sq_dist(x.row(i), &centroids[assignments[i]])).sum();
        if let Some(&prev) = sse_trace.last() {
            debug_assert!(sse <= prev * (1.0 + 1e-12) + 1e-12, "SSE rose: {prev} -> {sse}");
        }
        sse_trace.push(sse);
        if !changed {
            break;
        }
    }

    let flat: Vec<f64> = centroids.into_iter().flatten().collect();
    Ok(KMeansResult {
        centroids: Matrix::from_f64(clusters, dim, &flat)?,
        assignments,
        sse_trace,
    })
}

fn seed_plus_plus(x: &Matrix, clusters: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = x.rows();
    let to_f64 = |i: usize| x.row(i).iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();
    let mut chosen = vec![rng.below(n)];
    let mut centroids = vec![to_f64(chosen[0])];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centroids[0])).collect();
    while centroids.len() < clusters {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // all remaining points coincide with a centroid
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(pick);
        let c = to_f64(pick);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}
