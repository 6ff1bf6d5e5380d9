//! Text clustering: Lloyd's k-means with k-means++ seeding over
//! provider embeddings.
//!
//! Everything is deterministic for a fixed (vectors, c, seed): seeding
//! draws from a counter-based PRNG, assignment ties break toward the
//! lowest cluster index, centroid sums accumulate in point-index order,
//! and empty clusters are repaired by reassigning the globally farthest
//! point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{AnswerType, Artifact, ArtifactHeader, QAExample};
use crate::embed::EmbeddingVector;
use crate::error::{ApsError, Result};

const MAX_ITERATIONS: usize = 300;
/// Independent Lloyd runs per fit; the lowest-inertia run wins. Restart
/// seeds derive deterministically from the caller's seed.
const RESTARTS: usize = 10;

/// Text used to embed an example for clustering: question plus context,
/// and additionally the rationale for multiple-choice corpora that
/// provide one (the rationale is used nowhere else).
pub fn clustering_text(example: &QAExample) -> String {
    let mut parts: Vec<&str> = vec![example.question.as_str()];
    if !example.context.is_empty() {
        parts.push(example.context.as_str());
    }
    if example.answer_type == AnswerType::MultipleChoice && !example.rationale.is_empty() {
        parts.push(example.rationale.as_str());
    }
    parts.join(" ")
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Raw k-means fit over vectors (ids attach at a higher level).
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia measured after every update+reassign round; non-increasing.
    pub inertia_history: Vec<f64>,
}

/// Greedy k-means++ seeding: first centroid uniform; each further
/// centroid is drawn from several D^2-weighted candidates and the one
/// that lowers total potential most wins (ties to the earlier draw).
fn kmeanspp_init(points: &[&[f64]], c: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let trials = 2 + (c as f64).ln().floor() as usize;

    let mut chosen: Vec<usize> = Vec::with_capacity(c);
    chosen.push(rng.gen_range(0..n));
    let mut min_d2: Vec<f64> = points
        .iter()
        .map(|p| dist_sq(p, points[chosen[0]]))
        .collect();

    while chosen.len() < c {
        let total: f64 = min_d2.iter().sum();
        let next = if total > 0.0 {
            let mut best: Option<(f64, usize)> = None;
            for _ in 0..trials {
                let mut target = rng.gen::<f64>() * total;
                let mut candidate = n - 1;
                for (i, d) in min_d2.iter().enumerate() {
                    target -= d;
                    if target <= 0.0 {
                        candidate = i;
                        break;
                    }
                }
                let potential: f64 = points
                    .iter()
                    .zip(&min_d2)
                    .map(|(p, d)| d.min(dist_sq(p, points[candidate])))
                    .sum();
                if best.is_none_or(|(b, _)| potential < b) {
                    best = Some((potential, candidate));
                }
            }
            best.unwrap().1
        } else {
            // All remaining mass sits on duplicates of chosen centroids;
            // fall back to the lowest unchosen index.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, d) in min_d2.iter_mut().enumerate() {
            let nd = dist_sq(points[i], points[next]);
            if nd < *d {
                *d = nd;
            }
        }
    }

    chosen.iter().map(|&i| points[i].to_vec()).collect()
}

fn assign_nearest(points: &[&[f64]], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = 0usize;
            let mut best_d = dist_sq(p, &centroids[0]);
            for (k, centroid) in centroids.iter().enumerate().skip(1) {
                let d = dist_sq(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn recompute_means(points: &[&[f64]], assignments: &[usize], c: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; c];
    let mut counts = vec![0usize; c];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (j, v) in points[i].iter().enumerate() {
            sums[a][j] += v;
        }
    }
    for (k, sum) in sums.iter_mut().enumerate() {
        if counts[k] > 0 {
            let n = counts[k] as f64;
            for v in sum.iter_mut() {
                *v /= n;
            }
        }
    }
    (sums, counts)
}

/// Move the point farthest from its centroid into each empty cluster,
/// then refresh the affected means. Donors with a single member are
/// skipped so no new empties appear.
fn repair_empty_clusters(
    points: &[&[f64]],
    assignments: &mut [usize],
    centroids: &mut [Vec<f64>],
    counts: &mut [usize],
) {
    loop {
        let empty = match counts.iter().position(|&n| n == 0) {
            Some(k) => k,
            None => return,
        };
        let mut farthest: Option<(usize, f64)> = None;
        for (i, &a) in assignments.iter().enumerate() {
            if counts[a] <= 1 {
                continue;
            }
            let d = dist_sq(points[i], &centroids[a]);
            let better = match farthest {
                Some((_, best)) => d > best,
                None => true,
            };
            if better {
                farthest = Some((i, d));
            }
        }
        let (idx, _) = match farthest {
            Some(f) => f,
            // Degenerate: every cluster is a singleton or empty.
            None => return,
        };
        let donor = assignments[idx];
        assignments[idx] = empty;
        counts[donor] -= 1;
        counts[empty] = 1;
        centroids[empty] = points[idx].to_vec();

        let dim = centroids[empty].len();
        let mut sum = vec![0.0; dim];
        for (i, &a) in assignments.iter().enumerate() {
            if a == donor {
                for (j, v) in points[i].iter().enumerate() {
                    sum[j] += v;
                }
            }
        }
        let n = counts[donor] as f64;
        for v in sum.iter_mut() {
            *v /= n;
        }
        centroids[donor] = sum;
    }
}

fn total_inertia(points: &[&[f64]], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| dist_sq(points[i], &centroids[a]))
        .sum()
}

/// Lloyd iterations with k-means++ seeding, restarted a fixed number of
/// times; the lowest-inertia run is returned. Each run stops when
/// assignments no longer change or after 300 iterations and always ends
/// with assignments consistent with its final centroids.
pub fn kmeans(vectors: &[EmbeddingVector], c: usize, seed: u64) -> Result<KMeansFit> {
    if c < 1 {
        return Err(ApsError::Config("cluster count must be at least 1".into()));
    }
    if c > vectors.len() {
        return Err(ApsError::Config(format!(
            "cluster count {} exceeds point count {}",
            c,
            vectors.len()
        )));
    }
    let dim = vectors[0].dim();
    if vectors.iter().any(|v| v.dim() != dim) {
        return Err(ApsError::Shape("vectors have mixed dimensions".into()));
    }
    let points: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();

    let mut best: Option<KMeansFit> = None;
    for restart in 0..RESTARTS {
        let run_seed = crate::hashing::derive_seed(seed, "kmeans-restart", restart as u64);
        let fit = lloyd_run(&points, c, dim, run_seed);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd_run(points: &[&[f64]], c: usize, dim: usize, seed: u64) -> KMeansFit {
    let mut centroids = kmeanspp_init(points, c, seed);
    let mut assignments = assign_nearest(points, &centroids);
    let mut history = Vec::new();
    let mut iterations = 0usize;

    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        let (mut new_centroids, mut counts) = recompute_means(points, &assignments, c, dim);
        // Clusters that lost all members keep their previous centroid
        // until the repair step below gives them a point.
        for k in 0..c {
            if counts[k] == 0 {
                new_centroids[k] = centroids[k].clone();
            }
        }
        let mut new_assignments = assignments.clone();
        repair_empty_clusters(points, &mut new_assignments, &mut new_centroids, &mut counts);

        let reassigned = assign_nearest(points, &new_centroids);
        history.push(total_inertia(points, &reassigned, &new_centroids));

        let converged = reassigned == new_assignments;
        centroids = new_centroids;
        assignments = reassigned;
        if converged {
            break;
        }
    }

    let inertia = total_inertia(points, &assignments, &centroids);
    KMeansFit {
        centroids,
        assignments,
        inertia,
        iterations,
        inertia_history: history,
    }
}

/// Per-example cluster membership with the distance used for
/// representative selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub example_id: String,
    pub cluster: usize,
    pub distance_sq: f64,
}

/// Fitted clustering over a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub c: usize,
    pub dim: usize,
    pub seed: u64,
    pub inertia: f64,
    pub iterations: usize,
    pub inertia_history: Vec<f64>,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<ClusterAssignment>,
    pub fingerprint: String,
    pub parent_fingerprint: Option<String>,
}

impl ClusterModel {
    pub fn cluster_of(&self, example_id: &str) -> Option<usize> {
        self.assignments
            .iter()
            .find(|a| a.example_id == example_id)
            .map(|a| a.cluster)
    }

    /// Member ids of one cluster in corpus order.
    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|a| a.cluster == cluster)
            .map(|a| a.example_id.as_str())
            .collect()
    }

    /// Inertia recomputed from the stored assignments.
    pub fn recomputed_inertia(&self) -> f64 {
        self.assignments.iter().map(|a| a.distance_sq).sum()
    }
}

/// Fit a cluster model over (examples, vectors) pairs in corpus order.
pub fn fit_cluster_model(
    examples: &[QAExample],
    vectors: &[EmbeddingVector],
    c: usize,
    seed: u64,
    fingerprint: String,
    parent_fingerprint: Option<String>,
) -> Result<ClusterModel> {
    if examples.len() != vectors.len() {
        return Err(ApsError::Shape(format!(
            "{} examples but {} vectors",
            examples.len(),
            vectors.len()
        )));
    }
    let fit = kmeans(vectors, c, seed)?;
    let assignments = examples
        .iter()
        .zip(vectors)
        .zip(&fit.assignments)
        .map(|((e, v), &a)| ClusterAssignment {
            example_id: e.id.clone(),
            cluster: a,
            distance_sq: dist_sq(&v.values, &fit.centroids[a]),
        })
        .collect();
    Ok(ClusterModel {
        c: fit.centroids.len(),
        dim: fit.centroids.first().map(|cv| cv.len()).unwrap_or(0),
        seed,
        inertia: fit.inertia,
        iterations: fit.iterations,
        inertia_history: fit.inertia_history,
        centroids: fit.centroids,
        assignments,
        fingerprint,
        parent_fingerprint,
    })
}

/// The min(m, cluster size) member ids closest to the cluster centroid,
/// ascending by distance, ties broken by example id.
pub fn nearest_to_centroid(model: &ClusterModel, cluster: usize, m: usize) -> Result<Vec<String>> {
    if cluster >= model.c {
        return Err(ApsError::Index(format!(
            "cluster {} out of range (c = {})",
            cluster, model.c
        )));
    }
    if m < 1 {
        return Err(ApsError::Precondition("m must be at least 1".into()));
    }
    let mut members: Vec<(&f64, &str)> = model
        .assignments
        .iter()
        .filter(|a| a.cluster == cluster)
        .map(|a| (&a.distance_sq, a.example_id.as_str()))
        .collect();
    members.sort_by(|a, b| a.0.total_cmp(b.0).then_with(|| a.1.cmp(b.1)));
    Ok(members
        .into_iter()
        .take(m)
        .map(|(_, id)| id.to_string())
        .collect())
}

// --- artifact serialization -------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ClusterMeta {
    c: usize,
    dim: usize,
    seed: u64,
    inertia: f64,
    iterations: usize,
    inertia_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CentroidRecord {
    cluster: usize,
    values: Vec<f64>,
}

impl Artifact for ClusterModel {
    const KIND: &'static str = "cluster-model";
    const VERSION: u32 = 1;

    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn parent(&self) -> Option<&str> {
        self.parent_fingerprint.as_deref()
    }

    fn record_lines(&self) -> Result<Vec<String>> {
        use crate::domain::artifact::to_record;
        let mut lines = Vec::with_capacity(1 + self.c + self.assignments.len());
        lines.push(to_record(&ClusterMeta {
            c: self.c,
            dim: self.dim,
            seed: self.seed,
            inertia: self.inertia,
            iterations: self.iterations,
            inertia_history: self.inertia_history.clone(),
        })?);
        for (cluster, values) in self.centroids.iter().enumerate() {
            lines.push(to_record(&CentroidRecord {
                cluster,
                values: values.clone(),
            })?);
        }
        for a in &self.assignments {
            lines.push(to_record(a)?);
        }
        Ok(lines)
    }

    fn from_parts(header: &ArtifactHeader, records: &[&str]) -> Result<Self> {
        use crate::domain::artifact::parse_record;
        let meta_line = records
            .first()
            .ok_or_else(|| ApsError::StaleArtifact("missing cluster meta record".into()))?;
        let meta: ClusterMeta = parse_record(meta_line, "cluster meta")?;
        if records.len() < 1 + meta.c {
            return Err(ApsError::StaleArtifact("missing centroid records".into()));
        }
        let mut centroids = Vec::with_capacity(meta.c);
        for line in &records[1..1 + meta.c] {
            let rec: CentroidRecord = parse_record(line, "centroid")?;
            if rec.cluster != centroids.len() {
                return Err(ApsError::StaleArtifact("centroids out of order".into()));
            }
            centroids.push(rec.values);
        }
        let assignments = records[1 + meta.c..]
            .iter()
            .map(|line| parse_record(line, "assignment"))
            .collect::<Result<Vec<ClusterAssignment>>>()?;
        Ok(ClusterModel {
            c: meta.c,
            dim: meta.dim,
            seed: meta.seed,
            inertia: meta.inertia,
            iterations: meta.iterations,
            inertia_history: meta.inertia_history,
            centroids,
            assignments,
            fingerprint: header.fingerprint.clone(),
            parent_fingerprint: header.parent.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Split;

    fn vecs(points: &[&[f64]]) -> Vec<EmbeddingVector> {
        points
            .iter()
            .map(|p| EmbeddingVector {
                values: p.to_vec(),
            })
            .collect()
    }

    fn example(id: &str) -> QAExample {
        QAExample::new(
            id,
            format!("question {id}"),
            "",
            "",
            "1",
            AnswerType::FreeFormNumeric,
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn clustering_text_cases() {
        let mut e = example("a");
        e.question = "2+2?".into();
        assert_eq!(clustering_text(&e), "2+2?");

        e.context = "given x".into();
        assert_eq!(clustering_text(&e), "2+2? given x");
        assert_eq!(clustering_text(&e), clustering_text(&e));

        let mc = QAExample::new(
            "b",
            "pick one",
            "A)1 B)2",
            "because reasons",
            "A",
            AnswerType::MultipleChoice,
            Split::Train,
        )
        .unwrap();
        let text = clustering_text(&mc);
        assert!(text.contains("because reasons"));
        assert!(text.contains("A)1 B)2"));
    }

    #[test]
    fn single_cluster_centroid_is_the_mean() {
        let vectors = vecs(&[&[0.0, 0.0], &[2.0, 0.0], &[1.0, 3.0]]);
        let fit = kmeans(&vectors, 1, 0).unwrap();
        assert_eq!(fit.centroids.len(), 1);
        assert!((fit.centroids[0][0] - 1.0).abs() < 1e-12);
        assert!((fit.centroids[0][1] - 1.0).abs() < 1e-12);
        assert!(fit.assignments.iter().all(|&a| a == 0));
    }

    /// Brute-force minimum inertia over every 2-partition.
    fn brute_force_two_partition(points: &[&[f64]]) -> (f64, Vec<usize>) {
        let n = points.len();
        let dim = points[0].len();
        let mut best = (f64::INFINITY, vec![0; n]);
        for mask in 1..(1u32 << n) - 1 {
            let assignment: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let (centroids, counts) = recompute_means(points, &assignment, 2, dim);
            if counts.contains(&0) {
                continue;
            }
            let inertia = total_inertia(points, &assignment, &centroids);
            if inertia < best.0 {
                best = (inertia, assignment);
            }
        }
        best
    }

    #[test]
    fn two_blobs_match_brute_force() {
        let raw: Vec<&[f64]> = vec![&[0.0, 0.0], &[0.0, 1.0], &[10.0, 10.0], &[10.0, 11.0]];
        let vectors = vecs(&raw);
        let fit = kmeans(&vectors, 2, 123).unwrap();
        let (best_inertia, best_assignment) = brute_force_two_partition(&raw);
        assert!((fit.inertia - best_inertia).abs() < 1e-9);
        // Same partition up to label swap.
        let same = fit.assignments == best_assignment
            || fit
                .assignments
                .iter()
                .zip(&best_assignment)
                .all(|(&a, &b)| a == 1 - b);
        assert!(same, "partition differs: {:?}", fit.assignments);
    }

    #[test]
    fn c_larger_than_points_is_config_error() {
        let vectors = vecs(&[&[0.0], &[1.0]]);
        assert!(matches!(
            kmeans(&vectors, 3, 0),
            Err(ApsError::Config(_))
        ));
    }

    #[test]
    fn inertia_history_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vectors: Vec<EmbeddingVector> = (0..40)
            .map(|_| EmbeddingVector {
                values: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let fit = kmeans(&vectors, 5, 21).unwrap();
        for pair in fit.inertia_history.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12,
                "inertia increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn converged_assignments_are_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vectors: Vec<EmbeddingVector> = (0..30)
            .map(|_| EmbeddingVector {
                values: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let fit = kmeans(&vectors, 4, 77).unwrap();
        for (i, &a) in fit.assignments.iter().enumerate() {
            let own = dist_sq(&vectors[i].values, &fit.centroids[a]);
            for centroid in &fit.centroids {
                assert!(own <= dist_sq(&vectors[i].values, centroid) + 1e-12);
            }
        }
    }

    #[test]
    fn seed_determinism_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let examples: Vec<QAExample> = (0..20).map(|i| example(&format!("e{i:03}"))).collect();
        let vectors: Vec<EmbeddingVector> = (0..20)
            .map(|_| EmbeddingVector {
                values: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let a = fit_cluster_model(&examples, &vectors, 3, 11, "fp".into(), None).unwrap();
        let b = fit_cluster_model(&examples, &vectors, 3, 11, "fp".into(), None).unwrap();
        assert_eq!(a, b);
        let la = a.record_lines().unwrap();
        let lb = b.record_lines().unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn nearest_to_centroid_orders_and_saturates() {
        let examples: Vec<QAExample> = (0..4).map(|i| example(&format!("e{i}"))).collect();
        let vectors = vecs(&[&[0.0], &[1.0], &[0.2], &[5.0]]);
        let model = fit_cluster_model(&examples, &vectors, 1, 0, "fp".into(), None).unwrap();
        // Whole cluster when m exceeds the size, sorted by distance.
        let all = nearest_to_centroid(&model, 0, 10).unwrap();
        assert_eq!(all.len(), 4);
        // m=1 returns the single distance-minimizing member: linear scan.
        let one = nearest_to_centroid(&model, 0, 1).unwrap();
        let best_by_scan = model
            .assignments
            .iter()
            .min_by(|a, b| a.distance_sq.total_cmp(&b.distance_sq))
            .unwrap();
        assert_eq!(one, vec![best_by_scan.example_id.clone()]);
        // Out of range cluster.
        assert!(matches!(
            nearest_to_centroid(&model, 1, 1),
            Err(ApsError::Index(_))
        ));
    }

    #[test]
    fn recomputed_inertia_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let examples: Vec<QAExample> = (0..25).map(|i| example(&format!("e{i:03}"))).collect();
        let vectors: Vec<EmbeddingVector> = (0..25)
            .map(|_| EmbeddingVector {
                values: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let model = fit_cluster_model(&examples, &vectors, 4, 1, "fp".into(), None).unwrap();
        let relative = (model.recomputed_inertia() - model.inertia).abs()
            / model.inertia.max(f64::MIN_POSITIVE);
        assert!(relative < 1e-9);
    }

    #[test]
    fn separated_blobs_are_recovered_exactly() {
        // Four tight blobs with inter-blob distance well above 10x the
        // intra-blob spread; c=4 must recover the exact partition.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let centers = [[0.0, 0.0], [50.0, 0.0], [0.0, 50.0], [50.0, 50.0]];
        let mut vectors = Vec::new();
        let mut truth = Vec::new();
        for (label, center) in centers.iter().enumerate() {
            for _ in 0..12 {
                vectors.push(EmbeddingVector {
                    values: vec![
                        center[0] + rng.gen_range(-1.0..1.0),
                        center[1] + rng.gen_range(-1.0..1.0),
                    ],
                });
                truth.push(label);
            }
        }
        let fit = kmeans(&vectors, 4, 4242).unwrap();
        assert!((adjusted_rand_index(&truth, &fit.assignments) - 1.0).abs() < 1e-12);
    }

    /// Adjusted Rand index between two labelings (test oracle).
    fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let ka = a.iter().max().unwrap() + 1;
        let kb = b.iter().max().unwrap() + 1;
        let mut table = vec![vec![0usize; kb]; ka];
        for i in 0..n {
            table[a[i]][b[i]] += 1;
        }
        let choose2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
        let sum_ij: f64 = table.iter().flatten().map(|&x| choose2(x)).sum();
        let sum_a: f64 = table.iter().map(|row| choose2(row.iter().sum())).sum();
        let sum_b: f64 = (0..kb)
            .map(|j| choose2(table.iter().map(|row| row[j]).sum()))
            .sum();
        let expected = sum_a * sum_b / choose2(n);
        let max = (sum_a + sum_b) / 2.0;
        (sum_ij - expected) / (max - expected)
    }
}
