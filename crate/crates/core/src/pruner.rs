//! Cardinality control for quadratic sets.
//!
//! Cluster pruning groups members by the location of their windowed
//! minimizer and keeps the lowest-valued member of each group, so that a
//! distant but currently unlikely mode keeps a representative. Value pruning
//! keeps the globally lowest members and is provided as a baseline.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadform::QuadSet;
use crate::window::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneStrategy {
    Cluster,
    Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub max_members: usize,
    pub strategy: PruneStrategy,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            max_members: 12,
            strategy: PruneStrategy::Cluster,
            seed: 0,
            max_iterations: 100,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_members == 0 {
            return Err(Error::Config("prune.max_members must be >= 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("prune.max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Windowed minimizer of one member.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgminEntry {
    pub index: usize,
    pub point: DVector<f64>,
    pub value: f64,
}

pub fn argmin_catalog(s: &QuadSet, w: &Window) -> Result<Vec<ArgminEntry>> {
    s.members()
        .par_iter()
        .enumerate()
        .map(|(index, q)| {
            let (point, value) = q.windowed_argmin(w)?;
            Ok(ArgminEntry { index, point, value })
        })
        .collect()
}

/// Entry with the lowest value; ties go to the lowest index.
pub fn best_entry(catalog: &[ArgminEntry]) -> Option<&ArgminEntry> {
    catalog.iter().fold(None, |best: Option<&ArgminEntry>, e| match best {
        Some(b) if b.value <= e.value => Some(b),
        _ => Some(e),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMap {
    /// Cluster id per point, compacted to `0..clusters`.
    pub labels: Vec<usize>,
    pub clusters: usize,
    /// Requested count when it exceeded the number of distinct points.
    pub reduced_from: Option<usize>,
}

fn dist2(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_count(points: &[DVector<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Lloyd's k-means with farthest-point seeding.
///
/// The first center is a point drawn with ChaCha8 seeded by `seed`; each
/// further center is the point farthest from the centers chosen so far.
/// Assignment ties go to the lowest center index, and clusters that end up
/// empty are dropped.
pub fn cluster(points: &[DVector<f64>], k: usize, seed: u64, max_iterations: usize) -> ClusterMap {
    if points.is_empty() || k == 0 {
        return ClusterMap { labels: vec![], clusters: 0, reduced_from: None };
    }
    let distinct = distinct_count(points);
    let (k, reduced_from) = if k > distinct { (distinct, Some(k)) } else { (k, None) };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let (far, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        let c = points[far].clone();
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(p, &c));
        }
        centers.push(c);
    }

    let assign = |centers: &[DVector<f64>]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = (0, f64::INFINITY);
                for (j, c) in centers.iter().enumerate() {
                    let d = dist2(p, c);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best.0
            })
            .collect()
    };

    let mut labels = assign(&centers);
    for _ in 0..max_iterations {
        for (j, c) in centers.iter_mut().enumerate() {
            let mut sum = DVector::zeros(c.len());
            let mut count = 0usize;
            for (p, &l) in points.iter().zip(&labels) {
                if l == j {
                    sum += p;
                    count += 1;
                }
            }
            if count > 0 {
                *c = sum / count as f64;
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }

    let mut remap = vec![usize::MAX; k];
    let mut clusters = 0;
    for j in 0..k {
        if labels.contains(&j) {
            remap[j] = clusters;
            clusters += 1;
        }
    }
    let labels = labels.into_iter().map(|l| remap[l]).collect();
    ClusterMap { labels, clusters, reduced_from }
}

/// Indices to keep, ascending.
pub fn select_survivors(catalog: &[ArgminEntry], cfg: &PruneConfig) -> Vec<usize> {
    if catalog.len() <= cfg.max_members {
        return catalog.iter().map(|e| e.index).collect();
    }
    let mut keep = match cfg.strategy {
        PruneStrategy::Value => {
            let mut order: Vec<&ArgminEntry> = catalog.iter().collect();
            order.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.index.cmp(&b.index)));
            order.iter().take(cfg.max_members).map(|e| e.index).collect::<Vec<_>>()
        }
        PruneStrategy::Cluster => {
            let points: Vec<DVector<f64>> = catalog.iter().map(|e| e.point.clone()).collect();
            let map = cluster(&points, cfg.max_members, cfg.seed, cfg.max_iterations);
            let mut best: Vec<Option<&ArgminEntry>> = vec![None; map.clusters];
            for (e, &l) in catalog.iter().zip(&map.labels) {
                best[l] = match best[l] {
                    Some(b) if b.value < e.value || (b.value == e.value && b.index < e.index) => Some(b),
                    _ => Some(e),
                };
            }
            best.into_iter().flatten().map(|e| e.index).collect()
        }
    };
    keep.sort_unstable();
    keep
}

pub fn prune(s: &QuadSet, w: &Window, cfg: &PruneConfig) -> Result<QuadSet> {
    if s.len() <= cfg.max_members {
        return Ok(s.clone());
    }
    let catalog = argmin_catalog(s, w)?;
    s.select(&select_survivors(&catalog, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadform::QuadForm;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn bowl(center: &[f64], offset: f64) -> QuadForm {
        let n = center.len();
        QuadForm::centered(&DMatrix::identity(n, n), &v(center), 2.0 * offset).unwrap()
    }

    fn wss(points: &[DVector<f64>], labels: &[usize]) -> f64 {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        (0..k)
            .map(|j| {
                let members: Vec<&DVector<f64>> =
                    points.iter().zip(labels).filter(|(_, &l)| l == j).map(|(p, _)| p).collect();
                if members.is_empty() {
                    return 0.0;
                }
                let mean = members.iter().fold(DVector::zeros(points[0].len()), |a, p| a + *p)
                    / members.len() as f64;
                members.iter().map(|p| dist2(p, &mean)).sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn single_cluster() {
        let pts: Vec<_> = (0..7).map(|i| v(&[i as f64, -(i as f64)])).collect();
        let m = cluster(&pts, 1, 9, 100);
        assert_eq!(m.clusters, 1);
        assert!(m.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn separated_groups_split() {
        let mut pts = Vec::new();
        for i in 0..5 {
            pts.push(v(&[0.1 * i as f64, 0.05 * i as f64]));
        }
        for i in 0..5 {
            pts.push(v(&[10.0 + 0.1 * i as f64, 3.0]));
        }
        for seed in 0..10 {
            let m = cluster(&pts, 2, seed, 100);
            assert_eq!(m.clusters, 2);
            assert!(m.labels[..5].iter().all(|&l| l == m.labels[0]));
            assert!(m.labels[5..].iter().all(|&l| l == m.labels[5]));
            assert_ne!(m.labels[0], m.labels[5]);
        }
    }

    #[test]
    fn k_reduced_to_distinct_points() {
        let pts = vec![v(&[1.0]), v(&[1.0]), v(&[2.0])];
        let m = cluster(&pts, 3, 0, 100);
        assert_eq!(m.clusters, 2);
        assert_eq!(m.reduced_from, Some(3));
    }

    #[test]
    fn beats_random_assignments() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pts: Vec<_> = (0..30).map(|_| v(&[rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])).collect();
        let m = cluster(&pts, 3, 5, 100);
        let ours = wss(&pts, &m.labels);
        for _ in 0..100 {
            let labels: Vec<usize> = (0..30).map(|_| rng.gen_range(0..3)).collect();
            assert!(ours <= wss(&pts, &labels));
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<_> = (0..40).map(|_| v(&[rng.gen_range(-5.0..5.0)])).collect();
        assert_eq!(cluster(&pts, 4, 3, 100), cluster(&pts, 4, 3, 100));
    }

    #[test]
    fn catalog_examples() {
        let w = Window::uniform(v(&[0.0, 0.0]), 2.0).unwrap();
        let s = QuadSet::new(vec![bowl(&[0.5, -0.5], 1.0), bowl(&[-1.0, 1.0], 0.0)]).unwrap();
        let cat = argmin_catalog(&s, &w).unwrap();
        assert_eq!(cat.len(), 2);
        assert!((cat[0].point.clone() - v(&[0.5, -0.5])).amax() < 1e-12);
        assert!((cat[0].value - 1.0).abs() < 1e-12);
        assert!((cat[1].point.clone() - v(&[-1.0, 1.0])).amax() < 1e-12);
        let single = QuadSet::singleton(bowl(&[5.0, 0.0], 0.0));
        let cat = argmin_catalog(&single, &w).unwrap();
        assert_eq!((cat[0].point.clone(), cat[0].value), single.members()[0].windowed_argmin(&w).unwrap());
    }

    #[test]
    fn catalog_matches_dense_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let w = Window::new(v(&[0.3, -0.2]), v(&[1.0, 1.5]), 4, 5).unwrap();
        let members: Vec<_> = (0..20)
            .map(|_| {
                let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
                let weight = &a * a.transpose() + DMatrix::identity(2, 2) * 0.1;
                let c = v(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
                QuadForm::centered(&weight, &c, rng.gen_range(-1.0..1.0)).unwrap()
            })
            .collect();
        let s = QuadSet::new(members).unwrap();
        let cat = argmin_catalog(&s, &w).unwrap();
        let fine = Window::new(w.center().clone(), w.half_width().clone(), 16, 9).unwrap();
        let grid = fine.full_grid();
        let spacing = w.spacing(0).max(w.spacing(1));
        for (e, q) in cat.iter().zip(s.members()) {
            let best = grid
                .iter()
                .map(|x| (x, q.evaluate(x).unwrap()))
                .fold((&grid[0], f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            assert!((e.point.clone() - best.0).amax() <= spacing, "{} vs {}", e.point, best.0);
        }
    }

    #[test]
    fn distant_high_value_mode_survives() {
        let w = Window::uniform(v(&[5.0, 0.0]), 8.0).unwrap();
        let mut members = Vec::new();
        for j in 0..5 {
            let d = 0.05 * j as f64;
            members.push(bowl(&[0.0 + d, 0.0 - d], 1.0 + 0.1 * j as f64));
        }
        for j in 0..3 {
            let d = 0.05 * j as f64;
            members.push(bowl(&[10.0 - d, 0.0 + d], 101.0 + 0.1 * j as f64));
        }
        let s = QuadSet::new(members).unwrap();
        let cluster_cfg = PruneConfig { max_members: 2, strategy: PruneStrategy::Cluster, seed: 3, max_iterations: 100 };
        let out = prune(&s, &w, &cluster_cfg).unwrap();
        assert_eq!(out, s.select(&[0, 5]).unwrap());
        assert_eq!(out, prune(&s, &w, &cluster_cfg).unwrap());
        let value_cfg = PruneConfig { strategy: PruneStrategy::Value, ..cluster_cfg };
        assert_eq!(prune(&s, &w, &value_cfg).unwrap(), s.select(&[0, 1]).unwrap());
    }

    #[test]
    fn identity_when_within_budget() {
        let w = Window::uniform(v(&[0.0]), 1.0).unwrap();
        let s = QuadSet::new(vec![bowl(&[0.1], 0.0), bowl(&[0.2], 1.0)]).unwrap();
        let cfg = PruneConfig { max_members: 2, ..Default::default() };
        assert_eq!(prune(&s, &w, &cfg).unwrap(), s);
    }

    #[test]
    fn three_clusters_keep_their_best_members() {
        let w = Window::uniform(v(&[0.0]), 5.0).unwrap();
        let centers = [-4.0, 0.0, 4.0];
        let mut members = Vec::new();
        let mut expected = Vec::new();
        for (g, &c) in centers.iter().enumerate() {
            for j in 0..4 {
                let value = 10.0 * g as f64 + [3.0, 1.0, 2.0, 5.0][j];
                if j == 1 {
                    expected.push(members.len());
                }
                members.push(bowl(&[c + 0.1 * j as f64], value));
            }
        }
        let s = QuadSet::new(members).unwrap();
        let cfg = PruneConfig { max_members: 3, ..Default::default() };
        let out = prune(&s, &w, &cfg).unwrap();
        let want = s.select(&expected).unwrap();
        assert_eq!(out, want);
    }

    #[test]
    fn pruning_never_lowers_the_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = Window::uniform(v(&[0.0, 0.0]), 1.0).unwrap();
        let members: Vec<_> = (0..40)
            .map(|_| bowl(&[rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)], rng.gen_range(0.0..3.0)))
            .collect();
        let s = QuadSet::new(members).unwrap();
        for strategy in [PruneStrategy::Cluster, PruneStrategy::Value] {
            let cfg = PruneConfig { max_members: 6, strategy, seed: 4, max_iterations: 100 };
            let out = prune(&s, &w, &cfg).unwrap();
            assert!(out.len() <= 6);
            for q in out.members() {
                assert!(s.members().contains(q));
            }
            let cat = argmin_catalog(&s, &w).unwrap();
            let best = best_entry(&cat).unwrap();
            assert!(out.members().contains(&s.members()[best.index]));
            for _ in 0..1000 {
                let x = v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
                assert!(out.eval_set(&x).unwrap().0 >= s.eval_set(&x).unwrap().0);
            }
        }
    }
}
