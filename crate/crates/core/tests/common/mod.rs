//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use mrsim_core::estimator::{EstimatorConfig, TravelTimeSeries};
use mrsim_core::topomap::{ArcId, NodeId, TopoMap};
use mrsim_core::worldsim::{RobotId, TravelObservation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

/// Weakly connected random digraph with `n` nodes, no parallel arcs and
/// positive lengths. Also returns an independent positive weight per arc.
pub fn random_digraph(
    rng: &mut impl Rng,
    n: usize,
    density: f64,
) -> (TopoMap, HashMap<ArcId, f64>) {
    let mut arcs: Vec<(usize, usize)> = Vec::new();
    // a random spanning path in either direction keeps the graph connected
    for i in 1..n {
        let j = rng.random_range(0..i);
        if rng.random_bool(0.5) {
            arcs.push((i, j));
        } else {
            arcs.push((j, i));
        }
    }
    for u in 0..n {
        for v in 0..n {
            if u != v && !arcs.contains(&(u, v)) && rng.random_bool(density) {
                arcs.push((u, v));
            }
        }
    }
    let nodes: Vec<String> = (0..n)
        .map(|i| {
            format!(
                r#"{{"id": {i}, "x": {}, "y": {}}}"#,
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0)
            )
        })
        .collect();
    let mut weights = HashMap::new();
    let arc_json: Vec<String> = arcs
        .iter()
        .enumerate()
        .map(|(id, (u, v))| {
            weights.insert(ArcId(id as u32), rng.random_range(0.1..10.0));
            format!(
                r#"{{"id": {id}, "from": {u}, "to": {v}, "length": {}, "zone": "z"}}"#,
                rng.random_range(0.5..10.0)
            )
        })
        .collect();
    let json = format!(
        r#"{{"zones": ["z"], "nodes": [{}], "arcs": [{}]}}"#,
        nodes.join(","),
        arc_json.join(",")
    );
    (
        TopoMap::from_json(&json).expect("generated map is valid"),
        weights,
    )
}

/// Cheapest simple path by exhaustive depth-first enumeration.
pub fn exhaustive_shortest(
    map: &TopoMap,
    weights: &HashMap<ArcId, f64>,
    from: NodeId,
    to: NodeId,
) -> Option<f64> {
    fn walk(
        map: &TopoMap,
        weights: &HashMap<ArcId, f64>,
        at: NodeId,
        to: NodeId,
        cost: f64,
        seen: &mut Vec<NodeId>,
        best: &mut Option<f64>,
    ) {
        if at == to {
            if best.is_none_or(|b| cost < b) {
                *best = Some(cost);
            }
            return;
        }
        for arc in map.arcs().iter().filter(|a| a.origin == at) {
            if seen.contains(&arc.destination) {
                continue;
            }
            seen.push(arc.destination);
            walk(
                map,
                weights,
                arc.destination,
                to,
                cost + weights[&arc.id],
                seen,
                best,
            );
            seen.pop();
        }
    }
    let mut best = None;
    walk(map, weights, from, to, 0.0, &mut vec![from], &mut best);
    best
}

/// Direct evaluation of the bilinear travel-time equation for the next
/// instance, with the current innovation set to zero.
///
/// `x[j-1]` is X(k-j) and `xi[l-1]` is xi(k-l) (newest first). The equation
/// is written about the mean:
/// `(X(k) - mu) + sum_j a_j (X(k-j) - mu) = sum_l b_l xi(k-l) + sum_l sum_{z<=l} c_lz xi(k-l) X(k-z)`.
pub fn bilinear_direct(
    a: &[f64],
    b: &[f64],
    c: &[Vec<f64>],
    x: &[f64],
    xi: &[f64],
    mu: f64,
) -> f64 {
    let mut rhs = 0.0;
    for l in 1..=b.len() {
        rhs += b[l - 1] * xi[l - 1];
        for z in 1..=l {
            rhs += c[l - 1][z - 1] * xi[l - 1] * x[z - 1];
        }
    }
    let mut lhs_rest = 0.0;
    for j in 1..=a.len() {
        lhs_rest += a[j - 1] * (x[j - 1] - mu);
    }
    mu + rhs - lhs_rest
}

/// One step of the textbook scalar random-walk Kalman filter.
/// Returns (posterior mean, posterior variance, gain).
pub fn scalar_kalman(x: f64, p: f64, q: f64, r: f64, drift: f64, y: f64) -> (f64, f64, f64) {
    let x_prior = x + drift;
    let p_prior = p + q;
    let gain = p_prior / (p_prior + r);
    (x_prior + gain * (y - x_prior), (1.0 - gain) * p_prior, gain)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(p: &nalgebra::DMatrix<f64>) -> f64 {
    p.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_asymmetry(p: &nalgebra::DMatrix<f64>) -> f64 {
    (p - p.transpose()).abs().max()
}

/// Travel times from the model with a persistent innovation: the change
/// between instances follows its own slow random walk, observed with noise.
pub fn synthetic_series(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drift_noise = Normal::new(0.0, 0.05).unwrap();
    let obs_noise = Normal::new(0.0, 0.05).unwrap();
    let mut x = 30.0;
    let mut xi: f64 = 0.0;
    (0..len)
        .map(|_| {
            xi = (xi + drift_noise.sample(&mut rng)).clamp(-1.0, 1.0);
            x = (x + xi).clamp(5.0, 60.0);
            x + obs_noise.sample(&mut rng)
        })
        .collect()
}

/// RMSE of the filter's one-step estimate and of the last-value predictor
/// over `ys` (the first 10 instances are warm-up).
pub fn skill_trial(ys: &[f64]) -> (f64, f64) {
    let config = EstimatorConfig {
        regression_no: 4,
        process_noise_var: 0.05f64.powi(2),
        obs_noise_var: 0.05f64.powi(2),
        ..EstimatorConfig::default()
    }
    .normalized()
    .unwrap();
    let mut series = TravelTimeSeries::new(config);
    let (mut filter_se, mut naive_se, mut n) = (0.0, 0.0, 0.0);
    for (k, &y) in ys.iter().enumerate() {
        if k >= 10 {
            let est = series.estimate(k as u64 + 1, None, 1.0).unwrap().value;
            filter_se += (est - y).powi(2);
            naive_se += (ys[k - 1] - y).powi(2);
            n += 1.0;
        }
        let obs = TravelObservation {
            robot: RobotId(0),
            arc: ArcId(0),
            instance: k as u64 + 1,
            travel_time: y,
        };
        series.ingest(&obs).unwrap();
    }
    ((filter_se / n).sqrt(), (naive_se / n).sqrt())
}
