//! Exact earth mover's distance via successive shortest augmenting paths on
//! the bipartite transportation network.

use crate::error::{shape_err, Result};

const MASS_EPS: f64 = 1e-14;

/// Minimum transport cost moving `supply` onto `demand` under `cost(i, j)`.
///
/// Both vectors must be non-negative with equal totals (up to rounding);
/// zero entries are skipped. Cost must be non-negative.
pub fn transport_cost(supply: &[f64], demand: &[f64], cost: impl Fn(usize, usize) -> f64) -> Result<f64> {
    if supply.iter().chain(demand).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return shape_err("transport masses must be finite and non-negative");
    }
    let src: Vec<usize> = (0..supply.len()).filter(|&i| supply[i] > 0.0).collect();
    let dst: Vec<usize> = (0..demand.len()).filter(|&j| demand[j] > 0.0).collect();
    let (s, d) = (src.len(), dst.len());
    if s == 0 || d == 0 {
        return Ok(0.0);
    }
    let c: Vec<f64> = src
        .iter()
        .flat_map(|&i| dst.iter().map(move |&j| (i, j)))
        .map(|(i, j)| cost(i, j))
        .collect();
    let mut left: Vec<f64> = src.iter().map(|&i| supply[i]).collect();
    let mut need: Vec<f64> = dst.iter().map(|&j| demand[j]).collect();
    let mut flow = vec![0.0; s * d];

    // node ids: sources 0..s, sinks s..s+d
    let v = s + d;
    let mut potential = vec![0.0; v];
    loop {
        let remaining: f64 = left.iter().sum();
        if remaining <= MASS_EPS || need.iter().all(|&x| x <= MASS_EPS) {
            break;
        }
        // Dijkstra on reduced costs from all sources with supply left
        let mut dist = vec![f64::INFINITY; v];
        let mut prev = vec![usize::MAX; v];
        let mut done = vec![false; v];
        for a in 0..s {
            if left[a] > MASS_EPS {
                dist[a] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for x in 0..v {
                if !done[x] && dist[x] < best {
                    best = dist[x];
                    u = x;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < s {
                for b in 0..d {
                    let w = (c[u * d + b] + potential[u] - potential[s + b]).max(0.0);
                    if dist[u] + w < dist[s + b] {
                        dist[s + b] = dist[u] + w;
                        prev[s + b] = u;
                    }
                }
            } else {
                let b = u - s;
                for a in 0..s {
                    if flow[a * d + b] > MASS_EPS {
                        let w = (-c[a * d + b] + potential[u] - potential[a]).max(0.0);
                        if dist[u] + w < dist[a] {
                            dist[a] = dist[u] + w;
                            prev[a] = u;
                        }
                    }
                }
            }
        }
        let Some(sink) = (0..d)
            .filter(|&b| need[b] > MASS_EPS && dist[s + b].is_finite())
            .min_by(|&x, &y| dist[s + x].total_cmp(&dist[s + y]))
        else {
            break;
        };
        for x in 0..v {
            if dist[x].is_finite() {
                potential[x] += dist[x];
            }
        }
        // walk back to the originating source to find the bottleneck
        let mut path = vec![s + sink];
        let mut node = s + sink;
        while prev[node] != usize::MAX {
            node = prev[node];
            path.push(node);
        }
        let origin = node;
        let mut delta = left[origin].min(need[sink]);
        for pair in path.windows(2) {
            let (to, from) = (pair[0], pair[1]);
            if from >= s {
                // backward arc sink `from` -> source `to`
                delta = delta.min(flow[to * d + (from - s)]);
            }
        }
        for pair in path.windows(2) {
            let (to, from) = (pair[0], pair[1]);
            if from < s {
                flow[from * d + (to - s)] += delta;
            } else {
                let f = &mut flow[to * d + (from - s)];
                *f -= delta;
                if *f < MASS_EPS {
                    *f = 0.0;
                }
            }
        }
        left[origin] -= delta;
        need[sink] -= delta;
    }
    Ok(flow.iter().zip(&c).map(|(f, c)| f * c).sum())
}

/// EMD between two mass vectors after normalizing each to unit total.
/// `None` when either vector has no mass.
pub fn normalized_emd(a: &[f64], b: &[f64], dist: impl Fn(usize, usize) -> f64) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return shape_err(format!("EMD over {} and {} bins", a.len(), b.len()));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if sa <= 0.0 || sb <= 0.0 {
        return Ok(None);
    }
    let na: Vec<f64> = a.iter().map(|x| x / sa).collect();
    let nb: Vec<f64> = b.iter().map(|x| x / sb).collect();
    transport_cost(&na, &nb, dist).map(Some)
}
