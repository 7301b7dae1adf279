//! Exact balanced transportation with integer costs by successive shortest
//! paths (Dijkstra on reduced costs with integer node potentials).

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct TransportSolution {
    /// `(source, sink, mass)` for every positive flow.
    pub flows: Vec<(usize, usize, f64)>,
    /// `Σ flow · cost`.
    pub cost: f64,
    /// Largest of the primal, dual and complementary-slackness residuals.
    pub residual: f64,
}

const NONE: usize = usize::MAX;

/// Minimize `Σ f_ij c_ij` subject to `Σ_j f_ij = supply_i`,
/// `Σ_i f_ij = demand_j`, `f ≥ 0`. `cost` is row-major `m × k`.
pub(crate) fn solve(supply: &[f64], demand: &[f64], cost: &[i64]) -> Result<TransportSolution> {
    let m = supply.len();
    let k = demand.len();
    assert_eq!(cost.len(), m * k);
    // Nodes: 0 = source hub, 1..=m suppliers, m+1..=m+k consumers, m+k+1 = sink hub.
    let nodes = m + k + 2;
    let t = nodes - 1;
    let mut flow = vec![0.0f64; m * k];
    let mut sup_rem = supply.to_vec();
    let mut dem_rem = demand.to_vec();
    let mut pot = vec![0i64; nodes];
    let mut dist = vec![i64::MAX; nodes];
    let mut prev = vec![NONE; nodes];
    let mut done = vec![false; nodes];
    let max_rounds = 4 * (m + k) * (m + k) + 100;

    for _ in 0..max_rounds {
        if sup_rem.iter().all(|&s| s <= 1e-15) {
            break;
        }
        dist.iter_mut().for_each(|d| *d = i64::MAX);
        prev.iter_mut().for_each(|p| *p = NONE);
        done.iter_mut().for_each(|d| *d = false);
        dist[0] = 0;
        loop {
            let mut u = NONE;
            let mut best = i64::MAX;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == NONE || u == t {
                break;
            }
            done[u] = true;
            let du = dist[u];
            let relax = |v: usize, c: i64, dist: &mut [i64], prev: &mut [usize]| {
                let nd = du + c + pot[u] - pot[v];
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                }
            };
            if u == 0 {
                for i in 0..m {
                    if sup_rem[i] > 0.0 {
                        relax(1 + i, 0, &mut dist, &mut prev);
                    }
                }
            } else if u <= m {
                let i = u - 1;
                if supply[i] - sup_rem[i] > 0.0 {
                    relax(0, 0, &mut dist, &mut prev);
                }
                for j in 0..k {
                    relax(m + 1 + j, cost[i * k + j], &mut dist, &mut prev);
                }
            } else {
                let j = u - m - 1;
                for i in 0..m {
                    if flow[i * k + j] > 0.0 {
                        relax(1 + i, -cost[i * k + j], &mut dist, &mut prev);
                    }
                }
                if dem_rem[j] > 0.0 {
                    relax(t, 0, &mut dist, &mut prev);
                }
            }
        }
        if dist[t] == i64::MAX {
            break;
        }
        let dt = dist[t];
        for v in 0..nodes {
            pot[v] += dist[v].min(dt);
        }
        // Bottleneck along the path.
        let mut delta = f64::INFINITY;
        let mut v = t;
        while v != 0 {
            let u = prev[v];
            delta = delta.min(edge_capacity(u, v, m, k, &flow, &sup_rem, &dem_rem, supply));
            v = u;
        }
        let mut v = t;
        while v != 0 {
            let u = prev[v];
            push(u, v, delta, m, k, &mut flow, &mut sup_rem, &mut dem_rem);
            v = u;
        }
    }

    // Duals of the transportation LP: u_i = -pot(i), v_j = pot(j).
    let mut residual = 0.0f64;
    let mut total_cost = 0.0;
    let mut flows = Vec::new();
    for i in 0..m {
        residual = residual.max((flow[i * k..(i + 1) * k].iter().sum::<f64>() - supply[i]).abs());
        for j in 0..k {
            let c = cost[i * k + j];
            let reduced = c - (pot[m + 1 + j] - pot[1 + i]);
            if reduced < 0 {
                residual = residual.max(-reduced as f64);
            }
            let f = flow[i * k + j];
            if f > 0.0 {
                residual = residual.max(f * reduced as f64);
                total_cost += f * c as f64;
                flows.push((i, j, f));
            }
        }
    }
    for j in 0..k {
        let col: f64 = (0..m).map(|i| flow[i * k + j]).sum();
        residual = residual.max((col - demand[j]).abs());
    }
    if residual > 1e-9 {
        return Err(Error::Certificate(residual));
    }
    Ok(TransportSolution {
        flows,
        cost: total_cost,
        residual,
    })
}

#[allow(clippy::too_many_arguments)]
fn edge_capacity(u: usize, v: usize, m: usize, k: usize, flow: &[f64], sup_rem: &[f64], dem_rem: &[f64], supply: &[f64]) -> f64 {
    let t = m + k + 1;
    if u == 0 {
        sup_rem[v - 1]
    } else if v == 0 {
        supply[u - 1] - sup_rem[u - 1]
    } else if v == t {
        dem_rem[u - m - 1]
    } else if u <= m {
        f64::INFINITY
    } else {
        flow[(v - 1) * k + (u - m - 1)]
    }
}

#[allow(clippy::too_many_arguments)]
fn push(u: usize, v: usize, delta: f64, m: usize, k: usize, flow: &mut [f64], sup_rem: &mut [f64], dem_rem: &mut [f64]) {
    let t = m + k + 1;
    let sub = |x: &mut f64| {
        *x = if *x == delta { 0.0 } else { (*x - delta).max(0.0) };
    };
    if u == 0 {
        sub(&mut sup_rem[v - 1]);
    } else if v == 0 {
        sup_rem[u - 1] += delta;
    } else if v == t {
        sub(&mut dem_rem[u - m - 1]);
    } else if u <= m {
        flow[(u - 1) * k + (v - m - 1)] += delta;
    } else {
        sub(&mut flow[(v - 1) * k + (u - m - 1)]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        // Bernoulli(0.3) vs Bernoulli(0.7) with 0/1 costs.
        let s = solve(&[0.7, 0.3], &[0.3, 0.7], &[0, 1, 1, 0]).unwrap();
        assert!((s.cost - 0.4).abs() < 1e-12);
    }

    #[test]
    fn needs_rerouting() {
        // Greedy cheapest-first assignment is suboptimal here.
        let cost = [1, 2, 3, 1];
        let s = solve(&[0.5, 0.5], &[0.5, 0.5], &cost).unwrap();
        assert!((s.cost - 1.0).abs() < 1e-12);
        let cost = [0, 1, 1, 3];
        let s = solve(&[0.5, 0.5], &[0.5, 0.5], &cost).unwrap();
        assert!((s.cost - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_permutations() {
        // Uniform 3×3 problems reduce to the assignment problem.
        let cost = [4, 1, 3, 2, 0, 5, 3, 2, 2];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms
            .iter()
            .map(|p| (0..3).map(|i| cost[i * 3 + p[i]]).sum::<i64>())
            .min()
            .unwrap();
        let w = 1.0 / 3.0;
        let s = solve(&[w; 3], &[w; 3], &cost).unwrap();
        assert!((s.cost - best as f64 / 3.0).abs() < 1e-12);
    }
}
