//! Minimum-cost perfect matching between two equal-size clouds, with
//! Euclidean distances as costs.
//!
//! [`assign_exact`] runs the O(n^3) shortest-augmenting-path method with
//! dual potentials and is the reference for small inputs. [`assign_auction`]
//! is a scaled bidding solver: every source repeatedly bids for its best
//! target, prices rise, and the tolerance `eps` is halved phase by phase.
//! The auction result is near-optimal, off by at most `n * eps_final`.

use crate::error::{Error, Result};
use crate::geometry::{sq_dist, PointCloud};

/// A bijection from source points to target points and its total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `mapping[i]` is the target index assigned to source `i`.
    pub mapping: Vec<usize>,
    pub total_cost: f64,
}

const EXACT_MAX_POINTS: usize = 512;

/// Start tolerance is the cost range over this divisor.
const AUCTION_EPS_DIVISOR: f64 = 8.0;
/// Scaling ends once `eps` drops below this fraction of the cost range.
const AUCTION_EPS_FLOOR: f64 = 1e-4;
/// Bid budget per source point and scaling phase.
const AUCTION_BIDS_PER_POINT: usize = 50;

fn cost_matrix(x: &PointCloud, y: &PointCloud, op: &str) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::dim(format!(
            "{op} needs equal cloud sizes, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::argument(format!("{op} requires non-empty clouds")));
    }
    let n = x.len();
    let mut cost = vec![0.0; n * n];
    for (i, &p) in x.points.iter().enumerate() {
        for (j, &q) in y.points.iter().enumerate() {
            cost[i * n + j] = sq_dist(p, q).sqrt();
        }
    }
    Ok(cost)
}

fn total_of(x: &PointCloud, y: &PointCloud, mapping: &[usize]) -> f64 {
    mapping
        .iter()
        .enumerate()
        .map(|(i, &j)| sq_dist(x.points[i], y.points[j]).sqrt())
        .sum()
}

/// Exact minimum-cost assignment via shortest augmenting paths over the
/// reduced costs. Limited to 512 points; the cubic scan dominates beyond.
pub fn assign_exact(x: &PointCloud, y: &PointCloud) -> Result<Assignment> {
    if x.len() > EXACT_MAX_POINTS {
        return Err(Error::argument(format!(
            "assign_exact is limited to {EXACT_MAX_POINTS} points, got {}",
            x.len()
        )));
    }
    let cost = cost_matrix(x, y, "assign_exact")?;
    let n = x.len();

    // Row/column potentials, with column n acting as the virtual entry
    // column for each augmentation. owner[j] is the row matched to column j.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![usize::MAX; n + 1];
    for row in 0..n {
        owner[n] = row;
        let mut j_cur = n;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut prev_col = vec![n; n + 1];
        let mut visited = vec![false; n + 1];
        loop {
            visited[j_cur] = true;
            let i_cur = owner[j_cur];
            let mut delta = f64::INFINITY;
            let mut j_next = n;
            for j in 0..n {
                if visited[j] {
                    continue;
                }
                let reduced = cost[i_cur * n + j] - u[i_cur] - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    prev_col[j] = j_cur;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j_next = j;
                }
            }
            for j in 0..=n {
                if visited[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j_cur = j_next;
            if owner[j_cur] == usize::MAX {
                break;
            }
        }
        // Unwind the augmenting path.
        while j_cur != n {
            let j_prev = prev_col[j_cur];
            owner[j_cur] = owner[j_prev];
            j_cur = j_prev;
        }
    }

    let mut mapping = vec![0usize; n];
    for j in 0..n {
        mapping[owner[j]] = j;
    }
    let total_cost = total_of(x, y, &mapping);
    Ok(Assignment { mapping, total_cost })
}

/// Near-optimal assignment by bidding. Each phase runs the auction to
/// completion at the current tolerance, keeps the prices, and halves the
/// tolerance; phases stop after `eps` first falls below
/// `AUCTION_EPS_FLOOR` times the cost range. A bid budget of
/// `AUCTION_BIDS_PER_POINT * n` per phase guards against stalls.
pub fn assign_auction(x: &PointCloud, y: &PointCloud) -> Result<Assignment> {
    let cost = cost_matrix(x, y, "assign_auction")?;
    let n = x.len();

    let max_cost = cost.iter().fold(0.0f64, |a, &b| a.max(b));
    if max_cost == 0.0 {
        // All pairings cost nothing; the identity is optimal.
        let mapping: Vec<usize> = (0..n).collect();
        return Ok(Assignment { mapping, total_cost: 0.0 });
    }

    let eps_floor = AUCTION_EPS_FLOOR * max_cost;
    let mut eps = max_cost / AUCTION_EPS_DIVISOR;
    let mut prices = vec![0.0f64; n];
    let mut source_of = vec![usize::MAX; n];
    let mut target_of = vec![usize::MAX; n];

    loop {
        // New phase: assignments reset, prices carry over.
        source_of.fill(usize::MAX);
        target_of.fill(usize::MAX);
        let mut pending: std::collections::VecDeque<usize> = (0..n).collect();
        let bid_budget = AUCTION_BIDS_PER_POINT * n;
        let mut bids = 0usize;
        while let Some(i) = pending.pop_front() {
            if bids >= bid_budget {
                let assigned = n - pending.len() - 1;
                return Err(Error::Solver(format!(
                    "auction exhausted {bid_budget} bids at eps {eps:.3e} with {assigned}/{n} sources assigned"
                )));
            }
            bids += 1;
            // Value of target j for source i is -cost - price; find the best
            // and second-best to size the bid.
            let row = &cost[i * n..(i + 1) * n];
            let mut best_j = 0usize;
            let mut best = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for (j, (&c, &p)) in row.iter().zip(&prices).enumerate() {
                let value = -c - p;
                if value > best {
                    second = best;
                    best = value;
                    best_j = j;
                } else if value > second {
                    second = value;
                }
            }
            if second == f64::NEG_INFINITY {
                second = best;
            }
            prices[best_j] += (best - second) + eps;
            let evicted = source_of[best_j];
            if evicted != usize::MAX {
                target_of[evicted] = usize::MAX;
                pending.push_back(evicted);
            }
            source_of[best_j] = i;
            target_of[i] = best_j;
        }
        if eps < eps_floor {
            break;
        }
        eps *= 0.5;
    }

    let total_cost = total_of(x, y, &target_of);
    Ok(Assignment { mapping: target_of, total_cost })
}
