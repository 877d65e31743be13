//! Distances between clouds and the training losses built from them.
//!
//! Chamfer distance comes in two modes: `L1` sums mean Euclidean
//! nearest-neighbor distances, `L2` sums mean squared ones. Each direction
//! is averaged over its own cloud before the two are added. The earth
//! mover's distance is the minimum-cost matching cost over point count.
//! The path-length penalty (PMD) is the total Euclidean length of all
//! per-step displacements; it pulls the learned deformation toward the
//! shortest path that still completes the shape.
//!
//! The `*_loss` functions build the same quantities inside a [`Graph`] so
//! gradients flow: nearest-neighbor pairs and matchings are recomputed from
//! current values and treated as constant index structure, while the
//! distances through those pairs stay differentiable for both clouds.

use crate::error::{Error, Result};
use crate::geometry::{sq_dist, PointCloud};
use crate::real::Real;
use crate::tensor::{Graph, Var};
use crate::transport::{assign_auction, assign_exact, Assignment};

/// Distance accounting for [`chamfer`]: Euclidean (`L1`) or squared (`L2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ChamferMode {
    L1,
    L2,
}

/// Matching backend for the earth mover's distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EmdSolver {
    Exact,
    Auction,
}

fn nearest(points: &[[f64; 3]], q: [f64; 3]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, &p) in points.iter().enumerate() {
        let d = sq_dist(p, q);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

fn check_nonempty(x: &PointCloud, y: &PointCloud, op: &str) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::argument(format!("{op} requires non-empty clouds")));
    }
    Ok(())
}

/// Symmetric Chamfer distance between two clouds.
pub fn chamfer(x: &PointCloud, y: &PointCloud, mode: ChamferMode) -> Result<f64> {
    check_nonempty(x, y, "chamfer")?;
    let directed = |from: &PointCloud, to: &PointCloud| -> f64 {
        let total: f64 = from
            .points
            .iter()
            .map(|&p| {
                let (_, d2) = nearest(&to.points, p);
                match mode {
                    ChamferMode::L1 => d2.sqrt(),
                    ChamferMode::L2 => d2,
                }
            })
            .sum();
        total / from.len() as f64
    };
    Ok(directed(x, y) + directed(y, x))
}

/// Largest nearest-neighbor distance in either direction.
pub fn hausdorff(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    check_nonempty(x, y, "hausdorff")?;
    let directed = |from: &PointCloud, to: &PointCloud| -> f64 {
        from.points
            .iter()
            .map(|&p| nearest(&to.points, p).1)
            .fold(0.0f64, f64::max)
    };
    Ok(directed(x, y).max(directed(y, x)).sqrt())
}

/// Mean distance from each input point to its nearest output point: how
/// well the completion preserved what was observed.
pub fn fidelity(input: &PointCloud, output: &PointCloud) -> Result<f64> {
    check_nonempty(input, output, "fidelity")?;
    let total: f64 = input
        .points
        .iter()
        .map(|&p| nearest(&output.points, p).1.sqrt())
        .sum();
    Ok(total / input.len() as f64)
}

/// Match quality of the completed cloud against ground truth, reported as
/// Chamfer distance in squared mode.
pub fn mmd(output: &PointCloud, ground_truth: &PointCloud) -> Result<f64> {
    chamfer(output, ground_truth, ChamferMode::L2)
}

fn solve_assignment(x: &PointCloud, y: &PointCloud, solver: EmdSolver) -> Result<Assignment> {
    match solver {
        EmdSolver::Exact => assign_exact(x, y),
        EmdSolver::Auction => assign_auction(x, y),
    }
}

/// Earth mover's distance: minimum-cost matching cost averaged over the
/// point count. With the auction solver the value is near-optimal.
pub fn emd(x: &PointCloud, y: &PointCloud, solver: EmdSolver) -> Result<f64> {
    check_nonempty(x, y, "emd")?;
    let a = solve_assignment(x, y, solver)?;
    Ok(a.total_cost / x.len() as f64)
}

/// Total path length: the Euclidean norms of every per-step displacement of
/// every point, summed over steps. Zero exactly when nothing moves.
pub fn pmd(displacements: &[Vec<[f64; 3]>]) -> f64 {
    displacements
        .iter()
        .flat_map(|step| step.iter())
        .map(|d| (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
        .sum()
}

/// Per-step Chamfer values and the combined training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Chamfer distance (squared mode) of each intermediate cloud against
    /// the target, one entry per step.
    pub cd_per_step: Vec<f64>,
    /// Earth mover's distance of the final cloud, when requested; 0.0 when
    /// the matching term is disabled.
    pub emd: f64,
    /// Per-point mean path length. The Chamfer terms are per-point means,
    /// so the path term must be one too: a raw path sum would outweigh
    /// them by the point count and the shortest path would be no path.
    pub pmd: f64,
    /// `sum(cd_per_step) + pmd_weight * pmd`. The EMD value is reported but
    /// never folded in here.
    pub total: f64,
}

/// Evaluates the training objective on finished clouds, outside any graph.
pub fn total_report(
    intermediates: &[PointCloud],
    displacements: &[Vec<[f64; 3]>],
    target: &PointCloud,
    pmd_weight: f64,
) -> Result<LossReport> {
    if intermediates.is_empty() {
        return Err(Error::argument("total_report needs at least one step"));
    }
    let points = intermediates[0].len();
    let mut cd_per_step = Vec::with_capacity(intermediates.len());
    for cloud in intermediates {
        cd_per_step.push(chamfer(cloud, target, ChamferMode::L2)?);
    }
    let pmd_value = pmd(displacements) / points as f64;
    let total = cd_per_step.iter().sum::<f64>() + pmd_weight * pmd_value;
    Ok(LossReport { cd_per_step, emd: 0.0, pmd: pmd_value, total })
}

/// Evaluates the training objective on a finished deformation trace.
pub fn total_loss(
    trace: &crate::model::PathTrace,
    target: &PointCloud,
    pmd_weight: f64,
) -> Result<LossReport> {
    total_report(&trace.intermediates, &trace.displacements, target, pmd_weight)
}

fn cloud_of_var<T: Real>(g: &Graph<T>, v: Var, op: &str) -> Result<Vec<[f64; 3]>> {
    let shape = g.shape(v);
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::dim(format!("{op} expects an [N, 3] cloud, got {:?}", shape)));
    }
    if shape[0] == 0 {
        return Err(Error::argument(format!("{op} requires non-empty clouds")));
    }
    Ok(g.values(v)
        .chunks_exact(3)
        .map(|c| [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()])
        .collect())
}

/// Sum over rows of Euclidean norms of `rows - picked`, as a graph value.
fn matched_distance_sum<T: Real>(
    g: &mut Graph<T>,
    from: Var,
    to: Var,
    pairing: &[usize],
    squared: bool,
) -> Result<Var> {
    let picked = g.gather(to, pairing)?;
    let diff = g.sub(from, picked)?;
    let sq = g.mul(diff, diff)?;
    let row_sq = g.sum_axis(sq, 1)?;
    let per_row = if squared { row_sq } else { g.sqrt(row_sq) };
    Ok(g.sum(per_row))
}

/// Chamfer distance as a differentiable graph node. Gradients flow to both
/// clouds through the nearest pairs, which are fixed at current values.
pub fn chamfer_loss<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    y: Var,
    mode: ChamferMode,
) -> Result<Var> {
    let xs = cloud_of_var(g, x, "chamfer_loss")?;
    let ys = cloud_of_var(g, y, "chamfer_loss")?;
    let x_to_y: Vec<usize> = xs.iter().map(|&p| nearest(&ys, p).0).collect();
    let y_to_x: Vec<usize> = ys.iter().map(|&p| nearest(&xs, p).0).collect();
    let squared = mode == ChamferMode::L2;
    let fwd = matched_distance_sum(g, x, y, &x_to_y, squared)?;
    let bwd = matched_distance_sum(g, y, x, &y_to_x, squared)?;
    let fwd_mean = g.scale(fwd, 1.0 / xs.len() as f64);
    let bwd_mean = g.scale(bwd, 1.0 / ys.len() as f64);
    g.add(fwd_mean, bwd_mean)
}

/// Earth mover's distance as a differentiable graph node. The matching is
/// solved at current values and held fixed; the matched distances remain
/// differentiable for both clouds.
pub fn emd_loss<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    y: Var,
    solver: EmdSolver,
) -> Result<Var> {
    let xs = cloud_of_var(g, x, "emd_loss")?;
    let ys = cloud_of_var(g, y, "emd_loss")?;
    let xc = PointCloud::new(xs)?;
    let yc = PointCloud::new(ys)?;
    let assignment = solve_assignment(&xc, &yc, solver)?;
    let total = matched_distance_sum(g, x, y, &assignment.mapping, false)?;
    Ok(g.scale(total, 1.0 / xc.len() as f64))
}

/// Total Euclidean length of one step's displacement rows `[N, 3]`, as a
/// graph value. Summed over steps by the caller.
pub fn pmd_term<T: Real>(g: &mut Graph<T>, displacement: Var) -> Result<Var> {
    let shape = g.shape(displacement);
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::dim(format!(
            "pmd_term expects an [N, 3] displacement, got {:?}",
            shape
        )));
    }
    let sq = g.mul(displacement, displacement)?;
    let row_sq = g.sum_axis(sq, 1)?;
    let norms = g.sqrt(row_sq);
    Ok(g.sum(norms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tensor};

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.to_vec()).unwrap()
    }

    fn origin() -> PointCloud {
        cloud(&[[0.0, 0.0, 0.0]])
    }

    fn offset345() -> PointCloud {
        cloud(&[[3.0, 4.0, 0.0]])
    }

    #[test]
    fn chamfer_between_offset_singletons() {
        assert_eq!(chamfer(&origin(), &offset345(), ChamferMode::L1).unwrap(), 10.0);
        assert_eq!(chamfer(&origin(), &offset345(), ChamferMode::L2).unwrap(), 50.0);
    }

    #[test]
    fn chamfer_of_identical_clouds_is_zero() {
        let x = cloud(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [-1.0, 0.5, 0.25]]);
        assert_eq!(chamfer(&x, &x, ChamferMode::L1).unwrap(), 0.0);
        assert_eq!(chamfer(&x, &x, ChamferMode::L2).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_is_symmetric_and_scales() {
        let x = cloud(&[[0.1, 0.2, 0.3], [1.0, -1.0, 0.0], [2.0, 0.5, -0.5]]);
        let y = cloud(&[[0.5, 0.0, 0.0], [-0.3, 0.8, 1.2]]);
        for mode in [ChamferMode::L1, ChamferMode::L2] {
            let xy = chamfer(&x, &y, mode).unwrap();
            let yx = chamfer(&y, &x, mode).unwrap();
            assert!((xy - yx).abs() < 1e-15);
        }
        let s = 2.5;
        let sx = cloud(&x.points.iter().map(|p| p.map(|c| c * s)).collect::<Vec<_>>());
        let sy = cloud(&y.points.iter().map(|p| p.map(|c| c * s)).collect::<Vec<_>>());
        let l1 = chamfer(&x, &y, ChamferMode::L1).unwrap();
        let l2 = chamfer(&x, &y, ChamferMode::L2).unwrap();
        assert!((chamfer(&sx, &sy, ChamferMode::L1).unwrap() - s * l1).abs() < 1e-9);
        assert!((chamfer(&sx, &sy, ChamferMode::L2).unwrap() - s * s * l2).abs() < 1e-9);
    }

    #[test]
    fn chamfer_matches_double_loop_oracle() {
        let mut state = 0xabcdef12345u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let xs: Vec<[f64; 3]> = (0..17).map(|_| [next(), next(), next()]).collect();
        let ys: Vec<[f64; 3]> = (0..11).map(|_| [next(), next(), next()]).collect();
        let (x, y) = (cloud(&xs), cloud(&ys));
        // Oracle: plain double loop, no shared helpers.
        let mut fwd = 0.0;
        for &p in &xs {
            let mut best = f64::INFINITY;
            for &q in &ys {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                best = best.min(d);
            }
            fwd += best;
        }
        let mut bwd = 0.0;
        for &q in &ys {
            let mut best = f64::INFINITY;
            for &p in &xs {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                best = best.min(d);
            }
            bwd += best;
        }
        let expected = fwd / 17.0 + bwd / 11.0;
        assert!((chamfer(&x, &y, ChamferMode::L2).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_of_unit_separated_singletons() {
        let y = cloud(&[[1.0, 0.0, 0.0]]);
        assert!((hausdorff(&origin(), &y).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fidelity_zero_when_input_preserved() {
        let input = cloud(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        let output = cloud(&[[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [5.0, 5.0, 5.0]]);
        assert_eq!(fidelity(&input, &output).unwrap(), 0.0);
    }

    #[test]
    fn emd_of_offset_singletons_is_the_distance() {
        assert_eq!(emd(&origin(), &offset345(), EmdSolver::Exact).unwrap(), 5.0);
        let x = cloud(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
        assert_eq!(emd(&x, &x, EmdSolver::Exact).unwrap(), 0.0);
        assert_eq!(emd(&x, &x, EmdSolver::Auction).unwrap(), 0.0);
    }

    #[test]
    fn pmd_of_a_345_move_is_five() {
        let disp = vec![vec![[3.0, 4.0, 0.0]]];
        assert_eq!(pmd(&disp), 5.0);
        assert_eq!(pmd(&[vec![[0.0; 3]; 4], vec![[0.0; 3]; 4]]), 0.0);
    }

    #[test]
    fn total_report_combines_terms() {
        let target = offset345();
        let inter = vec![origin(), offset345()];
        let disp = vec![vec![[1.0, 0.0, 0.0]], vec![[2.0, 4.0, 0.0]]];
        let r = total_report(&inter, &disp, &target, 0.5).unwrap();
        assert_eq!(r.cd_per_step, vec![50.0, 0.0]);
        let expected_pmd = 1.0 + (4.0f64 + 16.0).sqrt();
        assert!((r.pmd - expected_pmd).abs() < 1e-12);
        assert!((r.total - (50.0 + 0.5 * expected_pmd)).abs() < 1e-12);
        assert_eq!(r.emd, 0.0);
    }

    #[test]
    fn report_pmd_averages_over_points() {
        // Two points moving 3 and 5: the report carries their mean, 4,
        // keeping the path term on the same per-point scale as Chamfer.
        let pair = cloud(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        let disp = vec![vec![[3.0, 0.0, 0.0], [0.0, 4.0, 3.0]]];
        let r = total_report(&[pair.clone()], &disp, &pair, 1.0).unwrap();
        assert!((r.pmd - 4.0).abs() < 1e-12);
        assert!((r.total - (r.cd_per_step[0] + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn graph_chamfer_agrees_with_plain_chamfer() {
        let x = cloud(&[[0.1, 0.2, 0.3], [1.0, -1.0, 0.0], [2.0, 0.5, -0.5]]);
        let y = cloud(&[[0.5, 0.0, 0.0], [-0.3, 0.8, 1.2]]);
        for mode in [ChamferMode::L1, ChamferMode::L2] {
            let mut g = Graph::<f64>::new();
            let xv = g.constant(Tensor::new(vec![3, 3], x.flat()).unwrap());
            let yv = g.constant(Tensor::new(vec![2, 3], y.flat()).unwrap());
            let loss = chamfer_loss(&mut g, xv, yv, mode).unwrap();
            let plain = chamfer(&x, &y, mode).unwrap();
            assert!((g.values(loss)[0] - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_chamfer_gradient_matches_finite_differences() {
        let y = Tensor::new(
            vec![4, 3],
            vec![0.5, 0.0, 0.1, -0.3, 0.8, 1.2, 0.9, -0.4, 0.2, -1.1, 0.3, -0.6],
        )
        .unwrap();
        let x = Tensor::new(
            vec![3, 3],
            vec![0.1, 0.2, 0.3, 1.0, -1.0, 0.0, 2.0, 0.5, -0.5],
        )
        .unwrap();
        for mode in [ChamferMode::L1, ChamferMode::L2] {
            let yt = y.clone();
            let err = grad_check(
                move |g, xv| {
                    let yv = g.constant(yt.clone());
                    chamfer_loss(g, xv, yv, mode)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "chamfer {mode:?} gradient off by {err}");
        }
    }

    #[test]
    fn graph_emd_agrees_with_plain_emd() {
        let x = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        let y = cloud(&[[0.1, 0.0, 0.0], [1.2, 0.1, 0.0], [0.0, 1.8, 0.1]]);
        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::new(vec![3, 3], x.flat()).unwrap());
        let yv = g.constant(Tensor::new(vec![3, 3], y.flat()).unwrap());
        let loss = emd_loss(&mut g, xv, yv, EmdSolver::Exact).unwrap();
        let plain = emd(&x, &y, EmdSolver::Exact).unwrap();
        assert!((g.values(loss)[0] - plain).abs() < 1e-12);
    }

    #[test]
    fn pmd_term_gradient_matches_finite_differences() {
        let disp = Tensor::new(vec![3, 3], vec![0.3, 0.4, 0.0, -0.2, 0.6, 0.9, 1.0, -1.0, 0.5])
            .unwrap();
        let err = grad_check(|g, d| pmd_term(g, d), &disp, 1e-5).unwrap();
        assert!(err < 1e-6, "pmd gradient off by {err}");
    }
}
