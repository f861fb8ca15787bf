//! Slow reference implementations used by the verification suite.
//!
//! Everything here is written independently of the production modules —
//! different algorithms, no shared helpers — so agreement between the two
//! is evidence of correctness rather than tautology. These functions are
//! exported (hidden from docs) because both unit tests and the acceptance
//! suite compare against them.
#![doc(hidden)]

/// Spearman correlation via the classic rank-difference formula
/// `1 - 6*sum(d^2) / (n(n^2-1))`. Valid only for tie-free inputs.
pub fn spearman_rank_difference(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    assert!(n >= 2);
    let rank = |v: &[f64]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0usize; n];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos + 1;
        }
        r
    };
    let rx = rank(x);
    let ry = rank(y);
    let d2: f64 = rx
        .iter()
        .zip(&ry)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    let nf = n as f64;
    1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0))
}

/// Gradient of `f` at `theta` by central finite differences with step `h`.
pub fn finite_difference_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut g = Vec::with_capacity(theta.len());
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = f(&probe);
        probe[i] = theta[i] - h;
        let down = f(&probe);
        probe[i] = theta[i];
        g.push((up - down) / (2.0 * h));
    }
    g
}

/// Exhaustive best split of 1-D data by squared-error reduction.
///
/// Tries the midpoint between every pair of consecutive distinct sorted
/// values, computing left/right sums directly. Returns `(threshold,
/// total_sse)` of the best split, preferring the lowest threshold on ties;
/// `None` when all values coincide.
pub fn best_split_exhaustive(data: &[(f64, f64)]) -> Option<(f64, f64)> {
    let mut sorted: Vec<(f64, f64)> = data.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sse = |part: &[(f64, f64)]| -> f64 {
        let mean = part.iter().map(|p| p.1).sum::<f64>() / part.len() as f64;
        part.iter().map(|p| (p.1 - mean).powi(2)).sum()
    };
    let mut best: Option<(f64, f64)> = None;
    for i in 1..sorted.len() {
        if sorted[i].0 == sorted[i - 1].0 {
            continue;
        }
        let thr = (sorted[i - 1].0 + sorted[i].0) / 2.0;
        let total = sse(&sorted[..i]) + sse(&sorted[i..]);
        match best {
            Some((_, b)) if total >= b => {}
            _ => best = Some((thr, total)),
        }
    }
    best
}

/// One-sided binomial tail `P[X >= hits]` for `X ~ Bin(total, 1/2)` by
/// direct summation of binomial coefficients. Intended for small `total`.
pub fn binom_tail_direct(hits: u64, total: u64) -> f64 {
    assert!(hits <= total);
    let mut tail = 0.0;
    for k in hits..=total {
        // C(total, k) computed multiplicatively.
        let mut c = 1.0f64;
        for i in 0..k {
            c = c * (total - i) as f64 / (i + 1) as f64;
        }
        tail += c;
    }
    tail * 0.5f64.powi(total as i32)
}

/// Solution of the epsilon-SVR dual found by the brute-force solver.
#[derive(Debug, Clone)]
pub struct SvrDualSolution {
    /// Signed coefficients, one per training point; sums to ~0.
    pub beta: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Final KKT violation (max-over-pairs gradient gap).
    pub kkt_violation: f64,
}

impl SvrDualSolution {
    /// Predicts a single point with the oracle's own kernel evaluation.
    pub fn predict(&self, train_x: &[Vec<f64>], gamma: f64, x: &[f64]) -> f64 {
        let mut acc = self.bias;
        for (b, xi) in self.beta.iter().zip(train_x) {
            acc += b * rbf(xi, x, gamma);
        }
        acc
    }
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Brute-force epsilon-SVR dual solver: accelerated projected gradient on
/// the smooth 2K-variable form (alpha+ / alpha-), projecting onto the box
/// intersected with the sum constraint by bisection. Runs until the KKT
/// violation drops below `tol` or `max_iter` sweeps pass.
pub fn solve_svr_dual_pg(
    train_x: &[Vec<f64>],
    y: &[f64],
    c: f64,
    gamma: f64,
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> SvrDualSolution {
    let k = train_x.len();
    assert_eq!(k, y.len());
    let mut kernel = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            kernel[i][j] = rbf(&train_x[i], &train_x[j], gamma);
        }
    }
    // Lipschitz bound for the 2K quadratic: twice the largest row sum of K.
    let l = 2.0
        * kernel
            .iter()
            .map(|row| row.iter().sum::<f64>())
            .fold(f64::MIN, f64::max);
    let step = 1.0 / l.max(1e-12);

    // a = [alpha+ ; alpha-], both in [0, C]; beta = alpha+ - alpha-.
    let mut a = vec![0.0f64; 2 * k];
    let mut a_prev = a.clone();
    let mut t_prev = 1.0f64;
    let mut iterations = 0;
    let mut violation;

    let grad = |a: &[f64], g: &mut Vec<f64>| {
        let mut f = vec![0.0; k];
        for i in 0..k {
            let beta = a[i] - a[k + i];
            if beta != 0.0 {
                for j in 0..k {
                    f[j] += beta * kernel[i][j];
                }
            }
        }
        g.clear();
        for i in 0..k {
            g.push(f[i] + eps - y[i]); // d/d alpha+
        }
        for i in 0..k {
            g.push(-f[i] + eps + y[i]); // d/d alpha-
        }
    };

    let mut g = Vec::new();
    let mut momentum = a.clone();
    for iter in 0..max_iter {
        iterations = iter + 1;
        grad(&momentum, &mut g);
        // Unconstrained step from the momentum point, then project.
        let mut target = vec![0.0; 2 * k];
        for p in 0..2 * k {
            target[p] = momentum[p] - step * g[p];
        }
        let next = project_box_sum(&target, c, k);

        // FISTA momentum update.
        let t = (1.0 + (1.0 + 4.0 * t_prev * t_prev).sqrt()) / 2.0;
        for p in 0..2 * k {
            momentum[p] = next[p] + ((t_prev - 1.0) / t) * (next[p] - a[p]);
        }
        t_prev = t;
        a_prev.copy_from_slice(&a);
        a.copy_from_slice(&next);

        if iter % 16 == 0 || iter + 1 == max_iter {
            grad(&a, &mut g);
            violation = kkt_violation_2k(&a, &g, c, k);
            if violation <= tol {
                break;
            }
        }
    }
    grad(&a, &mut g);
    violation = kkt_violation_2k(&a, &g, c, k);
    let beta: Vec<f64> = (0..k).map(|i| a[i] - a[k + i]).collect();
    let bias = bias_from_kkt(&a, &g, c, k);
    SvrDualSolution {
        beta,
        bias,
        iterations,
        kkt_violation: violation,
    }
}

/// Projects `target` onto `{0 <= a <= C, sum(a[..k]) - sum(a[k..]) = 0}`
/// by bisecting the shift multiplier.
fn project_box_sum(target: &[f64], c: f64, k: usize) -> Vec<f64> {
    let clip = |v: f64| v.clamp(0.0, c);
    let balance = |lambda: f64| -> f64 {
        let mut s = 0.0;
        for p in 0..2 * k {
            let z = if p < k { 1.0 } else { -1.0 };
            s += z * clip(target[p] - lambda * z);
        }
        s
    };
    // balance is nonincreasing in lambda; bracket the root.
    let bound = target.iter().fold(0.0f64, |m, v| m.max(v.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if balance(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    (0..2 * k)
        .map(|p| {
            let z = if p < k { 1.0 } else { -1.0 };
            clip(target[p] - lambda * z)
        })
        .collect()
}

/// LIBSVM-style optimality gap `m(a) - M(a)` for the 2K problem.
fn kkt_violation_2k(a: &[f64], g: &[f64], c: f64, k: usize) -> f64 {
    let (m, big_m) = up_low_extremes(a, g, c, k);
    m - big_m
}

fn up_low_extremes(a: &[f64], g: &[f64], c: f64, k: usize) -> (f64, f64) {
    let mut m = f64::NEG_INFINITY; // max over I_up of -z*grad
    let mut big_m = f64::INFINITY; // min over I_low of -z*grad
    let margin = 1e-12;
    for p in 0..2 * k {
        let z = if p < k { 1.0 } else { -1.0 };
        let v = -z * g[p];
        let in_up = (z > 0.0 && a[p] < c - margin) || (z < 0.0 && a[p] > margin);
        let in_low = (z > 0.0 && a[p] > margin) || (z < 0.0 && a[p] < c - margin);
        if in_up && v > m {
            m = v;
        }
        if in_low && v < big_m {
            big_m = v;
        }
    }
    (m, big_m)
}

/// Bias recovered from the dual: average of `-z*grad` over free
/// coordinates, else the midpoint of the feasible interval.
fn bias_from_kkt(a: &[f64], g: &[f64], c: f64, k: usize) -> f64 {
    let margin = 1e-9 * c.max(1.0);
    let mut sum = 0.0;
    let mut n_free = 0usize;
    for p in 0..2 * k {
        if a[p] > margin && a[p] < c - margin {
            let z = if p < k { 1.0 } else { -1.0 };
            sum += -z * g[p];
            n_free += 1;
        }
    }
    if n_free > 0 {
        sum / n_free as f64
    } else {
        let (m, big_m) = up_low_extremes(a, g, c, k);
        0.5 * (m + big_m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_difference_formula_example() {
        // d^2 = 1+1+1+1 = 4 -> 1 - 24/60 = 0.6
        let rho = spearman_rank_difference(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]);
        assert!((rho - 0.6).abs() < 1e-15);
    }

    #[test]
    fn finite_difference_matches_analytic_quadratic() {
        // f(x) = sum(x_i^2): gradient 2x.
        let theta = [0.3, -1.2, 2.5];
        let g = finite_difference_gradient(
            |x| x.iter().map(|v| v * v).sum(),
            &theta,
            1e-6,
        );
        for (gi, ti) in g.iter().zip(&theta) {
            assert!((gi - 2.0 * ti).abs() < 1e-8, "{gi} vs {}", 2.0 * ti);
        }
    }

    #[test]
    fn exhaustive_split_finds_step() {
        // Step data: y jumps at x between 3 and 4.
        let data: Vec<(f64, f64)> = (1..=6)
            .map(|i| (i as f64, if i <= 3 { 0.0 } else { 10.0 }))
            .collect();
        let (thr, sse) = best_split_exhaustive(&data).unwrap();
        assert_eq!(thr, 3.5);
        assert_eq!(sse, 0.0);
    }

    #[test]
    fn exhaustive_split_handles_constant_x() {
        let data = vec![(2.0, 1.0), (2.0, 5.0), (2.0, 9.0)];
        assert!(best_split_exhaustive(&data).is_none());
    }

    #[test]
    fn binomial_tail_examples() {
        assert_eq!(binom_tail_direct(4, 4), 0.0625);
        assert_eq!(binom_tail_direct(0, 4), 1.0);
        // (120 + 45 + 10 + 1) / 1024
        assert!((binom_tail_direct(7, 10) - 0.171875).abs() < 1e-15);
    }

    #[test]
    fn projection_restores_feasibility() {
        let target = vec![1.7, -0.3, 0.9, 0.2, 0.8, 1.1];
        let out = project_box_sum(&target, 1.0, 3);
        let sum: f64 = out[..3].iter().sum::<f64>() - out[3..].iter().sum::<f64>();
        assert!(sum.abs() < 1e-12, "sum {sum}");
        for v in &out {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn pg_solver_flat_targets_give_zero_beta_and_mean_bias() {
        // All targets inside the eps-tube around the constant c: dual optimum
        // is beta = 0 with bias = c.
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.1, 1.0 - i as f64 * 0.1]).collect();
        let y = vec![0.4; 6];
        let sol = solve_svr_dual_pg(&x, &y, 1.0, 0.5, 0.1, 1e-8, 100_000);
        for b in &sol.beta {
            assert!(b.abs() < 1e-10, "{b}");
        }
        assert!((sol.bias - 0.4).abs() < 1e-9, "bias {}", sol.bias);
    }

    #[test]
    fn pg_solver_respects_box_and_sum() {
        let x: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 0.3).cos(), i as f64 / 8.0])
            .collect();
        let y: Vec<f64> = (0..8).map(|i| ((i as f64) * 0.9).sin() * 0.5).collect();
        let c = 0.7;
        let sol = solve_svr_dual_pg(&x, &y, c, 0.8, 0.05, 1e-8, 400_000);
        let sum: f64 = sol.beta.iter().sum();
        assert!(sum.abs() < 1e-10, "sum {sum}");
        for b in &sol.beta {
            assert!(b.abs() <= c + 1e-10);
        }
        assert!(sol.kkt_violation <= 1e-6, "kkt {}", sol.kkt_violation);
    }
}
