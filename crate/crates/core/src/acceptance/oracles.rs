//! Independent reference computations used only by the verification
//! checks. Each oracle recomputes a quantity along a different route than
//! the implementation it validates.

use crate::data::Dataset;
use crate::pipesim::PipelineConfig;

/// Least-squares optimum for a no-intercept linear map fitted to the
/// dataset: solves the normal equations `X^T X W = X^T Y` by Gaussian
/// elimination and returns the mean per-row squared-error loss
/// `sum_o ||X w_o - y_o||^2 / n` at the optimum.
pub fn least_squares_optimum_loss(data: &Dataset) -> f64 {
    let n = data.len();
    let d = data.sample(0).input.numel();
    let k = data.sample(0).target.numel();
    // Gram matrix and cross-products.
    let mut xtx = vec![0.0f64; d * d];
    let mut xty = vec![0.0f64; d * k];
    for s in 0..n {
        let x = data.sample(s).input.data();
        let y = data.sample(s).target.data();
        for i in 0..d {
            for j in 0..d {
                xtx[i * d + j] += x[i] * x[j];
            }
            for o in 0..k {
                xty[i * k + o] += x[i] * y[o];
            }
        }
    }
    let w = solve_multi(&mut xtx, &mut xty, d, k);
    // residual loss at the optimum
    let mut total = 0.0;
    for s in 0..n {
        let x = data.sample(s).input.data();
        let y = data.sample(s).target.data();
        for o in 0..k {
            let mut pred = 0.0;
            for i in 0..d {
                pred += x[i] * w[i * k + o];
            }
            let r = pred - y[o];
            total += r * r;
        }
    }
    total / n as f64
}

/// Gaussian elimination with partial pivoting on `a` (d x d) for `k`
/// right-hand sides stored row-major in `b` (d x k).
fn solve_multi(a: &mut [f64], b: &mut [f64], d: usize, k: usize) -> Vec<f64> {
    for col in 0..d {
        // pivot
        let mut pivot = col;
        for r in col + 1..d {
            if a[r * d + col].abs() > a[pivot * d + col].abs() {
                pivot = r;
            }
        }
        if pivot != col {
            for c in 0..d {
                a.swap(col * d + c, pivot * d + c);
            }
            for c in 0..k {
                b.swap(col * k + c, pivot * k + c);
            }
        }
        let diag = a[col * d + col];
        for r in 0..d {
            if r == col {
                continue;
            }
            let factor = a[r * d + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..d {
                a[r * d + c] -= factor * a[col * d + c];
            }
            for c in 0..k {
                b[r * k + c] -= factor * b[col * k + c];
            }
        }
    }
    let mut w = vec![0.0; d * k];
    for i in 0..d {
        let diag = a[i * d + i];
        for o in 0..k {
            w[i * k + o] = b[i * k + o] / diag;
        }
    }
    w
}

/// Closed-form fill-drain makespan for `s` equal stages and `m`
/// microbatches with no communication: `(m + s - 1) * (f + b)`.
pub fn equal_stage_fill_drain(stages: usize, microbatches: usize, fwd: f64, bwd: f64) -> f64 {
    (microbatches + stages - 1) as f64 * (fwd + bwd)
}

/// Direct evaluation of the fill-drain schedule by its completion-time
/// recurrences, for configs where every stage has its own device. This
/// walks the dependency structure explicitly rather than simulating an
/// event queue:
///
/// ```text
/// F(i,j) = max(F(i-1,j) + comm, F(i,j-1)) + fwd_i
/// B(s-1,j) = max(F(s-1,m-1), B(s-1,j-1)) + bwd_{s-1}
/// B(i,j) = max(B(i+1,j) + comm, B(i,j-1), F(i,m-1)) + bwd_i
/// ```
pub fn fill_drain_reference(cfg: &PipelineConfig) -> f64 {
    let s = cfg.stages.len();
    let m = cfg.microbatches;
    assert!(
        cfg.stages.iter().all(|st| st.device.is_none()),
        "reference recurrence assumes one stage per device"
    );
    let comm = cfg.comm_ms;
    let bwd = |i: usize| {
        if cfg.stages[i].frozen {
            cfg.frozen_bwd_factor * cfg.stages[i].bwd_ms
        } else {
            cfg.stages[i].bwd_ms
        }
    };
    let mut f = vec![vec![0.0f64; m]; s];
    for i in 0..s {
        for j in 0..m {
            let from_prev_stage = if i == 0 { 0.0 } else { f[i - 1][j] + comm };
            let from_prev_mb = if j == 0 { 0.0 } else { f[i][j - 1] };
            f[i][j] = from_prev_stage.max(from_prev_mb) + cfg.stages[i].fwd_ms;
        }
    }
    let barrier = f[s - 1][m - 1];
    let mut b = vec![vec![0.0f64; m]; s];
    for j in 0..m {
        let from_prev_mb = if j == 0 { barrier } else { b[s - 1][j - 1] };
        b[s - 1][j] = from_prev_mb.max(barrier) + bwd(s - 1);
    }
    for i in (0..s.saturating_sub(1)).rev() {
        for j in 0..m {
            let from_next_stage = b[i + 1][j] + comm;
            let from_prev_mb = if j == 0 { 0.0 } else { b[i][j - 1] };
            b[i][j] = from_next_stage.max(from_prev_mb).max(f[i][m - 1]) + bwd(i);
        }
    }
    b[0][m - 1]
}

/// Upper-tail chi-square test statistic threshold via the Wilson-Hilferty
/// normal approximation: returns the standard-normal z-score of the
/// statistic `x` with `k` degrees of freedom.
pub fn chi_square_z_score(x: f64, k: f64) -> f64 {
    let t = (x / k).powf(1.0 / 3.0);
    let mu = 1.0 - 2.0 / (9.0 * k);
    let sigma = (2.0 / (9.0 * k)).sqrt();
    (t - mu) / sigma
}

/// One-sided standard-normal quantile for alpha = 1e-4.
pub const Z_ALPHA_1E4: f64 = 3.719016485;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::teacher_student;
    use crate::pipesim::StageSpec;

    #[test]
    fn noiseless_teacher_data_has_zero_optimum() {
        let data = teacher_student(64, 5, 3, 0.0, 9);
        let loss = least_squares_optimum_loss(&data);
        assert!(loss.abs() < 1e-18, "optimum loss {loss}");
    }

    #[test]
    fn noisy_optimum_is_near_noise_level() {
        let noise = 0.1;
        let data = teacher_student(512, 4, 2, noise, 10);
        let loss = least_squares_optimum_loss(&data);
        // expected residual ~ noise^2 x out_dim, shrunk slightly by the fit
        let expected = noise * noise * 2.0;
        assert!(loss > 0.0 && loss < 2.0 * expected, "optimum loss {loss}");
    }

    #[test]
    fn reference_recurrence_matches_closed_form_for_equal_stages() {
        for s in 1..=4usize {
            for m in 1..=6usize {
                let cfg = PipelineConfig {
                    stages: vec![
                        StageSpec { fwd_ms: 2.0, bwd_ms: 3.0, frozen: false, device: None };
                        s
                    ],
                    microbatches: m,
                    comm_ms: 0.0,
                    frozen_bwd_factor: 0.5,
                    preinference: false,
                    allreduce_ms: 0.0,
                    target_iter_time_ms: None,
                };
                assert_eq!(
                    fill_drain_reference(&cfg),
                    equal_stage_fill_drain(s, m, 2.0, 3.0)
                );
            }
        }
    }

    #[test]
    fn chi_square_z_is_centered_for_typical_values() {
        // at x = k the statistic is unremarkable
        assert!(chi_square_z_score(999.0, 999.0).abs() < 0.1);
        // far in the tail it is large
        assert!(chi_square_z_score(1500.0, 999.0) > Z_ALPHA_1E4);
    }
}
