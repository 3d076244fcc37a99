use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("bad smoothing window {window} (order {order}, {len} values): window must be odd, exceed the order and fit the series")]
pub struct BadWindow {
    pub window: usize,
    pub order: usize,
    pub len: usize,
}

/// Savitzky-Golay smoothing: each point is replaced by the value at that
/// point of a degree-`order` least-squares polynomial fitted over the
/// surrounding `window` points. Near the ends the window is truncated to
/// the available points and the polynomial refitted.
pub fn smooth_curve(values: &[f64], window: usize, order: usize) -> Result<Vec<f64>, BadWindow> {
    let n = values.len();
    if window.is_multiple_of(2) || window <= order || n < window {
        return Err(BadWindow { window, order, len: n });
    }
    let half = (window / 2) as i64;
    let interior = fit_weights(-half, half, half as f64, order);
    let mut out = Vec::with_capacity(n);
    for i in 0..n as i64 {
        let lo = (i - half).max(0);
        let hi = (i + half).min(n as i64 - 1);
        let window_values = &values[lo as usize..=hi as usize];
        let smoothed = if lo == i - half && hi == i + half {
            dot(&interior, window_values)
        } else {
            dot(&fit_weights(lo - i, hi - i, half as f64, order), window_values)
        };
        out.push(smoothed);
    }
    Ok(out)
}

/// Largest valid odd window not above `window` for a series of `len`
/// values, if any.
pub fn fit_window(window: usize, order: usize, len: usize) -> Option<usize> {
    let mut w = window.min(len);
    if w.is_multiple_of(2) {
        w = w.saturating_sub(1);
    }
    (w > order).then_some(w)
}

fn dot(w: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Weights `w` over offsets `lo..=hi` such that `sum w_j y_j` is the fitted
/// polynomial evaluated at offset 0. Offsets are divided by `scale` to keep
/// the normal equations well conditioned.
fn fit_weights(lo: i64, hi: i64, scale: f64, order: usize) -> Vec<f64> {
    let xs: Vec<f64> = (lo..=hi).map(|o| o as f64 / scale).collect();
    let k = order.min(xs.len() - 1) + 1;
    // normal matrix G = X^T X, then solve G z = e0 and w = X z
    let mut g = vec![vec![0.0; k + 1]; k];
    for x in &xs {
        let mut pow = vec![1.0; 2 * k];
        for p in 1..2 * k {
            pow[p] = pow[p - 1] * x;
        }
        for (r, row) in g.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().take(k).enumerate() {
                *cell += pow[r + c];
            }
        }
    }
    g[0][k] = 1.0;
    let z = solve_augmented(g);
    xs.iter()
        .map(|x| {
            let mut acc = 0.0;
            let mut p = 1.0;
            for zk in &z {
                acc += zk * p;
                p *= x;
            }
            acc
        })
        .collect()
}

/// Gaussian elimination with partial pivoting on an augmented k x (k+1)
/// system.
fn solve_augmented(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let k = a.len();
    for col in 0..k {
        let pivot = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap_or(col);
        a.swap(col, pivot);
        for r in col + 1..k {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..=k {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut z = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| a[r][c] * z[c]).sum();
        z[r] = (a[r][k] - s) / a[r][r];
    }
    z
}
