//! Small numeric helpers shared across modules.

use nalgebra::DMatrix;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance (denominator `n`).
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Population covariance (denominator `n`).
pub fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / x.len() as f64
}

/// Shifts and scales `x` to mean 0 and population variance 1.
///
/// Returns `None` when the column carries no variance relative to its own
/// magnitude.
pub fn standardize(x: &[f64]) -> Option<Vec<f64>> {
    if x.is_empty() {
        return None;
    }
    let m = mean(x);
    let var = variance(x);
    let scale = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if !(var > 0.0) || var <= 1e-26 * scale || !var.is_finite() {
        return None;
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = x.iter().map(|v| (v - m) / sd).collect();
    // second pass removes the residual rounding in the mean
    let m2 = mean(&z);
    z.iter_mut().for_each(|v| *v -= m2);
    Some(z)
}

/// Median of a list; the list is sorted in place with a total order so the
/// result does not depend on the input order.
pub fn median_in_place(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    median_in_place(&mut v)
}

/// `n` equally spaced values from `start` to `end` inclusive. A single point
/// yields `start`.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (end - start) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { end } else { start + step * i as f64 })
                .collect()
        }
    }
}

/// Column `j` of a column-major matrix as a contiguous slice.
pub fn col(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let rows = m.nrows();
    &m.as_slice()[j * rows..(j + 1) * rows]
}

pub fn col_mut(m: &mut DMatrix<f64>, j: usize) -> &mut [f64] {
    let rows = m.nrows();
    &mut m.as_mut_slice()[j * rows..(j + 1) * rows]
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ordinary least squares line `y = a + b x`; returns `(intercept, slope, r2)`.
///
/// `r2` is 1 when `y` is constant (a flat line explains it exactly).
pub fn ols_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let r2 = if ss_tot <= f64::MIN_POSITIVE {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).min(1.0)
    };
    (intercept, slope, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn standardize_rejects_constant() {
        assert!(standardize(&[2.0; 10]).is_none());
        let z = standardize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(mean(&z).abs() < 1e-15);
        assert!((variance(&z) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn linspace_endpoints() {
        let v = linspace(0.14, 1.0, 10);
        assert_eq!(v.len(), 10);
        assert_eq!(v[0], 0.14);
        assert_eq!(v[9], 1.0);
        assert_eq!(linspace(0.7, 0.9, 1), vec![0.7]);
    }

    #[test]
    fn ols_line_exact() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v).collect();
        let (a, b, r2) = ols_line(&x, &y);
        assert!((a - 3.0).abs() < 1e-12);
        assert!((b + 2.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }
}
