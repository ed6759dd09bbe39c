use crate::error::{check_len, Error, Result};

/// Weighted least-squares projection onto nondecreasing sequences
/// (pool-adjacent-violators).
pub fn isotonic_regression(values: &[f64], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("isotonic_regression values"));
    }
    if let Some(w) = weights {
        check_len(values.len(), w.len())?;
        if w.iter().any(|&wi| !(wi > 0.0) || !wi.is_finite()) {
            return Err(Error::BadData("isotonic weights must be positive".into()));
        }
    }
    let mut out = values.to_vec();
    match weights {
        Some(w) => pava_in_place(&mut out, |i| w[i]),
        None => pava_in_place(&mut out, |_| 1.0),
    }
    Ok(out)
}

/// Unweighted projection in place. Returns immediately when the input is
/// already monotone, which is the common case for fitted quantile vectors.
pub fn isotonic_in_place(values: &mut [f64]) {
    if values.windows(2).all(|w| w[0] <= w[1]) {
        return;
    }
    pava_in_place(values, |_| 1.0);
}

fn pava_in_place(y: &mut [f64], weight: impl Fn(usize) -> f64) {
    let n = y.len();
    // block stack: (mean, weight, length)
    let mut means: Vec<f64> = Vec::with_capacity(n);
    let mut wts: Vec<f64> = Vec::with_capacity(n);
    let mut lens: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let mut m = y[i];
        let mut w = weight(i);
        let mut len = 1;
        while let Some(&last) = means.last() {
            if last <= m {
                break;
            }
            let lw = wts.pop().unwrap();
            means.pop();
            let ll = lens.pop().unwrap();
            m = (last * lw + m * w) / (lw + w);
            w += lw;
            len += ll;
        }
        means.push(m);
        wts.push(w);
        lens.push(len);
    }
    let mut k = 0;
    for (m, len) in means.iter().zip(&lens) {
        for v in &mut y[k..k + len] {
            *v = *m;
        }
        k += len;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_examples() {
        assert_eq!(isotonic_regression(&[1.0, 2.0, 3.0], None).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(isotonic_regression(&[3.0, 1.0], None).unwrap(), vec![2.0, 2.0]);
        assert_eq!(isotonic_regression(&[1.0, 3.0, 2.0], None).unwrap(), vec![1.0, 2.5, 2.5]);
    }

    #[test]
    fn weighted_pooling() {
        let out = isotonic_regression(&[3.0, 1.0], Some(&[3.0, 1.0])).unwrap();
        assert_eq!(out, vec![2.5, 2.5]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(isotonic_regression(&[], None), Err(Error::EmptyInput(_))));
        assert!(isotonic_regression(&[1.0, 2.0], Some(&[1.0])).is_err());
        assert!(isotonic_regression(&[1.0, 2.0], Some(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn in_place_matches() {
        let mut v = vec![5.0, 1.0, 2.0, 0.0, 7.0];
        let expect = isotonic_regression(&v, None).unwrap();
        isotonic_in_place(&mut v);
        assert_eq!(v, expect);
    }
}
