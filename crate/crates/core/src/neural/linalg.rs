//! Dense row-major helpers for square `d x d` weights.

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `W v`.
pub(crate) fn gemv(w: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    w.chunks_exact(d)
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// `W^T a`.
pub(crate) fn gemv_t(w: &[f64], a: &[f64]) -> Vec<f64> {
    let d = a.len();
    let mut out = vec![0.0; d];
    for (row, &ai) in w.chunks_exact(d).zip(a) {
        if ai == 0.0 {
            continue;
        }
        out.iter_mut().zip(row).for_each(|(o, r)| *o += ai * r);
    }
    out
}

/// `W += a b^T`.
pub(crate) fn ger_add(w: &mut [f64], a: &[f64], b: &[f64]) {
    let d = b.len();
    for (row, &ai) in w.chunks_exact_mut(d).zip(a) {
        if ai == 0.0 {
            continue;
        }
        row.iter_mut().zip(b).for_each(|(o, bj)| *o += ai * bj);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_products() {
        let w = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(gemv(&w, &[1.0, 1.0]), vec![3.0, 7.0]);
        assert_eq!(gemv_t(&w, &[1.0, 1.0]), vec![4.0, 6.0]);
        let mut m = [0.0; 4];
        ger_add(&mut m, &[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(m, [3.0, 4.0, 6.0, 8.0]);
    }
}
