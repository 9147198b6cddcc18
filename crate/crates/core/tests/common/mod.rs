//! Reference implementations shared by the integration suites. Nothing here
//! calls into the library's numerical code.

#![allow(dead_code)]

/// `exp(-‖x − y‖ / 2)` written out with explicit loops.
pub fn naive_kernel(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        let d = x[i] - y[i];
        acc += d * d;
    }
    (-acc.sqrt() / 2.0).exp()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn naive_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r][col].abs() > m[piv][col].abs() {
                piv = r;
            }
        }
        m.swap(col, piv);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i][t] * b[t][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

/// The neighbourhood sampler run step by step: Gram matrix, regularized
/// inverse, prior kernels, scores, top-γ selection and L1-weighted
/// recombination. Returns one row per `w` draw.
pub fn naive_kpf_sample(encoded: &[Vec<f64>], z: &[Vec<f64>], w: &[Vec<f64>], gamma: usize) -> Vec<Vec<f64>> {
    let n = encoded.len();
    let m = w.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            k[i][j] = naive_kernel(&encoded[i], &encoded[j]);
        }
    }
    for (i, row) in k.iter_mut().enumerate() {
        row[i] += n as f64;
    }
    let k_inv = naive_inverse(&k);
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            l[i][j] = naive_kernel(&z[i], &z[j]);
        }
    }
    let mut v = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            v[i][j] = naive_kernel(&z[i], &w[j]);
        }
    }
    let s = naive_matmul(&naive_matmul(&l, &k_inv), &v);
    let d = encoded[0].len();
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        // Selection by repeated maximum; the lower index wins a tie.
        let mut taken = vec![false; n];
        let mut ind = Vec::with_capacity(gamma);
        for _ in 0..gamma {
            let mut best: Option<usize> = None;
            for i in 0..n {
                if !taken[i] && best.map_or(true, |b| s[i][j] > s[b][j]) {
                    best = Some(i);
                }
            }
            let b = best.unwrap();
            taken[b] = true;
            ind.push(b);
        }
        let l1: f64 = ind.iter().map(|&i| s[i][j].abs()).sum();
        let mut row = vec![0.0; d];
        for &i in &ind {
            for c in 0..d {
                row[c] += encoded[i][c] * s[i][j] / l1;
            }
        }
        out.push(row);
    }
    out
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central difference of `f` along direction `v` from `x`.
pub fn directional_fd(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], v: &[f64], h: f64) -> f64 {
    let plus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    (f(&plus) - f(&minus)) / (2.0 * h)
}
