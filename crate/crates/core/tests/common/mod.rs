#![allow(dead_code)]

use etgpssm::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn eye(n: usize) -> Mat {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn diag(v: &[f64]) -> Mat {
    let mut m = eye(v.len());
    for (i, x) in v.iter().enumerate() {
        m[i][i] = *x;
    }
    m
}

pub fn mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for l in 0..k {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

pub fn mul_vec(a: &Mat, v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

pub fn t(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn sub(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect()
}

pub fn frob(a: &Mat) -> f64 {
    a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gauss-Jordan inverse with partial pivoting; also returns the determinant.
pub fn inverse_det(a: &Mat) -> (Mat, f64) {
    let n = a.len();
    let mut m: Mat = a.iter().zip(eye(n)).map(|(r, e)| r.iter().cloned().chain(e).collect()).collect();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        let piv = m[c][c];
        det *= piv;
        for x in m[c].iter_mut() {
            *x /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                let row_c = m[c].clone();
                for (x, y) in m[r].iter_mut().zip(row_c) {
                    *x -= f * y;
                }
            }
        }
    }
    (m.into_iter().map(|r| r[n..].to_vec()).collect(), det)
}

pub fn cholesky(a: &Mat) -> Mat {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][i] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

/// `log N(x; mean, cov)`.
pub fn gauss_logpdf(x: &[f64], mean: &[f64], cov: &Mat) -> f64 {
    let (inv, det) = inverse_det(cov);
    let r: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let q: f64 = r.iter().zip(mul_vec(&inv, &r)).map(|(a, b)| a * b).sum();
    -0.5 * (q + det.ln() + x.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

pub struct KalmanStep {
    pub mean: Vec<f64>,
    pub cov: Mat,
}

/// Exact Kalman filter for `x_t = A x_{t−1} + q`, `y_t = C x_t + r` with
/// `x_0 ~ N(m0, P0)`. Returns the filtered moments after each observation
/// and the log evidence.
pub fn kalman_filter(a: &Mat, c: &Mat, q: &Mat, r: &Mat, m0: &[f64], p0: &Mat, ys: &[Vec<f64>]) -> (Vec<KalmanStep>, f64) {
    let mut m = m0.to_vec();
    let mut p = p0.clone();
    let mut ll = 0.0;
    let mut out = Vec::new();
    for y in ys {
        let mp = mul_vec(a, &m);
        let pp = add(&mul(&mul(a, &p), &t(a)), q);
        let yp = mul_vec(c, &mp);
        let s = add(&mul(&mul(c, &pp), &t(c)), r);
        ll += gauss_logpdf(y, &yp, &s);
        let (s_inv, _) = inverse_det(&s);
        let k = mul(&mul(&pp, &t(c)), &s_inv);
        let innov: Vec<f64> = y.iter().zip(&yp).map(|(a, b)| a - b).collect();
        m = mp.iter().zip(mul_vec(&k, &innov)).map(|(a, b)| a + b).collect();
        p = mul(&sub(&eye(m.len()), &mul(&k, c)), &pp);
        out.push(KalmanStep {
            mean: m.clone(),
            cov: p.clone(),
        });
    }
    (out, ll)
}

/// Ensemble mean and `N − 1` covariance, members as rows.
pub fn ensemble_moments(e: &Tensor) -> (Vec<f64>, Mat) {
    let (n, d) = (e.rows(), e.cols());
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| e.get(i, j)).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (e.get(i, a) - mean[a]) * (e.get(i, b) - mean[b]);
            }
        }
    }
    for row in cov.iter_mut() {
        for x in row.iter_mut() {
            *x /= (n - 1) as f64;
        }
    }
    (mean, cov)
}

/// Squared-exponential kernel, written out independently of the library.
pub fn se_kernel(x: &[f64], y: &[f64], sf2: f64, ls: &[f64]) -> f64 {
    let s: f64 = x.iter().zip(y).zip(ls).map(|((a, b), l)| ((a - b) / l).powi(2)).sum();
    sf2 * (-0.5 * s).exp()
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Second implementation of the kink map, from its piecewise definition.
pub fn kink_reference(x: f64) -> f64 {
    let sigmoid = 1.0 / (1.0 + (-2.0 * x).exp());
    let base = 0.8 + (x + 0.2) * (1.0 - 5.0 * sigmoid);
    if x <= 0.0 {
        base - 0.5 * (2.0 * x).sin()
    } else {
        base * (1.0 - 0.5 * (-0.5 * x).exp()) - 0.5 * (8.0 * x).sin()
    }
}
