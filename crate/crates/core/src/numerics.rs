//! Scalar special functions, adaptive quadrature and tridiagonal solves.

use crate::error::{Error, Result};

/// Mobility `a (1 - a)` without domain checks.
#[inline]
pub fn chi(a: f64) -> f64 {
    a * (1.0 - a)
}

/// `x log x` with `0 log 0 = 0`.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `a log a + (1 - a) log(1 - a)`.
#[inline]
pub fn neg_entropy(a: f64) -> f64 {
    xlogx(a) + xlogx(1.0 - a)
}

/// Logistic function `1 / (1 + e^{-x})`, evaluated without overflow.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `1 / (1 + e^{x})`.
#[inline]
pub fn fermi(x: f64) -> f64 {
    logistic(-x)
}

/// Derivative of the logistic function, `e^x / (1 + e^x)^2`.
#[inline]
pub fn logistic_prime(x: f64) -> f64 {
    let p = logistic(x);
    p * (1.0 - p)
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(1 + z) / z`, continuous at `z = 0`. Requires `z > -1`.
#[inline]
pub fn ln1p_ratio(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - z / 2.0 + z * z / 3.0
    } else {
        z.ln_1p() / z
    }
}

/// Slope variable of the shooting form: `s(x) = (1/E) log(1 - E/x)`, or
/// `-1/x` when `E = 0`. Defined for `x > max(0, E)`; always negative.
#[inline]
pub fn slope_to_s(x: f64, e: f64) -> f64 {
    // (1/E) log(1 - E/x) = -(1/x) ln1p(-E/x)/(-E/x)
    -ln1p_ratio(-e / x) / x
}

/// Inverse of [`slope_to_s`]: `x = -E / expm1(E s)` for `s < 0`.
#[inline]
pub fn s_to_slope(s: f64, e: f64) -> f64 {
    let z = e * s;
    if z.abs() < 1e-8 {
        // -E/expm1(Es) = -(1/s) / (1 + z/2 + z^2/6)
        -1.0 / (s * (1.0 + z / 2.0 + z * z / 6.0))
    } else {
        -e / z.exp_m1()
    }
}

/// Derivative `ds/dx = 1 / (x (x - E))`.
#[inline]
pub fn s_prime(x: f64, e: f64) -> f64 {
    1.0 / (x * (x - e))
}

/// Slope integrand `F(x) = (1/E)[x log x - (x - E) log(x - E)]`, extended
/// continuously to `log x + 1` at `E = 0`.
#[inline]
pub fn slope_integrand(x: f64, e: f64) -> f64 {
    if x == 0.0 && e < 0.0 {
        return (-e).ln();
    }
    let z = -e / x;
    x.ln() + ((x - e) / x) * ln1p_ratio(z)
}

/// Adaptive Gauss-Kronrod (7/15) quadrature on `[a, b]`, with the interval
/// pre-split at `breaks`. Subintervals with the largest error estimate are
/// bisected until the total estimate is below `max(tol, 1e-14 |I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut pts = vec![lo];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&c| c > lo && c < hi).collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.extend(inner);
    pts.push(hi);

    let mut pieces: Vec<(f64, f64, f64, f64)> = pts
        .windows(2)
        .map(|w| {
            let (v, e) = kronrod15(&f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    for _ in 0..2000 {
        let total: f64 = pieces.iter().map(|p| p.2).sum();
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        if err <= tol.max(1e-14 * total.abs()) {
            break;
        }
        let (k, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (x0, x1, _, _) = pieces.swap_remove(k);
        let m = 0.5 * (x0 + x1);
        if m <= x0 || m >= x1 {
            break;
        }
        let (v0, e0) = kronrod15(&f, x0, m);
        let (v1, e1) = kronrod15(&f, m, x1);
        pieces.push((x0, m, v0, e0));
        pieces.push((m, x1, v1, e1));
    }
    sign * pieces.iter().map(|p| p.2).sum::<f64>()
}

const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = f(c);
    let mut k = KRONROD_WEIGHTS[7] * fc;
    let mut g = GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let s = f(c - r * KRONROD_NODES[i]) + f(c + r * KRONROD_NODES[i]);
        k += KRONROD_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += GAUSS_WEIGHTS[i / 2] * s;
        }
    }
    (k * r, ((k - g) * r).abs())
}

/// Solves a tridiagonal system `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`
/// by the Thomas algorithm. `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(Error::Domain("tridiagonal bands have inconsistent lengths".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::Singular("zero pivot in tridiagonal solve".into()));
    }
    c[0] = upper[0] / beta;
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - lower[i] * c[i - 1];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::Singular(format!("zero pivot at row {i}")));
        }
        c[i] = upper[i] / beta;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Tridiagonal solve with partial pivoting, for systems whose diagonal may
/// vanish. Same band convention as [`solve_tridiagonal`].
pub fn solve_tridiagonal_pivoted(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(Error::Domain("tridiagonal bands have inconsistent lengths".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut d = diag.to_vec();
    let mut du = upper.to_vec();
    du[n - 1] = 0.0;
    let mut du2 = vec![0.0; n];
    let mut b = rhs.to_vec();
    for i in 0..n - 1 {
        let dl = lower[i + 1];
        if d[i].abs() >= dl.abs() {
            if d[i] == 0.0 {
                return Err(Error::Singular(format!("zero column at row {i}")));
            }
            let f = dl / d[i];
            d[i + 1] -= f * du[i];
            b[i + 1] -= f * b[i];
        } else {
            let f = d[i] / dl;
            d[i] = dl;
            let next = d[i + 1];
            d[i + 1] = du[i] - f * next;
            if i + 2 < n {
                du2[i] = du[i + 1];
                du[i + 1] = -f * du2[i];
            }
            du[i] = next;
            let bi = b[i];
            b[i] = b[i + 1];
            b[i + 1] = bi - f * b[i];
        }
    }
    if d[n - 1] == 0.0 || !d[n - 1].is_finite() {
        return Err(Error::Singular("zero pivot in last row".into()));
    }
    let mut x = vec![0.0; n];
    x[n - 1] = b[n - 1] / d[n - 1];
    if n > 1 {
        x[n - 2] = (b[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (b[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
    }
    Ok(x)
}

/// Pre-factored constant tridiagonal matrix, reused across time steps.
#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    lower: Vec<f64>,
    c: Vec<f64>,
    inv_beta: Vec<f64>,
}

impl TridiagonalLu {
    pub fn new(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut c = vec![0.0; n];
        let mut inv_beta = vec![0.0; n];
        for i in 0..n {
            let beta = if i == 0 { diag[0] } else { diag[i] - lower[i] * c[i - 1] };
            if beta == 0.0 || !beta.is_finite() {
                return Err(Error::Singular(format!("zero pivot at row {i}")));
            }
            inv_beta[i] = 1.0 / beta;
            c[i] = upper[i] * inv_beta[i];
        }
        Ok(Self { lower: lower.to_vec(), c, inv_beta })
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        if n == 0 {
            return;
        }
        rhs[0] *= self.inv_beta[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.inv_beta[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.c[i] * rhs[i + 1];
        }
    }
}

/// Compensated (Neumaier) sum.
pub fn stable_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

/// Sup norm of the difference of two slices.
pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
