//! C-SVC with an RBF kernel solved by SMO with second-order working-set
//! selection, and Platt-scaled probabilities fitted on 5-fold
//! cross-validated decision values.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TAU: f64 = 1e-12;
const TOLERANCE: f64 = 1e-3;
const PROBABILITY_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    /// `1 / (n_features * Var(X))` over all entries of the training matrix.
    Scale,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: Gamma,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: Gamma::Scale,
            seed: 0,
        }
    }
}

pub fn scale_gamma(x: ArrayView2<'_, f64>) -> f64 {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (x.ncols() as f64 * var)
    } else {
        1.0
    }
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-gamma * d).exp()
}

/// Dual coefficients `alpha_i * y_i` and offset `rho` of a trained machine.
struct Dual {
    coef: Vec<f64>,
    rho: f64,
}

/// Solves the C-SVC dual for labels `y` in {-1, +1} given the kernel matrix.
fn solve(k: &Array2<f64>, y: &[f64], c: f64) -> Dual {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * k[[i, j]];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let max_iter = 10_000_000usize.max(100 * n);

    for _ in 0..max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if y[t] > 0.0 {
                if !upper(alpha[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i_sel = Some(t);
                }
            } else if !lower(alpha[t]) && grad[t] >= gmax {
                gmax = grad[t];
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else { break };
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            let (grad_diff, quad) = if y[t] > 0.0 {
                if lower(alpha[t]) {
                    continue;
                }
                gmax2 = gmax2.max(grad[t]);
                (gmax + grad[t], k[[i, i]] + k[[t, t]] - 2.0 * y[i] * q(i, t))
            } else {
                if upper(alpha[t]) {
                    continue;
                }
                gmax2 = gmax2.max(-grad[t]);
                (gmax - grad[t], k[[i, i]] + k[[t, t]] + 2.0 * y[i] * q(i, t))
            };
            if grad_diff > 0.0 {
                let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= best_obj {
                    best_obj = obj;
                    j_sel = Some(t);
                }
            }
        }
        let Some(j) = j_sel else { break };
        if gmax + gmax2 < TOLERANCE {
            break;
        }

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (k[[i, i]] + k[[j, j]] + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (k[[i, i]] + k[[j, j]] - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    };
    Dual {
        coef: alpha.iter().zip(y).map(|(a, y)| a * y).collect(),
        rho,
    }
}

/// Platt sigmoid `P(+1 | f) = 1 / (1 + exp(A f + B))` fitted by Newton's
/// method with backtracking on regularised targets.
pub fn fit_platt(dec: &[f64], positive: &[bool]) -> (f64, f64) {
    let prior1 = positive.iter().filter(|&&p| p).count() as f64;
    let prior0 = positive.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();
    let objective = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&f, &t)| {
                let z = f * a + b;
                if z >= 0.0 {
                    t * z + (-z).exp().ln_1p()
                } else {
                    (t - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&f, &t) in dec.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    (a, b)
}

pub fn platt_probability(f: f64, a: f64, b: f64) -> f64 {
    let z = f * a + b;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

#[derive(Debug, Clone)]
pub struct Svm {
    support: Array2<f64>,
    coef: Vec<f64>,
    rho: f64,
    gamma: f64,
    platt: (f64, f64),
}

fn train_dual(x: ArrayView2<'_, f64>, y: &[f64], c: f64, gamma: f64) -> Dual {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = rbf(&rows[i], &rows[j], gamma);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    solve(&k, y, c)
}

fn decision(x: ArrayView2<'_, f64>, dual: &Dual, row: &[f64], gamma: f64) -> f64 {
    x.rows()
        .into_iter()
        .zip(&dual.coef)
        .filter(|(_, &c)| c != 0.0)
        .map(|(r, &c)| c * rbf(&r.to_vec(), row, gamma))
        .sum::<f64>()
        - dual.rho
}

impl Svm {
    pub fn fit(x: ArrayView2<'_, f64>, labels: &[u8], params: SvmParams) -> Self {
        let gamma = match params.gamma {
            Gamma::Scale => scale_gamma(x),
            Gamma::Value(g) => g,
        };
        let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let n = y.len();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));
        let mut dec = vec![0.0; n];
        for f in 0..PROBABILITY_FOLDS {
            let (begin, end) = (f * n / PROBABILITY_FOLDS, (f + 1) * n / PROBABILITY_FOLDS);
            let held: Vec<usize> = perm[begin..end].to_vec();
            let train: Vec<usize> = perm[..begin].iter().chain(&perm[end..]).copied().collect();
            let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let pos = ty.iter().filter(|&&v| v > 0.0).count();
            if pos == 0 || pos == ty.len() {
                let v = if pos > 0 { 1.0 } else if ty.is_empty() { 0.0 } else { -1.0 };
                held.iter().for_each(|&i| dec[i] = v);
                continue;
            }
            let tx = x.select(ndarray::Axis(0), &train);
            let dual = train_dual(tx.view(), &ty, params.c, gamma);
            for &i in &held {
                dec[i] = decision(tx.view(), &dual, &x.row(i).to_vec(), gamma);
            }
        }
        let positive: Vec<bool> = y.iter().map(|&v| v > 0.0).collect();
        let platt = fit_platt(&dec, &positive);

        let dual = train_dual(x, &y, params.c, gamma);
        let keep: Vec<usize> = (0..n).filter(|&i| dual.coef[i] != 0.0).collect();
        Self {
            support: x.select(ndarray::Axis(0), &keep),
            coef: keep.iter().map(|&i| dual.coef[i]).collect(),
            rho: dual.rho,
            gamma,
            platt,
        }
    }

    pub fn decision_function(&self, row: &[f64]) -> f64 {
        self.support
            .rows()
            .into_iter()
            .zip(&self.coef)
            .map(|(r, &c)| c * rbf(&r.to_vec(), row, self.gamma))
            .sum::<f64>()
            - self.rho
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        platt_probability(self.decision_function(row), self.platt.0, self.platt.1)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_support(&self) -> usize {
        self.coef.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_point_problem_has_closed_form() {
        // K = [[1, e], [e, 1]] with e = exp(-gamma * 4); alpha = 2 / (2 - 2e).
        let x = array![[-1.0], [1.0]];
        let y = [-1.0, 1.0];
        let gamma = 0.5;
        let e = (-gamma * 4.0f64).exp();
        let mut k = Array2::zeros((2, 2));
        for i in 0..2 {
            for j in 0..2 {
                k[[i, j]] = rbf(&x.row(i).to_vec(), &x.row(j).to_vec(), gamma);
            }
        }
        let dual = solve(&k, &y, 100.0);
        let alpha = 1.0 / (1.0 - e);
        assert!((dual.coef[1] - alpha).abs() < 1e-9, "{:?}", dual.coef);
        assert!(dual.rho.abs() < 1e-9);
    }

    #[test]
    fn box_constraint_and_balance_hold() {
        let x = array![[0.0, 0.0], [0.1, 0.0], [1.0, 1.0], [0.9, 1.1], [0.5, 0.45], [0.55, 0.5]];
        let y = [-1.0, -1.0, 1.0, 1.0, 1.0, -1.0];
        let dual = train_dual(x.view(), &y, 0.5, 1.0);
        let sum: f64 = dual.coef.iter().sum();
        assert!(sum.abs() < 1e-9);
        assert!(dual.coef.iter().all(|c| c.abs() <= 0.5 + 1e-12));
    }

    #[test]
    fn platt_recovers_monotone_map() {
        let dec: Vec<f64> = (-10..=10).map(|i| f64::from(i) / 5.0).collect();
        let pos: Vec<bool> = dec.iter().map(|&d| d > 0.0).collect();
        let (a, _) = fit_platt(&dec, &pos);
        assert!(a < 0.0);
        assert!(platt_probability(2.0, a, 0.0) > 0.5);
    }

    #[test]
    fn scale_gamma_uses_global_variance() {
        let x = array![[0.0, 2.0], [2.0, 0.0]];
        assert!((scale_gamma(x.view()) - 0.5).abs() < 1e-12);
        assert_eq!(scale_gamma(array![[3.0, 3.0]].view()), 1.0);
    }
}
