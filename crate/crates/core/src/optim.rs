//! Local optimizers used for constant fitting.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Nelder–Mead simplex search. Non-finite objective values are treated as
/// `+inf`. Stops when the spread of the simplex values drops below `tol` or
/// after `max_iters` iterations.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: f64, max_iters: usize, tol: f64) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    if n == 0 {
        return Minimum {
            x: Vec::new(),
            value: eval(x0),
            iterations: 0,
        };
    }
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if v[i].abs() > 1e-8 { step * v[i].abs().max(1.0) } else { step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

    let mut it = 0;
    while it < max_iters {
        it += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let (best, worst) = (values[0], values[n]);
        if (worst - best).abs() <= tol || (worst.is_infinite() && best.is_infinite()) {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let towards = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let reflected = towards(-1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = towards(-2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = towards(-0.5);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = towards(0.5);
            let fc = eval(&c);
            (c, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        // shrink towards the best vertex
        let best_x = simplex[0].clone();
        for i in 1..=n {
            for j in 0..n {
                simplex[i][j] = best_x[j] + 0.5 * (simplex[i][j] - best_x[j]);
            }
            values[i] = eval(&simplex[i]);
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        iterations: it,
    }
}

/// Residuals and Jacobian columns (`jac[k][i]` = d r_i / d p_k).
pub type Linearization = (Vec<f64>, Vec<Vec<f64>>);

/// Levenberg–Marquardt minimization of `mean(r(p)^2)`.
///
/// `linearize` returns residuals with their Jacobian, `residuals` only the
/// residuals. Either may return `None` when the model is undefined at `p`.
/// Stops when an accepted step improves the objective by less than `tol`
/// (relative), when the damping saturates, or after `max_iters` steps.
pub fn levenberg_marquardt<L, R>(
    mut linearize: L,
    mut residuals: R,
    x0: &[f64],
    max_iters: usize,
    tol: f64,
) -> Option<Minimum>
where
    L: FnMut(&[f64]) -> Option<Linearization>,
    R: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let k = x0.len();
    let mut x = x0.to_vec();
    let (mut r, mut jac) = linearize(&x)?;
    let n = r.len() as f64;
    let sq = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>() / n;
    let mut cost = sq(&r);
    if !cost.is_finite() {
        return None;
    }
    let mut lambda = 1e-3;
    let mut it = 0;
    while it < max_iters && cost > 0.0 {
        it += 1;
        let mut a = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let v = jac[i].iter().zip(&jac[j]).map(|(u, v)| u * v).sum::<f64>();
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let g = DVector::from_fn(k, |i, _| jac[i].iter().zip(&r).map(|(u, v)| u * v).sum::<f64>());
        let scale = a.diagonal().max().max(1e-300);
        let mut accepted = None;
        while lambda < 1e16 {
            let mut m = a.clone();
            for i in 0..k {
                m[(i, i)] += lambda * (a[(i, i)] + 1e-12 * scale);
            }
            let Some(chol) = m.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(p, d)| p + d).collect();
            if let Some(rt) = residuals(&trial) {
                let c = sq(&rt);
                if c.is_finite() && c < cost {
                    accepted = Some((trial, c));
                    lambda = (lambda * 0.1).max(1e-12);
                    break;
                }
            }
            lambda *= 10.0;
        }
        let Some((next, next_cost)) = accepted else {
            break;
        };
        let improvement = cost - next_cost;
        x = next;
        cost = next_cost;
        if improvement <= tol * cost.max(f64::MIN_POSITIVE) || cost == 0.0 {
            break;
        }
        match linearize(&x) {
            Some((r2, j2)) => {
                r = r2;
                jac = j2;
            }
            None => break,
        }
    }
    Some(Minimum {
        x,
        value: cost,
        iterations: it,
    })
}
