//! Small dense Levenberg–Marquardt used to polish closed-form geometric
//! estimates (a handful of parameters, finite-difference Jacobian).

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct DenseRefinement<T: Real> {
    pub params: DVector<T>,
    pub cost: T,
    pub iterations: usize,
}

fn half_sq<T: Real>(r: &DVector<T>) -> T {
    r.norm_squared() * T::lit(0.5)
}

/// Minimises `½‖r(p)‖²` starting from `initial`. `residual` returns `None`
/// where the model is undefined (treated as an infinitely bad step).
pub fn refine<T, F>(initial: DVector<T>, max_iterations: usize, residual: F) -> DenseRefinement<T>
where
    T: Real,
    F: Fn(&DVector<T>) -> Option<DVector<T>>,
{
    let mut params = initial;
    let Some(mut r) = residual(&params) else {
        return DenseRefinement {
            cost: T::max_value().unwrap_or_else(T::one),
            params,
            iterations: 0,
        };
    };
    let mut cost = half_sq(&r);
    let mut lambda = T::lit(1e-3);
    let fd_rel = T::default_epsilon().cbrt();
    let n = params.len();
    let mut iterations = 0;

    while iterations < max_iterations {
        iterations += 1;
        let mut jac = DMatrix::zeros(r.len(), n);
        let mut jac_ok = true;
        for j in 0..n {
            let h = fd_rel * params[j].abs().max(T::one());
            let mut p_plus = params.clone();
            let mut p_minus = params.clone();
            p_plus[j] += h;
            p_minus[j] -= h;
            match (residual(&p_plus), residual(&p_minus)) {
                (Some(a), Some(b)) => jac.set_column(j, &((a - b) / (h + h))),
                _ => {
                    jac_ok = false;
                    break;
                }
            }
        }
        if !jac_ok {
            break;
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * &r;
        if grad.amax() <= T::lit(1e-14) * (T::one() + cost) {
            break;
        }

        let mut accepted = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * (jtj[(i, i)] + T::lit(1e-12));
            }
            let Some(chol) = a.cholesky() else {
                lambda *= T::lit(10.0);
                continue;
            };
            let step = chol.solve(&(-&grad));
            let candidate = &params + &step;
            if let Some(r_new) = residual(&candidate) {
                let c_new = half_sq(&r_new);
                if c_new < cost {
                    let rel = (cost - c_new) / cost.max(T::min_value().unwrap_or_else(T::zero));
                    params = candidate;
                    r = r_new;
                    cost = c_new;
                    lambda = (lambda * T::lit(0.2)).max(T::lit(1e-12));
                    accepted = true;
                    if rel < T::lit(1e-12) || step.amax() <= T::default_epsilon() {
                        return DenseRefinement {
                            params,
                            cost,
                            iterations,
                        };
                    }
                    break;
                }
            }
            lambda *= T::lit(10.0);
        }
        if !accepted {
            break;
        }
    }
    DenseRefinement {
        params,
        cost,
        iterations,
    }
}
