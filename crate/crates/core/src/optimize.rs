//! Bounded one-dimensional maximization for the heterogeneity variance.
//!
//! A geometric grid on `[0, upper]` brackets the best region (the objective
//! can be very flat near zero and the scale of `tau2` is unknown), then
//! Brent's parabolic/golden-section search refines inside the bracket.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedSearch {
    pub upper: f64,
    /// Absolute tolerance on the argument.
    pub tol: f64,
    pub max_iter: usize,
    /// Grid points are `upper * 2^-k` for `k = 0..=grid_halvings`, plus zero.
    pub grid_halvings: u32,
}

impl Default for BoundedSearch {
    fn default() -> Self {
        Self {
            upper: 10.0,
            tol: 1e-10,
            max_iter: 200,
            grid_halvings: 30,
        }
    }
}

impl BoundedSearch {
    pub fn maximize<F>(&self, mut f: F) -> Result<Maximum>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let mut eval = |x: f64| -> Result<f64> {
            let v = f(x)?;
            Ok(if v.is_finite() { v } else { f64::NEG_INFINITY })
        };

        let mut grid = vec![0.0];
        grid.extend((0..=self.grid_halvings).rev().map(|k| self.upper * 0.5f64.powi(k as i32)));
        let values = grid.iter().map(|&x| eval(x)).collect::<Result<Vec<_>>>()?;
        let (best, &best_value) = values
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
        if best_value == f64::NEG_INFINITY {
            return Err(Error::NonConvergence {
                iterations: grid.len(),
                best_tau2: f64::NAN,
            });
        }
        let lo = grid[best.saturating_sub(1)];
        let hi = grid[(best + 1).min(grid.len() - 1)];

        let refined = brent_max(&mut eval, lo, hi, self.tol, self.max_iter)?;
        let mut out = if refined.value >= best_value {
            refined
        } else {
            Maximum {
                x: grid[best],
                value: best_value,
                ..refined
            }
        };
        out.iterations += grid.len();
        if !out.converged {
            return Err(Error::NonConvergence {
                iterations: out.iterations,
                best_tau2: out.x,
            });
        }
        Ok(out)
    }
}

/// Brent's method on `[a, b]`, maximizing `f`.
pub fn brent_max<F>(f: &mut F, a: f64, b: f64, tol: f64, max_iter: usize) -> Result<Maximum>
where
    F: FnMut(f64) -> Result<f64>,
{
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let sqrt_eps = f64::EPSILON.sqrt();
    let (mut a, mut b) = (a.min(b), a.max(b));

    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = -f(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for iter in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = sqrt_eps * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return Ok(Maximum {
                x,
                value: -fx,
                iterations: iter,
                converged: true,
            });
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if (u - a) < tol2 || (b - u) < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = -f(u)?;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok(Maximum {
        x,
        value: -fx,
        iterations: max_iter,
        converged: false,
    })
}
