//! Small dense optimizers: a box-projected Nelder-Mead simplex and a BFGS
//! quasi-Newton method with backtracking line search. Both minimize.

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Simplex extent tolerance (max-norm distance of vertices to the best one).
    pub xatol: f64,
    /// Spread of objective values across the simplex.
    pub fatol: f64,
    /// Edge length of the initial simplex along each coordinate.
    pub initial_step: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            xatol: 1e-7,
            fatol: 1e-9,
            initial_step: 0.25,
            lower: None,
            upper: None,
        }
    }
}

fn project(x: &mut [f64], lower: Option<&[f64]>, upper: Option<&[f64]>) {
    if let Some(lo) = lower {
        for (v, l) in x.iter_mut().zip(lo) {
            if *v < *l {
                *v = *l;
            }
        }
    }
    if let Some(hi) = upper {
        for (v, h) in x.iter_mut().zip(hi) {
            if *v > *h {
                *v = *h;
            }
        }
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let lower = opts.lower.as_deref();
    let upper = opts.upper.as_deref();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        sanitize(f(x))
    };

    let mut start = x0.to_vec();
    project(&mut start, lower, upper);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.clone());
    for i in 0..n {
        let mut v = start.clone();
        let step = opts.initial_step;
        v[i] += step;
        if let Some(hi) = upper {
            if v[i] > hi[i] {
                v[i] = start[i] - step;
            }
        }
        project(&mut v, lower, upper);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evaluations)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        // Order vertices by objective; stable sort keeps earlier vertices first on ties.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let fspread = values[1..]
            .iter()
            .map(|v| (v - values[0]).abs())
            .fold(0.0f64, f64::max);
        let xspread = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if values[0].is_finite() && fspread <= opts.fatol && xspread <= opts.xatol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut p, lower, upper);
            p
        };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evaluations);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evaluations);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        for i in 1..=n {
            let mut p: Vec<f64> = simplex[0]
                .iter()
                .zip(&simplex[i])
                .map(|(b, x)| b + 0.5 * (x - b))
                .collect();
            project(&mut p, lower, upper);
            values[i] = eval(&p, &mut evaluations);
            simplex[i] = p;
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    OptimResult {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        evaluations,
        converged,
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Max-norm gradient tolerance.
    pub gtol: f64,
    /// Relative objective change tolerance.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gtol: 1e-6,
            ftol: 1e-8,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// BFGS on an objective returning `(value, gradient)`. Non-finite values are
/// treated as infeasible and rejected by the line search.
pub fn bfgs<F>(mut fg: F, x0: &[f64], opts: &BfgsOptions) -> OptimResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut evaluations = 1;
    let mut x = x0.to_vec();
    let (mut fx, mut g) = fg(&x);
    let mut h = vec![0.0; n * n];
    let reset = |h: &mut Vec<f64>, scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    reset(&mut h, 1.0);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return OptimResult {
            x,
            value: sanitize(fx),
            iterations: 0,
            evaluations,
            converged: false,
        };
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut first_step = true;
    while iterations < opts.max_iter {
        if max_abs(&g) <= opts.gtol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut p: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>())
            .collect();
        let mut slope = dot(&p, &g);
        if slope >= 0.0 {
            reset(&mut h, 1.0);
            p = g.iter().map(|v| -v).collect();
            slope = dot(&p, &g);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
            let (fnew, gnew) = fg(&xn);
            evaluations += 1;
            if fnew.is_finite()
                && gnew.iter().all(|v| v.is_finite())
                && fnew <= fx + 1e-4 * alpha * slope
            {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            converged = max_abs(&g) <= opts.gtol.sqrt();
            break;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let fold = fx;
        x = xn;
        fx = fnew;
        g = gnew;

        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first_step {
                reset(&mut h, sy / dot(&y, &y));
                first_step = false;
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
                .collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }

        if (fold - fx).abs() <= opts.ftol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    OptimResult {
        x,
        value: fx,
        iterations,
        evaluations,
        converged,
    }
}

/// Central finite-difference gradient with step `rel * max(1, |x_i|)`.
pub fn central_gradient<F>(mut f: F, x: &[f64], rel: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central finite-difference Hessian with step `rel * max(1, |x_i|)`.
pub fn central_hessian<F>(mut f: F, x: &[f64], rel: f64) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| rel * v.abs().max(1.0)).collect();
    let f0 = f(x);
    let mut at = |steps: &[(usize, f64)]| {
        let mut xp = x.to_vec();
        for &(i, s) in steps {
            xp[i] += s * h[i];
        }
        f(&xp)
    };
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        out[i][i] = (at(&[(i, 1.0)]) - 2.0 * f0 + at(&[(i, -1.0)])) / (h[i] * h[i]);
        for k in 0..i {
            let v = (at(&[(i, 1.0), (k, 1.0)]) - at(&[(i, 1.0), (k, -1.0)]) - at(&[(i, -1.0), (k, 1.0)])
                + at(&[(i, -1.0), (k, -1.0)]))
                / (4.0 * h[i] * h[k]);
            out[i][k] = v;
            out[k][i] = v;
        }
    }
    out
}

/// Forward finite-difference gradient.
pub fn forward_gradient<F>(mut f: F, x: &[f64], rel: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let f0 = f(x);
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i];
            (fp - f0) / h
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn hessian_of_rosenbrock_matches_closed_form() {
        let x = [0.7, -0.3];
        let h = central_hessian(rosenbrock, &x, 1e-4);
        let exact = [
            [2.0 - 400.0 * (x[1] - 3.0 * x[0] * x[0]), -400.0 * x[0]],
            [-400.0 * x[0], 200.0],
        ];
        for i in 0..2 {
            for k in 0..2 {
                assert!((h[i][k] - exact[i][k]).abs() < 1e-4 * exact[i][k].abs().max(1.0), "{h:?}");
            }
        }
    }

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &NelderMeadOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn nelder_mead_respects_bounds() {
        let opts = NelderMeadOptions {
            lower: Some(vec![2.0, -10.0]),
            upper: Some(vec![10.0, 10.0]),
            ..Default::default()
        };
        let r = nelder_mead(|x| x[0] * x[0] + x[1] * x[1], &[5.0, 3.0], &opts);
        assert!((r.x[0] - 2.0).abs() < 1e-6);
        assert!(r.x[1].abs() < 1e-4);
    }

    #[test]
    fn bfgs_finds_rosenbrock_minimum() {
        let fg = |x: &[f64]| {
            let g = vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ];
            (rosenbrock(x), g)
        };
        let r = bfgs(fg, &[-1.2, 1.0], &BfgsOptions { ftol: 0.0, gtol: 1e-9, ..Default::default() });
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn finite_differences_agree_on_smooth_function() {
        let f = |x: &[f64]| x[0].sin() * x[1].exp();
        let c = central_gradient(f, &[0.3, -0.2], 1e-6);
        let exact = [0.3f64.cos() * (-0.2f64).exp(), 0.3f64.sin() * (-0.2f64).exp()];
        for (a, b) in c.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
