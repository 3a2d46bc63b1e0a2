//! Projected Nelder-Mead simplex search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct NmOptions {
    pub max_iters: usize,
    /// Stop once the simplex cost spread is below `tolerance·|f_best|` (plus a
    /// tiny absolute floor) and its diameter below `x_tolerance`.
    pub tolerance: f64,
    pub x_tolerance: f64,
}

/// A non-finite cost was produced at `iterate`.
#[derive(Debug, Clone)]
pub struct NonFinite {
    pub iterate: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

/// Minimizes `f` from `x0`. Every trial point is passed through `project`
/// before evaluation. The best cost after each iteration is appended to
/// `log`, so the log is non-increasing. `seed` randomizes the signs of the
/// initial simplex edges; `None` uses the positive coordinate directions.
pub fn minimize(
    f: &mut dyn FnMut(&[f64]) -> f64,
    project: &dyn Fn(&mut [f64]),
    x0: &[f64],
    step: &[f64],
    opts: &NmOptions,
    seed: Option<u64>,
    log: &mut Vec<f64>,
) -> Result<NmResult, NonFinite> {
    let n = x0.len();
    assert_eq!(step.len(), n);
    let mut eval = |x: &mut Vec<f64>| -> Result<f64, NonFinite> {
        project(x);
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NonFinite { iterate: x.clone() })
        }
    };

    let mut start = x0.to_vec();
    let f0 = eval(&mut start)?;
    if n == 0 {
        log.push(f0);
        return Ok(NmResult { x: start, f: f0, iterations: 0 });
    }

    // Adaptive coefficients keep the method effective in higher dimensions.
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = if n > 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };

    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let mut x = start.clone();
        let sign = match rng.as_mut() {
            Some(r) => {
                if r.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            None => 1.0,
        };
        x[i] += sign * step[i];
        let mut fx = eval(&mut x)?;
        // A vertex that projection collapsed onto the start gets the opposite sign.
        if x == start {
            x[i] -= 2.0 * sign * step[i];
            fx = eval(&mut x)?;
        }
        simplex.push((x, fx));
    }

    let sort = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    sort(&mut simplex);
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let f_best = simplex[0].1;
        let f_worst = simplex[n].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if f_worst - f_best <= opts.tolerance * f_best.abs() + 1e-300 && diameter <= opts.x_tolerance {
            break;
        }
        if diameter == 0.0 {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / nf;
            }
        }
        let along = |t: f64, from: &[f64]| -> Vec<f64> {
            centroid.iter().zip(from).map(|(c, w)| c + t * (c - w)).collect()
        };
        let worst = simplex[n].0.clone();
        let mut xr = along(alpha, &worst);
        let fr = eval(&mut xr)?;
        if fr < simplex[0].1 {
            let mut xe = along(alpha * gamma, &worst);
            let fe = eval(&mut xe)?;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (mut xc, fc) = if fr < simplex[n].1 {
                let mut xc = along(alpha * rho, &worst);
                let fc = eval(&mut xc)?;
                (xc, fc)
            } else {
                let mut xc = along(-rho, &worst);
                let fc = eval(&mut xc)?;
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (std::mem::take(&mut xc), fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let mut x: Vec<f64> = best.iter().zip(&v.0).map(|(b, x)| b + sigma * (x - b)).collect();
                    let fx = eval(&mut x)?;
                    *v = (x, fx);
                }
            }
        }
        sort(&mut simplex);
        log.push(simplex[0].1);
    }
    let (x, f) = simplex.swap_remove(0);
    Ok(NmResult { x, f, iterations })
}
