//! Small derivative-free optimizers.

/// Maximizes a unimodal `f` on `[lo, hi]` by golden-section search.
pub(crate) fn golden_section_max<F: Fn(f64) -> f64>(
    f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> f64 {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..max_iter {
        if (hi - lo).abs() <= tol * (1.0 + x1.abs() + x2.abs()) {
            break;
        }
        if f1 < f2 || f1.is_nan() {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Nelder–Mead minimization from `start` with per-coordinate initial steps.
///
/// Non-finite objective values are treated as `+∞`, which keeps the simplex
/// away from infeasible regions.
pub(crate) fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    steps: &[f64],
    ftol: f64,
    max_evals: usize,
) -> Minimum {
    let dim = start.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..dim {
        let mut p = start.to_vec();
        p[i] += steps[i];
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p, &mut evals)).collect();

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let best = values[0];
        let worst = values[dim];
        if (worst - best).abs() <= ftol * (best.abs() + ftol) {
            break;
        }

        let mut centroid = vec![0.0; dim];
        for p in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / dim as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let reflected = along(-1.0);
        let fr = eval(&reflected, &mut evals);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = eval(&expanded, &mut evals);
            if fe < fr {
                simplex[dim] = expanded;
                values[dim] = fe;
            } else {
                simplex[dim] = reflected;
                values[dim] = fr;
            }
        } else if fr < values[dim - 1] {
            simplex[dim] = reflected;
            values[dim] = fr;
        } else {
            let contracted = if fr < values[dim] { along(-0.5) } else { along(0.5) };
            let fc = eval(&contracted, &mut evals);
            if fc < values[dim].min(fr) {
                simplex[dim] = contracted;
                values[dim] = fc;
            } else {
                let anchor = simplex[0].clone();
                for i in 1..=dim {
                    simplex[i] = anchor
                        .iter()
                        .zip(&simplex[i])
                        .map(|(a, p)| a + 0.5 * (p - a))
                        .collect();
                    values[i] = eval(&simplex[i], &mut evals);
                }
            }
        }
    }

    let (best, value) = simplex
        .into_iter()
        .zip(values)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("simplex is never empty");
    Minimum {
        point: best,
        value,
        evaluations: evals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_parabola_peak() {
        let x = golden_section_max(|x| -(x - 1.3).powi(2), -10.0, 10.0, 1e-12, 500);
        assert!((x - 1.3).abs() < 1e-8);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let m = nelder_mead(
            |p| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            1e-16,
            20_000,
        );
        assert!((m.point[0] - 1.0).abs() < 1e-4, "{:?}", m.point);
        assert!((m.point[1] - 1.0).abs() < 1e-4, "{:?}", m.point);
    }
}
