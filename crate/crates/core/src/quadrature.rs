//! Adaptive Gauss–Kronrod (7/15) quadrature.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Integral estimate and achieved absolute error bound.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Integral {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

/// Integrates `f` over `[a, b]`, starting from `pieces` equal panels and
/// bisecting the panel with the largest error estimate until the total
/// estimate is below `abs_tol` or `max_panels` is reached.
pub(crate) fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    pieces: usize,
    abs_tol: f64,
    max_panels: usize,
) -> Integral {
    let width = (b - a) / pieces as f64;
    let mut panels: Vec<(f64, f64, f64, f64)> = (0..pieces)
        .map(|i| {
            let lo = a + width * i as f64;
            let hi = if i + 1 == pieces { b } else { lo + width };
            let (v, e) = kronrod(&f, lo, hi);
            (lo, hi, v, e)
        })
        .collect();
    loop {
        let error: f64 = panels.iter().map(|p| p.3).sum();
        if error <= abs_tol || panels.len() >= max_panels {
            let value = panels.iter().map(|p| p.2).sum();
            return Integral {
                value,
                error,
                converged: error <= abs_tol,
            };
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("at least one panel");
        let (lo, hi, _, _) = panels.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod(&f, lo, mid);
        let (v2, e2) = kronrod(&f, mid, hi);
        panels.push((lo, mid, v1, e1));
        panels.push((mid, hi, v2, e2));
    }
}
