//! Adaptive Gauss–Kronrod quadrature.
//!
//! Used as an independent reference for normalizing constants, moments and
//! KL divergences of 1-D and 2-D densities.

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
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let dx = h * XGK[k];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[k] * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adapt(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: (f64, f64), tol: f64, depth: u32) -> f64 {
    let (val, err) = whole;
    if err <= tol || depth == 0 || (b - a).abs() < 1e-12 {
        return val;
    }
    let m = 0.5 * (a + b);
    let left = gk15(f, a, m);
    let right = gk15(f, m, b);
    adapt(f, a, m, left, 0.5 * tol, depth - 1) + adapt(f, m, b, right, 0.5 * tol, depth - 1)
}

/// `int_a^b f(x) dx` to roughly absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let whole = gk15(&f, a, b);
    adapt(&f, a, b, whole, tol, 40)
}

/// Integral over `[a, b]` split into `pieces` equal panels first, which helps
/// with narrow peaks the initial rule might miss.
pub fn integrate_panels(f: impl Fn(f64) -> f64, a: f64, b: f64, pieces: usize, tol: f64) -> f64 {
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let lo = a + i as f64 * h;
            let whole = gk15(&f, lo, lo + h);
            adapt(&f, lo, lo + h, whole, tol / pieces as f64, 40)
        })
        .sum()
}

/// Iterated 2-D integral over a rectangle.
pub fn integrate_2d(
    f: impl Fn(f64, f64) -> f64,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
    panels: usize,
    tol: f64,
) -> f64 {
    integrate_panels(
        |x| integrate_panels(|y| f(x, y), y0, y1, panels, tol),
        x0,
        x1,
        panels,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_gaussian() {
        assert!((integrate(|x| x * x, 0.0, 3.0, 1e-12) - 9.0).abs() < 1e-12);
        let g = integrate(|x| (-0.5 * x * x).exp(), -20.0, 20.0, 1e-12);
        assert!((g - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn narrow_peak_with_panels() {
        let v = integrate_panels(
            |x: f64| (-(x - 8.0).powi(2) / (2.0 * 0.01)).exp(),
            -10.0,
            20.0,
            60,
            1e-12,
        );
        assert!((v - (2.0 * std::f64::consts::PI * 0.01).sqrt()).abs() < 1e-10);
    }
}
