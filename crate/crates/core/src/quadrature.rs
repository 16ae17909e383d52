//! Globally adaptive Gauss–Kronrod (7/15) integration on finite intervals.

use crate::error::{Error, Result};

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

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    Panel { a, b, value: k * h, error: ((k - g) * h).abs() }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub panels: usize,
}

/// Integrates `f` over `[a, b]` until the estimated error is below
/// `max(abs_tol, rel_tol * |value|)`; `breaks` are forced panel boundaries.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Integral> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(Error::InvalidParameter(format!("bad integration interval [{a}, {b}]")));
    }
    let mut cuts = vec![a];
    cuts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    cuts.push(b);
    cuts.sort_by(|x, y| x.total_cmp(y));
    cuts.dedup();
    let mut panels: Vec<Panel> = cuts.windows(2).map(|w| kronrod(&f, w[0], w[1])).collect();
    const MAX_PANELS: usize = 20_000;
    loop {
        let value: f64 = panels.iter().map(|p| p.value).sum();
        let error: f64 = panels.iter().map(|p| p.error).sum();
        if !value.is_finite() {
            return Err(Error::Solver("non-finite integrand".into()));
        }
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(Integral { value, error, panels: panels.len() });
        }
        if panels.len() >= MAX_PANELS {
            return Err(Error::Solver(format!(
                "adaptive quadrature did not converge: value {value:e}, error {error:e}"
            )));
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("at least one panel");
        let p = panels.swap_remove(worst);
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            return Err(Error::Solver("quadrature panel underflow".into()));
        }
        panels.push(kronrod(&f, p.a, m));
        panels.push(kronrod(&f, m, p.b));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| x.powi(6) - 2.0 * x, 0.0, 2.0, &[], 1e-14, 1e-14).unwrap();
        assert!((r.value - (128.0 / 7.0 - 4.0)).abs() < 1e-12);
    }

    #[test]
    fn peaked_integrand() {
        let eps: f64 = 1e-6;
        let r = integrate(|x| 1.0 / (eps + x * x), -1.0, 1.0, &[0.0], 0.0, 1e-12).unwrap();
        let exact = 2.0 * (1.0 / eps.sqrt()).atan() / eps.sqrt();
        assert!(((r.value - exact) / exact).abs() < 1e-10);
    }

    #[test]
    fn rejects_empty_interval() {
        assert!(integrate(|x| x, 1.0, 1.0, &[], 1e-10, 1e-10).is_err());
    }
}
