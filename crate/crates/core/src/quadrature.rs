//! Globally adaptive Gauss–Kronrod (7/15 point) quadrature for vector-valued
//! integrands on a finite interval.
//!
//! All components share the same subdivision. The interval with the largest
//! error relative to its component tolerance is bisected until every component
//! meets `max(abs_tol, rel_tol * |I_c|)` or the interval budget runs out.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Per-segment error never drops below this multiple of the absolute integral.
/// QUADPACK uses 50 eps; segments here are positive and smooth, and the
/// final sum is compensated, so a tighter floor is honest.
const ROUNDING_FLOOR: f64 = 8.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_intervals: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadResult {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub intervals: usize,
    pub evaluations: usize,
    pub converged: bool,
}

struct Segment {
    a: f64,
    b: f64,
    values: Vec<f64>,
    errors: Vec<f64>,
}

/// One 15-point Kronrod evaluation over `[a, b]`, writing the estimate and a
/// QUADPACK-style error bound per component.
fn kronrod_segment<F>(f: &mut F, a: f64, b: f64, dim: usize, scratch: &mut Scratch) -> Segment
where
    F: FnMut(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let Scratch { fv, kron, gauss } = scratch;

    // Node order: 7 left, center, 7 right. Index j in 0..7 pairs with XGK[j].
    for j in 0..7 {
        let dx = half * XGK[j];
        f(center - dx, &mut fv[j * dim..(j + 1) * dim]);
        f(center + dx, &mut fv[(8 + j) * dim..(9 + j) * dim]);
    }
    f(center, &mut fv[7 * dim..8 * dim]);

    let mut values = vec![0.0; dim];
    let mut errors = vec![0.0; dim];
    for c in 0..dim {
        let fc = fv[7 * dim + c];
        let mut k = WGK[7] * fc;
        let mut g = WG[3] * fc;
        let mut resabs = WGK[7] * fc.abs();
        for j in 0..7 {
            let lo = fv[j * dim + c];
            let hi = fv[(8 + j) * dim + c];
            k += WGK[j] * (lo + hi);
            resabs += WGK[j] * (lo.abs() + hi.abs());
            if j % 2 == 1 {
                g += WG[j / 2] * (lo + hi);
            }
        }
        let mean = 0.5 * k;
        let mut resasc = WGK[7] * (fc - mean).abs();
        for j in 0..7 {
            resasc +=
                WGK[j] * ((fv[j * dim + c] - mean).abs() + (fv[(8 + j) * dim + c] - mean).abs());
        }
        kron[c] = k * half;
        gauss[c] = g * half;
        let resabs = resabs * half.abs();
        let resasc = resasc * half.abs();
        let mut err = (kron[c] - gauss[c]).abs();
        if resasc != 0.0 && err != 0.0 {
            err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
        }
        if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
            err = err.max(ROUNDING_FLOOR * resabs);
        }
        values[c] = kron[c];
        errors[c] = err;
    }
    Segment {
        a,
        b,
        values,
        errors,
    }
}

struct Scratch {
    fv: Vec<f64>,
    kron: Vec<f64>,
    gauss: Vec<f64>,
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Integrates a `dim`-component integrand over `[a, b]`. The closure receives
/// the abscissa and a slice of length `dim` to fill.
pub fn integrate_vec<F>(mut f: F, dim: usize, a: f64, b: f64, opts: &QuadOptions) -> QuadResult
where
    F: FnMut(f64, &mut [f64]),
{
    assert!(dim > 0, "integrand must have at least one component");
    if a == b {
        return QuadResult {
            values: vec![0.0; dim],
            errors: vec![0.0; dim],
            intervals: 0,
            evaluations: 0,
            converged: true,
        };
    }
    let mut scratch = Scratch {
        fv: vec![0.0; 15 * dim],
        kron: vec![0.0; dim],
        gauss: vec![0.0; dim],
    };
    let mut segments = vec![kronrod_segment(&mut f, a, b, dim, &mut scratch)];
    let mut evaluations = 15;
    let mut totals = segments[0].values.clone();
    let mut total_err = segments[0].errors.clone();

    let tolerance = |c: usize, totals: &[f64]| opts.abs_tol.max(opts.rel_tol * totals[c].abs());
    let satisfied = |totals: &[f64], errs: &[f64]| (0..dim).all(|c| errs[c] <= tolerance(c, totals));

    let mut converged = satisfied(&totals, &total_err);
    while !converged && segments.len() < opts.max_intervals {
        // Worst segment relative to each component's share of the tolerance.
        let (worst, _) = segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let score = (0..dim)
                    .map(|c| s.errors[c] / tolerance(c, &totals).max(f64::MIN_POSITIVE))
                    .fold(0.0_f64, f64::max);
                (i, score)
            })
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval cannot be split further in floating point.
            segments.push(seg);
            break;
        }
        let left = kronrod_segment(&mut f, seg.a, mid, dim, &mut scratch);
        let right = kronrod_segment(&mut f, mid, seg.b, dim, &mut scratch);
        evaluations += 30;
        for c in 0..dim {
            totals[c] += left.values[c] + right.values[c] - seg.values[c];
            total_err[c] += left.errors[c] + right.errors[c] - seg.errors[c];
        }
        segments.push(left);
        segments.push(right);
        converged = satisfied(&totals, &total_err);
    }

    // Re-sum from scratch: the running totals accumulate cancellation error.
    segments.sort_by(|x, y| x.a.total_cmp(&y.a));
    let values: Vec<f64> = (0..dim)
        .map(|c| neumaier_sum(segments.iter().map(|s| s.values[c])))
        .collect();
    let errors: Vec<f64> = (0..dim)
        .map(|c| segments.iter().map(|s| s.errors[c]).sum())
        .collect();
    let converged = satisfied(&values, &errors);
    QuadResult {
        values,
        errors,
        intervals: segments.len(),
        evaluations,
        converged,
    }
}

/// Scalar convenience wrapper; returns `(value, error_estimate, converged)`.
pub fn integrate<F>(mut f: F, a: f64, b: f64, opts: &QuadOptions) -> (f64, f64, bool)
where
    F: FnMut(f64) -> f64,
{
    let r = integrate_vec(|x, out| out[0] = f(x), 1, a, b, opts);
    (r.values[0], r.errors[0], r.converged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let (v, _, ok) = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, &QuadOptions::default());
        assert!(ok);
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0);
        assert!((v - exact).abs() < 1e-13);
    }

    #[test]
    fn gaussian_mass() {
        let (v, err, ok) = integrate(
            |x| (-0.5 * x * x).exp(),
            -12.0,
            12.0,
            &QuadOptions::default(),
        );
        assert!(ok);
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-13);
        assert!(err < 1e-11);
    }

    #[test]
    fn vector_components_share_subdivision() {
        let r = integrate_vec(
            |x, out| {
                out[0] = x.cos();
                out[1] = x.exp();
            },
            2,
            0.0,
            3.0,
            &QuadOptions::default(),
        );
        assert!(r.converged);
        assert!((r.values[0] - 3.0_f64.sin()).abs() < 1e-13);
        assert!((r.values[1] - (3.0_f64.exp() - 1.0)).abs() < 1e-11);
    }

    #[test]
    fn empty_interval() {
        let (v, e, ok) = integrate(|x| x, 1.0, 1.0, &QuadOptions::default());
        assert_eq!((v, e, ok), (0.0, 0.0, true));
    }

    #[test]
    fn budget_exhaustion_reports_non_convergence() {
        let opts = QuadOptions {
            abs_tol: 0.0,
            rel_tol: 1e-15,
            max_intervals: 3,
        };
        let (_, _, ok) = integrate(|x| (1.0 / (x + 1e-3)).sin(), 0.0, 1.0, &opts);
        assert!(!ok);
    }
}
