//! Numerical integration.
//!
//! Whole-line integrals use the double-exponential sinh-sinh map
//! `x = c + s·sinh(π/2 · sinh u)` with trapezoidal refinement. Finite
//! intervals use adaptive Gauss-Kronrod 7/15.

use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("integrand returned a non-finite value at x = {0}")]
    NonFinite(f64),
    #[error("no convergence: estimate {estimate:e}, error {error:e}")]
    NoConvergence { estimate: f64, error: f64 },
    #[error("invalid interval [{0}, {1}]")]
    InvalidInterval(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

const DE_MAX_LEVEL: usize = 14;
const DE_T_MAX: f64 = 4.0;
/// Absolute error accepted regardless of the relative criterion.
const DE_ABS_FLOOR: f64 = 1e-15;

/// `∫_{-∞}^{∞} f(x) dx` to relative tolerance `rel_tol` (measured against
/// `∫|f|`).
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, rel_tol: f64) -> Result<Quadrature, QuadratureError> {
    integrate_real_line_scaled(f, 0.0, 1.0, rel_tol)
}

/// Whole-line integral with the map centred at `center` and stretched by
/// `scale`, which helps for integrands concentrated away from the origin.
pub fn integrate_real_line_scaled<F: Fn(f64) -> f64>(
    f: F,
    center: f64,
    scale: f64,
    rel_tol: f64,
) -> Result<Quadrature, QuadratureError> {
    let mut evals = 0usize;
    let mut term = |u: f64| -> Result<(f64, f64), QuadratureError> {
        let s = FRAC_PI_2 * u.sinh();
        let x = center + scale * s.sinh();
        let w = scale * FRAC_PI_2 * u.cosh() * s.cosh();
        if !x.is_finite() || !w.is_finite() {
            return Ok((0.0, 0.0));
        }
        evals += 1;
        let fx = f(x);
        if !fx.is_finite() {
            return Err(QuadratureError::NonFinite(x));
        }
        let v = w * fx;
        Ok((v, v.abs()))
    };

    let mut h = 1.0;
    let (mut sum, mut abs_sum) = term(0.0)?;
    let mut k = 1.0;
    while k * h <= DE_T_MAX {
        let (a, aa) = term(k * h)?;
        let (b, bb) = term(-k * h)?;
        sum += a + b;
        abs_sum += aa + bb;
        k += 1.0;
    }
    let mut estimate = sum * h;
    let mut error = f64::INFINITY;
    for _ in 0..DE_MAX_LEVEL {
        h *= 0.5;
        let mut k = 1.0;
        while k * h <= DE_T_MAX {
            let (a, aa) = term(k * h)?;
            let (b, bb) = term(-k * h)?;
            sum += a + b;
            abs_sum += aa + bb;
            k += 2.0;
        }
        let next = sum * h;
        error = (next - estimate).abs();
        estimate = next;
        let scale_abs = abs_sum * h;
        if error <= (rel_tol * scale_abs).max(DE_ABS_FLOOR) {
            return Ok(Quadrature { value: estimate, error, evaluations: evals });
        }
    }
    Err(QuadratureError::NoConvergence { estimate, error })
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    abs: f64,
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Segment, QuadratureError> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    if !fc.is_finite() {
        return Err(QuadratureError::NonFinite(c));
    }
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    let mut abs = WGK[7] * fc.abs();
    for i in 0..7 {
        let dx = h * XGK[i];
        let (x1, x2) = (c - dx, c + dx);
        let (f1, f2) = (f(x1), f(x2));
        if !f1.is_finite() {
            return Err(QuadratureError::NonFinite(x1));
        }
        if !f2.is_finite() {
            return Err(QuadratureError::NonFinite(x2));
        }
        k += WGK[i] * (f1 + f2);
        abs += WGK[i] * (f1.abs() + f2.abs());
        if i % 2 == 1 {
            g += WG[i / 2] * (f1 + f2);
        }
    }
    Ok(Segment { a, b, value: k * h, error: ((k - g) * h).abs(), abs: abs * h.abs() })
}

/// `∫_a^b f(x) dx` by globally adaptive Gauss-Kronrod bisection.
pub fn integrate_interval<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
) -> Result<Quadrature, QuadratureError> {
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(QuadratureError::InvalidInterval(a, b));
    }
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0, evaluations: 0 });
    }
    const MAX_SEGMENTS: usize = 2000;
    let mut segs = vec![kronrod(&f, a, b)?];
    loop {
        let value: f64 = segs.iter().map(|s| s.value).sum();
        let error: f64 = segs.iter().map(|s| s.error).sum();
        let abs: f64 = segs.iter().map(|s| s.abs).sum();
        if error <= rel_tol * abs.max(value.abs()) || error < 1e-300 {
            return Ok(Quadrature { value, error, evaluations: segs.len() * 15 });
        }
        if segs.len() >= MAX_SEGMENTS {
            return Err(QuadratureError::NoConvergence { estimate: value, error });
        }
        let (worst, _) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("non-empty segment list");
        let s = segs.swap_remove(worst);
        let mid = 0.5 * (s.a + s.b);
        if mid <= s.a || mid >= s.b {
            return Err(QuadratureError::NoConvergence { estimate: value, error });
        }
        segs.push(kronrod(&f, s.a, mid)?);
        segs.push(kronrod(&f, mid, s.b)?);
    }
}

/// `∫_a^∞ f(x) dx` for a nonnegative, eventually decreasing integrand: the
/// upper limit grows geometrically until `f` drops below `cutoff`.
pub fn integrate_to_cutoff<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    initial_width: f64,
    cutoff: f64,
    rel_tol: f64,
) -> Result<Quadrature, QuadratureError> {
    let mut width = initial_width.max(f64::MIN_POSITIVE);
    let mut doublings = 0;
    while f(a + width) >= cutoff {
        width *= 2.0;
        doublings += 1;
        if doublings > 200 || !width.is_finite() {
            return Err(QuadratureError::NoConvergence { estimate: f64::NAN, error: f64::INFINITY });
        }
    }
    integrate_interval(f, a, a + width, rel_tol)
}
