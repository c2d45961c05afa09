//! Adaptive Simpson integration.

/// Result of [`adaptive_simpson`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    /// Sum of the local Richardson error estimates.
    pub error_estimate: f64,
    pub evaluations: usize,
    /// False if some panel hit the depth limit before meeting its tolerance.
    pub converged: bool,
}

pub const DEFAULT_MAX_DEPTH: u32 = 40;

// Panels are always split this many times before the error test applies, so
// a narrow peak cannot slip between the first five samples.
const MIN_DEPTH: u32 = 6;

struct State<'a, F> {
    f: &'a F,
    max_depth: u32,
    evaluations: usize,
    error: f64,
    converged: bool,
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol` by recursive
/// interval bisection.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: u32,
) -> Quadrature {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let mut st = State {
        f,
        max_depth,
        evaluations: 3,
        error: 0.0,
        converged: true,
    };
    let value = refine(&mut st, a, b, fa, fm, fb, whole, tol, 0);
    Quadrature {
        value,
        error_estimate: st.error,
        evaluations: st.evaluations,
        converged: st.converged,
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    st: &mut State<'_, F>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = (st.f)(lm);
    let frm = (st.f)(rm);
    st.evaluations += 2;
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth >= MIN_DEPTH && delta.abs() <= 15.0 * tol {
        st.error += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    if depth >= st.max_depth {
        st.converged = false;
        st.error += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    refine(st, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)
        + refine(st, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_for_cubics() {
        let q = adaptive_simpson(&|x: f64| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 1e-10, 40);
        assert_abs_diff_eq!(q.value, 3.75, epsilon = 1e-12);
        assert!(q.converged);
    }

    #[test]
    fn gaussian_integral() {
        let q = adaptive_simpson(&|x: f64| (-x * x).exp(), -10.0, 10.0, 1e-10, 40);
        assert_abs_diff_eq!(q.value, std::f64::consts::PI.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn finds_an_off_center_spike() {
        // Narrow bump far from the first sample points.
        let f = |x: f64| (-((x - 7.3) / 0.05).powi(2)).exp();
        let q = adaptive_simpson(&f, -30.0, 30.0, 1e-10, 40);
        assert_abs_diff_eq!(q.value, 0.05 * std::f64::consts::PI.sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn depth_limit_is_reported() {
        let q = adaptive_simpson(&|x: f64| x.abs().sqrt(), -1.0, 1.0, 1e-15, 8);
        assert!(!q.converged);
    }
}
