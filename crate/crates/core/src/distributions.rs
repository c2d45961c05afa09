//! Gumbel sampling and densities, and the error density implied by a loss.
//!
//! A loss `l` defines an error model with density proportional to
//! `exp(-l(x))`. For the Gumbel loss this is a reflected Gumbel law; for the
//! order-2 expansion it is a normal law with standard deviation `beta`.

use rand::distributions::Open01;
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::LossSpec;
use crate::quadrature::{adaptive_simpson, DEFAULT_MAX_DEPTH};

/// Mean of the standard Gumbel law (Euler-Mascheroni constant).
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Unnormalized density must fall below this at both grid ends.
pub const TAIL_THRESHOLD: f64 = 1e-12;

/// Absolute tolerance for the normalizing integral.
pub const NORMALIZER_TOLERANCE: f64 = 1e-8;

/// Location/scale Gumbel law, optionally reflected about its location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelParams {
    location: f64,
    scale: f64,
    negated: bool,
}

impl GumbelParams {
    pub fn new(location: f64, scale: f64, negated: bool) -> Result<Self> {
        if !location.is_finite() {
            return Err(Error::config(format!(
                "location must be finite, got {location}"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::config(format!(
                "scale must be positive, got {scale}"
            )));
        }
        Ok(GumbelParams {
            location,
            scale,
            negated,
        })
    }

    pub fn standard() -> Self {
        GumbelParams {
            location: 0.0,
            scale: 1.0,
            negated: false,
        }
    }

    pub fn location(&self) -> f64 {
        self.location
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn negated(&self) -> bool {
        self.negated
    }

    pub fn mean(&self) -> f64 {
        let offset = EULER_GAMMA * self.scale;
        if self.negated {
            self.location - offset
        } else {
            self.location + offset
        }
    }

    pub fn std_dev(&self) -> f64 {
        std::f64::consts::PI * self.scale / 6f64.sqrt()
    }
}

/// Inverse-CDF transform of a uniform `u` in (0, 1).
pub fn gumbel_from_uniform(params: &GumbelParams, u: f64) -> f64 {
    let centered = -params.scale * (-u.ln()).ln();
    if params.negated {
        params.location - centered
    } else {
        params.location + centered
    }
}

pub fn sample_gumbel<R: Rng + ?Sized>(params: &GumbelParams, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    gumbel_from_uniform(params, u)
}

pub fn gumbel_pdf(x: f64, params: &GumbelParams) -> f64 {
    let mut w = (x - params.location) / params.scale;
    if params.negated {
        w = -w;
    }
    (-(w + (-w).exp())).exp() / params.scale
}

/// A normalized density sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    /// Integral of the unnormalized density over the grid span.
    pub normalizer: f64,
}

impl DensityCurve {
    /// Trapezoid integral of the sampled density.
    pub fn trapezoid_integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Sup-norm distance to another curve on the same grid.
    pub fn max_abs_difference(&self, other: &DensityCurve) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::input("density curves are on different grids"));
        }
        Ok(self
            .density
            .iter()
            .zip(&other.density)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.grid.iter().copied().zip(self.density.iter().copied())
    }
}

pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Normalized `exp(-loss(x))` over the raw residual `x`.
///
/// The normalizer is integrated over the grid span, so the span must reach
/// far enough into both tails: the unnormalized density at each end has to be
/// below [`TAIL_THRESHOLD`].
pub fn implied_error_density(spec: &LossSpec, grid: &Grid) -> Result<DensityCurve> {
    spec.validate()?;
    let unnormalized = |x: f64| (-spec.loss(x)).exp();
    for at in [grid.start(), grid.stop()] {
        let value = unnormalized(at);
        if !(value < TAIL_THRESHOLD) {
            return Err(Error::SupportNotCovered {
                at,
                value,
                threshold: TAIL_THRESHOLD,
            });
        }
    }
    let q = adaptive_simpson(
        &unnormalized,
        grid.start(),
        grid.stop(),
        NORMALIZER_TOLERANCE,
        DEFAULT_MAX_DEPTH,
    );
    if !q.converged || !(q.value.is_finite() && q.value > 0.0) {
        return Err(Error::input(format!(
            "normalizer for {spec} did not converge (value {})",
            q.value
        )));
    }
    let xs = grid.points();
    let density = xs.iter().map(|&x| unnormalized(x) / q.value).collect();
    Ok(DensityCurve {
        grid: xs,
        density,
        normalizer: q.value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn wide() -> Grid {
        Grid::new(-30.0, 30.0, 0.01).unwrap()
    }

    #[test]
    fn inverse_cdf_at_median_uniform() {
        let x = gumbel_from_uniform(&GumbelParams::standard(), 0.5);
        assert_relative_eq!(x, -(2f64.ln()).ln(), max_relative = 1e-15);
        assert_abs_diff_eq!(x, 0.3665129, epsilon = 1e-7);
    }

    #[test]
    fn negation_reflects_about_location() {
        let p = GumbelParams::new(1.5, 2.0, false).unwrap();
        let n = GumbelParams::new(1.5, 2.0, true).unwrap();
        for &u in &[0.1, 0.5, 0.9] {
            let a = gumbel_from_uniform(&p, u) - 1.5;
            let b = gumbel_from_uniform(&n, u) - 1.5;
            assert_relative_eq!(a, -b);
        }
        for &t in &[-3.0, -0.4, 0.0, 0.8, 5.0] {
            assert_relative_eq!(gumbel_pdf(1.5 - t, &n), gumbel_pdf(1.5 + t, &p));
        }
    }

    #[test]
    fn pdf_peak_and_mass() {
        let p = GumbelParams::standard();
        assert_relative_eq!(gumbel_pdf(0.0, &p), (-1f64).exp(), max_relative = 1e-15);
        for params in [
            GumbelParams::new(0.0, 1.0, false).unwrap(),
            GumbelParams::new(-2.0, 0.5, true).unwrap(),
            GumbelParams::new(3.0, 4.0, false).unwrap(),
        ] {
            let (m, b) = (params.location(), params.scale());
            let q = adaptive_simpson(
                &|x| gumbel_pdf(x, &params),
                m - 20.0 * b,
                m + 20.0 * b,
                1e-10,
                40,
            );
            assert_abs_diff_eq!(q.value, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn monte_carlo_means() {
        let mut rng = stream_rng(11, 0);
        let std_g = GumbelParams::standard();
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_gumbel(&std_g, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - EULER_GAMMA).abs() < 0.02, "mean {mean}");

        let neg = GumbelParams::new(0.0, 2.0, true).unwrap();
        let mean = (0..n).map(|_| sample_gumbel(&neg, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean + 1.1544313).abs() < 0.04, "mean {mean}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = GumbelParams::standard();
        let a: Vec<f64> = {
            let mut r = stream_rng(5, 9);
            (0..100).map(|_| sample_gumbel(&p, &mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = stream_rng(5, 9);
            (0..100).map(|_| sample_gumbel(&p, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn order_two_density_is_normal() {
        for beta in [0.5, 1.0, 2.0] {
            let spec = LossSpec::expanded_gumbel(beta, 2).unwrap();
            let curve = implied_error_density(&spec, &wide()).unwrap();
            let norm = |x: f64| {
                (-(x / beta).powi(2) / 2.0).exp() / (beta * (2.0 * std::f64::consts::PI).sqrt())
            };
            for (x, d) in curve.rows() {
                assert_abs_diff_eq!(d, norm(x), epsilon = 1e-8);
            }
        }
        let l2 = implied_error_density(&LossSpec::l2(1.0).unwrap(), &wide()).unwrap();
        let at0 = l2.rows().find(|(x, _)| x.abs() < 1e-12).unwrap().1;
        assert_abs_diff_eq!(at0, 0.3989423, epsilon = 1e-7);
    }

    #[test]
    fn gumbel_density_closed_form() {
        let curve = implied_error_density(&LossSpec::gumbel(1.0).unwrap(), &wide()).unwrap();
        assert_relative_eq!(curve.normalizer, std::f64::consts::E, max_relative = 1e-8);
        for (z, d) in curve.rows() {
            assert_abs_diff_eq!(d, z.exp() * (-z.exp()).exp(), epsilon = 1e-8);
        }
    }

    #[test]
    fn densities_integrate_to_one() {
        let mut specs = vec![
            LossSpec::gumbel(1.0).unwrap(),
            LossSpec::l2(1.0).unwrap(),
            LossSpec::expectile(0.7).unwrap(),
        ];
        for n in [2, 4, 8, 12, 16] {
            specs.push(LossSpec::expanded_gumbel(1.0, n).unwrap());
        }
        for spec in specs {
            let c = implied_error_density(&spec, &wide()).unwrap();
            assert_abs_diff_eq!(c.trapezoid_integral(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn densities_approach_gumbel_as_order_grows() {
        let grid = wide();
        let gumbel = implied_error_density(&LossSpec::gumbel(1.0).unwrap(), &grid).unwrap();
        let dists: Vec<f64> = [2, 4, 8, 12, 16]
            .iter()
            .map(|&n| {
                let c = implied_error_density(&LossSpec::expanded_gumbel(1.0, n).unwrap(), &grid)
                    .unwrap();
                c.max_abs_difference(&gumbel).unwrap()
            })
            .collect();
        for w in dists.windows(2) {
            assert!(w[1] < w[0], "{dists:?}");
        }
    }

    #[test]
    fn narrow_grid_is_rejected() {
        let narrow = Grid::new(-10.0, 10.0, 0.01).unwrap();
        let err = implied_error_density(&LossSpec::gumbel(1.0).unwrap(), &narrow).unwrap_err();
        assert!(matches!(err, Error::SupportNotCovered { .. }), "{err}");
        // The normal tail is covered on the same grid.
        assert!(implied_error_density(&LossSpec::l2(1.0).unwrap(), &narrow).is_ok());
    }

    #[test]
    fn clipped_loss_has_no_proper_density() {
        let spec = LossSpec::clipped_gumbel(1.0, 7.0).unwrap();
        assert!(matches!(
            implied_error_density(&spec, &wide()),
            Err(Error::SupportNotCovered { .. })
        ));
    }
}
