//! Per-sample regression losses and their derivatives.
//!
//! Every loss is a function of the residual `x - h` (sample minus
//! prediction). Derivatives are taken with respect to the prediction `h`, so
//! a gradient step is always `h <- h - lr * grad`.
//!
//! The Gumbel loss `e^z - z - 1` (with `z = residual / beta`) is exponential
//! in the residual and can overflow. Overflow is not an error: the value
//! comes back as `f64::INFINITY` (or `-INFINITY` for the gradient) so that
//! the training harnesses can record it as a divergence event.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// The loss families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossVariant {
    Gumbel,
    ClippedGumbel,
    ExpandedGumbel,
    L2,
    Expectile,
}

impl LossVariant {
    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Gumbel => "gumbel",
            LossVariant::ClippedGumbel => "clipped",
            LossVariant::ExpandedGumbel => "expanded",
            LossVariant::L2 => "l2",
            LossVariant::Expectile => "expectile",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gumbel" => Ok(LossVariant::Gumbel),
            "clipped" | "clipped-gumbel" | "clipped_gumbel" => Ok(LossVariant::ClippedGumbel),
            "expanded" | "expanded-gumbel" | "expanded_gumbel" => Ok(LossVariant::ExpandedGumbel),
            "l2" => Ok(LossVariant::L2),
            "expectile" => Ok(LossVariant::Expectile),
            other => Err(Error::config(format!(
                "unknown loss {other:?} (expected gumbel, clipped, expanded, l2 or expectile)"
            ))),
        }
    }
}

/// A loss family together with its parameters.
///
/// Build through the checked constructors ([`LossSpec::gumbel`],
/// [`LossSpec::expanded_gumbel`], ...). Specs assembled by hand can be checked
/// with [`LossSpec::validate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    Gumbel {
        beta: f64,
    },
    /// The batch-coupled variant with clamping and max-normalization.
    ClippedGumbel {
        beta: f64,
        clip: f64,
    },
    /// Truncated Maclaurin series of the Gumbel loss, terms 2 through `order`.
    ExpandedGumbel {
        beta: f64,
        order: u32,
    },
    /// `(residual / beta)^2 / 2`.
    L2 {
        beta: f64,
    },
    Expectile {
        tau: f64,
    },
}

impl LossSpec {
    pub fn gumbel(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(LossSpec::Gumbel { beta })
    }

    pub fn clipped_gumbel(beta: f64, clip: f64) -> Result<Self> {
        check_beta(beta)?;
        check_clip(clip)?;
        Ok(LossSpec::ClippedGumbel { beta, clip })
    }

    pub fn expanded_gumbel(beta: f64, order: u32) -> Result<Self> {
        check_beta(beta)?;
        check_order(order)?;
        Ok(LossSpec::ExpandedGumbel { beta, order })
    }

    pub fn l2(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(LossSpec::L2 { beta })
    }

    pub fn expectile(tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(LossSpec::Expectile { tau })
    }

    /// The same family at a different temperature. Expectile specs have no
    /// temperature and are returned unchanged.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        let spec = match *self {
            LossSpec::Gumbel { .. } => LossSpec::Gumbel { beta },
            LossSpec::ClippedGumbel { clip, .. } => LossSpec::ClippedGumbel { beta, clip },
            LossSpec::ExpandedGumbel { order, .. } => LossSpec::ExpandedGumbel { beta, order },
            LossSpec::L2 { .. } => LossSpec::L2 { beta },
            LossSpec::Expectile { tau } => LossSpec::Expectile { tau },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Gumbel { beta } | LossSpec::L2 { beta } => check_beta(beta),
            LossSpec::ClippedGumbel { beta, clip } => {
                check_beta(beta)?;
                check_clip(clip)
            }
            LossSpec::ExpandedGumbel { beta, order } => {
                check_beta(beta)?;
                check_order(order)
            }
            LossSpec::Expectile { tau } => check_tau(tau),
        }
    }

    pub fn variant(&self) -> LossVariant {
        match self {
            LossSpec::Gumbel { .. } => LossVariant::Gumbel,
            LossSpec::ClippedGumbel { .. } => LossVariant::ClippedGumbel,
            LossSpec::ExpandedGumbel { .. } => LossVariant::ExpandedGumbel,
            LossSpec::L2 { .. } => LossVariant::L2,
            LossSpec::Expectile { .. } => LossVariant::Expectile,
        }
    }

    /// Temperature, if the family has one.
    pub fn beta(&self) -> Option<f64> {
        match *self {
            LossSpec::Gumbel { beta }
            | LossSpec::ClippedGumbel { beta, .. }
            | LossSpec::ExpandedGumbel { beta, .. }
            | LossSpec::L2 { beta } => Some(beta),
            LossSpec::Expectile { .. } => None,
        }
    }

    /// Expansion order for the expanded family; `L2` reports 2.
    pub fn order(&self) -> Option<u32> {
        match *self {
            LossSpec::ExpandedGumbel { order, .. } => Some(order),
            LossSpec::L2 { .. } => Some(2),
            _ => None,
        }
    }

    /// Short label used in CSV output, e.g. `expanded-n8`.
    pub fn label(&self) -> String {
        match *self {
            LossSpec::ExpandedGumbel { order, .. } => format!("expanded-n{order}"),
            LossSpec::Expectile { tau } => format!("expectile-tau{tau}"),
            LossSpec::ClippedGumbel { clip, .. } => format!("clipped-c{clip}"),
            _ => self.variant().name().to_string(),
        }
    }

    /// Per-sample loss at `residual`. The clipped variant is evaluated as a
    /// batch of one.
    pub fn loss(&self, residual: f64) -> f64 {
        match *self {
            LossSpec::Gumbel { beta } => gumbel_value(residual / beta),
            LossSpec::ClippedGumbel { beta, clip } => clipped_value(&[residual], beta, clip),
            LossSpec::ExpandedGumbel { beta, order } => expanded_value(residual / beta, order),
            LossSpec::L2 { beta } => {
                let z = residual / beta;
                0.5 * z * z
            }
            LossSpec::Expectile { tau } => expectile_weight(residual, tau) * residual * residual,
        }
    }

    /// Derivative of [`LossSpec::loss`] with respect to the prediction.
    pub fn grad(&self, residual: f64) -> f64 {
        match *self {
            LossSpec::Gumbel { beta } => gumbel_derivative(residual / beta, beta),
            LossSpec::ClippedGumbel { beta, clip } => {
                let m = clipped_shift(residual / beta, clip);
                clipped_sample_grad(residual, beta, clip, m)
            }
            LossSpec::ExpandedGumbel { beta, order } => {
                -expanded_slope(residual / beta, order) / beta
            }
            LossSpec::L2 { beta } => -residual / (beta * beta),
            LossSpec::Expectile { tau } => -2.0 * expectile_weight(residual, tau) * residual,
        }
    }

    /// Mean loss over a batch of residuals.
    pub fn batch_loss(&self, residuals: &[f64]) -> Result<f64> {
        if residuals.is_empty() {
            return Err(Error::input("empty batch"));
        }
        Ok(match *self {
            LossSpec::ClippedGumbel { beta, clip } => clipped_value(residuals, beta, clip),
            _ => residuals.iter().map(|&r| self.loss(r)).sum::<f64>() / residuals.len() as f64,
        })
    }

    /// Derivative of [`LossSpec::batch_loss`] with respect to a prediction
    /// shared by every sample in the batch.
    pub fn batch_grad(&self, residuals: &[f64]) -> Result<f64> {
        if residuals.is_empty() {
            return Err(Error::input("empty batch"));
        }
        let n = residuals.len() as f64;
        Ok(match *self {
            LossSpec::ClippedGumbel { beta, clip } => {
                clipped_gumbel_grads(residuals, beta, clip)?
                    .iter()
                    .sum::<f64>()
                    / n
            }
            _ => residuals.iter().map(|&r| self.grad(r)).sum::<f64>() / n,
        })
    }

    /// Weighted mean loss. Zero-weight samples are ignored, including by the
    /// clipped variant's shift.
    pub fn weighted_batch_loss(&self, residuals: &[f64], weights: &[f64]) -> Result<f64> {
        let total = check_weights(residuals, weights)?;
        let shift = self.weighted_shift(residuals, weights);
        let sum: f64 = residuals
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&r, &w)| {
                w * match (*self, shift) {
                    (LossSpec::ClippedGumbel { beta, clip }, Some(m)) => {
                        let z = (r / beta).clamp(-clip, clip);
                        let em = (-m).exp();
                        (z - m).exp() - z * em - em
                    }
                    _ => self.loss(r),
                }
            })
            .sum();
        Ok(sum / total)
    }

    /// Derivative of [`LossSpec::weighted_batch_loss`] with respect to a
    /// shared prediction.
    pub fn weighted_batch_grad(&self, residuals: &[f64], weights: &[f64]) -> Result<f64> {
        let total = check_weights(residuals, weights)?;
        let shift = self.weighted_shift(residuals, weights);
        let sum: f64 = residuals
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&r, &w)| {
                w * match (*self, shift) {
                    (LossSpec::ClippedGumbel { beta, clip }, Some(m)) => {
                        clipped_sample_grad(r, beta, clip, m)
                    }
                    _ => self.grad(r),
                }
            })
            .sum();
        Ok(sum / total)
    }

    fn weighted_shift(&self, residuals: &[f64], weights: &[f64]) -> Option<f64> {
        match *self {
            LossSpec::ClippedGumbel { beta, clip } => Some(clipped_shift_of(
                residuals
                    .iter()
                    .zip(weights)
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(r, _)| (r / beta).clamp(-clip, clip)),
            )),
            _ => None,
        }
    }
}

fn check_weights(residuals: &[f64], weights: &[f64]) -> Result<f64> {
    if residuals.len() != weights.len() {
        return Err(Error::input("residuals and weights differ in length"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::input("weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::input("empty batch"));
    }
    Ok(total)
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LossSpec::Gumbel { beta } => write!(f, "gumbel(beta={beta})"),
            LossSpec::ClippedGumbel { beta, clip } => {
                write!(f, "clipped(beta={beta}, clip={clip})")
            }
            LossSpec::ExpandedGumbel { beta, order } => {
                write!(f, "expanded(beta={beta}, order={order})")
            }
            LossSpec::L2 { beta } => write!(f, "l2(beta={beta})"),
            LossSpec::Expectile { tau } => write!(f, "expectile(tau={tau})"),
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "beta must be positive and finite, got {beta}"
        )))
    }
}

fn check_order(order: u32) -> Result<()> {
    if order >= 2 && order % 2 == 0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "order must be even and >= 2, got {order}"
        )))
    }
}

fn check_clip(clip: f64) -> Result<()> {
    if clip.is_finite() && clip > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("clip must be positive, got {clip}")))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("tau must lie in (0, 1), got {tau}")))
    }
}

fn check_residual(residual: f64) -> Result<()> {
    if residual.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!(
            "residual must be finite, got {residual}"
        )))
    }
}

// e^z - z - 1. exp_m1 keeps full relative precision near z = 0.
fn gumbel_value(z: f64) -> f64 {
    z.exp_m1() - z
}

fn gumbel_derivative(z: f64, beta: f64) -> f64 {
    -z.exp_m1() / beta
}

/// `sum_{j=2}^{order} z^j / j!` in nested form
/// `z^2/2 * (1 + z/3 * (1 + z/4 * (... (1 + z/order))))`.
fn expanded_value(z: f64, order: u32) -> f64 {
    let mut acc = 1.0;
    for j in (3..=order).rev() {
        acc = 1.0 + acc * z / j as f64;
    }
    0.5 * z * z * acc
}

/// `sum_{k=1}^{order-1} z^k / k!`, the derivative of [`expanded_value`] in z.
fn expanded_slope(z: f64, order: u32) -> f64 {
    let mut acc = 1.0;
    for k in (2..order).rev() {
        acc = 1.0 + acc * z / k as f64;
    }
    z * acc
}

fn expectile_weight(residual: f64, tau: f64) -> f64 {
    if residual < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

// Max-normalization shift: max clamped z, floored at -1.
fn clipped_shift_of(zs: impl Iterator<Item = f64>) -> f64 {
    let m = zs.fold(f64::NEG_INFINITY, f64::max);
    if m < -1.0 {
        -1.0
    } else {
        m
    }
}

fn clipped_shift(z: f64, clip: f64) -> f64 {
    clipped_shift_of(std::iter::once(z.clamp(-clip, clip)))
}

fn clipped_value(residuals: &[f64], beta: f64, clip: f64) -> f64 {
    let m = clipped_shift_of(residuals.iter().map(|r| (r / beta).clamp(-clip, clip)));
    let em = (-m).exp();
    let total: f64 = residuals
        .iter()
        .map(|r| {
            let z = (r / beta).clamp(-clip, clip);
            (z - m).exp() - z * em - em
        })
        .sum();
    total / residuals.len() as f64
}

fn clipped_sample_grad(residual: f64, beta: f64, clip: f64, shift: f64) -> f64 {
    let z = residual / beta;
    // The clamp passes gradient only on its closed interior range.
    if z.abs() > clip {
        return 0.0;
    }
    -((z - shift).exp() - (-shift).exp()) / beta
}

/// The Gumbel regression loss `e^z - z - 1`, `z = residual / beta`.
///
/// Returns `INFINITY` when `e^z` overflows.
pub fn gumbel_loss(residual: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_residual(residual)?;
    Ok(gumbel_value(residual / beta))
}

/// `(1 - e^z) / beta`, the derivative of [`gumbel_loss`] with respect to the
/// prediction. Returns `-INFINITY` when `e^z` overflows.
pub fn gumbel_loss_grad(residual: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    check_residual(residual)?;
    Ok(gumbel_derivative(residual / beta, beta))
}

/// Batch Gumbel loss with clamping and max-normalization.
///
/// With `z_i = clamp(r_i / beta, -clip, clip)` and `m = max(max_i z_i, -1)`
/// this returns `mean_i [e^(z_i - m) - z_i e^-m - e^-m]`.
pub fn clipped_gumbel_loss(residuals: &[f64], beta: f64, clip: f64) -> Result<f64> {
    check_beta(beta)?;
    check_clip(clip)?;
    if residuals.is_empty() {
        return Err(Error::input("clipped Gumbel loss needs a nonempty batch"));
    }
    for &r in residuals {
        check_residual(r)?;
    }
    Ok(clipped_value(residuals, beta, clip))
}

/// Per-sample derivatives of the clipped batch loss with respect to each
/// sample's prediction, holding the normalization shift fixed. The gradient
/// of the batch mean is the mean of these.
pub fn clipped_gumbel_grads(residuals: &[f64], beta: f64, clip: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    check_clip(clip)?;
    if residuals.is_empty() {
        return Err(Error::input("clipped Gumbel loss needs a nonempty batch"));
    }
    let m = clipped_shift_of(residuals.iter().map(|r| (r / beta).clamp(-clip, clip)));
    Ok(residuals
        .iter()
        .map(|&r| clipped_sample_grad(r, beta, clip, m))
        .collect())
}

/// Truncated Maclaurin series of the Gumbel loss, `sum_{j=2}^{order} z^j / j!`.
pub fn expanded_gumbel_loss(residual: f64, beta: f64, order: u32) -> Result<f64> {
    check_beta(beta)?;
    check_order(order)?;
    check_residual(residual)?;
    Ok(expanded_value(residual / beta, order))
}

/// `-(1/beta) sum_{k=1}^{order-1} z^k / k!`.
pub fn expanded_gumbel_loss_grad(residual: f64, beta: f64, order: u32) -> Result<f64> {
    check_beta(beta)?;
    check_order(order)?;
    check_residual(residual)?;
    Ok(-expanded_slope(residual / beta, order) / beta)
}

/// Asymmetric squared loss `|tau - 1[residual < 0]| * residual^2`.
pub fn expectile_loss(residual: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    check_residual(residual)?;
    Ok(expectile_weight(residual, tau) * residual * residual)
}

/// Lagrange bound on the gap between the Gumbel loss and its order-`order`
/// truncation at scaled residual `z`: `|z|^(n+1) e^|z| / (n+1)!`.
pub fn taylor_remainder_bound(z: f64, order: u32) -> f64 {
    let a = z.abs();
    let mut term = a.exp();
    for k in 1..=order + 1 {
        term *= a / k as f64;
    }
    term
}

/// Loss values over a set of residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    pub spec: LossSpec,
    pub points: Vec<(f64, f64)>,
}

pub fn loss_curve(spec: &LossSpec, residuals: &[f64]) -> Result<LossCurve> {
    spec.validate()?;
    let points = residuals
        .iter()
        .map(|&r| {
            check_residual(r)?;
            Ok((r, spec.loss(r)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossCurve {
        spec: *spec,
        points,
    })
}

pub fn loss_curve_on_grid(spec: &LossSpec, grid: &Grid) -> Result<LossCurve> {
    loss_curve(spec, &grid.points())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const E: f64 = std::f64::consts::E;

    fn central_difference(f: impl Fn(f64) -> f64, h: f64, step: f64) -> f64 {
        (f(h + step) - f(h - step)) / (2.0 * step)
    }

    // Residuals on [-5, 5] with an even point count, so 0 is excluded and
    // relative error stays meaningful.
    fn residual_grid() -> Vec<f64> {
        (0..1000).map(|i| -5.0 + 10.0 * i as f64 / 999.0).collect()
    }

    #[test]
    fn gumbel_closed_forms() {
        assert_eq!(gumbel_loss(0.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(
            gumbel_loss(1.0, 1.0).unwrap(),
            E - 2.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            gumbel_loss(-1.0, 1.0).unwrap(),
            1.0 / E,
            max_relative = 1e-15
        );
        assert_eq!(gumbel_loss_grad(0.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(
            gumbel_loss_grad(1.0, 1.0).unwrap(),
            1.0 - E,
            max_relative = 1e-15
        );
    }

    #[test]
    fn gumbel_overflow_is_flagged_not_fatal() {
        let v = gumbel_loss(800.0, 1.0).unwrap();
        assert!(v.is_infinite() && v > 0.0);
        let g = gumbel_loss_grad(800.0, 1.0).unwrap();
        assert!(g.is_infinite() && g < 0.0);
        // Deep negative residuals stay finite.
        assert!(gumbel_loss(-1e6, 1.0).unwrap().is_finite());
    }

    #[test]
    fn non_finite_residual_is_an_input_error() {
        assert!(matches!(gumbel_loss(f64::NAN, 1.0), Err(Error::Input(_))));
        assert!(matches!(
            gumbel_loss_grad(f64::INFINITY, 1.0),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            expanded_gumbel_loss(f64::NAN, 1.0, 4),
            Err(Error::Input(_))
        ));
        assert!(matches!(gumbel_loss(1.0, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn clipped_examples() {
        assert_eq!(clipped_gumbel_loss(&[0.0], 1.0, 7.0).unwrap(), 0.0);
        let expected = ((1.0 - 2.0 / E) + (-2.0f64).exp()) / 2.0;
        assert_relative_eq!(
            clipped_gumbel_loss(&[1.0, -1.0], 1.0, 7.0).unwrap(),
            expected,
            max_relative = 1e-15
        );
        assert_relative_eq!(expected, 0.1997882, epsilon = 1e-7);
        assert_eq!(
            clipped_gumbel_loss(&[100.0], 1.0, 7.0).unwrap(),
            clipped_gumbel_loss(&[7.0], 1.0, 7.0).unwrap()
        );
        assert!(matches!(
            clipped_gumbel_loss(&[], 1.0, 7.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn clipped_single_sample_closed_form() {
        // |z| <= clip and z >= -1 gives m = z, so the value is 1 - (z + 1) e^-z.
        for &z in &[-1.0, -0.5, 0.0, 0.3, 1.0, 2.5, 6.9] {
            let got = clipped_gumbel_loss(&[z * 2.0], 2.0, 7.0).unwrap();
            let want = 1.0 - (z + 1.0) * (-z).exp();
            assert_relative_eq!(got, want, epsilon = 1e-15, max_relative = 1e-12);
        }
    }

    #[test]
    fn clipped_grads_match_finite_differences_of_shared_prediction() {
        // Away from the clamp edges and with the shift held fixed the
        // derivative in h is (1/beta) sum (e^-m - e^(z-m)) / N.
        let xs = [0.4, -1.2, 2.0, 0.9];
        let beta = 1.5;
        let clip = 7.0;
        let spec = LossSpec::clipped_gumbel(beta, clip).unwrap();
        let h = 0.1;
        let residuals: Vec<f64> = xs.iter().map(|x| x - h).collect();
        let analytic = spec.batch_grad(&residuals).unwrap();
        let m = residuals
            .iter()
            .map(|r| r / beta)
            .fold(f64::NEG_INFINITY, f64::max);
        let fixed_shift = |hh: f64| {
            xs.iter()
                .map(|x| {
                    let z = (x - hh) / beta;
                    (z - m).exp() - z * (-m).exp() - (-m).exp()
                })
                .sum::<f64>()
                / xs.len() as f64
        };
        let fd = central_difference(fixed_shift, h, 1e-5);
        assert_relative_eq!(analytic, fd, max_relative = 1e-6);
    }

    #[test]
    fn clamped_samples_carry_no_gradient() {
        let g = clipped_gumbel_grads(&[50.0, 0.5], 1.0, 7.0).unwrap();
        assert_eq!(g[0], 0.0);
        assert!(g[1] != 0.0);
    }

    #[test]
    fn expanded_examples() {
        assert_eq!(expanded_gumbel_loss(0.0, 3.0, 8).unwrap(), 0.0);
        assert_eq!(expanded_gumbel_loss(1.0, 1.0, 2).unwrap(), 0.5);
        assert_relative_eq!(
            expanded_gumbel_loss(1.0, 1.0, 4).unwrap(),
            17.0 / 24.0,
            max_relative = 1e-15
        );
        assert_eq!(expanded_gumbel_loss_grad(0.0, 1.0, 6).unwrap(), 0.0);
        assert_eq!(expanded_gumbel_loss_grad(1.0, 1.0, 2).unwrap(), -1.0);
    }

    #[test]
    fn odd_or_small_order_rejected() {
        for order in [0, 1, 3, 5, 21] {
            let err = LossSpec::expanded_gumbel(1.0, order).unwrap_err();
            assert!(err.to_string().contains("order must be even"), "{err}");
        }
        assert!(expanded_gumbel_loss(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn expanded_matches_direct_power_sum() {
        // Independent route: explicit powers and factorials.
        let direct = |z: f64, n: u32| {
            let mut fact = 1.0;
            let mut sum = 0.0;
            for j in 1..=n {
                fact *= j as f64;
                if j >= 2 {
                    sum += z.powi(j as i32) / fact;
                }
            }
            sum
        };
        for &z in &[-3.0, -0.7, 0.25, 1.0, 2.0, 4.5] {
            for n in [2, 4, 6, 8, 12, 20] {
                assert_relative_eq!(expanded_value(z, n), direct(z, n), max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn expectile_examples() {
        assert_relative_eq!(expectile_loss(1.0, 0.7).unwrap(), 0.7);
        assert_relative_eq!(
            expectile_loss(-1.0, 0.7).unwrap(),
            0.3,
            max_relative = 1e-15
        );
        assert_eq!(expectile_loss(0.0, 0.2).unwrap(), 0.0);
        assert!(matches!(expectile_loss(1.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(expectile_loss(1.0, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn loss_curve_examples() {
        let l2 = LossSpec::l2(1.0).unwrap();
        let c = loss_curve(&l2, &[-1.0, 0.0, 1.0]).unwrap();
        let ys: Vec<f64> = c.points.iter().map(|p| p.1).collect();
        assert_eq!(ys, vec![0.5, 0.0, 0.5]);

        let g = LossSpec::gumbel(1.0).unwrap();
        assert_eq!(loss_curve(&g, &[0.0]).unwrap().points, vec![(0.0, 0.0)]);
    }

    #[test]
    fn higher_order_curve_tracks_gumbel_more_closely() {
        let zs: Vec<f64> = (0..=400).map(|i| -2.0 + i as f64 * 0.01).collect();
        let gumbel = LossSpec::gumbel(1.0).unwrap();
        let max_dev = |order| {
            let spec = LossSpec::expanded_gumbel(1.0, order).unwrap();
            zs.iter()
                .map(|&z| (spec.loss(z) - gumbel.loss(z)).abs())
                .fold(0.0, f64::max)
        };
        assert!(max_dev(8) < max_dev(4));
    }

    #[test]
    fn every_family_is_zero_at_zero() {
        let specs = [
            LossSpec::gumbel(0.7).unwrap(),
            LossSpec::clipped_gumbel(0.7, 3.0).unwrap(),
            LossSpec::expanded_gumbel(0.7, 10).unwrap(),
            LossSpec::l2(0.7).unwrap(),
            LossSpec::expectile(0.9).unwrap(),
        ];
        for s in specs {
            assert_eq!(s.loss(0.0), 0.0, "{s}");
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let step = 1e-5;
        for &beta in &[0.5, 1.0, 2.0, 10.0] {
            let mut specs = vec![LossSpec::gumbel(beta).unwrap(), LossSpec::l2(beta).unwrap()];
            for order in [2, 4, 8, 20] {
                specs.push(LossSpec::expanded_gumbel(beta, order).unwrap());
            }
            for spec in &specs {
                for x in residual_grid() {
                    // The loss is a function of x - h; differentiate in h.
                    let fd = central_difference(|h| spec.loss(x - h), 0.0, step);
                    let an = spec.grad(x);
                    let rel = (fd - an).abs() / an.abs();
                    assert!(rel < 1e-6, "{spec} at residual {x}: fd {fd} vs {an}");
                }
            }
        }
        for &tau in &[0.3, 0.7, 0.9] {
            let spec = LossSpec::expectile(tau).unwrap();
            for x in residual_grid() {
                let fd = central_difference(|h| spec.loss(x - h), 0.0, step);
                let an = spec.grad(x);
                assert!((fd - an).abs() / an.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn expanded_gradient_is_never_steeper_on_the_right() {
        for i in 1..=500 {
            let z = i as f64 * 0.02;
            let gumbel = z.exp_m1();
            for order in [2, 4, 8, 12, 20] {
                let expanded = expanded_slope(z, order);
                // Higher orders agree with e^z - 1 to the last bit at small z.
                let ulps = 2.0 * f64::EPSILON * gumbel.abs();
                assert!(expanded.abs() <= gumbel.abs() + ulps, "z {z} order {order}");
                if order <= 4 {
                    assert!(expanded.abs() < gumbel.abs());
                }
            }
        }
        assert_eq!(expanded_slope(0.0, 8), gumbel_derivative(0.0, 1.0));
    }

    #[test]
    fn taylor_gap_within_lagrange_bound() {
        // Pointwise, with an allowance for rounding: e^z - 1 - z cancels, so
        // its absolute error scales with |e^z - 1|, not with the result.
        for order in [2, 4, 8, 12, 16] {
            for i in 0..=4000 {
                let z = -2.0 + i as f64 * 0.001;
                let gap = (expanded_value(z, order) - gumbel_value(z)).abs();
                let slack = 4.0 * f64::EPSILON * (z.exp_m1().abs() + z.abs());
                assert!(
                    gap <= taylor_remainder_bound(z, order) + slack,
                    "order {order} z {z} gap {gap:e}"
                );
            }
        }
    }

    #[test]
    fn integer_weights_match_repeated_samples() {
        let residuals = [-1.5, 0.2, 3.0];
        let weights = [2.0, 0.0, 3.0];
        let repeated = [-1.5, -1.5, 3.0, 3.0, 3.0];
        for spec in [
            LossSpec::gumbel(1.3).unwrap(),
            LossSpec::clipped_gumbel(0.5, 2.0).unwrap(),
            LossSpec::expanded_gumbel(0.7, 6).unwrap(),
            LossSpec::expectile(0.8).unwrap(),
        ] {
            let wl = spec.weighted_batch_loss(&residuals, &weights).unwrap();
            let wg = spec.weighted_batch_grad(&residuals, &weights).unwrap();
            assert!(
                (wl - spec.batch_loss(&repeated).unwrap()).abs() < 1e-12,
                "{spec}"
            );
            assert!(
                (wg - spec.batch_grad(&repeated).unwrap()).abs() < 1e-12,
                "{spec}"
            );
        }
        assert!(LossSpec::l2(1.0)
            .unwrap()
            .weighted_batch_loss(&[1.0], &[0.0])
            .is_err());
    }

    proptest! {
        #[test]
        fn even_orders_are_nonnegative(z in -50.0f64..50.0, half in 1u32..15, beta in 0.1f64..10.0) {
            let v = expanded_gumbel_loss(z * beta, beta, 2 * half).unwrap();
            prop_assert!(v >= 0.0);
        }

        #[test]
        fn order_two_is_scaled_l2(r in -1e3f64..1e3, beta in 1e-2f64..1e2) {
            let v = expanded_gumbel_loss(r, beta, 2).unwrap();
            let z = r / beta;
            let want = z * z / 2.0;
            prop_assert!((v - want).abs() <= 1e-12 * want.max(1.0));
        }

        #[test]
        fn gumbel_and_expectile_are_nonnegative(r in -700.0f64..700.0, beta in 0.5f64..5.0, tau in 0.01f64..0.99) {
            prop_assert!(gumbel_loss(r, beta).unwrap() >= 0.0);
            prop_assert!(expectile_loss(r, tau).unwrap() >= 0.0);
        }
    }
}
