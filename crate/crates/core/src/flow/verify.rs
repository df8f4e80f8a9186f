//! Numerical checks of the flow's defining properties on 1-D problems where
//! densities can be tracked on a grid:
//!
//! * divergence decay along the flow ([`verify_decay`], [`grid_flow_divergences`]),
//! * the continuity-equation residual of a single residual step ([`verify_vfp_residual`]),
//! * the first variation of the pushforward loss ([`directional_derivative`]).

use crate::density::DensityModel;
use crate::divergence::FDivergence;
use crate::error::{Error, Result};
use crate::quadrature::{
    central_derivative_uniform, derivative_nonuniform, fitted_slope, trapezoid, Grid1d,
};
use crate::ratio::{DEFAULT_RATIO_CEILING, DEFAULT_RATIO_FLOOR};

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub values: Vec<f64>,
    pub increments: Vec<f64>,
    /// Largest `D_{k+1} - D_k` (negative when every step decreased).
    pub max_increase: f64,
    pub strictly_decreasing: bool,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks that a divergence sequence never increases by more than `tolerance`.
pub fn verify_decay(values: &[f64], tolerance: f64) -> DecayReport {
    let increments: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let max_increase = increments.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    DecayReport {
        values: values.to_vec(),
        strictly_decreasing: !increments.is_empty() && increments.iter().all(|d| *d < 0.0),
        passed: increments.iter().all(|d| *d <= tolerance),
        max_increase: if increments.is_empty() {
            0.0
        } else {
            max_increase
        },
        increments,
        tolerance,
    }
}

/// KL along the exact flow between `N(m, σ²)` and `N(μ, σ²)`.
///
/// The field is the constant `(μ - m)/σ²`, so each residual step is a pure
/// translation and the divergence stays in closed form `(m - μ)² / (2σ²)`.
pub fn kl_translation_sequence(
    m0: f64,
    target_mean: f64,
    var: f64,
    s: f64,
    steps: usize,
) -> Vec<f64> {
    let mut m = m0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push((m - target_mean).powi(2) / (2.0 * var));
    for _ in 0..steps {
        m += s * (target_mean - m) / var;
        out.push((m - target_mean).powi(2) / (2.0 * var));
    }
    out
}

fn divergence_on_nodes(
    div: &FDivergence,
    nodes: &[f64],
    log_q: &[f64],
    p: &DensityModel,
) -> Result<f64> {
    let mut integrand = Vec::with_capacity(nodes.len());
    for (&y, &lq) in nodes.iter().zip(log_q) {
        let lp = p.log_density(&[y]);
        if lp < -700.0 && lq < -700.0 {
            integrand.push(0.0);
            continue;
        }
        integrand.push(lp.exp() * div.f((lq - lp).exp())?);
    }
    Ok(trapezoid(nodes, &integrand))
}

/// Follows the exact-ratio flow of a 1-D density for `steps` intervals of
/// length `s`, returning the divergence at the start and after every
/// interval.
///
/// The density is tracked at Lagrangian nodes that start on `nodes` and move
/// with the field, with `d/dt log q(x_t) = -h'(x_t)`. Scores and field
/// derivatives come from second-order finite differences on the moving nodes
/// and time is integrated with Heun sub-steps. The `∇log q` part of the field
/// acts like a diffusion with coefficient `f''(r) r`, so sub-steps are capped
/// at `τ <= 0.25 Δx² / max f''(r) r` to keep the explicit update stable.
pub fn grid_flow_divergences(
    div: &FDivergence,
    q0: &DensityModel,
    p: &DensityModel,
    s: f64,
    steps: usize,
    nodes: &Grid1d,
) -> Result<Vec<f64>> {
    if q0.dim() != 1 || p.dim() != 1 {
        return Err(Error::DimensionMismatch {
            context: "grid flow (1-D only)",
            expected: 1,
            found: q0.dim().max(p.dim()),
        });
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid("flow interval must be > 0"));
    }
    let mut xs = nodes.points();
    let mut log_q: Vec<f64> = xs.iter().map(|&x| q0.log_density(&[x])).collect();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(divergence_on_nodes(div, &xs, &log_q, p)?);
    for _ in 0..steps {
        let mut remaining = s;
        while remaining > 1e-15 * s {
            let first = node_rates(div, p, &xs, &log_q)?;
            let dx_min = xs
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::INFINITY, f64::min);
            let mut tau = remaining;
            if first.diffusivity > 0.0 {
                tau = tau.min(0.25 * dx_min * dx_min / first.diffusivity);
            }
            if first.max_abs_dh > 0.0 {
                tau = tau.min(0.25 / first.max_abs_dh);
            }
            if tau >= remaining * (1.0 - 1e-12) {
                tau = remaining;
            }
            let xs_mid: Vec<f64> = xs.iter().zip(&first.h).map(|(x, h)| x + tau * h).collect();
            let lq_mid: Vec<f64> = log_q
                .iter()
                .zip(&first.dh)
                .map(|(l, d)| l - tau * d)
                .collect();
            let second = node_rates(div, p, &xs_mid, &lq_mid)?;
            for i in 0..xs.len() {
                xs[i] += 0.5 * tau * (first.h[i] + second.h[i]);
                log_q[i] -= 0.5 * tau * (first.dh[i] + second.dh[i]);
            }
            if let Some(index) = xs.windows(2).position(|w| w[1] <= w[0]) {
                return Err(Error::NonInvertibleMap {
                    index,
                    x: xs[index],
                    jacobian: xs[index + 1] - xs[index],
                });
            }
            remaining -= tau;
        }
        out.push(divergence_on_nodes(div, &xs, &log_q, p)?);
    }
    Ok(out)
}

struct NodeRates {
    h: Vec<f64>,
    dh: Vec<f64>,
    diffusivity: f64,
    max_abs_dh: f64,
}

fn node_rates(div: &FDivergence, p: &DensityModel, xs: &[f64], log_q: &[f64]) -> Result<NodeRates> {
    let dlog_q = derivative_nonuniform(xs, log_q);
    let mut diffusivity: f64 = 0.0;
    let mut h = Vec::with_capacity(xs.len());
    for ((&x, &lq), &dq) in xs.iter().zip(log_q).zip(&dlog_q) {
        let lp = p.log_density(&[x]);
        let r = (lq - lp)
            .exp()
            .clamp(DEFAULT_RATIO_FLOOR, DEFAULT_RATIO_CEILING);
        let c = div.f_second(r)? * r;
        diffusivity = diffusivity.max(c);
        h.push(-c * (dq - p.score(&[x])[0]));
    }
    let dh = derivative_nonuniform(xs, &h);
    let max_abs_dh = dh.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(NodeRates {
        h,
        dh,
        diffusivity,
        max_abs_dh,
    })
}

/// KL along the continuous flow between `N(m0, σ²)` and `N(μ, σ²)`: the
/// particle law stays Gaussian with mean `μ + (m0 - μ) e^{-t/σ²}`.
pub fn kl_continuous_sequence(
    m0: f64,
    target_mean: f64,
    var: f64,
    s: f64,
    steps: usize,
) -> Vec<f64> {
    (0..=steps)
        .map(|k| {
            let m = target_mean + (m0 - target_mean) * (-(k as f64) * s / var).exp();
            (m - target_mean).powi(2) / (2.0 * var)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VfpReport {
    /// `(s, E(s))` pairs.
    pub errors: Vec<(f64, f64)>,
    /// Least-squares slope of `log E` against `log s`; NaN when every `E` is 0.
    pub slope: f64,
}

/// Exact field `v(x) = -f''(r) r (score_q - score_p)` for analytic densities.
fn exact_velocity(div: &FDivergence, q: &DensityModel, p: &DensityModel, x: f64) -> Result<f64> {
    let lr = q.log_density(&[x]) - p.log_density(&[x]);
    let glr = q.score(&[x])[0] - p.score(&[x])[0];
    let r = lr.exp();
    Ok(-div.f_second(r)? * r * glr)
}

fn exact_velocity_derivative(
    div: &FDivergence,
    q: &DensityModel,
    p: &DensityModel,
    x: f64,
) -> Result<f64> {
    let h = 1e-5 * (1.0 + x.abs());
    Ok((exact_velocity(div, q, p, x + h)? - exact_velocity(div, q, p, x - h)?) / (2.0 * h))
}

/// Compares the density pushed through `id + s v` with the first-order
/// continuity-equation prediction `q0 - s ∂x(q0 v)` on a uniform grid, for
/// each step size. The maximum gap `E(s)` should shrink like `s²`.
pub fn verify_vfp_residual(
    q0: &DensityModel,
    p: &DensityModel,
    div: &FDivergence,
    s_values: &[f64],
    grid: &Grid1d,
) -> Result<VfpReport> {
    if q0.dim() != 1 || p.dim() != 1 {
        return Err(Error::DimensionMismatch {
            context: "continuity residual (1-D only)",
            expected: 1,
            found: q0.dim().max(p.dim()),
        });
    }
    let xs = grid.points();
    let v: Vec<f64> = xs
        .iter()
        .map(|&x| exact_velocity(div, q0, p, x))
        .collect::<Result<_>>()?;
    let flux: Vec<f64> = xs
        .iter()
        .zip(&v)
        .map(|(&x, vi)| q0.density(&[x]) * vi)
        .collect();
    let dflux = central_derivative_uniform(&flux, grid.spacing());

    let mut errors = Vec::with_capacity(s_values.len());
    for &s in s_values {
        for (index, &x) in xs.iter().enumerate() {
            let jac = 1.0 + s * exact_velocity_derivative(div, q0, p, x)?;
            if jac <= 0.0 {
                return Err(Error::NonInvertibleMap {
                    index,
                    x,
                    jacobian: jac,
                });
            }
        }
        let mut max_err: f64 = 0.0;
        for (i, &y) in xs.iter().enumerate() {
            let Some(df) = dflux[i] else { continue };
            // Newton solve of x + s v(x) = y.
            let mut x = y;
            for _ in 0..50 {
                let g = x + s * exact_velocity(div, q0, p, x)? - y;
                let dg = 1.0 + s * exact_velocity_derivative(div, q0, p, x)?;
                let step = g / dg;
                x -= step;
                if step.abs() < 1e-15 * (1.0 + x.abs()) {
                    break;
                }
            }
            let jac = 1.0 + s * exact_velocity_derivative(div, q0, p, x)?;
            if jac <= 0.0 {
                return Err(Error::NonInvertibleMap {
                    index: i,
                    x,
                    jacobian: jac,
                });
            }
            let pushed = q0.density(&[x]) / jac;
            let predicted = q0.density(&[y]) - s * df;
            max_err = max_err.max((pushed - predicted).abs());
        }
        errors.push((s, max_err));
    }
    let slope = if errors.iter().all(|(_, e)| *e > 0.0) && errors.len() >= 2 {
        let lx: Vec<f64> = errors.iter().map(|(s, _)| s.ln()).collect();
        let ly: Vec<f64> = errors.iter().map(|(_, e)| e.ln()).collect();
        fitted_slope(&lx, &ly)
    } else {
        f64::NAN
    };
    Ok(VfpReport { errors, slope })
}

/// Smooth compactly supported perturbation
/// `g(x) = A exp(1 - 1/(1 - t²))`, `t = (x - c)/w`, zero for `|t| >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

impl Bump {
    pub fn value(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.width;
        if t.abs() >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 - 1.0 / (1.0 - t * t)).exp()
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.width;
        if t.abs() >= 1.0 {
            0.0
        } else {
            let u = 1.0 - t * t;
            self.value(x) * (-2.0 * t / (u * u)) / self.width
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalDerivative {
    /// `∫ q f''(r) ∇r g` by quadrature.
    pub inner_product: f64,
    /// Central difference of `s -> D_f((id + s g)_# q | p)` at 0.
    pub finite_difference: f64,
}

impl DirectionalDerivative {
    pub fn relative_error(&self) -> f64 {
        (self.inner_product - self.finite_difference).abs() / self.finite_difference.abs()
    }
}

/// Divergence of the pushforward `(id + s g)_# q` from `p`, integrated in
/// the pre-image variable: `∫ p(T x) f(q(x) / (J(x) p(T x))) J(x) dx` with
/// `T x = x + s g(x)`, `J = 1 + s g'`.
pub fn pushforward_divergence(
    div: &FDivergence,
    q: &DensityModel,
    p: &DensityModel,
    g: &Bump,
    s: f64,
    grid: &Grid1d,
) -> Result<f64> {
    let xs = grid.points();
    let mut integrand = Vec::with_capacity(xs.len());
    for (index, &x) in xs.iter().enumerate() {
        let jac = 1.0 + s * g.derivative(x);
        if jac <= 0.0 {
            return Err(Error::NonInvertibleMap {
                index,
                x,
                jacobian: jac,
            });
        }
        let y = x + s * g.value(x);
        let lp = p.log_density(&[y]);
        let lq = q.log_density(&[x]) - jac.ln();
        integrand.push(lp.exp() * div.f((lq - lp).exp())? * jac);
    }
    Ok(trapezoid(&xs, &integrand))
}

pub fn directional_derivative(
    div: &FDivergence,
    q: &DensityModel,
    p: &DensityModel,
    g: &Bump,
    grid: &Grid1d,
    fd_step: f64,
) -> Result<DirectionalDerivative> {
    let xs = grid.points();
    let mut integrand = Vec::with_capacity(xs.len());
    for &x in &xs {
        let gx = g.value(x);
        if gx == 0.0 {
            integrand.push(0.0);
            continue;
        }
        let r = (q.log_density(&[x]) - p.log_density(&[x])).exp();
        let grad_r = r * (q.score(&[x])[0] - p.score(&[x])[0]);
        integrand.push(q.density(&[x]) * div.f_second(r)? * grad_r * gx);
    }
    let inner_product = trapezoid(&xs, &integrand);
    let plus = pushforward_divergence(div, q, p, g, fd_step, grid)?;
    let minus = pushforward_divergence(div, q, p, g, -fd_step, grid)?;
    Ok(DirectionalDerivative {
        inner_product,
        finite_difference: (plus - minus) / (2.0 * fd_step),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(m: f64, v: f64) -> DensityModel {
        DensityModel::gaussian(vec![m], vec![v]).unwrap()
    }

    #[test]
    fn decay_report_flags_increase() {
        let r = verify_decay(&[1.0, 0.5, 0.6], 1e-6);
        assert!(!r.passed);
        assert!((r.max_increase - 0.1).abs() < 1e-12);
        let ok = verify_decay(&[1.0, 0.5, 0.25], 1e-6);
        assert!(ok.passed && ok.strictly_decreasing);
    }

    #[test]
    fn kl_translation_decreases() {
        let seq = kl_translation_sequence(0.0, 1.0, 1.0, 0.05, 20);
        let r = verify_decay(&seq, 1e-6);
        assert!(r.strictly_decreasing && r.max_increase < 1e-6);
        let same = kl_translation_sequence(1.0, 1.0, 1.0, 0.05, 20);
        assert!(verify_decay(&same, 1e-9)
            .increments
            .iter()
            .all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn grid_tracker_reproduces_kl_translation() {
        let nodes = Grid1d::new(-10.0, 10.0, 801).unwrap();
        let tracked = grid_flow_divergences(
            &FDivergence::kl(),
            &gauss(0.0, 1.0),
            &gauss(1.0, 1.0),
            0.05,
            20,
            &nodes,
        )
        .unwrap();
        let closed = kl_continuous_sequence(0.0, 1.0, 1.0, 0.05, 20);
        for (a, b) in tracked.iter().zip(&closed) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn grid_tracker_at_target_stays_put() {
        let nodes = Grid1d::new(-10.0, 10.0, 401).unwrap();
        for div in [FDivergence::js(), FDivergence::jeffrey()] {
            let seq =
                grid_flow_divergences(&div, &gauss(0.5, 2.0), &gauss(0.5, 2.0), 0.05, 5, &nodes)
                    .unwrap();
            assert!(seq.iter().all(|v| v.abs() < 1e-9), "{seq:?}");
        }
    }

    #[test]
    fn vfp_residual_vanishes_at_target() {
        let g = gauss(0.0, 1.0);
        let r = verify_vfp_residual(
            &g,
            &g,
            &FDivergence::js(),
            &[1e-2],
            &Grid1d::new(-6.0, 6.0, 1201).unwrap(),
        )
        .unwrap();
        assert_eq!(r.errors[0].1, 0.0);
    }

    #[test]
    fn vfp_rejects_fold_over() {
        // KL field -0.75x contracts; s = 5 folds the map over.
        let err = verify_vfp_residual(
            &gauss(0.0, 4.0),
            &gauss(0.0, 1.0),
            &FDivergence::kl(),
            &[5.0],
            &Grid1d::new(-12.0, 12.0, 241).unwrap(),
        );
        assert!(
            matches!(err, Err(Error::NonInvertibleMap { .. })),
            "{err:?}"
        );
    }

    #[test]
    fn bump_derivative_matches_finite_difference() {
        let b = Bump {
            center: 0.3,
            width: 1.2,
            amplitude: 0.8,
        };
        for i in 0..50 {
            let x = -0.8 + 2.2 * i as f64 / 49.0;
            let h = 1e-6;
            let fd = (b.value(x + h) - b.value(x - h)) / (2.0 * h);
            assert!((fd - b.derivative(x)).abs() < 1e-6);
        }
        assert_eq!(b.value(5.0), 0.0);
    }
}
