//! The f-divergence family `D_f(q | p) = ∫ p f(q/p)`.
//!
//! | name    | f(u)                               | f''(u)          |
//! |---------|------------------------------------|-----------------|
//! | KL      | u log u                            | 1/u             |
//! | JS      | -(u+1) log((u+1)/2) + u log u      | 1/(u(u+1))      |
//! | logD    | (u+1) log(u+1) - 2 log 2           | 1/(u+1)         |
//! | Jeffrey | (u-1) log u                        | (u+1)/u²        |
//!
//! Evaluation is checked: `u < 0`, NaN, or a non-finite result is an
//! [`Error::OutOfDomain`]. At `u = 0` the analytic limit is used where it is
//! finite (e.g. KL's `f(0) = 0`); Jeffrey's `f(0) = +∞` is rejected.

use std::f64::consts::LN_2;
use std::fmt;
use std::sync::Arc;

use crate::density::DensityModel;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::quadrature::{trapezoid, Grid1d};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub const BUILTIN_NAMES: [&str; 4] = ["KL", "JS", "logD", "Jeffrey"];

/// A member of the f-divergence family with its first two derivatives.
#[derive(Clone)]
pub struct FDivergence {
    name: String,
    f: ScalarFn,
    f_prime: ScalarFn,
    f_second: ScalarFn,
}

impl fmt::Debug for FDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FDivergence")
            .field("name", &self.name)
            .finish()
    }
}

/// `u log u` with the continuous extension `0 log 0 = 0`.
fn xlogx(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u * u.ln()
    }
}

impl FDivergence {
    pub fn kl() -> Self {
        Self::custom("KL", xlogx, |u| u.ln() + 1.0, |u| 1.0 / u)
    }

    pub fn js() -> Self {
        Self::custom(
            "JS",
            |u| -(u + 1.0) * ((u + 1.0) / 2.0).ln() + xlogx(u),
            |u| (2.0 * u / (u + 1.0)).ln(),
            |u| 1.0 / (u * (u + 1.0)),
        )
    }

    pub fn log_d() -> Self {
        Self::custom(
            "logD",
            |u| (u + 1.0) * (u + 1.0).ln() - 2.0 * LN_2,
            |u| (u + 1.0).ln() + 1.0,
            |u| 1.0 / (u + 1.0),
        )
    }

    pub fn jeffrey() -> Self {
        Self::custom(
            "Jeffrey",
            |u| (u - 1.0) * u.ln(),
            |u| u.ln() + (u - 1.0) / u,
            |u| (u + 1.0) / (u * u),
        )
    }

    /// Registers a user-defined member. The caller is responsible for
    /// convexity and `f(1) = 0`.
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f_second: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
            f_prime: Arc::new(f_prime),
            f_second: Arc::new(f_second),
        }
    }

    /// Looks up a built-in member by name (case-insensitive).
    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "kl" => Ok(Self::kl()),
            "js" => Ok(Self::js()),
            "logd" => Ok(Self::log_d()),
            "jeffrey" => Ok(Self::jeffrey()),
            _ => Err(Error::UnknownDivergence {
                name: name.to_string(),
                valid: BUILTIN_NAMES.join(", "),
            }),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn f(&self, u: f64) -> Result<f64> {
        self.checked("f", &self.f, u)
    }

    pub fn f_prime(&self, u: f64) -> Result<f64> {
        self.checked("f'", &self.f_prime, u)
    }

    pub fn f_second(&self, u: f64) -> Result<f64> {
        self.checked("f''", &self.f_second, u)
    }

    fn checked(&self, function: &'static str, g: &ScalarFn, u: f64) -> Result<f64> {
        let out_of_domain = || Error::OutOfDomain {
            divergence: self.name.clone(),
            function,
            u,
        };
        if u.is_nan() || u < 0.0 {
            return Err(out_of_domain());
        }
        let v = g(u);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(out_of_domain())
        }
    }
}

pub fn make_divergence(name: &str) -> Result<FDivergence> {
    FDivergence::by_name(name)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// `mean_i f(r(x_i))` for `x_i ~ p`, an unbiased estimate of `D_f(q | p)`.
pub fn divergence_mc<F>(
    div: &FDivergence,
    ratio_at: F,
    samples_from_p: &ParticleEnsemble,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    divergence_mc_estimate(div, ratio_at, samples_from_p).map(|e| e.mean)
}

pub fn divergence_mc_estimate<F>(
    div: &FDivergence,
    ratio_at: F,
    samples_from_p: &ParticleEnsemble,
) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    let n = samples_from_p.len();
    if n == 0 {
        return Err(Error::TooFewPoints {
            context: "divergence_mc",
            required: 1,
            found: 0,
        });
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for (index, x) in samples_from_p.points().enumerate() {
        let r = ratio_at(x);
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::NonFiniteRatio {
                index,
                point: x.to_vec(),
                value: r,
            });
        }
        let v = div.f(r)?;
        sum += v;
        sum_sq += v * v;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 {
        ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        std_error: (var / nf).sqrt(),
    })
}

fn require_1d(q: &DensityModel, p: &DensityModel) -> Result<()> {
    for (which, d) in [("q", q), ("p", p)] {
        if d.dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: if which == "q" {
                    "1-D quadrature (q)"
                } else {
                    "1-D quadrature (p)"
                },
                expected: 1,
                found: d.dim(),
            });
        }
    }
    Ok(())
}

fn check_coverage(grid: &Grid1d, which: &'static str, d: &DensityModel) -> Result<()> {
    let xs = grid.points();
    let mass: Vec<f64> = xs.iter().map(|&x| d.log_density(&[x]).exp()).collect();
    let covered = trapezoid(&xs, &mass);
    if covered < 0.9999 {
        return Err(Error::InsufficientGridCoverage { which, covered });
    }
    Ok(())
}

/// Composite-trapezoid value of `∫ p(x) f(q(x)/p(x)) dx` on a 1-D grid.
pub fn divergence_quadrature_1d(
    div: &FDivergence,
    q: &DensityModel,
    p: &DensityModel,
    grid: &Grid1d,
) -> Result<f64> {
    require_1d(q, p)?;
    check_coverage(grid, "q", q)?;
    check_coverage(grid, "p", p)?;
    let xs = grid.points();
    let mut integrand = Vec::with_capacity(xs.len());
    for &x in &xs {
        let lp = p.log_density(&[x]);
        let lq = q.log_density(&[x]);
        if lp == f64::NEG_INFINITY {
            if lq == f64::NEG_INFINITY {
                integrand.push(0.0);
                continue;
            }
            return Err(Error::OutsideSupport {
                which: "p",
                point: vec![x],
            });
        }
        let pd = lp.exp();
        integrand.push(if pd == 0.0 {
            0.0
        } else {
            pd * div.f((lq - lp).exp())?
        });
    }
    Ok(trapezoid(&xs, &integrand))
}

/// Population objective of the logD-trick generator evaluated at the optimal
/// discriminator `D* = p / (p + q)`:  `-∫ p log D* - ∫ q log D*`.
pub fn logd_gan_objective_1d(q: &DensityModel, p: &DensityModel, grid: &Grid1d) -> Result<f64> {
    require_1d(q, p)?;
    check_coverage(grid, "q", q)?;
    check_coverage(grid, "p", p)?;
    let xs = grid.points();
    let integrand: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let lp = p.log_density(&[x]);
            let lq = q.log_density(&[x]);
            let lsum = log_add_exp(lp, lq);
            if lsum == f64::NEG_INFINITY {
                return 0.0;
            }
            // -(p + q) log D*  =  (p + q) (log(p + q) - log p)
            lsum.exp() * (lsum - lp)
        })
        .collect();
    Ok(trapezoid(&xs, &integrand))
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}
