//! Reduction to the slow manifold.
//!
//! In the eigen-frame `X = (x, y) = P⁻¹(ν − ν_eq)` the drift becomes
//! `H(X) = P⁻¹ F(ν_eq + P X) = (f, g)`. The slow manifold is approximated by
//! the fast nullcline `f(x*(y), y) = 0`; on it the slow coordinate obeys
//! `dy = g(x*(y), y) dt + β_y dW`.
//!
//! The potential stored here is `G(y) = −∫₀^y g(x*(z), z) dz`, so that the
//! Gibbs density `exp(−2G/β_y²)` is stationary for the reduced equation, the
//! decision states are wells and the spontaneous state is the barrier top.

use std::io::{self, Write};

use nalgebra::{Matrix2, Vector2};

use crate::dynsys::SpectralDecomposition;
use crate::error::{Error, Result};
use crate::model::{ModelParams, PlanarField, RateModel, RateVector};

pub const MANIFOLD_RESIDUAL: f64 = 1e-10;
pub const DEFAULT_Y_MAX: f64 = 6.0;
pub const DEFAULT_NY: usize = 401;

/// The drift written in eigen-coordinates.
#[derive(Debug, Clone, Copy)]
pub struct ReducedSystem {
    pub sd: SpectralDecomposition,
    pub model: RateModel,
}

pub fn build_reduced_system(sd: &SpectralDecomposition, params: &ModelParams) -> Result<ReducedSystem> {
    Ok(ReducedSystem {
        sd: *sd,
        model: RateModel::new(*params)?,
    })
}

impl ReducedSystem {
    /// `H(x, y) = (f, g)`.
    pub fn h(&self, x: f64, y: f64) -> Vector2<f64> {
        self.sd.p_inv * self.model.flux(&self.sd.from_xy(x, y))
    }

    pub fn f(&self, x: f64, y: f64) -> f64 {
        self.h(x, y)[0]
    }

    pub fn g(&self, x: f64, y: f64) -> f64 {
        self.h(x, y)[1]
    }

    /// `J_H = P⁻¹ J_F(ν_eq + P X) P`.
    pub fn jacobian(&self, x: f64, y: f64) -> Matrix2<f64> {
        self.sd.p_inv * self.model.jacobian(&self.sd.from_xy(x, y)) * self.sd.p
    }

    /// Solves `f(x, y) = 0` for `x` by Newton from `guess`, falling back to
    /// bisection on `[guess − 2, guess + 2]`.
    pub fn solve_fast_nullcline(&self, y: f64, guess: f64) -> Result<f64> {
        let mut x = guess;
        for _ in 0..50 {
            let fx = self.f(x, y);
            if fx.abs() <= 1e-14 {
                return Ok(x);
            }
            let d = self.jacobian(x, y)[(0, 0)];
            if d == 0.0 || !d.is_finite() {
                break;
            }
            let step = fx / d;
            x -= step;
            if !x.is_finite() || (x - guess).abs() > 2.0 {
                break;
            }
            if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        if x.is_finite() && self.f(x, y).abs() <= MANIFOLD_RESIDUAL && (x - guess).abs() <= 2.0 {
            return Ok(x);
        }
        self.bisect_fast_nullcline(y, guess - 2.0, guess + 2.0)
    }

    fn bisect_fast_nullcline(&self, y: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
        let mut flo = self.f(lo, y);
        let fhi = self.f(hi, y);
        if flo * fhi > 0.0 {
            return Err(Error::ManifoldSolve { y });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = self.f(mid, y);
            if fm == 0.0 || hi - lo <= 1e-15 * (1.0 + mid.abs()) {
                lo = mid;
                hi = mid;
                break;
            }
            if (fm < 0.0) == (flo < 0.0) {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        let x = 0.5 * (lo + hi);
        if self.f(x, y).abs() <= MANIFOLD_RESIDUAL {
            Ok(x)
        } else {
            Err(Error::ManifoldSolve { y })
        }
    }
}

/// The sampled approximate slow manifold with its reduced drift, potential
/// and noise amplitude.
#[derive(Debug, Clone)]
pub struct SlowManifold {
    pub sd: SpectralDecomposition,
    pub y: Vec<f64>,
    pub x_star: Vec<f64>,
    /// `g(x*(y), y)`.
    pub g: Vec<f64>,
    /// `G(y) = −∫₀^y g`, zero at `y = 0`.
    pub potential: Vec<f64>,
    /// `V(y) = ‖P (x*′(y), 1)ᵀ‖`, diagnostics only.
    pub speed: Vec<f64>,
    pub beta_y: f64,
}

/// Uniform grid of `n` nodes on `[−y_max, y_max]`.
pub fn uniform_grid(y_max: f64, n: usize) -> Vec<f64> {
    // integer offsets keep the grid exactly antisymmetric
    let m = (n - 1) as f64;
    (0..n).map(|i| (2.0 * i as f64 - m) * y_max / m).collect()
}

pub fn solve_manifold(rs: &ReducedSystem, y_max: f64, n_y: usize, beta: f64) -> Result<SlowManifold> {
    if !(y_max > 0.0) || n_y < 3 {
        return Err(Error::InvalidParams(format!(
            "manifold grid needs y_max > 0 and at least 3 nodes (got {y_max}, {n_y})"
        )));
    }
    let y = uniform_grid(y_max, n_y);
    let mut x_star = vec![0.0; n_y];
    // first node at or above the origin
    let split = y.partition_point(|&v| v < 0.0);

    // continuation outward from the origin, where x* = 0
    let mut prev = 0.0;
    for i in split..n_y {
        prev = rs.solve_fast_nullcline(y[i], prev)?;
        x_star[i] = prev;
    }
    prev = 0.0;
    for i in (0..split).rev() {
        prev = rs.solve_fast_nullcline(y[i], prev)?;
        x_star[i] = prev;
    }
    if split < n_y && y[split] == 0.0 {
        x_star[split] = 0.0;
    }

    let g: Vec<f64> = y.iter().zip(&x_star).map(|(&yy, &xx)| rs.g(xx, yy)).collect();
    let speed = y
        .iter()
        .zip(&x_star)
        .map(|(&yy, &xx)| {
            let jh = rs.jacobian(xx, yy);
            let slope = -jh[(0, 1)] / jh[(0, 0)];
            (rs.sd.p * Vector2::new(slope, 1.0)).norm()
        })
        .collect();
    let potential = potential(&y, &g);
    Ok(SlowManifold {
        sd: rs.sd,
        beta_y: reduced_noise(&rs.sd, beta),
        y,
        x_star,
        g,
        potential,
        speed,
    })
}

/// `G(y) = −∫₀^y g` by cumulative trapezoid, anchored at `y = 0` where
/// `g` vanishes. Adjacent nodes differ by exactly `−h (g_i + g_{i+1})/2`.
pub fn potential(y: &[f64], g: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), g.len());
    let n = y.len();
    let mut out = vec![0.0; n];
    let split = y.partition_point(|&v| v < 0.0);
    if split < n {
        // anchor: trapezoid on [0, y_split] using g(0) = 0
        out[split] = if y[split] == 0.0 {
            0.0
        } else {
            -0.5 * g[split] * y[split]
        };
        for i in split + 1..n {
            out[i] = out[i - 1] - 0.5 * (g[i - 1] + g[i]) * (y[i] - y[i - 1]);
        }
    }
    if split > 0 {
        let top = split - 1;
        out[top] = if split < n {
            out[split] + 0.5 * (g[top] + g[split]) * (y[split] - y[top])
        } else {
            -0.5 * g[top] * y[top]
        };
        for i in (0..top).rev() {
            out[i] = out[i + 1] + 0.5 * (g[i] + g[i + 1]) * (y[i + 1] - y[i]);
        }
    }
    out
}

/// `β_y = β √((P⁻¹)₂₁² + (P⁻¹)₂₂²)`.
pub fn reduced_noise(sd: &SpectralDecomposition, beta: f64) -> f64 {
    beta * sd.p_inv[(1, 0)].hypot(sd.p_inv[(1, 1)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalKind {
    /// Potential minimum: a decision state.
    Well,
    /// Potential maximum: the spontaneous state (before the bifurcation
    /// there is no barrier and the origin is a well).
    Barrier,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub y: f64,
    pub potential: f64,
    pub kind: CriticalKind,
}

impl SlowManifold {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.y[1] - self.y[0]
    }

    pub fn y_max(&self) -> f64 {
        self.y[self.y.len() - 1]
    }

    /// Index of the node at `y = 0`, when the grid has one.
    pub fn origin_index(&self) -> Option<usize> {
        self.y.iter().position(|&v| v == 0.0)
    }

    /// Point of the plane carried by node `i`: `ν_eq + P (x*(y_i), y_i)`.
    pub fn nu_at(&self, i: usize) -> RateVector {
        self.sd.from_xy(self.x_star[i], self.y[i])
    }

    /// Reduced drift at arbitrary `y` by linear interpolation.
    pub fn drift_at(&self, y: f64) -> f64 {
        interp(&self.y, &self.g, y)
    }

    pub fn x_star_at(&self, y: f64) -> f64 {
        interp(&self.y, &self.x_star, y)
    }

    /// Zeros of the reduced drift, with the potential there.
    pub fn critical_points(&self) -> Vec<CriticalPoint> {
        let mut out = Vec::new();
        let n = self.y.len();
        for i in 0..n - 1 {
            let (g0, g1) = (self.g[i], self.g[i + 1]);
            let crossing = if g0 == 0.0 && i > 0 {
                let gm = self.g[i - 1];
                (gm * g1 < 0.0).then_some(self.y[i])
            } else if g0 * g1 < 0.0 {
                Some(self.y[i] + (self.y[i + 1] - self.y[i]) * g0 / (g0 - g1))
            } else {
                None
            };
            if let Some(yc) = crossing {
                // potential of the linear interpolant of g, exact for piecewise-linear drift
                let pot = self.potential[i] - 0.5 * (yc - self.y[i]) * g0;
                let kind = if g0 > 0.0 || (g0 == 0.0 && g1 < 0.0) {
                    CriticalKind::Well
                } else {
                    CriticalKind::Barrier
                };
                out.push(CriticalPoint {
                    y: yc,
                    potential: pot,
                    kind,
                });
            }
        }
        out
    }

    /// CSV: header comment with Δλ, w₊, β_y, then `y,x_star,g,G,minus_G,V`.
    pub fn write_csv<W: Write>(&self, mut out: W, params: &ModelParams) -> io::Result<()> {
        writeln!(
            out,
            "# delta_lambda={} w_plus={} beta_y={}",
            params.delta_lambda, params.w_plus, self.beta_y
        )?;
        writeln!(out, "y,x_star,g,G,minus_G,V")?;
        for i in 0..self.y.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.y[i], self.x_star[i], self.g[i], self.potential[i], -self.potential[i], self.speed[i]
            )?;
        }
        Ok(())
    }
}

/// Piecewise-linear interpolation on increasing nodes, clamped at the ends.
pub fn interp(xs: &[f64], vs: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return vs[0];
    }
    if x >= xs[n - 1] {
        return vs[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x).clamp(1, n - 1);
    let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    vs[k - 1] + t * (vs[k] - vs[k - 1])
}

/// Full pipeline from parameters: spectral frame, reduced system, manifold.
pub fn reduce(params: &ModelParams, y_max: f64, n_y: usize) -> Result<SlowManifold> {
    let sd = crate::dynsys::spectral(params)?;
    let rs = build_reduced_system(&sd, params)?;
    solve_manifold(&rs, y_max, n_y, params.beta)
}
