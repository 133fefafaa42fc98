//! Escape-time and decision-performance analytics.

use std::io::{self, Write};

use crate::dynsys::SpectralDecomposition;
use crate::error::{Error, Result};
use crate::fp1d::{self, Density1D};
use crate::fp2d::{self, Density2D, Grid2D};
use crate::histogram::{Axis, Bins, Histogram};
use crate::model::{ModelParams, RateVector};
use crate::reduction::{CriticalKind, SlowManifold};

/// Barrier of the double-well potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialGap {
    /// Potential at the spontaneous state.
    pub g_max: f64,
    /// Lower of the two well minima.
    pub g_min: f64,
    pub h_g: f64,
    /// Barrier seen from the `y < 0` and `y > 0` wells.
    pub well_gaps: [f64; 2],
    pub y_wells: [f64; 2],
    pub y_barrier: f64,
}

pub fn kramers_gap(manifold: &SlowManifold) -> Result<PotentialGap> {
    let cps = manifold.critical_points();
    let pattern = [CriticalKind::Well, CriticalKind::Barrier, CriticalKind::Well];
    if cps.len() != 3 || cps.iter().zip(pattern).any(|(c, k)| c.kind != k) {
        return Err(Error::PreBifurcation { zeros: cps.len() });
    }
    let g_max = cps[1].potential;
    let g_min = cps[0].potential.min(cps[2].potential);
    Ok(PotentialGap {
        g_max,
        g_min,
        h_g: g_max - g_min,
        well_gaps: [g_max - cps[0].potential, g_max - cps[2].potential],
        y_wells: [cps[0].y, cps[2].y],
        y_barrier: cps[1].y,
    })
}

/// `exp(H_G / β²)` for each β; only ratios are meaningful.
pub fn kramers_expectation(gap: &PotentialGap, betas: &[f64]) -> Vec<f64> {
    betas.iter().map(|b| (gap.h_g / (b * b)).exp()).collect()
}

/// Least-squares line through `(1/β², ln E(T))`: returns `(slope, intercept)`.
pub fn arrhenius_fit(betas: &[f64], mean_times: &[f64]) -> Result<(f64, f64)> {
    if betas.len() != mean_times.len() || betas.len() < 2 {
        return Err(Error::RegressionDegenerate("need at least two (β, E(T)) pairs".into()));
    }
    if mean_times.iter().any(|t| !(*t > 0.0)) || betas.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::RegressionDegenerate("β and E(T) must be positive".into()));
    }
    let xs: Vec<f64> = betas.iter().map(|b| 1.0 / (b * b)).collect();
    let ys: Vec<f64> = mean_times.iter().map(|t| t.ln()).collect();
    linear_fit(&xs, &ys)
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::RegressionDegenerate("abscissae are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Mass of `q` on `Ω₊ = [0, y_m]`.
pub fn rho_plus(q: &Density1D) -> f64 {
    q.mass_between(0.0, f64::INFINITY).clamp(0.0, 1.0)
}

/// `ρ(t) = ρ_∞ − a e^{−t/τ_r}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFit {
    pub rho_infinity: f64,
    pub a: f64,
    pub tau_r: f64,
}

impl ExpFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.rho_infinity - self.a * (-t / self.tau_r).exp()
    }
}

fn differences(times: &[f64], values: &[f64]) -> Result<(f64, Vec<f64>)> {
    if times.len() != values.len() || times.len() < 3 {
        return Err(Error::RegressionDegenerate("need at least three samples".into()));
    }
    let spacing = times[1] - times[0];
    if !(spacing > 0.0)
        || times
            .windows(2)
            .any(|w| ((w[1] - w[0]) - spacing).abs() > 1e-9 * spacing.max(1.0))
    {
        return Err(Error::RegressionDegenerate(
            "samples must be uniformly spaced in time".into(),
        ));
    }
    let d: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let positive = d[0] > 0.0;
    if d.iter().any(|&v| v == 0.0 || (v > 0.0) != positive || !v.is_finite()) {
        return Err(Error::RegressionDegenerate(
            "successive differences must be nonzero and of one sign".into(),
        ));
    }
    Ok((spacing, d))
}

fn finish_fit(times: &[f64], values: &[f64], spacing: f64, d0: f64, inv_tau: f64) -> Result<ExpFit> {
    if !(inv_tau > 0.0) || !inv_tau.is_finite() {
        return Err(Error::RegressionDegenerate(format!(
            "differences do not decay (1/τ_r = {inv_tau:e})"
        )));
    }
    let tau_r = 1.0 / inv_tau;
    let damp = -(-spacing * inv_tau).exp_m1();
    let a = d0 * (times[0] * inv_tau).exp() / damp;
    let rho_infinity = values[0] + d0 / damp;
    Ok(ExpFit { rho_infinity, a, tau_r })
}

/// Two-index estimator: `τ_r` from `Δρ_i` and `Δρ_j`, then `a` and `ρ_∞`
/// from the first difference.
pub fn exp_regression_pair(times: &[f64], values: &[f64], i: usize, j: usize) -> Result<ExpFit> {
    let (spacing, d) = differences(times, values)?;
    if i == j || i >= d.len() || j >= d.len() {
        return Err(Error::RegressionDegenerate(format!(
            "bad difference indices ({i}, {j})"
        )));
    }
    let inv_tau = -(d[i].abs().ln() - d[j].abs().ln()) / (times[i] - times[j]);
    finish_fit(times, values, spacing, d[0], inv_tau)
}

/// Least-squares estimator: `1/τ_r` from the slope of `ln|Δρ_i|` against
/// `t_i`, then `(ρ_∞, a)` by linear least squares on the samples.
pub fn exp_regression(times: &[f64], values: &[f64]) -> Result<ExpFit> {
    let (spacing, d) = differences(times, values)?;
    let logs: Vec<f64> = d.iter().map(|v| v.abs().ln()).collect();
    let (slope, _) = linear_fit(&times[..d.len()], &logs)?;
    let inv_tau = -slope;
    // rejects non-decaying differences
    let pair = finish_fit(times, values, spacing, d[0], inv_tau)?;
    let basis: Vec<f64> = times.iter().map(|t| (-t * inv_tau).exp()).collect();
    let (s, c) = linear_fit(&basis, values)?;
    Ok(ExpFit {
        rho_infinity: c,
        a: -s,
        tau_r: pair.tau_r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceEstimate {
    pub delta_lambda: f64,
    pub rho_plus: f64,
    pub rho_infinity: f64,
    pub a: f64,
    pub tau_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EscapeOutcome {
    Escaped { time: f64 },
    Censored { t_end: f64 },
}

impl EscapeOutcome {
    pub fn time(&self) -> Option<f64> {
        match self {
            EscapeOutcome::Escaped { time } => Some(*time),
            EscapeOutcome::Censored { .. } => None,
        }
    }
}

/// Ball masses around the two decision states at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellMasses {
    pub time: f64,
    pub origin: f64,
    pub target: f64,
}

pub fn well_masses(p: &Density2D, origin: &RateVector, target: &RateVector, radius: f64) -> WellMasses {
    WellMasses {
        time: p.time,
        origin: p.mass_in_ball(origin, radius),
        target: p.mass_in_ball(target, radius),
    }
}

/// First time the target ball holds half as much mass as the origin ball,
/// linearly interpolated between samples.
pub fn escape_time_from_series(series: &[WellMasses]) -> EscapeOutcome {
    let score = |w: &WellMasses| w.target - 0.5 * w.origin;
    let mut prev: Option<&WellMasses> = None;
    for w in series {
        let s = score(w);
        if s >= 0.0 {
            let time = match prev {
                Some(p) => {
                    let sp = score(p);
                    p.time + (w.time - p.time) * (-sp) / (s - sp)
                }
                None => w.time,
            };
            return EscapeOutcome::Escaped { time };
        }
        prev = Some(w);
    }
    EscapeOutcome::Censored {
        t_end: series.last().map_or(0.0, |w| w.time),
    }
}

pub fn escape_time_2d(snapshots: &[Density2D], origin: &RateVector, target: &RateVector, radius: f64) -> EscapeOutcome {
    let series: Vec<WellMasses> = snapshots
        .iter()
        .map(|p| well_masses(p, origin, target, radius))
        .collect();
    escape_time_from_series(&series)
}

/// Same-time 2D and reduced densities compared on the ν₁ axis and on y.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub nu1_2d: Histogram,
    pub nu1_1d: Histogram,
    pub y_2d: Histogram,
    pub y_1d: Histogram,
    pub l1_nu1: f64,
    pub l1_y: f64,
}

pub fn cross_validate(
    p: &Density2D,
    q: &Density1D,
    manifold: &SlowManifold,
    nu_bins: &Bins,
    y_bins: &Bins,
) -> Result<CrossValidation> {
    let nu1_2d = fp2d::marginal2d_binned(p, Axis::Nu1, nu_bins)?;
    let nu1_1d = fp1d::marginal_nu(q, manifold, Axis::Nu1, nu_bins)?;
    let y_2d = fp2d::project_onto_y(p, &manifold.sd, y_bins)?;
    let y_1d = q.bin_masses(y_bins)?;
    Ok(CrossValidation {
        l1_nu1: nu1_2d.l1_distance(&nu1_1d),
        l1_y: y_2d.l1_distance(&y_1d),
        nu1_2d,
        nu1_1d,
        y_2d,
        y_1d,
    })
}

/// Bins spanning the slow coordinate over the whole box.
pub fn box_y_bins(sd: &SpectralDecomposition, nu_max: f64, n: usize) -> Bins {
    let (lo, hi) = fp2d::y_range_of_box(sd, nu_max);
    let pad = 1e-9 * (hi - lo);
    Bins::uniform(lo - pad, hi + pad, n)
}

/// Settings of a 2D run sampled for `ρ_p(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoRun {
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub sample_every: f64,
    /// Samples before this time are left out of the regression.
    pub fit_from: f64,
    pub blob_width: f64,
}

/// `(t, ρ_p)` samples of one run.
pub type RhoSeries = Vec<(f64, f64)>;

/// Starts a blob at the spontaneous state, samples `ρ_p(t)`, fits the
/// exponential law on the late window.
pub fn rho_p_run(
    params: &ModelParams,
    sd: &SpectralDecomposition,
    run: &RhoRun,
) -> Result<(RhoSeries, Result<ExpFit>)> {
    let grid = Grid2D::new(run.n, params.nu_max)?;
    let p0 = Density2D::gaussian(grid, sd.nu_eq, run.blob_width)?;
    let mut series = Vec::new();
    fp2d::evolve2d_with(&p0, params, run.dt, run.t_end, run.sample_every, |p| {
        series.push((p.time, fp2d::rho_p(p, sd)))
    })?;
    let window: Vec<&(f64, f64)> = series.iter().filter(|(t, _)| *t >= run.fit_from - 1e-9).collect();
    let times: Vec<f64> = window.iter().map(|(t, _)| *t).collect();
    let values: Vec<f64> = window.iter().map(|(_, v)| *v).collect();
    let fit = exp_regression(&times, &values);
    Ok((series, fit))
}

/// Settings of a 2D half-mass escape run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfMassRun {
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub sample_every: f64,
    pub radius: f64,
    pub blob_width: f64,
}

/// Starts a blob at `origin` and tracks ball masses until the half-mass
/// criterion is met or `t_end` passes.
pub fn half_mass_escape(
    params: &ModelParams,
    origin: &RateVector,
    target: &RateVector,
    run: &HalfMassRun,
) -> Result<(Vec<WellMasses>, EscapeOutcome)> {
    let grid = Grid2D::new(run.n, params.nu_max)?;
    let p0 = Density2D::gaussian(grid, *origin, run.blob_width)?;
    let mut series = Vec::new();
    fp2d::evolve2d_with(&p0, params, run.dt, run.t_end, run.sample_every, |p| {
        series.push(well_masses(p, origin, target, run.radius))
    })?;
    let outcome = escape_time_from_series(&series);
    Ok((series, outcome))
}

pub fn write_gap_csv<W: Write>(rows: &[(f64, PotentialGap)], mut out: W) -> io::Result<()> {
    writeln!(out, "delta_lambda,G_max,G_min,H_G,gap_lower_well,gap_upper_well")?;
    for (dl, g) in rows {
        writeln!(
            out,
            "{dl},{},{},{},{},{}",
            g.g_max, g.g_min, g.h_g, g.well_gaps[0], g.well_gaps[1]
        )?;
    }
    Ok(())
}

pub fn write_performance_csv<W: Write>(rows: &[PerformanceEstimate], mut out: W) -> io::Result<()> {
    writeln!(out, "delta_lambda,rho_plus,rho_infinity,a,tau_r")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.delta_lambda, r.rho_plus, r.rho_infinity, r.a, r.tau_r
        )?;
    }
    Ok(())
}

/// One row of the escape table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeRow {
    pub beta: f64,
    pub mean_t: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn write_escape_csv<W: Write>(rows: &[EscapeRow], kramers_slope: f64, mut out: W) -> io::Result<()> {
    writeln!(out, "beta,mean_T,ci_low,ci_high,kramers_prediction_slope")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{kramers_slope}",
            r.beta, r.mean_t, r.ci_low, r.ci_high
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fp1d::stationary;
    use crate::model::ModelParams;
    use crate::reduction::reduce;

    fn synthetic(rho: f64, a: f64, tau: f64, t0: f64, dt: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..n).map(|i| t0 + dt * i as f64).collect();
        let v = t.iter().map(|t| rho - a * (-t / tau).exp()).collect();
        (t, v)
    }

    #[test]
    fn regression_recovers_printed_example() {
        let (t, v) = synthetic(0.8, 0.3, 5.0, 0.0, 2.0, 5);
        for fit in [
            exp_regression_pair(&t, &v, 0, 3).unwrap(),
            exp_regression(&t, &v).unwrap(),
        ] {
            assert!((fit.rho_infinity - 0.8).abs() <= 1e-10);
            assert!((fit.a - 0.3).abs() <= 1e-10);
            assert!((fit.tau_r - 5.0).abs() <= 1e-10);
        }
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let f = exp_regression_pair(&t, &v, i, j).unwrap();
                    assert!((f.tau_r - 5.0).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn regression_rejects_degenerate_input() {
        let t = [0.0, 1.0, 2.0, 3.0];
        assert!(exp_regression(&t, &[0.1, 0.2, 0.2, 0.3]).is_err());
        assert!(exp_regression(&t, &[0.1, 0.2, 0.1, 0.3]).is_err());
        assert!(exp_regression(&t[..2], &[0.1, 0.2]).is_err());
        assert!(exp_regression(&[0.0, 1.0, 3.0], &[0.1, 0.2, 0.25]).is_err());
        // growing differences
        assert!(exp_regression(&t, &[0.0, 0.1, 0.3, 0.7]).is_err());
    }

    #[test]
    fn gap_of_default_potential() {
        let m = reduce(&ModelParams::default(), 6.0, 401).unwrap();
        let g = kramers_gap(&m).unwrap();
        assert!(g.h_g > 0.05 && g.h_g < 0.2, "{g:?}");
        assert!((g.well_gaps[0] - g.well_gaps[1]).abs() < 1e-10);
        let pre = reduce(&ModelParams::default().with_w_plus(2.0), 6.0, 401).unwrap();
        assert!(matches!(kramers_gap(&pre), Err(Error::PreBifurcation { .. })));
    }

    #[test]
    fn gap_invariant_under_shift() {
        let mut m = reduce(&ModelParams::default().with_delta_lambda(0.02), 6.0, 401).unwrap();
        let a = kramers_gap(&m).unwrap();
        m.potential.iter_mut().for_each(|g| *g += 3.7);
        let b = kramers_gap(&m).unwrap();
        assert!((a.h_g - b.h_g).abs() < 1e-12);
        assert!((a.well_gaps[1] - b.well_gaps[1]).abs() < 1e-12);
    }

    #[test]
    fn kramers_ratios() {
        let m = reduce(&ModelParams::default(), 6.0, 401).unwrap();
        let g = kramers_gap(&m).unwrap();
        let e = kramers_expectation(&g, &[0.2, 0.25]);
        let expected = (g.h_g * (1.0 / 0.04 - 1.0 / 0.0625)).exp();
        assert!((e[0] / e[1] - expected).abs() <= 1e-12 * expected);
        let betas = [0.15, 0.2, 0.25, 0.3];
        let (slope, _) = arrhenius_fit(&betas, &kramers_expectation(&g, &betas)).unwrap();
        assert!((slope - g.h_g).abs() <= 1e-10);
    }

    #[test]
    fn rho_plus_values() {
        let m = reduce(&ModelParams::default(), 6.0, 401).unwrap();
        let q = stationary(&m).unwrap();
        assert!((rho_plus(&q) - 0.5).abs() <= 1e-8);
        let neg = Density1D::gaussian(&m.y, -3.0, 0.2).unwrap();
        let mut v = neg.values.clone();
        for (i, y) in m.y.iter().enumerate() {
            if *y >= 0.0 {
                v[i] = 0.0;
            }
        }
        let neg = Density1D::from_values(&m.y, v).unwrap();
        assert_eq!(rho_plus(&neg), 0.0);
        let lower = q.mass_between(f64::NEG_INFINITY, 0.0);
        assert!((rho_plus(&q) + lower - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn escape_interpolation() {
        let s = |t, o, g| WellMasses {
            time: t,
            origin: o,
            target: g,
        };
        let series = [s(0.0, 1.0, 0.0), s(10.0, 0.8, 0.2), s(20.0, 0.6, 0.4)];
        // scores −0.5, −0.2, 0.1: crossing two thirds into the last interval
        match escape_time_from_series(&series) {
            EscapeOutcome::Escaped { time } => assert!((time - (10.0 + 20.0 / 3.0)).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            escape_time_from_series(&[s(0.0, 0.5, 0.5)]),
            EscapeOutcome::Escaped { time: 0.0 }
        );
        assert_eq!(
            escape_time_from_series(&series[..2]),
            EscapeOutcome::Censored { t_end: 10.0 }
        );
    }
}
