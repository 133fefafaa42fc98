//! Reduced one-dimensional Fokker-Planck equation on the slow manifold,
//! `∂_t q + ∂_y (g q − (β_y²/2) ∂_y q) = 0` with no-flux ends.
//!
//! Vertex-centred finite volumes with Scharfetter–Gummel face fluxes and
//! implicit Euler in time.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::histogram::{Accumulator, Axis, Bins, Histogram};
use crate::model::RateVector;
use crate::reduction::SlowManifold;

/// Sub-segments per grid interval when pushing `q` onto the ν-plane.
pub const PUSHFORWARD_SUBDIV: usize = 16;

/// Bernoulli function `z / (eᶻ − 1)`.
pub fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Trapezoid weights of a node grid, equal to the dual-cell volumes.
pub fn trapezoid_weights(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = y[i + 1] - y[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// Nodal density on the manifold grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Density1D {
    pub y: Vec<f64>,
    pub values: Vec<f64>,
    pub time: f64,
}

impl Density1D {
    fn normalized(y: Vec<f64>, mut values: Vec<f64>) -> Result<Self> {
        let mass: f64 = trapezoid_weights(&y).iter().zip(&values).map(|(w, v)| w * v).sum();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidParams("initial density has no mass on the grid".into()));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self { y, values, time: 0.0 })
    }

    /// All mass in the dual cell of the node nearest `y0`.
    pub fn delta(y: &[f64], y0: f64) -> Result<Self> {
        let i = nearest(y, y0);
        let mut values = vec![0.0; y.len()];
        values[i] = 1.0;
        Self::normalized(y.to_vec(), values)
    }

    /// All mass at the first node strictly above `y0`.
    pub fn delta_above(y: &[f64], y0: f64) -> Result<Self> {
        let i = y.partition_point(|&v| v <= y0).min(y.len() - 1);
        let mut values = vec![0.0; y.len()];
        values[i] = 1.0;
        Self::normalized(y.to_vec(), values)
    }

    pub fn gaussian(y: &[f64], center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidParams(format!(
                "blob width must be positive, got {width}"
            )));
        }
        let values = y
            .iter()
            .map(|&v| (-0.5 * ((v - center) / width).powi(2)).exp())
            .collect();
        Self::normalized(y.to_vec(), values)
    }

    pub fn uniform(y: &[f64]) -> Result<Self> {
        Self::normalized(y.to_vec(), vec![1.0; y.len()])
    }

    pub fn from_values(y: &[f64], values: Vec<f64>) -> Result<Self> {
        if values.len() != y.len() || values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParams(
                "density values must be nonnegative, one per node".into(),
            ));
        }
        Self::normalized(y.to_vec(), values)
    }

    pub fn weights(&self) -> Vec<f64> {
        trapezoid_weights(&self.y)
    }

    pub fn mass(&self) -> f64 {
        self.weights().iter().zip(&self.values).map(|(w, v)| w * v).sum()
    }

    /// Integral of the piecewise-linear interpolant over `[a, b]`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        let (y, q) = (&self.y, &self.values);
        let mut total = 0.0;
        for i in 0..y.len() - 1 {
            let lo = a.max(y[i]);
            let hi = b.min(y[i + 1]);
            if hi <= lo {
                continue;
            }
            let h = y[i + 1] - y[i];
            let at = |s: f64| q[i] + (q[i + 1] - q[i]) * (s - y[i]) / h;
            total += 0.5 * (at(lo) + at(hi)) * (hi - lo);
        }
        total
    }

    pub fn mean_y(&self) -> f64 {
        self.weights()
            .iter()
            .zip(&self.values)
            .zip(&self.y)
            .map(|((w, v), y)| w * v * y)
            .sum()
    }

    /// Trapezoid L¹ distance; both densities must share the grid.
    pub fn l1_distance(&self, other: &Density1D) -> f64 {
        assert_eq!(self.y.len(), other.y.len(), "densities on different grids");
        self.weights()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(w, (a, b))| w * (a - b).abs())
            .sum()
    }

    /// Mass of the interpolant in each y-bin. Mass on the grid outside the
    /// bins is a coverage error.
    pub fn bin_masses(&self, bins: &Bins) -> Result<Histogram> {
        let mut h = Histogram::zeros(bins.clone());
        for (k, w) in bins.edges().windows(2).enumerate() {
            h.mass[k] = self.mass_between(w[0], w[1]);
        }
        let outside = self.mass() - h.total();
        if outside > crate::histogram::COVERAGE_TOL {
            return Err(Error::Coverage { outside_mass: outside });
        }
        Ok(h)
    }

    /// CSV: `# time=…` then `y,q`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# time={}", self.time)?;
        writeln!(out, "y,q")?;
        for (y, q) in self.y.iter().zip(&self.values) {
            writeln!(out, "{y},{q}")?;
        }
        Ok(())
    }
}

fn nearest(y: &[f64], y0: f64) -> usize {
    let mut best = 0;
    for (i, v) in y.iter().enumerate() {
        if (v - y0).abs() < (y[best] - y0).abs() {
            best = i;
        }
    }
    best
}

/// `q_s = exp(−2G/β_y²) / Z`, normalised by the trapezoid rule.
pub fn stationary(manifold: &SlowManifold) -> Result<Density1D> {
    let b2 = manifold.beta_y * manifold.beta_y;
    if !(b2 > 0.0) {
        return Err(Error::DegenerateNoise);
    }
    let g_min = manifold.potential.iter().copied().fold(f64::INFINITY, f64::min);
    let values = manifold
        .potential
        .iter()
        .map(|&g| (-2.0 * (g - g_min) / b2).exp())
        .collect();
    Density1D::normalized(manifold.y.clone(), values)
}

/// Implicit Euler step matrix, factored once.
#[derive(Debug, Clone)]
pub struct Fp1dSolver {
    pub dt: f64,
    volumes: Vec<f64>,
    lower: Vec<f64>,
    // Thomas forward sweep
    c_prime: Vec<f64>,
    denom: Vec<f64>,
}

impl Fp1dSolver {
    pub fn new(manifold: &SlowManifold, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
        }
        let d = 0.5 * manifold.beta_y * manifold.beta_y;
        if !(d > 0.0) {
            return Err(Error::DegenerateNoise);
        }
        let y = &manifold.y;
        let g = &manifold.g;
        let n = y.len();
        let volumes = trapezoid_weights(y);
        let mut diag: Vec<f64> = volumes.iter().map(|v| v / dt).collect();
        let mut upper = vec![0.0; n];
        let mut lower = vec![0.0; n];
        for i in 0..n - 1 {
            let h = y[i + 1] - y[i];
            let pe = 0.5 * (g[i] + g[i + 1]) * h / d;
            let k = d / h;
            // J = k (B(−Pe) q_i − B(Pe) q_{i+1})
            let out_i = k * bernoulli(-pe);
            let out_ip1 = k * bernoulli(pe);
            diag[i] += out_i;
            upper[i] = -out_ip1;
            diag[i + 1] += out_ip1;
            lower[i + 1] = -out_i;
        }
        let mut c_prime = vec![0.0; n];
        let mut denom = vec![0.0; n];
        denom[0] = diag[0];
        c_prime[0] = upper[0] / denom[0];
        for i in 1..n {
            denom[i] = diag[i] - lower[i] * c_prime[i - 1];
            if !(denom[i] > 0.0) {
                return Err(Error::LinearSolver {
                    step: 0,
                    detail: format!("nonpositive pivot {} at row {i}", denom[i]),
                });
            }
            c_prime[i] = upper[i] / denom[i];
        }
        Ok(Self {
            dt,
            volumes,
            lower,
            c_prime,
            denom,
        })
    }

    /// One implicit step in place.
    pub fn step(&self, q: &mut [f64]) {
        let n = q.len();
        let dt = self.dt;
        q[0] = self.volumes[0] * q[0] / dt / self.denom[0];
        for i in 1..n {
            q[i] = (self.volumes[i] * q[i] / dt - self.lower[i] * q[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            q[i] -= self.c_prime[i] * q[i + 1];
        }
        // round-off can leave -0 or 1e-300-scale negatives in far tails
        for v in q.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// Evolves `q0` to `t_end`, returning snapshots at every multiple of
/// `snapshot_every` (and always the initial and final states).
pub fn evolve(
    q0: &Density1D,
    manifold: &SlowManifold,
    dt: f64,
    t_end: f64,
    snapshot_every: f64,
) -> Result<Vec<Density1D>> {
    if q0.y.len() != manifold.y.len() {
        return Err(Error::InvalidParams(
            "initial density is not on the manifold grid".into(),
        ));
    }
    if !(t_end >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "horizon must be nonnegative, got {t_end}"
        )));
    }
    let solver = Fp1dSolver::new(manifold, dt)?;
    let n_steps = (t_end / dt).round() as usize;
    let every = if snapshot_every > 0.0 {
        ((snapshot_every / dt).round() as usize).max(1)
    } else {
        n_steps.max(1)
    };
    let mut q = q0.values.clone();
    let mut out = vec![Density1D {
        time: q0.time,
        ..q0.clone()
    }];
    for s in 1..=n_steps {
        solver.step(&mut q);
        if s % every == 0 || s == n_steps {
            if q.iter().any(|v| !v.is_finite()) {
                return Err(Error::LinearSolver {
                    step: s,
                    detail: "non-finite density".into(),
                });
            }
            out.push(Density1D {
                y: q0.y.clone(),
                values: q.clone(),
                time: q0.time + s as f64 * dt,
            });
        }
    }
    Ok(out)
}

/// A quantity to extract from `q` through the curve `y ↦ ν(y)`.
pub enum MomentRequest<'a> {
    /// `M_Ψ = ∫ Ψ(ν(y)) q(y) dy`.
    TestFunction(&'a dyn Fn(RateVector) -> f64),
    Marginal {
        axis: Axis,
        bins: Bins,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Moment {
    Scalar(f64),
    Histogram(Histogram),
}

pub fn moment(q: &Density1D, manifold: &SlowManifold, req: &MomentRequest<'_>) -> Result<Moment> {
    match req {
        MomentRequest::TestFunction(psi) => {
            let w = q.weights();
            let m = (0..q.values.len())
                .map(|i| w[i] * q.values[i] * psi(manifold.nu_at(i)))
                .sum();
            Ok(Moment::Scalar(m))
        }
        MomentRequest::Marginal { axis, bins } => marginal_nu(q, manifold, *axis, bins).map(Moment::Histogram),
    }
}

/// Pushforward of `q` onto one rate axis. Each grid interval is cut into
/// sub-segments whose trapezoid mass lands in the bin of the segment midpoint.
pub fn marginal_nu(q: &Density1D, manifold: &SlowManifold, axis: Axis, bins: &Bins) -> Result<Histogram> {
    if bins.lo() > 0.0 {
        return Err(Error::InvalidParams(format!("bins start at {} above 0", bins.lo())));
    }
    let mut acc = Accumulator::new(bins);
    let (y, x, v) = (&manifold.y, &manifold.x_star, &q.values);
    let k = PUSHFORWARD_SUBDIV;
    for i in 0..y.len() - 1 {
        let h = (y[i + 1] - y[i]) / k as f64;
        for s in 0..k {
            let t0 = s as f64 / k as f64;
            let t1 = (s + 1) as f64 / k as f64;
            let tm = 0.5 * (t0 + t1);
            let mass = 0.5 * (lerp(v[i], v[i + 1], t0) + lerp(v[i], v[i + 1], t1)) * h;
            if mass == 0.0 {
                continue;
            }
            let nu = manifold.sd.from_xy(lerp(x[i], x[i + 1], tm), lerp(y[i], y[i + 1], tm));
            let coord = match axis {
                Axis::Nu1 => nu.nu1,
                Axis::Nu2 => nu.nu2,
            };
            acc.add(coord, mass);
        }
    }
    acc.finish()
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Time series of the mean of y, one row per snapshot.
pub fn write_mean_series<W: Write>(snapshots: &[Density1D], mut out: W, tau_seconds: f64) -> io::Result<()> {
    writeln!(out, "t_tau,t_seconds,mean_y")?;
    for s in snapshots {
        writeln!(out, "{},{},{}", s.time, s.time * tau_seconds, s.mean_y())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::find_fixed_points;
    use crate::model::ModelParams;
    use crate::reduction::{reduce, DEFAULT_NY, DEFAULT_Y_MAX};

    fn manifold(dl: f64, beta: f64) -> SlowManifold {
        reduce(
            &ModelParams::default().with_delta_lambda(dl).with_beta(beta),
            DEFAULT_Y_MAX,
            DEFAULT_NY,
        )
        .unwrap()
    }

    #[test]
    fn bernoulli_limits() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1e-12) - (1.0 - 0.5e-12)).abs() < 1e-15);
        let z: f64 = 0.7;
        assert!((bernoulli(-z) - bernoulli(z) - z).abs() < 1e-14);
        assert!(bernoulli(800.0) >= 0.0 && bernoulli(-800.0) > 700.0);
    }

    #[test]
    fn stationary_properties() {
        let m = manifold(0.0, 0.1);
        let q = stationary(&m).unwrap();
        assert!((q.mass() - 1.0).abs() <= 1e-10);
        let n = q.values.len();
        for i in 0..n {
            assert!((q.values[i] - q.values[n - 1 - i]).abs() <= 1e-10);
            assert!(q.values[i] > 0.0);
        }
        assert!(q.mean_y().abs() < 1e-8);
    }

    #[test]
    fn stationary_modes_at_decision_states() {
        let p = ModelParams::default();
        let m = manifold(0.0, 0.1);
        let q = stationary(&m).unwrap();
        let h = m.spacing();
        let mut modes: Vec<f64> = (1..q.values.len() - 1)
            .filter(|&i| q.values[i] > q.values[i - 1] && q.values[i] >= q.values[i + 1])
            .map(|i| q.y[i])
            .collect();
        modes.sort_by(f64::total_cmp);
        let mut wells: Vec<f64> = find_fixed_points(&p)
            .unwrap()
            .iter()
            .filter(|f| f.kind == crate::dynsys::FixedPointKind::StableNode)
            .map(|f| m.sd.y_of(&f.location))
            .collect();
        wells.sort_by(f64::total_cmp);
        assert_eq!(modes.len(), 2);
        for (a, b) in modes.iter().zip(&wells) {
            assert!((a - b).abs() <= h);
        }
    }

    #[test]
    fn zero_noise_is_degenerate() {
        let m = manifold(0.0, 0.0);
        assert_eq!(stationary(&m), Err(Error::DegenerateNoise));
        assert!(Fp1dSolver::new(&m, 0.01).is_err());
    }

    #[test]
    fn gibbs_state_is_discrete_steady_state() {
        for dl in [0.0, 0.05] {
            let m = manifold(dl, 0.1);
            let q = stationary(&m).unwrap();
            let solver = Fp1dSolver::new(&m, 0.01).unwrap();
            let mut v = q.values.clone();
            solver.step(&mut v);
            let err = v.iter().zip(&q.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = q.values.iter().copied().fold(0.0, f64::max);
            assert!(err <= 1e-10 * scale.max(1.0), "dl={dl}: {err}");
        }
    }

    #[test]
    fn mass_conserved_long_run() {
        let m = manifold(0.0, 0.3);
        let q0 = Density1D::delta_above(&m.y, 0.0).unwrap();
        let solver = Fp1dSolver::new(&m, 0.01).unwrap();
        let mut q = q0.values.clone();
        let w = q0.weights();
        for _ in 0..100_000 {
            solver.step(&mut q);
        }
        let mass: f64 = w.iter().zip(&q).map(|(a, b)| a * b).sum();
        assert!((mass - 1.0).abs() <= 1e-10, "{mass}");
    }

    #[test]
    fn relaxes_to_stationary() {
        let m = manifold(0.05, 0.3);
        let q0 = Density1D::uniform(&m.y).unwrap();
        let snaps = evolve(&q0, &m, 1.0, 20_000.0, 2_000.0).unwrap();
        let qs = stationary(&m).unwrap();
        let d: Vec<f64> = snaps.iter().map(|s| s.l1_distance(&qs)).collect();
        assert!(d.windows(2).all(|w| w[1] <= w[0] + 1e-10), "{d:?}");
        assert!(*d.last().unwrap() < 1e-3, "{d:?}");
    }

    #[test]
    fn convergence_is_second_order_in_space() {
        let p = ModelParams::default().with_beta(0.3);
        let run = |n: usize, dt: f64| {
            let m = reduce(&p, DEFAULT_Y_MAX, n).unwrap();
            let q0 = Density1D::gaussian(&m.y, 1.0, 0.5).unwrap();
            let s = evolve(&q0, &m, dt, 4.0, 0.0).unwrap();
            (m, s.last().unwrap().clone())
        };
        let (_, fine) = run(1601, 0.0025);
        let err = |n: usize, dt: f64| {
            let (m, q) = run(n, dt);
            let stride = 1600 / (n - 1);
            m.y.iter()
                .enumerate()
                .map(|(i, _)| (q.values[i] - fine.values[i * stride]).abs())
                .fold(0.0, f64::max)
        };
        let e1 = err(101, 0.04);
        let e2 = err(201, 0.02);
        let e3 = err(401, 0.01);
        // first-order time error dominates once h is small, so compare the coarse pair
        let r = e1 / e2;
        assert!(r > 1.8, "{e1} {e2} {e3}");
        assert!(e3 < e2);
    }

    #[test]
    fn moments_and_marginals() {
        let m = manifold(0.0, 0.1);
        let q = stationary(&m).unwrap();
        let one = |_: RateVector| 1.0;
        match moment(&q, &m, &MomentRequest::TestFunction(&one)).unwrap() {
            Moment::Scalar(v) => assert!((v - 1.0).abs() <= 1e-10),
            _ => unreachable!(),
        }
        let bins = Bins::uniform(0.0, 10.0, 50);
        let h1 = marginal_nu(&q, &m, Axis::Nu1, &bins).unwrap();
        let h2 = marginal_nu(&q, &m, Axis::Nu2, &bins).unwrap();
        assert!((h1.total() - 1.0).abs() <= 1e-10);
        // ν₂(y) = ν₁(−y) and q_s is even, so the two marginals coincide
        for (a, b) in h1.mass.iter().zip(&h2.mass) {
            assert!((a - b).abs() <= 1e-8, "{a} {b}");
        }
        let modes = h1.modes();
        assert_eq!(modes.len(), 2, "{modes:?}");
        assert!(
            (modes[0] - 1.32).abs() <= 0.2 && (modes[1] - 5.97).abs() <= 0.2,
            "{modes:?}"
        );
    }

    #[test]
    fn orientation_increasing_y_decreases_nu1() {
        let m = manifold(0.0, 0.1);
        for i in 1..m.len() {
            assert!(m.nu_at(i).nu1 < m.nu_at(i - 1).nu1);
        }
    }

    #[test]
    fn biased_equilibrium_single_bump() {
        let m = manifold(0.1, 0.1);
        let q = stationary(&m).unwrap();
        let bins = Bins::uniform(-0.2, 10.2, 52);
        let h = marginal_nu(&q, &m, Axis::Nu1, &bins).unwrap();
        let (k, _) = h
            .mass
            .iter()
            .enumerate()
            .fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        assert!((h.bins.centers()[k] - 1.09).abs() <= 0.2);
        let right: f64 = h
            .bins
            .centers()
            .iter()
            .zip(&h.mass)
            .filter(|(c, _)| **c > 3.0)
            .map(|(_, m)| m)
            .sum();
        assert!(right < 1e-3);
    }

    #[test]
    fn mass_between_matches_trapezoid() {
        let m = manifold(0.01, 0.1);
        let q = stationary(&m).unwrap();
        let total = q.mass_between(-100.0, 100.0);
        assert!((total - q.mass()).abs() < 1e-14);
        let split = q.mass_between(-10.0, 0.1234) + q.mass_between(0.1234, 10.0);
        assert!((split - 1.0).abs() < 1e-12);
        assert!(Density1D::gaussian(&m.y, 0.0, 0.0).is_err());
    }
}
