//! Euler–Maruyama ensembles of `dν = F(ν) dt + β dW` in `[0, ν_m]²` with
//! reflecting walls, and first-passage statistics.
//!
//! Path `k` draws from ChaCha8 keyed by `(seed, k)`, so a path does not
//! depend on how many other paths run or on the thread count.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ModelParams, PlanarField, RateModel, RateVector};

pub const MAX_DT: f64 = 1e-2;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialState {
    Point(RateVector),
    Blob {
        center: RateVector,
        width: f64,
    },
    /// Uniform over the box.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub initial: InitialState,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidParams("n_paths must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt <= MAX_DT) {
            return Err(Error::InvalidParams(format!(
                "dt must lie in (0, {MAX_DT}], got {}",
                self.dt
            )));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidParams(format!(
                "t_end must be finite and ≥ 0, got {}",
                self.t_end
            )));
        }
        if let InitialState::Blob { width, .. } = self.initial {
            if !(width > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "blob width must be positive, got {width}"
                )));
            }
        }
        Ok(())
    }

    fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassageSpec {
    pub start: RateVector,
    pub target: RateVector,
    pub radius: f64,
}

/// Reflects `v` into `[0, hi]`.
#[inline]
pub fn reflect(mut v: f64, hi: f64) -> f64 {
    for _ in 0..4 {
        if v < 0.0 {
            v = -v;
        } else if v > hi {
            v = 2.0 * hi - v;
        } else {
            return v;
        }
    }
    v.clamp(0.0, hi)
}

struct Path {
    rng: ChaCha8Rng,
    nu: RateVector,
}

impl Path {
    fn new(seed: u64, index: usize, initial: InitialState, nu_max: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let nu = match initial {
            InitialState::Point(p) => p,
            InitialState::Blob { center, width } => {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                RateVector::new(
                    reflect(center.nu1 + width * a, nu_max),
                    reflect(center.nu2 + width * b, nu_max),
                )
            }
            InitialState::Uniform => RateVector::new(rng.random::<f64>() * nu_max, rng.random::<f64>() * nu_max),
        };
        Self { rng, nu }
    }

    #[inline]
    fn step(&mut self, model: &RateModel, dt: f64, noise: f64, nu_max: f64) {
        let f = model.flux(&self.nu);
        let (a, b) = if noise > 0.0 {
            let a: f64 = self.rng.sample(StandardNormal);
            let b: f64 = self.rng.sample(StandardNormal);
            (noise * a, noise * b)
        } else {
            (0.0, 0.0)
        };
        self.nu = RateVector::new(
            reflect(self.nu.nu1 + f[0] * dt + a, nu_max),
            reflect(self.nu.nu2 + f[1] * dt + b, nu_max),
        );
    }
}

/// Final states, plus every path's state at each requested snapshot time.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub final_states: Vec<RateVector>,
    pub snapshot_times: Vec<f64>,
    /// `snapshots[s][k]`: path `k` at `snapshot_times[s]`.
    pub snapshots: Vec<Vec<RateVector>>,
}

impl Ensemble {
    /// CSV with header `path_id,nu1,nu2`.
    pub fn write_final_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "path_id,nu1,nu2")?;
        for (k, s) in self.final_states.iter().enumerate() {
            writeln!(out, "{k},{},{}", s.nu1, s.nu2)?;
        }
        Ok(())
    }
}

pub fn simulate(config: &EnsembleConfig, params: &ModelParams) -> Result<Ensemble> {
    simulate_with_snapshots(config, params, 0.0)
}

/// As [`simulate`], also recording every path each `snapshot_every` time
/// units (none if `snapshot_every ≤ 0`).
pub fn simulate_with_snapshots(config: &EnsembleConfig, params: &ModelParams, snapshot_every: f64) -> Result<Ensemble> {
    config.validate()?;
    let model = RateModel::new(*params)?;
    let n_steps = config.n_steps();
    let every = if snapshot_every > 0.0 {
        ((snapshot_every / config.dt).round() as usize).max(1)
    } else {
        usize::MAX
    };
    let snapshot_steps: Vec<usize> = (1..=n_steps).filter(|s| s % every == 0).collect();
    let noise = params.beta * config.dt.sqrt();
    let nu_max = params.nu_max;
    let per_path: Vec<(RateVector, Vec<RateVector>)> = (0..config.n_paths)
        .into_par_iter()
        .map(|k| {
            let mut path = Path::new(config.seed, k, config.initial, nu_max);
            let mut snaps = Vec::with_capacity(snapshot_steps.len());
            for s in 1..=n_steps {
                path.step(&model, config.dt, noise, nu_max);
                if s % every == 0 {
                    snaps.push(path.nu);
                }
            }
            (path.nu, snaps)
        })
        .collect();
    let mut snapshots = vec![Vec::with_capacity(config.n_paths); snapshot_steps.len()];
    let mut final_states = Vec::with_capacity(config.n_paths);
    for (fin, snaps) in per_path {
        final_states.push(fin);
        for (s, v) in snaps.into_iter().enumerate() {
            snapshots[s].push(v);
        }
    }
    Ok(Ensemble {
        final_states,
        snapshot_times: snapshot_steps.iter().map(|&s| s as f64 * config.dt).collect(),
        snapshots,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassageResult {
    /// Hitting time per path, `None` if censored at `t_end`.
    pub times: Vec<Option<f64>>,
    pub t_end: f64,
    pub n_hits: usize,
    /// Mean over paths that hit.
    pub mean_hit: f64,
    /// Normal-approximation 95% interval of `mean_hit`.
    pub ci: (f64, f64),
    /// Exponential-law estimate of the mean passage time with censoring:
    /// total observed time divided by the number of hits.
    pub mle_mean: f64,
    /// Normal-approximation 95% interval of `mle_mean`.
    pub mle_ci: (f64, f64),
}

impl PassageResult {
    pub fn n_censored(&self) -> usize {
        self.times.len() - self.n_hits
    }

    pub fn censored_fraction(&self) -> f64 {
        self.n_censored() as f64 / self.times.len() as f64
    }

    /// CSV with header `path_id,t_hit`; censored paths read `CENSORED`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "path_id,t_hit")?;
        for (k, t) in self.times.iter().enumerate() {
            match t {
                Some(t) => writeln!(out, "{k},{t}")?,
                None => writeln!(out, "{k},CENSORED")?,
            }
        }
        Ok(())
    }
}

pub fn first_passage(config: &EnsembleConfig, params: &ModelParams, spec: &PassageSpec) -> Result<PassageResult> {
    config.validate()?;
    if !(spec.radius > 0.0) {
        return Err(Error::InvalidParams(format!(
            "passage radius must be positive, got {}",
            spec.radius
        )));
    }
    if spec.start.distance(&spec.target) <= spec.radius {
        return Err(Error::InvalidParams("passage start lies inside the target ball".into()));
    }
    let model = RateModel::new(*params)?;
    let n_steps = config.n_steps();
    let noise = params.beta * config.dt.sqrt();
    let nu_max = params.nu_max;
    let r2 = spec.radius * spec.radius;
    let times: Vec<Option<f64>> = (0..config.n_paths)
        .into_par_iter()
        .map(|k| {
            let mut path = Path::new(config.seed, k, InitialState::Point(spec.start), nu_max);
            for s in 1..=n_steps {
                path.step(&model, config.dt, noise, nu_max);
                let d1 = path.nu.nu1 - spec.target.nu1;
                let d2 = path.nu.nu2 - spec.target.nu2;
                if d1 * d1 + d2 * d2 <= r2 {
                    return Some(s as f64 * config.dt);
                }
            }
            None
        })
        .collect();
    let t_end = n_steps as f64 * config.dt;
    let hits: Vec<f64> = times.iter().flatten().copied().collect();
    let n_hits = hits.len();
    if n_hits == 0 {
        return Err(Error::InsufficientHorizon { t_end });
    }
    let n = n_hits as f64;
    let mean_hit = hits.iter().sum::<f64>() / n;
    let half = if n_hits > 1 {
        let var = hits.iter().map(|t| (t - mean_hit).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    } else {
        f64::INFINITY
    };
    let exposure = hits.iter().sum::<f64>() + (times.len() - n_hits) as f64 * t_end;
    let mle_mean = exposure / n;
    let mle_half = 1.96 * mle_mean / n.sqrt();
    Ok(PassageResult {
        times,
        t_end,
        n_hits,
        mean_hit,
        ci: (mean_hit - half, mean_hit + half),
        mle_mean,
        mle_ci: (mle_mean - mle_half, mle_mean + mle_half),
    })
}

/// Integrates `ν̇ = F(ν)` with classical RK4, without walls.
pub fn integrate_deterministic(params: &ModelParams, start: RateVector, dt: f64, t_end: f64) -> Result<RateVector> {
    let model = RateModel::new(*params)?;
    let n = (t_end / dt).round() as usize;
    let mut x = start.as_vector();
    let f = |v: nalgebra::Vector2<f64>| model.flux(&RateVector::from(v));
    for _ in 0..n {
        let k1 = f(x);
        let k2 = f(x + 0.5 * dt * k1);
        let k3 = f(x + 0.5 * dt * k2);
        let k4 = f(x + dt * k3);
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(RateVector::from(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n_paths: usize, t_end: f64, seed: u64, initial: InitialState) -> EnsembleConfig {
        EnsembleConfig {
            n_paths,
            dt: 1e-2,
            t_end,
            seed,
            initial,
        }
    }

    #[test]
    fn reflection_stays_in_box() {
        assert_eq!(reflect(-0.5, 10.0), 0.5);
        assert_eq!(reflect(10.25, 10.0), 9.75);
        assert_eq!(reflect(3.0, 10.0), 3.0);
        let v = reflect(-35.0, 10.0);
        assert!((0.0..=10.0).contains(&v));
    }

    #[test]
    fn config_validation() {
        let p = ModelParams::default();
        let mut c = cfg(1, 1.0, 0, InitialState::Uniform);
        c.dt = 0.02;
        assert!(simulate(&c, &p).is_err());
        c.dt = 0.01;
        c.n_paths = 0;
        assert!(simulate(&c, &p).is_err());
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let p = ModelParams::default().with_beta(0.3);
        let init = InitialState::Blob {
            center: RateVector::new(3.2, 3.2),
            width: 0.5,
        };
        let a = simulate(&cfg(20, 5.0, 7, init), &p).unwrap();
        let b = simulate(&cfg(20, 5.0, 7, init), &p).unwrap();
        let c = simulate(&cfg(8, 5.0, 7, init), &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a.final_states[..8], &c.final_states[..]);
        let d = simulate(&cfg(20, 5.0, 8, init), &p).unwrap();
        assert_ne!(a.final_states, d.final_states);
    }

    #[test]
    fn snapshots_recorded() {
        let p = ModelParams::default().with_beta(0.3);
        let e = simulate_with_snapshots(&cfg(3, 2.0, 1, InitialState::Uniform), &p, 0.5).unwrap();
        assert_eq!(e.snapshot_times, vec![0.5, 1.0, 1.5, 2.0]);
        assert_eq!(e.snapshots[3], e.final_states);
    }

    #[test]
    fn passage_rejects_start_in_target() {
        let p = ModelParams::default();
        let s = RateVector::new(1.0, 6.0);
        let spec = PassageSpec {
            start: s,
            target: RateVector::new(1.2, 6.0),
            radius: 0.5,
        };
        assert!(first_passage(&cfg(1, 1.0, 0, InitialState::Point(s)), &p, &spec).is_err());
    }

    #[test]
    fn all_censored_is_an_error() {
        let p = ModelParams::default().with_beta(0.05);
        let s1 = RateVector::new(1.32308, 5.97334);
        let spec = PassageSpec {
            start: s1,
            target: s1.swapped(),
            radius: 0.5,
        };
        let r = first_passage(&cfg(4, 5.0, 0, InitialState::Point(s1)), &p, &spec);
        assert!(matches!(r, Err(Error::InsufficientHorizon { .. })));
    }

    #[test]
    fn rk4_reaches_decision_state() {
        let p = ModelParams::default();
        let end = integrate_deterministic(&p, RateVector::new(2.0, 5.0), 0.01, 200.0).unwrap();
        assert!(end.distance(&RateVector::new(1.32308, 5.97334)) < 1e-4);
    }
}
