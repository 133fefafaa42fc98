//! Deterministic phase-plane analysis: fixed points, their stability,
//! the pitchfork scan in `w₊`, and the eigen-frame `(x, y)` centred on the
//! spontaneous state.

use std::io::{self, Write};

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::model::{ModelParams, PlanarField, RateModel, RateVector};

/// Eigenvalues closer to zero than this refuse a stability decision.
pub const BIFURCATION_EPS: f64 = 1e-8;
/// Fixed points closer than this are merged.
pub const DEDUP_TOL: f64 = 1e-6;
/// Residual every returned fixed point must satisfy.
pub const ROOT_RESIDUAL: f64 = 1e-10;
const SEED_GRID: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPointKind {
    StableNode,
    Saddle,
    UnstableNode,
}

impl FixedPointKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FixedPointKind::StableNode => "stable",
            FixedPointKind::Saddle => "saddle",
            FixedPointKind::UnstableNode => "unstable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub location: RateVector,
    /// Sorted by magnitude, largest first.
    pub eigenvalues: [f64; 2],
    pub kind: FixedPointKind,
}

/// Real eigenpairs of a 2×2 matrix, ordered by decreasing magnitude.
/// Eigenvectors have unit Euclidean norm and arbitrary sign.
#[derive(Debug, Clone, Copy)]
pub struct Eigen2 {
    pub values: [f64; 2],
    pub vectors: [Vector2<f64>; 2],
}

/// Closed-form eigen-decomposition (quadratic formula, cancellation-free).
pub fn eigen2(j: &Matrix2<f64>) -> Result<Eigen2> {
    let (a, b, c, d) = (j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]);
    let tr = a + d;
    let det = a * d - b * c;
    let disc = (a - d) * (a - d) + 4.0 * b * c;
    if disc < 0.0 {
        return Err(Error::NonRealSpectrum { discriminant: disc });
    }
    let s = disc.sqrt();
    let big = 0.5 * (tr + tr.signum() * s);
    let small = if big != 0.0 { det / big } else { 0.0 };
    let values = if big.abs() >= small.abs() {
        [big, small]
    } else {
        [small, big]
    };
    let vectors = [eigenvector(j, values[0], 0), eigenvector(j, values[1], 1)];
    Ok(Eigen2 { values, vectors })
}

fn eigenvector(j: &Matrix2<f64>, lambda: f64, fallback: usize) -> Vector2<f64> {
    let (a, b, c, d) = (j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]);
    // Null vector of each row of J − λI; keep the better conditioned one.
    let u = Vector2::new(b, lambda - a);
    let v = Vector2::new(lambda - d, c);
    let w = if u.norm() >= v.norm() { u } else { v };
    let n = w.norm();
    if n == 0.0 || !n.is_finite() {
        // J = λI: every direction is an eigenvector.
        let mut e = Vector2::zeros();
        e[fallback] = 1.0;
        return e;
    }
    w / n
}

/// Classifies a fixed point from its Jacobian.
pub fn classify_jacobian(location: RateVector, j: &Matrix2<f64>) -> Result<FixedPoint> {
    let eig = eigen2(j)?;
    let [l1, l2] = eig.values;
    for l in [l1, l2] {
        if l.abs() <= BIFURCATION_EPS {
            return Err(Error::AtBifurcation { eigenvalue: l });
        }
    }
    let kind = match (l1 < 0.0, l2 < 0.0) {
        (true, true) => FixedPointKind::StableNode,
        (false, false) => FixedPointKind::UnstableNode,
        _ => FixedPointKind::Saddle,
    };
    Ok(FixedPoint {
        location,
        eigenvalues: eig.values,
        kind,
    })
}

pub fn classify_in<F: PlanarField>(field: &F, location: RateVector) -> Result<FixedPoint> {
    let residual = field.flux(&location).norm();
    if !(residual <= 1e-8) {
        return Err(Error::NotAFixedPoint { residual });
    }
    classify_jacobian(location, &field.jacobian(&location))
}

pub fn classify(location: RateVector, params: &ModelParams) -> Result<FixedPoint> {
    classify_in(&RateModel::new(*params)?, location)
}

/// Damped Newton from one seed. Returns the root only if the residual
/// reaches [`ROOT_RESIDUAL`].
pub fn newton_2d<F: PlanarField>(field: &F, seed: RateVector) -> Option<RateVector> {
    let mut x = seed.as_vector();
    let mut fx = field.flux(&RateVector::from(x));
    let mut norm = fx.norm();
    for _ in 0..100 {
        if norm <= 1e-14 {
            break;
        }
        let j = field.jacobian(&RateVector::from(x));
        let step = j.lu().solve(&(-fx))?;
        if !step.iter().all(|s| s.is_finite()) {
            return None;
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t >= 1.0 / 1024.0 {
            let trial = x + step * t;
            let ft = field.flux(&RateVector::from(trial));
            let nt = ft.norm();
            if nt < norm {
                x = trial;
                fx = ft;
                norm = nt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Rounding floor reached, or a poor seed stuck far from a root.
            break;
        }
    }
    (norm <= ROOT_RESIDUAL).then(|| RateVector::from(x))
}

/// All fixed points in the box `[0, ν_max]²`, deduplicated and sorted by
/// `ν₁`. Seeds come from a 12×12 grid plus any `extra_seeds`.
pub fn find_fixed_points_in<F: PlanarField>(
    field: &F,
    nu_max: f64,
    extra_seeds: &[RateVector],
) -> Result<Vec<FixedPoint>> {
    let mut seeds: Vec<RateVector> = extra_seeds.to_vec();
    for i in 0..SEED_GRID {
        for k in 0..SEED_GRID {
            let s = nu_max / (SEED_GRID - 1) as f64;
            seeds.push(RateVector::new(i as f64 * s, k as f64 * s));
        }
    }
    let slack = 1e-9;
    let mut roots: Vec<RateVector> = Vec::new();
    let mut any_converged = false;
    for seed in seeds {
        let Some(root) = newton_2d(field, seed) else {
            continue;
        };
        any_converged = true;
        let inside = (-slack..=nu_max + slack).contains(&root.nu1) && (-slack..=nu_max + slack).contains(&root.nu2);
        if inside && roots.iter().all(|r| r.distance(&root) > DEDUP_TOL) {
            roots.push(root);
        }
    }
    if !any_converged || roots.is_empty() {
        return Err(Error::RootFindingFailed);
    }
    if roots.len() > 3 {
        return Err(Error::UnexpectedTopology { count: roots.len() });
    }
    roots.sort_by(|a, b| a.nu1.total_cmp(&b.nu1));
    roots
        .into_iter()
        .map(|r| classify_jacobian(r, &field.jacobian(&r)))
        .collect()
}

pub fn find_fixed_points(params: &ModelParams) -> Result<Vec<FixedPoint>> {
    let model = RateModel::new(*params)?;
    find_fixed_points_in(&model, params.nu_max, &[])
}

/// The saddle when present, otherwise the unique stable node.
pub fn spontaneous_among(points: &[FixedPoint]) -> Result<FixedPoint> {
    if let Some(s) = points.iter().find(|p| p.kind == FixedPointKind::Saddle) {
        return Ok(*s);
    }
    match points {
        [single] if single.kind == FixedPointKind::StableNode => Ok(*single),
        _ => Err(Error::InconsistentTopology(format!(
            "{} fixed points without a saddle",
            points.len()
        ))),
    }
}

pub fn spontaneous_state(params: &ModelParams) -> Result<FixedPoint> {
    spontaneous_among(&find_fixed_points(params)?)
}

/// Eigen-frame at the spontaneous state. Column 0 of `p` is the fast
/// direction (ν₁-component ≥ 0), column 1 the slow one (ν₂-component > 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralDecomposition {
    pub nu_eq: RateVector,
    pub mu1: f64,
    pub mu2: f64,
    pub p: Matrix2<f64>,
    pub p_inv: Matrix2<f64>,
    pub epsilon: f64,
}

impl SpectralDecomposition {
    pub fn from_jacobian(nu_eq: RateVector, j: &Matrix2<f64>) -> Result<Self> {
        let eig = eigen2(j)?;
        let [mu1, mu2] = eig.values;
        if mu2.abs() <= BIFURCATION_EPS {
            return Err(Error::AtBifurcation { eigenvalue: mu2 });
        }
        if (mu1.abs() - mu2.abs()).abs() <= 1e-12 * mu1.abs() {
            return Err(Error::AtBifurcation { eigenvalue: mu2 });
        }
        let mut fast = eig.vectors[0];
        let mut slow = eig.vectors[1];
        if fast[0] < 0.0 || (fast[0] == 0.0 && fast[1] < 0.0) {
            fast = -fast;
        }
        if slow[1] < 0.0 || (slow[1] == 0.0 && slow[0] < 0.0) {
            slow = -slow;
        }
        let p = Matrix2::from_columns(&[fast, slow]);
        let p_inv = p
            .try_inverse()
            .ok_or_else(|| Error::InconsistentTopology("parallel eigenvectors".into()))?;
        Ok(Self {
            nu_eq,
            mu1,
            mu2,
            p,
            p_inv,
            epsilon: (mu2 / mu1).abs(),
        })
    }

    /// `X = P⁻¹(ν − ν_eq)`.
    pub fn to_xy(&self, nu: &RateVector) -> (f64, f64) {
        let x = self.p_inv * (nu.as_vector() - self.nu_eq.as_vector());
        (x[0], x[1])
    }

    /// `ν = ν_eq + P X`.
    pub fn from_xy(&self, x: f64, y: f64) -> RateVector {
        RateVector::from(self.nu_eq.as_vector() + self.p * Vector2::new(x, y))
    }

    /// Slow coordinate only.
    pub fn y_of(&self, nu: &RateVector) -> f64 {
        self.p_inv[(1, 0)] * (nu.nu1 - self.nu_eq.nu1) + self.p_inv[(1, 1)] * (nu.nu2 - self.nu_eq.nu2)
    }
}

pub fn spectral_in<F: PlanarField>(field: &F, spontaneous: &FixedPoint) -> Result<SpectralDecomposition> {
    SpectralDecomposition::from_jacobian(spontaneous.location, &field.jacobian(&spontaneous.location))
}

pub fn spectral(params: &ModelParams) -> Result<SpectralDecomposition> {
    let model = RateModel::new(*params)?;
    let fps = find_fixed_points_in(&model, params.nu_max, &[])?;
    let s = spontaneous_among(&fps)?;
    spectral_in(&model, &s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumSample {
    pub mu1: f64,
    pub mu2: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BifurcationSample {
    pub w_plus: f64,
    /// Empty when the sample failed; see `note`.
    pub fixed_points: Vec<FixedPoint>,
    pub spontaneous: Option<RateVector>,
    pub spectrum: Option<SpectrumSample>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BifurcationBranch {
    pub delta_lambda: f64,
    pub samples: Vec<BifurcationSample>,
    /// `w₊` where the spontaneous state becomes a saddle, refined by bisection.
    pub critical_w_plus: Option<f64>,
}

fn has_saddle(params: &ModelParams) -> Option<bool> {
    let model = RateModel::new(*params).ok()?;
    let mut seeds = Vec::new();
    for i in 0..SEED_GRID {
        for k in 0..SEED_GRID {
            let s = params.nu_c.max(params.nu_max) / (SEED_GRID - 1) as f64;
            seeds.push(RateVector::new(i as f64 * s, k as f64 * s));
        }
    }
    let mut roots: Vec<RateVector> = Vec::new();
    for seed in seeds {
        if let Some(r) = newton_2d(&model, seed) {
            if roots.iter().all(|q| q.distance(&r) > DEDUP_TOL) {
                roots.push(r);
            }
        }
    }
    if roots.is_empty() {
        return None;
    }
    Some(roots.iter().any(|r| model.jacobian(r).determinant() < 0.0))
}

/// Scans `w₊` over `[lo, hi]` with the given step, following roots with
/// warm-started seeds. Failures annotate the sample instead of aborting.
pub fn bifurcation_scan(params: &ModelParams, range: (f64, f64), step: f64) -> Result<BifurcationBranch> {
    params.validate()?;
    let (lo, hi) = range;
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParams(format!(
            "empty or invalid scan range [{lo}, {hi}] with step {step}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    let mut samples = Vec::with_capacity(n);
    let mut warm: Vec<RateVector> = Vec::new();
    for k in 0..n {
        let w_plus = lo + k as f64 * step;
        let p = params.with_w_plus(w_plus);
        let sample = match RateModel::new(p) {
            Err(e) => BifurcationSample {
                w_plus,
                fixed_points: vec![],
                spontaneous: None,
                spectrum: None,
                note: Some(e.to_string()),
            },
            // Every root of F lies in (0, ν_c)²; past w₊ ≈ 2.45 the decision
            // states leave [0, ν_max]², so the scan searches the larger box.
            Ok(model) => match find_fixed_points_in(&model, p.nu_c.max(p.nu_max), &warm) {
                Err(e) => BifurcationSample {
                    w_plus,
                    fixed_points: vec![],
                    spontaneous: None,
                    spectrum: None,
                    note: Some(e.to_string()),
                },
                Ok(fps) => {
                    warm = fps.iter().map(|f| f.location).collect();
                    let mut note = None;
                    let spont = spontaneous_among(&fps).map_err(|e| note = Some(e.to_string())).ok();
                    let spectrum = spont.and_then(|s| {
                        eigen2(&model.jacobian(&s.location)).ok().map(|e| SpectrumSample {
                            mu1: e.values[0],
                            mu2: e.values[1],
                            epsilon: (e.values[1] / e.values[0]).abs(),
                        })
                    });
                    BifurcationSample {
                        w_plus,
                        fixed_points: fps,
                        spontaneous: spont.map(|s| s.location),
                        spectrum,
                        note,
                    }
                }
            },
        };
        samples.push(sample);
    }

    let mut critical = None;
    for pair in samples.windows(2) {
        let before = pair[0].fixed_points.iter().any(|f| f.kind == FixedPointKind::Saddle);
        let after = pair[1].fixed_points.iter().any(|f| f.kind == FixedPointKind::Saddle);
        if !before && after {
            critical = refine_critical(params, pair[0].w_plus, pair[1].w_plus);
            break;
        }
    }
    Ok(BifurcationBranch {
        delta_lambda: params.delta_lambda,
        samples,
        critical_w_plus: critical,
    })
}

fn refine_critical(params: &ModelParams, mut lo: f64, mut hi: f64) -> Option<f64> {
    for _ in 0..60 {
        if hi - lo < 1e-10 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if has_saddle(&params.with_w_plus(mid))? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

impl BifurcationBranch {
    /// CSV: `w_plus,n_fixed_points,nu1_a,kind_a,nu1_b,kind_b,nu1_c,kind_c,mu1,mu2,epsilon`.
    /// Missing entries are left empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "w_plus,n_fixed_points,nu1_a,kind_a,nu1_b,kind_b,nu1_c,kind_c,mu1,mu2,epsilon"
        )?;
        for s in &self.samples {
            write!(out, "{},{}", s.w_plus, s.fixed_points.len())?;
            for k in 0..3 {
                match s.fixed_points.get(k) {
                    Some(f) => write!(out, ",{},{}", f.location.nu1, f.kind.as_str())?,
                    None => write!(out, ",,")?,
                }
            }
            match s.spectrum {
                Some(sp) => writeln!(out, ",{},{},{}", sp.mu1, sp.mu2, sp.epsilon)?,
                None => writeln!(out, ",,,")?,
            }
        }
        Ok(())
    }
}
