//! Two-dimensional Fokker-Planck equation
//! `∂_t p + ∇·(F p − (β²/2) ∇p) = 0` on `[0, ν_m]²` with no-flux walls.
//!
//! Cell-centred finite volumes, Scharfetter–Gummel fluxes on the normal
//! component of `F` at face centres, implicit Euler, BiCGSTAB.

use std::io::{self, Read, Write};

use log::{debug, warn};

use crate::dynsys::SpectralDecomposition;
use crate::error::{Error, Result};
use crate::fp1d::bernoulli;
use crate::histogram::{Accumulator, Axis, Bins, Histogram};
use crate::model::{ModelParams, PlanarField, RateModel, RateVector};

pub const MIN_BETA: f64 = 1e-3;
pub const SOLVER_RTOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 2000;
/// Boundary-cell mass above which a run logs a warning.
pub const BOUNDARY_MASS_WARN: f64 = 1e-6;
pub const BINARY_MAGIC: [u8; 8] = *b"FPDENS2D";

/// Uniform cell-centred `n × n` mesh of `[0, ν_m]²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub n: usize,
    pub nu_max: f64,
}

impl Grid2D {
    pub fn new(n: usize, nu_max: f64) -> Result<Self> {
        if n < 2 || !(nu_max > 0.0) {
            return Err(Error::InvalidParams(format!(
                "2D grid needs n ≥ 2 and ν_m > 0 (got {n}, {nu_max})"
            )));
        }
        Ok(Self { n, nu_max })
    }

    pub fn h(&self) -> f64 {
        self.nu_max / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Flat index of cell `(i, j)`, `i` along ν₁ and `j` along ν₂.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    pub fn center(&self, i: usize, j: usize) -> RateVector {
        let h = self.h();
        RateVector::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h)
    }
}

/// Cell-averaged density.
#[derive(Debug, Clone, PartialEq)]
pub struct Density2D {
    pub grid: Grid2D,
    pub values: Vec<f64>,
    pub time: f64,
}

impl Density2D {
    fn normalized(grid: Grid2D, mut values: Vec<f64>) -> Result<Self> {
        let h2 = grid.h() * grid.h();
        let mass: f64 = values.iter().sum::<f64>() * h2;
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidParams("initial density has no mass on the grid".into()));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self {
            grid,
            values,
            time: 0.0,
        })
    }

    /// Isotropic Gaussian sampled at cell centres.
    pub fn gaussian(grid: Grid2D, center: RateVector, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidParams(format!(
                "blob width must be positive, got {width}"
            )));
        }
        let mut v = vec![0.0; grid.len()];
        for i in 0..grid.n {
            for j in 0..grid.n {
                let d = grid.center(i, j).distance(&center) / width;
                v[grid.idx(i, j)] = (-0.5 * d * d).exp();
            }
        }
        Self::normalized(grid, v)
    }

    pub fn uniform(grid: Grid2D) -> Result<Self> {
        Self::normalized(grid, vec![1.0; grid.len()])
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() || values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParams(
                "density values must be nonnegative, one per cell".into(),
            ));
        }
        Self::normalized(grid, values)
    }

    pub fn cell_area(&self) -> f64 {
        self.grid.h() * self.grid.h()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    /// Mass of cells whose centre lies within `radius` of `center`.
    pub fn mass_in_ball(&self, center: &RateVector, radius: f64) -> f64 {
        let g = self.grid;
        let mut m = 0.0;
        for i in 0..g.n {
            for j in 0..g.n {
                if g.center(i, j).distance(center) <= radius {
                    m += self.values[g.idx(i, j)];
                }
            }
        }
        m * self.cell_area()
    }

    /// Mass held by the outermost ring of cells.
    pub fn boundary_mass(&self) -> f64 {
        let g = self.grid;
        let n = g.n;
        let mut m = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                    m += self.values[g.idx(i, j)];
                }
            }
        }
        m * self.cell_area()
    }

    /// Density with the two rate axes exchanged.
    pub fn swapped(&self) -> Self {
        let g = self.grid;
        let mut v = vec![0.0; g.len()];
        for i in 0..g.n {
            for j in 0..g.n {
                v[g.idx(j, i)] = self.values[g.idx(i, j)];
            }
        }
        Self {
            grid: g,
            values: v,
            time: self.time,
        }
    }

    /// CSV with header `nu1,nu2,p`, cell centres in `(i, j)` order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "nu1,nu2,p")?;
        let g = self.grid;
        for i in 0..g.n {
            for j in 0..g.n {
                let c = g.center(i, j);
                writeln!(out, "{},{},{}", c.nu1, c.nu2, self.values[g.idx(i, j)])?;
            }
        }
        Ok(())
    }

    /// Dense little-endian file: 32-byte header (8-byte magic, `u64` N,
    /// `f64` ν_m, `f64` time) followed by `N²` `f64` values in `(i, j)` order.
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(&BINARY_MAGIC)?;
        out.write_all(&(self.grid.n as u64).to_le_bytes())?;
        out.write_all(&self.grid.nu_max.to_le_bytes())?;
        out.write_all(&self.time.to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> io::Result<Self> {
        let mut header = [0u8; 32];
        input.read_exact(&mut header)?;
        if header[..8] != BINARY_MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "bad magic"));
        }
        let word = |k: usize| <[u8; 8]>::try_from(&header[k..k + 8]).unwrap();
        let n = u64::from_le_bytes(word(8)) as usize;
        let nu_max = f64::from_le_bytes(word(16));
        let time = f64::from_le_bytes(word(24));
        let grid = Grid2D::new(n, nu_max).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        let mut values = vec![0.0; grid.len()];
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            input.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(Self { grid, values, time })
    }
}

/// `I + dt·A` in face form. Each face carries the rates at which mass leaves
/// its lower and upper neighbour.
#[derive(Debug, Clone)]
pub struct Fp2dSolver {
    pub grid: Grid2D,
    pub dt: f64,
    /// Faces normal to ν₁, between `(i, j)` and `(i+1, j)`, index `i·n + j`.
    x_lo: Vec<f64>,
    x_hi: Vec<f64>,
    /// Faces normal to ν₂, between `(i, j)` and `(i, j+1)`, index `i·(n−1) + j`.
    y_lo: Vec<f64>,
    y_hi: Vec<f64>,
    diag: Vec<f64>,
}

impl Fp2dSolver {
    pub fn new(grid: Grid2D, params: &ModelParams, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
        }
        if !(params.beta >= MIN_BETA) {
            return Err(Error::InvalidParams(format!(
                "2D solver needs β ≥ {MIN_BETA}, got {}",
                params.beta
            )));
        }
        let model = RateModel::new(*params)?;
        Self::with_field(grid, &model, params.beta, dt)
    }

    pub fn with_field<F: PlanarField>(grid: Grid2D, field: &F, beta: f64, dt: f64) -> Result<Self> {
        let n = grid.n;
        let h = grid.h();
        let d = 0.5 * beta * beta;
        let k = dt * d / (h * h);
        let mut x_lo = vec![0.0; (n - 1) * n];
        let mut x_hi = vec![0.0; (n - 1) * n];
        let mut y_lo = vec![0.0; n * (n - 1)];
        let mut y_hi = vec![0.0; n * (n - 1)];
        let mut diag = vec![1.0; n * n];
        for i in 0..n - 1 {
            for j in 0..n {
                let face = RateVector::new((i + 1) as f64 * h, (j as f64 + 0.5) * h);
                let pe = field.flux(&face)[0] * h / d;
                let f = i * n + j;
                x_lo[f] = k * bernoulli(-pe);
                x_hi[f] = k * bernoulli(pe);
                diag[grid.idx(i, j)] += x_lo[f];
                diag[grid.idx(i + 1, j)] += x_hi[f];
            }
        }
        for i in 0..n {
            for j in 0..n - 1 {
                let face = RateVector::new((i as f64 + 0.5) * h, (j + 1) as f64 * h);
                let pe = field.flux(&face)[1] * h / d;
                let f = i * (n - 1) + j;
                y_lo[f] = k * bernoulli(-pe);
                y_hi[f] = k * bernoulli(pe);
                diag[grid.idx(i, j)] += y_lo[f];
                diag[grid.idx(i, j + 1)] += y_hi[f];
            }
        }
        Ok(Self {
            grid,
            dt,
            x_lo,
            x_hi,
            y_lo,
            y_hi,
            diag,
        })
    }

    /// `out = dt·A·p`: net outflow of each cell over one step.
    pub fn outflow(&self, p: &[f64], out: &mut [f64]) {
        let n = self.grid.n;
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n - 1 {
            let row = i * n;
            for j in 0..n {
                let f = row + j;
                let (a, b) = (row + j, row + n + j);
                let flow = self.x_lo[f] * p[a] - self.x_hi[f] * p[b];
                out[a] += flow;
                out[b] -= flow;
            }
        }
        for i in 0..n {
            let row = i * n;
            let frow = i * (n - 1);
            for j in 0..n - 1 {
                let f = frow + j;
                let (a, b) = (row + j, row + j + 1);
                let flow = self.y_lo[f] * p[a] - self.y_hi[f] * p[b];
                out[a] += flow;
                out[b] -= flow;
            }
        }
    }

    fn apply(&self, p: &[f64], out: &mut [f64]) {
        self.outflow(p, out);
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }

    /// One implicit step. The update is applied in flux form from the
    /// solved state so that mass is conserved to round-off.
    pub fn step(&self, p: &mut [f64], step_index: usize) -> Result<usize> {
        let (x, iters) = self.solve(p, step_index)?;
        let mut flow = vec![0.0; p.len()];
        self.outflow(&x, &mut flow);
        for (v, f) in p.iter_mut().zip(&flow) {
            *v -= f;
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(iters)
    }

    /// Jacobi-preconditioned BiCGSTAB for `(I + dt A) x = b`.
    fn solve(&self, b: &[f64], step_index: usize) -> Result<(Vec<f64>, usize)> {
        let n = b.len();
        let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let bnorm = dot(b, b).sqrt();
        let mut x = b.to_vec();
        if bnorm == 0.0 {
            return Ok((x, 0));
        }
        let mut r = vec![0.0; n];
        self.apply(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let r_hat = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let mut v = vec![0.0; n];
        let mut pdir = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut t = vec![0.0; n];
        for it in 1..=MAX_ITERATIONS {
            if dot(&r, &r).sqrt() <= SOLVER_RTOL * bnorm {
                return Ok((x, it - 1));
            }
            let rho_new = dot(&r_hat, &r);
            if rho_new == 0.0 || omega == 0.0 {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for k in 0..n {
                pdir[k] = r[k] + beta * (pdir[k] - omega * v[k]);
                y[k] = pdir[k] / self.diag[k];
            }
            self.apply(&y, &mut v);
            let rv = dot(&r_hat, &v);
            if rv == 0.0 {
                break;
            }
            alpha = rho / rv;
            for k in 0..n {
                s[k] = r[k] - alpha * v[k];
            }
            if dot(&s, &s).sqrt() <= SOLVER_RTOL * bnorm {
                for k in 0..n {
                    x[k] += alpha * y[k];
                }
                return Ok((x, it));
            }
            for k in 0..n {
                z[k] = s[k] / self.diag[k];
            }
            self.apply(&z, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for k in 0..n {
                x[k] += alpha * y[k] + omega * z[k];
                r[k] = s[k] - omega * t[k];
            }
        }
        let res = dot(&r, &r).sqrt() / bnorm;
        Err(Error::LinearSolver {
            step: step_index,
            detail: format!("BiCGSTAB stalled at relative residual {res:e}"),
        })
    }
}

/// Evolves `p0`, calling `observe` on the initial state, every
/// `snapshot_every` units of model time, and at the end.
pub fn evolve2d_with<O: FnMut(&Density2D)>(
    p0: &Density2D,
    params: &ModelParams,
    dt: f64,
    t_end: f64,
    snapshot_every: f64,
    mut observe: O,
) -> Result<Density2D> {
    if !(t_end >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "horizon must be nonnegative, got {t_end}"
        )));
    }
    let solver = Fp2dSolver::new(p0.grid, params, dt)?;
    let n_steps = (t_end / dt).round() as usize;
    let every = if snapshot_every > 0.0 {
        ((snapshot_every / dt).round() as usize).max(1)
    } else {
        n_steps.max(1)
    };
    let mut state = p0.clone();
    observe(&state);
    let mut warned = false;
    for s in 1..=n_steps {
        let iters = solver.step(&mut state.values, s)?;
        state.time = p0.time + s as f64 * dt;
        if s % every == 0 || s == n_steps {
            debug!("fp2d step {s}: t = {}, {iters} BiCGSTAB iterations", state.time);
            if !warned {
                let bm = state.boundary_mass();
                if bm > BOUNDARY_MASS_WARN {
                    warn!("boundary cells hold {bm:e} of the mass at t = {}", state.time);
                    warned = true;
                }
            }
            observe(&state);
        }
    }
    Ok(state)
}

/// Evolves `p0` and collects the snapshots.
pub fn evolve2d(
    p0: &Density2D,
    params: &ModelParams,
    dt: f64,
    t_end: f64,
    snapshot_every: f64,
) -> Result<Vec<Density2D>> {
    let mut out = Vec::new();
    evolve2d_with(p0, params, dt, t_end, snapshot_every, |s| out.push(s.clone()))?;
    Ok(out)
}

/// Range of `y` over the four corners of the box.
pub fn y_range_of_box(sd: &SpectralDecomposition, nu_max: f64) -> (f64, f64) {
    let ys = [
        sd.y_of(&RateVector::new(0.0, 0.0)),
        sd.y_of(&RateVector::new(nu_max, 0.0)),
        sd.y_of(&RateVector::new(0.0, nu_max)),
        sd.y_of(&RateVector::new(nu_max, nu_max)),
    ];
    (
        ys.iter().copied().fold(f64::INFINITY, f64::min),
        ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    )
}

/// Each cell's mass goes to the bin of its centre's slow coordinate.
pub fn project_onto_y(p: &Density2D, sd: &SpectralDecomposition, y_bins: &Bins) -> Result<Histogram> {
    let g = p.grid;
    let area = p.cell_area();
    let mut acc = Accumulator::new(y_bins);
    for i in 0..g.n {
        for j in 0..g.n {
            acc.add(sd.y_of(&g.center(i, j)), p.values[g.idx(i, j)] * area);
        }
    }
    acc.finish()
}

/// Row or column sums on the cell bins of the axis.
pub fn marginal2d(p: &Density2D, axis: Axis) -> Histogram {
    let g = p.grid;
    let area = p.cell_area();
    let mut h = Histogram::zeros(Bins::uniform(0.0, g.nu_max, g.n));
    for i in 0..g.n {
        for j in 0..g.n {
            let k = match axis {
                Axis::Nu1 => i,
                Axis::Nu2 => j,
            };
            h.mass[k] += p.values[g.idx(i, j)] * area;
        }
    }
    h
}

/// Axis marginal accumulated into arbitrary bins by cell centre.
pub fn marginal2d_binned(p: &Density2D, axis: Axis, bins: &Bins) -> Result<Histogram> {
    let g = p.grid;
    let area = p.cell_area();
    let mut acc = Accumulator::new(bins);
    for i in 0..g.n {
        for j in 0..g.n {
            let c = g.center(i, j);
            let x = match axis {
                Axis::Nu1 => c.nu1,
                Axis::Nu2 => c.nu2,
            };
            acc.add(x, p.values[g.idx(i, j)] * area);
        }
    }
    acc.finish()
}

/// Probability of `{y > 0}`. Cells cut by the line `y = 0` contribute the
/// exact fraction of their area on the positive side.
pub fn rho_p(p: &Density2D, sd: &SpectralDecomposition) -> f64 {
    let g = p.grid;
    let h = g.h();
    let area = h * h;
    let (a, b) = (sd.p_inv[(1, 0)], sd.p_inv[(1, 1)]);
    let c = -(a * sd.nu_eq.nu1 + b * sd.nu_eq.nu2);
    let mut total = 0.0;
    for i in 0..g.n {
        for j in 0..g.n {
            let v = p.values[g.idx(i, j)];
            if v == 0.0 {
                continue;
            }
            let x0 = i as f64 * h;
            let y0 = j as f64 * h;
            let corners = [(x0, y0), (x0 + h, y0), (x0 + h, y0 + h), (x0, y0 + h)];
            let vals = corners.map(|(u, w)| a * u + b * w + c);
            let frac = if vals.iter().all(|&s| s >= 0.0) {
                1.0
            } else if vals.iter().all(|&s| s <= 0.0) {
                0.0
            } else {
                positive_area(&corners, &vals) / area
            };
            total += frac * v;
        }
    }
    (total * area).clamp(0.0, 1.0)
}

/// Area of the part of a convex polygon where the affine function with the
/// given vertex values is positive.
fn positive_area(poly: &[(f64, f64)], vals: &[f64]) -> f64 {
    let mut clipped: Vec<(f64, f64)> = Vec::with_capacity(poly.len() + 1);
    let m = poly.len();
    for k in 0..m {
        let (p, q) = (poly[k], poly[(k + 1) % m]);
        let (sp, sq) = (vals[k], vals[(k + 1) % m]);
        if sp >= 0.0 {
            clipped.push(p);
        }
        if (sp > 0.0 && sq < 0.0) || (sp < 0.0 && sq > 0.0) {
            let t = sp / (sp - sq);
            clipped.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
        }
    }
    let n = clipped.len();
    let mut twice = 0.0;
    for k in 0..n {
        let (p, q) = (clipped[k], clipped[(k + 1) % n]);
        twice += p.0 * q.1 - q.0 * p.1;
    }
    0.5 * twice.abs()
}

/// Standard deviation in `y` of an isotropic blob of the given width in ν.
pub fn blob_y_width(sd: &SpectralDecomposition, width: f64) -> f64 {
    width * sd.p_inv[(1, 0)].hypot(sd.p_inv[(1, 1)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::spectral;
    use nalgebra::{Matrix2, Vector2};

    fn small_grid() -> Grid2D {
        Grid2D::new(40, 10.0).unwrap()
    }

    #[test]
    fn divergence_telescopes() {
        let g = small_grid();
        let params = ModelParams::default();
        let solver = Fp2dSolver::new(g, &params, 0.01).unwrap();
        let p = Density2D::gaussian(g, RateVector::new(3.0, 4.0), 1.0).unwrap();
        let mut out = vec![0.0; g.len()];
        solver.outflow(&p.values, &mut out);
        let sum: f64 = out.iter().sum();
        let scale: f64 = out.iter().map(|v| v.abs()).sum();
        assert!(sum.abs() <= 1e-14 * scale.max(1.0), "{sum}");
    }

    #[test]
    fn beta_floor() {
        let g = small_grid();
        assert!(Fp2dSolver::new(g, &ModelParams::default().with_beta(1e-4), 0.01).is_err());
        assert!(Fp2dSolver::new(g, &ModelParams::default().with_beta(1e-3), 0.01).is_ok());
    }

    #[test]
    fn mass_and_swap_symmetry() {
        let g = small_grid();
        let params = ModelParams::default().with_beta(0.3);
        let sd = spectral(&params).unwrap();
        let p0 = Density2D::gaussian(g, sd.nu_eq, 0.7).unwrap();
        let snaps = evolve2d(&p0, &params, 0.05, 5.0, 1.0).unwrap();
        assert_eq!(snaps.len(), 6);
        for s in &snaps {
            assert!((s.mass() - 1.0).abs() <= 1e-10);
            assert!(s.values.iter().all(|&v| v >= 0.0));
            let sw = s.swapped();
            let diff = s
                .values
                .iter()
                .zip(&sw.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-8, "{diff}");
            assert!((rho_p(s, &sd) - 0.5).abs() <= 1e-6);
            let m1 = marginal2d(s, Axis::Nu1);
            let m2 = marginal2d(s, Axis::Nu2);
            for (a, b) in m1.mass.iter().zip(&m2.mass) {
                assert!((a - b).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn zero_drift_matches_heat_kernel_mass() {
        // pure diffusion from a uniform state stays uniform
        struct Still;
        impl PlanarField for Still {
            fn flux(&self, _: &RateVector) -> Vector2<f64> {
                Vector2::zeros()
            }
            fn jacobian(&self, _: &RateVector) -> Matrix2<f64> {
                Matrix2::zeros()
            }
        }
        let g = Grid2D::new(10, 1.0).unwrap();
        let solver = Fp2dSolver::with_field(g, &Still, 0.2, 0.1).unwrap();
        let mut v = Density2D::uniform(g).unwrap().values;
        let before = v.clone();
        solver.step(&mut v, 1).unwrap();
        for (a, b) in v.iter().zip(&before) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rho_p_of_concentrated_blob() {
        let params = ModelParams::default();
        let sd = spectral(&params).unwrap();
        let g = Grid2D::new(100, 10.0).unwrap();
        let s1 = RateVector::new(1.32308, 5.97334);
        let p = Density2D::gaussian(g, s1, 0.3).unwrap();
        assert!(rho_p(&p, &sd) >= 0.99);
        assert!(rho_p(&p.swapped(), &sd) <= 0.01);
    }

    #[test]
    fn clipping_area() {
        let sq = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        // f = x − 0.25
        let vals = sq.map(|(x, _)| x - 0.25);
        assert!((positive_area(&sq, &vals) - 0.75).abs() < 1e-15);
        // f = x + y − 1: half the square
        let vals = sq.map(|(x, y)| x + y - 1.0);
        assert!((positive_area(&sq, &vals) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn projection_and_binary_round_trip() {
        let params = ModelParams::default();
        let sd = spectral(&params).unwrap();
        let g = small_grid();
        let p = Density2D::gaussian(g, sd.nu_eq, 1.0).unwrap();
        let (lo, hi) = y_range_of_box(&sd, g.nu_max);
        let bins = Bins::uniform(lo - 1e-9, hi + 1e-9, 30);
        let h = project_onto_y(&p, &sd, &bins).unwrap();
        assert!((h.total() - 1.0).abs() <= 1e-10);
        assert!(project_onto_y(&p, &sd, &Bins::uniform(-1.0, 1.0, 4)).is_err());

        let mut buf = Vec::new();
        p.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 8 * g.len());
        let back = Density2D::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn blob_near_saddle_splits() {
        let params = ModelParams::default().with_beta(0.1);
        let sd = spectral(&params).unwrap();
        let g = Grid2D::new(50, 10.0).unwrap();
        let p0 = Density2D::gaussian(g, sd.nu_eq, 0.3).unwrap();
        let end = evolve2d(&p0, &params, 0.2, 200.0, 0.0).unwrap().pop().unwrap();
        let s1 = RateVector::new(1.32308, 5.97334);
        let m1 = end.mass_in_ball(&s1, 1.5);
        let m3 = end.mass_in_ball(&s1.swapped(), 1.5);
        assert!(m1 > 0.25 && (m1 - m3).abs() < 1e-8, "{m1} {m3}");
        let h = marginal2d(&end, Axis::Nu1);
        let low: f64 = h
            .bins
            .centers()
            .iter()
            .zip(&h.mass)
            .filter(|(c, _)| **c < 2.5)
            .map(|(_, m)| m)
            .sum();
        let mid: f64 = h
            .bins
            .centers()
            .iter()
            .zip(&h.mass)
            .filter(|(c, _)| (2.5..4.5).contains(*c))
            .map(|(_, m)| m)
            .sum();
        assert!(low > 0.3 && mid < low, "{low} {mid}");
    }
}
