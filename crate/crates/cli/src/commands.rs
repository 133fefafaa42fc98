use std::io::Write;

use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;

use fpreduce::analysis::{self, EscapeRow, HalfMassRun, PerformanceEstimate, PotentialGap, RhoRun};
use fpreduce::dynsys::{self, FixedPointKind};
use fpreduce::fp1d::{self, Density1D};
use fpreduce::fp2d::{self, Density2D, Grid2D};
use fpreduce::histogram::{Axis, Bins, Histogram};
use fpreduce::mcsde::{self, EnsembleConfig, InitialState, PassageSpec};
use fpreduce::model::{ModelParams, RateVector};
use fpreduce::reduction::{self, SlowManifold};

use crate::config::{Initial1D, RunConfig, SdeStart};
use crate::manifest::OutputDir;

pub struct RunContext<'a> {
    pub cfg: &'a RunConfig,
    pub seed: u64,
}

fn manifold_for(cfg: &RunConfig, params: &ModelParams) -> Result<SlowManifold> {
    reduction::reduce(params, cfg.settings.y_max, cfg.settings.n_y)
        .with_context(|| format!("reducing at delta_lambda = {}", params.delta_lambda))
}

fn nu_bins(cfg: &RunConfig) -> Bins {
    Bins::uniform(0.0, cfg.params.nu_max, cfg.settings.marginal_bins)
}

/// The two stable states ordered as (`y > 0`, `y < 0`).
fn decision_states(params: &ModelParams, sd: &dynsys::SpectralDecomposition) -> Result<(RateVector, RateVector)> {
    let fps = dynsys::find_fixed_points(params)?;
    let stable: Vec<RateVector> = fps
        .iter()
        .filter(|f| f.kind == FixedPointKind::StableNode)
        .map(|f| f.location)
        .collect();
    if stable.len() != 2 {
        anyhow::bail!(fpreduce::Error::PreBifurcation { zeros: fps.len() });
    }
    let (a, b) = (stable[0], stable[1]);
    Ok(if sd.y_of(&a) > sd.y_of(&b) { (a, b) } else { (b, a) })
}

fn write_hist_pair(w: &mut dyn Write, a: &Histogram, b: &Histogram, names: (&str, &str)) -> std::io::Result<()> {
    writeln!(w, "bin_center,{},{}", names.0, names.1)?;
    for ((c, x), y) in a.bins.centers().iter().zip(&a.mass).zip(&b.mass) {
        writeln!(w, "{c},{x},{y}")?;
    }
    Ok(())
}

pub fn bifurcate(ctx: &RunContext, out: &mut OutputDir) -> Result<()> {
    let s = &ctx.cfg.settings;
    let branch = dynsys::bifurcation_scan(&ctx.cfg.params, (s.w_plus_lo, s.w_plus_hi), s.w_plus_step)?;
    if let Some(w) = branch.critical_w_plus {
        info!("pitchfork near w_plus = {w}");
    }
    for sample in branch.samples.iter().filter(|s| s.note.is_some()) {
        warn!("w_plus = {}: {}", sample.w_plus, sample.note.as_deref().unwrap_or(""));
    }
    out.write("bifurcation.csv", |w| branch.write_csv(w))
}

pub fn reduce(ctx: &RunContext, out: &mut OutputDir) -> Result<()> {
    let cfg = ctx.cfg;
    let manifolds: Vec<(f64, Result<SlowManifold>)> = cfg
        .settings
        .delta_lambdas
        .par_iter()
        .map(|&dl| (dl, manifold_for(cfg, &cfg.params.with_delta_lambda(dl))))
        .collect();
    for (dl, m) in manifolds {
        let m = m?;
        let params = cfg.params.with_delta_lambda(dl);
        out.write(&format!("manifold_dl{dl}.csv"), |w| m.write_csv(w, &params))?;
    }
    let gaps: Vec<Result<(f64, PotentialGap)>> = cfg
        .settings
        .gap_delta_lambdas
        .par_iter()
        .map(|&dl| {
            let m = manifold_for(cfg, &cfg.params.with_delta_lambda(dl))?;
            Ok((dl, analysis::kramers_gap(&m)?))
        })
        .collect();
    let gaps = gaps.into_iter().collect::<Result<Vec<_>>>()?;
    out.write("gap_sweep.csv", |w| analysis::write_gap_csv(&gaps, w))
}

pub fn steady(ctx: &RunContext, out: &mut OutputDir) -> Result<()> {
    let cfg = ctx.cfg;
    let bins = nu_bins(cfg);
    type Row = (f64, SlowManifold, Density1D, Histogram, Histogram);
    let rows: Vec<Result<Row>> = cfg
        .settings
        .delta_lambdas
        .par_iter()
        .map(|&dl| {
            let m = manifold_for(cfg, &cfg.params.with_delta_lambda(dl))?;
            let q = fp1d::stationary(&m)?;
            let h1 = fp1d::marginal_nu(&q, &m, Axis::Nu1, &bins)?;
            let h2 = fp1d::marginal_nu(&q, &m, Axis::Nu2, &bins)?;
            Ok((dl, m, q, h1, h2))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    for (dl, _, q, h1, h2) in &rows {
        out.write(&format!("stationary_dl{dl}.csv"), |w| q.write_csv(w))?;
        out.write(&format!("stationary_marginal_nu1_dl{dl}.csv"), |w| h1.write_csv(w))?;
        out.write(&format!("stationary_marginal_nu2_dl{dl}.csv"), |w| h2.write_csv(w))?;
    }
    out.write("stationary_summary.csv", |w| {
        writeln!(w, "delta_lambda,beta_y,rho_plus,mean_y")?;
        for (dl, m, q, _, _) in &rows {
            writeln!(w, "{dl},{},{},{}", m.beta_y, analysis::rho_plus(q), q.mean_y())?;
        }
        Ok(())
    })
}

pub fn evolve1d(ctx: &RunContext, out: &mut OutputDir) -> Result<()> {
    let cfg = ctx.cfg;
    let s = &cfg.settings;
    let m = manifold_for(cfg, &cfg.params)?;
    let q0 = match s.init_1d {
        Initial1D::Delta => Density1D::delta_above(&m.y, s.init_center)?,
        Initial1D::Gaussian => Density1D::gaussian(&m.y, s.init_center, s.init_width)?,
        Initial1D::Uniform => Density1D::uniform(&m.y)?,
    };
    let snaps = fp1d::evolve(&q0, &m, s.dt_1d, s.t_end_1d, s.snapshot_every_1d)?;
    let tau = cfg.params.tau_relax;
    out.write("evolve1d_snapshots.csv", |w| {
        writeln!(w, "t_tau,t_seconds,y,q")?;
        for snap in &snaps {
            for (y, q) in snap.y.iter().zip(&snap.values) {
                writeln!(w, "{},{},{y},{q}", snap.time, snap.time * tau)?;
            }
        }
        Ok(())
    })?;
    out.write("evolve1d_mean.csv", |w| fp1d::write_mean_series(&snaps, w, tau))?;
    let last = snaps.last().expect("evolve returns the initial state");
    let h = fp1d::marginal_nu(last, &m, Axis::Nu1, &nu_bins(cfg))?;
    out.write("evolve1d_final_marginal_nu1.csv", |w| h.write_csv(w))
}

pub fn evolve2d(ctx: &RunContext, out: &mut OutputDir) -> Result<()> {
    let cfg = ctx.cfg;
    let s = &cfg.settings;
    let params = cfg.params;
    let m = manifold_for(cfg, &params)?;
    let sd = m.sd;
    let grid = Grid2D::new(s.n_2d, params.nu_max)?;
    let p0 = Density2D::gaussian(grid, sd.from_xy(0.0, s.blob_y), s.blob_width)?;
    let mut series = Vec::new();
    let end = fp2d::evolve2d_with(&p0, &params, s.dt_2d, s.t_end_2d, s.snapshot_every_2d, |p| {
        series.push((p.time, p.mass(), fp2d::rho_p(p, &sd), p.boundary_mass()))
    })?;
    let q0 = Density1D::gaussian(&m.y, s.blob_y, fp2d::blob_y_width(&sd, s.blob_width))?;
    let q = fp1d::evolve(&q0, &m, s.dt_1d, s.t_end_2d, 0.0)?
        .pop()
        .expect("evolve returns the initial state");
    let y_bins = analysis::box_y_bins(&sd, params.nu_max, s.y_bins);
    let cv = analysis::cross_validate(&end, &q, &m, &nu_bins(cfg), &y_bins)?;
    info!("L1(nu1) = {}, L1(y) = {}", cv.l1_nu1, cv.l1_y);

    let tau = params.tau_relax;
    out.write("evolve2d_series.csv", |w| {
        writeln!(w, "t_tau,t_seconds,mass,rho_p,boundary_mass")?;
        for (t, mass, rho, bm) in &series {
            writeln!(w, "{t},{},{mass},{rho},{bm}", t * tau)?;
        }
        Ok(())
    })?;
    out.write("evolve2d_final.csv", |w| end.write_csv(w))?;
    if s.binary_snapshot {
        out.write("evolve2d_final.bin", |w| end.write_binary(w))?;
    }
    out.write("compare_marginal_nu1.csv", |w| {
        write_hist_pair(w, &cv.nu1_2d, &cv.nu1_1d, ("mass_2d", "mass_1d"))
    })?;
    out.write("compare_projection_y.csv", |w| {
        write_hist_pair(w, &cv.y_2d, &cv.y_1d, ("mass_2d", "mass_1d"))
    })?;
    out.write("compare_summary.csv", |w| {
        writeln!(w, "quantity,l1_distance")?;
        writeln!(w, "marginal_nu1,{}", cv.l1_nu1)?;
        writeln!(w, "projection_y,{}", cv.l1_y)
    })
}

pub fn sde(ctx: &RunContext, out: &mut OutputDir) -> Result<()> {
    let cfg = ctx.cfg;
    let s = &cfg.settings;
    let params = cfg.params;
    let m = manifold_for(cfg, &params)?;
    let sd = m.sd;
    let initial = match s.sde_start {
        SdeStart::Spontaneous => InitialState::Blob {
            center: sd.nu_eq,
            width: s.sde_width,
        },
        SdeStart::Decision => InitialState::Point(decision_states(&params, &sd)?.0),
        SdeStart::Uniform => InitialState::Uniform,
    };
    let ens = mcsde::simulate(
        &EnsembleConfig {
            n_paths: s.n_paths,
            dt: s.dt_sde,
            t_end: s.t_end_sde,
            seed: ctx.seed,
            initial,
        },
        &params,
    )?;
    let y_bins = analysis::box_y_bins(&sd, params.nu_max, s.y_bins);
    let mut mc = Histogram::zeros(y_bins.clone());
    let ys: Vec<f64> = ens.final_states.iter().map(|nu| sd.y_of(nu)).collect();
    let w = 1.0 / ys.len() as f64;
    for &y in &ys {
        if let Some(k) = y_bins.index_of(y) {
            mc.mass[k] += w;
        }
    }
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let se = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0) / n).sqrt();

    out.write("sde_final.csv", |w| ens.write_final_csv(w))?;
    let reference = if m.beta_y > 0.0 {
        Some(fp1d::stationary(&m)?.bin_masses(&y_bins)?)
    } else {
        None
    };
    match &reference {
        Some(q) => {
            out.write("sde_y_histogram.csv", |w| {
                write_hist_pair(w, &mc, q, ("mc_mass", "stationary_mass"))
            })?;
        }
        None => out.write("sde_y_histogram.csv", |w| mc.write_csv(w))?,
    }
    out.write("sde_summary.csv", |w| {
        writeln!(w, "n_paths,t_end_tau,mean_y,stderr_y,l1_to_stationary")?;
        let l1 = reference.as_ref().map_or(f64::NAN, |q| mc.l1_distance(q));
        writeln!(w, "{},{},{mean},{se},{l1}", s.n_paths, s.t_end_sde)
    })
}

pub fn escape(ctx: &RunContext, out: &mut OutputDir) -> Result<()> {
    let cfg = ctx.cfg;
    let s = &cfg.settings;
    let params = cfg.params;
    if params.delta_lambda != 0.0 {
        warn!(
            "escape analysis assumes an unbiased model, delta_lambda = {}",
            params.delta_lambda
        );
    }
    let m = manifold_for(cfg, &params)?;
    let gap = analysis::kramers_gap(&m)?;
    let (origin, target) = decision_states(&params, &m.sd)?;
    let spec = PassageSpec {
        start: origin,
        target,
        radius: s.radius,
    };
    let mut rows = Vec::new();
    for &beta in &s.betas {
        let run = EnsembleConfig {
            n_paths: s.escape_paths,
            dt: s.escape_dt,
            t_end: s.escape_t_end,
            seed: ctx.seed,
            initial: InitialState::Point(origin),
        };
        let r = mcsde::first_passage(&run, &params.with_beta(beta), &spec)
            .with_context(|| format!("first passage at beta = {beta}"))?;
        info!(
            "beta = {beta}: {} of {} paths hit, mean {}",
            r.n_hits,
            r.times.len(),
            r.mle_mean
        );
        out.write(&format!("passage_beta{beta}.csv"), |w| r.write_csv(w))?;
        rows.push(EscapeRow {
            beta,
            mean_t: r.mle_mean,
            ci_low: r.mle_ci.0,
            ci_high: r.mle_ci.1,
        });
    }
    out.write("escape_table.csv", |w| analysis::write_escape_csv(&rows, gap.h_g, w))?;
    if rows.len() >= 2 {
        let betas: Vec<f64> = rows.iter().map(|r| r.beta).collect();
        let means: Vec<f64> = rows.iter().map(|r| r.mean_t).collect();
        let (slope, intercept) = analysis::arrhenius_fit(&betas, &means)?;
        out.write("escape_fit.csv", |w| {
            writeln!(w, "fitted_slope,intercept,H_G,slope_over_H_G")?;
            writeln!(w, "{slope},{intercept},{},{}", gap.h_g, slope / gap.h_g)
        })?;
    }

    if s.escape_2d_t_end > 0.0 {
        let run = HalfMassRun {
            n: s.escape_2d_n,
            dt: s.escape_2d_dt,
            t_end: s.escape_2d_t_end,
            sample_every: s.escape_2d_sample_every,
            radius: s.radius,
            blob_width: s.radius * 0.5,
        };
        let results: Vec<Result<(f64, analysis::EscapeOutcome)>> = s
            .betas
            .par_iter()
            .map(|&beta| {
                let (_, outcome) = analysis::half_mass_escape(&params.with_beta(beta), &origin, &target, &run)?;
                Ok((beta, outcome))
            })
            .collect();
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let tau = params.tau_relax;
        out.write("escape_2d.csv", |w| {
            writeln!(w, "beta,escape_time_tau,escape_time_seconds,censored")?;
            for (beta, o) in &results {
                match o {
                    analysis::EscapeOutcome::Escaped { time } => writeln!(w, "{beta},{time},{},false", time * tau)?,
                    analysis::EscapeOutcome::Censored { t_end } => writeln!(w, "{beta},{t_end},{},true", t_end * tau)?,
                }
            }
            Ok(())
        })?;
    }
    Ok(())
}

pub fn perf(ctx: &RunContext, out: &mut OutputDir) -> Result<()> {
    let cfg = ctx.cfg;
    let s = &cfg.settings;
    let run = RhoRun {
        n: s.perf_n_2d,
        dt: s.perf_dt_2d,
        t_end: s.perf_t_end,
        sample_every: s.perf_sample_every,
        fit_from: s.perf_fit_from,
        blob_width: s.blob_width,
    };
    type Row = (PerformanceEstimate, Vec<(f64, f64)>);
    let rows: Vec<Result<Row>> = s
        .perf_delta_lambdas
        .par_iter()
        .map(|&dl| {
            let params = cfg.params.with_delta_lambda(dl);
            let m = manifold_for(cfg, &params)?;
            let rho_plus = analysis::rho_plus(&fp1d::stationary(&m)?);
            let (series, fit) = analysis::rho_p_run(&params, &m.sd, &run)?;
            let (rho_infinity, a, tau_r) = match fit {
                Ok(f) => (f.rho_infinity, f.a, f.tau_r),
                Err(e) => {
                    warn!("delta_lambda = {dl}: {e}");
                    (f64::NAN, f64::NAN, f64::NAN)
                }
            };
            Ok((
                PerformanceEstimate {
                    delta_lambda: dl,
                    rho_plus,
                    rho_infinity,
                    a,
                    tau_r,
                },
                series,
            ))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let tau = cfg.params.tau_relax;
    for (est, series) in &rows {
        out.write(&format!("rho_p_dl{}.csv", est.delta_lambda), |w| {
            writeln!(w, "t_tau,t_seconds,rho_p")?;
            for (t, r) in series {
                writeln!(w, "{t},{},{r}", t * tau)?;
            }
            Ok(())
        })?;
    }
    let table: Vec<PerformanceEstimate> = rows.iter().map(|(e, _)| *e).collect();
    out.write("performance.csv", |w| analysis::write_performance_csv(&table, w))
}
