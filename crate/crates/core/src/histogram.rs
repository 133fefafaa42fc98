//! Binned one-dimensional mass distributions shared by the 1D, 2D and
//! Monte Carlo pipelines.

use std::io::{self, Write};

use crate::error::{Error, Result};

/// Mass allowed to fall outside a set of bins before it is a coverage error.
pub const COVERAGE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Nu1,
    Nu2,
}

/// Monotone bin edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Bins {
    edges: Vec<f64>,
}

impl Bins {
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Self {
        assert!(n > 0 && hi > lo, "bins need n > 0 and hi > lo");
        let w = (hi - lo) / n as f64;
        let mut edges: Vec<f64> = (0..=n).map(|k| lo + k as f64 * w).collect();
        edges[n] = hi;
        Self { edges }
    }

    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParams("bin edges must be strictly increasing".into()));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lo(&self) -> f64 {
        self.edges[0]
    }

    pub fn hi(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Bin containing `x`; the upper edge belongs to the last bin.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo() && x <= self.hi()) {
            return None;
        }
        let k = self.edges.partition_point(|&e| e <= x);
        Some(k.saturating_sub(1).min(self.len() - 1))
    }
}

/// Mass per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Bins,
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn zeros(bins: Bins) -> Self {
        let n = bins.len();
        Self {
            bins,
            mass: vec![0.0; n],
        }
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Sum of absolute per-bin differences. Both histograms must share bins.
    pub fn l1_distance(&self, other: &Histogram) -> f64 {
        assert_eq!(self.bins, other.bins, "histograms on different bins");
        self.mass.iter().zip(&other.mass).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Same masses in reversed bin order (mirror about the centre of the range).
    pub fn reversed(&self) -> Vec<f64> {
        self.mass.iter().rev().copied().collect()
    }

    /// Mean of the bin centres weighted by mass.
    pub fn mean(&self) -> f64 {
        let t = self.total();
        self.bins
            .centers()
            .iter()
            .zip(&self.mass)
            .map(|(c, m)| c * m)
            .sum::<f64>()
            / t
    }

    /// Centres of bins that are strict local maxima of the mass.
    pub fn modes(&self) -> Vec<f64> {
        let c = self.bins.centers();
        let m = &self.mass;
        (0..m.len())
            .filter(|&k| {
                let left = if k == 0 { f64::NEG_INFINITY } else { m[k - 1] };
                let right = if k + 1 == m.len() { f64::NEG_INFINITY } else { m[k + 1] };
                m[k] > left && m[k] >= right && m[k] > 0.0
            })
            .map(|k| c[k])
            .collect()
    }

    /// CSV with header `bin_center,mass`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "bin_center,mass")?;
        for (c, m) in self.bins.centers().iter().zip(&self.mass) {
            writeln!(out, "{c},{m}")?;
        }
        Ok(())
    }
}

/// Accumulates point masses, tracking what falls outside the bins.
pub(crate) struct Accumulator {
    pub hist: Histogram,
    pub outside: f64,
}

impl Accumulator {
    pub fn new(bins: &Bins) -> Self {
        Self {
            hist: Histogram::zeros(bins.clone()),
            outside: 0.0,
        }
    }

    pub fn add(&mut self, x: f64, mass: f64) {
        match self.hist.bins.index_of(x) {
            Some(k) => self.hist.mass[k] += mass,
            None => self.outside += mass,
        }
    }

    pub fn finish(self) -> Result<Histogram> {
        if self.outside > COVERAGE_TOL {
            return Err(Error::Coverage {
                outside_mass: self.outside,
            });
        }
        Ok(self.hist)
    }
}
