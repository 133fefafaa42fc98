//! Two-population firing-rate model: parameters, connectivity, sigmoid
//! response and the deterministic drift `F(ν) = −ν + Φ(Λ + W ν)`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar parameters of the rate model. Rates and stimuli are in Hz,
/// `tau_relax` in seconds; every solver works in units where it equals one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub w_plus: f64,
    pub w_i: f64,
    pub r: f64,
    pub lambda1: f64,
    pub delta_lambda: f64,
    pub beta: f64,
    pub tau_relax: f64,
    pub alpha: f64,
    pub nu_c: f64,
    pub nu_max: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            w_plus: 2.35,
            w_i: 1.9,
            r: 0.3,
            lambda1: 15.0,
            delta_lambda: 0.0,
            beta: 0.1,
            tau_relax: 0.01,
            alpha: 4.0,
            nu_c: 20.0,
            nu_max: 10.0,
        }
    }
}

pub const PARAM_KEYS: [&str; 10] = [
    "w_plus",
    "w_i",
    "r",
    "lambda1",
    "delta_lambda",
    "beta",
    "tau_relax",
    "alpha",
    "nu_c",
    "nu_max",
];

impl ModelParams {
    pub fn with_delta_lambda(mut self, delta_lambda: f64) -> Self {
        self.delta_lambda = delta_lambda;
        self
    }

    pub fn with_w_plus(mut self, w_plus: f64) -> Self {
        self.w_plus = w_plus;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("w_plus", self.w_plus),
            ("w_i", self.w_i),
            ("r", self.r),
            ("lambda1", self.lambda1),
            ("delta_lambda", self.delta_lambda),
            ("beta", self.beta),
            ("tau_relax", self.tau_relax),
            ("alpha", self.alpha),
            ("nu_c", self.nu_c),
            ("nu_max", self.nu_max),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("{name} is not finite")));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("nu_c", self.nu_c),
            ("nu_max", self.nu_max),
            ("tau_relax", self.tau_relax),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidParams(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// Cross-excitation `w₋ = 1 − r(w₊ − 1)/(1 − r)`.
    pub fn w_minus(&self) -> Result<f64> {
        if (1.0 - self.r).abs() < f64::EPSILON {
            return Err(Error::DegenerateParameter("r = 1 makes w_minus undefined".into()));
        }
        Ok(1.0 - self.r * (self.w_plus - 1.0) / (1.0 - self.r))
    }

    /// Whether `w₋ < w_I < w₊` (cross-inhibition plus self-excitation).
    /// Informational only; nothing downstream requires it.
    pub fn is_cross_inhibiting(&self) -> Result<bool> {
        let wm = self.w_minus()?;
        Ok(wm < self.w_i && self.w_i < self.w_plus)
    }

    pub fn lambda(&self) -> Vector2<f64> {
        Vector2::new(self.lambda1, self.lambda1 + self.delta_lambda)
    }

    /// Parses a flat `key = value` file (`#` starts a comment) or a JSON
    /// object, starting from the defaults. Unknown keys are rejected.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        let params: ModelParams = if trimmed.starts_with('{') {
            let map: serde_json::Map<String, serde_json::Value> =
                serde_json::from_str(trimmed).map_err(|e| Error::Config(e.to_string()))?;
            if let Some(k) = map.keys().find(|k| !PARAM_KEYS.contains(&k.as_str())) {
                return Err(Error::UnknownKey(k.clone()));
            }
            serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?
        } else {
            let kv = parse_key_values(text)?;
            Self::from_key_values(&kv)?
        };
        params.validate()?;
        Ok(params)
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_config_str(&text)
    }

    pub fn from_key_values(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut p = ModelParams::default();
        for (k, v) in kv {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::Config(format!("{k}: cannot parse `{v}` as a number")))?;
            match k.as_str() {
                "w_plus" => p.w_plus = x,
                "w_i" => p.w_i = x,
                "r" => p.r = x,
                "lambda1" => p.lambda1 = x,
                "delta_lambda" => p.delta_lambda = x,
                "beta" => p.beta = x,
                "tau_relax" => p.tau_relax = x,
                "alpha" => p.alpha = x,
                "nu_c" => p.nu_c = x,
                "nu_max" => p.nu_max = x,
                _ => return Err(Error::UnknownKey(k.clone())),
            }
        }
        Ok(p)
    }
}

/// Splits `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let key = k.trim().to_string();
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("duplicate key `{key}`")));
        }
    }
    Ok(out)
}

/// Symmetric 2×2 synaptic matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Connectivity {
    pub w11: f64,
    pub w12: f64,
    pub w21: f64,
    pub w22: f64,
}

impl Connectivity {
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.w11, self.w12, self.w21, self.w22)
    }
}

pub fn connectivity(params: &ModelParams) -> Result<Connectivity> {
    let wm = params.w_minus()?;
    let self_w = params.w_plus - params.w_i;
    let cross = wm - params.w_i;
    Ok(Connectivity {
        w11: self_w,
        w12: cross,
        w21: cross,
        w22: self_w,
    })
}

/// A point `(ν₁, ν₂)` in the firing-rate plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RateVector {
    pub nu1: f64,
    pub nu2: f64,
}

impl RateVector {
    pub const fn new(nu1: f64, nu2: f64) -> Self {
        Self { nu1, nu2 }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.nu1, self.nu2)
    }

    pub fn swapped(&self) -> Self {
        Self::new(self.nu2, self.nu1)
    }

    pub fn distance(&self, other: &RateVector) -> f64 {
        (self.nu1 - other.nu1).hypot(self.nu2 - other.nu2)
    }

    pub fn is_finite(&self) -> bool {
        self.nu1.is_finite() && self.nu2.is_finite()
    }
}

impl From<Vector2<f64>> for RateVector {
    fn from(v: Vector2<f64>) -> Self {
        Self::new(v[0], v[1])
    }
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `φ(x) = ν_c / (1 + exp(−α(x/ν_c − 1)))`, evaluated without overflow.
pub fn sigmoid(x: f64, params: &ModelParams) -> f64 {
    params.nu_c * logistic(params.alpha * (x / params.nu_c - 1.0))
}

/// `φ′(x) = α s(1 − s)` with `s` the logistic value; peaks at `α/4`.
pub fn sigmoid_derivative(x: f64, params: &ModelParams) -> f64 {
    let t = params.alpha * (x / params.nu_c - 1.0);
    // s(1-s) = s(-t)·s(t) keeps full relative precision in both tails.
    params.alpha * logistic(t) * logistic(-t)
}

/// A smooth planar vector field with an analytic Jacobian.
pub trait PlanarField {
    fn flux(&self, nu: &RateVector) -> Vector2<f64>;
    fn jacobian(&self, nu: &RateVector) -> Matrix2<f64>;
}

/// Parameters with the connectivity resolved once.
#[derive(Debug, Clone, Copy)]
pub struct RateModel {
    pub params: ModelParams,
    pub conn: Connectivity,
    w: Matrix2<f64>,
    lambda: Vector2<f64>,
}

impl RateModel {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let conn = connectivity(&params)?;
        Ok(Self {
            params,
            conn,
            w: conn.matrix(),
            lambda: params.lambda(),
        })
    }

    /// Mean excitations `z = Λ + W ν`.
    pub fn excitation(&self, nu: &RateVector) -> Vector2<f64> {
        self.lambda + self.w * nu.as_vector()
    }
}

impl PlanarField for RateModel {
    fn flux(&self, nu: &RateVector) -> Vector2<f64> {
        let z = self.excitation(nu);
        Vector2::new(
            -nu.nu1 + sigmoid(z[0], &self.params),
            -nu.nu2 + sigmoid(z[1], &self.params),
        )
    }

    fn jacobian(&self, nu: &RateVector) -> Matrix2<f64> {
        let z = self.excitation(nu);
        let d1 = sigmoid_derivative(z[0], &self.params);
        let d2 = sigmoid_derivative(z[1], &self.params);
        Matrix2::new(
            -1.0 + self.w[(0, 0)] * d1,
            self.w[(0, 1)] * d1,
            self.w[(1, 0)] * d2,
            -1.0 + self.w[(1, 1)] * d2,
        )
    }
}

pub fn flux(nu: &RateVector, params: &ModelParams) -> Result<Vector2<f64>> {
    Ok(RateModel::new(*params)?.flux(nu))
}

pub fn jacobian(nu: &RateVector, params: &ModelParams) -> Result<Matrix2<f64>> {
    Ok(RateModel::new(*params)?.jacobian(nu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn defaults() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn sigmoid_midpoint_and_saturation() {
        let p = defaults();
        assert_eq!(sigmoid(20.0, &p), 10.0);
        assert!((sigmoid(1e6, &p) - 20.0).abs() < 1e-10);
        assert!(sigmoid(-1e6, &p) >= 0.0);
        // 20 / (1 + e^4), 30-digit reference
        assert!((sigmoid(0.0, &p) - 0.359_724_199_241_831_16).abs() < 1e-14);
    }

    #[test]
    fn sigmoid_derivative_shape() {
        let p = defaults();
        assert!((sigmoid_derivative(20.0, &p) - 1.0).abs() < 1e-15);
        let d = 5.0;
        assert!((sigmoid_derivative(25.0, &p) - sigmoid_derivative(15.0, &p)).abs() < 1e-15);
        let x = 15.0;
        let h = 1e-4;
        let fd = (sigmoid(x + h, &p) - sigmoid(x - h, &p)) / (2.0 * h);
        assert!((sigmoid_derivative(x, &p) - fd).abs() <= 1e-6);
        assert!(sigmoid_derivative(20.0 + d, &p) > 0.0);
    }

    #[test]
    fn sigmoid_monotone_and_bounded_on_scan() {
        let p = defaults();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..10_000 {
            let x = -200.0 + 400.0 * i as f64 / 9_999.0;
            let s = sigmoid(x, &p);
            assert!(s > 0.0 && s < p.nu_c, "x={x} s={s}");
            assert!(s > prev || (s == prev && s > 19.999), "not increasing at {x}");
            prev = s;
        }
    }

    #[test]
    fn connectivity_values() {
        let p = defaults();
        let c = connectivity(&p).unwrap();
        assert!((p.w_minus().unwrap() - 0.421_428_571_428_571_4).abs() < 1e-12);
        assert!((c.w11 - 0.45).abs() < 1e-12);
        assert!((c.w12 + 1.478_571_428_571_428_6).abs() < 1e-12);
        assert_eq!(c.w11, c.w22);
        assert_eq!(c.w12, c.w21);
        assert!(p.is_cross_inhibiting().unwrap());

        for r in [0.1, 0.3, 0.7] {
            let q = ModelParams { w_plus: 1.0, r, ..p };
            assert_eq!(q.w_minus().unwrap(), 1.0);
        }
        let bad = ModelParams { r: 1.0, ..p };
        assert!(matches!(connectivity(&bad), Err(Error::DegenerateParameter(_))));
    }

    #[test]
    fn flux_vanishes_near_printed_equilibria() {
        let p = defaults();
        for (a, b) in [(3.19, 3.19), (1.32, 5.97), (5.97, 1.32)] {
            let f = flux(&RateVector::new(a, b), &p).unwrap();
            assert!(f.norm() <= 5e-2, "({a},{b}) -> {}", f.norm());
        }
    }

    #[test]
    fn flux_exchange_symmetry() {
        let m = RateModel::new(defaults()).unwrap();
        let f = m.flux(&RateVector::new(1.0, 4.0));
        let g = m.flux(&RateVector::new(4.0, 1.0));
        assert_eq!(f[0], g[1]);
        assert_eq!(f[1], g[0]);
    }

    #[test]
    fn flux_bounded_on_grid() {
        let m = RateModel::new(defaults()).unwrap();
        for i in 0..=100 {
            for j in 0..=100 {
                let nu = RateVector::new(i as f64 * 0.1, j as f64 * 0.1);
                let f = m.flux(&nu);
                assert!(f[0] > -nu.nu1 && f[0] < 20.0 - nu.nu1);
                assert!(f[1] > -nu.nu2 && f[1] < 20.0 - nu.nu2);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_at_2_5() {
        let m = RateModel::new(defaults()).unwrap();
        let nu = RateVector::new(2.0, 5.0);
        let j = m.jacobian(&nu);
        let fd = fd_jacobian(&m, &nu);
        assert!((j - fd).amax() <= 1e-6);
    }

    #[test]
    fn jacobian_symmetric_on_diagonal() {
        let m = RateModel::new(defaults()).unwrap();
        let j = m.jacobian(&RateVector::new(3.0, 3.0));
        assert_eq!(j[(0, 0)], j[(1, 1)]);
        assert_eq!(j[(0, 1)], j[(1, 0)]);
    }

    fn fd_jacobian(m: &RateModel, nu: &RateVector) -> Matrix2<f64> {
        let h = 1e-5;
        let mut out = Matrix2::zeros();
        for c in 0..2 {
            let mut a = *nu;
            let mut b = *nu;
            if c == 0 {
                a.nu1 += h;
                b.nu1 -= h;
            } else {
                a.nu2 += h;
                b.nu2 -= h;
            }
            let d = (m.flux(&a) - m.flux(&b)) / (2.0 * h);
            out.set_column(c, &d);
        }
        out
    }

    #[test]
    fn config_key_value_and_json() {
        let p = ModelParams::from_config_str("# comment\nw_plus = 2.2\ndelta_lambda=0.05\n").unwrap();
        assert_eq!(p.w_plus, 2.2);
        assert_eq!(p.delta_lambda, 0.05);
        assert_eq!(p.alpha, 4.0);
        let q = ModelParams::from_config_str(r#"{"beta": 0.3, "nu_max": 12}"#).unwrap();
        assert_eq!(q.beta, 0.3);
        assert_eq!(q.nu_max, 12.0);
        assert_eq!(
            ModelParams::from_config_str("gamma = 1").unwrap_err(),
            Error::UnknownKey("gamma".into())
        );
        assert_eq!(
            ModelParams::from_config_str(r#"{"gamma": 1}"#).unwrap_err(),
            Error::UnknownKey("gamma".into())
        );
        assert!(ModelParams::from_config_str("alpha = -1").is_err());
    }

    proptest! {
        #[test]
        fn jacobian_matches_fd_random(a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let m = RateModel::new(defaults()).unwrap();
            let nu = RateVector::new(a, b);
            prop_assert!((m.jacobian(&nu) - fd_jacobian(&m, &nu)).amax() <= 1e-6);
        }

        #[test]
        fn swap_conjugates_flux(a in -5.0f64..15.0, b in -5.0f64..15.0) {
            let m = RateModel::new(defaults()).unwrap();
            let nu = RateVector::new(a, b);
            let f = m.flux(&nu);
            let g = m.flux(&nu.swapped());
            prop_assert_eq!(f[0], g[1]);
            prop_assert_eq!(f[1], g[0]);
        }
    }
}
