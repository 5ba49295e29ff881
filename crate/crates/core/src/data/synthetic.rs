//! Generators for the worked examples and their closed-form population values.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{seeded_rng, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Rademacher X1, X2 with T = X1·X2: each feature alone is independent of T.
    PairwiseIndependence,
    /// Standard normal X1, X2 with T = (2·X1 + 2·X2)².
    Nonlinearity,
    /// Standard normal X1, X2 with T = X1·X2.
    NonAdditive,
    /// A, B standard normal, X1 = 0.1·A + B, X2 = 0.1·A − B, T = A.
    RankDeficiency,
    /// Additive target over four correlated weather-like drivers plus noise.
    Pm25Like,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 5] = [
        SyntheticKind::PairwiseIndependence,
        SyntheticKind::Nonlinearity,
        SyntheticKind::NonAdditive,
        SyntheticKind::RankDeficiency,
        SyntheticKind::Pm25Like,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticKind::PairwiseIndependence => "pairwise_independence",
            SyntheticKind::Nonlinearity => "nonlinearity",
            SyntheticKind::NonAdditive => "non_additive",
            SyntheticKind::RankDeficiency => "rank_deficiency",
            SyntheticKind::Pm25Like => "pm25_like",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SyntheticKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownExample(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub seed: u64,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::InvalidDataset("synthetic row count must be at least 1".into()));
    }
    let mut rng = seeded_rng(spec.seed);
    let n = spec.n;
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    match spec.kind {
        SyntheticKind::PairwiseIndependence => {
            let mut rng = seeded_rng(spec.seed);
            let mut sign = || if rng.random::<bool>() { 1.0 } else { -1.0 };
            let (x1, x2): (Vec<f64>, Vec<f64>) = (0..n).map(|_| (sign(), sign())).unzip();
            let t = x1.iter().zip(&x2).map(|(a, b)| a * b).collect();
            Dataset::new(names(&["X1", "X2"]), vec![x1, x2], "T", t)
        }
        SyntheticKind::Nonlinearity | SyntheticKind::NonAdditive => {
            let (x1, x2): (Vec<f64>, Vec<f64>) = (0..n).map(|_| (normal(), normal())).unzip();
            let t = x1
                .iter()
                .zip(&x2)
                .map(|(&a, &b)| match spec.kind {
                    SyntheticKind::Nonlinearity => (2.0 * a + 2.0 * b).powi(2),
                    _ => a * b,
                })
                .collect();
            Dataset::new(names(&["X1", "X2"]), vec![x1, x2], "T", t)
        }
        SyntheticKind::RankDeficiency => {
            let mut x1 = Vec::with_capacity(n);
            let mut x2 = Vec::with_capacity(n);
            let mut t = Vec::with_capacity(n);
            for _ in 0..n {
                let a = normal();
                let b = normal();
                x1.push(0.1 * a + b);
                x2.push(0.1 * a - b);
                t.push(a);
            }
            Dataset::new(names(&["X1", "X2"]), vec![x1, x2], "T", t)
        }
        SyntheticKind::Pm25Like => {
            let mut cols = vec![Vec::with_capacity(n); 4];
            let mut t = Vec::with_capacity(n);
            for _ in 0..n {
                let humidity = normal();
                let dew_point = 0.6 * humidity + 0.8 * normal();
                let wind = normal();
                let pressure = -0.5 * wind + 0.866 * normal();
                t.push(
                    1.5 * humidity + dew_point + (2.0 * wind).tanh() + 0.3 * pressure * pressure
                        + 0.5 * normal(),
                );
                for (c, v) in cols.iter_mut().zip([humidity, dew_point, wind, pressure]) {
                    c.push(v);
                }
            }
            Dataset::new(
                names(&["humidity", "dew_point", "wind", "pressure"]),
                cols,
                "PM",
                t,
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleQuantity {
    Sigma2T,
    LX1,
    LX2,
    LX1X2,
    LrX1X2,
    PhiI,
}

impl FromStr for OracleQuantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sigma2_T" | "sigma2_t" => OracleQuantity::Sigma2T,
            "L_X1" => OracleQuantity::LX1,
            "L_X2" => OracleQuantity::LX2,
            "L_X1X2" => OracleQuantity::LX1X2,
            "Lr_X1X2" => OracleQuantity::LrX1X2,
            "phi_I" => OracleQuantity::PhiI,
            other => {
                return Err(Error::NoClosedForm {
                    example: "-".into(),
                    quantity: other.into(),
                })
            }
        })
    }
}

/// Exact population value of `quantity` for the example. `PhiI` carries the
/// reporting sign: the (non-positive) variance the restricted family cannot reach.
pub fn analytic_oracle(kind: SyntheticKind, quantity: OracleQuantity) -> Result<f64> {
    use OracleQuantity::*;
    let value = match (kind, quantity) {
        // T = X1·X2 with Rademacher or Gaussian factors: T is uncorrelated with
        // every additive function, so nothing is explained without the interaction.
        (SyntheticKind::PairwiseIndependence | SyntheticKind::NonAdditive, q) => match q {
            Sigma2T | LX1X2 => 1.0,
            LX1 | LX2 | LrX1X2 => 0.0,
            PhiI => -1.0,
        },
        // 2X1 + 2X2 ~ N(0, 8) and σ²(Z²) = 2s⁴ for Z ~ N(0, s²).
        (SyntheticKind::Nonlinearity, q) => match q {
            Sigma2T => 2.0 * 8.0 * 8.0,
            LX1 | LX2 => 16.0 * 2.0,
            LX1X2 => 128.0,
            LrX1X2 => 64.0,
            PhiI => -64.0,
        },
        // E[A | X1] = cov(A, X1)/σ²(X1) · X1 = (0.1/1.01)·X1.
        (SyntheticKind::RankDeficiency, q) => match q {
            Sigma2T | LX1X2 | LrX1X2 => 1.0,
            LX1 | LX2 => 0.01 / 1.01,
            PhiI => 0.0,
        },
        (SyntheticKind::Pm25Like, q) => {
            return Err(Error::NoClosedForm {
                example: kind.to_string(),
                quantity: format!("{q:?}"),
            })
        }
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(kind: SyntheticKind, n: usize, seed: u64) -> Dataset {
        generate_synthetic(&SyntheticSpec { kind, n, seed }).unwrap()
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn var(v: &[f64]) -> f64 {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (mean(a), mean(b));
        let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
        cov / (var(a) * var(b)).sqrt()
    }

    #[test]
    fn nonlinearity_variance() {
        let d = gen(SyntheticKind::Nonlinearity, 200_000, 1);
        let v = var(d.target());
        assert!((v / 128.0 - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn non_additive_variance() {
        let d = gen(SyntheticKind::NonAdditive, 200_000, 11);
        assert!((var(d.target()) - 1.0).abs() < 0.02);
    }

    #[test]
    fn rank_deficiency_is_linear_in_both() {
        let d = gen(SyntheticKind::RankDeficiency, 200_000, 11);
        let lin: Vec<f64> = d.column(0).iter().zip(d.column(1)).map(|(a, b)| 5.0 * a + 5.0 * b).collect();
        assert!(corr(&lin, d.target()) >= 0.999);
    }

    #[test]
    fn pairwise_independence_marginals() {
        let n = 100_000;
        let d = gen(SyntheticKind::PairwiseIndependence, n, 3);
        let bound = 3.0 / (n as f64).sqrt();
        assert!(corr(d.column(0), d.target()).abs() < bound);
        assert!(corr(d.column(1), d.target()).abs() < bound);
        assert!(d.column(0).iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn target_means_converge() {
        // Closed-form means and standard deviations of T.
        let cases = [
            (SyntheticKind::PairwiseIndependence, 0.0, 1.0),
            (SyntheticKind::Nonlinearity, 8.0, 128f64.sqrt()),
            (SyntheticKind::NonAdditive, 0.0, 1.0),
            (SyntheticKind::RankDeficiency, 0.0, 1.0),
        ];
        let n = 50_000;
        for (kind, mu, sd) in cases {
            let d = gen(kind, n, 5);
            let m = mean(d.target());
            assert!((m - mu).abs() < 3.0 * sd / (n as f64).sqrt(), "{kind}: mean {m}");
        }
    }

    #[test]
    fn deterministic_by_seed() {
        for kind in SyntheticKind::ALL {
            assert_eq!(gen(kind, 100, 1), gen(kind, 100, 1));
            assert_ne!(gen(kind, 100, 1), gen(kind, 100, 2));
        }
    }

    #[test]
    fn oracle_values() {
        use OracleQuantity::*;
        let k = SyntheticKind::Nonlinearity;
        assert_eq!(analytic_oracle(k, Sigma2T).unwrap(), 128.0);
        assert_eq!(analytic_oracle(k, LX1).unwrap(), 32.0);
        let w = analytic_oracle(k, LX1X2).unwrap() - 2.0 * analytic_oracle(k, LX1).unwrap();
        assert_eq!(w, 64.0);
        let wr = analytic_oracle(k, LrX1X2).unwrap() - 2.0 * analytic_oracle(k, LX1).unwrap();
        assert_eq!(wr, 0.0);
        assert_eq!(
            analytic_oracle(k, Sigma2T).unwrap() - analytic_oracle(k, LrX1X2).unwrap(),
            -analytic_oracle(k, PhiI).unwrap()
        );
        let l = analytic_oracle(SyntheticKind::RankDeficiency, LX1).unwrap();
        assert!((l - 0.009901).abs() < 1e-6);
        assert!(analytic_oracle(SyntheticKind::Pm25Like, Sigma2T).is_err());
    }

    #[test]
    fn rank_deficiency_oracle_matches_regression() {
        // Sample OLS slope of T on X1 recovers the Gaussian conditional expectation.
        let d = gen(SyntheticKind::RankDeficiency, 200_000, 2);
        let r = corr(d.column(0), d.target());
        let l = r * r * var(d.target());
        assert!((l - 0.01 / 1.01).abs() < 0.002);
    }

    #[test]
    fn parse_ids() {
        assert_eq!("non_additive".parse::<SyntheticKind>().unwrap(), SyntheticKind::NonAdditive);
        assert!("bogus".parse::<SyntheticKind>().is_err());
        assert_eq!("phi_I".parse::<OracleQuantity>().unwrap(), OracleQuantity::PhiI);
        assert_eq!(generate_synthetic(&SyntheticSpec { kind: SyntheticKind::NonAdditive, n: 0, seed: 0 }).is_err(), true);
    }
}
