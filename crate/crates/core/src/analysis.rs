//! Concept-discovery times for uniform sampling, with and without a model
//! that reveals a whole cluster once one of its members is hit.
//!
//! `n` concepts, of which `c` disjoint clusters of `s` are relevant. Without
//! the model every relevant concept must be drawn individually, a coupon
//! collector over `c*s` coupons: `T_base = n * H_{cs}`. With it, one draw per
//! cluster suffices: `T_gpr = n * H_c / s`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscoveryMode {
    Base,
    Gpr,
}

impl DiscoveryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscoveryMode::Base => "base",
            DiscoveryMode::Gpr => "gpr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscoveryConfig {
    pub n: u64,
    pub c: u64,
    pub s: u64,
    pub mode: DiscoveryMode,
    pub trials: usize,
    pub seed: u64,
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        validate_sizes(self.n, self.c, self.s)?;
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        Ok(())
    }
}

fn validate_sizes(n: u64, c: u64, s: u64) -> Result<()> {
    if n == 0 || c == 0 || s == 0 {
        return Err(Error::invalid("n, c and s must be positive"));
    }
    match c.checked_mul(s) {
        Some(cs) if cs <= n => Ok(()),
        _ => Err(Error::invalid(format!("c*s = {c}*{s} exceeds n = {n}"))),
    }
}

/// `H_m = sum_{i=1}^m 1/i`, summed from the smallest term up.
pub fn harmonic(m: u64) -> Result<f64> {
    if m < 1 {
        return Err(Error::invalid("harmonic number needs m >= 1"));
    }
    Ok((1..=m).rev().map(|i| 1.0 / i as f64).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticTimes {
    pub t_base: f64,
    pub t_gpr: f64,
    pub speedup: f64,
}

pub fn analytic_times(n: u64, c: u64, s: u64) -> Result<AnalyticTimes> {
    validate_sizes(n, c, s)?;
    let t_base = n as f64 * harmonic(c * s)?;
    let t_gpr = n as f64 * harmonic(c)? / s as f64;
    Ok(AnalyticTimes {
        t_base,
        t_gpr,
        speedup: t_base / t_gpr,
    })
}

impl DiscoveryConfig {
    pub fn analytic(&self) -> Result<f64> {
        let t = analytic_times(self.n, self.c, self.s)?;
        Ok(match self.mode {
            DiscoveryMode::Base => t.t_base,
            DiscoveryMode::Gpr => t.t_gpr,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscoveryEstimate {
    pub mean_time: f64,
    pub std_error: f64,
}

/// Draws until discovery in one trial. Relevant concepts are ids `0..c*s`,
/// cluster `j` holding ids `j*s..(j+1)*s`.
fn one_trial(n: u64, c: u64, s: u64, mode: DiscoveryMode, trial_seed: u64) -> u64 {
    let mut rng = seed::rng(trial_seed, &[seed::tag::DISCOVERY]);
    let cs = c * s;
    let goal = match mode {
        DiscoveryMode::Base => cs,
        DiscoveryMode::Gpr => c,
    };
    let mut seen = vec![false; goal as usize];
    let mut found = 0;
    let mut draws = 0u64;
    while found < goal {
        let x = rng.random_range(0..n);
        draws += 1;
        if x < cs {
            let slot = match mode {
                DiscoveryMode::Base => x,
                DiscoveryMode::Gpr => x / s,
            } as usize;
            if !seen[slot] {
                seen[slot] = true;
                found += 1;
            }
        }
    }
    draws
}

/// Per-trial sample counts. Trial `i` uses a seed derived from `(seed, i)`
/// regardless of mode, so base and gpr runs with the same seed are paired.
pub fn discovery_times(cfg: &DiscoveryConfig) -> Result<Vec<u64>> {
    discovery_times_with(Execution::default(), cfg)
}

pub fn discovery_times_with(exec: Execution, cfg: &DiscoveryConfig) -> Result<Vec<u64>> {
    cfg.validate()?;
    Ok(par::map_range(exec, cfg.trials, |i| {
        one_trial(
            cfg.n,
            cfg.c,
            cfg.s,
            cfg.mode,
            seed::derive(cfg.seed, &[i as u64]),
        )
    }))
}

pub fn summarize(times: &[u64]) -> DiscoveryEstimate {
    let k = times.len() as f64;
    let mean = times.iter().map(|&t| t as f64).sum::<f64>() / k;
    let var = if times.len() > 1 {
        times
            .iter()
            .map(|&t| (t as f64 - mean).powi(2))
            .sum::<f64>()
            / (k - 1.0)
    } else {
        0.0
    };
    DiscoveryEstimate {
        mean_time: mean,
        std_error: (var / k).sqrt(),
    }
}

pub fn simulate_discovery(cfg: &DiscoveryConfig) -> Result<DiscoveryEstimate> {
    Ok(summarize(&discovery_times(cfg)?))
}

/// One CSV row of the `lemma` report.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaRow {
    pub n: u64,
    pub c: u64,
    pub s: u64,
    pub mode: DiscoveryMode,
    pub analytic: f64,
    pub empirical: Option<DiscoveryEstimate>,
    pub trials: usize,
}

impl LemmaRow {
    pub const HEADER: &'static str = "n,c,s,mode,analytic,empirical_mean,std_error,trials";

    pub fn to_csv(&self) -> String {
        let (m, se) = match self.empirical {
            Some(e) => (format!("{}", e.mean_time), format!("{}", e.std_error)),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.n,
            self.c,
            self.s,
            self.mode.as_str(),
            self.analytic,
            m,
            se,
            self.trials
        )
    }

    /// |empirical - analytic| in standard errors.
    pub fn deviation_sigmas(&self) -> Option<f64> {
        self.empirical.map(|e| {
            let diff = (e.mean_time - self.analytic).abs();
            if e.std_error > 0.0 {
                diff / e.std_error
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
    }
}

/// Analytic and (optionally) simulated rows for both modes.
pub fn lemma_rows(
    n: u64,
    c: u64,
    s: u64,
    trials: Option<usize>,
    seed: u64,
) -> Result<Vec<LemmaRow>> {
    let t = analytic_times(n, c, s)?;
    [DiscoveryMode::Base, DiscoveryMode::Gpr]
        .into_iter()
        .map(|mode| {
            let analytic = match mode {
                DiscoveryMode::Base => t.t_base,
                DiscoveryMode::Gpr => t.t_gpr,
            };
            let empirical = match trials {
                Some(trials) => Some(simulate_discovery(&DiscoveryConfig {
                    n,
                    c,
                    s,
                    mode,
                    trials,
                    seed,
                })?),
                None => None,
            };
            Ok(LemmaRow {
                n,
                c,
                s,
                mode,
                analytic,
                empirical,
                trials: trials.unwrap_or(0),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_values() {
        assert_eq!(harmonic(1).unwrap(), 1.0);
        assert_eq!(harmonic(2).unwrap(), 1.5);
        assert!(harmonic(0).is_err());
        // ln m + gamma + 1/(2m) - 1/(12 m^2)
        let gamma = 0.577_215_664_901_532_9;
        let m = 100.0f64;
        let approx = m.ln() + gamma + 1.0 / (2.0 * m) - 1.0 / (12.0 * m * m);
        assert!((harmonic(100).unwrap() - approx).abs() < 1e-8);
        assert!((harmonic(100).unwrap() - 5.187_377_517_639_621).abs() < 1e-12);
    }

    #[test]
    fn closed_forms() {
        let t = analytic_times(10, 1, 2).unwrap();
        assert_eq!((t.t_base, t.t_gpr, t.speedup), (15.0, 5.0, 3.0));
        let p = analytic_times(150_000, 2, 150).unwrap();
        assert_eq!(p.t_gpr, 1500.0);
        assert!(analytic_times(10, 3, 4).is_err());
        assert!(analytic_times(10, 0, 4).is_err());
    }

    #[test]
    fn singleton_clusters_make_modes_identical() {
        let base = DiscoveryConfig {
            n: 50,
            c: 4,
            s: 1,
            mode: DiscoveryMode::Base,
            trials: 200,
            seed: 3,
        };
        let gpr = DiscoveryConfig {
            mode: DiscoveryMode::Gpr,
            ..base
        };
        assert_eq!(
            discovery_times(&base).unwrap(),
            discovery_times(&gpr).unwrap()
        );
    }

    #[test]
    fn paired_gpr_never_slower() {
        let base = DiscoveryConfig {
            n: 300,
            c: 3,
            s: 10,
            mode: DiscoveryMode::Base,
            trials: 300,
            seed: 11,
        };
        let gpr = DiscoveryConfig {
            mode: DiscoveryMode::Gpr,
            ..base
        };
        let (b, g) = (
            discovery_times(&base).unwrap(),
            discovery_times(&gpr).unwrap(),
        );
        assert!(b.iter().zip(&g).all(|(b, g)| g <= b));
    }

    #[test]
    fn full_relevance_is_classic_coupon_collector() {
        let cfg = DiscoveryConfig {
            n: 40,
            c: 4,
            s: 10,
            mode: DiscoveryMode::Base,
            trials: 2000,
            seed: 5,
        };
        let est = simulate_discovery(&cfg).unwrap();
        let expect = 40.0 * harmonic(40).unwrap();
        assert!(
            (est.mean_time - expect).abs() < 4.0 * est.std_error,
            "{est:?} vs {expect}"
        );
    }

    #[test]
    fn csv_row() {
        let rows = lemma_rows(10, 1, 2, None, 0).unwrap();
        assert_eq!(rows[0].to_csv(), "10,1,2,base,15,,,0");
        assert_eq!(rows[1].to_csv(), "10,1,2,gpr,5,,,0");
    }
}
