//! Per-mini-batch mixing decisions.
//!
//! The unit of execution is the mini-batch, indexed globally `i = 1..=m`
//! across epoch boundaries. The three-stage schedule splits `1..=m` at
//! `floor(p*m)` and `floor(q*m)`:
//!
//! * stage 1 mixes every batch,
//! * stage 2 mixes exactly the batches with an even global index,
//! * stage 3 draws `theta ~ U[0,1)` and mixes when `theta < epsilon`, where
//!   `epsilon = (m - i) / (m (1 - q))` decays linearly to zero at `i = m`.
//!
//! The ablation strategies ([`StrategySpec`]) are expressed against the same
//! batch index so they can be compared on an equal footing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const DEFAULT_P: f64 = 0.6;
pub const DEFAULT_Q: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Explore = 1,
    Alternate = 2,
    Anneal = 3,
}

impl Stage {
    pub fn number(self) -> u8 {
        self as u8
    }
}

/// Stage boundaries plus the total mini-batch count of the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    p: f64,
    q: f64,
    m: usize,
}

impl ScheduleParams {
    pub fn new(p: f64, q: f64, m: usize) -> Result<Self> {
        validate_bounds(p, q)?;
        if m == 0 {
            return Err(Error::config("total mini-batch count must be at least 1"));
        }
        Ok(Self { p, q, m })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn total_batches(&self) -> usize {
        self.m
    }

    /// Last batch index of stage 1.
    pub fn stage1_end(&self) -> usize {
        floor_frac(self.p, self.m)
    }

    /// Last batch index of stage 2.
    pub fn stage2_end(&self) -> usize {
        floor_frac(self.q, self.m)
    }

    pub fn stage_of(&self, i: usize) -> Result<Stage> {
        self.check_index(i)?;
        Ok(if i <= self.stage1_end() {
            Stage::Explore
        } else if i <= self.stage2_end() {
            Stage::Alternate
        } else {
            Stage::Anneal
        })
    }

    /// Stage-3 mixing probability for batch `i`, clamped to `[0, 1]`.
    pub fn epsilon_at(&self, i: usize) -> Result<f64> {
        if self.stage_of(i)? != Stage::Anneal {
            return Err(Error::config(format!(
                "epsilon is only defined in stage 3; batch {i} is in stage {}",
                self.stage_of(i)?.number()
            )));
        }
        let m = self.m as f64;
        let eps = (m - i as f64) / (m * (1.0 - self.q));
        Ok(eps.clamp(0.0, 1.0))
    }

    /// Number of mixed batches in stages 1 and 2, which are deterministic.
    pub fn deterministic_mixed_count(&self) -> usize {
        self.stage1_end() + evens_in(self.stage1_end() + 1, self.stage2_end())
    }

    /// Expected number of mixed stage-3 batches, `sum of epsilon(i)`.
    pub fn expected_stage3_mixed(&self) -> f64 {
        (self.stage2_end() + 1..=self.m)
            .map(|i| self.epsilon_at(i).unwrap_or(0.0))
            .sum()
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.m {
            return Err(Error::config(format!(
                "batch index {i} outside 1..={}",
                self.m
            )));
        }
        Ok(())
    }
}

fn validate_bounds(p: f64, q: f64) -> Result<()> {
    // Equal bounds are allowed: p = q leaves stage 2 empty, which the
    // p/q sensitivity grids use at their edges.
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) || p > q {
        return Err(Error::config(format!(
            "stage bounds must satisfy 0 <= p <= q <= 1, got p = {p}, q = {q}"
        )));
    }
    Ok(())
}

fn floor_frac(frac: f64, m: usize) -> usize {
    // Nudge past representation error so that 0.6 * 1000 lands on 600.
    let raw = frac * m as f64;
    let rounded = raw.round();
    let v = if (raw - rounded).abs() < 1e-9 * m.max(1) as f64 {
        rounded
    } else {
        raw.floor()
    };
    (v.max(0.0) as usize).min(m)
}

/// Count of even integers in `lo..=hi`.
pub fn evens_in(lo: usize, hi: usize) -> usize {
    match (lo, hi) {
        (_, hi) if hi < lo => 0,
        (0, hi) => hi / 2 + 1,
        (lo, hi) => hi / 2 - (lo - 1) / 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugDecision {
    pub mix: bool,
    pub stage: Option<Stage>,
    /// Present exactly when `stage` is stage 3.
    pub epsilon: Option<f64>,
}

impl AugDecision {
    fn flat(mix: bool) -> Self {
        Self {
            mix,
            stage: None,
            epsilon: None,
        }
    }

    fn staged(mix: bool, stage: Stage) -> Self {
        Self {
            mix,
            stage: Some(stage),
            epsilon: None,
        }
    }
}

/// The three-stage decision rule for batch `i`.
///
/// Stage 3 always consumes one uniform draw, even when epsilon is zero, so
/// downstream draws do not shift with the outcome.
pub fn mwh_decide(i: usize, params: &ScheduleParams, rng: &mut RngStream) -> Result<AugDecision> {
    Ok(match params.stage_of(i)? {
        Stage::Explore => AugDecision::staged(true, Stage::Explore),
        Stage::Alternate => AugDecision::staged(i.is_multiple_of(2), Stage::Alternate),
        Stage::Anneal => epsilon_greedy(i, params, rng)?,
    })
}

fn epsilon_greedy(i: usize, params: &ScheduleParams, rng: &mut RngStream) -> Result<AugDecision> {
    let eps = params.epsilon_at(i)?;
    let theta = rng.uniform01();
    Ok(AugDecision {
        mix: theta < eps,
        stage: Some(Stage::Anneal),
        epsilon: Some(eps),
    })
}

/// What to do in stage 2 or 3 of a [`StrategySpec::StageCombo`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Never mix (basic augmentation only).
    Clean,
    Mixup,
    /// Parity alternation in stage 2, epsilon-greedy in stage 3.
    Mwh,
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clean" | "none" => Ok(Policy::Clean),
            "mixup" => Ok(Policy::Mixup),
            "mwh" => Ok(Policy::Mwh),
            other => Err(Error::config(format!(
                "unknown stage policy {other:?} (expected clean, mixup or mwh)"
            ))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Clean => "clean",
            Policy::Mixup => "mixup",
            Policy::Mwh => "mwh",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategySpec {
    Baseline,
    MixupAlways,
    FirstHalfMixup,
    SecondHalfMixup,
    /// Mix for the whole main run, then append `refine_epochs` clean epochs.
    MixupWithRefinement {
        refine_epochs: usize,
    },
    Mwh {
        p: f64,
        q: f64,
    },
    /// Stage 1 always mixes; stages 2 and 3 follow their own policy.
    StageCombo {
        p: f64,
        q: f64,
        stage2: Policy,
        stage3: Policy,
    },
}

impl Default for StrategySpec {
    fn default() -> Self {
        StrategySpec::Mwh {
            p: DEFAULT_P,
            q: DEFAULT_Q,
        }
    }
}

impl StrategySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StrategySpec::Mwh { p, q } | StrategySpec::StageCombo { p, q, .. } => {
                validate_bounds(p, q)
            }
            _ => Ok(()),
        }
    }

    /// Clean epochs appended after the main schedule.
    pub fn refine_epochs(&self) -> usize {
        match *self {
            StrategySpec::MixupWithRefinement { refine_epochs } => refine_epochs,
            _ => 0,
        }
    }

    /// Short machine-friendly name, also accepted by [`FromStr`].
    pub fn label(&self) -> String {
        match *self {
            StrategySpec::Baseline => "baseline".into(),
            StrategySpec::MixupAlways => "mixup".into(),
            StrategySpec::FirstHalfMixup => "first_half".into(),
            StrategySpec::SecondHalfMixup => "second_half".into(),
            StrategySpec::MixupWithRefinement { refine_epochs } => {
                format!("refine:{refine_epochs}")
            }
            StrategySpec::Mwh { p, q } => format!("mwh:{p}:{q}"),
            StrategySpec::StageCombo {
                p,
                q,
                stage2,
                stage3,
            } => {
                format!("combo:{stage2}:{stage3}:{p}:{q}")
            }
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Parses `baseline`, `mixup`, `first_half`, `second_half`, `refine:<epochs>`,
/// `mwh[:p:q]` and `combo:<stage2>:<stage3>[:p:q]`.
impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let parts: Vec<&str> = lower.split(':').collect();
        let num = |t: &str| -> Result<f64> {
            t.parse::<f64>()
                .map_err(|_| Error::config(format!("bad number {t:?} in strategy {s:?}")))
        };
        let bounds = |rest: &[&str]| -> Result<(f64, f64)> {
            match rest {
                [] => Ok((DEFAULT_P, DEFAULT_Q)),
                [p, q] => Ok((num(p)?, num(q)?)),
                _ => Err(Error::config(format!("expected p:q in strategy {s:?}"))),
            }
        };
        let spec = match parts.as_slice() {
            ["baseline"] => StrategySpec::Baseline,
            ["mixup"] | ["mixup_always"] => StrategySpec::MixupAlways,
            ["first_half"] | ["first_half_mixup"] => StrategySpec::FirstHalfMixup,
            ["second_half"] | ["second_half_mixup"] => StrategySpec::SecondHalfMixup,
            ["refine", n] => StrategySpec::MixupWithRefinement {
                refine_epochs: n
                    .parse()
                    .map_err(|_| Error::config(format!("bad refine epoch count in {s:?}")))?,
            },
            ["mwh", rest @ ..] => {
                let (p, q) = bounds(rest)?;
                StrategySpec::Mwh { p, q }
            }
            ["combo", s2, s3, rest @ ..] => {
                let (p, q) = bounds(rest)?;
                StrategySpec::StageCombo {
                    p,
                    q,
                    stage2: s2.parse()?,
                    stage3: s3.parse()?,
                }
            }
            _ => return Err(Error::config(format!("unknown strategy {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Decision for global batch `i` under `spec`, where `m` is the main-run
/// batch count. Only [`StrategySpec::MixupWithRefinement`] accepts `i > m`
/// (the appended refinement batches, which never mix).
pub fn strategy_decide(
    i: usize,
    spec: &StrategySpec,
    m: usize,
    rng: &mut RngStream,
) -> Result<AugDecision> {
    let refining = matches!(spec, StrategySpec::MixupWithRefinement { .. });
    if i == 0 || m == 0 || (i > m && !refining) {
        return Err(Error::config(format!(
            "batch index {i} outside 1..={m} for strategy {spec}"
        )));
    }
    match *spec {
        StrategySpec::Baseline => Ok(AugDecision::flat(false)),
        StrategySpec::MixupAlways => Ok(AugDecision::flat(true)),
        StrategySpec::FirstHalfMixup => Ok(AugDecision::flat(i <= m / 2)),
        StrategySpec::SecondHalfMixup => Ok(AugDecision::flat(i > m / 2)),
        StrategySpec::MixupWithRefinement { .. } => Ok(AugDecision::flat(i <= m)),
        StrategySpec::Mwh { p, q } => mwh_decide(i, &ScheduleParams::new(p, q, m)?, rng),
        StrategySpec::StageCombo {
            p,
            q,
            stage2,
            stage3,
        } => {
            let params = ScheduleParams::new(p, q, m)?;
            match params.stage_of(i)? {
                Stage::Explore => Ok(AugDecision::staged(true, Stage::Explore)),
                Stage::Alternate => Ok(AugDecision::staged(
                    match stage2 {
                        Policy::Clean => false,
                        Policy::Mixup => true,
                        Policy::Mwh => i.is_multiple_of(2),
                    },
                    Stage::Alternate,
                )),
                Stage::Anneal => match stage3 {
                    Policy::Mwh => epsilon_greedy(i, &params, rng),
                    fixed => Ok(AugDecision {
                        mix: fixed == Policy::Mixup,
                        stage: Some(Stage::Anneal),
                        epsilon: Some(params.epsilon_at(i)?),
                    }),
                },
            }
        }
    }
}

/// Full decision trace for `i = 1..=m` from a fresh stream seeded with `seed`.
pub fn decision_trace(spec: &StrategySpec, m: usize, seed: u64) -> Result<Vec<AugDecision>> {
    let mut rng = RngStream::new(seed);
    (1..=m)
        .map(|i| strategy_decide(i, spec, m, &mut rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: f64, q: f64, m: usize) -> ScheduleParams {
        ScheduleParams::new(p, q, m).unwrap()
    }

    #[test]
    fn stage_boundaries() {
        let sp = params(0.6, 0.9, 1000);
        assert_eq!(sp.stage_of(600).unwrap(), Stage::Explore);
        assert_eq!(sp.stage_of(601).unwrap(), Stage::Alternate);
        assert_eq!(sp.stage_of(900).unwrap(), Stage::Alternate);
        assert_eq!(sp.stage_of(901).unwrap(), Stage::Anneal);
        assert!(sp.stage_of(0).is_err());
        assert!(sp.stage_of(1001).is_err());
    }

    #[test]
    fn floor_rule_for_fractional_bounds() {
        let sp = params(0.6, 0.9, 7);
        assert_eq!(sp.stage1_end(), 4);
        assert_eq!(sp.stage2_end(), 6);
    }

    #[test]
    fn degenerate_bounds() {
        let sp = params(0.0, 0.5, 10);
        assert_eq!(sp.stage_of(1).unwrap(), Stage::Alternate);
        let sp = params(0.5, 1.0, 10);
        assert_eq!(sp.stage_of(10).unwrap(), Stage::Alternate);
        assert!(ScheduleParams::new(0.7, 0.6, 10).is_err());
        assert!(ScheduleParams::new(-0.1, 0.6, 10).is_err());
        assert!(ScheduleParams::new(0.1, 1.1, 10).is_err());
        assert!(ScheduleParams::new(0.1, 0.6, 0).is_err());
    }

    #[test]
    fn epsilon_values() {
        let sp = params(0.6, 0.9, 100);
        assert!((sp.epsilon_at(95).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(sp.epsilon_at(100).unwrap(), 0.0);
        assert!(sp.epsilon_at(90).is_err());

        let sp = params(0.6, 0.9, 100_000);
        let first = sp.stage2_end() + 1;
        let expect = 1.0 - 1.0 / (100_000.0 * 0.1);
        assert!((sp.epsilon_at(first).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn epsilon_strictly_decreasing() {
        let sp = params(0.6, 0.9, 1000);
        let eps: Vec<f64> = (901..=1000).map(|i| sp.epsilon_at(i).unwrap()).collect();
        assert!(eps.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(*eps.last().unwrap(), 0.0);
    }

    #[test]
    fn evens_closed_form() {
        for lo in 0..30 {
            for hi in 0..30 {
                let brute = (lo..=hi).filter(|i| *i % 2 == 0).count();
                assert_eq!(evens_in(lo, hi), brute, "{lo}..={hi}");
            }
        }
    }

    #[test]
    fn mwh_stage_rules() {
        let sp = params(0.6, 0.9, 1000);
        let mut rng = RngStream::new(0);
        for i in 1..=600 {
            assert!(mwh_decide(i, &sp, &mut rng).unwrap().mix);
        }
        assert!(!mwh_decide(601, &sp, &mut rng).unwrap().mix);
        assert!(mwh_decide(602, &sp, &mut rng).unwrap().mix);
        let d = mwh_decide(950, &sp, &mut rng).unwrap();
        assert_eq!(d.stage, Some(Stage::Anneal));
        assert!(d.epsilon.is_some());
        let d = mwh_decide(700, &sp, &mut rng).unwrap();
        assert!(d.epsilon.is_none());
    }

    #[test]
    fn stage3_draws_even_at_zero_epsilon() {
        let sp = params(0.6, 0.9, 100);
        let mut a = RngStream::new(4);
        let mut b = RngStream::new(4);
        let d = mwh_decide(100, &sp, &mut a).unwrap();
        assert!(!d.mix);
        b.uniform01();
        assert_eq!(a.uniform01(), b.uniform01());
    }

    #[test]
    fn simple_strategies() {
        let m = 11;
        let trace = |s| decision_trace(&s, m, 0).unwrap();
        assert!(trace(StrategySpec::Baseline).iter().all(|d| !d.mix));
        assert!(trace(StrategySpec::MixupAlways).iter().all(|d| d.mix));
        let first: Vec<bool> = trace(StrategySpec::FirstHalfMixup)
            .iter()
            .map(|d| d.mix)
            .collect();
        let second: Vec<bool> = trace(StrategySpec::SecondHalfMixup)
            .iter()
            .map(|d| d.mix)
            .collect();
        assert_eq!(first.iter().filter(|&&x| x).count(), 5);
        assert!(first.iter().zip(&second).all(|(a, b)| a != b));
    }

    #[test]
    fn refinement_batches_are_clean() {
        let spec = StrategySpec::MixupWithRefinement { refine_epochs: 2 };
        let mut rng = RngStream::new(0);
        assert!(strategy_decide(10, &spec, 10, &mut rng).unwrap().mix);
        assert!(!strategy_decide(11, &spec, 10, &mut rng).unwrap().mix);
        assert!(strategy_decide(11, &StrategySpec::MixupAlways, 10, &mut rng).is_err());
    }

    #[test]
    fn combo_clean_clean() {
        let spec = StrategySpec::StageCombo {
            p: 0.6,
            q: 0.9,
            stage2: Policy::Clean,
            stage3: Policy::Clean,
        };
        let trace = decision_trace(&spec, 1000, 3).unwrap();
        assert!(trace[..600].iter().all(|d| d.mix));
        assert!(trace[600..].iter().all(|d| !d.mix));
    }

    #[test]
    fn parse_strategies() {
        let cases = [
            ("baseline", StrategySpec::Baseline),
            ("Mixup", StrategySpec::MixupAlways),
            ("first_half", StrategySpec::FirstHalfMixup),
            ("second_half", StrategySpec::SecondHalfMixup),
            (
                "refine:25",
                StrategySpec::MixupWithRefinement { refine_epochs: 25 },
            ),
            ("mwh", StrategySpec::Mwh { p: 0.6, q: 0.9 }),
            ("mwh:0.5:0.8", StrategySpec::Mwh { p: 0.5, q: 0.8 }),
            (
                "combo:mixup:none",
                StrategySpec::StageCombo {
                    p: 0.6,
                    q: 0.9,
                    stage2: Policy::Mixup,
                    stage3: Policy::Clean,
                },
            ),
        ];
        for (text, want) in cases {
            let got: StrategySpec = text.parse().unwrap();
            assert_eq!(got, want);
            assert_eq!(got.label().parse::<StrategySpec>().unwrap(), got);
        }
        assert!("mwh:0.9:0.5".parse::<StrategySpec>().is_err());
        assert!("cutout".parse::<StrategySpec>().is_err());
    }
}
