//! Episode rollouts, batch evaluation and summary statistics.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{CurriculumSpec, Env, EpisodeConfig};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::quatmath::{Quaternion, Vec3};

/// Default settling threshold, rad.
pub fn default_settling_threshold() -> f64 {
    0.25f64.to_radians()
}

/// Trailing window for the control accuracy statistic, s.
pub const ACCURACY_WINDOW: f64 = 10.0;

/// One trace row. Row 0 is the initial state; row k holds the state at
/// `t = k·dt` together with the torque, reward and filter branch of the
/// step that produced it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub q_e: Quaternion,
    pub omega: Vec3,
    pub tau: Vec3,
    pub theta_margin: f64,
    pub phi: f64,
    pub reward: f64,
    pub branch: &'static str,
}

/// Per-episode scalars as persisted in the batch CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub index: usize,
    pub seed: u64,
    pub reward: f64,
    pub settling_time: Option<f64>,
    pub effort: f64,
    pub accuracy: Option<f64>,
    pub violated: bool,
    pub settled: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub steps: Vec<StepRecord>,
    pub summary: EpisodeSummary,
}

/// Earliest `k·dt` after which every sample is within `threshold`.
pub fn settling_time(phi: &[f64], dt: f64, threshold: f64) -> Option<f64> {
    let mut first = phi.len();
    for k in (0..phi.len()).rev() {
        if phi[k] <= threshold {
            first = k;
        } else {
            break;
        }
    }
    (first < phi.len()).then_some(first as f64 * dt)
}

/// Left-rectangle integral of ‖τ‖² with zero-order-hold samples.
pub fn control_effort(tau: &[Vec3], dt: f64) -> f64 {
    tau.iter().map(|t| t.norm_squared()).sum::<f64>() * dt
}

/// Mean of the last `window` seconds of `phi`, sampled every `dt`.
pub fn trailing_mean(phi: &[f64], dt: f64, window: f64) -> f64 {
    let k = ((window / dt).round() as usize).clamp(1, phi.len().max(1));
    let tail = &phi[phi.len().saturating_sub(k)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Runs one episode to the horizon and records every step.
pub fn run_episode(
    config: &EpisodeConfig,
    policy: &dyn Policy,
    index: usize,
    seed: u64,
) -> Result<EpisodeRecord> {
    let mut env = Env::new();
    let mut obs = env.reset(config.clone(), seed)?;
    let horizon = config.horizon();
    let mut steps = Vec::with_capacity(horizon + 1);
    let phi0 = crate::quatmath::error_angle(&obs.q_e());
    let margin0 = config.zone.as_ref().map_or(f64::INFINITY, |_| obs.theta_margin());
    steps.push(StepRecord {
        t: 0.0,
        q_e: obs.q_e(),
        omega: obs.omega(),
        tau: Vec3::zeros(),
        theta_margin: margin0,
        phi: phi0,
        reward: 0.0,
        branch: "none",
    });
    for k in 1..=horizon {
        let action = policy.act(&obs);
        let r = env.step(&action)?;
        obs = r.observation;
        steps.push(StepRecord {
            t: k as f64 * config.dt,
            q_e: obs.q_e(),
            omega: obs.omega(),
            tau: r.info.tau_applied,
            theta_margin: r.info.theta_margin,
            phi: r.info.phi,
            reward: r.reward,
            branch: r.info.branch().map_or("none", |b| b.as_str()),
        });
    }
    let summary = summarize_trace(&steps, config.dt, index, seed);
    Ok(EpisodeRecord { steps, summary })
}

pub fn summarize_trace(steps: &[StepRecord], dt: f64, index: usize, seed: u64) -> EpisodeSummary {
    let phi: Vec<f64> = steps.iter().map(|s| s.phi).collect();
    let tau: Vec<Vec3> = steps.iter().skip(1).map(|s| s.tau).collect();
    let settling = settling_time(&phi, dt, default_settling_threshold());
    let settled = settling.is_some();
    EpisodeSummary {
        index,
        seed,
        reward: steps.iter().map(|s| s.reward).sum(),
        settling_time: settling,
        effort: control_effort(&tau, dt),
        accuracy: settled.then(|| trailing_mean(&phi, dt, ACCURACY_WINDOW)),
        violated: steps.iter().any(|s| s.theta_margin <= 0.0),
        settled,
    }
}

/// SplitMix64 finalizer over the master seed and episode index.
pub fn episode_seed(master: u64, index: usize) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation; `None` for an empty sample.
pub fn mean_std(xs: &[f64]) -> Option<MeanStd> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(MeanStd { mean, std })
}

/// Settling time, effort and accuracy statistics cover settled episodes only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n: usize,
    pub n_settled: usize,
    pub reward: MeanStd,
    pub settling_time: Option<MeanStd>,
    pub effort: Option<MeanStd>,
    pub accuracy: Option<MeanStd>,
    pub rate_non_settled: f64,
    pub rate_violation: f64,
}

impl BatchSummary {
    pub fn from_episodes(episodes: &[EpisodeSummary]) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::InvalidConfig("batch is empty".into()));
        }
        let n = episodes.len();
        let settled: Vec<&EpisodeSummary> = episodes.iter().filter(|e| e.settled).collect();
        let collect = |f: &dyn Fn(&EpisodeSummary) -> Option<f64>| -> Vec<f64> {
            settled.iter().filter_map(|e| f(e)).collect()
        };
        let rewards: Vec<f64> = episodes.iter().map(|e| e.reward).collect();
        Ok(Self {
            n,
            n_settled: settled.len(),
            reward: mean_std(&rewards).expect("non-empty"),
            settling_time: mean_std(&collect(&|e| e.settling_time)),
            effort: mean_std(&collect(&|e| Some(e.effort))),
            accuracy: mean_std(&collect(&|e| e.accuracy)),
            rate_non_settled: (n - settled.len()) as f64 / n as f64,
            rate_violation: episodes.iter().filter(|e| e.violated).count() as f64 / n as f64,
        })
    }

    /// Multi-line text table in the style of a results comparison.
    pub fn to_table(&self) -> String {
        let fmt = |m: Option<MeanStd>, scale: f64, unit: &str| match m {
            Some(m) => format!("{:.4} ± {:.4} {unit}", m.mean * scale, m.std * scale).trim_end().to_string(),
            None => "n/a".to_string(),
        };
        let mut s = String::new();
        let _ = writeln!(s, "episodes                 {}", self.n);
        let _ = writeln!(s, "mean reward              {}", fmt(Some(self.reward), 1.0, ""));
        let _ = writeln!(s, "mean settling time       {}", fmt(self.settling_time, 1.0, "s"));
        let _ = writeln!(s, "mean control effort      {}", fmt(self.effort, 1.0, "N²m²s"));
        let _ = writeln!(
            s,
            "mean control accuracy    {}",
            fmt(self.accuracy, 180.0 / std::f64::consts::PI, "deg")
        );
        let _ = writeln!(s, "rate of non-settled      {:.2} %", 100.0 * self.rate_non_settled);
        let _ = write!(s, "rate of violation        {:.2} %", 100.0 * self.rate_violation);
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchResult {
    pub summary: BatchSummary,
    pub episodes: Vec<EpisodeSummary>,
}

/// Batch of scenarios drawn from `spec` on top of `template`.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    pub n: usize,
    pub spec: CurriculumSpec,
    pub template: EpisodeConfig,
    pub master_seed: u64,
}

impl BatchPlan {
    pub fn episode_config(&self, index: usize) -> Result<(EpisodeConfig, u64)> {
        let seed = episode_seed(self.master_seed, index);
        Ok((self.spec.sample(&self.template, seed)?, seed))
    }

    /// Re-runs a single episode of the batch with its full trace.
    pub fn run_one(&self, index: usize, policy: &dyn Policy) -> Result<EpisodeRecord> {
        let (config, seed) = self.episode_config(index)?;
        run_episode(&config, policy, index, seed)
    }
}

/// Runs every episode of `plan` on `workers` threads (all cores when `None`).
/// Results are ordered by episode index and independent of the worker count.
pub fn run_batch(plan: &BatchPlan, policy: &dyn Policy, workers: Option<usize>) -> Result<BatchResult> {
    if plan.n == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    plan.spec.validate()?;
    plan.template.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let episodes: Vec<EpisodeSummary> = pool.install(|| {
        (0..plan.n)
            .into_par_iter()
            .map(|i| plan.run_one(i, policy).map(|r| r.summary))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(BatchResult { summary: BatchSummary::from_episodes(&episodes)?, episodes })
}

pub const BATCH_CSV_HEADER: &str = "index,seed,reward,settling_time,effort,accuracy,violated,settled";
pub const TRACE_CSV_HEADER: &str =
    "t,qe0,qe1,qe2,qe3,wx,wy,wz,taux,tauy,tauz,theta_margin,reward,filter_branch";

#[derive(Serialize)]
struct TraceRow<'a> {
    t: f64,
    qe0: f64,
    qe1: f64,
    qe2: f64,
    qe3: f64,
    wx: f64,
    wy: f64,
    wz: f64,
    taux: f64,
    tauy: f64,
    tauz: f64,
    theta_margin: f64,
    reward: f64,
    filter_branch: &'a str,
}

fn csv_string<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

/// Floats are written in shortest round-trip form, so parsing restores them exactly.
pub fn batch_csv(episodes: &[EpisodeSummary]) -> String {
    if episodes.is_empty() {
        return format!("{BATCH_CSV_HEADER}\n");
    }
    csv_string(episodes)
}

pub fn parse_batch_csv(text: &str) -> Result<Vec<EpisodeSummary>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Shape(format!("batch csv: {e}")))?;
    if header.iter().collect::<Vec<_>>().join(",") != BATCH_CSV_HEADER {
        return Err(Error::Shape("batch csv: unexpected header".into()));
    }
    r.deserialize()
        .collect::<std::result::Result<Vec<EpisodeSummary>, _>>()
        .map_err(|e| Error::Shape(format!("batch csv: {e}")))
}

pub fn trace_csv(steps: &[StepRecord]) -> String {
    if steps.is_empty() {
        return format!("{TRACE_CSV_HEADER}\n");
    }
    csv_string(steps.iter().map(|r| TraceRow {
        t: r.t,
        qe0: r.q_e.q0,
        qe1: r.q_e.qv.x,
        qe2: r.q_e.qv.y,
        qe3: r.q_e.qv.z,
        wx: r.omega.x,
        wy: r.omega.y,
        wz: r.omega.z,
        taux: r.tau.x,
        tauy: r.tau.y,
        tauz: r.tau.z,
        theta_margin: r.theta_margin,
        reward: r.reward,
        filter_branch: r.branch,
    }))
}

/// Writes `contents` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::CurriculumSpec;
    use crate::policy::{BaselineGains, BaselinePolicy};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_settling(phi: &[f64], dt: f64, thr: f64) -> Option<f64> {
        (0..phi.len())
            .find(|&k| phi[k..].iter().all(|&p| p <= thr))
            .map(|k| k as f64 * dt)
    }

    #[test]
    fn settling_examples() {
        assert_eq!(settling_time(&[1.0, 2.0, 3.0], 0.1, 0.5), None);
        assert_eq!(settling_time(&[], 0.1, 0.5), None);
        assert_eq!(settling_time(&[1.0, 1.0, 0.1, 0.2], 0.1, 0.5), Some(2.0 * 0.1));
        assert_eq!(settling_time(&[1.0, 0.1, 0.9, 0.1, 0.1], 0.1, 0.5), Some(3.0 * 0.1));
        assert_eq!(settling_time(&[0.1, 0.1], 0.1, 0.5), Some(0.0));
    }

    #[test]
    fn effort_examples() {
        assert_eq!(control_effort(&[Vec3::zeros(); 50], 0.1), 0.0);
        let c = vec![Vec3::new(2.0, 0.0, 0.0); 100];
        assert!((control_effort(&c, 0.1) - 40.0).abs() < 1e-12);
        let c = vec![Vec3::new(0.0, 0.0, 2.0); 1000];
        assert_eq!(control_effort(&c, 0.01), 4.0 * 1000.0 * 0.01);
    }

    #[test]
    fn effort_within_quadrature_bound_of_trapezoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tau: Vec<Vec3> = (0..500)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let dt = 0.1;
        let sq: Vec<f64> = tau.iter().map(|t| t.norm_squared()).collect();
        let trap: f64 = sq.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum();
        let bound = sq.iter().cloned().fold(0.0, f64::max) * dt;
        assert!((control_effort(&tau, dt) - trap).abs() <= bound);
    }

    #[test]
    fn sample_statistics() {
        let m = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]).unwrap().std, 0.0);
        assert!(mean_std(&[]).is_none());
    }

    #[test]
    fn summary_excludes_unsettled_episodes() {
        let e = |i: usize, settled: bool, violated: bool| EpisodeSummary {
            index: i,
            seed: i as u64,
            reward: i as f64,
            settling_time: settled.then_some(10.0 * i as f64),
            effort: 1.0,
            accuracy: settled.then_some(0.001),
            violated,
            settled,
        };
        let s = BatchSummary::from_episodes(&[e(0, true, false), e(1, false, true), e(2, true, false), e(3, false, false)]).unwrap();
        assert_eq!(s.n_settled, 2);
        assert_eq!(s.settling_time.unwrap().mean, 10.0);
        assert_eq!(s.reward.mean, 1.5);
        assert_eq!(s.rate_non_settled, 0.5);
        assert_eq!(s.rate_violation, 0.25);
        assert!(BatchSummary::from_episodes(&[]).is_err());
    }

    #[test]
    fn episode_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..10_000 {
            assert!(seen.insert(episode_seed(42, i)));
        }
        assert_ne!(episode_seed(1, 0), episode_seed(2, 0));
    }

    #[test]
    fn reference_episode_with_filter_is_safe() {
        let mut cfg = EpisodeConfig::reference_scenario();
        cfg.filter_enabled = true;
        let policy = BaselinePolicy { gains: BaselineGains::default(), tau_max: cfg.tau_max };
        let rec = run_episode(&cfg, &policy, 0, 0).unwrap();
        assert_eq!(rec.steps.len(), 1001);
        assert!(!rec.summary.violated);
        assert!(rec.summary.settled);
        assert!(rec.steps.last().unwrap().phi <= default_settling_threshold());
        assert_eq!(rec.summary.violated, rec.steps.iter().map(|s| s.theta_margin).fold(f64::INFINITY, f64::min) <= 0.0);
        if let Some(t) = rec.summary.settling_time {
            assert!(t <= cfg.duration);
        }
    }

    #[test]
    fn batch_is_schedule_independent_and_round_trips() {
        let plan = BatchPlan {
            n: 6,
            spec: CurriculumSpec::phase_two(std::f64::consts::PI),
            template: EpisodeConfig { filter_enabled: true, ..Default::default() },
            master_seed: 11,
        };
        let policy = BaselinePolicy { gains: BaselineGains::default(), tau_max: 2.0 };
        let a = run_batch(&plan, &policy, Some(1)).unwrap();
        let b = run_batch(&plan, &policy, Some(3)).unwrap();
        assert_eq!(a, b);
        let csv = batch_csv(&a.episodes);
        assert_eq!(csv, batch_csv(&b.episodes));
        let parsed = parse_batch_csv(&csv).unwrap();
        assert_eq!(parsed, a.episodes);
        assert_eq!(BatchSummary::from_episodes(&parsed).unwrap(), a.summary);
        let alone = plan.run_one(4, &policy).unwrap();
        assert_eq!(alone.summary, a.episodes[4]);
    }

    #[test]
    fn trace_csv_layout() {
        let cfg = EpisodeConfig::reference_scenario();
        let policy = BaselinePolicy { gains: BaselineGains::default(), tau_max: 2.0 };
        let rec = run_episode(&EpisodeConfig { duration: 1.0, ..cfg }, &policy, 0, 0).unwrap();
        let csv = trace_csv(&rec.steps);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 12);
        assert_eq!(lines[0], TRACE_CSV_HEADER);
        assert!(lines[1].ends_with(",none"));
        assert!(lines.iter().all(|l| l.split(',').count() == 14));
    }

    proptest! {
        #[test]
        fn settling_matches_brute_force(phi in prop::collection::vec(0.0f64..1.0, 0..60), thr in 0.05f64..0.95) {
            prop_assert_eq!(settling_time(&phi, 0.1, thr), brute_force_settling(&phi, 0.1, thr));
        }
    }
}
