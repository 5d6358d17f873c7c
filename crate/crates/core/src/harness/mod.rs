//! Monte Carlo driver: scenarios, per-trial records, summaries, CSV and flop tables.
//!
//! Every trial derives its own seed from the master seed and the trial index, so
//! trials can run on any number of threads and still produce the same records.

mod output;
mod stats;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristic::{heuristic_flop_formula, heuristic_mmf_inner, heuristic_qos_inner, HeuristicFlops, OrderingPolicy};
use crate::model::{generate_channels, min_weighted, mmse_estimate, sinr, total_power, uniform_targets, ChannelSet, SystemConfig, Targets};
use crate::nullspace::{compute_outer_layer, flop_estimate_bdzf};
use crate::rng::trial_seed;
use crate::sca::{flop_breakdown_sca, mmf_sca_inner, qos_sca_inner, ScaFlops, ScaOptions};

pub use output::{emit_csv, fmt_float, read_csv, read_records, write_records, HEADER};
pub use stats::{Summary, PERCENTILES};

/// SINR target for 8 bit/s/Hz per UE.
pub const DEFAULT_ETA: f64 = 255.0;
pub const DEFAULT_POWER_W: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Qos { eta: f64 },
    Mmf { eta: f64, power_w: f64 },
}

impl Mode {
    pub fn eta(&self) -> f64 {
        match *self {
            Mode::Qos { eta } | Mode::Mmf { eta, .. } => eta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Csi {
    Perfect,
    /// Uplink pilots; `pilot_len` defaults to the number of UEs.
    Mmse {
        pilot_power_w: f64,
        pilot_len: Option<usize>,
    },
}

impl FromStr for Csi {
    type Err = Error;

    /// `perfect`, `mmse`, or `mmse:<pilot power W>[:<pilot length>]`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let bad = || Error::InvalidConfig(format!("unknown CSI model `{s}`"));
        match parts.next() {
            Some("perfect") if parts.next().is_none() => Ok(Csi::Perfect),
            Some("mmse") => {
                let pilot_power_w = match parts.next() {
                    Some(p) => p.parse().map_err(|_| bad())?,
                    None => 1.0,
                };
                let pilot_len = match parts.next() {
                    Some(l) => Some(l.parse().map_err(|_| bad())?),
                    None => None,
                };
                if parts.next().is_some() {
                    return Err(bad());
                }
                Ok(Csi::Mmse {
                    pilot_power_w,
                    pilot_len,
                })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Algorithm {
    Sca,
    Heuristic(OrderingPolicy),
    /// Heuristic answer used as the SCA starting point.
    HeuristicPlusSca,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Sca => f.write_str("sca"),
            Algorithm::Heuristic(p) => write!(f, "heuristic:{}", p.tag()),
            Algorithm::HeuristicPlusSca => f.write_str("heuristic+sca"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sca" => Ok(Algorithm::Sca),
            "heuristic" => Ok(Algorithm::Heuristic(OrderingPolicy::WorstFirstRatio)),
            "heuristic+sca" => Ok(Algorithm::HeuristicPlusSca),
            _ => match s.strip_prefix("heuristic:") {
                Some(p) => Ok(Algorithm::Heuristic(p.parse()?)),
                None => Err(Error::InvalidConfig(format!("unknown algorithm `{s}`"))),
            },
        }
    }
}

impl TryFrom<String> for Algorithm {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> String {
        a.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub config: SystemConfig,
    pub mode: Mode,
    #[serde(default = "default_csi")]
    pub csi: Csi,
    pub algorithms: Vec<Algorithm>,
    pub trials: usize,
    /// Record wall time per algorithm call. Off by default so output is reproducible.
    #[serde(default)]
    pub timing: bool,
}

fn default_csi() -> Csi {
    Csi::Perfect
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidConfig("no algorithms selected".into()));
        }
        let eta = self.mode.eta();
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("SINR target must be positive, got {eta}")));
        }
        if let Mode::Mmf { power_w, .. } = self.mode {
            if !(power_w > 0.0 && power_w.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "power budget must be positive, got {power_w}"
                )));
            }
        }
        if let Csi::Mmse { pilot_power_w, pilot_len } = self.csi {
            if !(pilot_power_w > 0.0) {
                return Err(Error::InvalidConfig("pilot power must be positive".into()));
            }
            if pilot_len.is_some_and(|l| l < self.config.total_users()) {
                return Err(Error::InvalidConfig(
                    "pilot length must be at least the number of UEs".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn targets(&self) -> Targets {
        uniform_targets(&self.config.group_sizes, self.mode.eta())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n_antennas: usize,
    pub trial: usize,
    pub algorithm: String,
    /// Transmit power in watts (QoS) or minimum weighted SINR (MMF), evaluated on
    /// the true channels.
    pub objective: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub flops_estimate: u64,
    /// Fingerprint of the channels the algorithm was given.
    pub channel_hash: u64,
    pub wall_time_s: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub n_antennas: usize,
    pub algorithm: String,
    pub failures: usize,
    /// Over successful trials; `None` when every trial failed.
    pub stats: Option<Summary>,
}

#[derive(Clone, Debug)]
pub struct ScenarioResult {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<AlgorithmSummary>,
}

struct Outcome {
    objective: f64,
    iterations: usize,
    converged: bool,
    flops: u64,
}

fn objective_on_truth(truth: &ChannelSet, precoder: &crate::model::Precoder, mode: &Mode, eta: &Targets) -> Result<f64> {
    Ok(match mode {
        Mode::Qos { .. } => total_power(precoder),
        Mode::Mmf { .. } => min_weighted(&sinr(truth, precoder)?, eta),
    })
}

fn run_algorithm(
    algo: Algorithm,
    mode: &Mode,
    truth: &ChannelSet,
    outer: &crate::nullspace::OuterLayer,
    eta: &Targets,
) -> Result<Outcome> {
    let opts = ScaOptions::default();
    let wfr = OrderingPolicy::WorstFirstRatio;
    let (precoder, iterations, converged, flops) = match (algo, *mode) {
        (Algorithm::Sca, Mode::Qos { .. }) => {
            let r = qos_sca_inner(outer, eta, &opts)?;
            (r.precoder, r.summary.iterations, r.summary.converged, r.summary.flops_estimate)
        }
        (Algorithm::Sca, Mode::Mmf { power_w, .. }) => {
            let r = mmf_sca_inner(outer, eta, power_w, &opts)?;
            (r.precoder, r.report.iterations, r.report.converged, r.report.flops_estimate)
        }
        (Algorithm::Heuristic(p), Mode::Qos { .. }) => {
            let r = heuristic_qos_inner(outer, eta, p)?;
            (r.precoder, 1, true, r.report.flops_estimate)
        }
        (Algorithm::Heuristic(p), Mode::Mmf { power_w, .. }) => {
            let r = heuristic_mmf_inner(outer, eta, power_w, p)?;
            (r.precoder, 1, true, r.report.flops_estimate)
        }
        (Algorithm::HeuristicPlusSca, Mode::Qos { .. }) => {
            let h = heuristic_qos_inner(outer, eta, wfr)?;
            let r = qos_sca_inner(outer, eta, &ScaOptions::warm(h.precoder.inner))?;
            let extra = r.summary.flops_estimate - flop_estimate_bdzf(truth.n_antennas(), &truth.group_sizes());
            (r.precoder, r.summary.iterations, r.summary.converged, h.report.flops_estimate + extra)
        }
        (Algorithm::HeuristicPlusSca, Mode::Mmf { power_w, .. }) => {
            let h = heuristic_mmf_inner(outer, eta, power_w, wfr)?;
            let r = mmf_sca_inner(outer, eta, power_w, &ScaOptions::warm(h.precoder.inner))?;
            let extra = r.report.flops_estimate - flop_estimate_bdzf(truth.n_antennas(), &truth.group_sizes());
            (r.precoder, r.report.iterations, r.report.converged, h.report.flops_estimate + extra)
        }
    };
    Ok(Outcome {
        objective: objective_on_truth(truth, &precoder, mode, eta)?,
        iterations,
        converged,
        flops,
    })
}

fn run_trial(scenario: &Scenario, master_seed: u64, trial: usize) -> Vec<TrialRecord> {
    let seed = trial_seed(master_seed, trial as u64);
    let n = scenario.config.n_antennas;
    let eta = scenario.targets();
    let failed = |algorithm: String, hash: u64, e: &Error| TrialRecord {
        n_antennas: n,
        trial,
        algorithm,
        objective: None,
        iterations: 0,
        converged: false,
        flops_estimate: 0,
        channel_hash: hash,
        wall_time_s: None,
        error: Some(e.to_string()),
    };
    let prepared = generate_channels(&scenario.config, seed).and_then(|truth| {
        let seen = match scenario.csi {
            Csi::Perfect => truth.clone(),
            Csi::Mmse { pilot_power_w, pilot_len } => mmse_estimate(
                &truth,
                pilot_power_w,
                pilot_len.unwrap_or(truth.total_users()),
                seed,
            )?,
        };
        let hash = seen.fingerprint();
        Ok((truth, hash, compute_outer_layer(&seen)))
    });
    let (truth, hash, outer) = match prepared {
        Ok(x) => x,
        Err(e) => {
            return scenario
                .algorithms
                .iter()
                .map(|a| failed(a.to_string(), 0, &e))
                .collect()
        }
    };
    scenario
        .algorithms
        .iter()
        .map(|&algo| {
            let start = Instant::now();
            let result = outer
                .as_ref()
                .map_err(|e| Error::Precondition(e.to_string()))
                .and_then(|outer| run_algorithm(algo, &scenario.mode, &truth, outer, &eta));
            let elapsed = start.elapsed().as_secs_f64();
            match result {
                Ok(o) => TrialRecord {
                    n_antennas: n,
                    trial,
                    algorithm: algo.to_string(),
                    objective: Some(o.objective),
                    iterations: o.iterations,
                    converged: o.converged,
                    flops_estimate: o.flops,
                    channel_hash: hash,
                    wall_time_s: scenario.timing.then_some(elapsed),
                    error: None,
                },
                Err(e) => failed(algo.to_string(), hash, &e),
            }
        })
        .collect()
}

/// Summaries per `(N, algorithm)` in first-appearance order.
pub fn summarize(records: &[TrialRecord]) -> Vec<AlgorithmSummary> {
    let mut keys: Vec<(usize, String)> = Vec::new();
    for r in records {
        let key = (r.n_antennas, r.algorithm.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(n, algo)| {
            let mine = records.iter().filter(|r| r.n_antennas == n && r.algorithm == algo);
            let values: Vec<f64> = mine.clone().filter_map(|r| r.objective).collect();
            AlgorithmSummary {
                n_antennas: n,
                failures: mine.filter(|r| r.objective.is_none()).count(),
                stats: Summary::of(&values),
                algorithm: algo,
            }
        })
        .collect()
}

/// Runs every trial of `scenario` in parallel. Records come back sorted by trial,
/// then by position in `scenario.algorithms`.
pub fn run_scenario(scenario: &Scenario, master_seed: u64) -> Result<ScenarioResult> {
    scenario.validate()?;
    let records: Vec<TrialRecord> = (0..scenario.trials)
        .into_par_iter()
        .flat_map_iter(|t| run_trial(scenario, master_seed, t))
        .collect();
    let summary = summarize(&records);
    Ok(ScenarioResult { records, summary })
}

/// Runs `scenario` at every antenna count. Each `N` gets its own master seed,
/// `trial_seed(master_seed, N)`, so channels are re-drawn per `N`.
pub fn run_sweep(scenario: &Scenario, n_values: &[usize], master_seed: u64) -> Result<ScenarioResult> {
    let mut records = Vec::new();
    for &n in n_values {
        let mut s = scenario.clone();
        s.config.n_antennas = n;
        records.extend(run_scenario(&s, sweep_seed(master_seed, n))?.records);
    }
    let summary = summarize(&records);
    Ok(ScenarioResult { records, summary })
}

pub fn sweep_seed(master_seed: u64, n_antennas: usize) -> u64 {
    trial_seed(master_seed, n_antennas as u64)
}

#[derive(Clone, Debug)]
pub struct OrderingTable {
    pub policies: Vec<OrderingPolicy>,
    /// `powers[trial][policy]`.
    pub powers: Vec<Vec<f64>>,
    pub summaries: Vec<Summary>,
}

impl OrderingTable {
    pub fn means(&self) -> Vec<f64> {
        self.summaries.iter().map(|s| s.mean).collect()
    }
}

/// QoS power of the heuristic under each ordering policy on identical channels.
pub fn compare_ordering(
    config: &SystemConfig,
    eta: f64,
    policies: &[OrderingPolicy],
    trials: usize,
    master_seed: u64,
) -> Result<OrderingTable> {
    if policies.is_empty() {
        return Err(Error::InvalidConfig("no ordering policies given".into()));
    }
    let scenario = Scenario {
        config: config.clone(),
        mode: Mode::Qos { eta },
        csi: Csi::Perfect,
        algorithms: policies.iter().map(|&p| Algorithm::Heuristic(p)).collect(),
        trials,
        timing: false,
    };
    scenario.validate()?;
    let powers: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let truth = generate_channels(config, trial_seed(master_seed, t as u64))?;
            let outer = compute_outer_layer(&truth)?;
            let targets = scenario.targets();
            policies
                .iter()
                .map(|&p| Ok(total_power(&heuristic_qos_inner(&outer, &targets, p)?.precoder)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let summaries = (0..policies.len())
        .map(|i| Summary::of(&powers.iter().map(|row| row[i]).collect::<Vec<_>>()).unwrap())
        .collect();
    Ok(OrderingTable {
        policies: policies.to_vec(),
        powers,
        summaries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopRow {
    pub n_antennas: usize,
    pub bdzf: u64,
    pub sca: ScaFlops,
    pub heuristic: HeuristicFlops,
}

/// Closed-form operation counts for each antenna count.
pub fn report_flops(group_sizes: &[usize], n_values: &[usize], sca_iterations: usize) -> Vec<FlopRow> {
    n_values
        .iter()
        .map(|&n| FlopRow {
            n_antennas: n,
            bdzf: flop_estimate_bdzf(n, group_sizes),
            sca: flop_breakdown_sca(n, group_sizes, sca_iterations),
            heuristic: heuristic_flop_formula(n, group_sizes),
        })
        .collect()
}

pub fn write_flops<W: std::io::Write>(rows: &[FlopRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n_antennas",
        "bdzf",
        "sca_inner",
        "sca_composition",
        "sca_total",
        "heuristic_ordering",
        "heuristic_gram_schmidt",
        "heuristic_steps",
        "heuristic_inner",
        "heuristic_total",
    ])?;
    for r in rows {
        w.write_record(
            [
                r.n_antennas as u64,
                r.bdzf,
                r.sca.inner,
                r.sca.composition,
                r.sca.total,
                r.heuristic.ordering,
                r.heuristic.gram_schmidt,
                r.heuristic.steps,
                r.heuristic.inner,
                r.heuristic.total,
            ]
            .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: Mode) -> Scenario {
        Scenario {
            config: SystemConfig {
                n_antennas: 16,
                group_sizes: vec![2, 2],
                ..SystemConfig::default()
            },
            mode,
            csi: Csi::Perfect,
            algorithms: vec![
                Algorithm::Sca,
                Algorithm::Heuristic(OrderingPolicy::WorstFirstRatio),
                Algorithm::HeuristicPlusSca,
            ],
            trials: 4,
            timing: false,
        }
    }

    #[test]
    fn tags_round_trip() {
        for a in [
            Algorithm::Sca,
            Algorithm::HeuristicPlusSca,
            Algorithm::Heuristic(OrderingPolicy::BestFirstRef12),
        ] {
            assert_eq!(a.to_string().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!(
            "heuristic".parse::<Algorithm>().unwrap(),
            Algorithm::Heuristic(OrderingPolicy::WorstFirstRatio)
        );
        assert_eq!("mmse".parse::<Csi>().unwrap(), Csi::Mmse { pilot_power_w: 1.0, pilot_len: None });
        assert_eq!(
            "mmse:0.5:64".parse::<Csi>().unwrap(),
            Csi::Mmse { pilot_power_w: 0.5, pilot_len: Some(64) }
        );
        assert!("mmse:x".parse::<Csi>().is_err());
        assert!("exact".parse::<Csi>().is_err());
    }

    #[test]
    fn scenario_json_round_trip_and_validation() {
        let s = small(Mode::Mmf { eta: 3.0, power_w: 10.0 });
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(Scenario::from_json(&text).unwrap(), s);
        let minimal = r#"{"mode": {"qos": {"eta": 255}}, "algorithms": ["heuristic"], "trials": 1}"#;
        let m = Scenario::from_json(minimal).unwrap();
        assert_eq!(m.config, SystemConfig::default());
        assert_eq!(m.csi, Csi::Perfect);
        assert!(Scenario::from_json(r#"{"mode": {"qos": {"eta": 1}}, "algorithms": [], "trials": 1}"#).is_err());
        assert!(Scenario::from_json(r#"{"mode": {"qos": {"eta": 1}}, "algorithms": ["sca"], "trials": 0}"#).is_err());
        assert!(Scenario::from_json(r#"{"mode": {"mmf": {"eta": 1, "power_w": 0}}, "algorithms": ["sca"], "trials": 1}"#).is_err());
    }

    #[test]
    fn single_ue_objective_is_the_effective_channel_identity() {
        let mut s = small(Mode::Qos { eta: 5.0 });
        s.config.group_sizes = vec![1];
        s.trials = 1;
        let res = run_scenario(&s, 9).unwrap();
        let truth = generate_channels(&s.config, trial_seed(9, 0)).unwrap();
        let g = truth.groups[0].col(0);
        let expected = 5.0 * truth.noise_powers[0][0] / crate::linalg::norm_sqr(g);
        for r in &res.records {
            assert!((r.objective.unwrap() / expected - 1.0).abs() < 1e-8, "{r:?}");
        }
    }

    #[test]
    fn records_are_paired_sorted_and_deterministic() {
        for mode in [Mode::Qos { eta: 4.0 }, Mode::Mmf { eta: 2.0, power_w: 1.0 }] {
            let s = small(mode);
            let a = run_scenario(&s, 3).unwrap();
            let b = run_scenario(&s, 3).unwrap();
            assert_eq!(a.records, b.records);
            assert_eq!(a.records.len(), 12);
            for (i, chunk) in a.records.chunks(3).enumerate() {
                assert!(chunk.iter().all(|r| r.trial == i && r.channel_hash == chunk[0].channel_hash));
                assert!(chunk.iter().all(|r| r.error.is_none()));
            }
            assert_eq!(a.summary.len(), 3);
            assert!(a.summary.iter().all(|s| s.failures == 0 && s.stats.as_ref().unwrap().count == 4));
        }
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let mut s = small(Mode::Qos { eta: 1.0 });
        // one dimension per group: fine for SCA, too few for two heuristic directions
        s.config.n_antennas = 3;
        s.config.group_sizes = vec![2, 2];
        let r = run_scenario(&s, 0).unwrap();
        assert_eq!(r.records.len(), 12);
        for rec in &r.records {
            match rec.algorithm.as_str() {
                "sca" => assert!(rec.error.is_none() && rec.objective.is_some()),
                _ => assert!(rec.error.is_some() && rec.objective.is_none() && rec.channel_hash != 0),
            }
        }
        let sca = r.summary.iter().find(|x| x.algorithm == "sca").unwrap();
        assert_eq!((sca.failures, sca.stats.as_ref().map(|s| s.count)), (0, Some(4)));
        assert!(r.summary.iter().filter(|x| x.algorithm != "sca").all(|x| x.stats.is_none() && x.failures == 4));
    }

    #[test]
    fn identical_policies_give_identical_columns() {
        let cfg = SystemConfig {
            n_antennas: 12,
            group_sizes: vec![4],
            ..SystemConfig::default()
        };
        let p = OrderingPolicy::WorstFirstPower;
        let t = compare_ordering(&cfg, 3.0, &[p, p], 5, 1).unwrap();
        assert!(t.powers.iter().all(|row| row[0] == row[1]));
        assert_eq!(t.means()[0], t.means()[1]);
    }

    #[test]
    fn flop_table_basics() {
        let rows = report_flops(&[10], &[64, 128], 0);
        assert_eq!(rows[0].bdzf, 0);
        let rows = report_flops(&[10, 10, 10], &[100], 0);
        assert_eq!(rows[0].sca.composition, 192_000);
        let mut buf = Vec::new();
        write_flops(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }
}
