use std::fmt::Write as _;
use std::ops::RangeInclusive;

use anyhow::{bail, Result};
use fmc_core::chain::{avg_delay, avg_distance, lumped_walk_steady_state, prob_optimal};
use fmc_core::cost::{migration_cost, sdt_vs_k, signaling_cost};
use fmc_core::mdp::{policy_table, Calibration, PolicyTable};
use fmc_core::sim::{
    run, DecisionRule, Horizon, MobilityModel, PlaneKind, ScenarioConfig, SimOutput,
};
use fmc_core::WalkParams;
use rayon::prelude::*;

use crate::config::Config;

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeRow {
    pub k: u32,
    pub pi0: f64,
    pub mean_distance: f64,
    pub mean_delay_s: f64,
    pub migration_cost_bits: f64,
    /// One disruption time per configured fraction.
    pub sdt_s: Vec<f64>,
}

pub fn analyze(cfg: &Config, ks: RangeInclusive<u32>) -> Result<Vec<AnalyzeRow>> {
    let a = &cfg.analysis;
    if !ks.is_empty() && (*ks.start() < a.k_min.max(2) || *ks.end() > a.k_max) {
        bail!(
            "k range {}..{} outside {}..{}",
            ks.start(),
            ks.end(),
            a.k_min.max(2),
            a.k_max
        );
    }
    let params = cfg.transfer.params();
    params.validate()?;
    let walk = WalkParams::new(1.0 / 6.0, cfg.mobility.mu)?;
    let (delay, rtt) = (cfg.delay_model(), cfg.rtt_model());
    ks.collect::<Vec<_>>()
        .into_par_iter()
        .map(|k| {
            let dist = lumped_walk_steady_state(k, walk)?;
            let sdt_s = a
                .fractions
                .iter()
                .map(|f| sdt_vs_k(k, &rtt, &params.scaled(*f)))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(AnalyzeRow {
                k,
                pi0: prob_optimal(&dist),
                mean_distance: avg_distance(&dist),
                mean_delay_s: avg_delay(&dist, &delay),
                migration_cost_bits: migration_cost(&dist, k, signaling_cost(&params)),
                sdt_s,
            })
        })
        .collect()
}

pub fn analyze_csv(fractions: &[f64], rows: &[AnalyzeRow]) -> String {
    let mut out = String::from("k,pi0,mean_distance,mean_delay_s,migration_cost_bits");
    for f in fractions {
        write!(out, ",sdt_s_frac_{f}").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(
            out,
            "{},{},{},{},{}",
            r.k, r.pi0, r.mean_distance, r.mean_delay_s, r.migration_cost_bits
        )
        .unwrap();
        for s in &r.sdt_s {
            write!(out, ",{s}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn analyze_text(fractions: &[f64], rows: &[AnalyzeRow]) -> String {
    let mut out = format!(
        "{:>3} {:>10} {:>10} {:>10} {:>14}",
        "k", "pi0", "E[dist]", "E[delay]s", "cost bits/ho"
    );
    for f in fractions {
        write!(out, " {:>12}", format!("sdt@{f} s")).unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(
            out,
            "{:>3} {:>10.6} {:>10.6} {:>10.6} {:>14.6e}",
            r.k, r.pi0, r.mean_distance, r.mean_delay_s, r.migration_cost_bits
        )
        .unwrap();
        for s in &r.sdt_s {
            write!(out, " {s:>12.4}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn policy(cal: &Calibration, thr: u32, tau: f64, ps: &[f64]) -> Result<PolicyTable> {
    if thr < 1 {
        bail!("thr must be at least 1");
    }
    Ok(policy_table(cal, thr, ps, tau)?)
}

pub struct SimulateResult {
    pub output: SimOutput,
    pub summary: String,
}

pub fn simulate(scenario: &ScenarioConfig) -> Result<SimulateResult> {
    let output = run(scenario)?;
    let m = &output.metrics;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6} s"));
    let mut summary = String::new();
    writeln!(summary, "handovers: {}", m.handovers).unwrap();
    writeln!(
        summary,
        "migrations: {} completed, {} aborted",
        m.migrations_count, m.aborted
    )
    .unwrap();
    writeln!(summary, "mean downtime: {}", fmt(m.mean_downtime())).unwrap();
    writeln!(
        summary,
        "mean migration duration: {}",
        fmt(m.mean_migration_duration())
    )
    .unwrap();
    writeln!(
        summary,
        "probes: {} sent, {} lost",
        m.probes_sent, m.probes_lost
    )
    .unwrap();
    writeln!(summary, "log records: {}", output.log.len()).unwrap();
    Ok(SimulateResult { output, summary })
}

pub struct ValidateReport {
    pub csv: String,
    pub passed: bool,
}

/// Monte-Carlo cross-check of the lumped chain for a hex walk that migrates at ring `k`.
pub fn validate(
    k: u32,
    samples: u64,
    seed: u64,
    mu: f64,
    max_rel_error: f64,
) -> Result<ValidateReport> {
    if samples < 10_000 {
        bail!("samples must be at least 10000, got {samples}");
    }
    let dist = lumped_walk_steady_state(k, WalkParams::new(1.0 / 6.0, mu)?)?;
    let scenario = ScenarioConfig {
        seed,
        mobility: MobilityModel::Hex { mu },
        decision: DecisionRule::AtDistance(k),
        plane: PlaneKind::None,
        horizon: Horizon::Handovers(samples),
        log_mobility: false,
        ..ScenarioConfig::default()
    };
    let m = run(&scenario)?.metrics;
    let rows = [
        ("pi0", prob_optimal(&dist), m.empirical_pi0()),
        (
            "mean_distance",
            avg_distance(&dist),
            m.empirical_mean_distance(),
        ),
    ];
    let mut csv =
        String::from("k,samples,seed,metric,analytic,empirical,rel_error,max_rel_error,pass\n");
    let mut passed = true;
    for (name, analytic, empirical) in rows {
        let rel = (empirical - analytic).abs() / analytic.abs();
        let ok = rel <= max_rel_error;
        passed &= ok;
        writeln!(
            csv,
            "{k},{samples},{seed},{name},{analytic},{empirical},{rel},{max_rel_error},{ok}"
        )
        .unwrap();
    }
    Ok(ValidateReport { csv, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_range_is_header_only() {
        let cfg = Config::default();
        #[allow(clippy::reversed_empty_ranges)]
        let rows = analyze(&cfg, 5..=4).unwrap();
        assert!(rows.is_empty());
        assert_eq!(
            analyze_csv(&cfg.analysis.fractions, &rows).lines().count(),
            1
        );
    }

    #[test]
    fn out_of_range_k_rejected() {
        assert!(analyze(&Config::default(), 1..=3).is_err());
        assert!(analyze(&Config::default(), 2..=9).is_err());
    }

    #[test]
    fn validate_small_sample_reports() {
        let r = validate(2, 10_000, 3, 1.0, 0.02).unwrap();
        assert_eq!(r.csv.lines().count(), 3);
        assert!(validate(2, 100, 3, 1.0, 0.02).is_err());
    }
}
