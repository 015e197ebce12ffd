use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::net::Ipv4Addr;

use super::engine::{EventKind, EventLog};
use super::SimError;

/// Timing of one completed migration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MigrationTiming {
    pub id: u64,
    pub start: f64,
    pub commit: f64,
    pub last_redirect: f64,
}

impl MigrationTiming {
    /// Switch-over until the last redirect: the service is unreachable.
    pub fn downtime(&self) -> f64 {
        (self.last_redirect - self.commit).max(0.0)
    }

    /// Transfer start until switch-over.
    pub fn duration(&self) -> f64 {
        self.commit - self.start
    }
}

/// Pairs each migration start with its commit or abort and its redirects.
///
/// Aborted migrations are omitted. A start with neither commit nor abort, or
/// a commit with no redirect, is an incomplete log.
pub fn measure_downtime(log: &EventLog) -> Result<Vec<MigrationTiming>, SimError> {
    #[derive(Default)]
    struct Acc {
        start: Option<f64>,
        commit: Option<f64>,
        aborted: bool,
        redirect: Option<f64>,
    }
    let mut by_id: BTreeMap<u64, Acc> = BTreeMap::new();
    for r in log.records() {
        let slot = match r.kind {
            EventKind::MigrateStart
            | EventKind::MigrateCommit
            | EventKind::MigrateAbort
            | EventKind::Redirect => {
                let id = r
                    .field("mig")
                    .and_then(|v| v.parse::<u64>().ok())
                    .ok_or_else(|| {
                        SimError::IncompleteLog(format!(
                            "{} record without mig id at {}",
                            r.kind, r.time
                        ))
                    })?;
                by_id.entry(id).or_default()
            }
            _ => continue,
        };
        match r.kind {
            EventKind::MigrateStart => slot.start = Some(r.time),
            EventKind::MigrateCommit => slot.commit = Some(r.time),
            EventKind::MigrateAbort => slot.aborted = true,
            _ => slot.redirect = Some(slot.redirect.map_or(r.time, |t: f64| t.max(r.time))),
        }
    }
    let mut out = Vec::new();
    for (id, acc) in by_id {
        let start = acc
            .start
            .ok_or_else(|| SimError::IncompleteLog(format!("migration {id} has no start")))?;
        if acc.aborted {
            if acc.commit.is_some() {
                return Err(SimError::IncompleteLog(format!(
                    "migration {id} both committed and aborted"
                )));
            }
            continue;
        }
        let commit = acc.commit.ok_or_else(|| {
            SimError::IncompleteLog(format!("migration {id} has no commit or abort"))
        })?;
        let last_redirect = acc
            .redirect
            .ok_or_else(|| SimError::IncompleteLog(format!("migration {id} has no redirect")))?;
        out.push(MigrationTiming {
            id,
            start,
            commit,
            last_redirect,
        });
    }
    Ok(out)
}

/// Echo round-trip samples `(send time, rtt)` recorded in a log.
pub fn rtt_probe(log: &EventLog) -> Vec<(f64, f64)> {
    log.of_kind(EventKind::Probe)
        .filter_map(|r| {
            let sent = r.field("sent")?.parse().ok()?;
            let rtt = r.field("rtt")?.parse().ok()?;
            Some((sent, rtt))
        })
        .collect()
}

/// What each end of a flow saw.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowStats {
    pub flow: u32,
    pub sent: u64,
    /// Requests that reached the migrating service.
    pub served: u64,
    /// Requests that reached a different host.
    pub misdelivered: u64,
    pub replies: u64,
    /// `(src, dst)` headers seen by the service.
    pub seen_at_service: BTreeSet<(Ipv4Addr, Ipv4Addr)>,
    /// `(src, dst)` headers seen by the user.
    pub seen_at_user: BTreeSet<(Ipv4Addr, Ipv4Addr)>,
    pub last_reply: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimMetrics {
    pub handovers: u64,
    pub end_time: f64,
    /// Time spent at each distance from the serving DC.
    pub occupancy: BTreeMap<u32, f64>,
    pub rtt_trace: Vec<(f64, f64)>,
    pub probes_sent: u64,
    pub probes_lost: u64,
    pub migrations: Vec<MigrationTiming>,
    pub migrations_count: u64,
    pub aborted: u64,
    pub flows: Vec<FlowStats>,
}

impl SimMetrics {
    fn total_time(&self) -> f64 {
        self.occupancy.values().sum()
    }

    /// Fraction of time the user was served by the optimal DC.
    pub fn empirical_pi0(&self) -> f64 {
        let total = self.total_time();
        if total > 0.0 {
            self.occupancy.get(&0).copied().unwrap_or(0.0) / total
        } else {
            0.0
        }
    }

    pub fn empirical_mean_distance(&self) -> f64 {
        let total = self.total_time();
        if total > 0.0 {
            self.occupancy
                .iter()
                .map(|(d, t)| *d as f64 * t)
                .sum::<f64>()
                / total
        } else {
            0.0
        }
    }

    pub fn downtimes(&self) -> Vec<f64> {
        self.migrations
            .iter()
            .map(MigrationTiming::downtime)
            .collect()
    }

    pub fn migration_durations(&self) -> Vec<f64> {
        self.migrations
            .iter()
            .map(MigrationTiming::duration)
            .collect()
    }

    pub fn mean_downtime(&self) -> Option<f64> {
        mean(&self.downtimes())
    }

    pub fn mean_migration_duration(&self) -> Option<f64> {
        mean(&self.migration_durations())
    }

    /// One `metric,value` row per scalar.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let rows: [(&str, String); 10] = [
            ("handovers", self.handovers.to_string()),
            ("end_time_s", self.end_time.to_string()),
            ("empirical_pi0", self.empirical_pi0().to_string()),
            (
                "empirical_mean_distance",
                self.empirical_mean_distance().to_string(),
            ),
            ("migrations_count", self.migrations_count.to_string()),
            ("migrations_aborted", self.aborted.to_string()),
            ("mean_downtime_s", opt(self.mean_downtime())),
            (
                "mean_migration_duration_s",
                opt(self.mean_migration_duration()),
            ),
            ("probes_sent", self.probes_sent.to_string()),
            ("probes_lost", self.probes_lost.to_string()),
        ];
        for (k, v) in rows {
            writeln!(out, "{k},{v}").unwrap();
        }
        out
    }

    pub fn migrations_csv(&self) -> String {
        let mut out =
            String::from("mig,start_s,commit_s,last_redirect_s,downtime_s,migration_duration_s\n");
        for m in &self.migrations {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                m.id,
                m.start,
                m.commit,
                m.last_redirect,
                m.downtime(),
                m.duration()
            )
            .unwrap();
        }
        out
    }

    pub fn rtt_csv(&self) -> String {
        let mut out = String::from("time_s,rtt_s\n");
        for (t, r) in &self.rtt_trace {
            writeln!(out, "{t},{r}").unwrap();
        }
        out
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(lines: &str) -> EventLog {
        EventLog::parse(lines).unwrap()
    }

    #[test]
    fn downtime_takes_last_redirect() {
        let l = log("1.0 MIGRATE_START dc1 mig=0\n\
             3.0 MIGRATE_COMMIT dc2 mig=0\n\
             3.25 REDIRECT ar2 mig=0\n\
             3.5 REDIRECT mrms mig=0\n\
             4.0 MIGRATE_START dc2 mig=1\n\
             4.0 MIGRATE_ABORT dc2 mig=1\n");
        let m = measure_downtime(&l).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].downtime(), 0.5);
        assert_eq!(m[0].duration(), 2.0);
    }

    #[test]
    fn incomplete_logs_are_rejected() {
        let no_commit = log("1.0 MIGRATE_START dc1 mig=0\n");
        assert!(matches!(
            measure_downtime(&no_commit),
            Err(SimError::IncompleteLog(_))
        ));
        let no_redirect = log("1.0 MIGRATE_START dc1 mig=0\n2.0 MIGRATE_COMMIT dc2 mig=0\n");
        assert!(matches!(
            measure_downtime(&no_redirect),
            Err(SimError::IncompleteLog(_))
        ));
        let no_id = log("1.0 MIGRATE_START dc1\n");
        assert!(matches!(
            measure_downtime(&no_id),
            Err(SimError::IncompleteLog(_))
        ));
    }

    #[test]
    fn empty_metrics_are_zero() {
        let m = SimMetrics::default();
        assert_eq!(m.empirical_pi0(), 0.0);
        assert_eq!(m.mean_downtime(), None);
        assert!(m.to_csv().starts_with("metric,value\n"));
    }
}
