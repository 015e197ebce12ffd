use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use super::SimError;

struct Entry<E> {
    time: f64,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // Reversed so the max-heap pops the earliest time, then the lowest sequence number.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Min-time priority queue with FIFO order among equal timestamps.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, event: E) {
        debug_assert!(time.is_finite());
        self.heap.push(Entry {
            time,
            seq: self.seq,
            event,
        });
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<(f64, E)> {
        self.heap.pop().map(|e| (e.time, e.event))
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

macro_rules! event_kinds {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum EventKind {
            $($variant),+
        }

        impl EventKind {
            pub const ALL: &'static [EventKind] = &[$(EventKind::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $(EventKind::$variant => $name),+
                }
            }
        }

        impl FromStr for EventKind {
            type Err = SimError;
            fn from_str(s: &str) -> Result<Self, SimError> {
                match s {
                    $($name => Ok(EventKind::$variant),)+
                    other => Err(SimError::LogParse(format!("unknown event kind {other}"))),
                }
            }
        }
    };
}

event_kinds! {
    Handover => "HANDOVER",
    Attach => "ATTACH",
    Decision => "DECISION",
    MigrateStart => "MIGRATE_START",
    MigrateCommit => "MIGRATE_COMMIT",
    MigrateAbort => "MIGRATE_ABORT",
    MigrateDone => "MIGRATE_DONE",
    Redirect => "REDIRECT",
    Probe => "PROBE",
    ProbeLost => "PROBE_LOST",
    MapRequest => "MAP_REQUEST",
    MapReply => "MAP_REPLY",
    NegMapReply => "NEG_MAP_REPLY",
    MapRegister => "MAP_REGISTER",
    MapNotify => "MAP_NOTIFY",
    RlocUpdate => "RLOC_UPDATE",
    FmccMigrate => "FMCC_MIGRATE",
    PacketIn => "PACKET_IN",
    PacketOut => "PACKET_OUT",
    RuleInstall => "RULE_INSTALL",
    RuleRemove => "RULE_REMOVE",
    Drop => "DROP",
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub time: f64,
    pub kind: EventKind,
    pub actor: String,
    pub fields: Vec<(String, String)>,
}

impl LogRecord {
    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn parse(line: &str) -> Result<LogRecord, SimError> {
        let bad = || SimError::LogParse(format!("malformed record: {line}"));
        let mut parts = line.split_whitespace();
        let time: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let kind: EventKind = parts.next().ok_or_else(bad)?.parse()?;
        let actor = parts.next().ok_or_else(bad)?.to_string();
        let fields = parts
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(bad)
            })
            .collect::<Result<_, _>>()?;
        Ok(LogRecord {
            time,
            kind,
            actor,
            fields,
        })
    }
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9} {} {}", self.time, self.kind, self.actor)?;
        for (k, v) in &self.fields {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

/// Ordered record of everything that happened in a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: LogRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.time <= record.time));
        self.records.push(record);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.of_kind(kind).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 48);
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<EventLog, SimError> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(LogRecord::parse)
            .collect::<Result<Vec<_>, _>>()?;
        if records.windows(2).any(|w| w[0].time > w[1].time) {
            return Err(SimError::LogParse("records out of time order".into()));
        }
        Ok(EventLog { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_orders_by_time_then_fifo() {
        let mut q = EventQueue::new();
        q.push(2.0, "c");
        q.push(1.0, "a");
        q.push(1.0, "b");
        q.push(0.5, "first");
        let order: Vec<_> = std::iter::from_fn(|| q.pop().map(|(_, e)| e)).collect();
        assert_eq!(order, vec!["first", "a", "b", "c"]);
    }

    #[test]
    fn record_round_trip() {
        let r = LogRecord {
            time: 1.25,
            kind: EventKind::MigrateStart,
            actor: "dc1".into(),
            fields: vec![("mig".into(), "3".into()), ("dst".into(), "2".into())],
        };
        let line = r.to_string();
        assert_eq!(line, "1.250000000 MIGRATE_START dc1 mig=3 dst=2");
        assert_eq!(LogRecord::parse(&line).unwrap(), r);
        for k in EventKind::ALL {
            assert_eq!(k.as_str().parse::<EventKind>().unwrap(), *k);
        }
        assert!(LogRecord::parse("x HANDOVER ue").is_err());
        assert!(LogRecord::parse("1.0 NOPE ue").is_err());
        assert!(EventLog::parse("2.0 PROBE ue\n1.0 PROBE ue\n").is_err());
    }
}
