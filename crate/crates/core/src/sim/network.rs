use std::collections::{BTreeMap, BTreeSet};

use super::SimError;

/// One-way propagation delay of a link, or a failed link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LinkDelay {
    Up(f64),
    Down,
}

/// Symmetric one-way latencies between named endpoints.
///
/// Pairs without an explicit entry use `default`. Keys are written
/// `a-b`; endpoint names never contain `-`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyMatrix {
    default: f64,
    links: BTreeMap<(String, String), LinkDelay>,
}

impl Default for LatencyMatrix {
    fn default() -> Self {
        LatencyMatrix::new(0.0)
    }
}

fn key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl LatencyMatrix {
    pub fn new(default: f64) -> Self {
        LatencyMatrix {
            default,
            links: BTreeMap::new(),
        }
    }

    pub fn default_latency(&self) -> f64 {
        self.default
    }

    pub fn set(&mut self, a: &str, b: &str, one_way: f64) -> &mut Self {
        self.links.insert(key(a, b), LinkDelay::Up(one_way));
        self
    }

    pub fn set_down(&mut self, a: &str, b: &str) -> &mut Self {
        self.links.insert(key(a, b), LinkDelay::Down);
        self
    }

    /// Parses `a-b` and sets the link.
    pub fn set_named(&mut self, pair: &str, delay: LinkDelay) -> Result<(), SimError> {
        let (a, b) = pair
            .split_once('-')
            .filter(|(a, b)| !a.is_empty() && !b.is_empty() && !b.contains('-'))
            .ok_or_else(|| {
                SimError::Config(format!(
                    "link key {pair:?} must be written endpoint-endpoint"
                ))
            })?;
        self.links.insert(key(a, b), delay);
        Ok(())
    }

    /// One-way delay, `None` if the link is down.
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        if a == b {
            return Some(0.0);
        }
        match self.links.get(&key(a, b)) {
            Some(LinkDelay::Up(d)) => Some(*d),
            Some(LinkDelay::Down) => None,
            None => Some(self.default),
        }
    }

    pub fn validate(&self, endpoints: &BTreeSet<String>) -> Result<(), SimError> {
        if !(self.default >= 0.0 && self.default.is_finite()) {
            return Err(SimError::Config(format!(
                "default latency must be >= 0, got {}",
                self.default
            )));
        }
        for ((a, b), delay) in &self.links {
            for e in [a, b] {
                if !endpoints.contains(e) {
                    return Err(SimError::Config(format!(
                        "unknown endpoint {e:?} in link {a}-{b}"
                    )));
                }
            }
            if let LinkDelay::Up(d) = delay {
                if !(*d >= 0.0 && d.is_finite()) {
                    return Err(SimError::Config(format!(
                        "latency of {a}-{b} must be >= 0, got {d}"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn ar(site: usize) -> String {
    format!("ar{site}")
}

pub fn dcr(site: usize) -> String {
    format!("dcr{site}")
}

pub fn dc(site: usize) -> String {
    format!("dc{site}")
}

pub const UE: &str = "ue";
pub const FMCC: &str = "fmcc";
pub const MRMS: &str = "mrms";

/// Every endpoint name a scenario with `sites` sites may reference.
pub fn endpoints(sites: usize) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = [UE, FMCC, MRMS].iter().map(|s| s.to_string()).collect();
    for s in 1..=sites {
        out.insert(ar(s));
        out.insert(dcr(s));
        out.insert(dc(s));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_with_default() {
        let mut m = LatencyMatrix::new(0.002);
        m.set("ar1", "dcr2", 0.025);
        m.set_down("dc1", "dc2");
        assert_eq!(m.get("dcr2", "ar1"), Some(0.025));
        assert_eq!(m.get("ar1", "dcr1"), Some(0.002));
        assert_eq!(m.get("dc2", "dc1"), None);
        assert_eq!(m.get("ue", "ue"), Some(0.0));
    }

    #[test]
    fn unknown_endpoints_rejected() {
        let mut m = LatencyMatrix::new(0.0);
        m.set_named("fmcc-dcr2", LinkDelay::Up(0.01)).unwrap();
        assert!(m.validate(&endpoints(2)).is_ok());
        m.set_named("fmcc-dcr9", LinkDelay::Up(0.01)).unwrap();
        assert!(matches!(
            m.validate(&endpoints(2)),
            Err(SimError::Config(_))
        ));
        assert!(m.set_named("nodash", LinkDelay::Up(0.0)).is_err());
        let mut neg = LatencyMatrix::new(0.0);
        neg.set("ue", "ar1", -1.0);
        assert!(neg.validate(&endpoints(1)).is_err());
    }
}
