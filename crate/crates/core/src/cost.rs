//! Signaling, migration and service-disruption costs.

use thiserror::Error;

use crate::chain::StationaryDist;
use crate::hexgrid::AggState;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("packet loss probability must lie in [0, 1), got {0}")]
    LossProbability(f64),
    #[error("invalid transfer parameter {name}: {value}")]
    Parameter { name: &'static str, value: f64 },
    #[error("ring count k must be at least 2, got {0}")]
    RingCount(u32),
}

/// Bulk-transfer parameters for moving service state between DCs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferParams {
    /// Service state to move, in bits.
    pub objects_size: f64,
    /// Size of one signaling message, in bits.
    pub sig_size: f64,
    pub mss_bytes: u32,
    /// Maximum congestion window, in segments.
    pub w_max: f64,
    pub p_loss: f64,
    /// Round-trip time between source and destination DC, in seconds.
    pub rtt: f64,
    /// Time to convert and restart the service at the destination, in seconds.
    pub t_vm_conversion: f64,
}

impl Default for TransferParams {
    fn default() -> Self {
        TransferParams {
            objects_size: 1e9,
            sig_size: 800.0,
            mss_bytes: 1460,
            w_max: 1024.0,
            p_loss: 0.0,
            rtt: 0.01,
            t_vm_conversion: 0.0,
        }
    }
}

impl TransferParams {
    pub fn validate(&self) -> Result<(), CostError> {
        if !(0.0..1.0).contains(&self.p_loss) {
            return Err(CostError::LossProbability(self.p_loss));
        }
        let checks = [
            ("objects_size", self.objects_size, self.objects_size >= 0.0),
            ("sig_size", self.sig_size, self.sig_size >= 0.0),
            ("mss_bytes", self.mss_bytes as f64, self.mss_bytes > 0),
            ("w_max", self.w_max, self.w_max > 0.0),
            ("rtt", self.rtt, self.rtt >= 0.0),
            (
                "t_vm_conversion",
                self.t_vm_conversion,
                self.t_vm_conversion >= 0.0,
            ),
        ];
        for (name, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(CostError::Parameter { name, value });
            }
        }
        Ok(())
    }

    /// Number of MSS-sized segments needed for the service state.
    pub fn segments(&self) -> f64 {
        (self.objects_size / (self.mss_bytes as f64 * 8.0)).ceil()
    }

    pub fn with_rtt(mut self, rtt: f64) -> Self {
        self.rtt = rtt;
        self
    }

    /// Same parameters with only `fraction` of the state to move.
    pub fn scaled(mut self, fraction: f64) -> Self {
        self.objects_size *= fraction;
        self
    }
}

/// Round trip between the source DC and a DC `d` rings away: `coeff * d^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RttModel {
    pub coeff: f64,
}

impl Default for RttModel {
    fn default() -> Self {
        RttModel { coeff: 0.01 }
    }
}

impl RttModel {
    pub fn rtt(&self, distance: u32) -> f64 {
        self.coeff * (distance as f64).powi(2)
    }
}

/// Bits moved by one migration: the service state plus three signaling messages.
pub fn signaling_cost(params: &TransferParams) -> f64 {
    params.objects_size + 3.0 * params.sig_size
}

/// Probability that a handover leaves ring `k - 1`, i.e. triggers a migration.
pub fn migration_probability(dist: &StationaryDist<AggState>, k: u32) -> f64 {
    dist.iter()
        .filter(|(s, _)| s.ring + 1 == k)
        .map(|(s, p)| s.outward_sixths() as f64 / 6.0 * p)
        .sum()
}

/// Expected bits per handover spent on migration.
pub fn migration_cost(dist: &StationaryDist<AggState>, k: u32, cost: f64) -> f64 {
    migration_probability(dist, k) * cost
}

/// Expected bits per unit time, given handovers at rate `mu`.
pub fn migration_cost_rate(dist: &StationaryDist<AggState>, k: u32, cost: f64, mu: f64) -> f64 {
    mu * migration_cost(dist, k, cost)
}

/// Time from the start of the state transfer until the service runs at the
/// destination, for a TCP-like bulk transfer with slow start and random loss.
pub fn service_disruption_time(params: &TransferParams) -> Result<f64, CostError> {
    params.validate()?;
    let n = params.segments();
    if n == 0.0 {
        return Ok(params.t_vm_conversion);
    }
    let p = params.p_loss;
    let rtt = params.rtt;
    let log_n = if n > 1.0 { n.ln() / 1.57f64.ln() } else { 0.0 };
    let loss_term = 32.0 * (2.0 * p + 4.0 * p * p + 16.0 * p.powi(3)) / (1.0 + rtt).powi(3);
    // The per-segment ack term diverges as rtt -> 0 but is multiplied by rtt below.
    let ack_term = if rtt > 0.0 {
        2.0 * (1.0 + p) / (rtt * 1000.0)
    } else {
        0.0
    };
    let window_term = (10.0 + 3.0 * rtt) / (4.0 * (1.0 - p) * params.w_max * params.w_max.sqrt());
    let rounds = log_n + (loss_term + ack_term) * n + 4.0 * p * log_n + 20.0 * p + window_term * n;
    Ok(rounds * rtt + params.t_vm_conversion)
}

/// Disruption time when migrating across `k - 1` rings.
pub fn sdt_vs_k(k: u32, rtt_model: &RttModel, params: &TransferParams) -> Result<f64, CostError> {
    if k < 2 {
        return Err(CostError::RingCount(k));
    }
    service_disruption_time(&params.with_rtt(rtt_model.rtt(k - 1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::lumped_walk_steady_state;
    use crate::hexgrid::WalkParams;
    use approx::assert_relative_eq;

    #[test]
    fn signaling_cost_adds_three_messages() {
        let p = TransferParams {
            objects_size: 1000.0,
            sig_size: 10.0,
            ..Default::default()
        };
        assert_eq!(signaling_cost(&p), 1030.0);
    }

    #[test]
    fn two_ring_migration_cost() {
        let d = lumped_walk_steady_state(2, WalkParams::default()).unwrap();
        assert_relative_eq!(migration_probability(&d, 2), 0.3, epsilon = 1e-12);
        assert_relative_eq!(migration_cost(&d, 2, 100.0), 30.0, epsilon = 1e-10);
        assert_relative_eq!(
            migration_cost_rate(&d, 2, 100.0, 2.0),
            60.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn golden_disruption_times() {
        // Frozen from an independent evaluation of the closed form.
        let cases = [
            (
                TransferParams {
                    rtt: 0.01,
                    ..Default::default()
                },
                171.55130668461032,
            ),
            (
                TransferParams {
                    rtt: 0.1,
                    ..Default::default()
                },
                174.42470340463544,
            ),
            (
                TransferParams {
                    objects_size: 8e6,
                    w_max: 64.0,
                    p_loss: 0.01,
                    rtt: 0.05,
                    t_vm_conversion: 0.5,
                    ..Default::default()
                },
                22.147045728170795,
            ),
            (
                TransferParams {
                    p_loss: 0.001,
                    rtt: 0.25,
                    ..Default::default()
                },
                882.2702383574506,
            ),
        ];
        for (params, want) in cases {
            assert_relative_eq!(
                service_disruption_time(&params).unwrap(),
                want,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn disruption_edge_cases() {
        let zero = TransferParams {
            objects_size: 0.0,
            t_vm_conversion: 2.5,
            p_loss: 0.1,
            ..Default::default()
        };
        assert_eq!(service_disruption_time(&zero).unwrap(), 2.5);
        let no_rtt = TransferParams {
            rtt: 0.0,
            t_vm_conversion: 1.0,
            ..Default::default()
        };
        assert_eq!(service_disruption_time(&no_rtt).unwrap(), 1.0);
        let one_seg = TransferParams {
            objects_size: 100.0,
            rtt: 0.1,
            ..Default::default()
        };
        assert!(service_disruption_time(&one_seg).unwrap() > 0.0);
        let lossy = TransferParams {
            p_loss: 1.0,
            ..Default::default()
        };
        assert_eq!(
            service_disruption_time(&lossy),
            Err(CostError::LossProbability(1.0))
        );
        assert!(matches!(
            sdt_vs_k(1, &RttModel::default(), &TransferParams::default()),
            Err(CostError::RingCount(1))
        ));
    }

    #[test]
    fn sdt_vs_k_uses_quadratic_rtt() {
        let params = TransferParams::default();
        let rtt = RttModel::default();
        assert_relative_eq!(
            sdt_vs_k(2, &rtt, &params).unwrap(),
            171.55130668461032,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            sdt_vs_k(5, &rtt, &params.scaled(0.1)).unwrap(),
            20.445443312628182,
            max_relative = 1e-12
        );
    }
}
