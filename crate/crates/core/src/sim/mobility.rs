use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::SimError;
use crate::hexgrid::HexCell;
use crate::mdp::Action;

/// How the user moves between attachment points.
#[derive(Clone, Debug, PartialEq)]
pub enum MobilityModel {
    /// Uniform random walk over hexagonal cells with exp(`mu`) residence times.
    Hex { mu: f64 },
    /// Walk on the distance axis: away from the serving DC with probability `p_fwd`.
    OneD { p_fwd: f64, mu: f64 },
    /// Fixed attachment changes `(time, site)`, sites numbered from 1.
    Scripted { moves: Vec<(f64, usize)> },
}

impl MobilityModel {
    pub fn validate(&self, sites: usize) -> Result<(), SimError> {
        match self {
            MobilityModel::Hex { mu } | MobilityModel::OneD { mu, .. }
                if !(*mu > 0.0 && mu.is_finite()) =>
            {
                Err(SimError::Config(format!(
                    "mobility rate mu must be positive, got {mu}"
                )))
            }
            MobilityModel::OneD { p_fwd, .. } if !(0.0..=1.0).contains(p_fwd) => Err(
                SimError::Config(format!("p_fwd must lie in [0, 1], got {p_fwd}")),
            ),
            MobilityModel::Scripted { moves } => {
                if moves.windows(2).any(|w| w[0].0 > w[1].0)
                    || moves.iter().any(|(t, _)| !(*t >= 0.0))
                {
                    return Err(SimError::Config(
                        "scripted moves must have nondecreasing times >= 0".into(),
                    ));
                }
                if let Some((_, s)) = moves.iter().find(|(_, s)| *s == 0 || *s > sites) {
                    return Err(SimError::Config(format!(
                        "scripted move to unknown site {s}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// When the controller migrates, given the current distance `d >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub enum DecisionRule {
    Never,
    Always,
    /// Migrate once the distance reaches `k`.
    AtDistance(u32),
    /// Per-distance actions for `d = 1..=thr`; larger distances always migrate.
    Policy(Vec<Action>),
}

impl DecisionRule {
    pub fn migrate(&self, distance: u32) -> bool {
        if distance == 0 {
            return false;
        }
        match self {
            DecisionRule::Never => false,
            DecisionRule::Always => true,
            DecisionRule::AtDistance(k) => distance >= *k,
            DecisionRule::Policy(actions) => actions
                .get(distance as usize - 1)
                .is_none_or(|a| *a == Action::Migrate),
        }
    }
}

/// Position of the user relative to the serving DC.
#[derive(Clone, Debug)]
pub(crate) enum MobilityState {
    Hex {
        ue: HexCell,
        anchor: HexCell,
        sojourn: Exp<f64>,
    },
    OneD {
        distance: u32,
        p_fwd: f64,
        sojourn: Exp<f64>,
    },
    Scripted {
        site: usize,
        moves: Vec<(f64, usize)>,
        next: usize,
    },
}

impl MobilityState {
    pub fn new(model: &MobilityModel, ue_site: usize) -> Result<Self, SimError> {
        let exp =
            |mu: f64| Exp::new(mu).map_err(|e| SimError::Config(format!("mobility rate: {e}")));
        Ok(match model {
            MobilityModel::Hex { mu } => MobilityState::Hex {
                ue: HexCell::ORIGIN,
                anchor: HexCell::ORIGIN,
                sojourn: exp(*mu)?,
            },
            MobilityModel::OneD { p_fwd, mu } => MobilityState::OneD {
                distance: 0,
                p_fwd: *p_fwd,
                sojourn: exp(*mu)?,
            },
            MobilityModel::Scripted { moves } => MobilityState::Scripted {
                site: ue_site,
                moves: moves.clone(),
                next: 0,
            },
        })
    }

    /// Time until the next handover, or `None` when the script is exhausted.
    pub fn next_delay(&mut self, rng: &mut ChaCha8Rng, now: f64) -> Option<f64> {
        match self {
            MobilityState::Hex { sojourn, .. } | MobilityState::OneD { sojourn, .. } => {
                Some(sojourn.sample(rng))
            }
            MobilityState::Scripted { moves, next, .. } => {
                moves.get(*next).map(|(t, _)| (t - now).max(0.0))
            }
        }
    }

    pub fn step(&mut self, rng: &mut ChaCha8Rng) {
        match self {
            MobilityState::Hex { ue, .. } => {
                let dir = rng.random_range(0..6);
                *ue = ue.neighbors()[dir];
            }
            MobilityState::OneD {
                distance, p_fwd, ..
            } => {
                if *distance == 0 || rng.random_bool(*p_fwd) {
                    *distance += 1;
                } else {
                    *distance -= 1;
                }
            }
            MobilityState::Scripted { site, moves, next } => {
                *site = moves[*next].1;
                *next += 1;
            }
        }
    }

    /// Distance to the serving DC; `serving_site` is only used by scripts.
    pub fn distance(&self, serving_site: usize) -> u32 {
        match self {
            MobilityState::Hex { ue, anchor, .. } => ue.distance(anchor),
            MobilityState::OneD { distance, .. } => *distance,
            MobilityState::Scripted { site, .. } => u32::from(*site != serving_site),
        }
    }

    /// Site whose access router the user is attached to.
    ///
    /// Random walks map distance 0 to the serving site and any other distance
    /// to the next site in cyclic order.
    pub fn access_site(&self, serving_site: usize, sites: usize) -> usize {
        match self {
            MobilityState::Scripted { site, .. } => *site,
            _ if self.distance(serving_site) == 0 => serving_site,
            _ => serving_site % sites + 1,
        }
    }

    /// The service now runs next to the user.
    pub fn reset_anchor(&mut self) {
        match self {
            MobilityState::Hex { ue, anchor, .. } => *anchor = *ue,
            MobilityState::OneD { distance, .. } => *distance = 0,
            MobilityState::Scripted { .. } => {}
        }
    }

    pub fn describe(&self) -> String {
        match self {
            MobilityState::Hex { ue, anchor, .. } => format!("{}", *ue - *anchor),
            MobilityState::OneD { distance, .. } => distance.to_string(),
            MobilityState::Scripted { site, .. } => site.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn decision_rules() {
        assert!(!DecisionRule::Always.migrate(0));
        assert!(DecisionRule::Always.migrate(1));
        assert!(!DecisionRule::Never.migrate(7));
        assert!(!DecisionRule::AtDistance(3).migrate(2));
        assert!(DecisionRule::AtDistance(3).migrate(3));
        let p = DecisionRule::Policy(vec![Action::Continue, Action::Migrate]);
        assert!(!p.migrate(1));
        assert!(p.migrate(2));
        assert!(p.migrate(3));
    }

    #[test]
    fn one_d_reflects_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = MobilityState::new(
            &MobilityModel::OneD {
                p_fwd: 0.0,
                mu: 1.0,
            },
            1,
        )
        .unwrap();
        m.step(&mut rng);
        assert_eq!(m.distance(1), 1);
        m.step(&mut rng);
        assert_eq!(m.distance(1), 0);
        assert_eq!(m.access_site(1, 2), 1);
    }

    #[test]
    fn hex_access_site_cycles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = MobilityState::new(&MobilityModel::Hex { mu: 1.0 }, 1).unwrap();
        m.step(&mut rng);
        assert_eq!(m.distance(1), 1);
        assert_eq!(m.access_site(1, 3), 2);
        assert_eq!(m.access_site(3, 3), 1);
        m.reset_anchor();
        assert_eq!(m.distance(2), 0);
    }

    #[test]
    fn script_validation() {
        let bad = MobilityModel::Scripted {
            moves: vec![(2.0, 1), (1.0, 2)],
        };
        assert!(bad.validate(2).is_err());
        let unknown = MobilityModel::Scripted {
            moves: vec![(1.0, 3)],
        };
        assert!(unknown.validate(2).is_err());
        assert!(MobilityModel::OneD {
            p_fwd: 1.5,
            mu: 1.0
        }
        .validate(2)
        .is_err());
        assert!(MobilityModel::Hex { mu: 0.0 }.validate(2).is_err());
    }
}
