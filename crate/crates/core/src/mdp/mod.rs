//! Service-migration decision process.
//!
//! A continuous-time MDP over the UE-to-DC distance (1D walk) or over the
//! lumped hex classes (2D walk). At every handover the controller either
//! continues with the current DC (`a1`) or migrates the service so the
//! distance drops to 0 (`a2`). Leaving the threshold distance `thr` forces a
//! migration, which is charged like a voluntary one.

mod solve;
mod table;

pub use solve::{
    bellman_update, enumerate_policies, evaluate_policy, greedy_policy, optimality_residual,
    policy_iteration, q_values, value_iteration, value_iteration_from, Solution, SolveOptions,
};
pub use table::{policy_table, Calibration, PolicyRow, PolicyTable};

use std::fmt;

use thiserror::Error;

use crate::hexgrid::{self, AggState, HexError, Jump};

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("invalid probability {name} = {value}")]
    Probability { name: &'static str, value: f64 },
    #[error("invalid parameter {name} = {value}")]
    Parameter { name: &'static str, value: f64 },
    #[error("threshold distance must be at least 1")]
    Threshold,
    #[error("uniformisation constant c = {c} is below the maximum exit rate {rate}")]
    UniformizationRate { c: f64, rate: f64 },
    #[error("value iteration did not converge in {0} iterations")]
    NonConvergence(usize),
    #[error("policy evaluation system is singular")]
    SingularSystem,
    #[error("policy is not of threshold type: {0}")]
    NotThreshold(String),
    #[error(transparent)]
    Hex(#[from] HexError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    /// Keep the service where it is (`a1`).
    Continue,
    /// Move the service to the UE's current DC (`a2`).
    Migrate,
}

impl Action {
    pub fn letter(&self) -> char {
        match self {
            Action::Continue => 'C',
            Action::Migrate => 'M',
        }
    }
}

/// Quality `Q(d) = q_max - k_factor * d` and migration cost `c_m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rewards {
    pub q_max: f64,
    pub k_factor: f64,
    pub c_m: f64,
}

impl Rewards {
    pub fn quality(&self, distance: u32) -> f64 {
        self.q_max - self.k_factor * distance as f64
    }

    fn validate(&self) -> Result<(), MdpError> {
        if !(self.c_m >= 0.0 && self.c_m.is_finite()) {
            return Err(MdpError::Parameter {
                name: "c_m",
                value: self.c_m,
            });
        }
        for (name, value) in [("q_max", self.q_max), ("k_factor", self.k_factor)] {
            if !value.is_finite() {
                return Err(MdpError::Parameter { name, value });
            }
        }
        Ok(())
    }
}

/// Sojourn rate `mu`, uniformisation constant `c` and continuous discount `alpha`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub mu: f64,
    pub c: f64,
    pub alpha: f64,
}

impl Timing {
    /// `c = mu` and `alpha` chosen so the discrete discount equals `gamma`.
    pub fn from_gamma(mu: f64, gamma: f64) -> Result<Self, MdpError> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(MdpError::Parameter {
                name: "gamma",
                value: gamma,
            });
        }
        let t = Timing {
            mu,
            c: mu,
            alpha: mu * (1.0 - gamma) / gamma,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn with_c(self, c: f64) -> Self {
        Timing { c, ..self }
    }

    pub fn gamma(&self) -> f64 {
        self.c / (self.alpha + self.c)
    }

    fn validate(&self) -> Result<(), MdpError> {
        for (name, value) in [("mu", self.mu), ("c", self.c)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(MdpError::Parameter { name, value });
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(MdpError::Parameter {
                name: "alpha",
                value: self.alpha,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub to: usize,
    pub prob: f64,
    /// Leaving the threshold distance triggered an automatic migration.
    pub forced: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Choice {
    pub action: Action,
    pub transitions: Vec<Transition>,
}

/// Continuous-time decision process with exponential sojourns at rate `mu`.
#[derive(Clone, Debug, PartialEq)]
pub struct MdpModel {
    pub labels: Vec<String>,
    /// Distance (1D) or ring (2D) of each state; state 0 is the optimal DC.
    pub distances: Vec<u32>,
    pub choices: Vec<Vec<Choice>>,
    /// Probability of moving away from the DC; `None` for the 2D model.
    pub p_fwd: Option<f64>,
    pub timing: Timing,
    pub rewards: Rewards,
    pub thr: u32,
}

impl MdpModel {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    pub fn gamma(&self) -> f64 {
        self.timing.gamma()
    }

    /// Exit rate of a state under an action; every sojourn is exp(mu).
    pub fn exit_rate(&self, _state: usize, _action: Action) -> f64 {
        self.timing.mu
    }
}

/// `Q(d(s')) - g(a)`, with forced migrations charged `c_m`.
pub fn reward(model: &MdpModel, transition: &Transition, action: Action) -> f64 {
    let cost = if action == Action::Migrate || transition.forced {
        model.rewards.c_m
    } else {
        0.0
    };
    model.rewards.quality(model.distances[transition.to]) - cost
}

fn push(out: &mut Vec<Transition>, to: usize, prob: f64, forced: bool) {
    if prob <= 0.0 {
        return;
    }
    match out.iter_mut().find(|t| t.to == to && t.forced == forced) {
        Some(t) => t.prob += prob,
        None => out.push(Transition { to, prob, forced }),
    }
}

fn migrate_choice() -> Choice {
    Choice {
        action: Action::Migrate,
        transitions: vec![Transition {
            to: 0,
            prob: 1.0,
            forced: false,
        }],
    }
}

pub fn build_1d_mdp(
    p_fwd: f64,
    timing: Timing,
    thr: u32,
    rewards: Rewards,
) -> Result<MdpModel, MdpError> {
    if !(0.0..=1.0).contains(&p_fwd) {
        return Err(MdpError::Probability {
            name: "p_fwd",
            value: p_fwd,
        });
    }
    if thr < 1 {
        return Err(MdpError::Threshold);
    }
    timing.validate()?;
    rewards.validate()?;
    let n = thr as usize + 1;
    let mut choices = Vec::with_capacity(n);
    choices.push(vec![Choice {
        action: Action::Continue,
        transitions: vec![Transition {
            to: 1,
            prob: 1.0,
            forced: false,
        }],
    }]);
    for s in 1..n {
        let mut cont = Vec::new();
        if s < thr as usize {
            push(&mut cont, s + 1, p_fwd, false);
        } else {
            push(&mut cont, 0, p_fwd, true);
        }
        push(&mut cont, s - 1, 1.0 - p_fwd, false);
        choices.push(vec![
            Choice {
                action: Action::Continue,
                transitions: cont,
            },
            migrate_choice(),
        ]);
    }
    Ok(MdpModel {
        labels: (0..n).map(|d| d.to_string()).collect(),
        distances: (0..n as u32).collect(),
        choices,
        p_fwd: Some(p_fwd),
        timing,
        rewards,
        thr,
    })
}

/// Decision process over the hex classes of rings `0..=thr_ring`.
pub fn build_2d_mdp(thr_ring: u32, timing: Timing, rewards: Rewards) -> Result<MdpModel, MdpError> {
    if thr_ring < 1 {
        return Err(MdpError::Threshold);
    }
    timing.validate()?;
    rewards.validate()?;
    let states = hexgrid::agg_states(thr_ring + 1);
    let index = |s: AggState| {
        states
            .iter()
            .position(|x| *x == s)
            .expect("class within rings")
    };
    let mut choices = Vec::with_capacity(states.len());
    for s in &states {
        let cell = s.representative().expect("valid class");
        let mut cont = Vec::new();
        for jump in hexgrid::walk_jumps(cell, thr_ring + 1) {
            match jump {
                Jump::Cell(c) => push(&mut cont, index(AggState::of(c)), 1.0 / 6.0, false),
                Jump::Reset => push(&mut cont, 0, 1.0 / 6.0, true),
            }
        }
        let mut row = vec![Choice {
            action: Action::Continue,
            transitions: cont,
        }];
        if s.ring > 0 {
            row.push(migrate_choice());
        }
        choices.push(row);
    }
    Ok(MdpModel {
        labels: states.iter().map(|s| s.to_string()).collect(),
        distances: states.iter().map(|s| s.ring).collect(),
        choices,
        p_fwd: None,
        timing,
        rewards,
        thr: thr_ring,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteChoice {
    pub action: Action,
    /// Sparse transition row, sorted by target, zero entries dropped.
    pub probs: Vec<(usize, f64)>,
    pub reward: f64,
}

/// Discrete-time process produced by uniformisation.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMdp {
    pub distances: Vec<u32>,
    pub choices: Vec<Vec<DiscreteChoice>>,
    pub gamma: f64,
}

impl DiscreteMdp {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    /// States where every available action has the same row and reward.
    pub fn indifferent(&self) -> Vec<bool> {
        self.choices
            .iter()
            .map(|row| {
                row.len() > 1
                    && row.windows(2).all(|w| {
                        let (a, b) = (&w[0], &w[1]);
                        (a.reward - b.reward).abs() <= 1e-12 * a.reward.abs().max(1.0)
                            && a.probs.len() == b.probs.len()
                            && a.probs
                                .iter()
                                .zip(&b.probs)
                                .all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() <= 1e-12)
                    })
            })
            .collect()
    }
}

/// Uniformises at rate `c`: self-loops absorb the slack between `c` and each
/// exit rate, rewards are rescaled by `(alpha + beta) / (alpha + c)` and the
/// discount becomes `c / (alpha + c)`.
pub fn uniformize(model: &MdpModel) -> Result<DiscreteMdp, MdpError> {
    let Timing { c, alpha, .. } = model.timing;
    model.timing.validate()?;
    let mut choices = Vec::with_capacity(model.len());
    for (s, row) in model.choices.iter().enumerate() {
        let mut out = Vec::with_capacity(row.len());
        for choice in row {
            let beta = model.exit_rate(s, choice.action);
            if c < beta * (1.0 - 1e-12) {
                return Err(MdpError::UniformizationRate { c, rate: beta });
            }
            let scale = beta / c;
            let mut dense = std::collections::BTreeMap::<usize, f64>::new();
            let mut expected = 0.0;
            let mut stay = 0.0;
            for t in &choice.transitions {
                expected += t.prob * reward(model, t, choice.action);
                if t.to == s {
                    stay += t.prob;
                } else {
                    *dense.entry(t.to).or_default() += t.prob * scale;
                }
            }
            let self_loop = 1.0 - (1.0 - stay) * scale;
            if self_loop > 0.0 {
                *dense.entry(s).or_default() += self_loop;
            }
            out.push(DiscreteChoice {
                action: choice.action,
                probs: dense.into_iter().filter(|(_, p)| *p > 0.0).collect(),
                reward: expected * (alpha + beta) / (alpha + c),
            });
        }
        choices.push(out);
    }
    Ok(DiscreteMdp {
        distances: model.distances.clone(),
        choices,
        gamma: model.gamma(),
    })
}

/// Smallest distance from which the policy migrates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Threshold {
    At(u32),
    Never,
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::At(d) => write!(f, "{d}"),
            Threshold::Never => write!(f, "inf"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub actions: Vec<Action>,
    pub distances: Vec<u32>,
    /// Both actions are equivalent here, so either letter is consistent.
    pub indifferent: Vec<bool>,
}

impl Policy {
    /// Extracts the threshold, treating indifferent states as wildcards.
    pub fn threshold(&self) -> Result<Threshold, MdpError> {
        let max_d = self.distances.iter().copied().max().unwrap_or(0);
        for t in 1..=max_d + 1 {
            let consistent = self
                .states()
                .all(|(d, a, indiff)| d == 0 || indiff || (d >= t) == (a == Action::Migrate));
            if consistent {
                return Ok(if t > max_d {
                    Threshold::Never
                } else {
                    Threshold::At(t)
                });
            }
        }
        Err(MdpError::NotThreshold(self.letters()))
    }

    /// Action letters for distances `1..`, in state order.
    pub fn letters(&self) -> String {
        self.states()
            .filter(|(d, ..)| *d > 0)
            .map(|(_, a, _)| a.letter())
            .collect()
    }

    /// Letters with indifferent states resolved to match `threshold`.
    pub fn effective_actions(&self, threshold: Threshold) -> Vec<Action> {
        self.states()
            .filter(|(d, ..)| *d > 0)
            .map(|(d, a, indiff)| match (indiff, threshold) {
                (false, _) => a,
                (true, Threshold::At(t)) if d >= t => Action::Migrate,
                (true, _) => Action::Continue,
            })
            .collect()
    }

    fn states(&self) -> impl Iterator<Item = (u32, Action, bool)> + '_ {
        self.distances
            .iter()
            .zip(&self.actions)
            .zip(&self.indifferent)
            .map(|((d, a), i)| (*d, *a, *i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rewards() -> Rewards {
        Rewards {
            q_max: 10.0,
            k_factor: 1.0,
            c_m: 1.0,
        }
    }

    fn timing() -> Timing {
        Timing::from_gamma(1.0, 0.9).unwrap()
    }

    #[test]
    fn one_d_smallest_model() {
        let model = build_1d_mdp(0.3, timing(), 1, rewards()).unwrap();
        assert_eq!(model.len(), 2);
        let cont = &model.choices[1][0];
        assert_eq!(cont.action, Action::Continue);
        assert!(cont.transitions.contains(&Transition {
            to: 0,
            prob: 0.3,
            forced: true
        }));
        assert!(cont
            .transitions
            .iter()
            .any(|t| t.to == 0 && !t.forced && (t.prob - 0.7).abs() < 1e-15));
        assert_eq!(
            build_1d_mdp(0.5, timing(), 10, rewards()).unwrap().len(),
            11
        );
        assert_eq!(
            build_1d_mdp(1.5, timing(), 3, rewards()),
            Err(MdpError::Probability {
                name: "p_fwd",
                value: 1.5
            })
        );
        assert_eq!(
            build_1d_mdp(0.5, timing(), 0, rewards()),
            Err(MdpError::Threshold)
        );
    }

    #[test]
    fn one_d_deterministic_drift_cycles() {
        let model = build_1d_mdp(1.0, timing(), 4, rewards()).unwrap();
        let mut s = 0;
        let mut seen = vec![s];
        for _ in 0..5 {
            let t = &model.choices[s][0].transitions;
            assert_eq!(t.len(), 1);
            s = t[0].to;
            seen.push(s);
        }
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 0]);
    }

    #[test]
    fn two_d_smallest_model() {
        let model = build_2d_mdp(1, timing(), rewards()).unwrap();
        assert_eq!(model.len(), 2);
        let cont = &model.choices[1][0].transitions;
        let to_origin: f64 = cont.iter().filter(|t| t.to == 0).map(|t| t.prob).sum();
        let forced: f64 = cont.iter().filter(|t| t.forced).map(|t| t.prob).sum();
        let stay: f64 = cont.iter().filter(|t| t.to == 1).map(|t| t.prob).sum();
        assert_abs_diff_eq!(to_origin, 4.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(forced, 3.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(stay, 2.0 / 6.0, epsilon = 1e-15);
        assert_eq!(
            build_2d_mdp(4, timing(), rewards()).unwrap().len(),
            hexgrid::agg_states(5).len()
        );
        for row in &build_2d_mdp(4, timing(), rewards()).unwrap().choices[1..] {
            assert_eq!(
                row[1].transitions,
                vec![Transition {
                    to: 0,
                    prob: 1.0,
                    forced: false
                }]
            );
        }
    }

    #[test]
    fn reward_examples() {
        let model = build_1d_mdp(0.5, timing(), 3, rewards()).unwrap();
        let home = Transition {
            to: 0,
            prob: 1.0,
            forced: false,
        };
        assert_eq!(reward(&model, &home, Action::Migrate), 9.0);
        assert_eq!(
            reward(
                &model,
                &Transition {
                    to: 2,
                    prob: 1.0,
                    forced: false
                },
                Action::Continue
            ),
            8.0
        );
        assert_eq!(
            reward(
                &model,
                &Transition {
                    to: 0,
                    prob: 1.0,
                    forced: true
                },
                Action::Continue
            ),
            9.0
        );
    }

    #[test]
    fn uniformize_at_mu_keeps_probabilities() {
        let model = build_1d_mdp(0.4, Timing::from_gamma(2.0, 0.8).unwrap(), 3, rewards()).unwrap();
        let d = uniformize(&model).unwrap();
        assert_abs_diff_eq!(d.gamma, 0.8, epsilon = 1e-12);
        let cont = &d.choices[2][0];
        assert_eq!(cont.probs, vec![(1, 0.6), (3, 0.4)]);
        assert_abs_diff_eq!(cont.reward, 0.6 * 9.0 + 0.4 * 7.0, epsilon = 1e-12);
    }

    #[test]
    fn uniformize_with_faster_clock_adds_self_loops() {
        let base = Timing::from_gamma(1.0, 0.9).unwrap();
        let model = build_1d_mdp(0.4, base.with_c(2.0), 3, rewards()).unwrap();
        let d = uniformize(&model).unwrap();
        let cont = &d.choices[2][0];
        assert_eq!(cont.probs, vec![(1, 0.3), (2, 0.5), (3, 0.2)]);
        let alpha = base.alpha;
        assert_abs_diff_eq!(
            cont.reward,
            (0.6 * 9.0 + 0.4 * 7.0) * (alpha + 1.0) / (alpha + 2.0),
            epsilon = 1e-12
        );
        let slow = build_1d_mdp(0.4, base.with_c(0.5), 3, rewards()).unwrap();
        assert_eq!(
            uniformize(&slow),
            Err(MdpError::UniformizationRate { c: 0.5, rate: 1.0 })
        );
    }

    #[test]
    fn gamma_limits() {
        let t = Timing {
            mu: 1.0,
            c: 1.0,
            alpha: 1e-12,
        };
        assert!(1.0 - t.gamma() < 1e-11);
        assert!(Timing::from_gamma(1.0, 1.0).is_err());
    }

    #[test]
    fn threshold_extraction() {
        let p = |letters: &str, indiff: &[usize]| Policy {
            actions: std::iter::once(Action::Continue)
                .chain(letters.chars().map(|c| {
                    if c == 'M' {
                        Action::Migrate
                    } else {
                        Action::Continue
                    }
                }))
                .collect(),
            distances: (0..=letters.len() as u32).collect(),
            indifferent: (0..=letters.len()).map(|i| indiff.contains(&i)).collect(),
        };
        assert_eq!(p("CCMM", &[]).threshold(), Ok(Threshold::At(3)));
        assert_eq!(p("CCCC", &[]).threshold(), Ok(Threshold::Never));
        assert_eq!(p("MMMM", &[]).threshold(), Ok(Threshold::At(1)));
        assert_eq!(p("CCCC", &[4]).threshold(), Ok(Threshold::At(4)));
        assert!(matches!(
            p("CMCM", &[]).threshold(),
            Err(MdpError::NotThreshold(_))
        ));
        let w = p("CCCC", &[4]);
        assert_eq!(
            w.effective_actions(Threshold::At(4)).last(),
            Some(&Action::Migrate)
        );
    }
}
