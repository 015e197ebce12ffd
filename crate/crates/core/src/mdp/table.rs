use std::fmt::Write as _;

use rayon::prelude::*;

use super::{
    build_1d_mdp, uniformize, value_iteration, Action, MdpError, Rewards, SolveOptions, Threshold,
    Timing,
};

/// Model constants not fixed by the policy sweep itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub mu: f64,
    /// Uniformisation constant as a multiple of `mu`.
    pub c_factor: f64,
    pub gamma: f64,
    pub q_max: f64,
    pub k_factor: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            mu: 1.0,
            c_factor: 1.0,
            gamma: 0.95,
            q_max: 10.0,
            k_factor: 1.0,
        }
    }
}

impl Calibration {
    /// Calibration under which a random walk (`p = 0.5`) at `tau = 0.1` first
    /// migrates at distance 6.
    pub fn myopic() -> Self {
        Calibration {
            mu: 1.0,
            c_factor: 1.0,
            gamma: 0.2,
            q_max: 60.0,
            k_factor: 1.0,
        }
    }

    /// Timing with discount `gamma` at `c = mu`, then re-clocked at `c_factor * mu`.
    pub fn timing(&self) -> Result<Timing, MdpError> {
        if !(self.c_factor >= 1.0) {
            return Err(MdpError::Parameter {
                name: "c_factor",
                value: self.c_factor,
            });
        }
        Ok(Timing::from_gamma(self.mu, self.gamma)?.with_c(self.c_factor * self.mu))
    }

    pub fn rewards(&self, tau: f64) -> Rewards {
        Rewards {
            q_max: self.q_max,
            k_factor: self.k_factor,
            c_m: tau * self.q_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyRow {
    pub p: f64,
    /// Actions for distances `1..=thr`, indifferent states resolved.
    pub actions: Vec<Action>,
    /// `None` if the optimal policy is not of threshold type.
    pub threshold: Option<Threshold>,
}

impl PolicyRow {
    pub fn letters(&self) -> String {
        self.actions.iter().map(Action::letter).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    pub thr: u32,
    pub tau: f64,
    pub rows: Vec<PolicyRow>,
}

impl PolicyTable {
    pub fn all_threshold(&self) -> bool {
        self.rows.iter().all(|r| r.threshold.is_some())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("p");
        for d in 1..=self.thr {
            write!(out, ",d{d}").unwrap();
        }
        out.push_str(",threshold\n");
        for row in &self.rows {
            write!(out, "{}", row.p).unwrap();
            for a in &row.actions {
                write!(out, ",{}", a.letter()).unwrap();
            }
            match row.threshold {
                Some(t) => writeln!(out, ",{t}").unwrap(),
                None => out.push_str(",none\n"),
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("thr = {}, tau = {}\n", self.thr, self.tau);
        write!(out, "{:>6} |", "p \\ d").unwrap();
        for d in 1..=self.thr {
            write!(out, "{d:>3}").unwrap();
        }
        out.push_str(" | threshold\n");
        out.push_str(&"-".repeat(8 + 3 * self.thr as usize + 12));
        out.push('\n');
        for row in &self.rows {
            write!(out, "{:>6} |", row.p).unwrap();
            for a in &row.actions {
                write!(out, "{:>3}", a.letter()).unwrap();
            }
            match row.threshold {
                Some(t) => writeln!(out, " | {t}").unwrap(),
                None => out.push_str(" | not threshold-type\n"),
            }
        }
        out.push_str("C = continue, M = migrate\n");
        out
    }
}

/// Solves the 1D model for every `p` with `c_m = tau * q_max`.
pub fn policy_table(
    cal: &Calibration,
    thr: u32,
    p_values: &[f64],
    tau: f64,
) -> Result<PolicyTable, MdpError> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(MdpError::Parameter {
            name: "tau",
            value: tau,
        });
    }
    let timing = cal.timing()?;
    let rewards = cal.rewards(tau);
    let rows = p_values
        .par_iter()
        .map(|&p| {
            if !(p > 0.0 && p <= 1.0) {
                return Err(MdpError::Probability {
                    name: "p",
                    value: p,
                });
            }
            let model = build_1d_mdp(p, timing, thr, rewards)?;
            let mdp = uniformize(&model)?;
            let sol = value_iteration(&mdp, &SolveOptions::default())?;
            let threshold = sol.policy.threshold().ok();
            let actions = match threshold {
                Some(t) => sol.policy.effective_actions(t),
                None => sol.policy.actions[1..].to_vec(),
            };
            Ok(PolicyRow {
                p,
                actions,
                threshold,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PolicyTable { thr, tau, rows })
}
