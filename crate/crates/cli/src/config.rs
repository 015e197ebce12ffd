//! TOML scenario files.
//!
//! Every section is optional and every key has a default, so an empty file
//! is a valid configuration. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fmc_core::mdp::{policy_table, Calibration, Threshold};
use fmc_core::sim::{
    DecisionRule, Horizon, LatencyMatrix, LinkDelay, MobilityModel, PlaneKind, ScenarioConfig,
    TransferConfig,
};
use fmc_core::{DelayModel, RttModel, TransferParams};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub mobility: MobilitySection,
    pub decision: DecisionSection,
    pub control_plane: ControlPlaneSection,
    pub links: BTreeMap<String, LinkValue>,
    pub transfer: TransferSection,
    pub sim: SimSection,
    pub analysis: AnalysisSection,
    pub calibration: CalibrationSection,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MobilityKind {
    Hex,
    #[serde(rename = "1d")]
    OneD,
    Scripted,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilitySection {
    pub model: MobilityKind,
    pub mu: f64,
    pub p_fwd: f64,
    /// `[time_s, site]` pairs for the scripted model.
    pub moves: Vec<(f64, usize)>,
    pub ue_site: usize,
}

impl Default for MobilitySection {
    fn default() -> Self {
        MobilitySection {
            model: MobilityKind::Hex,
            mu: 1.0,
            p_fwd: 0.5,
            moves: Vec::new(),
            ue_site: 1,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Never,
    Always,
    Threshold,
    /// Solve the 1D model and follow its optimal policy.
    Mdp,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecisionSection {
    pub rule: RuleKind,
    /// Migrate once the distance reaches `k`.
    pub k: u32,
    pub tau: f64,
    pub thr: u32,
}

impl Default for DecisionSection {
    fn default() -> Self {
        DecisionSection {
            rule: RuleKind::Threshold,
            k: 2,
            tau: 0.1,
            thr: 10,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneName {
    None,
    Lisp,
    Sdn,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlPlaneSection {
    pub kind: PlaneName,
    pub sites: usize,
    pub vm_site: usize,
    pub controller_delay_s: f64,
    pub tunnel: bool,
    pub overlap: bool,
}

impl Default for ControlPlaneSection {
    fn default() -> Self {
        ControlPlaneSection {
            kind: PlaneName::None,
            sites: 2,
            vm_site: 1,
            controller_delay_s: 0.0,
            tunnel: true,
            overlap: false,
        }
    }
}

/// One-way delay in seconds, or `"down"`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum LinkValue {
    Seconds(f64),
    State(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSection {
    pub objects_size_bits: f64,
    pub sig_size_bits: f64,
    pub mss_bytes: u32,
    pub w_max: f64,
    pub p_loss: f64,
    pub t_vm_conversion_s: f64,
    pub bandwidth_bps: f64,
}

impl Default for TransferSection {
    fn default() -> Self {
        let p = TransferParams::default();
        TransferSection {
            objects_size_bits: p.objects_size,
            sig_size_bits: p.sig_size,
            mss_bytes: p.mss_bytes,
            w_max: p.w_max,
            p_loss: p.p_loss,
            t_vm_conversion_s: p.t_vm_conversion,
            bandwidth_bps: TransferConfig::default().bandwidth_bps,
        }
    }
}

impl TransferSection {
    /// Transfer parameters at the default analytic RTT.
    pub fn params(&self) -> TransferParams {
        TransferParams {
            objects_size: self.objects_size_bits,
            sig_size: self.sig_size_bits,
            mss_bytes: self.mss_bytes,
            w_max: self.w_max,
            p_loss: self.p_loss,
            t_vm_conversion: self.t_vm_conversion_s,
            ..TransferParams::default()
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub seed: u64,
    pub horizon_handovers: Option<u64>,
    pub horizon_s: Option<f64>,
    pub probe_period_s: Option<f64>,
    pub probe_timeout_s: f64,
    pub flows: u32,
    pub flow_period_s: f64,
    pub log_mobility: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            seed: 0,
            horizon_handovers: None,
            horizon_s: None,
            probe_period_s: None,
            probe_timeout_s: 2.0,
            flows: 0,
            flow_period_s: 1.0,
            log_mobility: true,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub k_min: u32,
    pub k_max: u32,
    pub delay_coeff: f64,
    pub rtt_coeff: f64,
    pub fractions: Vec<f64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            k_min: 2,
            k_max: 8,
            delay_coeff: DelayModel::default().coeff,
            rtt_coeff: RttModel::default().coeff,
            fractions: vec![1.0, 0.5, 0.1],
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationPreset {
    Default,
    Myopic,
}

/// MDP constants; unset fields come from `preset`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub preset: CalibrationPreset,
    pub mu: Option<f64>,
    pub c_factor: Option<f64>,
    pub gamma: Option<f64>,
    pub q_max: Option<f64>,
    pub k_factor: Option<f64>,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            preset: CalibrationPreset::Default,
            mu: None,
            c_factor: None,
            gamma: None,
            q_max: None,
            k_factor: None,
        }
    }
}

impl CalibrationSection {
    pub fn calibration(&self) -> Calibration {
        let base = match self.preset {
            CalibrationPreset::Default => Calibration::default(),
            CalibrationPreset::Myopic => Calibration::myopic(),
        };
        Calibration {
            mu: self.mu.unwrap_or(base.mu),
            c_factor: self.c_factor.unwrap_or(base.c_factor),
            gamma: self.gamma.unwrap_or(base.gamma),
            q_max: self.q_max.unwrap_or(base.q_max),
            k_factor: self.k_factor.unwrap_or(base.k_factor),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: Option<&Path>) -> Result<Config> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                Config::parse(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    pub fn delay_model(&self) -> DelayModel {
        DelayModel {
            coeff: self.analysis.delay_coeff,
        }
    }

    pub fn rtt_model(&self) -> RttModel {
        RttModel {
            coeff: self.analysis.rtt_coeff,
        }
    }

    fn latency_matrix(&self) -> Result<LatencyMatrix> {
        let default = match self.links.get("default") {
            None => 0.0,
            Some(LinkValue::Seconds(s)) => *s,
            Some(LinkValue::State(s)) => {
                bail!("links.default must be a number of seconds, got {s:?}")
            }
        };
        let mut m = LatencyMatrix::new(default);
        for (pair, value) in self.links.iter().filter(|(k, _)| *k != "default") {
            let delay = match value {
                LinkValue::Seconds(s) => LinkDelay::Up(*s),
                LinkValue::State(s) if s == "down" => LinkDelay::Down,
                LinkValue::State(s) => {
                    bail!("link {pair}: expected seconds or \"down\", got {s:?}")
                }
            };
            m.set_named(pair, delay)?;
        }
        Ok(m)
    }

    fn decision_rule(&self) -> Result<DecisionRule> {
        let d = &self.decision;
        Ok(match d.rule {
            RuleKind::Never => DecisionRule::Never,
            RuleKind::Always => DecisionRule::Always,
            RuleKind::Threshold => DecisionRule::AtDistance(d.k),
            RuleKind::Mdp => {
                let p = match self.mobility.model {
                    MobilityKind::OneD => self.mobility.p_fwd,
                    _ => bail!("decision.rule = \"mdp\" needs the 1d mobility model"),
                };
                let table = policy_table(&self.calibration.calibration(), d.thr, &[p], d.tau)?;
                let row = &table.rows[0];
                match row.threshold {
                    Some(Threshold::At(_)) | Some(Threshold::Never) => {
                        DecisionRule::Policy(row.actions.clone())
                    }
                    None => bail!(
                        "optimal policy for p = {p} is not threshold-type: {}",
                        row.letters()
                    ),
                }
            }
        })
    }

    pub fn scenario(&self, seed_override: Option<u64>) -> Result<ScenarioConfig> {
        let m = &self.mobility;
        let mobility = match m.model {
            MobilityKind::Hex => MobilityModel::Hex { mu: m.mu },
            MobilityKind::OneD => MobilityModel::OneD {
                p_fwd: m.p_fwd,
                mu: m.mu,
            },
            MobilityKind::Scripted => MobilityModel::Scripted {
                moves: m.moves.clone(),
            },
        };
        let horizon = match (self.sim.horizon_handovers, self.sim.horizon_s) {
            (Some(_), Some(_)) => bail!("set only one of sim.horizon_handovers and sim.horizon_s"),
            (Some(n), None) => Horizon::Handovers(n),
            (None, Some(t)) => Horizon::Time(t),
            (None, None) => Horizon::Handovers(1000),
        };
        let cp = &self.control_plane;
        let cfg = ScenarioConfig {
            seed: seed_override.unwrap_or(self.sim.seed),
            mobility,
            decision: self.decision_rule()?,
            plane: match cp.kind {
                PlaneName::None => PlaneKind::None,
                PlaneName::Lisp => PlaneKind::Lisp,
                PlaneName::Sdn => PlaneKind::Sdn,
            },
            sites: cp.sites,
            vm_site: cp.vm_site,
            ue_site: m.ue_site,
            links: self.latency_matrix()?,
            transfer: TransferConfig {
                params: self.transfer.params(),
                bandwidth_bps: self.transfer.bandwidth_bps,
            },
            horizon,
            probe_period: self.sim.probe_period_s,
            probe_timeout: self.sim.probe_timeout_s,
            flows: self.sim.flows,
            flow_period: self.sim.flow_period_s,
            log_mobility: self.sim.log_mobility,
            delay_model: self.delay_model(),
            controller_delay: cp.controller_delay_s,
            tunnel: cp.tunnel,
            overlap: cp.overlap,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg = Config::parse("").unwrap();
        let s = cfg.scenario(None).unwrap();
        assert_eq!(s.horizon, Horizon::Handovers(1000));
        assert_eq!(s.decision, DecisionRule::AtDistance(2));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = Config::parse("[sim]\nseed = 1\nbogus = 2\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn links_and_scripted_moves() {
        let text = r#"
            [mobility]
            model = "scripted"
            moves = [[5.0, 2]]
            [control_plane]
            kind = "lisp"
            [links]
            default = 0.001
            "ar2-dcr1" = 0.025
            "dc1-dc2" = "down"
            [sim]
            horizon_s = 10.0
        "#;
        let s = Config::parse(text).unwrap().scenario(Some(7)).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.links.get("dcr1", "ar2"), Some(0.025));
        assert_eq!(s.links.get("dc2", "dc1"), None);
        assert_eq!(s.links.get("ue", "ar1"), Some(0.001));
        assert_eq!(
            s.mobility,
            MobilityModel::Scripted {
                moves: vec![(5.0, 2)]
            }
        );
    }

    #[test]
    fn mdp_rule_follows_solved_policy() {
        let text = "[mobility]\nmodel = \"1d\"\np_fwd = 0.5\n[decision]\nrule = \"mdp\"\ntau = 0.1\n[calibration]\npreset = \"myopic\"\n";
        let s = Config::parse(text).unwrap().scenario(None).unwrap();
        let DecisionRule::Policy(actions) = s.decision else {
            panic!("expected policy rule")
        };
        let first = actions
            .iter()
            .position(|a| *a == fmc_core::mdp::Action::Migrate);
        assert_eq!(first, Some(5));
    }
}
