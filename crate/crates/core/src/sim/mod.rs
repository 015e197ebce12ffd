//! Deterministic discrete-event simulator.
//!
//! One logical clock drives user mobility, periodic echo probes, data flows
//! and the messages of a pluggable [`ControlPlane`]. Everything that happens
//! is written to an [`EventLog`]; the same seed always yields the same log.

pub mod engine;
pub mod metrics;
mod mobility;
pub mod network;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use engine::{EventKind, EventLog, EventQueue, LogRecord};
pub use metrics::{measure_downtime, rtt_probe, FlowStats, MigrationTiming, SimMetrics};
pub use mobility::{DecisionRule, MobilityModel};
pub use network::{LatencyMatrix, LinkDelay};

use crate::chain::DelayModel;
use crate::cost::{service_disruption_time, TransferParams};
use mobility::MobilityState;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("incomplete log: {0}")]
    IncompleteLog(String),
    #[error("cannot parse log: {0}")]
    LogParse(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    /// Stop after this many handovers.
    Handovers(u64),
    /// Stop generating activity after this simulated time.
    Time(f64),
}

impl Horizon {
    fn is_zero(&self) -> bool {
        match self {
            Horizon::Handovers(n) => *n == 0,
            Horizon::Time(t) => *t <= 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlaneKind {
    /// Migrations complete instantly; probes see `2 * delay(distance)`.
    None,
    Lisp,
    Sdn,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferConfig {
    /// Service state and TCP parameters; `rtt` is taken from the DC-DC link.
    pub params: TransferParams,
    pub bandwidth_bps: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            params: TransferParams::default(),
            bandwidth_bps: 100e6,
        }
    }
}

impl TransferConfig {
    /// State transfer time for a DC-DC round trip of `rtt`: the slower of the
    /// bandwidth floor and the TCP model, plus conversion time.
    pub fn transfer_time(&self, rtt: f64) -> f64 {
        let tcp = TransferParams {
            rtt,
            t_vm_conversion: 0.0,
            ..self.params
        };
        let model = service_disruption_time(&tcp).unwrap_or(f64::INFINITY);
        (self.params.objects_size / self.bandwidth_bps).max(model) + self.params.t_vm_conversion
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub mobility: MobilityModel,
    pub decision: DecisionRule,
    pub plane: PlaneKind,
    /// Number of sites; each has an access router, a DC router and a DC.
    pub sites: usize,
    /// Site hosting the service at time 0.
    pub vm_site: usize,
    /// Site the user is attached to at time 0 (scripted mobility only).
    pub ue_site: usize,
    pub links: LatencyMatrix,
    pub transfer: TransferConfig,
    pub horizon: Horizon,
    /// Echo probe period; `None` disables probes.
    pub probe_period: Option<f64>,
    pub probe_timeout: f64,
    /// Additional request/response flows besides the probe flow.
    pub flows: u32,
    pub flow_period: f64,
    /// Log every handover and decision; off for long Monte-Carlo runs.
    pub log_mobility: bool,
    /// One-way user-to-service delay by distance, used by [`PlaneKind::None`].
    pub delay_model: DelayModel,
    /// SDN controller processing time per request.
    pub controller_delay: f64,
    /// SDN: install address-rewriting tunnels after a migration.
    pub tunnel: bool,
    /// SDN: every other DC hosts an unrelated service with the same address.
    pub overlap: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            mobility: MobilityModel::Hex { mu: 1.0 },
            decision: DecisionRule::AtDistance(2),
            plane: PlaneKind::None,
            sites: 2,
            vm_site: 1,
            ue_site: 1,
            links: LatencyMatrix::default(),
            transfer: TransferConfig::default(),
            horizon: Horizon::Handovers(1000),
            probe_period: None,
            probe_timeout: 2.0,
            flows: 0,
            flow_period: 1.0,
            log_mobility: true,
            delay_model: DelayModel::default(),
            controller_delay: 0.0,
            tunnel: true,
            overlap: false,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::Config(m));
        let min_sites = if self.plane == PlaneKind::None { 1 } else { 2 };
        if self.sites < min_sites {
            return err(format!(
                "at least {min_sites} sites required, got {}",
                self.sites
            ));
        }
        for (name, s) in [("vm_site", self.vm_site), ("ue_site", self.ue_site)] {
            if s == 0 || s > self.sites {
                return err(format!("{name} = {s} outside 1..={}", self.sites));
            }
        }
        self.mobility.validate(self.sites)?;
        self.links.validate(&network::endpoints(self.sites))?;
        if !(self.transfer.bandwidth_bps > 0.0 && self.transfer.bandwidth_bps.is_finite()) {
            return err(format!(
                "bandwidth must be positive, got {}",
                self.transfer.bandwidth_bps
            ));
        }
        self.transfer
            .params
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        if let Some(p) = self.probe_period {
            if !(p > 0.0) {
                return err(format!("probe period must be positive, got {p}"));
            }
        }
        if self.flows > 0 && !(self.flow_period > 0.0) {
            return err(format!(
                "flow period must be positive, got {}",
                self.flow_period
            ));
        }
        if !(self.probe_timeout > 0.0) || !(self.controller_delay >= 0.0) {
            return err("probe timeout must be positive and controller delay nonnegative".into());
        }
        if let Horizon::Time(t) = self.horizon {
            if !t.is_finite() {
                return err("time horizon must be finite".into());
            }
        }
        Ok(())
    }
}

/// Abstract IP packet; requests go user to service, replies come back.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Packet {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub flow: u32,
    pub seq: u64,
    pub reply: bool,
    pub sent_at_ns: u64,
}

impl Packet {
    pub fn sent_at(&self) -> f64 {
        self.sent_at_ns as f64 / 1e9
    }
}

/// Mobility-management logic plugged into the simulator.
pub trait ControlPlane {
    type Msg;

    /// Addresses of the user and of the migrating service.
    fn addresses(&self) -> (Ipv4Addr, Ipv4Addr);

    fn start(&mut self, _ctx: &mut Ctx<Self::Msg>) {}

    /// The user attached to the access router of `site`.
    fn on_handover(&mut self, ctx: &mut Ctx<Self::Msg>, site: usize);

    fn on_message(&mut self, ctx: &mut Ctx<Self::Msg>, msg: Self::Msg);

    /// The user sends `pkt` into its access router.
    fn transmit(&mut self, ctx: &mut Ctx<Self::Msg>, pkt: Packet);
}

pub(crate) enum Ev<M> {
    Handover,
    ProbeTick,
    FlowTick(u32),
    ProbeTimeout(u64),
    Plane(M),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum MigState {
    Idle,
    /// A controller decided to migrate and is contacting the hypervisor.
    Reserved,
    Active {
        id: u64,
    },
}

#[derive(Clone, Copy, Debug, Default)]
struct MigTimes {
    start: f64,
    commit: Option<f64>,
    last_redirect: Option<f64>,
}

/// Simulation state visible to a control plane.
pub struct Ctx<M> {
    now: f64,
    queue: EventQueue<Ev<M>>,
    log: EventLog,
    cfg: ScenarioConfig,
    rng: ChaCha8Rng,
    mobility: MobilityState,
    vm_site: usize,
    migration: MigState,
    next_mig: u64,
    mig_times: BTreeMap<u64, MigTimes>,
    ue_ip: Ipv4Addr,
    vm_ip: Ipv4Addr,
    metrics: SimMetrics,
    last_change: f64,
    /// Activity generation stops here; `None` until known.
    horizon_end: Option<f64>,
    outstanding: BTreeMap<u64, bool>,
    probe_seq: u64,
}

impl<M> Ctx<M> {
    fn new(cfg: &ScenarioConfig, (ue_ip, vm_ip): (Ipv4Addr, Ipv4Addr)) -> Result<Self, SimError> {
        let flows = (0..=cfg.flows)
            .map(|flow| FlowStats {
                flow,
                ..Default::default()
            })
            .collect();
        Ok(Ctx {
            now: 0.0,
            queue: EventQueue::new(),
            log: EventLog::new(),
            cfg: cfg.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            mobility: MobilityState::new(&cfg.mobility, cfg.ue_site)?,
            vm_site: cfg.vm_site,
            migration: MigState::Idle,
            next_mig: 0,
            mig_times: BTreeMap::new(),
            ue_ip,
            vm_ip,
            metrics: SimMetrics {
                flows,
                ..Default::default()
            },
            last_change: 0.0,
            horizon_end: match cfg.horizon {
                Horizon::Time(t) => Some(t),
                Horizon::Handovers(_) => None,
            },
            outstanding: BTreeMap::new(),
            probe_seq: 0,
        })
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn sites(&self) -> usize {
        self.cfg.sites
    }

    /// Site currently running the service.
    pub fn vm_site(&self) -> usize {
        self.vm_site
    }

    /// Site whose access router the user is attached to.
    pub fn ue_site(&self) -> usize {
        self.mobility.access_site(self.vm_site, self.cfg.sites)
    }

    pub fn distance(&self) -> u32 {
        self.mobility.distance(self.vm_site)
    }

    pub fn latency(&self, a: &str, b: &str) -> Option<f64> {
        self.cfg.links.get(a, b)
    }

    pub fn log(&mut self, kind: EventKind, actor: &str, fields: &[(&str, String)]) {
        self.log.push(LogRecord {
            time: self.now,
            kind,
            actor: actor.to_string(),
            fields: fields
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        });
    }

    pub fn schedule(&mut self, delay: f64, msg: M) {
        self.queue.push(self.now + delay, Ev::Plane(msg));
    }

    /// Delivers `msg` after the `from`-`to` latency, or logs a drop if the link is down.
    pub fn send(&mut self, from: &str, to: &str, msg: M) -> bool {
        match self.latency(from, to) {
            Some(d) => {
                self.schedule(d, msg);
                true
            }
            None => {
                self.log(
                    EventKind::Drop,
                    from,
                    &[("to", to.to_string()), ("reason", "link-down".into())],
                );
                false
            }
        }
    }

    /// Applies the decision rule at the current distance.
    ///
    /// Returns `(source site, target site)` and reserves the migration slot
    /// when a migration should start.
    pub fn decide(&mut self, actor: &str) -> Option<(usize, usize)> {
        let d = self.distance();
        let migrate = self.cfg.decision.migrate(d);
        let busy = self.migration != MigState::Idle;
        if self.cfg.log_mobility || (migrate && busy) {
            let action = match (migrate, busy) {
                (false, _) => "continue",
                (true, false) => "migrate",
                (true, true) => "deferred",
            };
            self.log(
                EventKind::Decision,
                actor,
                &[("dist", d.to_string()), ("action", action.into())],
            );
        }
        let (src, dst) = (self.vm_site, self.ue_site());
        if !migrate || busy || src == dst {
            return None;
        }
        self.migration = MigState::Reserved;
        Some((src, dst))
    }

    /// Releases a reservation whose migration never started.
    pub fn cancel_decision(&mut self) {
        if self.migration == MigState::Reserved {
            self.migration = MigState::Idle;
        }
    }

    /// Starts transferring the service. Returns the migration id and the
    /// transfer time, or `None` if the DC-DC link is down (logged as an abort).
    pub fn start_migration(&mut self, actor: &str, src: usize, dst: usize) -> Option<(u64, f64)> {
        let id = self.next_mig;
        self.next_mig += 1;
        let fields = [
            ("mig", id.to_string()),
            ("src", src.to_string()),
            ("dst", dst.to_string()),
        ];
        self.log(EventKind::MigrateStart, actor, &fields);
        self.mig_times.insert(
            id,
            MigTimes {
                start: self.now,
                ..Default::default()
            },
        );
        match self.latency(&network::dc(src), &network::dc(dst)) {
            Some(one_way) => {
                self.migration = MigState::Active { id };
                Some((id, self.cfg.transfer.transfer_time(2.0 * one_way)))
            }
            None => {
                self.abort_migration(actor, id, "unreachable");
                None
            }
        }
    }

    pub fn abort_migration(&mut self, actor: &str, id: u64, reason: &str) {
        self.log(
            EventKind::MigrateAbort,
            actor,
            &[("mig", id.to_string()), ("reason", reason.to_string())],
        );
        self.mig_times.remove(&id);
        self.migration = MigState::Idle;
        self.metrics.aborted += 1;
    }

    /// The service now runs at `dst`; the source copy is gone.
    pub fn commit_migration(&mut self, actor: &str, id: u64, dst: usize) {
        self.log(
            EventKind::MigrateCommit,
            actor,
            &[("mig", id.to_string()), ("site", dst.to_string())],
        );
        self.flush();
        self.vm_site = dst;
        self.mobility.reset_anchor();
        if let Some(t) = self.mig_times.get_mut(&id) {
            t.commit = Some(self.now);
        }
    }

    /// A cache or rule on the path now points at the new location.
    pub fn redirect(&mut self, actor: &str, id: u64) {
        self.log(EventKind::Redirect, actor, &[("mig", id.to_string())]);
        if let Some(t) = self.mig_times.get_mut(&id) {
            t.last_redirect = Some(self.now);
        }
    }

    /// All redirects are done; a new migration may be decided.
    pub fn finish_migration(&mut self, id: u64) {
        if self.migration == (MigState::Active { id }) {
            self.migration = MigState::Idle;
        }
        self.metrics.migrations_count += 1;
        if let Some(t) = self.mig_times.remove(&id) {
            if let (Some(commit), Some(last_redirect)) = (t.commit, t.last_redirect) {
                self.metrics.migrations.push(MigrationTiming {
                    id,
                    start: t.start,
                    commit,
                    last_redirect,
                });
            }
        }
    }

    pub fn migration_in_progress(&self) -> bool {
        self.migration != MigState::Idle
    }

    pub fn user_address(&self) -> Ipv4Addr {
        self.ue_ip
    }

    pub fn service_address(&self) -> Ipv4Addr {
        self.vm_ip
    }

    /// A request reached a host at `site`. Returns the reply if that host is
    /// the migrating service and it currently runs there.
    pub fn service_receive(
        &mut self,
        pkt: Packet,
        site: usize,
        is_service: bool,
    ) -> Option<Packet> {
        let stats = self.metrics.flows.get_mut(pkt.flow as usize)?;
        if !is_service {
            stats.misdelivered += 1;
            self.log(
                EventKind::Drop,
                &network::dc(site),
                &[
                    ("flow", pkt.flow.to_string()),
                    ("reason", "wrong-host".into()),
                ],
            );
            return None;
        }
        if site != self.vm_site {
            self.log(
                EventKind::Drop,
                &network::dc(site),
                &[
                    ("flow", pkt.flow.to_string()),
                    ("reason", "no-service".into()),
                ],
            );
            return None;
        }
        stats.served += 1;
        stats.seen_at_service.insert((pkt.src, pkt.dst));
        Some(Packet {
            src: self.vm_ip,
            dst: pkt.src,
            reply: true,
            ..pkt
        })
    }

    /// A reply reached the user.
    pub fn user_receive(&mut self, pkt: Packet) {
        let now = self.now;
        let Some(stats) = self.metrics.flows.get_mut(pkt.flow as usize) else {
            return;
        };
        stats.replies += 1;
        stats.seen_at_user.insert((pkt.src, pkt.dst));
        stats.last_reply = Some(now);
        if pkt.flow == 0 {
            if let Some(lost) = self.outstanding.remove(&pkt.seq) {
                if !lost {
                    let rtt = quantize(now - pkt.sent_at());
                    self.metrics.rtt_trace.push((pkt.sent_at(), rtt));
                    let fields = [
                        ("seq", pkt.seq.to_string()),
                        ("sent", format!("{:.9}", pkt.sent_at())),
                        ("rtt", format!("{rtt:.9}")),
                    ];
                    self.log(EventKind::Probe, network::UE, &fields);
                }
            }
        }
    }

    /// Accumulates time spent at the current distance.
    fn flush(&mut self) {
        let until = match self.horizon_end {
            Some(end) => self.now.min(end),
            None => self.now,
        };
        if until > self.last_change {
            *self.metrics.occupancy.entry(self.distance()).or_insert(0.0) +=
                until - self.last_change;
            self.last_change = until;
        }
    }

    fn generating(&self) -> bool {
        self.horizon_end.is_none_or(|end| self.now <= end)
    }

    fn new_packet(&mut self, flow: u32, seq: u64) -> Packet {
        Packet {
            src: self.ue_ip,
            dst: self.vm_ip,
            flow,
            seq,
            reply: false,
            sent_at_ns: (self.now * 1e9).round() as u64,
        }
    }
}

/// Rounds to the simulator's nanosecond event quantum.
pub fn quantize(t: f64) -> f64 {
    (t * 1e9).round() / 1e9
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub log: EventLog,
    pub metrics: SimMetrics,
}

/// Runs a scenario with the control plane selected by `cfg.plane`.
pub fn run(cfg: &ScenarioConfig) -> Result<SimOutput, SimError> {
    match cfg.plane {
        PlaneKind::None => run_with(cfg, NullPlane).map(|(o, _)| o),
        PlaneKind::Lisp => run_with(cfg, crate::lisp::LispPlane::new(cfg)).map(|(o, _)| o),
        PlaneKind::Sdn => run_with(cfg, crate::sdn::SdnPlane::new(cfg)).map(|(o, _)| o),
    }
}

/// Runs a scenario with an explicit control plane and returns its final state.
pub fn run_with<P: ControlPlane>(
    cfg: &ScenarioConfig,
    mut plane: P,
) -> Result<(SimOutput, P), SimError> {
    cfg.validate()?;
    let mut ctx: Ctx<P::Msg> = Ctx::new(cfg, plane.addresses())?;
    if cfg.horizon.is_zero() {
        return Ok((
            SimOutput {
                log: ctx.log,
                metrics: ctx.metrics,
            },
            plane,
        ));
    }
    plane.start(&mut ctx);
    if let Some(d) = ctx.mobility.next_delay(&mut ctx.rng, 0.0) {
        ctx.queue.push(d, Ev::Handover);
    }
    if cfg.probe_period.is_some() {
        ctx.queue.push(0.0, Ev::ProbeTick);
    }
    for flow in 1..=cfg.flows {
        ctx.queue.push(0.0, Ev::FlowTick(flow));
    }
    let handover_limit = match cfg.horizon {
        Horizon::Handovers(n) => n,
        Horizon::Time(_) => u64::MAX,
    };

    while let Some((t, ev)) = ctx.queue.pop() {
        ctx.now = t;
        match ev {
            Ev::Handover => {
                if !ctx.generating() {
                    continue;
                }
                ctx.flush();
                let site_before = ctx.ue_site();
                ctx.mobility.step(&mut ctx.rng);
                ctx.metrics.handovers += 1;
                let site = ctx.ue_site();
                if cfg.log_mobility {
                    let fields = [
                        ("n", ctx.metrics.handovers.to_string()),
                        ("pos", ctx.mobility.describe()),
                        ("dist", ctx.distance().to_string()),
                        ("from", site_before.to_string()),
                        ("site", site.to_string()),
                    ];
                    ctx.log(EventKind::Handover, network::UE, &fields);
                }
                plane.on_handover(&mut ctx, site);
                if ctx.metrics.handovers >= handover_limit {
                    ctx.flush();
                    ctx.horizon_end = Some(ctx.now);
                } else if let Some(d) = ctx.mobility.next_delay(&mut ctx.rng, ctx.now) {
                    ctx.queue.push(ctx.now + d, Ev::Handover);
                }
            }
            Ev::ProbeTick => {
                if !ctx.generating() {
                    continue;
                }
                let seq = ctx.probe_seq;
                ctx.probe_seq += 1;
                let pkt = ctx.new_packet(0, seq);
                ctx.metrics.probes_sent += 1;
                ctx.metrics.flows[0].sent += 1;
                ctx.outstanding.insert(seq, false);
                ctx.queue
                    .push(ctx.now + cfg.probe_timeout, Ev::ProbeTimeout(seq));
                plane.transmit(&mut ctx, pkt);
                if let Some(p) = cfg.probe_period {
                    ctx.queue.push(ctx.now + p, Ev::ProbeTick);
                }
            }
            Ev::FlowTick(flow) => {
                if !ctx.generating() {
                    continue;
                }
                let seq = ctx.metrics.flows[flow as usize].sent;
                ctx.metrics.flows[flow as usize].sent += 1;
                let pkt = ctx.new_packet(flow, seq);
                plane.transmit(&mut ctx, pkt);
                ctx.queue
                    .push(ctx.now + cfg.flow_period, Ev::FlowTick(flow));
            }
            Ev::ProbeTimeout(seq) => {
                if let Some(lost) = ctx.outstanding.get_mut(&seq) {
                    if !*lost {
                        *lost = true;
                        ctx.metrics.probes_lost += 1;
                        ctx.log(
                            EventKind::ProbeLost,
                            network::UE,
                            &[("seq", seq.to_string())],
                        );
                    }
                }
            }
            Ev::Plane(msg) => plane.on_message(&mut ctx, msg),
        }
    }

    if ctx.horizon_end.is_none() {
        // Script exhausted before the handover budget: stop the clock here.
        ctx.horizon_end = Some(ctx.now);
    }
    let end = ctx.horizon_end.unwrap_or(ctx.now);
    ctx.now = ctx.now.max(end);
    ctx.flush();
    ctx.metrics.end_time = end;
    Ok((
        SimOutput {
            log: ctx.log,
            metrics: ctx.metrics,
        },
        plane,
    ))
}

#[derive(Debug)]
pub enum NullMsg {
    Reply(Packet),
}

/// Control plane without signaling: decisions act instantly.
#[derive(Debug, Default)]
pub struct NullPlane;

impl ControlPlane for NullPlane {
    type Msg = NullMsg;

    fn addresses(&self) -> (Ipv4Addr, Ipv4Addr) {
        (Ipv4Addr::new(192, 168, 1, 100), Ipv4Addr::new(10, 1, 0, 10))
    }

    fn on_handover(&mut self, ctx: &mut Ctx<NullMsg>, _site: usize) {
        if let Some((src, dst)) = ctx.decide(network::FMCC) {
            if let Some((id, _)) = ctx.start_migration(&network::dc(src), src, dst) {
                ctx.commit_migration(&network::dc(dst), id, dst);
                ctx.redirect(network::FMCC, id);
                ctx.finish_migration(id);
            }
        }
    }

    fn on_message(&mut self, ctx: &mut Ctx<NullMsg>, msg: NullMsg) {
        let NullMsg::Reply(pkt) = msg;
        ctx.user_receive(pkt);
    }

    fn transmit(&mut self, ctx: &mut Ctx<NullMsg>, pkt: Packet) {
        let one_way = ctx.cfg.delay_model.delay(ctx.distance());
        let site = ctx.vm_site;
        if let Some(reply) = ctx.service_receive(pkt, site, true) {
            ctx.schedule(2.0 * one_way, NullMsg::Reply(reply));
        }
    }
}
