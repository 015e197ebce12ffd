//! OpenFlow-style SDN mobility control plane.
//!
//! Switches sit at every access router (`ar<s>`) and DC router (`dcr<s>`).
//! The controller (`fmcc`) keeps the user-to-service path in the flow
//! tables and reinstalls it when the user moves or the service migrates.
//!
//! The service address belongs to its home DC. When the service runs
//! elsewhere the controller tunnels it with address rewriting: the user's
//! access switch rewrites the destination to a tunnel address from the
//! shared pool, the serving DC switch rewrites it back, and replies get the
//! inverse treatment. Neither endpoint ever sees the tunnel address.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use thiserror::Error;

use crate::sim::network::{ar, dc, dcr, FMCC, UE};
use crate::sim::{ControlPlane, Ctx, EventKind, Packet, ScenarioConfig};

pub const TUNNEL_PRIORITY: u16 = 200;
pub const PATH_PRIORITY: u16 = 100;
/// How long a superseded accepting rule stays installed.
pub const RULE_DRAIN_S: f64 = 1.0;
pub const LOCAL_PRIORITY: u16 = 10;

#[derive(Debug, Error, PartialEq)]
pub enum SdnError {
    #[error("rule {existing} on {switch} overlaps tunnel rule {cookie} with higher priority")]
    RuleConflict {
        switch: String,
        cookie: u64,
        existing: u64,
    },
    #[error("tunnel address pool exhausted")]
    PoolExhausted,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlowMatch {
    pub in_port: Option<String>,
    pub src: Option<Ipv4Addr>,
    pub dst: Option<Ipv4Addr>,
}

impl FlowMatch {
    pub fn dst(dst: Ipv4Addr) -> Self {
        FlowMatch {
            dst: Some(dst),
            ..Default::default()
        }
    }

    pub fn matches(&self, in_port: &str, pkt: &Packet) -> bool {
        self.in_port.as_deref().is_none_or(|p| p == in_port)
            && self.src.is_none_or(|s| s == pkt.src)
            && self.dst.is_none_or(|d| d == pkt.dst)
    }

    /// Some packet matches both.
    pub fn overlaps(&self, other: &FlowMatch) -> bool {
        fn agree<T: PartialEq>(a: &Option<T>, b: &Option<T>) -> bool {
            match (a, b) {
                (Some(x), Some(y)) => x == y,
                _ => true,
            }
        }
        agree(&self.in_port, &other.in_port)
            && agree(&self.src, &other.src)
            && agree(&self.dst, &other.dst)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FlowAction {
    RewriteSrc(Ipv4Addr),
    RewriteDst(Ipv4Addr),
    Forward(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowRule {
    pub cookie: u64,
    pub priority: u16,
    pub matcher: FlowMatch,
    pub actions: Vec<FlowAction>,
}

impl FlowRule {
    /// Applies the rewrites and returns the output port.
    pub fn apply(&self, pkt: &mut Packet) -> Option<String> {
        let mut out = None;
        for a in &self.actions {
            match a {
                FlowAction::RewriteSrc(ip) => pkt.src = *ip,
                FlowAction::RewriteDst(ip) => pkt.dst = *ip,
                FlowAction::Forward(port) => out = Some(port.clone()),
            }
        }
        out
    }
}

/// Rules in insertion order; lookup takes the highest priority, first inserted on ties.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowTable {
    rules: Vec<FlowRule>,
}

impl FlowTable {
    /// Adds the rule, replacing any rule with the same cookie in place.
    pub fn install(&mut self, rule: FlowRule) {
        match self.rules.iter_mut().find(|r| r.cookie == rule.cookie) {
            Some(slot) => *slot = rule,
            None => self.rules.push(rule),
        }
    }

    pub fn remove(&mut self, cookie: u64) -> Option<FlowRule> {
        let i = self.rules.iter().position(|r| r.cookie == cookie)?;
        Some(self.rules.remove(i))
    }

    pub fn lookup(&self, in_port: &str, pkt: &Packet) -> Option<&FlowRule> {
        self.rules
            .iter()
            .filter(|r| r.matcher.matches(in_port, pkt))
            .fold(None, |best: Option<&FlowRule>, r| match best {
                Some(b) if b.priority >= r.priority => Some(b),
                _ => Some(r),
            })
    }

    pub fn get(&self, cookie: u64) -> Option<&FlowRule> {
        self.rules.iter().find(|r| r.cookie == cookie)
    }

    pub fn rules(&self) -> &[FlowRule] {
        &self.rules
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Role {
    Request = 1,
    ToUser = 2,
    Reply = 3,
    TunnelIn = 4,
    TunnelOut = 5,
    TunnelDecap = 6,
    TunnelEncap = 7,
    Local = 9,
}

fn cookie(role: Role, site: usize) -> u64 {
    role as u64 * 1000 + site as u64
}

/// Accepting tunnel rules carry the tunnel address in the high bits so the
/// rules of consecutive tunnels coexist while the old one drains.
fn tunnel_cookie(role: Role, site: usize, tun: Ipv4Addr) -> u64 {
    (u64::from(u32::from(tun)) << 32) | cookie(role, site)
}

fn is_accepting(c: u64) -> bool {
    let role = (c & 0xffff_ffff) / 1000;
    [Role::ToUser, Role::TunnelOut, Role::TunnelDecap]
        .into_iter()
        .any(|r| r as u64 == role)
}

/// Where the path currently runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathState {
    pub ue_site: usize,
    pub vm_site: usize,
    /// Tunnel address while the service is away from home.
    pub tunnel: Option<Ipv4Addr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Addresses {
    pub ue: Ipv4Addr,
    pub vm: Ipv4Addr,
}

/// Address-rewriting rules on the user's access switch `ar<u>` and the
/// serving DC switch `dcr<v>`.
pub fn tunnel_rules(u: usize, v: usize, addr: Addresses, tun: Ipv4Addr) -> Vec<(String, FlowRule)> {
    let rule = |role, site, matcher, actions| {
        let cookie = if is_accepting(cookie(role, 0)) {
            tunnel_cookie(role, site, tun)
        } else {
            cookie(role, site)
        };
        FlowRule {
            cookie,
            priority: TUNNEL_PRIORITY,
            matcher,
            actions,
        }
    };
    vec![
        (
            ar(u),
            rule(
                Role::TunnelIn,
                u,
                FlowMatch::dst(addr.vm),
                vec![FlowAction::RewriteDst(tun), FlowAction::Forward(dcr(v))],
            ),
        ),
        (
            ar(u),
            rule(
                Role::TunnelOut,
                u,
                FlowMatch {
                    src: Some(tun),
                    dst: Some(addr.ue),
                    in_port: None,
                },
                vec![
                    FlowAction::RewriteSrc(addr.vm),
                    FlowAction::Forward(UE.into()),
                ],
            ),
        ),
        (
            dcr(v),
            rule(
                Role::TunnelDecap,
                v,
                FlowMatch::dst(tun),
                vec![
                    FlowAction::RewriteDst(addr.vm),
                    FlowAction::Forward("vm".into()),
                ],
            ),
        ),
        (
            dcr(v),
            rule(
                Role::TunnelEncap,
                v,
                FlowMatch {
                    in_port: Some("vm".into()),
                    src: Some(addr.vm),
                    dst: None,
                },
                vec![FlowAction::RewriteSrc(tun), FlowAction::Forward(ar(u))],
            ),
        ),
    ]
}

/// Rules the controller wants for `path`, keyed by switch.
pub fn path_rules(path: PathState, addr: Addresses) -> BTreeMap<String, Vec<FlowRule>> {
    let (u, v) = (path.ue_site, path.vm_site);
    let plain = |role, site, matcher, port: String| FlowRule {
        cookie: cookie(role, site),
        priority: PATH_PRIORITY,
        matcher,
        actions: vec![FlowAction::Forward(port)],
    };
    let mut out: BTreeMap<String, Vec<FlowRule>> = BTreeMap::new();
    out.entry(ar(u))
        .or_default()
        .push(plain(Role::ToUser, u, FlowMatch::dst(addr.ue), UE.into()));
    match path.tunnel {
        Some(tun) => {
            for (sw, r) in tunnel_rules(u, v, addr, tun) {
                out.entry(sw).or_default().push(r);
            }
        }
        None => {
            out.entry(ar(u)).or_default().push(plain(
                Role::Request,
                u,
                FlowMatch::dst(addr.vm),
                dcr(v),
            ));
            let reply = FlowMatch {
                in_port: Some("vm".into()),
                src: Some(addr.vm),
                dst: None,
            };
            out.entry(dcr(v))
                .or_default()
                .push(plain(Role::Reply, v, reply, ar(u)));
        }
    }
    out
}

/// Fails if an installed rule would shadow one of `rules`.
pub fn check_conflicts(
    tables: &BTreeMap<String, FlowTable>,
    rules: &[(String, FlowRule)],
) -> Result<(), SdnError> {
    for (sw, rule) in rules {
        let Some(table) = tables.get(sw) else {
            continue;
        };
        if let Some(existing) = table.rules().iter().find(|r| {
            r.cookie != rule.cookie
                && r.priority > rule.priority
                && r.matcher.overlaps(&rule.matcher)
        }) {
            return Err(SdnError::RuleConflict {
                switch: sw.clone(),
                cookie: rule.cookie,
                existing: existing.cookie,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub enum SdnMsg {
    /// Packet entering switch `at` on `in_port`.
    Data {
        at: String,
        in_port: String,
        pkt: Packet,
    },
    ToHost {
        site: usize,
        service: bool,
        pkt: Packet,
    },
    ToUser {
        site: usize,
        pkt: Packet,
    },
    PacketIn {
        switch: String,
        key: (Ipv4Addr, Ipv4Addr),
    },
    PacketOut {
        switch: String,
        key: (Ipv4Addr, Ipv4Addr),
    },
    Install {
        switch: String,
        rule: FlowRule,
        mig: Option<u64>,
    },
    Remove {
        switch: String,
        cookie: u64,
    },
    Migrate {
        src: usize,
        dst: usize,
        tunnel: Option<Ipv4Addr>,
    },
    TransferDone {
        mig: u64,
        dst: usize,
        tunnel: Option<Ipv4Addr>,
    },
    MigrateDone {
        mig: u64,
        dst: usize,
        tunnel: Option<Ipv4Addr>,
    },
}

type PendingKey = (String, (Ipv4Addr, Ipv4Addr));

pub struct SdnPlane {
    pub tables: BTreeMap<String, FlowTable>,
    /// Controller view of what it installed, by switch and cookie.
    installed: BTreeMap<String, BTreeMap<u64, FlowRule>>,
    pending: BTreeMap<PendingKey, Vec<(String, Packet)>>,
    addr: Addresses,
    home: usize,
    pool: Ipv4Net,
    next_tunnel: u32,
    path: PathState,
    tunnel_enabled: bool,
    awaiting: BTreeMap<u64, usize>,
}

impl SdnPlane {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let addr = Addresses {
            ue: Ipv4Addr::new(192, 168, 1, 100),
            vm: Ipv4Addr::new(10, 0, 0, 5),
        };
        let mut tables = BTreeMap::new();
        for s in 1..=cfg.sites {
            tables.insert(ar(s), FlowTable::default());
            let mut t = FlowTable::default();
            let port = if s == cfg.vm_site {
                Some("vm")
            } else if cfg.overlap {
                Some("peer")
            } else {
                None
            };
            if let Some(p) = port {
                t.install(FlowRule {
                    cookie: cookie(Role::Local, s),
                    priority: LOCAL_PRIORITY,
                    matcher: FlowMatch::dst(addr.vm),
                    actions: vec![FlowAction::Forward(p.into())],
                });
            }
            tables.insert(dcr(s), t);
        }
        SdnPlane {
            tables,
            installed: BTreeMap::new(),
            pending: BTreeMap::new(),
            addr,
            home: cfg.vm_site,
            pool: "100.64.0.0/10".parse().expect("valid pool"),
            next_tunnel: 0,
            path: PathState {
                ue_site: cfg.ue_site,
                vm_site: cfg.vm_site,
                tunnel: None,
            },
            tunnel_enabled: cfg.tunnel,
            awaiting: BTreeMap::new(),
        }
    }

    /// Installs a rule directly, outside controller management.
    pub fn install_static(&mut self, switch: &str, rule: FlowRule) {
        self.tables
            .entry(switch.to_string())
            .or_default()
            .install(rule);
    }

    pub fn table(&self, switch: &str) -> Option<&FlowTable> {
        self.tables.get(switch)
    }

    pub fn path(&self) -> PathState {
        self.path
    }

    pub fn addresses_of(&self) -> Addresses {
        self.addr
    }

    fn allocate_tunnel(&mut self) -> Result<Ipv4Addr, SdnError> {
        let ip = self
            .pool
            .hosts()
            .nth(self.next_tunnel as usize)
            .ok_or(SdnError::PoolExhausted)?;
        self.next_tunnel += 1;
        Ok(ip)
    }

    fn install_latency(ctx: &Ctx<SdnMsg>, switch: &str) -> Option<f64> {
        ctx.latency(FMCC, switch)
            .map(|d| d + ctx.config().controller_delay)
    }

    /// Brings the switches in line with `path_rules(self.path)`.
    ///
    /// Rules that only accept traffic (to-user, tunnel restore and decap) go
    /// out first; rules that steer traffic onto the new path go out once all
    /// of those have landed, and access switches additionally wait `staged`.
    /// Stale accepting rules linger for `RULE_DRAIN_S` so packets already in
    /// flight on the old path are still handled. Returns the number of
    /// installs tagged with `mig` and the latest arrival time.
    fn reconcile(&mut self, ctx: &mut Ctx<SdnMsg>, mig: Option<u64>, staged: f64) -> (usize, f64) {
        let desired = path_rules(self.path, self.addr);
        let switches: BTreeSet<String> = desired
            .keys()
            .chain(self.installed.keys())
            .cloned()
            .collect();
        let mut plan: Vec<(String, f64, Vec<FlowRule>, Vec<u64>)> = Vec::new();
        for sw in switches {
            let Some(lat) = Self::install_latency(ctx, &sw) else {
                ctx.log(
                    EventKind::Drop,
                    FMCC,
                    &[("to", sw.clone()), ("reason", "link-down".into())],
                );
                continue;
            };
            let want: BTreeMap<u64, FlowRule> = desired
                .get(&sw)
                .into_iter()
                .flatten()
                .map(|r| (r.cookie, r.clone()))
                .collect();
            let have = self.installed.entry(sw.clone()).or_default();
            let stale: Vec<u64> = have
                .keys()
                .filter(|c| !want.contains_key(c))
                .copied()
                .collect();
            for c in &stale {
                have.remove(c);
            }
            let mut changed = Vec::new();
            for (c, rule) in want {
                if have.get(&c) != Some(&rule) {
                    have.insert(c, rule.clone());
                    changed.push(rule);
                }
            }
            plan.push((sw, lat, changed, stale));
        }
        let (mut tagged, mut ready) = (0, 0.0f64);
        for (sw, lat, changed, _) in &plan {
            for rule in changed.iter().filter(|r| is_accepting(r.cookie)) {
                ctx.schedule(
                    *lat,
                    SdnMsg::Install {
                        switch: sw.clone(),
                        rule: rule.clone(),
                        mig,
                    },
                );
                tagged += usize::from(mig.is_some());
                ready = ready.max(*lat);
            }
        }
        let mut latest = ready;
        for (sw, lat, changed, stale) in &plan {
            let delay = (lat + if sw.starts_with("ar") { staged } else { 0.0 }).max(ready);
            for &c in stale.iter().filter(|c| !is_accepting(**c)) {
                ctx.schedule(
                    delay,
                    SdnMsg::Remove {
                        switch: sw.clone(),
                        cookie: c,
                    },
                );
            }
            for rule in changed.iter().filter(|r| !is_accepting(r.cookie)) {
                ctx.schedule(
                    delay,
                    SdnMsg::Install {
                        switch: sw.clone(),
                        rule: rule.clone(),
                        mig,
                    },
                );
                tagged += usize::from(mig.is_some());
                latest = latest.max(delay);
            }
        }
        for (sw, lat, _, stale) in &plan {
            for &c in stale.iter().filter(|c| is_accepting(**c)) {
                ctx.schedule(
                    latest.max(*lat) + RULE_DRAIN_S,
                    SdnMsg::Remove {
                        switch: sw.clone(),
                        cookie: c,
                    },
                );
            }
        }
        (tagged, latest)
    }

    fn forward(&mut self, ctx: &mut Ctx<SdnMsg>, at: &str, port: &str, pkt: Packet) {
        let site: usize = at
            .trim_start_matches(|c: char| c.is_ascii_alphabetic())
            .parse()
            .expect("site-numbered switch");
        match port {
            "ue" => {
                ctx.send(at, UE, SdnMsg::ToUser { site, pkt });
            }
            "vm" | "peer" => {
                ctx.send(
                    at,
                    &dc(site),
                    SdnMsg::ToHost {
                        site,
                        service: port == "vm",
                        pkt,
                    },
                );
            }
            next => {
                ctx.send(
                    at,
                    next,
                    SdnMsg::Data {
                        at: next.to_string(),
                        in_port: at.to_string(),
                        pkt,
                    },
                );
            }
        }
    }

    fn switch(
        &mut self,
        ctx: &mut Ctx<SdnMsg>,
        at: &str,
        in_port: &str,
        mut pkt: Packet,
        after_packet_out: bool,
    ) {
        let rule = self
            .tables
            .get(at)
            .and_then(|t| t.lookup(in_port, &pkt))
            .cloned();
        match rule {
            Some(r) => match r.apply(&mut pkt) {
                Some(port) => self.forward(ctx, at, &port, pkt),
                None => ctx.log(
                    EventKind::Drop,
                    at,
                    &[
                        ("cookie", r.cookie.to_string()),
                        ("reason", "no-output".into()),
                    ],
                ),
            },
            None if after_packet_out => {
                ctx.log(
                    EventKind::Drop,
                    at,
                    &[("dst", pkt.dst.to_string()), ("reason", "no-route".into())],
                );
            }
            None => {
                let key = (pkt.src, pkt.dst);
                let waiting = self.pending.entry((at.to_string(), key)).or_default();
                waiting.push((in_port.to_string(), pkt));
                if waiting.len() == 1 {
                    ctx.log(
                        EventKind::PacketIn,
                        at,
                        &[("src", key.0.to_string()), ("dst", key.1.to_string())],
                    );
                    let delay = ctx.config().controller_delay;
                    match ctx.latency(at, FMCC) {
                        Some(d) => ctx.schedule(
                            d + delay,
                            SdnMsg::PacketIn {
                                switch: at.to_string(),
                                key,
                            },
                        ),
                        None => ctx.log(
                            EventKind::Drop,
                            at,
                            &[("to", FMCC.into()), ("reason", "link-down".into())],
                        ),
                    }
                }
            }
        }
    }

    fn settle(&mut self, ctx: &mut Ctx<SdnMsg>, mig: u64) {
        if let Some(n) = self.awaiting.get_mut(&mig) {
            *n = n.saturating_sub(1);
            if *n == 0 {
                self.awaiting.remove(&mig);
                ctx.finish_migration(mig);
            }
        }
    }
}

impl ControlPlane for SdnPlane {
    type Msg = SdnMsg;

    fn addresses(&self) -> (Ipv4Addr, Ipv4Addr) {
        (self.addr.ue, self.addr.vm)
    }

    fn start(&mut self, ctx: &mut Ctx<SdnMsg>) {
        self.path.ue_site = ctx.ue_site();
        self.reconcile(ctx, None, 0.0);
    }

    fn on_handover(&mut self, ctx: &mut Ctx<SdnMsg>, site: usize) {
        ctx.log(
            EventKind::Attach,
            &ar(site),
            &[("ip", self.addr.ue.to_string())],
        );
        self.path.ue_site = site;
        self.reconcile(ctx, None, 0.0);
        let Some((src, dst)) = ctx.decide(FMCC) else {
            return;
        };
        let tunnel = if self.tunnel_enabled && dst != self.home {
            match self.allocate_tunnel() {
                Ok(t) => Some(t),
                Err(e) => {
                    ctx.log(EventKind::Drop, FMCC, &[("reason", e.to_string())]);
                    ctx.cancel_decision();
                    return;
                }
            }
        } else {
            None
        };
        if let Some(tun) = tunnel {
            let rules = tunnel_rules(site, dst, self.addr, tun);
            if let Err(e) = check_conflicts(&self.tables, &rules) {
                if let Some((id, _)) = ctx.start_migration(&dc(src), src, dst) {
                    ctx.abort_migration(FMCC, id, &format!("rule-conflict: {e}"));
                }
                return;
            }
        }
        ctx.log(
            EventKind::FmccMigrate,
            FMCC,
            &[("src", src.to_string()), ("dst", dst.to_string())],
        );
        if !ctx.send(FMCC, &dc(src), SdnMsg::Migrate { src, dst, tunnel }) {
            ctx.cancel_decision();
        }
    }

    fn transmit(&mut self, ctx: &mut Ctx<SdnMsg>, pkt: Packet) {
        let at = ar(ctx.ue_site());
        ctx.send(
            UE,
            &at.clone(),
            SdnMsg::Data {
                at,
                in_port: UE.into(),
                pkt,
            },
        );
    }

    fn on_message(&mut self, ctx: &mut Ctx<SdnMsg>, msg: SdnMsg) {
        match msg {
            SdnMsg::Data { at, in_port, pkt } => self.switch(ctx, &at, &in_port, pkt, false),
            SdnMsg::ToHost { site, service, pkt } => {
                if let Some(reply) = ctx.service_receive(pkt, site, service) {
                    let at = dcr(site);
                    ctx.send(
                        &dc(site),
                        &at.clone(),
                        SdnMsg::Data {
                            at,
                            in_port: "vm".into(),
                            pkt: reply,
                        },
                    );
                }
            }
            SdnMsg::ToUser { site, pkt } => {
                if ctx.ue_site() == site {
                    ctx.user_receive(pkt);
                } else {
                    ctx.log(
                        EventKind::Drop,
                        UE,
                        &[
                            ("flow", pkt.flow.to_string()),
                            ("reason", "detached".into()),
                        ],
                    );
                }
            }
            SdnMsg::PacketIn { switch, key } => {
                self.reconcile(ctx, None, 0.0);
                // Barrier: release only after every switch could have applied the update.
                let barrier = self
                    .installed
                    .keys()
                    .filter_map(|sw| Self::install_latency(ctx, sw))
                    .fold(0.0f64, f64::max);
                ctx.log(
                    EventKind::PacketOut,
                    FMCC,
                    &[("switch", switch.clone()), ("dst", key.1.to_string())],
                );
                ctx.schedule(barrier, SdnMsg::PacketOut { switch, key });
            }
            SdnMsg::PacketOut { switch, key } => {
                for (in_port, pkt) in self
                    .pending
                    .remove(&(switch.clone(), key))
                    .unwrap_or_default()
                {
                    self.switch(ctx, &switch, &in_port, pkt, true);
                }
            }
            SdnMsg::Install { switch, rule, mig } => {
                ctx.log(
                    EventKind::RuleInstall,
                    &switch,
                    &[
                        ("cookie", rule.cookie.to_string()),
                        ("priority", rule.priority.to_string()),
                    ],
                );
                self.tables.entry(switch.clone()).or_default().install(rule);
                if let Some(m) = mig {
                    ctx.redirect(&switch, m);
                    self.settle(ctx, m);
                }
            }
            SdnMsg::Remove { switch, cookie } => {
                // Wanted again since the removal was scheduled.
                if self
                    .installed
                    .get(&switch)
                    .is_some_and(|m| m.contains_key(&cookie))
                {
                    return;
                }
                ctx.log(
                    EventKind::RuleRemove,
                    &switch,
                    &[("cookie", cookie.to_string())],
                );
                if let Some(t) = self.tables.get_mut(&switch) {
                    t.remove(cookie);
                }
            }
            SdnMsg::Migrate { src, dst, tunnel } => {
                if let Some((mig, transfer)) = ctx.start_migration(&dc(src), src, dst) {
                    ctx.schedule(transfer, SdnMsg::TransferDone { mig, dst, tunnel });
                }
            }
            SdnMsg::TransferDone { mig, dst, tunnel } => {
                let here = dc(dst);
                ctx.commit_migration(&here, mig, dst);
                ctx.log(EventKind::MigrateDone, &here, &[("mig", mig.to_string())]);
                if !ctx.send(&here, FMCC, SdnMsg::MigrateDone { mig, dst, tunnel }) {
                    ctx.finish_migration(mig);
                }
            }
            SdnMsg::MigrateDone { mig, dst, tunnel } => {
                self.path.vm_site = dst;
                self.path.tunnel = tunnel;
                self.path.ue_site = ctx.ue_site();
                let staged = ctx.latency(FMCC, &dcr(dst)).unwrap_or(0.0);
                let (tagged, _) = self.reconcile(ctx, Some(mig), staged);
                if tagged == 0 {
                    ctx.redirect(FMCC, mig);
                    ctx.finish_migration(mig);
                } else {
                    self.awaiting.insert(mig, tagged);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_with, DecisionRule, Horizon, MobilityModel, PlaneKind};

    fn pkt(src: [u8; 4], dst: [u8; 4]) -> Packet {
        Packet {
            src: src.into(),
            dst: dst.into(),
            flow: 0,
            seq: 0,
            reply: false,
            sent_at_ns: 0,
        }
    }

    fn fwd(cookie: u64, priority: u16, matcher: FlowMatch, port: &str) -> FlowRule {
        FlowRule {
            cookie,
            priority,
            matcher,
            actions: vec![FlowAction::Forward(port.into())],
        }
    }

    #[test]
    fn priority_then_insertion_order() {
        let mut t = FlowTable::default();
        let any = FlowMatch::default();
        t.install(fwd(1, 5, any.clone(), "a"));
        t.install(fwd(2, 5, any.clone(), "b"));
        let p = pkt([1, 1, 1, 1], [2, 2, 2, 2]);
        assert_eq!(t.lookup("x", &p).unwrap().cookie, 1);
        t.install(fwd(3, 9, FlowMatch::dst([2, 2, 2, 2].into()), "c"));
        assert_eq!(t.lookup("x", &p).unwrap().cookie, 3);
        assert_eq!(
            t.lookup("x", &pkt([1, 1, 1, 1], [3, 3, 3, 3]))
                .unwrap()
                .cookie,
            1
        );
        t.remove(3);
        t.install(fwd(1, 5, any, "z"));
        assert_eq!(t.rules().len(), 2);
        assert_eq!(
            t.lookup("x", &p).unwrap().actions,
            vec![FlowAction::Forward("z".into())]
        );
    }

    #[test]
    fn tunnel_rules_round_trip() {
        let addr = Addresses {
            ue: [192, 168, 1, 100].into(),
            vm: [10, 0, 0, 5].into(),
        };
        let tun: Ipv4Addr = [100, 64, 0, 1].into();
        let mut tables: BTreeMap<String, FlowTable> = BTreeMap::new();
        for (sw, r) in tunnel_rules(2, 2, addr, tun) {
            tables.entry(sw).or_default().install(r);
        }
        let mut p = Packet {
            src: addr.ue,
            dst: addr.vm,
            flow: 0,
            seq: 0,
            reply: false,
            sent_at_ns: 0,
        };
        let out = tables["ar2"].lookup("ue", &p).unwrap().apply(&mut p);
        assert_eq!((out.as_deref(), p.dst), (Some("dcr2"), tun));
        let out = tables["dcr2"].lookup("ar2", &p).unwrap().apply(&mut p);
        assert_eq!((out.as_deref(), p.dst), (Some("vm"), addr.vm));
        let mut r = Packet {
            src: addr.vm,
            dst: addr.ue,
            reply: true,
            ..p
        };
        let out = tables["dcr2"].lookup("vm", &r).unwrap().apply(&mut r);
        assert_eq!((out.as_deref(), r.src), (Some("ar2"), tun));
        let out = tables["ar2"].lookup("dcr2", &r).unwrap().apply(&mut r);
        assert_eq!(
            (out.as_deref(), r.src, r.dst),
            (Some("ue"), addr.vm, addr.ue)
        );
    }

    #[test]
    fn conflicting_rule_is_detected() {
        let addr = Addresses {
            ue: [192, 168, 1, 100].into(),
            vm: [10, 0, 0, 5].into(),
        };
        let rules = tunnel_rules(2, 2, addr, [100, 64, 0, 1].into());
        let mut tables: BTreeMap<String, FlowTable> = BTreeMap::new();
        tables
            .entry(ar(2))
            .or_default()
            .install(fwd(77, 300, FlowMatch::dst(addr.vm), "dcr1"));
        assert!(matches!(
            check_conflicts(&tables, &rules),
            Err(SdnError::RuleConflict { existing: 77, .. })
        ));
        let mut low = BTreeMap::new();
        low.entry(ar(2))
            .or_insert_with(FlowTable::default)
            .install(fwd(77, 150, FlowMatch::dst(addr.vm), "dcr1"));
        assert!(check_conflicts(&low, &rules).is_ok());
    }

    fn scenario(tunnel: bool) -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            plane: PlaneKind::Sdn,
            mobility: MobilityModel::Scripted {
                moves: vec![(2.0, 2)],
            },
            decision: DecisionRule::Always,
            horizon: Horizon::Time(10.0),
            probe_period: Some(0.5),
            tunnel,
            overlap: true,
            ..Default::default()
        };
        cfg.transfer.params.objects_size = 8e7;
        cfg.links
            .set("ar2", "dcr1", 0.025)
            .set("ar2", "dcr2", 0.0005)
            .set("fmcc", "dcr2", 0.002);
        cfg
    }

    #[test]
    fn tunnel_keeps_addresses_transparent() {
        let cfg = scenario(true);
        let (out, plane) = run_with(&cfg, SdnPlane::new(&cfg)).unwrap();
        assert_eq!(out.metrics.migrations_count, 1);
        let flow = &out.metrics.flows[0];
        assert_eq!(flow.misdelivered, 0);
        let a = plane.addresses_of();
        assert_eq!(flow.seen_at_service, [(a.ue, a.vm)].into());
        assert_eq!(flow.seen_at_user, [(a.vm, a.ue)].into());
        let last = out.metrics.rtt_trace.last().unwrap().1;
        assert!((last - 0.001).abs() < 1e-9, "rtt {last}");
        assert!(plane.path().tunnel.is_some());
    }

    #[test]
    fn without_tunnel_overlap_misdelivers() {
        let cfg = scenario(false);
        let (out, _) = run_with(&cfg, SdnPlane::new(&cfg)).unwrap();
        assert!(out.metrics.flows[0].misdelivered > 0);
    }

    #[test]
    fn conflict_aborts_migration() {
        let cfg = scenario(true);
        let mut plane = SdnPlane::new(&cfg);
        plane.install_static(
            "ar2",
            fwd(77, 300, FlowMatch::dst([10, 0, 0, 5].into()), "dcr1"),
        );
        let (out, _) = run_with(&cfg, plane).unwrap();
        assert_eq!(out.log.count(EventKind::MigrateAbort), 1);
        assert_eq!(out.metrics.migrations_count, 0);
    }
}
