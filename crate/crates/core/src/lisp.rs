//! LISP mobility control plane.
//!
//! Each site has an access xTR (`ar<s>`) for user subnets and a DC xTR
//! (`dcr<s>`) for the DC subnet. The MR/MS (`mrms`) holds the EID-to-RLOC
//! database and answers map requests by longest-prefix match. The FMCC
//! (`fmcc`) hears about user moves from the MR/MS, decides, and drives the
//! migration:
//!
//! 1. FMCC asks the source hypervisor to transfer the service.
//! 2. After the transfer the service runs at the target DC.
//! 3. FMCC tells the source and target DC xTRs about the new RLOC.
//! 4. The target xTR registers the service EID as a /32 at the MR/MS.
//! 5. The source xTR drops the EID and pushes the new RLOC to every xTR
//!    that had traffic for it, then hands its correspondent list to the target.
//!
//! The service is unreachable from step 2 until the last of steps 4 and 5.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use thiserror::Error;

use crate::sim::network::{ar, dc, dcr, FMCC, MRMS, UE};
use crate::sim::{ControlPlane, Ctx, EventKind, Packet, ScenarioConfig};

#[derive(Debug, Error, PartialEq)]
pub enum LispError {
    #[error("no mapping covers {0}")]
    Unresolvable(Ipv4Addr),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapEntry {
    pub eid_prefix: Ipv4Net,
    pub rloc: Ipv4Addr,
    pub registered_at: f64,
}

/// Prefix table with longest-prefix-match lookup, one entry per prefix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MapDatabase {
    entries: BTreeMap<Ipv4Net, MapEntry>,
}

/// Map cache of an xTR; same structure as the database.
pub type MapCache = MapDatabase;

impl MapDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the entry for `prefix`, returning the old RLOC.
    pub fn register(&mut self, prefix: Ipv4Net, rloc: Ipv4Addr, at: f64) -> Option<Ipv4Addr> {
        let prefix = prefix.trunc();
        self.entries
            .insert(
                prefix,
                MapEntry {
                    eid_prefix: prefix,
                    rloc,
                    registered_at: at,
                },
            )
            .map(|e| e.rloc)
    }

    pub fn remove(&mut self, prefix: Ipv4Net) -> Option<MapEntry> {
        self.entries.remove(&prefix.trunc())
    }

    pub fn get(&self, prefix: Ipv4Net) -> Option<&MapEntry> {
        self.entries.get(&prefix.trunc())
    }

    pub fn lookup(&self, eid: Ipv4Addr) -> Option<&MapEntry> {
        (0..=32u8).rev().find_map(|len| {
            let net = Ipv4Net::new(eid, len).expect("prefix length <= 32").trunc();
            self.entries.get(&net)
        })
    }

    pub fn resolve(&self, eid: Ipv4Addr) -> Result<MapEntry, LispError> {
        self.lookup(eid)
            .copied()
            .ok_or(LispError::Unresolvable(eid))
    }

    pub fn entries(&self) -> impl Iterator<Item = &MapEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn host(eid: Ipv4Addr) -> Ipv4Net {
    Ipv4Net::new(eid, 32).expect("valid /32")
}

#[derive(Clone, Debug, PartialEq)]
pub struct XtrState {
    pub rloc: Ipv4Addr,
    pub local_registrations: BTreeSet<Ipv4Net>,
    pub cache: MapCache,
    /// Per local EID, RLOCs of xTRs that sent it traffic.
    pub correspondents: BTreeMap<Ipv4Addr, BTreeSet<Ipv4Addr>>,
    /// EIDs this xTR delivers to directly attached hosts.
    hosts: BTreeSet<Ipv4Addr>,
    pending: BTreeMap<Ipv4Addr, Vec<Packet>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FmccState {
    /// User EID to the RLOC of its current access xTR.
    pub user_locations: BTreeMap<Ipv4Addr, Ipv4Addr>,
    /// DC site to the RLOC of the xTR serving its subnet.
    pub dc_xtr_map: BTreeMap<usize, Ipv4Addr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateRole {
    /// New home of the EID; must register it.
    Target,
    /// Old home of the EID; must drop it and notify correspondents.
    Source,
    /// Peer with traffic for the EID; updates its cache.
    Correspondent,
    /// Earlier requester of a user EID that moved.
    Subscriber,
}

#[derive(Clone, Debug)]
pub enum LispMsg {
    MapRequest {
        from: String,
        eid: Ipv4Addr,
    },
    MapReply {
        to: String,
        eid: Ipv4Addr,
        entry: Option<MapEntry>,
    },
    MapRegister {
        from: String,
        prefix: Ipv4Net,
        rloc: Ipv4Addr,
        mig: Option<u64>,
    },
    MapNotify {
        eid: Ipv4Addr,
        rloc: Ipv4Addr,
    },
    FmccMigrate {
        src: usize,
        dst: usize,
    },
    TransferDone {
        mig: u64,
        dst: usize,
    },
    MigrateDone {
        mig: u64,
        src: usize,
        dst: usize,
    },
    RlocUpdate {
        to: String,
        prefix: Ipv4Net,
        rloc: Ipv4Addr,
        mig: Option<u64>,
        role: UpdateRole,
    },
    Handoff {
        to: String,
        eid: Ipv4Addr,
        correspondents: BTreeSet<Ipv4Addr>,
    },
    /// A packet arriving at xTR `at`, encapsulated by `outer` if set.
    Data {
        at: String,
        pkt: Packet,
        outer: Option<Ipv4Addr>,
    },
    ToService {
        site: usize,
        pkt: Packet,
    },
    ToUser {
        site: usize,
        pkt: Packet,
    },
}

pub struct LispPlane {
    pub map_server: MapDatabase,
    subscribers: BTreeMap<Ipv4Addr, BTreeSet<String>>,
    pub xtrs: BTreeMap<String, XtrState>,
    pub fmcc: FmccState,
    names: BTreeMap<Ipv4Addr, String>,
    ue_eid: Ipv4Addr,
    vm_eid: Ipv4Addr,
    /// Site hosting the service as last committed.
    vm_site: usize,
    /// Redirects still outstanding per migration.
    awaiting: BTreeMap<u64, usize>,
}

pub fn access_rloc(site: usize) -> Ipv4Addr {
    Ipv4Addr::new(198, 51, 100, site as u8)
}

pub fn dc_rloc(site: usize) -> Ipv4Addr {
    Ipv4Addr::new(203, 0, 113, site as u8)
}

pub fn dc_subnet(site: usize) -> Ipv4Net {
    Ipv4Net::new(Ipv4Addr::new(10, site as u8, 0, 0), 24).expect("valid prefix")
}

pub fn user_subnet(site: usize) -> Ipv4Net {
    Ipv4Net::new(Ipv4Addr::new(192, 168, site as u8, 0), 24).expect("valid prefix")
}

impl LispPlane {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let mut map_server = MapDatabase::new();
        let mut xtrs = BTreeMap::new();
        let mut names = BTreeMap::new();
        for s in 1..=cfg.sites {
            map_server.register(dc_subnet(s), dc_rloc(s), 0.0);
            map_server.register(user_subnet(s), access_rloc(s), 0.0);
            for (name, rloc, subnet) in [
                (dcr(s), dc_rloc(s), dc_subnet(s)),
                (ar(s), access_rloc(s), user_subnet(s)),
            ] {
                let xtr = XtrState {
                    rloc,
                    local_registrations: [subnet].into(),
                    cache: MapCache::new(),
                    correspondents: BTreeMap::new(),
                    hosts: BTreeSet::new(),
                    pending: BTreeMap::new(),
                };
                names.insert(rloc, name.clone());
                xtrs.insert(name, xtr);
            }
        }
        let vm_eid = Ipv4Addr::new(10, cfg.vm_site as u8, 0, 10);
        let ue_eid = Ipv4Addr::new(192, 168, cfg.ue_site as u8, 100);
        xtrs.get_mut(&dcr(cfg.vm_site))
            .expect("vm site exists")
            .hosts
            .insert(vm_eid);
        LispPlane {
            map_server,
            subscribers: BTreeMap::new(),
            xtrs,
            fmcc: FmccState::default(),
            names,
            ue_eid,
            vm_eid,
            vm_site: cfg.vm_site,
            awaiting: BTreeMap::new(),
        }
    }

    pub fn service_eid(&self) -> Ipv4Addr {
        self.vm_eid
    }

    pub fn xtr(&self, name: &str) -> Option<&XtrState> {
        self.xtrs.get(name)
    }

    /// Checks that the MR/MS and every xTR cache covering the service EID
    /// resolve to the xTR of the DC now hosting it. Returns that RLOC.
    pub fn check_convergence(&self) -> Result<Ipv4Addr, String> {
        let want = dc_rloc(self.vm_site);
        let db = self
            .map_server
            .resolve(self.vm_eid)
            .map_err(|e| e.to_string())?;
        if db.rloc != want {
            return Err(format!(
                "MR/MS maps {} to {}, service is behind {want}",
                self.vm_eid, db.rloc
            ));
        }
        for (name, xtr) in &self.xtrs {
            if let Some(e) = xtr.cache.lookup(self.vm_eid) {
                if e.rloc != want {
                    return Err(format!(
                        "{name} caches {} -> {}, want {want}",
                        e.eid_prefix, e.rloc
                    ));
                }
            }
        }
        Ok(want)
    }

    /// Number of xTRs currently holding a /32 registration for the service.
    pub fn service_claims(&self) -> usize {
        let net = host(self.vm_eid);
        self.xtrs
            .values()
            .filter(|x| x.local_registrations.contains(&net))
            .count()
    }

    fn name_of(&self, rloc: Ipv4Addr) -> Option<String> {
        self.names.get(&rloc).cloned()
    }

    fn site_of(name: &str) -> Option<usize> {
        name.trim_start_matches(|c: char| c.is_ascii_alphabetic())
            .parse()
            .ok()
    }

    fn redirected(&mut self, ctx: &mut Ctx<LispMsg>, actor: &str, mig: u64) {
        ctx.redirect(actor, mig);
        self.settle(ctx, mig, 1);
    }

    fn settle(&mut self, ctx: &mut Ctx<LispMsg>, mig: u64, done: usize) {
        if let Some(n) = self.awaiting.get_mut(&mig) {
            *n = n.saturating_sub(done);
            if *n == 0 {
                self.awaiting.remove(&mig);
                ctx.finish_migration(mig);
            }
        }
    }

    fn send_register(
        &mut self,
        ctx: &mut Ctx<LispMsg>,
        from: &str,
        prefix: Ipv4Net,
        mig: Option<u64>,
    ) {
        let rloc = self.xtrs[from].rloc;
        ctx.log(
            EventKind::MapRegister,
            from,
            &[("prefix", prefix.to_string()), ("rloc", rloc.to_string())],
        );
        ctx.send(
            from,
            MRMS,
            LispMsg::MapRegister {
                from: from.to_string(),
                prefix,
                rloc,
                mig,
            },
        );
    }

    /// Ingress role: encapsulate towards the RLOC for `pkt.dst`, resolving first if needed.
    fn itr(&mut self, ctx: &mut Ctx<LispMsg>, at: &str, pkt: Packet) {
        let xtr = self.xtrs.get_mut(at).expect("known xTR");
        match xtr.cache.lookup(pkt.dst).map(|e| e.rloc) {
            Some(rloc) => {
                let own = xtr.rloc;
                match self.name_of(rloc) {
                    Some(next) => {
                        ctx.send(
                            at,
                            &next,
                            LispMsg::Data {
                                at: next.clone(),
                                pkt,
                                outer: Some(own),
                            },
                        );
                    }
                    None => ctx.log(
                        EventKind::Drop,
                        at,
                        &[
                            ("dst", pkt.dst.to_string()),
                            ("reason", "unknown-rloc".into()),
                        ],
                    ),
                }
            }
            None => {
                let waiting = xtr.pending.entry(pkt.dst).or_default();
                waiting.push(pkt);
                if waiting.len() == 1 {
                    ctx.log(EventKind::MapRequest, at, &[("eid", pkt.dst.to_string())]);
                    ctx.send(
                        at,
                        MRMS,
                        LispMsg::MapRequest {
                            from: at.to_string(),
                            eid: pkt.dst,
                        },
                    );
                }
            }
        }
    }

    /// Egress role: decapsulate and hand to a local host.
    fn etr(&mut self, ctx: &mut Ctx<LispMsg>, at: &str, pkt: Packet, outer: Ipv4Addr) {
        let site = Self::site_of(at).expect("site-numbered xTR");
        let to_user = at.starts_with("ar");
        let xtr = self.xtrs.get_mut(at).expect("known xTR");
        let local = if to_user {
            pkt.dst == self.ue_eid
        } else {
            xtr.hosts.contains(&pkt.dst)
        };
        if !local {
            ctx.log(
                EventKind::Drop,
                at,
                &[("dst", pkt.dst.to_string()), ("reason", "not-local".into())],
            );
            return;
        }
        xtr.correspondents.entry(pkt.dst).or_default().insert(outer);
        if to_user {
            ctx.send(at, UE, LispMsg::ToUser { site, pkt });
        } else {
            ctx.send(at, &dc(site), LispMsg::ToService { site, pkt });
        }
    }
}

impl ControlPlane for LispPlane {
    type Msg = LispMsg;

    fn addresses(&self) -> (Ipv4Addr, Ipv4Addr) {
        (self.ue_eid, self.vm_eid)
    }

    fn start(&mut self, ctx: &mut Ctx<LispMsg>) {
        for s in 1..=ctx.sites() {
            let eid = dc_subnet(s).network();
            ctx.log(EventKind::MapRequest, FMCC, &[("eid", eid.to_string())]);
            ctx.send(
                FMCC,
                MRMS,
                LispMsg::MapRequest {
                    from: FMCC.to_string(),
                    eid,
                },
            );
        }
    }

    fn on_handover(&mut self, ctx: &mut Ctx<LispMsg>, site: usize) {
        let name = ar(site);
        ctx.log(
            EventKind::Attach,
            &name,
            &[("eid", self.ue_eid.to_string())],
        );
        let net = host(self.ue_eid);
        for (n, x) in self.xtrs.iter_mut() {
            if n.starts_with("ar") {
                if *n == name {
                    x.local_registrations.insert(net);
                } else {
                    x.local_registrations.remove(&net);
                }
            }
        }
        self.send_register(ctx, &name, net, None);
    }

    fn transmit(&mut self, ctx: &mut Ctx<LispMsg>, pkt: Packet) {
        let at = ar(ctx.ue_site());
        ctx.send(
            UE,
            &at.clone(),
            LispMsg::Data {
                at,
                pkt,
                outer: None,
            },
        );
    }

    fn on_message(&mut self, ctx: &mut Ctx<LispMsg>, msg: LispMsg) {
        match msg {
            LispMsg::MapRequest { from, eid } => {
                let entry = self.map_server.lookup(eid).copied();
                self.subscribers
                    .entry(eid)
                    .or_default()
                    .insert(from.clone());
                let kind = if entry.is_some() {
                    EventKind::MapReply
                } else {
                    EventKind::NegMapReply
                };
                let rloc = entry.map_or("none".to_string(), |e| e.rloc.to_string());
                ctx.log(
                    kind,
                    MRMS,
                    &[
                        ("to", from.clone()),
                        ("eid", eid.to_string()),
                        ("rloc", rloc),
                    ],
                );
                ctx.send(
                    MRMS,
                    &from.clone(),
                    LispMsg::MapReply {
                        to: from,
                        eid,
                        entry,
                    },
                );
            }
            LispMsg::MapReply { to, eid, entry } => {
                if to == FMCC {
                    if let (Some(e), Some(site)) = (
                        entry,
                        (1..=ctx.sites()).find(|s| dc_subnet(*s).contains(&eid)),
                    ) {
                        self.fmcc.dc_xtr_map.insert(site, e.rloc);
                    }
                    return;
                }
                let xtr = self.xtrs.get_mut(&to).expect("known xTR");
                let waiting = xtr.pending.remove(&eid).unwrap_or_default();
                match entry {
                    Some(e) => {
                        xtr.cache.register(e.eid_prefix, e.rloc, ctx.now());
                        for pkt in waiting {
                            self.itr(ctx, &to, pkt);
                        }
                    }
                    None => {
                        for pkt in waiting {
                            ctx.log(
                                EventKind::Drop,
                                &to,
                                &[
                                    ("dst", pkt.dst.to_string()),
                                    ("reason", "unresolvable".into()),
                                ],
                            );
                        }
                    }
                }
            }
            LispMsg::MapRegister {
                from,
                prefix,
                rloc,
                mig,
            } => {
                self.map_server.register(prefix, rloc, ctx.now());
                if let Some(m) = mig {
                    self.redirected(ctx, MRMS, m);
                } else {
                    let subs: Vec<String> = self
                        .subscribers
                        .iter()
                        .filter(|(eid, _)| prefix.contains(*eid))
                        .flat_map(|(_, s)| s.iter().cloned())
                        .filter(|s| *s != from && *s != FMCC)
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    for to in subs {
                        let update = LispMsg::RlocUpdate {
                            to: to.clone(),
                            prefix,
                            rloc,
                            mig: None,
                            role: UpdateRole::Subscriber,
                        };
                        ctx.send(MRMS, &to, update);
                    }
                }
                if prefix.contains(&self.ue_eid) && prefix.prefix_len() == 32 {
                    ctx.log(
                        EventKind::MapNotify,
                        MRMS,
                        &[("eid", self.ue_eid.to_string()), ("rloc", rloc.to_string())],
                    );
                    ctx.send(
                        MRMS,
                        FMCC,
                        LispMsg::MapNotify {
                            eid: self.ue_eid,
                            rloc,
                        },
                    );
                }
            }
            LispMsg::MapNotify { eid, rloc } => {
                self.fmcc.user_locations.insert(eid, rloc);
                if let Some((src, dst)) = ctx.decide(FMCC) {
                    let target = dc(src);
                    ctx.log(
                        EventKind::FmccMigrate,
                        FMCC,
                        &[("src", src.to_string()), ("dst", dst.to_string())],
                    );
                    if !ctx.send(FMCC, &target, LispMsg::FmccMigrate { src, dst }) {
                        ctx.cancel_decision();
                    }
                }
            }
            LispMsg::FmccMigrate { src, dst } => {
                if let Some((mig, transfer)) = ctx.start_migration(&dc(src), src, dst) {
                    ctx.schedule(transfer, LispMsg::TransferDone { mig, dst });
                }
            }
            LispMsg::TransferDone { mig, dst } => {
                let src = self.vm_site;
                let here = dc(dst);
                ctx.commit_migration(&here, mig, dst);
                self.vm_site = dst;
                self.awaiting.insert(mig, 2);
                ctx.log(EventKind::MigrateDone, &here, &[("mig", mig.to_string())]);
                ctx.send(&here, FMCC, LispMsg::MigrateDone { mig, src, dst });
            }
            LispMsg::MigrateDone { mig, src, dst } => {
                let prefix = host(self.vm_eid);
                let rloc = self
                    .fmcc
                    .dc_xtr_map
                    .get(&dst)
                    .copied()
                    .unwrap_or_else(|| dc_rloc(dst));
                for (site, role) in [(dst, UpdateRole::Target), (src, UpdateRole::Source)] {
                    let to = self
                        .fmcc
                        .dc_xtr_map
                        .get(&site)
                        .and_then(|r| self.name_of(*r))
                        .unwrap_or_else(|| dcr(site));
                    ctx.log(
                        EventKind::RlocUpdate,
                        FMCC,
                        &[
                            ("to", to.clone()),
                            ("eid", prefix.to_string()),
                            ("rloc", rloc.to_string()),
                        ],
                    );
                    ctx.send(
                        FMCC,
                        &to.clone(),
                        LispMsg::RlocUpdate {
                            to,
                            prefix,
                            rloc,
                            mig: Some(mig),
                            role,
                        },
                    );
                }
            }
            LispMsg::RlocUpdate {
                to,
                prefix,
                rloc,
                mig,
                role,
            } => match role {
                UpdateRole::Target => {
                    let xtr = self.xtrs.get_mut(&to).expect("known xTR");
                    xtr.hosts.insert(prefix.addr());
                    xtr.local_registrations.insert(prefix);
                    xtr.cache.remove(prefix);
                    self.send_register(ctx, &to, prefix, mig);
                }
                UpdateRole::Source => {
                    let xtr = self.xtrs.get_mut(&to).expect("known xTR");
                    xtr.hosts.remove(&prefix.addr());
                    xtr.local_registrations.remove(&prefix);
                    xtr.cache.register(prefix, rloc, ctx.now());
                    let peers = xtr
                        .correspondents
                        .remove(&prefix.addr())
                        .unwrap_or_default();
                    let targets: Vec<String> =
                        peers.iter().filter_map(|r| self.name_of(*r)).collect();
                    if let Some(m) = mig {
                        if let Some(n) = self.awaiting.get_mut(&m) {
                            *n += targets.len();
                        }
                    }
                    for peer in targets {
                        ctx.log(
                            EventKind::RlocUpdate,
                            &to,
                            &[
                                ("to", peer.clone()),
                                ("eid", prefix.to_string()),
                                ("rloc", rloc.to_string()),
                            ],
                        );
                        let update = LispMsg::RlocUpdate {
                            to: peer.clone(),
                            prefix,
                            rloc,
                            mig,
                            role: UpdateRole::Correspondent,
                        };
                        ctx.send(&to, &peer, update);
                    }
                    if let Some(new_home) = self.name_of(rloc) {
                        let handoff = LispMsg::Handoff {
                            to: new_home.clone(),
                            eid: prefix.addr(),
                            correspondents: peers,
                        };
                        ctx.send(&to, &new_home, handoff);
                    }
                    if let Some(m) = mig {
                        self.settle(ctx, m, 1);
                    }
                }
                UpdateRole::Correspondent | UpdateRole::Subscriber => {
                    let xtr = self.xtrs.get_mut(&to).expect("known xTR");
                    xtr.cache.register(prefix, rloc, ctx.now());
                    if let (UpdateRole::Correspondent, Some(m)) = (role, mig) {
                        self.redirected(ctx, &to, m);
                    }
                }
            },
            LispMsg::Handoff {
                to,
                eid,
                correspondents,
            } => {
                let xtr = self.xtrs.get_mut(&to).expect("known xTR");
                let own = xtr.rloc;
                xtr.correspondents
                    .entry(eid)
                    .or_default()
                    .extend(correspondents.into_iter().filter(|r| *r != own));
            }
            LispMsg::Data { at, pkt, outer } => match outer {
                Some(o) => self.etr(ctx, &at, pkt, o),
                None => self.itr(ctx, &at, pkt),
            },
            LispMsg::ToService { site, pkt } => {
                if let Some(reply) = ctx.service_receive(pkt, site, true) {
                    let at = dcr(site);
                    ctx.send(
                        &dc(site),
                        &at.clone(),
                        LispMsg::Data {
                            at,
                            pkt: reply,
                            outer: None,
                        },
                    );
                }
            }
            LispMsg::ToUser { site, pkt } => {
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
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_with, DecisionRule, Horizon, MobilityModel, PlaneKind};

    fn net(s: &str) -> Ipv4Net {
        s.parse().unwrap()
    }

    #[test]
    fn longest_prefix_wins() {
        let mut db = MapDatabase::new();
        db.register(net("10.1.0.0/24"), Ipv4Addr::new(1, 1, 1, 1), 0.0);
        let eid = Ipv4Addr::new(10, 1, 0, 10);
        assert_eq!(db.resolve(eid).unwrap().rloc, Ipv4Addr::new(1, 1, 1, 1));
        db.register(net("10.1.0.10/32"), Ipv4Addr::new(2, 2, 2, 2), 1.0);
        assert_eq!(db.resolve(eid).unwrap().rloc, Ipv4Addr::new(2, 2, 2, 2));
        assert_eq!(
            db.resolve(Ipv4Addr::new(10, 1, 0, 11)).unwrap().rloc,
            Ipv4Addr::new(1, 1, 1, 1)
        );
        assert_eq!(
            db.resolve(Ipv4Addr::new(172, 16, 0, 1)),
            Err(LispError::Unresolvable(Ipv4Addr::new(172, 16, 0, 1)))
        );
    }

    #[test]
    fn register_replaces_single_entry() {
        let mut db = MapDatabase::new();
        let p = net("10.1.0.10/32");
        assert_eq!(db.register(p, Ipv4Addr::new(1, 1, 1, 1), 0.0), None);
        assert_eq!(
            db.register(p, Ipv4Addr::new(2, 2, 2, 2), 1.0),
            Some(Ipv4Addr::new(1, 1, 1, 1))
        );
        assert_eq!(db.len(), 1);
        assert_eq!(db.get(net("10.1.0.10/32")).unwrap().registered_at, 1.0);
    }

    fn scenario(decision: DecisionRule) -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            plane: PlaneKind::Lisp,
            mobility: MobilityModel::Scripted {
                moves: vec![(5.0, 2)],
            },
            decision,
            horizon: Horizon::Time(20.0),
            probe_period: Some(1.0),
            ..Default::default()
        };
        cfg.transfer.params.objects_size = 1e6;
        cfg.links
            .set("ue", "ar1", 0.001)
            .set("ue", "ar2", 0.001)
            .set("dc1", "dc2", 0.005);
        cfg
    }

    #[test]
    fn never_decision_has_no_migration_events() {
        let (out, _) = run_with(
            &scenario(DecisionRule::Never),
            LispPlane::new(&scenario(DecisionRule::Never)),
        )
        .unwrap();
        assert_eq!(out.log.count(EventKind::MigrateStart), 0);
        assert_eq!(out.log.count(EventKind::MapNotify), 1);
    }

    #[test]
    fn always_decision_migrates_and_converges() {
        let cfg = scenario(DecisionRule::Always);
        let (out, plane) = run_with(&cfg, LispPlane::new(&cfg)).unwrap();
        assert_eq!(out.metrics.migrations_count, 1);
        assert_eq!(plane.check_convergence(), Ok(dc_rloc(2)));
        assert_eq!(plane.service_claims(), 1);
        let ar2 = plane.xtr("ar2").unwrap();
        assert_eq!(
            ar2.cache.resolve(plane.service_eid()).unwrap().rloc,
            dc_rloc(2)
        );
        let kinds: Vec<EventKind> = out.log.records().iter().map(|r| r.kind).collect();
        let pos = |k| kinds.iter().position(|x| *x == k).unwrap();
        assert!(pos(EventKind::FmccMigrate) < pos(EventKind::MigrateStart));
        assert!(pos(EventKind::MigrateStart) < pos(EventKind::MigrateCommit));
        assert!(pos(EventKind::MigrateCommit) < pos(EventKind::MigrateDone));
        assert!(pos(EventKind::MigrateDone) < pos(EventKind::Redirect));
        assert!(out.metrics.flows[0].replies > 10);
    }

    #[test]
    fn unreachable_target_aborts() {
        let mut cfg = scenario(DecisionRule::Always);
        cfg.links.set_down("dc1", "dc2");
        let (out, plane) = run_with(&cfg, LispPlane::new(&cfg)).unwrap();
        assert_eq!(out.log.count(EventKind::MigrateAbort), 1);
        assert_eq!(out.log.count(EventKind::MigrateCommit), 0);
        assert_eq!(plane.check_convergence(), Ok(dc_rloc(1)));
        assert_eq!(plane.service_claims(), 0);
    }
}
