// SPDX-License-Identifier: Apache-2.0

//! TPP-CP: app registry, memory access policies and the filter rule table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tpp_core::analysis::{analyze_with, AccessOp, AnalysisReport, AnalyzeOptions, MemoryPolicy};
use tpp_core::{resolve, Address, TppProgram};

use crate::topology::{format_ip, parse_ip};

/// Where an app's executed TPPs are sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// The host that receives the TPP keeps the record.
    #[default]
    Local,
    /// The receiving host echoes the TPP back to the host that added it.
    Source,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppRegistration {
    pub appid: u64,
    pub name: String,
    pub session: u16,
    #[serde(default)]
    pub aggregator: Aggregator,
}

/// 5-tuple predicate; `None` fields are wildcards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Filter {
    pub src_ip: Option<u32>,
    pub dst_ip: Option<u32>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub proto: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FiveTuple {
    pub src_ip: u32,
    pub dst_ip: u32,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

impl Filter {
    pub fn any() -> Filter {
        Filter::default()
    }

    pub fn matches(&self, t: &FiveTuple) -> bool {
        self.src_ip.is_none_or(|v| v == t.src_ip)
            && self.dst_ip.is_none_or(|v| v == t.dst_ip)
            && self.src_port.is_none_or(|v| v == t.src_port)
            && self.dst_port.is_none_or(|v| v == t.dst_port)
            && self.proto.is_none_or(|v| v == t.proto)
    }
}

/// `src=10.0.0.1,dst=10.0.0.2,sport=5,dport=6,proto=udp`; `*` or an empty string matches everything.
impl FromStr for Filter {
    type Err = CpError;

    fn from_str(s: &str) -> Result<Filter, CpError> {
        let mut f = Filter::default();
        let bad = |what: &str| CpError::BadFilter(what.to_string());
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty() && *p != "*") {
            let (k, v) = part.split_once('=').ok_or_else(|| bad(part))?;
            let port = |v: &str| v.parse::<u16>().map_err(|_| bad(part));
            match k.trim() {
                "src" => f.src_ip = Some(parse_ip(v).map_err(|_| bad(part))?),
                "dst" => f.dst_ip = Some(parse_ip(v).map_err(|_| bad(part))?),
                "sport" => f.src_port = Some(port(v)?),
                "dport" => f.dst_port = Some(port(v)?),
                "proto" => {
                    f.proto = Some(match v {
                        "udp" => 17,
                        "tcp" => 6,
                        n => n.parse().map_err(|_| bad(part))?,
                    })
                }
                _ => return Err(bad(part)),
            }
        }
        Ok(f)
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(v) = self.src_ip {
            parts.push(format!("src={}", format_ip(v)));
        }
        if let Some(v) = self.dst_ip {
            parts.push(format!("dst={}", format_ip(v)));
        }
        if let Some(v) = self.src_port {
            parts.push(format!("sport={v}"));
        }
        if let Some(v) = self.dst_port {
            parts.push(format!("dport={v}"));
        }
        if let Some(v) = self.proto {
            parts.push(format!("proto={v}"));
        }
        if parts.is_empty() {
            f.write_str("*")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterRule {
    pub handle: u64,
    pub appid: u64,
    pub filter: Filter,
    pub tpp: TppProgram,
    pub sample_frequency: u32,
    pub priority: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CpError {
    #[error("app {0} is not registered")]
    NotRegistered(u64),
    #[error("app {0} is already registered")]
    DuplicateApp(u64),
    #[error("session {0} already belongs to another app")]
    SessionInUse(u16),
    #[error("no app owns session {0}")]
    UnknownSession(u16),
    #[error("policy violation: {0}")]
    PolicyViolation(String),
    #[error("cannot decode TPP: {0}")]
    Decode(String),
    #[error("sample frequency must be at least 1")]
    ZeroFrequency,
    #[error("malformed policy: {0}")]
    BadPolicy(String),
    #[error("write ranges of apps {0} and {1} overlap")]
    OverlappingWrite(u64, u64),
    #[error("bad filter term {0:?}")]
    BadFilter(String),
    #[error("no rule with handle {0}")]
    NoSuchRule(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TppControlPlane {
    pub apps: BTreeMap<u64, AppRegistration>,
    pub policies: Vec<MemoryPolicy>,
    rules: Vec<FilterRule>,
    next_handle: u64,
    /// Rejects every TPP that could write switch memory.
    pub deny_writes: bool,
}

impl TppControlPlane {
    pub fn new() -> TppControlPlane {
        TppControlPlane { next_handle: 1, ..TppControlPlane::default() }
    }

    pub fn register_app(&mut self, reg: AppRegistration) -> Result<(), CpError> {
        if self.apps.contains_key(&reg.appid) {
            return Err(CpError::DuplicateApp(reg.appid));
        }
        if self.apps.values().any(|a| a.session == reg.session) {
            return Err(CpError::SessionInUse(reg.session));
        }
        self.apps.insert(reg.appid, reg);
        Ok(())
    }

    pub fn add_policy(&mut self, p: MemoryPolicy) -> Result<(), CpError> {
        if !p.well_formed() {
            return Err(CpError::BadPolicy(format!("start {:#06x} > end {:#06x}", p.start.0, p.end.0)));
        }
        if p.op == AccessOp::Write {
            if let Some(q) = self.policies.iter().find(|q| q.op == AccessOp::Write && q.appid != p.appid && q.overlaps(&p)) {
                return Err(CpError::OverlappingWrite(q.appid, p.appid));
            }
        }
        self.policies.push(p);
        Ok(())
    }

    pub fn app_for_session(&self, session: u16) -> Option<&AppRegistration> {
        self.apps.values().find(|a| a.session == session)
    }

    /// Static analysis of `tpp` against `appid`'s policies.
    pub fn check(&self, appid: u64, tpp: &TppProgram) -> Result<AnalysisReport, CpError> {
        if !self.apps.contains_key(&appid) {
            return Err(CpError::NotRegistered(appid));
        }
        let report = analyze_with(tpp, &self.policies, appid, &AnalyzeOptions { deny_writes: self.deny_writes });
        if report.admissible() {
            Ok(report)
        } else {
            let why: Vec<String> = report.violations.iter().map(|v| format!("instruction {}: {:?}", v.index, v.reason)).collect();
            Err(CpError::PolicyViolation(why.join("; ")))
        }
    }

    /// Installs a rule if the TPP passes analysis. The TPP's session is forced to the app's.
    pub fn add_tpp(
        &mut self,
        filter: Filter,
        tpp_bytes: &[u8],
        sample_frequency: u32,
        priority: i32,
        appid: u64,
    ) -> Result<u64, CpError> {
        if sample_frequency == 0 {
            return Err(CpError::ZeroFrequency);
        }
        let mut tpp = TppProgram::decode(tpp_bytes).map_err(|e| CpError::Decode(e.to_string()))?;
        self.check(appid, &tpp)?;
        tpp.header.session_id = self.apps[&appid].session;
        let handle = self.next_handle.max(1);
        self.next_handle = handle + 1;
        self.rules.push(FilterRule { handle, appid, filter, tpp, sample_frequency, priority });
        // Highest priority first; among equals, the older rule.
        self.rules.sort_by_key(|r| (std::cmp::Reverse(r.priority), r.handle));
        Ok(handle)
    }

    pub fn remove(&mut self, handle: u64) -> Result<FilterRule, CpError> {
        let i = self.rules.iter().position(|r| r.handle == handle).ok_or(CpError::NoSuchRule(handle))?;
        Ok(self.rules.remove(i))
    }

    /// Rules in the order they are consulted.
    pub fn rules(&self) -> &[FilterRule] {
        &self.rules
    }

    pub fn first_match(&self, t: &FiveTuple) -> Option<&FilterRule> {
        self.rules.iter().find(|r| r.filter.matches(t))
    }

    pub fn to_doc(&self) -> CpDoc {
        CpDoc {
            apps: self.apps.values().cloned().collect(),
            policies: self.policies.iter().map(PolicyDoc::from).collect(),
            rules: self
                .rules
                .iter()
                .map(|r| RuleDoc {
                    handle: Some(r.handle),
                    appid: r.appid,
                    filter: r.filter.to_string(),
                    tpp_hex: hex::encode(r.tpp.encode().unwrap_or_default()),
                    sample_frequency: r.sample_frequency,
                    priority: r.priority,
                })
                .collect(),
            deny_writes: self.deny_writes,
        }
    }

    pub fn from_doc(doc: &CpDoc) -> Result<TppControlPlane, CpError> {
        let mut cp = TppControlPlane::new();
        cp.deny_writes = doc.deny_writes;
        for a in &doc.apps {
            cp.register_app(a.clone())?;
        }
        for p in &doc.policies {
            cp.add_policy(p.to_policy()?)?;
        }
        for r in &doc.rules {
            let bytes = hex::decode(&r.tpp_hex).map_err(|e| CpError::Decode(e.to_string()))?;
            let handle = cp.add_tpp(r.filter.parse()?, &bytes, r.sample_frequency, r.priority, r.appid)?;
            if let Some(h) = r.handle {
                // Keep handles stable across saves.
                cp.rules.iter_mut().find(|x| x.handle == handle).unwrap().handle = h;
                cp.next_handle = cp.next_handle.max(h + 1);
            }
        }
        cp.rules.sort_by_key(|r| (std::cmp::Reverse(r.priority), r.handle));
        Ok(cp)
    }
}

/// Serialized control-plane state: policy and rule files.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpDoc {
    #[serde(default)]
    pub apps: Vec<AppRegistration>,
    #[serde(default)]
    pub policies: Vec<PolicyDoc>,
    #[serde(default)]
    pub rules: Vec<RuleDoc>,
    #[serde(default)]
    pub deny_writes: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpDoc {
    Read,
    Write,
}

/// Addresses are mnemonics such as `[Link:AppSpecific_0]` or hex such as `0x9005`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDoc {
    pub appid: u64,
    pub op: OpDoc,
    pub start: String,
    pub end: String,
}

pub fn parse_address(s: &str) -> Result<Address, CpError> {
    let s = s.trim();
    if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        return u16::from_str_radix(h, 16).map(Address).map_err(|_| CpError::BadPolicy(s.to_string()));
    }
    resolve(s).map_err(|e| CpError::BadPolicy(format!("{s}: {e}")))
}

impl PolicyDoc {
    pub fn to_policy(&self) -> Result<MemoryPolicy, CpError> {
        let op = match self.op {
            OpDoc::Read => AccessOp::Read,
            OpDoc::Write => AccessOp::Write,
        };
        Ok(MemoryPolicy::new(self.appid, op, parse_address(&self.start)?, parse_address(&self.end)?))
    }
}

impl From<&MemoryPolicy> for PolicyDoc {
    fn from(p: &MemoryPolicy) -> PolicyDoc {
        PolicyDoc {
            appid: p.appid,
            op: if p.op == AccessOp::Write { OpDoc::Write } else { OpDoc::Read },
            start: format!("{:#06x}", p.start.0),
            end: format!("{:#06x}", p.end.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleDoc {
    #[serde(default)]
    pub handle: Option<u64>,
    pub appid: u64,
    #[serde(default)]
    pub filter: String,
    pub tpp_hex: String,
    pub sample_frequency: u32,
    #[serde(default)]
    pub priority: i32,
}

#[cfg(test)]
mod tests {
    use super::*;
    use tpp_core::apps::history::NDB_SOURCE;
    use tpp_core::apps::rcp::{rcp_update_program, HopUpdate};
    use tpp_core::asm::assemble;

    fn cp() -> TppControlPlane {
        let mut cp = TppControlPlane::new();
        cp.register_app(AppRegistration { appid: 7, name: "ndb".into(), session: 70, aggregator: Aggregator::Local }).unwrap();
        cp.register_app(AppRegistration { appid: 8, name: "rcp".into(), session: 80, aggregator: Aggregator::Source }).unwrap();
        for (appid, op, s, e) in [
            (7, OpDoc::Read, "[Switch:SwitchID]", "[Switch:SwitchID]"),
            (7, OpDoc::Read, "0xc000", "0xc0ff"),
            (8, OpDoc::Read, "0xa000", "0xa0ff"),
        ] {
            cp.add_policy(PolicyDoc { appid, op, start: s.into(), end: e.into() }.to_policy().unwrap()).unwrap();
        }
        cp
    }

    #[test]
    fn ndb_installs_and_rcp_update_is_denied() {
        let mut cp = cp();
        let ndb = assemble(NDB_SOURCE).unwrap().encode().unwrap();
        let h = cp.add_tpp(Filter::any(), &ndb, 1, 0, 7).unwrap();
        assert_eq!(cp.rules()[0].handle, h);
        assert_eq!(cp.rules()[0].tpp.header.session_id, 70);
        let upd = rcp_update_program(&[Some(HopUpdate { version: 1, rate_word: 5 })], 80).unwrap().encode().unwrap();
        assert!(matches!(cp.add_tpp(Filter::any(), &upd, 1, 0, 8), Err(CpError::PolicyViolation(_))));
        assert_eq!(cp.rules().len(), 1);
        assert_eq!(cp.add_tpp(Filter::any(), &ndb, 1, 0, 99), Err(CpError::NotRegistered(99)));
        assert_eq!(cp.add_tpp(Filter::any(), &ndb, 0, 0, 7), Err(CpError::ZeroFrequency));
        assert!(matches!(cp.add_tpp(Filter::any(), &[1, 2, 3], 1, 0, 7), Err(CpError::Decode(_))));
    }

    #[test]
    fn overlapping_write_ranges_are_refused() {
        let mut cp = cp();
        let w = |appid| PolicyDoc { appid, op: OpDoc::Write, start: "[Link:AppSpecific_0]".into(), end: "[Link:AppSpecific_1]".into() };
        cp.add_policy(w(8).to_policy().unwrap()).unwrap();
        assert_eq!(cp.add_policy(w(7).to_policy().unwrap()), Err(CpError::OverlappingWrite(8, 7)));
        let upd = rcp_update_program(&[Some(HopUpdate { version: 1, rate_word: 5 })], 80).unwrap().encode().unwrap();
        assert!(cp.add_tpp(Filter::any(), &upd, 1, 0, 8).is_ok());
        cp.deny_writes = true;
        assert!(matches!(cp.add_tpp(Filter::any(), &upd, 1, 0, 8), Err(CpError::PolicyViolation(_))));
    }

    #[test]
    fn priority_order_and_filters() {
        let mut cp = cp();
        let ndb = assemble(NDB_SOURCE).unwrap().encode().unwrap();
        let low = cp.add_tpp("dst=10.0.0.2".parse().unwrap(), &ndb, 1, 1, 7).unwrap();
        let high = cp.add_tpp("proto=udp".parse().unwrap(), &ndb, 1, 5, 7).unwrap();
        let t = FiveTuple { src_ip: 1, dst_ip: parse_ip("10.0.0.2").unwrap(), src_port: 1, dst_port: 2, proto: 17 };
        assert_eq!(cp.first_match(&t).unwrap().handle, high);
        cp.remove(high).unwrap();
        assert_eq!(cp.first_match(&t).unwrap().handle, low);
        assert!(cp.first_match(&FiveTuple { dst_ip: 3, ..t }).is_none());
        assert_eq!(cp.remove(high), Err(CpError::NoSuchRule(high)));
        assert!("bogus=1".parse::<Filter>().is_err());
        let f: Filter = "src=10.0.0.1,dport=80,proto=6".parse().unwrap();
        assert_eq!(f.to_string().parse::<Filter>().unwrap(), f);
    }

    #[test]
    fn doc_round_trip() {
        let mut cp = cp();
        let ndb = assemble(NDB_SOURCE).unwrap().encode().unwrap();
        cp.add_tpp(Filter::any(), &ndb, 4, 2, 7).unwrap();
        let doc = cp.to_doc();
        let json = serde_json::to_string(&doc).unwrap();
        let back = TppControlPlane::from_doc(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.rules(), cp.rules());
        assert_eq!(back.policies, cp.policies);
    }
}
