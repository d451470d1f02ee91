//! Event catalog, grouping, and the Linux `perf_event_open` backend.

use std::collections::BTreeMap;
use std::io;

use log::warn;
use serde::{Deserialize, Serialize};

use super::ProfileError;

/// Events collected by default, by category.
pub const DEFAULT_EVENTS: &[(&str, &[&str])] = &[
    ("Core", &["instructions", "cpu-cycles", "branches", "branch-misses"]),
    (
        "Cache",
        &[
            "cache-references",
            "cache-misses",
            "L1-dcache-loads",
            "L1-icache-load-misses",
        ],
    ),
    ("TLB", &["dTLB-loads", "dTLB-load-misses", "iTLB-load-misses"]),
    ("Page Faults", &["page-faults", "minor-faults"]),
];

/// Hardware counters the host can schedule simultaneously without
/// multiplexing.
pub const DEFAULT_COUNTER_BUDGET: usize = 4;

/// Ordered events partitioned into co-schedulable groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSet {
    pub events: Vec<String>,
    pub groups: Vec<Vec<String>>,
}

impl EventSet {
    /// Packs `events` in order into groups of at most `budget` members.
    pub fn new<I, S>(events: I, budget: usize) -> Result<Self, ProfileError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if budget == 0 {
            return Err(ProfileError::Argument("counter budget must be at least 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut list = Vec::new();
        for e in events {
            let e = e.into();
            if lookup(&e).is_none() {
                return Err(ProfileError::Argument(format!("unknown event `{e}`")));
            }
            if seen.insert(e.clone()) {
                list.push(e);
            }
        }
        if list.is_empty() {
            return Err(ProfileError::Argument("event set is empty".into()));
        }
        let groups = list.chunks(budget).map(|c| c.to_vec()).collect();
        Ok(EventSet { events: list, groups })
    }

    /// The default catalog packed under `budget`.
    pub fn default_catalog(budget: usize) -> Result<Self, ProfileError> {
        EventSet::new(DEFAULT_EVENTS.iter().flat_map(|(_, e)| e.iter().copied()), budget)
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct EventCode {
    pub kind: u32,
    pub config: u64,
}

const TYPE_HARDWARE: u32 = 0;
const TYPE_SOFTWARE: u32 = 1;
const TYPE_HW_CACHE: u32 = 3;

const fn cache(id: u64, op: u64, result: u64) -> EventCode {
    EventCode {
        kind: TYPE_HW_CACHE,
        config: id | (op << 8) | (result << 16),
    }
}

const fn hw(config: u64) -> EventCode {
    EventCode {
        kind: TYPE_HARDWARE,
        config,
    }
}

const fn sw(config: u64) -> EventCode {
    EventCode {
        kind: TYPE_SOFTWARE,
        config,
    }
}

/// Generic event spelling to `perf_event_attr` type/config.
pub(crate) fn lookup(name: &str) -> Option<EventCode> {
    // cache ids: L1D 0, L1I 1, LL 2, DTLB 3, ITLB 4; op READ 0; result ACCESS 0 / MISS 1
    let code = match name {
        "cpu-cycles" | "cycles" => hw(0),
        "instructions" => hw(1),
        "cache-references" => hw(2),
        "cache-misses" => hw(3),
        "branches" | "branch-instructions" => hw(4),
        "branch-misses" => hw(5),
        "bus-cycles" => hw(6),
        "cpu-clock" => sw(0),
        "task-clock" => sw(1),
        "page-faults" | "faults" => sw(2),
        "context-switches" => sw(3),
        "cpu-migrations" => sw(4),
        "minor-faults" => sw(5),
        "major-faults" => sw(6),
        "L1-dcache-loads" => cache(0, 0, 0),
        "L1-dcache-load-misses" => cache(0, 0, 1),
        "L1-icache-loads" => cache(1, 0, 0),
        "L1-icache-load-misses" => cache(1, 0, 1),
        "LLC-loads" => cache(2, 0, 0),
        "LLC-load-misses" => cache(2, 0, 1),
        "dTLB-loads" => cache(3, 0, 0),
        "dTLB-load-misses" => cache(3, 0, 1),
        "iTLB-loads" => cache(4, 0, 0),
        "iTLB-load-misses" => cache(4, 0, 1),
        _ => return None,
    };
    Some(code)
}

/// Opens counters on a process that has not yet called `exec`.
pub trait CounterBackend: Send + Sync {
    fn attach(&self, pid: i32, group: &[String]) -> Result<Box<dyn AttachedCounters>, ProfileError>;
}

pub trait AttachedCounters: Send {
    /// Final counts, read after the child has been reaped.
    fn finish(self: Box<Self>) -> Result<BTreeMap<String, u64>, ProfileError>;
}

/// Counters opened with `perf_event_open(2)`, enabled on exec and inherited
/// by the child's threads. Events the PMU does not expose are skipped with a
/// warning rather than failing the run.
#[derive(Debug, Default, Clone, Copy)]
pub struct PerfEventBackend;

#[repr(C)]
#[derive(Default)]
struct PerfEventAttr {
    kind: u32,
    size: u32,
    config: u64,
    sample_period: u64,
    sample_type: u64,
    read_format: u64,
    flags: u64,
    wakeup_events: u32,
    bp_type: u32,
    config1: u64,
    config2: u64,
    branch_sample_type: u64,
    sample_regs_user: u64,
    sample_stack_user: u32,
    clockid: i32,
    sample_regs_intr: u64,
    aux_watermark: u32,
    sample_max_stack: u16,
    reserved: u16,
}

const FLAG_DISABLED: u64 = 1 << 0;
const FLAG_INHERIT: u64 = 1 << 1;
const FLAG_EXCLUDE_KERNEL: u64 = 1 << 5;
const FLAG_EXCLUDE_HV: u64 = 1 << 6;
const FLAG_ENABLE_ON_EXEC: u64 = 1 << 12;
const PERF_FLAG_FD_CLOEXEC: libc::c_ulong = 1 << 3;
const READ_TOTAL_TIME_ENABLED: u64 = 1 << 0;
const READ_TOTAL_TIME_RUNNING: u64 = 1 << 1;

fn perf_event_open(attr: &PerfEventAttr, pid: i32, group_fd: i32) -> io::Result<i32> {
    // SAFETY: attr points at a live, correctly sized perf_event_attr.
    let fd = unsafe {
        libc::syscall(
            libc::SYS_perf_event_open,
            attr as *const PerfEventAttr,
            pid,
            -1i32,
            group_fd,
            PERF_FLAG_FD_CLOEXEC,
        )
    };
    if fd < 0 {
        Err(io::Error::last_os_error())
    } else {
        Ok(fd as i32)
    }
}

struct OpenCounters {
    fds: Vec<(String, i32)>,
}

impl Drop for OpenCounters {
    fn drop(&mut self) {
        for (_, fd) in &self.fds {
            // SAFETY: fd was returned by perf_event_open and is owned here.
            unsafe {
                libc::close(*fd);
            }
        }
    }
}

impl AttachedCounters for OpenCounters {
    fn finish(self: Box<Self>) -> Result<BTreeMap<String, u64>, ProfileError> {
        let mut out = BTreeMap::new();
        for (name, fd) in &self.fds {
            let mut buf = [0u64; 3];
            // SAFETY: buf is 24 writable bytes, matching the read_format layout.
            let n = unsafe { libc::read(*fd, buf.as_mut_ptr().cast(), std::mem::size_of_val(&buf)) };
            if n != std::mem::size_of_val(&buf) as isize {
                return Err(ProfileError::Counter(format!(
                    "reading {name}: {}",
                    io::Error::last_os_error()
                )));
            }
            let [value, enabled, running] = buf;
            if running < enabled {
                warn!("{name} was multiplexed ({running}/{enabled} ns on the PMU); count is unscaled");
            }
            out.insert(name.clone(), value);
        }
        Ok(out)
    }
}

impl CounterBackend for PerfEventBackend {
    fn attach(&self, pid: i32, group: &[String]) -> Result<Box<dyn AttachedCounters>, ProfileError> {
        // SAFETY: geteuid has no preconditions.
        let privileged = unsafe { libc::geteuid() } == 0;
        let mut counters = OpenCounters { fds: Vec::new() };
        let mut leader = -1;
        for name in group {
            let code = lookup(name).ok_or_else(|| ProfileError::Argument(format!("unknown event `{name}`")))?;
            let mut flags = FLAG_INHERIT | FLAG_EXCLUDE_HV;
            if leader < 0 {
                flags |= FLAG_DISABLED | FLAG_ENABLE_ON_EXEC;
            }
            if !privileged {
                flags |= FLAG_EXCLUDE_KERNEL;
            }
            let attr = PerfEventAttr {
                kind: code.kind,
                size: std::mem::size_of::<PerfEventAttr>() as u32,
                config: code.config,
                read_format: READ_TOTAL_TIME_ENABLED | READ_TOTAL_TIME_RUNNING,
                flags,
                ..Default::default()
            };
            match perf_event_open(&attr, pid, leader) {
                Ok(fd) => {
                    if leader < 0 {
                        leader = fd;
                    }
                    counters.fds.push((name.clone(), fd));
                }
                Err(e) => match e.raw_os_error() {
                    Some(libc::ENOENT) | Some(libc::EOPNOTSUPP) | Some(libc::EINVAL) => {
                        warn!("event {name} is not supported on this host ({e}); skipped");
                    }
                    Some(libc::EACCES) | Some(libc::EPERM) => {
                        return Err(ProfileError::Capability(format!(
                            "perf_event_open({name}) denied: {e}; check kernel.perf_event_paranoid"
                        )));
                    }
                    _ => return Err(ProfileError::Counter(format!("perf_event_open({name}): {e}"))),
                },
            }
        }
        Ok(Box::new(counters))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_has_thirteen_events_in_four_groups() {
        let set = EventSet::default_catalog(DEFAULT_COUNTER_BUDGET).unwrap();
        assert_eq!(set.events.len(), 13);
        assert_eq!(set.group_count(), 4);
        assert!(set.groups.iter().all(|g| g.len() <= DEFAULT_COUNTER_BUDGET));
        assert_eq!(
            set.groups[0],
            ["instructions", "cpu-cycles", "branches", "branch-misses"]
        );
    }

    #[test]
    fn every_default_event_has_an_encoding() {
        for (_, events) in DEFAULT_EVENTS {
            for e in *events {
                assert!(lookup(e).is_some(), "{e}");
            }
        }
        assert_eq!(lookup("dTLB-load-misses").unwrap().config, 3 | (1 << 16));
    }

    #[test]
    fn grouping_respects_budget_and_order() {
        let set = EventSet::new(["instructions", "cpu-cycles", "page-faults"], 2).unwrap();
        assert_eq!(
            set.groups,
            vec![vec!["instructions", "cpu-cycles"], vec!["page-faults"]]
        );
        let set = EventSet::default_catalog(1).unwrap();
        assert_eq!(set.group_count(), 13);
    }

    #[test]
    fn bad_event_sets_are_rejected() {
        assert!(EventSet::new(["bogus-event"], 4).is_err());
        assert!(EventSet::new(Vec::<String>::new(), 4).is_err());
        assert!(EventSet::new(["instructions"], 0).is_err());
    }

    #[test]
    fn duplicates_collapse() {
        let set = EventSet::new(["page-faults", "page-faults"], 4).unwrap();
        assert_eq!(set.events, ["page-faults"]);
    }

    #[test]
    fn attr_layout_matches_kernel_abi() {
        assert_eq!(std::mem::size_of::<PerfEventAttr>(), 112);
    }
}
