//! Runs one child process under measurement.
//!
//! When counters are requested the child is held between `fork` and `exec`:
//! it reports its pid through one pipe and waits on a second one while the
//! parent opens enable-on-exec counters against it. Counting therefore starts
//! exactly at `exec` and covers every thread the benchmark creates.

use std::collections::BTreeMap;
use std::io;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::process::{Command, Stdio};
use std::thread;
use std::time::Instant;

use log::warn;

use super::energy::EnergyMeter;
use super::events::{AttachedCounters, CounterBackend};
use super::ProfileError;

#[derive(Debug, Clone)]
pub struct ChildOutcome {
    pub wall_time: f64,
    pub energy: Option<f64>,
    pub counts: BTreeMap<String, u64>,
    /// Exit code, or 128 + signal number for signalled children.
    pub exit_status: i32,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

struct Pipe {
    read: i32,
    write: i32,
}

impl Pipe {
    fn new() -> io::Result<Self> {
        let mut fds = [0i32; 2];
        // SAFETY: fds has room for the two descriptors pipe2 writes.
        if unsafe { libc::pipe2(fds.as_mut_ptr(), libc::O_CLOEXEC) } != 0 {
            return Err(io::Error::last_os_error());
        }
        Ok(Pipe {
            read: fds[0],
            write: fds[1],
        })
    }
}

fn close(fd: &mut i32) {
    if *fd >= 0 {
        // SAFETY: fd is an open descriptor owned by the caller.
        unsafe {
            libc::close(*fd);
        }
        *fd = -1;
    }
}

fn read_exact_fd(fd: i32, buf: &mut [u8]) -> bool {
    let mut got = 0;
    while got < buf.len() {
        // SAFETY: the pointer/length pair addresses the unfilled tail of buf.
        let n = unsafe { libc::read(fd, buf[got..].as_mut_ptr().cast(), buf.len() - got) };
        if n > 0 {
            got += n as usize;
        } else if n < 0 && io::Error::last_os_error().kind() == io::ErrorKind::Interrupted {
            continue;
        } else {
            return false;
        }
    }
    true
}

fn write_fd(fd: i32, buf: &[u8]) -> bool {
    // SAFETY: buf is a valid readable slice.
    unsafe { libc::write(fd, buf.as_ptr().cast(), buf.len()) == buf.len() as isize }
}

const GO: u8 = 1;
const ABORT: u8 = 0;

fn exit_code(status: std::process::ExitStatus) -> i32 {
    status.code().unwrap_or_else(|| 128 + status.signal().unwrap_or(0))
}

/// Executes `cmd` to completion, measuring wall time, package energy, and
/// (when `events` is non-empty) the listed counters.
pub fn run_child(
    mut cmd: Command,
    events: &[String],
    counters: &dyn CounterBackend,
    energy: Option<&dyn EnergyMeter>,
) -> Result<ChildOutcome, ProfileError> {
    cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());

    let energy_before = energy.and_then(|m| match m.read_joules() {
        Ok(j) => Some(j),
        Err(e) => {
            warn!("energy counter unreadable: {e}");
            None
        }
    });

    let start = Instant::now();
    let (child, attached) = if events.is_empty() {
        (cmd.spawn().map_err(ProfileError::Spawn)?, None)
    } else {
        spawn_with_counters(cmd, events, counters)?
    };

    let output = child.wait_with_output().map_err(ProfileError::Spawn)?;
    let wall_time = start.elapsed().as_secs_f64();

    let energy = match (energy, energy_before) {
        (Some(m), Some(before)) => match m.read_joules() {
            Ok(after) => Some(m.between(before, after)),
            Err(e) => {
                warn!("energy counter unreadable: {e}");
                None
            }
        },
        _ => None,
    };
    let counts = match attached {
        Some(a) => a.finish()?,
        None => BTreeMap::new(),
    };
    Ok(ChildOutcome {
        wall_time,
        energy,
        counts,
        exit_status: exit_code(output.status),
        stdout: output.stdout,
        stderr: output.stderr,
    })
}

fn spawn_with_counters(
    mut cmd: Command,
    events: &[String],
    counters: &dyn CounterBackend,
) -> Result<(std::process::Child, Option<Box<dyn AttachedCounters>>), ProfileError> {
    let mut pid_pipe = Pipe::new().map_err(ProfileError::Spawn)?;
    let mut go_pipe = Pipe::new().map_err(ProfileError::Spawn)?;
    let (pid_w, go_r) = (pid_pipe.write, go_pipe.read);

    // SAFETY: the hook only calls async-signal-safe functions (getpid, write,
    // read) on descriptors that stay open until exec.
    unsafe {
        cmd.pre_exec(move || {
            let pid = libc::getpid().to_ne_bytes();
            if !write_fd(pid_w, &pid) {
                return Err(io::Error::last_os_error());
            }
            let mut go = [ABORT];
            if !read_exact_fd(go_r, &mut go) || go[0] != GO {
                return Err(io::Error::from_raw_os_error(libc::ECANCELED));
            }
            Ok(())
        });
    }

    let pid_r = pid_pipe.read;
    let go_w = go_pipe.write;
    let result = thread::scope(|scope| {
        let attacher = scope.spawn(move || {
            let mut pid = [0u8; 4];
            if !read_exact_fd(pid_r, &mut pid) {
                return None;
            }
            let pid = i32::from_ne_bytes(pid);
            let res = counters.attach(pid, events);
            write_fd(go_w, &[if res.is_ok() { GO } else { ABORT }]);
            Some(res)
        });
        let spawned = cmd.spawn();
        // lets the attacher observe EOF if the fork never happened
        close(&mut pid_pipe.write);
        let attached = attacher.join().expect("attacher thread panicked");
        (spawned, attached)
    });
    close(&mut pid_pipe.read);
    close(&mut go_pipe.read);
    close(&mut go_pipe.write);

    match result {
        (Ok(child), Some(Ok(a))) => Ok((child, Some(a))),
        (_, Some(Err(e))) => Err(e),
        (Err(e), _) => Err(ProfileError::Spawn(e)),
        (Ok(_), None) => Err(ProfileError::Counter("child never reported its pid".into())),
    }
}
