//! Parser for `perf script` text output.
//!
//! Each sample is a header line (`comm pid/tid time: period event:`) followed
//! by indented frame lines (`addr symbol+0xoff (dso)`, innermost first) and a
//! blank line. The command name becomes the outermost frame.

use super::{FlameError, StackSample};

fn is_pid(token: &str) -> bool {
    let mut parts = token.split('/');
    let ok = |p: Option<&str>| p.is_some_and(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()));
    match token.contains('/') {
        true => ok(parts.next()) && ok(parts.next()) && parts.next().is_none(),
        false => ok(Some(token)),
    }
}

fn header_comm(line: &str) -> Option<String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let at = tokens.iter().position(|t| is_pid(t))?;
    (at > 0).then(|| tokens[..at].join(" "))
}

fn frame_symbol(line: &str) -> Option<String> {
    let line = line.trim();
    let (_addr, rest) = line.split_once(char::is_whitespace)?;
    let mut sym = rest.trim();
    if sym.ends_with(')') {
        if let Some(i) = sym.rfind(" (") {
            sym = sym[..i].trim_end();
        } else if sym.starts_with('(') {
            sym = "";
        }
    }
    if let Some(i) = sym.rfind("+0x") {
        if sym[i + 3..].bytes().all(|b| b.is_ascii_hexdigit()) {
            sym = &sym[..i];
        }
    }
    Some(if sym.is_empty() {
        "[unknown]".to_string()
    } else {
        sym.to_string()
    })
}

/// Parses every sample in `text`, weight 1 each.
pub fn parse_perf_script(text: &str) -> Result<Vec<StackSample>, FlameError> {
    let mut samples = Vec::new();
    let mut current: Option<(String, Vec<String>)> = None;
    let flush = |cur: &mut Option<(String, Vec<String>)>, out: &mut Vec<StackSample>| {
        if let Some((comm, mut frames)) = cur.take() {
            frames.push(comm);
            frames.reverse();
            out.push(StackSample::new(frames, 1));
        }
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            flush(&mut current, &mut samples);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if line.starts_with(char::is_whitespace) {
            let Some((_, frames)) = current.as_mut() else {
                return Err(FlameError::Parse {
                    line: i + 1,
                    message: "frame line outside a sample".into(),
                });
            };
            let sym = frame_symbol(line).ok_or_else(|| FlameError::Parse {
                line: i + 1,
                message: format!("malformed frame `{}`", line.trim()),
            })?;
            frames.push(sym);
        } else {
            flush(&mut current, &mut samples);
            let comm = header_comm(line).ok_or_else(|| FlameError::Parse {
                line: i + 1,
                message: format!("malformed sample header `{line}`"),
            })?;
            current = Some((comm, Vec::new()));
        }
    }
    flush(&mut current, &mut samples);
    Ok(samples)
}
