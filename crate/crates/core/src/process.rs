//! Running external validators and graders with a wall-clock limit.

use std::io;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use wait_timeout::ChildExt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandStatus {
    Exited(i32),
    /// Terminated by a signal (no exit code).
    Killed,
    TimedOut,
}

/// Runs `program args...` with stdio discarded, killing it after `timeout`.
pub fn run_with_timeout(
    program: &str,
    args: &[String],
    cwd: Option<&Path>,
    timeout: Duration,
) -> io::Result<CommandStatus> {
    let mut cmd = Command::new(program);
    cmd.args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null());
    if let Some(dir) = cwd {
        cmd.current_dir(dir);
    }
    let mut child = cmd.spawn()?;
    match child.wait_timeout(timeout)? {
        Some(status) => Ok(status
            .code()
            .map(CommandStatus::Exited)
            .unwrap_or(CommandStatus::Killed)),
        None => {
            let _ = child.kill();
            let _ = child.wait();
            Ok(CommandStatus::TimedOut)
        }
    }
}
