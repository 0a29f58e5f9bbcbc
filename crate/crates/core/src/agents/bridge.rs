//! Client side of the external-policy protocol.
//!
//! Request (one JSON object): `{"state_text", "state_json", "task"}`.
//! Reply: text containing a JSON array of `{"worker_id", "to_line", "to_stage"}`,
//! optionally wrapped in markdown fences or prose. Over stdio each request and
//! reply is one line; a reply line that is itself a JSON string is unescaped
//! first so multi-line model output can travel on one line.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Policy, PolicyDecision};
use crate::error::{Error, Result};
use crate::prefgen::{parse_action, serialize_state};
use crate::sim::{validate_action, Action, Event, PolicyErrorKind, SimConfig, SystemState};

pub const DEFAULT_TASK: &str = "You manage staffing on a three-stage sortation system. \
Each LINE row lists workers per stage, buffer fill levels (b_in, b_12, b_23, b_out) and last-tick output. \
Reply with a JSON array of worker reassignments, each {\"worker_id\": string, \"to_line\": int, \"to_stage\": int}, \
using worker ids from state_json. Reply [] to keep the current staffing. Moved workers are idle for one tick.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "snake_case")]
pub enum BridgeEndpoint {
    /// A long-running process speaking line-delimited JSON on stdin/stdout.
    Process { command: Vec<String> },
    /// One POST per decision; the response body is the reply text.
    Http { url: String },
}

impl BridgeEndpoint {
    /// `http://...` is an HTTP endpoint; anything else is a whitespace-split command line.
    pub fn parse(spec: &str) -> Self {
        let spec = spec.trim();
        if spec.starts_with("http://") || spec.starts_with("https://") {
            BridgeEndpoint::Http { url: spec.to_owned() }
        } else {
            BridgeEndpoint::Process {
                command: spec.split_whitespace().map(str::to_owned).collect(),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeErrorMode {
    /// Fall back to the empty action and log a `policy_error` event.
    #[default]
    Noop,
    Abort,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub state_text: String,
    pub state_json: serde_json::Value,
    pub task: String,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<std::io::Result<String>>,
}

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct BridgePolicy {
    endpoint: BridgeEndpoint,
    timeout: Duration,
    mode: BridgeErrorMode,
    task: String,
    process: Mutex<Option<Running>>,
}

type CallResult = std::result::Result<String, (PolicyErrorKind, String)>;

impl BridgePolicy {
    pub fn new(endpoint: BridgeEndpoint) -> Self {
        Self {
            endpoint,
            timeout: Duration::from_secs(30),
            mode: BridgeErrorMode::Noop,
            task: DEFAULT_TASK.to_owned(),
            process: Mutex::new(None),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_error_mode(mut self, mode: BridgeErrorMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_task(mut self, task: impl Into<String>) -> Self {
        self.task = task.into();
        self
    }

    pub fn request(&self, state: &SystemState, config: &SimConfig) -> BridgeRequest {
        BridgeRequest {
            state_text: serialize_state(state, config),
            state_json: serde_json::to_value(state).expect("state serializes"),
            task: self.task.clone(),
        }
    }

    fn spawn(command: &[String]) -> std::io::Result<Running> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty bridge command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, replies) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Running { child, stdin, replies })
    }

    fn call_process(&self, command: &[String], body: &str) -> CallResult {
        let mut guard = self.process.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(Self::spawn(command).map_err(|e| (PolicyErrorKind::Transport, e.to_string()))?);
        }
        let running = guard.as_mut().expect("spawned above");
        let sent = running
            .stdin
            .write_all(body.as_bytes())
            .and_then(|_| running.stdin.write_all(b"\n"))
            .and_then(|_| running.stdin.flush());
        if let Err(e) = sent {
            *guard = None;
            return Err((PolicyErrorKind::Transport, e.to_string()));
        }
        match running.replies.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => {
                *guard = None;
                Err((PolicyErrorKind::Transport, e.to_string()))
            }
            Err(RecvTimeoutError::Timeout) => {
                // A late reply would desynchronise the stream; restart next call.
                *guard = None;
                Err((PolicyErrorKind::Timeout, format!("no reply within {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => {
                *guard = None;
                Err((PolicyErrorKind::Transport, "bridge process closed its output".into()))
            }
        }
    }

    fn call_http(&self, url: &str, body: &str) -> CallResult {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut resp = agent
            .post(url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| classify_http_error(&e))?;
        resp.body_mut().read_to_string().map_err(|e| classify_http_error(&e))
    }

    /// Sends one request and returns the raw reply text.
    pub fn call(&self, request: &BridgeRequest) -> CallResult {
        let body = serde_json::to_string(request).expect("request serializes");
        let raw = match &self.endpoint {
            BridgeEndpoint::Process { command } => self.call_process(command, &body)?,
            BridgeEndpoint::Http { url } => self.call_http(url, &body)?,
        };
        Ok(match serde_json::from_str::<serde_json::Value>(&raw) {
            Ok(serde_json::Value::String(inner)) => inner,
            _ => raw,
        })
    }

    fn fail(&self, kind: PolicyErrorKind, message: String) -> Result<PolicyDecision> {
        match self.mode {
            BridgeErrorMode::Abort => Err(Error::Bridge(format!("{kind:?}: {message}"))),
            BridgeErrorMode::Noop => Ok(PolicyDecision {
                action: Action::noop(),
                events: vec![Event::PolicyError { kind, message }],
                ..Default::default()
            }),
        }
    }
}

fn classify_http_error(e: &ureq::Error) -> (PolicyErrorKind, String) {
    let kind = match e {
        ureq::Error::Timeout(_) => PolicyErrorKind::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => PolicyErrorKind::Timeout,
        _ => PolicyErrorKind::Transport,
    };
    (kind, e.to_string())
}

impl Policy for BridgePolicy {
    fn id(&self) -> String {
        match &self.endpoint {
            BridgeEndpoint::Process { command } => format!("bridge({})", command.join(" ")),
            BridgeEndpoint::Http { url } => format!("bridge({url})"),
        }
    }

    fn decide(&self, state: &SystemState, config: &SimConfig) -> Result<PolicyDecision> {
        let reply = match self.call(&self.request(state, config)) {
            Ok(r) => r,
            Err((kind, msg)) => return self.fail(kind, msg),
        };
        let action = match parse_action(&reply) {
            Ok(a) => a,
            Err(e) => return self.fail(PolicyErrorKind::MalformedReply, e.to_string()),
        };
        let violations = validate_action(state, &action, config);
        if !violations.is_empty() {
            return self.fail(
                PolicyErrorKind::InvalidAction,
                Error::InvalidAction(violations).to_string(),
            );
        }
        let bare = serde_json::from_str::<serde_json::Value>(reply.trim()).is_ok();
        Ok(PolicyDecision {
            action,
            rationale_text: (!bare).then_some(reply),
            ..Default::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scenario, ScenarioParams, Station};
    use std::io::Read;
    use std::net::TcpListener;

    fn scenario() -> (SimConfig, SystemState) {
        generate_scenario(&SimConfig::default(), &ScenarioParams::default(), 2)
    }

    fn sh(script: &str) -> BridgeEndpoint {
        BridgeEndpoint::Process {
            command: vec!["sh".into(), "-c".into(), script.into()],
        }
    }

    #[test]
    fn echo_empty_array() {
        let (c, s) = scenario();
        let p = BridgePolicy::new(sh("while read l; do echo '[]'; done"));
        let d = p.decide(&s, &c).unwrap();
        assert!(d.action.is_empty());
        assert!(d.events.is_empty());
        // The process is reused across calls.
        assert!(p.decide(&s, &c).unwrap().events.is_empty());
    }

    #[test]
    fn fenced_reply_as_json_string_line() {
        let (c, s) = scenario();
        let w = s.assignment.keys().next().unwrap().clone();
        let at = s.assignment[&w].unwrap();
        let to = if at.line == 0 {
            Station::new(1, at.stage)
        } else {
            Station::new(0, at.stage)
        };
        // Make room at the destination if needed by sending to a stage we know has space.
        let staffing = s.staffing();
        let to = if staffing[to.line][to.stage] < c.slot_capacity[to.stage] {
            to
        } else {
            (0..c.n_lines)
                .flat_map(|l| (0..3).map(move |st| Station::new(l, st)))
                .find(|st| *st != at && staffing[st.line][st.stage] < c.slot_capacity[st.stage])
                .unwrap()
        };
        let fenced = format!(
            "Sure.\n```json\n[{{\"worker_id\":\"{}\",\"to_line\":{},\"to_stage\":{}}}]\n```",
            w,
            to.line + 1,
            to.stage + 1
        );
        let line = serde_json::to_string(&fenced).unwrap();
        let script = format!("while read l; do printf '%s\\n' '{line}'; done");
        let d = BridgePolicy::new(sh(&script)).decide(&s, &c).unwrap();
        assert_eq!(d.action.moves.len(), 1);
        assert_eq!(d.action.moves[0].to, to);
        assert!(d.rationale_text.unwrap().starts_with("Sure."));
    }

    #[test]
    fn timeout_falls_back_to_noop() {
        let (c, s) = scenario();
        let p = BridgePolicy::new(sh("sleep 5")).with_timeout(Duration::from_millis(200));
        let d = p.decide(&s, &c).unwrap();
        assert!(d.action.is_empty());
        assert!(matches!(
            d.events[0],
            Event::PolicyError {
                kind: PolicyErrorKind::Timeout,
                ..
            }
        ));
    }

    #[test]
    fn abort_mode_surfaces_errors() {
        let (c, s) = scenario();
        let p = BridgePolicy::new(sh("while read l; do echo 'no idea'; done")).with_error_mode(BridgeErrorMode::Abort);
        assert!(matches!(p.decide(&s, &c), Err(Error::Bridge(_))));
    }

    #[test]
    fn invalid_action_is_logged() {
        let (c, s) = scenario();
        let p = BridgePolicy::new(sh(
            r#"while read l; do echo '[{"worker_id":"nobody","to_line":1,"to_stage":1}]'; done"#,
        ));
        let d = p.decide(&s, &c).unwrap();
        assert!(d.action.is_empty());
        assert!(matches!(
            d.events[0],
            Event::PolicyError {
                kind: PolicyErrorKind::InvalidAction,
                ..
            }
        ));
    }

    #[test]
    fn http_endpoint() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = thread::spawn(move || {
            let (mut sock, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            // Read headers and body until Content-Length is satisfied.
            loop {
                let n = sock.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                let text = String::from_utf8_lossy(&buf);
                if let Some(h) = text.find("\r\n\r\n") {
                    let len: usize = text[..h]
                        .lines()
                        .find_map(|l| {
                            l.to_ascii_lowercase()
                                .strip_prefix("content-length:")
                                .map(|v| v.trim().parse().unwrap())
                        })
                        .unwrap_or(0);
                    if buf.len() >= h + 4 + len {
                        let body = &text[h + 4..];
                        assert!(body.contains("\"state_text\""));
                        break;
                    }
                }
            }
            let reply = "```\n[]\n```";
            write!(
                sock,
                "HTTP/1.1 200 OK\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                reply.len(),
                reply
            )
            .unwrap();
        });
        let (c, s) = scenario();
        let p = BridgePolicy::new(BridgeEndpoint::parse(&format!("http://{addr}/act")));
        let d = p.decide(&s, &c).unwrap();
        server.join().unwrap();
        assert!(d.action.is_empty());
        assert!(d.events.is_empty(), "{:?}", d.events);
    }
}
