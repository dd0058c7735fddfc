//! Newline-delimited JSON front end for external trainers.
//!
//! Requests:
//!
//! ```text
//! {"cmd":"spec"}
//! {"cmd":"reset","seed":7,"phase":2,"max_dev_deg":180,"filter":false}
//! {"cmd":"step","action":[a,b,c]}
//! {"cmd":"close"}
//! ```
//!
//! Every request yields one JSON line carrying `"seq"`, a counter that starts
//! at 1 and increases by one per response.

use std::io::{BufRead, Write};
use std::net::{TcpListener, ToSocketAddrs};

use serde_json::{json, Map, Value};

use crate::env::{CurriculumPhase, CurriculumSpec, Env, EpisodeConfig};
use crate::error::{Error, Result};
use crate::quatmath::Vec3;

/// One protocol session bound to a single environment.
pub struct Session {
    template: EpisodeConfig,
    env: Env,
    seq: u64,
    closed: bool,
}

fn error_value(kind: &str, message: impl Into<String>) -> Value {
    json!({"error": kind, "message": message.into()})
}

impl Session {
    /// `template` supplies dynamics, reward and filter parameters; scenarios
    /// are drawn per reset.
    pub fn new(template: EpisodeConfig) -> Result<Self> {
        template.validate()?;
        Ok(Self { template, env: Env::new(), seq: 0, closed: false })
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn spec_value(&self) -> Value {
        json!({
            "obs_dim": crate::env::OBS_DIM,
            "act_dim": crate::env::ACT_DIM,
            "act_low": -1,
            "act_high": 1,
            "dt": self.template.dt,
            "horizon": self.template.horizon(),
        })
    }

    /// Handles one request line and returns the serialized response line
    /// without its trailing newline.
    pub fn handle_line(&mut self, line: &[u8]) -> String {
        let mut body = match std::str::from_utf8(line)
            .ok()
            .and_then(|s| serde_json::from_str::<Value>(s).ok())
        {
            Some(Value::Object(req)) => self.dispatch(&req),
            Some(_) => error_value("parse", "request must be a JSON object"),
            None => error_value("parse", "malformed JSON"),
        };
        self.seq += 1;
        if let Value::Object(m) = &mut body {
            m.insert("seq".into(), json!(self.seq));
        }
        serde_json::to_string(&body).expect("response values are finite")
    }

    fn dispatch(&mut self, req: &Map<String, Value>) -> Value {
        match req.get("cmd").and_then(Value::as_str) {
            Some("spec") => self.spec_value(),
            Some("reset") => self.reset(req).unwrap_or_else(|e| error_value("invalid_request", e.to_string())),
            Some("step") => self.step(req),
            Some("close") => {
                self.closed = true;
                json!({"closed": true})
            }
            Some(other) => error_value("invalid_request", format!("unknown cmd {other:?}")),
            None => error_value("invalid_request", "missing cmd"),
        }
    }

    fn reset(&mut self, req: &Map<String, Value>) -> Result<Value> {
        let invalid = |m: &str| Error::Protocol(m.to_string());
        let seed = match req.get("seed") {
            None => 0,
            Some(v) => v.as_u64().ok_or_else(|| invalid("seed must be a non-negative integer"))?,
        };
        let phase = match req.get("phase") {
            None => CurriculumPhase::One,
            Some(v) => v
                .as_u64()
                .and_then(|p| u8::try_from(p).ok())
                .and_then(|p| CurriculumPhase::try_from(p).ok())
                .ok_or_else(|| invalid("phase must be 1 or 2"))?,
        };
        let max_dev = match req.get("max_dev_deg") {
            None => std::f64::consts::PI,
            Some(v) => v
                .as_f64()
                .ok_or_else(|| invalid("max_dev_deg must be a number"))?
                .to_radians(),
        };
        let filter = match req.get("filter") {
            None => false,
            Some(v) => v.as_bool().ok_or_else(|| invalid("filter must be a boolean"))?,
        };
        let spec = match phase {
            CurriculumPhase::One => CurriculumSpec::phase_one(max_dev),
            CurriculumPhase::Two => CurriculumSpec::phase_two(max_dev),
        };
        let template = EpisodeConfig { filter_enabled: filter, ..self.template.clone() };
        let config = spec.sample(&template, seed)?;
        let obs = self.env.reset(config, seed)?;
        Ok(json!({"obs": obs.0.to_vec()}))
    }

    fn step(&mut self, req: &Map<String, Value>) -> Value {
        if !self.env.is_reset() {
            return error_value("not_reset", "step before reset");
        }
        let action = match req.get("action").and_then(Value::as_array) {
            Some(a) if a.len() == 3 && a.iter().all(Value::is_number) => {
                Vec3::from_fn(|i, _| a[i].as_f64().expect("checked number"))
            }
            _ => return error_value("invalid_request", "action must be an array of 3 numbers"),
        };
        match self.env.step(&action) {
            Ok(r) => {
                let margin = if r.info.theta_margin.is_finite() {
                    r.info.theta_margin
                } else {
                    r.observation.theta_margin()
                };
                json!({
                    "obs": r.observation.0.to_vec(),
                    "reward": r.reward,
                    "terminated": r.terminated,
                    "truncated": r.truncated,
                    "info": {"theta_margin": margin, "phi": r.info.phi, "violation": r.info.violation},
                })
            }
            Err(Error::Protocol(m)) => error_value("episode_over", m),
            Err(e) => error_value("invalid_request", e.to_string()),
        }
    }
}

/// Serves requests from `reader` until `close` or end of input.
pub fn serve_stream<R: BufRead, W: Write>(session: &mut Session, mut reader: R, mut writer: W) -> Result<()> {
    let mut buf = Vec::new();
    while !session.is_closed() {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        let line = buf.strip_suffix(b"\n").unwrap_or(&buf);
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let resp = session.handle_line(line);
        writer.write_all(resp.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

pub fn serve_stdio(session: &mut Session) -> Result<()> {
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve_stream(session, stdin.lock(), stdout.lock())
}

/// Accepts one TCP connection and serves it. `on_bound` receives the local
/// address once listening, which allows binding to port 0.
pub fn serve_tcp<A: ToSocketAddrs>(
    session: &mut Session,
    addr: A,
    on_bound: impl FnOnce(std::net::SocketAddr),
) -> Result<()> {
    let listener = TcpListener::bind(addr)?;
    on_bound(listener.local_addr()?);
    let (stream, _) = listener.accept()?;
    let reader = std::io::BufReader::new(stream.try_clone()?);
    serve_stream(session, reader, stream)
}
