//! Line protocol `tsh/1`: one JSON request per line, exactly one JSON
//! response line per request, in order.

use serde::Serialize;
use serde_json::{json, Value};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, ToSocketAddrs};
use std::path::PathBuf;

use crate::comms::encode_payload;
use crate::config::ScenarioConfig;
use crate::env::{Env, EnvError};
use crate::sensor::{Frame, Modality};

pub const PROTOCOL_VERSION: &str = "tsh/1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WireFrame {
    pub camera_id: String,
    pub tick: u64,
    pub camera_pose: crate::geom::Pose,
    pub width: u32,
    pub height: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rgb: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semantic: Option<String>,
    /// Little-endian f32 bytes, base64.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
}

impl From<&Frame> for WireFrame {
    fn from(f: &Frame) -> Self {
        WireFrame {
            camera_id: f.camera_id.clone(),
            tick: f.tick,
            camera_pose: f.camera_pose,
            width: f.width,
            height: f.height,
            rgb: f.rgb.as_deref().map(encode_payload),
            semantic: f.semantic.as_deref().map(encode_payload),
            depth: f.depth.as_ref().map(|d| {
                let bytes: Vec<u8> = d.iter().flat_map(|x| x.to_le_bytes()).collect();
                encode_payload(&bytes)
            }),
        }
    }
}

/// One protocol session owning one environment.
#[derive(Debug)]
pub struct Session {
    env: Env,
    base_dir: PathBuf,
    closed: bool,
}

fn ok(result: Value) -> String {
    json!({"ok": true, "result": result}).to_string()
}

pub fn error_line(code: &str, message: &str) -> String {
    json!({"ok": false, "error": {"code": code, "message": message}}).to_string()
}

fn env_error(e: &EnvError) -> String {
    error_line(e.code(), &e.to_string())
}

impl Session {
    /// `base_dir` resolves relative paths in `reset` requests.
    pub fn new(base_dir: PathBuf) -> Session {
        Session {
            env: Env::new(),
            base_dir,
            closed: false,
        }
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Handle one request line and return the response line (no newline).
    pub fn handle_line(&mut self, line: &str) -> String {
        let req: Value = match serde_json::from_str(line) {
            Ok(v @ Value::Object(_)) => v,
            Ok(_) => return error_line("ProtocolError", "request must be a JSON object"),
            Err(e) => return error_line("ProtocolError", &format!("malformed request: {e}")),
        };
        let Some(op) = req.get("op").and_then(Value::as_str) else {
            return error_line("ProtocolError", "missing string field `op`");
        };
        match op {
            "hello" => ok(json!({"version": PROTOCOL_VERSION})),
            "reset" => {
                let result = if let Some(cfg) = req.get("config") {
                    match serde_json::from_value::<ScenarioConfig>(cfg.clone()) {
                        Ok(cfg) => self.env.reset(cfg, &self.base_dir.clone()),
                        Err(e) => return error_line("ConfigInvalid", &format!("config syntax: {e}")),
                    }
                } else if let Some(p) = req.get("path").and_then(Value::as_str) {
                    self.env.reset_path(&self.base_dir.join(p))
                } else {
                    return error_line("ProtocolError", "reset needs `config` or `path`");
                };
                match result {
                    Ok(t) => ok(serde_json::to_value(t).expect("transition serializes")),
                    Err(e) => env_error(&e),
                }
            }
            "step" => {
                let actions = req.get("actions").cloned().unwrap_or(Value::Null);
                match self.env.step_json(&actions) {
                    Ok(t) => ok(serde_json::to_value(t).expect("transition serializes")),
                    Err(e) => env_error(&e),
                }
            }
            "render" => {
                let Some(camera) = req.get("camera").and_then(Value::as_str) else {
                    return error_line("ProtocolError", "render needs `camera`");
                };
                let modalities = match req.get("modalities") {
                    None | Some(Value::Null) => None,
                    Some(Value::Array(items)) => {
                        let mut out = Vec::new();
                        for m in items {
                            match m.as_str().and_then(Modality::parse) {
                                Some(m) => out.push(m),
                                None => return error_line("ProtocolError", &format!("unknown modality {m}")),
                            }
                        }
                        Some(out)
                    }
                    Some(_) => return error_line("ProtocolError", "`modalities` must be an array"),
                };
                match self.env.render(camera, modalities.as_deref()) {
                    Ok(f) => ok(serde_json::to_value(WireFrame::from(&f)).expect("frame serializes")),
                    Err(e) => env_error(&e),
                }
            }
            "snapshot" => match self.env.snapshot() {
                Ok(s) => ok(serde_json::to_value(s).expect("snapshot serializes")),
                Err(e) => env_error(&e),
            },
            "close" => {
                self.closed = true;
                ok(Value::Null)
            }
            other => error_line("ProtocolError", &format!("unknown op `{other}`")),
        }
    }
}

/// Serve one session over a line stream until `close` or end of input.
pub fn serve_stream<R: BufRead, W: Write>(reader: R, mut writer: W, base_dir: PathBuf) -> std::io::Result<()> {
    let mut session = Session::new(base_dir);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = session.handle_line(&line);
        writer.write_all(resp.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if session.is_closed() {
            break;
        }
    }
    Ok(())
}

pub fn serve_stdio(base_dir: PathBuf) -> std::io::Result<()> {
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve_stream(stdin.lock(), stdout.lock(), base_dir)
}

/// Accept connections one after another; each connection is one session.
/// `max_sessions` bounds the loop (tests); `None` serves forever.
pub fn serve_listener(listener: TcpListener, base_dir: PathBuf, max_sessions: Option<usize>) -> std::io::Result<()> {
    let mut served = 0usize;
    for conn in listener.incoming() {
        let conn = conn?;
        let peer = conn.peer_addr().ok();
        log::info!("session from {peer:?}");
        let reader = BufReader::new(conn.try_clone()?);
        if let Err(e) = serve_stream(reader, conn, base_dir.clone()) {
            log::warn!("session {peer:?} ended: {e}");
        }
        served += 1;
        if max_sessions.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}

pub fn serve_tcp(addr: impl ToSocketAddrs, base_dir: PathBuf) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    eprintln!("listening on {}", listener.local_addr()?);
    serve_listener(listener, base_dir, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn status(line: &str) -> (bool, Value) {
        let v: Value = serde_json::from_str(line).unwrap();
        (v["ok"].as_bool().unwrap(), v)
    }

    #[test]
    fn hello_and_malformed() {
        let mut s = Session::new(PathBuf::from("."));
        let (ok, v) = status(&s.handle_line(r#"{"op":"hello"}"#));
        assert!(ok);
        assert_eq!(v["result"]["version"], "tsh/1");
        let (ok, v) = status(&s.handle_line("{"));
        assert!(!ok);
        assert_eq!(v["error"]["code"], "ProtocolError");
        let (ok, _) = status(&s.handle_line(r#"{"op":"hello"}"#));
        assert!(ok);
        let (_, v) = status(&s.handle_line(r#"{"op":"step"}"#));
        assert_eq!(v["error"]["code"], "NotReset");
    }

    #[test]
    fn stream_one_response_per_request() {
        let input = "{\"op\":\"hello\"}\n{\n\n{\"op\":\"nope\"}\n{\"op\":\"close\"}\n{\"op\":\"hello\"}\n";
        let mut out = Vec::new();
        serve_stream(input.as_bytes(), &mut out, PathBuf::from(".")).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 4);
    }
}
