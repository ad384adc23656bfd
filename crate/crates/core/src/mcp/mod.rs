// SPDX-License-Identifier: Apache-2.0
//! MCP tool server: JSON-RPC 2.0, one message per line on stdin/stdout.
//!
//! Requests always get exactly one response line and notifications none.
//! Tool failures come back as results with `isError: true`, so a broken
//! tool never takes the server down.

pub mod schema;
mod tools;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use serde_json::{json, Value};

use crate::config::Settings;
use crate::docstore::DocStore;

pub use tools::{registry, ToolDescriptor};

pub const SERVER_NAME: &str = "eda-loop";
pub const PROTOCOL_VERSION: &str = "2025-06-18";
const SUPPORTED_VERSIONS: [&str; 3] = ["2024-11-05", "2025-03-26", "2025-06-18"];

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClientInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, Default)]
pub struct Session {
    pub initialized: bool,
    pub client_info: Option<ClientInfo>,
    /// Latest history file per design produced in this session.
    pub histories: BTreeMap<String, PathBuf>,
}

struct RpcError {
    code: i64,
    message: String,
    data: Option<Value>,
}

impl RpcError {
    fn new(code: i64, message: impl Into<String>) -> Self {
        RpcError {
            code,
            message: message.into(),
            data: None,
        }
    }
}

pub struct Server {
    settings: Settings,
    docs: DocStore,
    session: Session,
}

fn response(id: Value, result: Value) -> String {
    json!({"jsonrpc": "2.0", "id": id, "result": result}).to_string()
}

fn error_response(id: Value, e: RpcError) -> String {
    let mut err = json!({"code": e.code, "message": e.message});
    if let Some(d) = e.data {
        err["data"] = d;
    }
    json!({"jsonrpc": "2.0", "id": id, "error": err}).to_string()
}

impl Server {
    pub fn new(settings: Settings, docs: DocStore) -> Self {
        Server {
            settings,
            docs,
            session: Session::default(),
        }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    /// Handles one input line; `None` for notifications and blank lines.
    pub fn handle_line(&mut self, line: &str) -> Option<String> {
        if line.trim().is_empty() {
            return None;
        }
        let msg: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                return Some(error_response(
                    Value::Null,
                    RpcError::new(PARSE_ERROR, format!("parse error: {e}")),
                ))
            }
        };
        let Some(obj) = msg.as_object() else {
            return Some(error_response(
                Value::Null,
                RpcError::new(INVALID_REQUEST, "expected a single JSON-RPC object"),
            ));
        };
        let id = obj.get("id").cloned();
        let valid_id = matches!(id, None | Some(Value::Null | Value::Number(_) | Value::String(_)));
        let method = obj.get("method").and_then(Value::as_str);
        if obj.get("jsonrpc") != Some(&json!("2.0")) || !valid_id || method.is_none() {
            // responses from the client carry no method; there is nothing to answer
            if method.is_none() && (obj.contains_key("result") || obj.contains_key("error")) {
                return None;
            }
            return Some(error_response(
                if valid_id { id.unwrap_or(Value::Null) } else { Value::Null },
                RpcError::new(INVALID_REQUEST, "not a JSON-RPC 2.0 request"),
            ));
        }
        let method = method.expect("checked above");
        let params = obj.get("params").cloned().unwrap_or(Value::Null);
        let Some(id) = id else {
            self.notification(method, &params);
            return None;
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| self.request(method, &params)))
            .unwrap_or_else(|_| Err(RpcError::new(INTERNAL_ERROR, "internal error")));
        Some(match outcome {
            Ok(result) => response(id, result),
            Err(e) => error_response(id, e),
        })
    }

    fn notification(&mut self, method: &str, _params: &Value) {
        match method {
            "notifications/initialized" => log::debug!("client confirmed initialization"),
            other => log::debug!("ignoring notification {other}"),
        }
    }

    fn request(&mut self, method: &str, params: &Value) -> Result<Value, RpcError> {
        match method {
            "initialize" => Ok(self.initialize(params)),
            "ping" => Ok(json!({})),
            "tools/list" => {
                self.require_init()?;
                Ok(json!({"tools": registry().iter().map(ToolDescriptor::to_json).collect::<Vec<_>>()}))
            }
            "tools/call" => {
                self.require_init()?;
                self.call_tool(params)
            }
            other => Err(RpcError::new(METHOD_NOT_FOUND, format!("method not found: {other}"))),
        }
    }

    fn require_init(&self) -> Result<(), RpcError> {
        if self.session.initialized {
            Ok(())
        } else {
            Err(RpcError::new(INVALID_PARAMS, "session not initialized; send initialize first"))
        }
    }

    fn initialize(&mut self, params: &Value) -> Value {
        let requested = params.get("protocolVersion").and_then(Value::as_str);
        let version = requested
            .filter(|v| SUPPORTED_VERSIONS.contains(v))
            .unwrap_or(PROTOCOL_VERSION);
        let info = params.get("clientInfo");
        self.session.client_info = info.map(|i| ClientInfo {
            name: i.get("name").and_then(Value::as_str).unwrap_or_default().to_string(),
            version: i.get("version").and_then(Value::as_str).unwrap_or_default().to_string(),
        });
        self.session.initialized = true;
        json!({
            "protocolVersion": version,
            "capabilities": {"tools": {"listChanged": false}},
            "serverInfo": {"name": SERVER_NAME, "version": env!("CARGO_PKG_VERSION")},
        })
    }

    fn call_tool(&mut self, params: &Value) -> Result<Value, RpcError> {
        let name = params
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| RpcError::new(INVALID_PARAMS, "tools/call needs a string `name`"))?;
        let descriptor = registry()
            .into_iter()
            .find(|d| d.name == name)
            .ok_or_else(|| RpcError::new(INVALID_PARAMS, format!("unknown tool: {name}")))?;
        let args = params.get("arguments").cloned().unwrap_or_else(|| json!({}));
        let violations = schema::validate(&descriptor.input_schema, &args);
        if !violations.is_empty() {
            return Err(RpcError {
                code: INVALID_PARAMS,
                message: format!("invalid arguments for {name}: {}", violations.join("; ")),
                data: Some(json!({"violations": violations})),
            });
        }
        log::info!("tools/call {name}");
        Ok(match tools::call(name, &args, &self.settings, &self.docs, &mut self.session) {
            Ok(out) => json!({
                "content": [{"type": "text", "text": out.text}],
                "structuredContent": out.structured,
                "isError": false,
            }),
            Err(message) => {
                log::warn!("{name} failed: {message}");
                json!({
                    "content": [{"type": "text", "text": message}],
                    "isError": true,
                })
            }
        })
    }

    /// Serves until `input` reaches end of file.
    pub fn serve<R: BufRead, W: Write>(&mut self, input: R, mut output: W) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if let Some(reply) = self.handle_line(&line) {
                output.write_all(reply.as_bytes())?;
                output.write_all(b"\n")?;
                output.flush()?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn server() -> Server {
        Server::new(Settings::default(), DocStore::new())
    }

    fn reply(s: &mut Server, line: &str) -> Value {
        serde_json::from_str(&s.handle_line(line).expect("a response")).unwrap()
    }

    const INIT: &str = r#"{"jsonrpc":"2.0","id":1,"method":"initialize","params":{"protocolVersion":"2025-03-26","clientInfo":{"name":"t","version":"0"}}}"#;

    #[test]
    fn handshake() {
        let mut s = server();
        let r = reply(&mut s, INIT);
        assert_eq!(r["id"], 1);
        assert_eq!(r["result"]["protocolVersion"], "2025-03-26");
        assert_eq!(r["result"]["serverInfo"]["name"], SERVER_NAME);
        assert!(r["result"]["capabilities"]["tools"].is_object());
        assert!(s.session().initialized);
        assert_eq!(s.session().client_info.as_ref().unwrap().name, "t");
        assert!(s.handle_line(r#"{"jsonrpc":"2.0","method":"notifications/initialized"}"#).is_none());
    }

    #[test]
    fn unknown_version_gets_ours() {
        let mut s = server();
        let r = reply(
            &mut s,
            r#"{"jsonrpc":"2.0","id":"a","method":"initialize","params":{"protocolVersion":"1999-01-01"}}"#,
        );
        assert_eq!(r["id"], "a");
        assert_eq!(r["result"]["protocolVersion"], PROTOCOL_VERSION);
    }

    #[test]
    fn envelope_errors() {
        let mut s = server();
        let r = reply(&mut s, "not json");
        assert_eq!(r["error"]["code"], PARSE_ERROR);
        assert!(r["id"].is_null());
        let r = reply(&mut s, r#"{"jsonrpc":"2.0","id":5,"method":"nope"}"#);
        assert_eq!((r["id"].clone(), r["error"]["code"].clone()), (json!(5), json!(METHOD_NOT_FOUND)));
        let r = reply(&mut s, r#"{"jsonrpc":"1.0","id":6,"method":"ping"}"#);
        assert_eq!(r["error"]["code"], INVALID_REQUEST);
        assert_eq!(r["id"], 6);
        let r = reply(&mut s, "[1,2]");
        assert_eq!(r["error"]["code"], INVALID_REQUEST);
        assert!(s.handle_line("   ").is_none());
        assert!(s.handle_line(r#"{"jsonrpc":"2.0","method":"whatever"}"#).is_none());
    }

    #[test]
    fn tools_require_initialize() {
        let mut s = server();
        let r = reply(&mut s, r#"{"jsonrpc":"2.0","id":2,"method":"tools/call","params":{"name":"query_docs","arguments":{"query":"x"}}}"#);
        assert_eq!(r["error"]["code"], INVALID_PARAMS);
        assert!(r["error"]["message"].as_str().unwrap().contains("not initialized"));
        let r = reply(&mut s, r#"{"jsonrpc":"2.0","id":3,"method":"ping"}"#);
        assert_eq!(r["result"], json!({}));
    }

    #[test]
    fn list_is_stable() {
        let mut s = server();
        reply(&mut s, INIT);
        let a = s.handle_line(r#"{"jsonrpc":"2.0","id":2,"method":"tools/list"}"#).unwrap();
        let b = s.handle_line(r#"{"jsonrpc":"2.0","id":2,"method":"tools/list"}"#).unwrap();
        assert_eq!(a, b);
        let v: Value = serde_json::from_str(&a).unwrap();
        let names: Vec<&str> =
            v["result"]["tools"].as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).collect();
        assert_eq!(
            names,
            ["simulate_rtl", "synthesize", "run_backend", "sweep_baseline", "optimize_design", "query_docs", "get_history", "report_table"]
        );
    }

    #[test]
    fn argument_errors_name_fields() {
        let mut s = server();
        reply(&mut s, INIT);
        let r = reply(&mut s, r#"{"jsonrpc":"2.0","id":4,"method":"tools/call","params":{"name":"synthesize","arguments":{"rtl_sources":["a.v"]}}}"#);
        assert_eq!(r["error"]["code"], INVALID_PARAMS);
        assert!(r["error"]["message"].as_str().unwrap().contains("top_module"));
        let r = reply(&mut s, r#"{"jsonrpc":"2.0","id":5,"method":"tools/call","params":{"name":"nope"}}"#);
        assert_eq!(r["error"]["code"], INVALID_PARAMS);
    }

    #[test]
    fn tool_failure_is_content_and_server_survives() {
        let mut s = server();
        reply(&mut s, INIT);
        let r = reply(&mut s, r#"{"jsonrpc":"2.0","id":6,"method":"tools/call","params":{"name":"get_history","arguments":{"history_path":"/nonexistent/history.json"}}}"#);
        assert_eq!(r["result"]["isError"], true);
        let r = reply(&mut s, r#"{"jsonrpc":"2.0","id":7,"method":"ping"}"#);
        assert_eq!(r["id"], 7);
    }
}
