//! Verifiers exposed as HTTP tools.
//!
//! `POST /verifiers/{name}` takes `{x, y, context?}` and returns
//! `{"result": bool}`; `POST /aggregate` returns the whole verdict;
//! `GET /tools` lists the tool schema and `GET /system-prompt` returns the
//! snippet to paste into a downstream agent's system prompt.

use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::bundle::VerifierBundle;
use crate::context::{required_fields, required_fields_of, Context, ContextExtractor};
use crate::dataset::{DevExample, Label};
use crate::gateway::{Check, ExampleVerdict, Gateway};
use crate::llm::TemplateId;

pub const REQUEST_EXAMPLE_ID: &str = "request";

pub fn system_prompt() -> &'static str {
    TemplateId::ToolSystem.text()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolResponse {
    pub status: u16,
    pub content_type: &'static str,
    pub body: String,
}

impl ToolResponse {
    fn json(status: u16, value: &Value) -> Self {
        Self {
            status,
            content_type: "application/json",
            body: value.to_string(),
        }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Self::json(status, &json!({ "error": message.into() }))
    }

    pub fn json_body(&self) -> Option<Value> {
        serde_json::from_str(&self.body).ok()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CallBody {
    x: String,
    y: String,
    #[serde(default)]
    context: Option<Map<String, Value>>,
}

pub struct ToolService {
    bundle: VerifierBundle,
    gateway: Arc<Gateway>,
    extractor: Option<Arc<ContextExtractor>>,
    timeout: Duration,
}

impl ToolService {
    /// Without an extractor, verifiers needing context get nulls and the
    /// response says so.
    pub fn new(bundle: VerifierBundle, gateway: Arc<Gateway>, extractor: Option<Arc<ContextExtractor>>, timeout: Duration) -> Self {
        Self {
            bundle,
            gateway,
            extractor,
            timeout,
        }
    }

    pub fn bundle(&self) -> &VerifierBundle {
        &self.bundle
    }

    pub fn tools(&self) -> Value {
        let tools: Vec<Value> = self
            .bundle
            .specs
            .iter()
            .map(|spec| {
                let context_props: Map<String, Value> = spec
                    .requires
                    .iter()
                    .map(|f| (f.clone(), json!({})))
                    .collect();
                json!({
                    "name": spec.name,
                    "description": spec.description,
                    "endpoint": format!("/verifiers/{}", spec.name),
                    "requires": spec.requires,
                    "parameters": {
                        "type": "object",
                        "properties": {
                            "x": {"type": "string", "description": "task input"},
                            "y": {"type": "string", "description": "full draft solution to check"},
                            "context": {"type": "object", "properties": context_props},
                        },
                        "required": ["x", "y"],
                    },
                })
            })
            .collect();
        Value::Array(tools)
    }

    pub fn handle(&self, method: &str, path: &str, body: &[u8]) -> ToolResponse {
        let path = path.split('?').next().unwrap_or(path);
        match (method, path) {
            ("GET", "/tools") => ToolResponse::json(200, &self.tools()),
            ("GET", "/system-prompt") => ToolResponse {
                status: 200,
                content_type: "text/plain; charset=utf-8",
                body: system_prompt().to_string(),
            },
            ("POST", "/aggregate") => match self.run(body) {
                Ok((verdict, missing)) => {
                    let mut value = serde_json::to_value(&verdict).expect("verdict serializes");
                    if missing {
                        value["context_missing"] = Value::Bool(true);
                    }
                    ToolResponse::json(200, &value)
                }
                Err(r) => r,
            },
            ("POST", p) if p.starts_with("/verifiers/") => {
                let name = &p["/verifiers/".len()..];
                if !self.bundle.verifier_names().any(|n| n == name) {
                    return ToolResponse::error(404, format!("no verifier named {name:?}"));
                }
                match self.run(body) {
                    Ok((verdict, missing)) => {
                        let check = verdict.checks.get(name).copied().unwrap_or(Check::Error);
                        let mut value = json!({ "result": check.as_bool() });
                        if check == Check::Error {
                            let message = verdict
                                .errors
                                .iter()
                                .find(|e| e.site == name)
                                .map(|e| format!("{}: {}", e.kind, e.message))
                                .unwrap_or_else(|| "verifier failed".into());
                            value["error"] = Value::String(message);
                        }
                        if missing {
                            value["context_missing"] = Value::Bool(true);
                        }
                        ToolResponse::json(200, &value)
                    }
                    Err(r) => r,
                }
            }
            (_, "/tools" | "/system-prompt" | "/aggregate") => ToolResponse::error(405, "method not allowed"),
            (_, p) if p.starts_with("/verifiers/") => ToolResponse::error(405, "method not allowed"),
            _ => ToolResponse::error(404, format!("no route for {method} {path}")),
        }
    }

    fn run(&self, body: &[u8]) -> Result<(ExampleVerdict, bool), ToolResponse> {
        let call: CallBody =
            serde_json::from_slice(body).map_err(|e| ToolResponse::error(400, format!("bad request body: {e}")))?;
        let example = DevExample::new(REQUEST_EXAMPLE_ID, call.x, call.y, Label::Negative);
        let fields = required_fields(&self.bundle);
        let mut missing = false;
        let context = match (&call.context, &self.extractor) {
            (Some(given), _) => Context::shaped(REQUEST_EXAMPLE_ID, &fields, given),
            (None, _) if fields.is_empty() => Context::empty(REQUEST_EXAMPLE_ID),
            (None, Some(extractor)) => extractor.extract_context(&example, &fields, &self.bundle.specs),
            (None, None) => {
                missing = true;
                Context::all_null(REQUEST_EXAMPLE_ID, &fields)
            }
        };
        let mut verdicts = self.gateway.execute(&self.bundle, &[(&example, &context)], self.timeout);
        let verdict = verdicts
            .pop()
            .ok_or_else(|| ToolResponse::error(500, "worker returned no verdict"))?;
        Ok((verdict, missing))
    }

    /// Fields any verifier may need, for the startup banner.
    pub fn context_fields(&self) -> Vec<String> {
        required_fields_of(&self.bundle.specs)
    }
}

/// Blocking HTTP front end for a [`ToolService`].
pub struct ToolServer {
    server: Arc<tiny_http::Server>,
}

impl ToolServer {
    pub fn bind(addr: &str) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
        Ok(Self {
            server: Arc::new(server),
        })
    }

    pub fn local_addr(&self) -> Option<std::net::SocketAddr> {
        self.server.server_addr().to_ip()
    }

    /// Handle that makes [`ToolServer::run`] return.
    pub fn stopper(&self) -> impl Fn() + Send + Sync + 'static {
        let server = Arc::clone(&self.server);
        move || server.unblock()
    }

    /// Serves until stopped; each request runs on its own thread.
    pub fn run(&self, service: Arc<ToolService>) {
        for mut request in self.server.incoming_requests() {
            let service = Arc::clone(&service);
            std::thread::spawn(move || {
                let mut body = Vec::new();
                let response = match request.as_reader().read_to_end(&mut body) {
                    Ok(_) => service.handle(request.method().as_str(), request.url(), &body),
                    Err(e) => ToolResponse::error(400, format!("unreadable body: {e}")),
                };
                let header = tiny_http::Header::from_bytes("Content-Type", response.content_type).expect("static header");
                let reply = tiny_http::Response::from_string(response.body)
                    .with_status_code(response.status)
                    .with_header(header);
                if let Err(e) = request.respond(reply) {
                    log::warn!("failed to send tool response: {e}");
                }
            });
        }
    }
}
