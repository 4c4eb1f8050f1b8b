//! A local chat-completions server for tests and offline demos.
//!
//! Speaks just enough HTTP/1.1 for one request per connection. Replies
//! come from a caller-supplied function of the prompt and request index.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

#[derive(Clone, Debug)]
pub enum StubReply {
    /// 200 with this assistant message; usage is reported when given.
    Content { text: String, total_tokens: Option<u64> },
    /// A bare status code with a short body.
    Status(u16),
}

impl StubReply {
    pub fn content(text: impl Into<String>) -> Self {
        StubReply::Content {
            text: text.into(),
            total_tokens: None,
        }
    }

    pub fn with_usage(text: impl Into<String>, total_tokens: u64) -> Self {
        StubReply::Content {
            text: text.into(),
            total_tokens: Some(total_tokens),
        }
    }
}

type Responder = dyn Fn(&str, usize) -> StubReply + Send + Sync;

struct State {
    responder: Box<Responder>,
    delay: Duration,
    served: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    bodies: Mutex<Vec<Value>>,
    stop: AtomicBool,
}

pub struct StubServer {
    addr: SocketAddr,
    state: Arc<State>,
    accept: Option<JoinHandle<()>>,
}

impl StubServer {
    /// `responder` receives the user prompt and the zero-based request index.
    pub fn start(responder: impl Fn(&str, usize) -> StubReply + Send + Sync + 'static) -> std::io::Result<Self> {
        Self::start_with_delay(Duration::ZERO, responder)
    }

    /// Like `start`, holding each request open for `delay` before replying
    /// so concurrent callers overlap.
    pub fn start_with_delay(
        delay: Duration,
        responder: impl Fn(&str, usize) -> StubReply + Send + Sync + 'static,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let state = Arc::new(State {
            responder: Box::new(responder),
            delay,
            served: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            bodies: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
        });
        let shared = Arc::clone(&state);
        let accept = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if shared.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let state = Arc::clone(&shared);
                std::thread::spawn(move || {
                    if let Err(e) = serve(stream, &state) {
                        log::debug!("stub connection error: {e}");
                    }
                });
            }
        });
        Ok(StubServer {
            addr,
            state,
            accept: Some(accept),
        })
    }

    /// Serves the same reply to every request.
    pub fn constant(reply: StubReply) -> std::io::Result<Self> {
        Self::start(move |_, _| reply.clone())
    }

    /// Serves `replies` in order, repeating the last one.
    pub fn sequence(replies: Vec<StubReply>) -> std::io::Result<Self> {
        assert!(!replies.is_empty(), "stub needs at least one reply");
        Self::start(move |_, i| replies[i.min(replies.len() - 1)].clone())
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.state.served.load(Ordering::SeqCst)
    }

    /// Highest number of requests observed in progress at once.
    pub fn max_in_flight(&self) -> usize {
        self.state.max_in_flight.load(Ordering::SeqCst)
    }

    /// Parsed request bodies in arrival order.
    pub fn bodies(&self) -> Vec<Value> {
        self.state.bodies.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.state.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop so it sees the flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept.take() {
            let _ = handle.join();
        }
    }
}

fn serve(stream: TcpStream, state: &State) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut content_length = 0usize;
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.is_empty() {
        return Ok(());
    }
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;

    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.max_in_flight.fetch_max(now, Ordering::SeqCst);
    let index = state.served.fetch_add(1, Ordering::SeqCst);

    let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let prompt = request
        .pointer("/messages/0/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    state.bodies.lock().unwrap_or_else(|e| e.into_inner()).push(request);
    let reply = (state.responder)(&prompt, index);
    if !state.delay.is_zero() {
        std::thread::sleep(state.delay);
    }
    state.in_flight.fetch_sub(1, Ordering::SeqCst);

    let (status, payload) = match reply {
        StubReply::Content { text, total_tokens } => {
            let mut v = json!({
                "id": format!("stub-{index}"),
                "object": "chat.completion",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
            });
            if let Some(n) = total_tokens {
                v["usage"] = json!({"total_tokens": n});
            }
            (200, v.to_string())
        }
        StubReply::Status(code) => (code, json!({"error": {"message": "stub error"}}).to_string()),
    };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} STUB\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    stream.flush()
}

/// A well-formed report for whichever template `prompt` came from, echoing
/// its agent id and round when the template asks for them.
pub fn well_formed_reply(prompt: &str, y: u8, p: f64, just: &str) -> String {
    let field = |key: &str| {
        prompt.lines().find_map(|l| {
            l.trim()
                .strip_prefix(&format!("\"{key}\": "))
                .map(|v| v.trim_end_matches(',').to_string())
        })
    };
    let mut report = serde_json::Map::new();
    if let Some(id) = field("agent_id") {
        report.insert(
            "agent_id".into(),
            serde_json::from_str(&id).unwrap_or(Value::String(id)),
        );
    }
    if let Some(t) = field("t") {
        report.insert("t".into(), json!(t.parse::<u64>().unwrap_or(0)));
    }
    report.insert("y".into(), json!(y));
    report.insert("p".into(), json!(p));
    report.insert("just".into(), json!(just));
    Value::Object(report).to_string()
}
