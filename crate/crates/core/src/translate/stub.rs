//! Minimal HTTP/1.1 server speaking the translation wire protocol, for tests
//! and offline runs. Each input `text` is answered with `"[{target}] text"`.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde::Deserialize;

/// Scripted failure modes.
#[derive(Debug, Clone, Default)]
pub struct StubBehavior {
    /// Answer the first `fail_first` requests with HTTP 503.
    pub fail_first: usize,
    /// Answer successful requests with a body that is not valid JSON.
    pub malformed: bool,
}

#[derive(Deserialize)]
struct Body {
    q: Vec<String>,
    target: String,
}

pub struct StubServer {
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(behavior: StubBehavior) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0", behavior)
    }

    pub fn bind(addr: &str, behavior: StubBehavior) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let (count, halt) = (requests.clone(), stop.clone());
        let handle = thread::spawn(move || {
            for stream in listener.incoming() {
                if halt.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let n = count.fetch_add(1, Ordering::SeqCst);
                let _ = serve(stream, n, &behavior);
            }
        });
        Ok(Self { addr, requests, stop, handle: Some(handle) })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received so far.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Blocks serving until the process exits.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) -> std::io::Result<()> {
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}

fn serve(mut stream: TcpStream, index: usize, behavior: &StubBehavior) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut content_length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;
    if !request_line.starts_with("POST /translate ") {
        return respond(&mut stream, "404 Not Found", "{\"error\":\"not found\"}");
    }
    if index < behavior.fail_first {
        return respond(&mut stream, "503 Service Unavailable", "{\"error\":\"unavailable\"}");
    }
    if behavior.malformed {
        return respond(&mut stream, "200 OK", "{\"translations\": [");
    }
    let Ok(parsed) = serde_json::from_slice::<Body>(&body) else {
        return respond(&mut stream, "400 Bad Request", "{\"error\":\"bad request\"}");
    };
    let translations: Vec<String> = parsed.q.iter().map(|t| format!("[{}] {t}", parsed.target)).collect();
    let out = serde_json::json!({ "translations": translations }).to_string();
    respond(&mut stream, "200 OK", &out)
}
