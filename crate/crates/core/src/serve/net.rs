use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use tungstenite::Message;

use super::{ServerMessage, Session};
use crate::bench::Dataset;
use crate::exec::{write_log, ExecConfig};

pub const BIND_ENV: &str = "OPEND_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:7878";

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub exec: ExecConfig,
    /// Messages per second per session; `None` disables pacing.
    pub rate_limit: Option<f64>,
    /// Finished episode logs are written here.
    pub log_dir: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig { exec: ExecConfig::default(), rate_limit: Some(60.0), log_dir: None }
    }
}

/// Bind address: explicit flag, then the environment, then the default.
pub fn bind_addr(flag: Option<&str>) -> String {
    flag.map(String::from).or_else(|| std::env::var(BIND_ENV).ok().filter(|s| !s.is_empty())).unwrap_or_else(|| DEFAULT_BIND.into())
}

/// Accepts connections forever, one thread and session per connection.
pub fn serve(listener: TcpListener, ds: Arc<Dataset>, cfg: ServeConfig) -> io::Result<()> {
    let cfg = Arc::new(cfg);
    let ids = Arc::new(AtomicU64::new(1));
    for stream in listener.incoming() {
        let stream = stream?;
        let (ds, cfg, ids) = (ds.clone(), cfg.clone(), ids.clone());
        thread::spawn(move || {
            let id = ids.fetch_add(1, Ordering::Relaxed);
            let _ = handle_connection(stream, &ds, &cfg, id);
        });
    }
    Ok(())
}

struct Pacer {
    interval: Option<Duration>,
    last: Option<Instant>,
}

impl Pacer {
    fn wait(&mut self) {
        if let (Some(iv), Some(last)) = (self.interval, self.last) {
            let due = last + iv;
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        self.last = Some(Instant::now());
    }
}

fn is_websocket(stream: &TcpStream) -> io::Result<bool> {
    let mut buf = [0u8; 4];
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let n = stream.peek(&mut buf)?;
        if n == 4 || n == 0 || buf[..n] != b"GET "[..n] {
            return Ok(n == 4 && &buf == b"GET ");
        }
        if Instant::now() > deadline {
            return Ok(false);
        }
        thread::sleep(Duration::from_millis(2));
    }
}

/// Runs one session over plain newline-delimited JSON or, when the client
/// opens with an HTTP upgrade, over WebSocket text frames.
pub fn handle_connection(stream: TcpStream, ds: &Dataset, cfg: &ServeConfig, id: u64) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut session = Session::new(id, ds, cfg.exec.clone());
    let mut pacer = Pacer { interval: cfg.rate_limit.filter(|r| *r > 0.0).map(|r| Duration::from_secs_f64(1.0 / r)), last: None };
    let mut written = 0;
    let result = if is_websocket(&stream)? { run_ws(stream, &mut session, &mut pacer, cfg, &mut written) } else { run_lines(stream, &mut session, &mut pacer, cfg, &mut written) };
    flush_logs(&session, cfg, &mut written)?;
    result
}

fn flush_logs(session: &Session<'_>, cfg: &ServeConfig, written: &mut usize) -> io::Result<()> {
    if let Some(dir) = &cfg.log_dir {
        fs::create_dir_all(dir)?;
        for (k, log) in session.finished.iter().enumerate().skip(*written) {
            write_log(&dir.join(format!("session{:04}_{k:03}.traj.jsonl", session.id)), log)?;
        }
    }
    *written = session.finished.len();
    Ok(())
}

/// `(reply, close)` for one message body.
fn answer(session: &mut Session<'_>, text: &str) -> (String, bool) {
    match session.handle_text(text) {
        Ok(m) => (encode(&m), false),
        Err(e) => (encode(&e.to_message()), true),
    }
}

fn encode(m: &ServerMessage) -> String {
    serde_json::to_string(m).expect("server messages serialize")
}

fn run_lines(stream: TcpStream, session: &mut Session<'_>, pacer: &mut Pacer, cfg: &ServeConfig, written: &mut usize) -> io::Result<()> {
    let mut out = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        pacer.wait();
        let (reply, close) = answer(session, &line);
        out.write_all(reply.as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()?;
        flush_logs(session, cfg, written)?;
        if close {
            break;
        }
    }
    Ok(())
}

fn run_ws(stream: TcpStream, session: &mut Session<'_>, pacer: &mut Pacer, cfg: &ServeConfig, written: &mut usize) -> io::Result<()> {
    let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
    loop {
        let text = match ws.read() {
            Ok(Message::Text(t)) => t.to_string(),
            Ok(Message::Binary(b)) => String::from_utf8_lossy(&b).into_owned(),
            Ok(Message::Close(_)) | Err(tungstenite::Error::ConnectionClosed) => return Ok(()),
            Ok(_) => continue,
            Err(e) => return Err(io::Error::other(e.to_string())),
        };
        pacer.wait();
        let (reply, close) = answer(session, &text);
        ws.send(Message::text(reply)).map_err(|e| io::Error::other(e.to_string()))?;
        flush_logs(session, cfg, written)?;
        if close {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
    }
}
