//! The remote document store: a small HTTP/1.1 server over loopback.
//!
//! Each client connection gets its own thread; writes to one
//! database are serialized. With a persistence directory every applied
//! write is appended to `<dir>/<db>.log` (one JSON document per line) and
//! the logs are replayed on start.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::ops::Bound;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use ledgerbench_core::Version;
use parking_lot::{Mutex, RwLock};
use serde::Serialize;

use super::wire::{
    AllDocsResponse, BulkDocResult, BulkDocsRequest, BulkDocsResponse, BulkGetRequest, BulkGetResponse, BulkGetRow, Doc,
    ErrorBody, PutBody, PutResponse,
};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen: String,
    /// Delay added to every request before it is handled.
    pub latency: Duration,
    pub persist: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { listen: "127.0.0.1:0".into(), latency: Duration::from_millis(1), persist: None }
    }
}

#[derive(Debug, Clone)]
struct Stored {
    rev: u64,
    value: Vec<u8>,
    version: Version,
}

impl Stored {
    fn doc(&self, id: &str) -> Doc {
        Doc { id: id.to_string(), rev: self.rev, value: STANDARD.encode(&self.value), version: self.version }
    }
}

#[derive(Default)]
struct Database {
    docs: RwLock<BTreeMap<String, Stored>>,
    log: Mutex<Option<BufWriter<File>>>,
}

struct Store {
    dbs: RwLock<HashMap<String, Arc<Database>>>,
    persist: Option<PathBuf>,
}

impl Store {
    fn open(persist: Option<PathBuf>) -> io::Result<Store> {
        let store = Store { dbs: RwLock::new(HashMap::new()), persist };
        if let Some(dir) = &store.persist {
            fs::create_dir_all(dir)?;
            for entry in fs::read_dir(dir)? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) == Some("log") {
                    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                    let db = store.db(&name)?;
                    replay(&path, &db)?;
                }
            }
        }
        Ok(store)
    }

    fn db(&self, name: &str) -> io::Result<Arc<Database>> {
        if let Some(db) = self.dbs.read().get(name) {
            return Ok(db.clone());
        }
        let mut dbs = self.dbs.write();
        if let Some(db) = dbs.get(name) {
            return Ok(db.clone());
        }
        let db = Arc::new(Database::default());
        if let Some(dir) = &self.persist {
            let file = OpenOptions::new().create(true).append(true).open(log_path(dir, name))?;
            *db.log.lock() = Some(BufWriter::new(file));
        }
        dbs.insert(name.to_string(), db.clone());
        Ok(db)
    }
}

fn log_path(dir: &Path, db: &str) -> PathBuf {
    dir.join(format!("{}.log", urlencoding::encode(db)))
}

fn replay(path: &Path, db: &Database) -> io::Result<()> {
    let mut docs = db.docs.write();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Doc = serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let value = STANDARD.decode(&doc.value).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        docs.insert(doc.id, Stored { rev: doc.rev, value, version: doc.version });
    }
    Ok(())
}

fn append_log(db: &Database, docs: &[Doc]) -> io::Result<()> {
    let mut log = db.log.lock();
    if let Some(w) = log.as_mut() {
        for d in docs {
            serde_json::to_writer(&mut *w, d)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

pub struct StateServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl StateServer {
    pub fn start(config: ServerConfig) -> io::Result<StateServer> {
        let store = Arc::new(Store::open(config.persist.clone())?);
        let listener = TcpListener::bind(&config.listen)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let conns: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
        let acceptor = {
            let (stop, conns) = (stop.clone(), conns.clone());
            thread::Builder::new().name("statedb-accept".into()).spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::Acquire) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let _ = stream.set_nodelay(true);
                    if let Ok(handle) = stream.try_clone() {
                        conns.lock().push(handle);
                    }
                    let store = store.clone();
                    let latency = config.latency;
                    let _ = thread::Builder::new()
                        .name("statedb-conn".into())
                        .spawn(move || serve_connection(&store, stream, latency));
                }
            })?
        };
        Ok(StateServer { addr, stop, conns, acceptor: Some(acceptor) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server is shut down from elsewhere.
    pub fn join(mut self) {
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
    }
}

impl Drop for StateServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        let _ = TcpStream::connect(self.addr);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        for c in self.conns.lock().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

struct Reply {
    status: u16,
    body: Vec<u8>,
}

fn json_response<T: Serialize>(status: u16, body: &T) -> Reply {
    Reply { status, body: serde_json::to_vec(body).expect("serializable response") }
}

fn error(status: u16, error: &str, reason: impl Into<String>) -> Reply {
    json_response(status, &ErrorBody { error: error.to_string(), reason: reason.into() })
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        201 => "Created",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        409 => "Conflict",
        413 => "Payload Too Large",
        _ => "Internal Server Error",
    }
}

const MAX_HEAD: usize = 64 * 1024;

struct Head {
    method: String,
    path: String,
    content_length: usize,
    close: bool,
    len: usize,
}

fn parse_head(buf: &[u8]) -> Result<Option<Head>, String> {
    let mut headers = [httparse::EMPTY_HEADER; 32];
    let mut req = httparse::Request::new(&mut headers);
    let len = match req.parse(buf).map_err(|e| e.to_string())? {
        httparse::Status::Complete(n) => n,
        httparse::Status::Partial => return Ok(None),
    };
    let mut content_length = 0;
    let mut close = req.version == Some(0);
    for h in req.headers.iter() {
        if h.name.eq_ignore_ascii_case("content-length") {
            content_length = std::str::from_utf8(h.value)
                .ok()
                .and_then(|v| v.trim().parse().ok())
                .ok_or("invalid content-length")?;
        } else if h.name.eq_ignore_ascii_case("connection") {
            close = h.value.eq_ignore_ascii_case(b"close");
        } else if h.name.eq_ignore_ascii_case("transfer-encoding") {
            return Err("chunked bodies are not supported".into());
        }
    }
    Ok(Some(Head {
        method: req.method.unwrap_or_default().to_string(),
        path: req.path.unwrap_or_default().to_string(),
        content_length,
        close,
        len,
    }))
}

fn write_reply(w: &mut impl Write, reply: &Reply, close: bool) -> io::Result<()> {
    write!(
        w,
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n{}\r\n",
        reply.status,
        reason(reply.status),
        reply.body.len(),
        if close { "Connection: close\r\n" } else { "" }
    )?;
    w.write_all(&reply.body)?;
    w.flush()
}

/// Keep-alive loop for one client connection.
fn serve_connection(store: &Store, stream: TcpStream, latency: Duration) {
    let Ok(read_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(read_half);
    let mut writer = BufWriter::new(stream);
    let mut buf: Vec<u8> = Vec::new();
    loop {
        let head = loop {
            match parse_head(&buf) {
                Ok(Some(head)) => break head,
                Ok(None) if buf.len() < MAX_HEAD => {}
                Ok(None) => {
                    let _ = write_reply(&mut writer, &error(413, "bad_request", "request head too large"), true);
                    return;
                }
                Err(e) => {
                    let _ = write_reply(&mut writer, &error(400, "bad_request", e), true);
                    return;
                }
            }
            let chunk = match reader.fill_buf() {
                Ok([]) | Err(_) => return,
                Ok(chunk) => chunk,
            };
            buf.extend_from_slice(chunk);
            let n = chunk.len();
            reader.consume(n);
        };
        let mut body = buf.split_off(head.len);
        buf.clear();
        if body.len() > head.content_length {
            buf = body.split_off(head.content_length);
        } else if body.len() < head.content_length {
            let have = body.len();
            body.resize(head.content_length, 0);
            if reader.read_exact(&mut body[have..]).is_err() {
                return;
            }
        }
        if !latency.is_zero() {
            thread::sleep(latency);
        }
        let reply = route(store, &head.method, &head.path, &body);
        if write_reply(&mut writer, &reply, head.close).is_err() || head.close {
            return;
        }
    }
}

fn query_param(query: &str, name: &str) -> Option<String> {
    query.split('&').find_map(|pair| {
        let (k, v) = pair.split_once('=')?;
        (k == name).then(|| urlencoding::decode(v).map(|s| s.into_owned()).ok()).flatten()
    })
}

fn route(store: &Store, method: &str, url: &str, body: &[u8]) -> Reply {
    let (path, query) = url.split_once('?').unwrap_or((url, ""));
    let mut parts = path.trim_start_matches('/').splitn(3, '/');
    let (Some("db"), Some(db_name), Some(rest)) = (parts.next(), parts.next(), parts.next()) else {
        return error(404, "not_found", "unknown path");
    };
    let Ok(db_name) = urlencoding::decode(db_name) else {
        return error(400, "bad_request", "invalid database name");
    };
    let db = match store.db(&db_name) {
        Ok(db) => db,
        Err(e) => return error(500, "io_error", e.to_string()),
    };
    match (method, rest) {
        ("POST", "_bulk_get") => bulk_get(&db, body),
        ("POST", "_bulk_docs") => bulk_docs(&db, body),
        ("GET", "_all_docs") => {
            let start = query_param(query, "startkey");
            let end = query_param(query, "endkey");
            all_docs(&db, start, end)
        }
        (method, key) => {
            let Ok(key) = urlencoding::decode(key) else {
                return error(400, "bad_request", "invalid key");
            };
            match method {
                "GET" => get_doc(&db, &key),
                "PUT" => put_doc(&db, &key, body),
                _ => error(405, "method_not_allowed", method.to_string()),
            }
        }
    }
}

fn get_doc(db: &Database, key: &str) -> Reply {
    match db.docs.read().get(key) {
        Some(s) => json_response(200, &s.doc(key)),
        None => error(404, "not_found", "missing"),
    }
}

fn put_doc(db: &Database, key: &str, body: &[u8]) -> Reply {
    let put: PutBody = match serde_json::from_slice(body) {
        Ok(p) => p,
        Err(e) => return error(400, "bad_request", e.to_string()),
    };
    let Ok(value) = STANDARD.decode(&put.value) else {
        return error(400, "bad_request", "value is not base64");
    };
    let mut docs = db.docs.write();
    let current = docs.get(key).map(|s| s.rev);
    if current != put.rev {
        return error(409, "conflict", "document update conflict");
    }
    let stored = Stored { rev: current.unwrap_or(0) + 1, value, version: put.version };
    if let Err(e) = append_log(db, &[stored.doc(key)]) {
        return error(500, "io_error", e.to_string());
    }
    let rev = stored.rev;
    docs.insert(key.to_string(), stored);
    json_response(201, &PutResponse { ok: true, rev })
}

fn bulk_get(db: &Database, body: &[u8]) -> Reply {
    let req: BulkGetRequest = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return error(400, "bad_request", e.to_string()),
    };
    let docs = db.docs.read();
    let results = req
        .keys
        .into_iter()
        .map(|key| {
            let doc = docs.get(&key).map(|s| s.doc(&key));
            BulkGetRow { key, doc }
        })
        .collect();
    json_response(200, &BulkGetResponse { results })
}

/// All-or-nothing: any stale revision rejects the whole batch.
fn bulk_docs(db: &Database, body: &[u8]) -> Reply {
    let req: BulkDocsRequest = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return error(400, "bad_request", e.to_string()),
    };
    let mut decoded = Vec::with_capacity(req.docs.len());
    for d in &req.docs {
        match STANDARD.decode(&d.value) {
            Ok(v) => decoded.push(v),
            Err(_) => return error(400, "bad_request", format!("value of {} is not base64", d.id)),
        }
    }
    let mut docs = db.docs.write();
    let conflicts: Vec<BulkDocResult> = req
        .docs
        .iter()
        .filter(|d| docs.get(&d.id).map(|s| s.rev) != d.rev)
        .map(|d| BulkDocResult { id: d.id.clone(), rev: None, error: Some("conflict".into()) })
        .collect();
    if !conflicts.is_empty() {
        return json_response(409, &BulkDocsResponse { results: conflicts });
    }
    let mut applied = Vec::with_capacity(req.docs.len());
    for (d, value) in req.docs.iter().zip(decoded) {
        let stored = Stored { rev: d.rev.unwrap_or(0) + 1, value, version: d.version };
        applied.push((d.id.clone(), stored));
    }
    let log_docs: Vec<Doc> = applied.iter().map(|(id, s)| s.doc(id)).collect();
    if let Err(e) = append_log(db, &log_docs) {
        return error(500, "io_error", e.to_string());
    }
    let mut results = Vec::with_capacity(applied.len());
    for (id, stored) in applied {
        results.push(BulkDocResult { id: id.clone(), rev: Some(stored.rev), error: None });
        docs.insert(id, stored);
    }
    json_response(201, &BulkDocsResponse { results })
}

fn all_docs(db: &Database, start: Option<String>, end: Option<String>) -> Reply {
    let docs = db.docs.read();
    let lower = start.as_deref().map_or(Bound::Unbounded, Bound::Included);
    let upper = end.as_deref().map_or(Bound::Unbounded, Bound::Excluded);
    if let (Bound::Included(s), Bound::Excluded(e)) = (lower, upper) {
        if s >= e {
            return json_response(200, &AllDocsResponse { rows: Vec::new() });
        }
    }
    let rows = docs.range::<str, _>((lower, upper)).map(|(k, s)| s.doc(k)).collect();
    json_response(200, &AllDocsResponse { rows })
}
