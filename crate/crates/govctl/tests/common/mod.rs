//! An endpoint served in-process on a fixed clock, and a runner for the
//! govctl binary pointed at it.

#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use ssgov_core::attest::{Envelope, SigningIdentity};
use ssgov_core::canonical::rfc3339;
use ssgov_core::clock::{Clock, FixedClock};
use ssgov_endpoint::demo::{self, Demo, Scenario};
use ssgov_endpoint::{Config, Service};
use tokio::runtime::Runtime;
use tokio::sync::oneshot;

pub struct Server {
    pub service: Arc<Service>,
    pub clock: Arc<FixedClock>,
    pub addr: SocketAddr,
    pub demo: Demo,
    rt: Runtime,
    stop: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
    _dir: Option<tempfile::TempDir>,
}

impl Server {
    /// A fresh demo deployment at `t`.
    pub fn start(scenario: Scenario, t: DateTime<Utc>) -> Server {
        let dir = tempfile::tempdir().unwrap();
        let demo = demo::init(dir.path(), scenario, "127.0.0.1:0".parse().unwrap()).unwrap();
        let mut s = Server::serve(demo, t);
        s._dir = Some(dir);
        s
    }

    /// Serves an existing deployment.
    pub fn serve(demo: Demo, t: DateTime<Utc>) -> Server {
        let clock = Arc::new(FixedClock::new(t));
        let service = Arc::new(Service::open(demo.config.clone(), clock.clone()).unwrap());
        let rt = Runtime::new().unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel::<()>();
        let task = rt.spawn(ssgov_endpoint::http::serve(listener, service.clone(), async {
            let _ = rx.await;
        }));
        Server {
            service,
            clock,
            addr,
            demo,
            rt,
            stop: Some(tx),
            task: Some(task),
            _dir: None,
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn key_dir(&self) -> &Path {
        &self.demo.config.key_dir
    }

    pub fn identity(&self, who: &str) -> SigningIdentity {
        SigningIdentity::load(&self.demo.identity_path(who)).unwrap()
    }

    pub fn envelope(&self, who: &str, endpoint: &str, text: &str) -> Envelope {
        let id = self.identity(who);
        Envelope::new(endpoint, text, id.record.owner.clone(), id.record.key_id.clone(), self.now()).sign(&id.key)
    }

    /// Runs govctl as `who`, dated at the server clock and checking
    /// response signatures.
    pub fn govctl(&self, who: &str, args: &[&str]) -> Run {
        let identity = self.demo.identity_path(who);
        let mut full: Vec<String> = vec![
            "--server".into(),
            self.url(),
            "--identity".into(),
            identity.display().to_string(),
            "--keys".into(),
            self.key_dir().display().to_string(),
            "--timestamp".into(),
            rfc3339::format(&self.now()),
        ];
        full.extend(args.iter().map(|s| s.to_string()));
        govctl(&full)
    }

    /// Stops serving; the deployment files stay until drop.
    pub fn stop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = self.rt.block_on(task);
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop();
    }
}

#[derive(Debug)]
pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn govctl<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_govctl"))
        .args(args)
        .env_remove("GOVCTL_CONFIG")
        .env_remove("GOVCTL_SERVER")
        .env_remove("GOVCTL_IDENTITY")
        .env_remove("GOVCTL_KEYS")
        .output()
        .expect("govctl runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// One raw HTTP/1.1 exchange. Returns the head and the body.
pub fn http_exchange(addr: SocketAddr, request: &[u8]) -> std::io::Result<(String, Vec<u8>)> {
    let mut s = TcpStream::connect(addr)?;
    s.set_read_timeout(Some(std::time::Duration::from_secs(30)))?;
    s.write_all(request)?;
    let mut buf = Vec::new();
    s.read_to_end(&mut buf)?;
    let split = buf
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or_else(|| std::io::Error::other("no header terminator"))?;
    Ok((String::from_utf8_lossy(&buf[..split]).into_owned(), buf[split + 4..].to_vec()))
}

pub fn post_request(path: &str, body: &[u8]) -> Vec<u8> {
    let mut req = format!(
        "POST {path} HTTP/1.1\r\nHost: ssgov\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n",
        body.len()
    )
    .into_bytes();
    req.extend_from_slice(body);
    req
}

pub fn get_request(path: &str) -> Vec<u8> {
    format!("GET {path} HTTP/1.1\r\nHost: ssgov\r\n\r\n").into_bytes()
}

/// Copies a demo deployment so a second server starts from the same
/// state and keys.
pub fn clone_deployment(demo: &Demo, to: &Path) -> Demo {
    copy_dir(&demo.root, to);
    let rebase = |p: &PathBuf| to.join(p.strip_prefix(&demo.root).unwrap());
    let mut config: Config = demo.config.clone();
    config.data_dir = rebase(&config.data_dir);
    config.frame_dir = config.frame_dir.as_ref().map(rebase);
    config.key_dir = rebase(&config.key_dir);
    config.server_key = rebase(&config.server_key);
    Demo {
        root: to.to_path_buf(),
        config_path: rebase(&demo.config_path),
        config,
        identities: rebase(&demo.identities),
    }
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &dest);
        } else {
            std::fs::copy(entry.path(), dest).unwrap();
        }
    }
}
