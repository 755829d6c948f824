use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use keep_core::servingkit::KnowledgeSnapshot;

use crate::error::{GkcError, Result};
use crate::protocol::{read_frame, write_frame, Frame, ERROR_PROTOCOL, ERROR_REJECTED};
use crate::store::VersionStore;

/// TCP front end of a [`VersionStore`], one thread per connection.
pub struct Server {
    listener: TcpListener,
    store: Arc<VersionStore>,
    snapshot_dir: Option<PathBuf>,
}

impl Server {
    /// Bind `addr`. With a snapshot directory, publish notices load
    /// `snapshot-<version>.ksnp` from it.
    pub fn bind(addr: impl ToSocketAddrs, store: Arc<VersionStore>, snapshot_dir: Option<PathBuf>) -> Result<Self> {
        Ok(Server {
            listener: TcpListener::bind(addr)?,
            store,
            snapshot_dir,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn store(&self) -> &Arc<VersionStore> {
        &self.store
    }

    /// Serve on the calling thread until the process exits.
    pub fn run(self) -> Result<()> {
        self.accept_loop(&AtomicBool::new(false));
        Ok(())
    }

    /// Serve on a background thread.
    pub fn spawn(self) -> Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::Builder::new()
            .name("gkc-accept".into())
            .spawn(move || self.accept_loop(&flag))?;
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    fn accept_loop(&self, stop: &AtomicBool) {
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let store = self.store.clone();
            let dir = self.snapshot_dir.clone();
            let spawned = thread::Builder::new().name("gkc-conn".into()).spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = handle(stream, &store, dir.as_deref()) {
                    log::debug!("connection {peer:?} closed: {e}");
                }
            });
            if let Err(e) = spawned {
                log::warn!("could not spawn connection thread: {e}");
            }
        }
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting connections. Open connections end when their clients
    /// disconnect.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        if let Some(t) = self.thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            // wake the blocking accept
            let _ = TcpStream::connect(self.addr);
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_accepting();
    }
}

fn publish_from_dir(store: &VersionStore, dir: Option<&std::path::Path>, version: u32) -> Result<u32> {
    let dir = dir.ok_or_else(|| GkcError::Rejected {
        version,
        reason: "server has no snapshot directory".into(),
    })?;
    let snap = KnowledgeSnapshot::read(&dir.join(KnowledgeSnapshot::file_name(version)))?;
    if snap.version() != version {
        return Err(GkcError::Rejected {
            version,
            reason: format!("file holds version {}", snap.version()),
        });
    }
    store.publish(snap)
}

fn handle(stream: TcpStream, store: &VersionStore, dir: Option<&std::path::Path>) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(e @ (GkcError::Protocol(_) | GkcError::FrameTooLarge(_))) => {
                let _ = write_frame(
                    &mut writer,
                    &Frame::Error {
                        code: ERROR_PROTOCOL,
                        message: e.to_string(),
                    },
                );
                let _ = writer.get_ref().shutdown(Shutdown::Both);
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let reply = match frame {
            Frame::LookupRequest(qs) => Frame::LookupResponse(store.lookup_batch(&qs)),
            Frame::PublishNotice { version } => match publish_from_dir(store, dir, version) {
                Ok(v) => Frame::PublishNotice { version: v },
                Err(e) => Frame::Error {
                    code: ERROR_REJECTED,
                    message: e.to_string(),
                },
            },
            other => {
                let e = GkcError::Protocol(format!("unexpected frame type {} from client", other.frame_type()));
                let _ = write_frame(
                    &mut writer,
                    &Frame::Error {
                        code: ERROR_PROTOCOL,
                        message: e.to_string(),
                    },
                );
                let _ = writer.get_ref().shutdown(Shutdown::Both);
                return Err(e);
            }
        };
        write_frame(&mut writer, &reply)?;
    }
}
