use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Mutex;

use keep_core::datagen::ImpressionRecord;
use keep_core::nncore::Matrix;
use keep_core::plugnet::{KnowledgeBatch, KnowledgeSource};
use keep_core::servingkit::{FOUND_ITEM, FOUND_USER};
use keep_core::KeepError;

use crate::error::{GkcError, Result};
use crate::protocol::{read_frame, write_frame, EntryStatus, Frame, LookupResponse, Quadruple};
use crate::store::VERSION_LATEST;

/// Blocking client holding one connection.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Client {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    fn call(&mut self, req: &Frame) -> Result<Frame> {
        write_frame(&mut self.writer, req)?;
        match read_frame(&mut self.reader)? {
            Some(Frame::Error { code, message }) => Err(GkcError::Remote { code, message }),
            Some(f) => Ok(f),
            None => Err(GkcError::Protocol("server closed the connection".into())),
        }
    }

    /// Entries come back in request order.
    pub fn lookup(&mut self, quads: &[Quadruple]) -> Result<LookupResponse> {
        match self.call(&Frame::LookupRequest(quads.to_vec()))? {
            Frame::LookupResponse(r) if r.entries.len() == quads.len() => Ok(r),
            Frame::LookupResponse(r) => Err(GkcError::Protocol(format!(
                "{} entries answered for {} requested",
                r.entries.len(),
                quads.len()
            ))),
            f => Err(GkcError::Protocol(format!("expected a lookup response, got type {}", f.frame_type()))),
        }
    }

    /// Ask the server to publish `version` from its snapshot directory.
    pub fn publish(&mut self, version: u32) -> Result<u32> {
        match self.call(&Frame::PublishNotice { version })? {
            Frame::PublishNotice { version } => Ok(version),
            f => Err(GkcError::Protocol(format!("expected a publish notice, got type {}", f.frame_type()))),
        }
    }
}

// keeps response frames well under the payload limit
const LOOKUP_CHUNK: usize = 4096;

/// Knowledge served over the network, pinned to one version or following
/// the latest.
pub struct ServiceKnowledge {
    client: Mutex<Client>,
    version: Option<u32>,
    dim: usize,
}

impl ServiceKnowledge {
    pub fn connect(addr: impl ToSocketAddrs, version: Option<u32>) -> Result<Self> {
        let mut client = Client::connect(addr)?;
        let v = version.unwrap_or(VERSION_LATEST);
        let probe = client.lookup(&[Quadruple {
            user: 0,
            item: 0,
            category: 0,
            version: v,
        }])?;
        if probe.entries[0].status == EntryStatus::VersionGone {
            return Err(GkcError::Rejected {
                version: v,
                reason: "not retained by the service".into(),
            });
        }
        Ok(ServiceKnowledge {
            client: Mutex::new(client),
            version,
            dim: probe.dim as usize,
        })
    }
}

impl KnowledgeSource for ServiceKnowledge {
    fn dim(&self) -> usize {
        self.dim
    }

    fn lookup(&self, records: &[&ImpressionRecord]) -> keep_core::Result<KnowledgeBatch> {
        let v = self.version.unwrap_or(VERSION_LATEST);
        let quads: Vec<Quadruple> = records
            .iter()
            .map(|r| Quadruple {
                user: r.user_id,
                item: r.item_id,
                category: r.category_id,
                version: v,
            })
            .collect();
        let mut vectors = Matrix::zeros(records.len(), self.dim);
        let mut missing = 0;
        let mut client = self.client.lock().unwrap_or_else(|e| e.into_inner());
        for (k, chunk) in quads.chunks(LOOKUP_CHUNK).enumerate() {
            let resp = client
                .lookup(chunk)
                .map_err(|e| KeepError::State(format!("knowledge service: {e}")))?;
            if resp.dim as usize != self.dim {
                return Err(KeepError::Shape {
                    context: "served knowledge",
                    expected: self.dim.to_string(),
                    actual: resp.dim.to_string(),
                });
            }
            for (n, e) in resp.entries.iter().enumerate() {
                if e.status == EntryStatus::VersionGone {
                    return Err(KeepError::State(format!("knowledge version {v} is no longer served")));
                }
                // the user-category slot is legitimately empty for unseen pairs
                if e.found & (FOUND_USER | FOUND_ITEM) != FOUND_USER | FOUND_ITEM {
                    missing += 1;
                }
                vectors.row_mut(k * LOOKUP_CHUNK + n).copy_from_slice(&e.values);
            }
        }
        Ok(KnowledgeBatch { vectors, missing })
    }

    fn version(&self) -> Option<u32> {
        self.version
    }
}
