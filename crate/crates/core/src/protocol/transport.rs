use std::collections::VecDeque;
use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use super::cloud::{CloudConfig, CloudSession};
use super::wire::Frame;
use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::store::Store;

/// A bidirectional frame channel from the client's point of view.
pub trait Transport {
    fn send(&mut self, frame: &Frame) -> Result<()>;
    fn recv(&mut self) -> Result<Frame>;
}

/// In-process transport that hands frames straight to a [`CloudSession`].
#[derive(Debug)]
pub struct Loopback {
    cloud: CloudSession,
    pending: VecDeque<Frame>,
}

impl Loopback {
    pub fn new(cloud: CloudSession) -> Self {
        Self { cloud, pending: VecDeque::new() }
    }

    pub fn cloud(&self) -> &CloudSession {
        &self.cloud
    }

    pub fn cloud_mut(&mut self) -> &mut CloudSession {
        &mut self.cloud
    }
}

impl Transport for Loopback {
    fn send(&mut self, frame: &Frame) -> Result<()> {
        self.pending.extend(self.cloud.handle(frame));
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame> {
        self.pending.pop_front().ok_or_else(|| Error::protocol("cloud sent nothing"))
    }
}

#[derive(Debug)]
pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpTransport {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { reader: BufReader::new(stream.try_clone()?), writer: BufWriter::new(stream) })
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, frame: &Frame) -> Result<()> {
        frame.write_to(&mut self.writer)
    }

    fn recv(&mut self) -> Result<Frame> {
        Frame::read_from(&mut self.reader)?.ok_or_else(|| Error::protocol("connection closed by cloud"))
    }
}

/// Serves one connection until the peer closes it.
pub fn serve_connection(stream: TcpStream, mut session: CloudSession) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(frame) = Frame::read_from(&mut reader)? {
        for reply in session.handle(&frame) {
            reply.write_to(&mut writer)?;
        }
    }
    Ok(())
}

/// Accepts connections forever, one thread each, over a shared store.
/// With a seed, connection `i` draws from `seed + i`.
pub fn serve(listener: TcpListener, store: Arc<Store>, config: CloudConfig, seed: Option<u64>) -> Result<()> {
    for (i, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let rng = match seed {
            Some(s) => RandomSource::from_seed(s.wrapping_add(i as u64)),
            None => RandomSource::from_entropy(),
        };
        let session = CloudSession::new(Arc::clone(&store), config.clone(), rng);
        thread::spawn(move || {
            if let Err(e) = serve_connection(stream, session) {
                eprintln!("connection {i}: {e}");
            }
        });
    }
    Ok(())
}
