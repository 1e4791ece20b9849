//! Block delivery over loopback TCP.
//!
//! The subscriber opens a connection and sends the channel name as a
//! length-prefixed string; the orderer answers one status byte (1 = joined,
//! 0 = unknown channel) and then streams frames of
//! `u32 length ‖ u64 cut_at_ns ‖ block bytes`, all integers big-endian.
//! The stream ends when the orderer shuts down.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crossbeam_channel::{bounded, Sender};
use ledgerbench_core::codec::{Decode, Encode};
use ledgerbench_core::Block;

use super::{Delivery, Orderer};

const MAX_FRAME: u32 = 256 << 20;

fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)
}

fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

/// Accepts exactly `expected` subscriber connections, registering each
/// with `orderer`, then stops listening. Call before starting the orderer.
pub fn serve(orderer: Arc<Orderer>, listener: TcpListener, expected: usize) -> JoinHandle<io::Result<()>> {
    thread::Builder::new()
        .name("deliver-accept".into())
        .spawn(move || {
            for _ in 0..expected {
                let (stream, _) = listener.accept()?;
                stream.set_nodelay(true)?;
                let mut reader = BufReader::new(stream.try_clone()?);
                let mut stream = stream;
                let channel = match read_frame(&mut reader)? {
                    Some(name) => String::from_utf8_lossy(&name).into_owned(),
                    None => continue,
                };
                let (tx, rx) = bounded::<Delivery>(16);
                if orderer.subscribe(&channel, tx).is_err() {
                    stream.write_all(&[0])?;
                    continue;
                }
                stream.write_all(&[1])?;
                thread::Builder::new().name(format!("deliver-{channel}")).spawn(move || {
                    let mut out = BufWriter::new(stream);
                    for d in rx {
                        let mut payload = d.cut_at_ns.to_be_bytes().to_vec();
                        payload.extend_from_slice(&d.block.to_bytes());
                        if write_frame(&mut out, &payload).and_then(|_| out.flush()).is_err() {
                            break;
                        }
                    }
                })?;
            }
            Ok(())
        })
        .expect("spawn delivery acceptor")
}

/// Subscribes to `channel` at `addr` and forwards every received block to
/// `sink`. Returns once the orderer has acknowledged the subscription.
pub fn connect(addr: SocketAddr, channel: &str, sink: Sender<Delivery>) -> io::Result<JoinHandle<io::Result<()>>> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    write_frame(&mut stream, channel.as_bytes())?;
    let mut status = [0u8; 1];
    stream.read_exact(&mut status)?;
    if status[0] != 1 {
        return Err(io::Error::new(io::ErrorKind::NotFound, format!("orderer has no channel {channel:?}")));
    }
    let handle = thread::Builder::new().name(format!("recv-{channel}")).spawn(move || {
        let mut reader = BufReader::new(stream);
        while let Some(frame) = read_frame(&mut reader)? {
            if frame.len() < 8 {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "short frame"));
            }
            let cut_at_ns = u64::from_be_bytes(frame[..8].try_into().expect("8 bytes"));
            let block =
                Block::from_bytes(&frame[8..]).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
            if sink.send(Delivery { block: Arc::new(block), cut_at_ns }).is_err() {
                break;
            }
        }
        Ok(())
    })?;
    Ok(handle)
}
