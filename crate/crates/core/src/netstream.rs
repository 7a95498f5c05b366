//! Length-prefixed publish/subscribe over TCP.
//!
//! Handshake, client first:
//!
//! ```text
//! client -> server   "SBSS"  u8 version (1)  u8 requested-kinds mask
//! server -> client   "SBSS"  u8 accepted-kinds mask
//! ```
//!
//! Then a sequence of messages, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     u32 length L of everything after this field (17 + payload)
//! 4       1     kind
//! 5       8     u64 seq, per kind, starting at 0
//! 13      8     u64 stream_time_ns
//! 21      L-17  payload
//! ```
//!
//! Payloads by kind:
//!
//! ```text
//! 1 RawPacket       u8 counter, u8 event, u16 n, n × f32 µV
//! 2 Frame           u16 channels, u16 samples, channels*samples × f32, column-major
//! 3 SourceEstimate  u32 n, n × f32
//! 4 RoiPower        u16 name length, UTF-8 name, f64 power
//! 5 FeatureVector   u16 n, n × f64
//! 6 EventMarker     u16 code, u16 label length, UTF-8 label
//! ```
//!
//! Every subscriber has its own bounded queue drained by a writer thread.
//! Publishing never blocks: a subscriber whose queue is full is
//! disconnected.

use std::io::{self, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_MAGIC: [u8; 4] = *b"SBSS";
pub const PROTOCOL_VERSION: u8 = 1;
pub const MAX_PAYLOAD: usize = 1 << 20;
pub const DEFAULT_SUBSCRIBER_BUFFER: usize = 1024;
const FIXED_HEADER: usize = 17;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: io::Error },
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("payload of {0} bytes exceeds the 1 MiB limit")]
    TooLarge(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageKind {
    RawPacket = 1,
    Frame = 2,
    SourceEstimate = 3,
    RoiPower = 4,
    FeatureVector = 5,
    EventMarker = 6,
}

impl MessageKind {
    pub const ALL: [MessageKind; 6] = [
        MessageKind::RawPacket,
        MessageKind::Frame,
        MessageKind::SourceEstimate,
        MessageKind::RoiPower,
        MessageKind::FeatureVector,
        MessageKind::EventMarker,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| *k as u8 == v)
    }

    fn bit(self) -> u8 {
        1 << (self as u8 - 1)
    }
}

impl std::str::FromStr for MessageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "raw" | "rawpacket" => Self::RawPacket,
            "frame" => Self::Frame,
            "source" | "sourceestimate" => Self::SourceEstimate,
            "roi" | "roipower" => Self::RoiPower,
            "feature" | "featurevector" => Self::FeatureVector,
            "event" | "eventmarker" => Self::EventMarker,
            _ => return Err(format!("unknown message kind {s:?}")),
        })
    }
}

/// Set of message kinds as a bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KindSet(pub u8);

impl KindSet {
    pub fn all() -> Self {
        Self::of(&MessageKind::ALL)
    }

    pub fn of(kinds: &[MessageKind]) -> Self {
        Self(kinds.iter().fold(0, |m, k| m | k.bit()))
    }

    pub fn contains(self, kind: MessageKind) -> bool {
        self.0 & kind.bit() != 0
    }

    pub fn intersect(self, other: KindSet) -> KindSet {
        KindSet(self.0 & other.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    RawPacket { counter: u8, event: u8, values_uv: Vec<f32> },
    Frame { channels: u16, samples: u16, data: Vec<f32> },
    SourceEstimate { values: Vec<f32> },
    RoiPower { name: String, power: f64 },
    FeatureVector { values: Vec<f64> },
    EventMarker { code: u16, label: String },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::RawPacket { .. } => MessageKind::RawPacket,
            Payload::Frame { .. } => MessageKind::Frame,
            Payload::SourceEstimate { .. } => MessageKind::SourceEstimate,
            Payload::RoiPower { .. } => MessageKind::RoiPower,
            Payload::FeatureVector { .. } => MessageKind::FeatureVector,
            Payload::EventMarker { .. } => MessageKind::EventMarker,
        }
    }

    fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), NetError> {
        let len16 = |n: usize, what: &str| -> Result<u16, NetError> {
            u16::try_from(n).map_err(|_| NetError::Malformed(format!("{what} length {n} exceeds u16")))
        };
        match self {
            Payload::RawPacket { counter, event, values_uv } => {
                out.push(*counter);
                out.push(*event);
                out.extend_from_slice(&len16(values_uv.len(), "channel")?.to_le_bytes());
                values_uv.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
            Payload::Frame { channels, samples, data } => {
                if data.len() != *channels as usize * *samples as usize {
                    return Err(NetError::Malformed(format!("frame {channels}x{samples} with {} values", data.len())));
                }
                out.extend_from_slice(&channels.to_le_bytes());
                out.extend_from_slice(&samples.to_le_bytes());
                data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
            Payload::SourceEstimate { values } => {
                let n = u32::try_from(values.len()).map_err(|_| NetError::TooLarge(values.len() * 4))?;
                out.extend_from_slice(&n.to_le_bytes());
                values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
            Payload::RoiPower { name, power } => {
                out.extend_from_slice(&len16(name.len(), "name")?.to_le_bytes());
                out.extend_from_slice(name.as_bytes());
                out.extend_from_slice(&power.to_le_bytes());
            }
            Payload::FeatureVector { values } => {
                out.extend_from_slice(&len16(values.len(), "feature")?.to_le_bytes());
                values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
            Payload::EventMarker { code, label } => {
                out.extend_from_slice(&code.to_le_bytes());
                out.extend_from_slice(&len16(label.len(), "label")?.to_le_bytes());
                out.extend_from_slice(label.as_bytes());
            }
        }
        Ok(())
    }

    fn decode(kind: MessageKind, b: &[u8]) -> Result<Self, NetError> {
        let mut r = Cursor { b, at: 0 };
        let p = match kind {
            MessageKind::RawPacket => {
                let counter = r.u8()?;
                let event = r.u8()?;
                let n = r.u16()? as usize;
                Payload::RawPacket { counter, event, values_uv: (0..n).map(|_| r.f32()).collect::<Result<_, _>>()? }
            }
            MessageKind::Frame => {
                let channels = r.u16()?;
                let samples = r.u16()?;
                let n = channels as usize * samples as usize;
                Payload::Frame { channels, samples, data: (0..n).map(|_| r.f32()).collect::<Result<_, _>>()? }
            }
            MessageKind::SourceEstimate => {
                let n = r.u32()? as usize;
                if n > b.len() / 4 {
                    return Err(NetError::Malformed(format!("{n} values do not fit the payload")));
                }
                Payload::SourceEstimate { values: (0..n).map(|_| r.f32()).collect::<Result<_, _>>()? }
            }
            MessageKind::RoiPower => {
                let n = r.u16()? as usize;
                let name = r.string(n)?;
                Payload::RoiPower { name, power: r.f64()? }
            }
            MessageKind::FeatureVector => {
                let n = r.u16()? as usize;
                Payload::FeatureVector { values: (0..n).map(|_| r.f64()).collect::<Result<_, _>>()? }
            }
            MessageKind::EventMarker => {
                let code = r.u16()?;
                let n = r.u16()? as usize;
                Payload::EventMarker { code, label: r.string(n)? }
            }
        };
        if r.at != b.len() {
            return Err(NetError::Malformed(format!("{} trailing bytes", b.len() - r.at)));
        }
        Ok(p)
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NetError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.b.len()).ok_or_else(|| NetError::Malformed("payload truncated".into()))?;
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, NetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, NetError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, NetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self, n: usize) -> Result<String, NetError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| NetError::Malformed("label is not UTF-8".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMessage {
    pub seq: u64,
    pub stream_time_ns: u64,
    pub payload: Payload,
}

impl StreamMessage {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    pub fn encode(&self) -> Result<Vec<u8>, NetError> {
        let mut out = vec![0u8; 4];
        out.push(self.kind() as u8);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.stream_time_ns.to_le_bytes());
        self.payload.encode_into(&mut out)?;
        let payload = out.len() - 4 - FIXED_HEADER;
        if payload > MAX_PAYLOAD {
            return Err(NetError::TooLarge(payload));
        }
        let len = (out.len() - 4) as u32;
        out[..4].copy_from_slice(&len.to_le_bytes());
        Ok(out)
    }

    /// Decodes one message body (everything after the length prefix).
    pub fn decode_body(body: &[u8]) -> Result<Self, NetError> {
        if body.len() < FIXED_HEADER {
            return Err(NetError::Malformed(format!("{}-byte body is shorter than the header", body.len())));
        }
        let kind = MessageKind::from_u8(body[0]).ok_or_else(|| NetError::Malformed(format!("unknown kind {}", body[0])))?;
        let seq = u64::from_le_bytes(body[1..9].try_into().unwrap());
        let stream_time_ns = u64::from_le_bytes(body[9..17].try_into().unwrap());
        Ok(Self { seq, stream_time_ns, payload: Payload::decode(kind, &body[FIXED_HEADER..])? })
    }

    /// Reads one message; `Ok(None)` on a clean end of stream.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Self>, NetError> {
        let mut len = [0u8; 4];
        match read_full(r, &mut len)? {
            0 => return Ok(None),
            4 => {}
            n => return Err(NetError::Malformed(format!("stream ended {n} bytes into a length prefix"))),
        }
        let len = u32::from_le_bytes(len) as usize;
        if len < FIXED_HEADER {
            return Err(NetError::Malformed(format!("length {len} below header size")));
        }
        if len - FIXED_HEADER > MAX_PAYLOAD {
            return Err(NetError::TooLarge(len - FIXED_HEADER));
        }
        let mut body = vec![0u8; len];
        if read_full(r, &mut body)? != len {
            return Err(NetError::Malformed("stream ended inside a message".into()));
        }
        Self::decode_body(&body).map(Some)
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerConfig {
    /// Messages queued per subscriber before it is dropped.
    pub subscriber_buffer: usize,
    /// Kernel send buffer for subscriber sockets; `None` keeps the OS
    /// default.
    pub send_buffer_bytes: Option<usize>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { subscriber_buffer: DEFAULT_SUBSCRIBER_BUFFER, send_buffer_bytes: None }
    }
}

struct Subscriber {
    id: u64,
    kinds: KindSet,
    tx: SyncSender<Arc<Vec<u8>>>,
    socket: TcpStream,
}

#[derive(Default)]
struct Shared {
    subscribers: Mutex<Vec<Subscriber>>,
    seqs: Mutex<[u64; 7]>,
    lag_disconnects: AtomicU64,
    stop: AtomicBool,
    writers: Mutex<Vec<JoinHandle<()>>>,
}

/// Fan-out server. Dropping it stops accepting and lets writers drain.
pub struct StreamServer {
    addr: SocketAddr,
    kinds: KindSet,
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
}

/// Binds and starts accepting subscribers for the given kinds.
pub fn serve(bind_addr: &str, kinds: KindSet, config: ServerConfig) -> Result<StreamServer, NetError> {
    let bind_err = |source| NetError::BindFailure { addr: bind_addr.to_string(), source };
    let listener = TcpListener::bind(bind_addr).map_err(bind_err)?;
    listener.set_nonblocking(true).map_err(bind_err)?;
    let addr = listener.local_addr().map_err(bind_err)?;
    let shared = Arc::new(Shared::default());
    let acceptor = {
        let shared = shared.clone();
        std::thread::Builder::new()
            .name("sbs-accept".into())
            .spawn(move || accept_loop(listener, kinds, config, shared))
            .map_err(bind_err)?
    };
    Ok(StreamServer { addr, kinds, shared, acceptor: Some(acceptor) })
}

fn accept_loop(listener: TcpListener, kinds: KindSet, config: ServerConfig, shared: Arc<Shared>) {
    let mut next_id = 0u64;
    while !shared.stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                next_id += 1;
                if let Err(e) = admit(stream, kinds, config, &shared, next_id) {
                    log::warn!("subscriber {peer} rejected: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn admit(mut stream: TcpStream, kinds: KindSet, config: ServerConfig, shared: &Arc<Shared>, id: u64) -> Result<(), NetError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut hello = [0u8; 6];
    stream.read_exact(&mut hello)?;
    if hello[..4] != PROTOCOL_MAGIC || hello[4] != PROTOCOL_VERSION {
        return Err(NetError::Handshake(format!("bad greeting {hello:?}")));
    }
    let accepted = kinds.intersect(KindSet(hello[5]));
    if let Some(n) = config.send_buffer_bytes {
        socket2::SockRef::from(&stream).set_send_buffer_size(n)?;
    }
    let (tx, rx) = sync_channel::<Arc<Vec<u8>>>(config.subscriber_buffer.max(1));
    // Registered before the reply so nothing published after the client
    // sees the reply can be missed; queued messages wait for the writer.
    shared.subscribers.lock().unwrap().push(Subscriber { id, kinds: accepted, tx, socket: stream.try_clone()? });
    let mut reply = PROTOCOL_MAGIC.to_vec();
    reply.push(accepted.0);
    if let Err(e) = stream.write_all(&reply) {
        shared.subscribers.lock().unwrap().retain(|s| s.id != id);
        return Err(e.into());
    }
    let writer = std::thread::Builder::new().name(format!("sbs-sub-{id}")).spawn(move || {
        for msg in rx {
            if stream.write_all(&msg).is_err() {
                break;
            }
        }
        let _ = stream.shutdown(Shutdown::Both);
    })?;
    shared.writers.lock().unwrap().push(writer);
    Ok(())
}

impl StreamServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn kinds(&self) -> KindSet {
        self.kinds
    }

    pub fn subscriber_count(&self) -> usize {
        self.shared.subscribers.lock().unwrap().len()
    }

    /// Subscribers dropped because their queue overflowed.
    pub fn lag_disconnects(&self) -> u64 {
        self.shared.lag_disconnects.load(Ordering::Relaxed)
    }

    /// Sends a message to every subscriber of its kind and returns its
    /// sequence number. Never blocks on a subscriber.
    pub fn publish(&self, stream_time_ns: u64, payload: Payload) -> Result<u64, NetError> {
        let kind = payload.kind();
        let mut subs = self.shared.subscribers.lock().unwrap();
        let seq = {
            let mut seqs = self.shared.seqs.lock().unwrap();
            let s = seqs[kind as usize];
            seqs[kind as usize] += 1;
            s
        };
        if !subs.iter().any(|s| s.kinds.contains(kind)) {
            return Ok(seq);
        }
        let bytes = Arc::new(StreamMessage { seq, stream_time_ns, payload }.encode()?);
        subs.retain(|s| {
            if !s.kinds.contains(kind) {
                return true;
            }
            match s.tx.try_send(bytes.clone()) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => {
                    log::warn!("subscriber {} lagging; disconnecting", s.id);
                    self.shared.lag_disconnects.fetch_add(1, Ordering::Relaxed);
                    let _ = s.socket.shutdown(Shutdown::Both);
                    false
                }
                Err(TrySendError::Disconnected(_)) => false,
            }
        });
        Ok(seq)
    }

    /// Stops accepting, closes every queue and waits for writers to drain.
    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        self.shared.subscribers.lock().unwrap().clear();
        let writers: Vec<JoinHandle<()>> = std::mem::take(&mut *self.shared.writers.lock().unwrap());
        for w in writers {
            let _ = w.join();
        }
    }
}

impl Drop for StreamServer {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

/// Client side of a subscription.
pub struct Subscription {
    reader: BufReader<TcpStream>,
    accepted: KindSet,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SubscribeOptions {
    /// Kernel receive buffer; `None` keeps the OS default.
    pub recv_buffer_bytes: Option<usize>,
}

pub fn subscribe(addr: impl ToSocketAddrs, kinds: KindSet) -> Result<Subscription, NetError> {
    subscribe_with(addr, kinds, SubscribeOptions::default())
}

pub fn subscribe_with(addr: impl ToSocketAddrs, kinds: KindSet, opts: SubscribeOptions) -> Result<Subscription, NetError> {
    let addr = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| NetError::Handshake("address resolves to nothing".into()))?;
    let socket = socket2::Socket::new(socket2::Domain::for_address(addr), socket2::Type::STREAM, None)?;
    if let Some(n) = opts.recv_buffer_bytes {
        socket.set_recv_buffer_size(n)?;
    }
    socket.connect(&addr.into())?;
    let mut stream: TcpStream = socket.into();
    stream.set_nodelay(true)?;
    let mut hello = PROTOCOL_MAGIC.to_vec();
    hello.push(PROTOCOL_VERSION);
    hello.push(kinds.0);
    stream.write_all(&hello)?;
    let mut reply = [0u8; 5];
    stream.read_exact(&mut reply).map_err(|e| NetError::Handshake(e.to_string()))?;
    if reply[..4] != PROTOCOL_MAGIC {
        return Err(NetError::Handshake(format!("bad reply {reply:?}")));
    }
    Ok(Subscription { reader: BufReader::new(stream), accepted: KindSet(reply[4]) })
}

impl Subscription {
    pub fn accepted(&self) -> KindSet {
        self.accepted
    }

    pub fn set_read_timeout(&self, t: Option<Duration>) -> Result<(), NetError> {
        self.reader.get_ref().set_read_timeout(t)?;
        Ok(())
    }

    /// Next message, or `None` once the server closes the connection.
    pub fn next_message(&mut self) -> Result<Option<StreamMessage>, NetError> {
        StreamMessage::read_from(&mut self.reader)
    }
}

impl Iterator for Subscription {
    type Item = Result<StreamMessage, NetError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_message().transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_roi_power() {
        let msg = StreamMessage {
            seq: 2,
            stream_time_ns: 0x0102,
            payload: Payload::RoiPower { name: "L".into(), power: 1.5 },
        };
        let bytes = msg.encode().unwrap();
        let mut want = vec![
            28, 0, 0, 0, // 17 + 2 + 1 + 8
            4, // RoiPower
            2, 0, 0, 0, 0, 0, 0, 0, // seq
            0x02, 0x01, 0, 0, 0, 0, 0, 0, // time
            1, 0, b'L',
        ];
        want.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0xF8, 0x3F]); // 1.5f64
        assert_eq!(bytes, want);
        assert_eq!(StreamMessage::read_from(&mut &bytes[..]).unwrap().unwrap(), msg);
    }

    #[test]
    fn golden_raw_packet() {
        let msg = StreamMessage {
            seq: 0,
            stream_time_ns: 0,
            payload: Payload::RawPacket { counter: 128, event: 2, values_uv: vec![1.0, -2.0] },
        };
        let bytes = msg.encode().unwrap();
        assert_eq!(&bytes[..5], &[29, 0, 0, 0, 1]);
        assert_eq!(&bytes[21..25], &[128, 2, 2, 0]);
        assert_eq!(&bytes[25..29], &[0, 0, 0x80, 0x3F]);
        assert_eq!(&bytes[29..33], &[0, 0, 0, 0xC0]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(StreamMessage::read_from(&mut &[5u8, 0, 0, 0, 1][..]).is_err());
        let mut huge = ((MAX_PAYLOAD + 18) as u32).to_le_bytes().to_vec();
        huge.push(1);
        assert!(matches!(StreamMessage::read_from(&mut &huge[..]), Err(NetError::TooLarge(_))));
        let too_big = Payload::SourceEstimate { values: vec![0.0; MAX_PAYLOAD / 4 + 1] };
        assert!(matches!(StreamMessage { seq: 0, stream_time_ns: 0, payload: too_big }.encode(), Err(NetError::TooLarge(_))));
        assert!(StreamMessage::read_from(&mut &[][..]).unwrap().is_none());
    }

    fn payload_strategy() -> impl Strategy<Value = Payload> {
        prop_oneof![
            (any::<u8>(), any::<u8>(), prop::collection::vec(-1e4f32..1e4, 0..20))
                .prop_map(|(counter, event, values_uv)| Payload::RawPacket { counter, event, values_uv }),
            (1u16..4, 1u16..4).prop_map(|(c, s)| Payload::Frame { channels: c, samples: s, data: vec![0.5; (c * s) as usize] }),
            prop::collection::vec(-1e3f32..1e3, 0..50).prop_map(|values| Payload::SourceEstimate { values }),
            ("[A-Za-z]{0,12}", -1e6f64..1e6).prop_map(|(name, power)| Payload::RoiPower { name, power }),
            prop::collection::vec(-5.0f64..5.0, 0..8).prop_map(|values| Payload::FeatureVector { values }),
            (any::<u16>(), "[a-z]{0,8}").prop_map(|(code, label)| Payload::EventMarker { code, label }),
        ]
    }

    proptest! {
        #[test]
        fn codec_round_trip(seq in any::<u64>(), t in any::<u64>(), payload in payload_strategy()) {
            let msg = StreamMessage { seq, stream_time_ns: t, payload };
            let bytes = msg.encode().unwrap();
            prop_assert_eq!(StreamMessage::read_from(&mut &bytes[..]).unwrap().unwrap(), msg);
        }

        #[test]
        fn decode_is_total(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = StreamMessage::decode_body(&bytes);
        }
    }

    #[test]
    fn kind_mask() {
        let k = KindSet::of(&[MessageKind::RoiPower, MessageKind::EventMarker]);
        assert!(k.contains(MessageKind::RoiPower) && !k.contains(MessageKind::Frame));
        assert_eq!(KindSet::all().0, 0b11_1111);
    }

    #[test]
    fn bind_failure_is_reported() {
        let s = serve("127.0.0.1:0", KindSet::all(), ServerConfig::default()).unwrap();
        let taken = s.local_addr().to_string();
        assert!(matches!(serve(&taken, KindSet::all(), ServerConfig::default()), Err(NetError::BindFailure { .. })));
    }

    #[test]
    fn fan_out_in_order() {
        let server = serve("127.0.0.1:0", KindSet::all(), ServerConfig::default()).unwrap();
        let addr = server.local_addr();
        let mut a = subscribe(addr, KindSet::all()).unwrap();
        let mut b = subscribe(addr, KindSet::of(&[MessageKind::RoiPower])).unwrap();
        assert_eq!(b.accepted(), KindSet::of(&[MessageKind::RoiPower]));
        for i in 0..50u64 {
            server.publish(i, Payload::RoiPower { name: "L".into(), power: i as f64 }).unwrap();
            server.publish(i, Payload::EventMarker { code: 1, label: "Left".into() }).unwrap();
        }
        server.shutdown();
        let got_a: Vec<StreamMessage> = a.by_ref().map(|m| m.unwrap()).collect();
        let got_b: Vec<StreamMessage> = b.by_ref().map(|m| m.unwrap()).collect();
        assert_eq!(got_a.len(), 100);
        let roi_a: Vec<_> = got_a.iter().filter(|m| m.kind() == MessageKind::RoiPower).cloned().collect();
        assert_eq!(roi_a, got_b);
        assert!(got_b.iter().enumerate().all(|(i, m)| m.seq == i as u64));
    }
}
