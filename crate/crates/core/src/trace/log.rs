//! Per-thread binary logs.
//!
//! Each thread owns one log. Events are buffered; a full buffer is encoded,
//! compressed and written out as one chunk. A log directory holds one
//! `t<tid>.bin` file per thread.
//!
//! File layout:
//!
//! ```text
//! "OSLOG" version:u8
//! chunk*
//! ```
//!
//! Chunk layout (integers little endian):
//!
//! ```text
//! "OSCK" codec:u8 tid:u32 first_seq:u64 uncompressed_len:u32 compressed_len:u32
//! payload[compressed_len] crc32(uncompressed payload):u32
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use super::{EventKind, Mat, MutexName, Tid, TraceError, TraceEvent};

pub const FILE_MAGIC: &[u8; 5] = b"OSLOG";
pub const FILE_VERSION: u8 = 1;
pub const CHUNK_MAGIC: &[u8; 4] = b"OSCK";
pub const DEFAULT_CAPACITY: usize = 4096;

/// Payload compression. The id is stored in every chunk header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Codec {
    None,
    #[default]
    Deflate,
}

impl Codec {
    pub fn id(self) -> u8 {
        match self {
            Codec::None => 0,
            Codec::Deflate => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self, TraceError> {
        match id {
            0 => Ok(Codec::None),
            1 => Ok(Codec::Deflate),
            other => Err(TraceError::UnknownCodec(other)),
        }
    }

    fn compress(self, raw: &[u8]) -> io::Result<Vec<u8>> {
        match self {
            Codec::None => Ok(raw.to_vec()),
            Codec::Deflate => {
                let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
                enc.write_all(raw)?;
                enc.finish()
            }
        }
    }

    fn decompress(self, data: &[u8], expected_len: usize) -> io::Result<Vec<u8>> {
        match self {
            Codec::None => Ok(data.to_vec()),
            Codec::Deflate => {
                let mut out = Vec::with_capacity(expected_len);
                DeflateDecoder::new(data).read_to_end(&mut out)?;
                Ok(out)
            }
        }
    }
}

/// One framed, compressed run of a single thread's events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceChunk {
    pub tid: Tid,
    pub first_seq: u64,
    pub codec: Codec,
    pub uncompressed_len: u32,
    pub payload: Vec<u8>,
    pub checksum: u32,
}

impl TraceChunk {
    pub fn encode(tid: Tid, events: &[TraceEvent], codec: Codec) -> Result<Self, TraceError> {
        let first_seq = events.first().map(|e| e.seq).unwrap_or(0);
        let mut raw = Vec::new();
        let mut prev = first_seq;
        for ev in events {
            if ev.tid != tid {
                return Err(TraceError::WrongLog {
                    log_tid: tid,
                    event_tid: ev.tid,
                });
            }
            encode_event(&mut raw, ev, prev);
            prev = ev.seq;
        }
        let checksum = crc32fast::hash(&raw);
        let uncompressed_len = u32::try_from(raw.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "chunk too large"))?;
        Ok(TraceChunk {
            tid,
            first_seq,
            codec,
            uncompressed_len,
            payload: codec.compress(&raw)?,
            checksum,
        })
    }

    pub fn decode(&self) -> Result<Vec<TraceEvent>, TraceError> {
        let corrupt = |reason: String| TraceError::CorruptChunk {
            tid: self.tid,
            first_seq: self.first_seq,
            reason,
        };
        let raw = self
            .codec
            .decompress(&self.payload, self.uncompressed_len as usize)
            .map_err(|e| corrupt(format!("decompression failed: {e}")))?;
        if raw.len() != self.uncompressed_len as usize {
            return Err(corrupt(format!(
                "decompressed {} bytes, header says {}",
                raw.len(),
                self.uncompressed_len
            )));
        }
        if crc32fast::hash(&raw) != self.checksum {
            return Err(corrupt("checksum mismatch".into()));
        }
        let mut cur = Cursor { buf: &raw, pos: 0 };
        let mut out = Vec::new();
        let mut prev = self.first_seq;
        while !cur.done() {
            let ev = decode_event(&mut cur, self.tid, prev).ok_or_else(|| corrupt("malformed event".into()))?;
            prev = ev.seq;
            out.push(ev);
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(CHUNK_MAGIC)?;
        w.write_all(&[self.codec.id()])?;
        w.write_all(&self.tid.to_le_bytes())?;
        w.write_all(&self.first_seq.to_le_bytes())?;
        w.write_all(&self.uncompressed_len.to_le_bytes())?;
        let clen = u32::try_from(self.payload.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "chunk too large"))?;
        w.write_all(&clen.to_le_bytes())?;
        w.write_all(&self.payload)?;
        w.write_all(&self.checksum.to_le_bytes())
    }

    /// Read the next chunk, or `None` at a clean end of stream.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Self>, TraceError> {
        let mut magic = [0u8; 4];
        match read_exact_or_eof(r, &mut magic)? {
            0 => return Ok(None),
            4 => {}
            _ => return Err(TraceError::CorruptLog("truncated chunk header".into())),
        }
        if &magic != CHUNK_MAGIC {
            return Err(TraceError::CorruptLog("bad chunk magic".into()));
        }
        let mut head = [0u8; 1 + 4 + 8 + 4 + 4];
        r.read_exact(&mut head)
            .map_err(|_| TraceError::CorruptLog("truncated chunk header".into()))?;
        let codec_id = head[0];
        let tid = u32::from_le_bytes(head[1..5].try_into().unwrap());
        let first_seq = u64::from_le_bytes(head[5..13].try_into().unwrap());
        let uncompressed_len = u32::from_le_bytes(head[13..17].try_into().unwrap());
        let clen = u32::from_le_bytes(head[17..21].try_into().unwrap()) as usize;
        let corrupt = |reason: &str| TraceError::CorruptChunk {
            tid,
            first_seq,
            reason: reason.to_string(),
        };
        let codec = Codec::from_id(codec_id)?;
        let mut payload = Vec::new();
        r.by_ref()
            .take(clen as u64)
            .read_to_end(&mut payload)
            .map_err(TraceError::Io)?;
        if payload.len() != clen {
            return Err(corrupt("truncated payload"));
        }
        let mut sum = [0u8; 4];
        r.read_exact(&mut sum).map_err(|_| corrupt("missing checksum"))?;
        Ok(Some(TraceChunk {
            tid,
            first_seq,
            codec,
            uncompressed_len,
            payload,
            checksum: u32::from_le_bytes(sum),
        }))
    }
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

/// Buffered writer for one thread's log.
#[derive(Debug)]
pub struct ThreadLog<W: Write> {
    tid: Tid,
    capacity: usize,
    codec: Codec,
    buffer: Vec<TraceEvent>,
    last_seq: Option<u64>,
    chunks: usize,
    sink: W,
}

impl<W: Write> ThreadLog<W> {
    pub fn new(tid: Tid, mut sink: W, capacity: usize, codec: Codec) -> Result<Self, TraceError> {
        sink.write_all(FILE_MAGIC)?;
        sink.write_all(&[FILE_VERSION])?;
        Ok(ThreadLog {
            tid,
            capacity: capacity.max(1),
            codec,
            buffer: Vec::with_capacity(capacity.max(1)),
            last_seq: None,
            chunks: 0,
            sink,
        })
    }

    pub fn tid(&self) -> Tid {
        self.tid
    }

    /// Number of chunks written so far.
    pub fn chunks_flushed(&self) -> usize {
        self.chunks
    }

    pub fn append_event(&mut self, event: TraceEvent) -> Result<(), TraceError> {
        if event.tid != self.tid {
            return Err(TraceError::WrongLog {
                log_tid: self.tid,
                event_tid: event.tid,
            });
        }
        if let Some(prev) = self.last_seq {
            if event.seq <= prev {
                return Err(TraceError::NonMonotone {
                    prev,
                    next: event.seq,
                });
            }
        }
        self.last_seq = Some(event.seq);
        self.buffer.push(event);
        if self.buffer.len() >= self.capacity {
            self.flush_buffer()?;
        }
        Ok(())
    }

    fn flush_buffer(&mut self) -> Result<(), TraceError> {
        if self.buffer.is_empty() {
            return Ok(());
        }
        let chunk = TraceChunk::encode(self.tid, &self.buffer, self.codec)?;
        chunk.write_to(&mut self.sink)?;
        self.buffer.clear();
        self.chunks += 1;
        Ok(())
    }

    /// Flush the partial buffer and hand back the sink.
    pub fn close(mut self) -> Result<W, TraceError> {
        self.flush_buffer()?;
        self.sink.flush()?;
        Ok(self.sink)
    }
}

/// Reads every chunk of one thread's log stream.
pub struct LogReader<R: Read> {
    inner: R,
}

impl<R: Read> LogReader<R> {
    pub fn new(mut inner: R) -> Result<Self, TraceError> {
        let mut head = [0u8; 6];
        let n = read_exact_or_eof(&mut inner, &mut head)?;
        if n != head.len() || &head[..5] != FILE_MAGIC {
            return Err(TraceError::CorruptLog("missing log file header".into()));
        }
        if head[5] != FILE_VERSION {
            return Err(TraceError::Version(head[5].to_string()));
        }
        Ok(LogReader { inner })
    }

    pub fn next_chunk(&mut self) -> Result<Option<TraceChunk>, TraceError> {
        TraceChunk::read_from(&mut self.inner)
    }

    /// Decode all remaining events, checking tid and seq order.
    pub fn read_events(mut self, expect_tid: Option<Tid>) -> Result<Vec<TraceEvent>, TraceError> {
        let mut out: Vec<TraceEvent> = Vec::new();
        while let Some(chunk) = self.next_chunk()? {
            if let Some(t) = expect_tid {
                if chunk.tid != t {
                    return Err(TraceError::CorruptLog(format!(
                        "chunk for thread {} found in log of thread {t}",
                        chunk.tid
                    )));
                }
            }
            let events = chunk.decode()?;
            if events.first().map(|e| e.seq) != Some(chunk.first_seq) {
                return Err(TraceError::CorruptChunk {
                    tid: chunk.tid,
                    first_seq: chunk.first_seq,
                    reason: "first_seq does not match payload".into(),
                });
            }
            for ev in events {
                if let Some(prev) = out.last() {
                    if ev.seq <= prev.seq {
                        return Err(TraceError::CorruptLog(format!(
                            "thread {} log is not seq-ordered ({} after {})",
                            ev.tid, ev.seq, prev.seq
                        )));
                    }
                }
                out.push(ev);
            }
        }
        Ok(out)
    }
}

pub fn log_file_name(tid: Tid) -> String {
    format!("t{tid}.bin")
}

fn parse_log_file_name(name: &str) -> Option<Tid> {
    name.strip_prefix('t')?.strip_suffix(".bin")?.parse().ok()
}

/// Split an interleaved trace into per-thread logs under `dir`.
pub fn write_log_dir(
    dir: &Path,
    events: &[TraceEvent],
    capacity: usize,
    codec: Codec,
) -> Result<Vec<PathBuf>, TraceError> {
    super::check_monotone(events)?;
    fs::create_dir_all(dir)?;
    let mut logs: BTreeMap<Tid, ThreadLog<BufWriter<fs::File>>> = BTreeMap::new();
    for ev in events {
        if !logs.contains_key(&ev.tid) {
            let f = fs::File::create(dir.join(log_file_name(ev.tid)))?;
            logs.insert(ev.tid, ThreadLog::new(ev.tid, BufWriter::new(f), capacity, codec)?);
        }
        logs.get_mut(&ev.tid).unwrap().append_event(ev.clone())?;
    }
    let mut paths = Vec::new();
    for (tid, log) in logs {
        log.close()?;
        paths.push(dir.join(log_file_name(tid)));
    }
    Ok(paths)
}

/// Read every `t<tid>.bin` file in `dir`. Other files are ignored.
pub fn read_log_dir(dir: &Path) -> Result<BTreeMap<Tid, Vec<TraceEvent>>, TraceError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(tid) = name.to_str().and_then(parse_log_file_name) else {
            continue;
        };
        let reader = LogReader::new(BufReader::new(fs::File::open(entry.path())?))?;
        out.insert(tid, reader.read_events(Some(tid))?);
    }
    Ok(out)
}

/// Merge per-thread streams into one seq-ordered stream.
pub fn merge_logs<I>(logs: I) -> Result<Vec<TraceEvent>, TraceError>
where
    I: IntoIterator<Item = Vec<TraceEvent>>,
{
    let mut streams: Vec<std::iter::Peekable<std::vec::IntoIter<TraceEvent>>> =
        logs.into_iter().map(|v| v.into_iter().peekable()).collect();
    let mut out: Vec<TraceEvent> = Vec::new();
    loop {
        let mut best: Option<(usize, u64)> = None;
        for (i, s) in streams.iter_mut().enumerate() {
            if let Some(ev) = s.peek() {
                match best {
                    Some((_, seq)) if seq < ev.seq => {}
                    Some((_, seq)) if seq == ev.seq => {
                        return Err(TraceError::CorruptLog(format!(
                            "sequence number {seq} appears in more than one thread log"
                        )));
                    }
                    _ => best = Some((i, ev.seq)),
                }
            }
        }
        let Some((i, _)) = best else { break };
        let ev = streams[i].next().unwrap();
        if let Some(prev) = out.last() {
            if ev.seq <= prev.seq {
                return Err(TraceError::CorruptLog(format!(
                    "thread {} log is not seq-ordered ({} after {})",
                    ev.tid, ev.seq, prev.seq
                )));
            }
        }
        out.push(ev);
    }
    Ok(out)
}

// Payload encoding: tag byte, seq delta (LEB128), then arguments.

const TAG_PAR_BEGIN: u8 = 0;
const TAG_PAR_END: u8 = 1;
const TAG_TASK_BEGIN: u8 = 2;
const TAG_TASK_END: u8 = 3;
const TAG_READ: u8 = 4;
const TAG_WRITE: u8 = 5;
const TAG_ACQUIRE: u8 = 6;
const TAG_RELEASE: u8 = 7;
const TAG_BARRIER: u8 = 8;

fn put_varint(buf: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            buf.push(byte);
            return;
        }
        buf.push(byte | 0x80);
    }
}

fn put_name(buf: &mut Vec<u8>, name: &MutexName) {
    match name {
        MutexName::Anonymous => put_varint(buf, 0),
        MutexName::Named(s) => {
            put_varint(buf, s.len() as u64 + 1);
            buf.extend_from_slice(s.as_bytes());
        }
    }
}

fn encode_event(buf: &mut Vec<u8>, ev: &TraceEvent, prev_seq: u64) {
    let tag = match &ev.kind {
        EventKind::ParallelBegin { .. } => TAG_PAR_BEGIN,
        EventKind::ParallelEnd { .. } => TAG_PAR_END,
        EventKind::ImplicitTaskBegin => TAG_TASK_BEGIN,
        EventKind::ImplicitTaskEnd => TAG_TASK_END,
        EventKind::LoadStore { mat: Mat::R, .. } => TAG_READ,
        EventKind::LoadStore { mat: Mat::W, .. } => TAG_WRITE,
        EventKind::AcquireMutex { .. } => TAG_ACQUIRE,
        EventKind::ReleaseMutex { .. } => TAG_RELEASE,
        EventKind::Barrier { .. } => TAG_BARRIER,
    };
    buf.push(tag);
    put_varint(buf, ev.seq - prev_seq);
    match &ev.kind {
        EventKind::ParallelBegin { team_size } | EventKind::ParallelEnd { team_size } => {
            put_varint(buf, u64::from(*team_size))
        }
        EventKind::ImplicitTaskBegin | EventKind::ImplicitTaskEnd => {}
        EventKind::LoadStore { addr, .. } => put_varint(buf, *addr),
        EventKind::AcquireMutex { name } | EventKind::ReleaseMutex { name } => put_name(buf, name),
        EventKind::Barrier { bid } => put_varint(buf, *bid),
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn done(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn byte(&mut self) -> Option<u8> {
        let b = *self.buf.get(self.pos)?;
        self.pos += 1;
        Some(b)
    }

    fn varint(&mut self) -> Option<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.byte()?;
            v |= u64::from(b & 0x7f).checked_shl(shift)?;
            if b & 0x80 == 0 {
                return Some(v);
            }
        }
        None
    }

    fn name(&mut self) -> Option<MutexName> {
        match self.varint()? {
            0 => Some(MutexName::Anonymous),
            n => {
                let len = usize::try_from(n - 1).ok()?;
                let end = self.pos.checked_add(len)?;
                let bytes = self.buf.get(self.pos..end)?;
                self.pos = end;
                Some(MutexName::Named(String::from_utf8(bytes.to_vec()).ok()?))
            }
        }
    }
}

fn decode_event(cur: &mut Cursor<'_>, tid: Tid, prev_seq: u64) -> Option<TraceEvent> {
    let tag = cur.byte()?;
    let seq = prev_seq.checked_add(cur.varint()?)?;
    let kind = match tag {
        TAG_PAR_BEGIN => EventKind::ParallelBegin {
            team_size: u32::try_from(cur.varint()?).ok()?,
        },
        TAG_PAR_END => EventKind::ParallelEnd {
            team_size: u32::try_from(cur.varint()?).ok()?,
        },
        TAG_TASK_BEGIN => EventKind::ImplicitTaskBegin,
        TAG_TASK_END => EventKind::ImplicitTaskEnd,
        TAG_READ => EventKind::LoadStore {
            addr: cur.varint()?,
            mat: Mat::R,
        },
        TAG_WRITE => EventKind::LoadStore {
            addr: cur.varint()?,
            mat: Mat::W,
        },
        TAG_ACQUIRE => EventKind::AcquireMutex { name: cur.name()? },
        TAG_RELEASE => EventKind::ReleaseMutex { name: cur.name()? },
        TAG_BARRIER => EventKind::Barrier { bid: cur.varint()? },
        _ => return None,
    };
    Some(TraceEvent::new(seq, tid, kind))
}
