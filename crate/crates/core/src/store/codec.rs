//! Byte layouts of the snapshot and journal files. All integers are
//! little-endian.
//!
//! Snapshot:
//!
//! ```text
//! magic            4  "ISWH"
//! format_version   u16
//! relation_count   u16   (25)
//! counts           u64 x relation_count, logical relation order
//! journal_seq      u64
//! body_len         u64
//! checksum         u64   first 8 bytes of SHA-256(body), read as LE
//! body             body_len bytes
//! ```
//!
//! Body: `u16` table count (18), then per table in alphabetical order a
//! `u64` next id, a `u64` row count, and the rows in primary-key order,
//! each a `u32` length followed by the row's JSON encoding.
//!
//! Journal: magic `"ISWJ"` and a `u16` version, then one frame per
//! committed mutation: `u32` payload length, JSON payload, `u64` checksum
//! of the payload (same checksum function). A truncated final frame is
//! treated as a torn write and ignored.

use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{JournalEntry, StoreError, Warehouse};
use crate::schema::{Record, Relation, Table};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"ISWH";
pub const JOURNAL_MAGIC: [u8; 4] = *b"ISWJ";
pub const FORMAT_VERSION: u16 = 1;

const FIXED_HEADER: usize = 4 + 2 + 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotHeader {
    pub format_version: u16,
    pub counts: Vec<(Relation, u64)>,
    pub journal_seq: u64,
    pub body_len: u64,
    pub checksum: u64,
}

impl SnapshotHeader {
    pub fn total_rows(&self) -> u64 {
        self.counts.iter().map(|(_, n)| n).sum()
    }
}

pub(crate) fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn encode_body(w: &Warehouse) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&(Table::ALL.len() as u16).to_le_bytes());
    for table in Table::ALL {
        let rows = w.table(table);
        body.extend_from_slice(&w.next_id(table).to_le_bytes());
        body.extend_from_slice(&(rows.len() as u64).to_le_bytes());
        for record in rows.values() {
            let json = serde_json::to_vec(record).expect("records serialize");
            body.extend_from_slice(&(json.len() as u32).to_le_bytes());
            body.extend_from_slice(&json);
        }
    }
    body
}

fn header_for(w: &Warehouse, body: &[u8]) -> SnapshotHeader {
    SnapshotHeader {
        format_version: FORMAT_VERSION,
        counts: w.counts().into_iter().map(|(r, n)| (r, n as u64)).collect(),
        journal_seq: w.journal_seq(),
        body_len: body.len() as u64,
        checksum: checksum(body),
    }
}

/// Canonical snapshot bytes: equal warehouse states give equal bytes.
pub fn encode_snapshot(w: &Warehouse) -> Vec<u8> {
    encode_snapshot_with_header(w).0
}

fn encode_snapshot_with_header(w: &Warehouse) -> (Vec<u8>, SnapshotHeader) {
    let body = encode_body(w);
    let header = header_for(w, &body);
    let mut out = Vec::with_capacity(body.len() + 256);
    out.extend_from_slice(&SNAPSHOT_MAGIC);
    out.extend_from_slice(&header.format_version.to_le_bytes());
    out.extend_from_slice(&(header.counts.len() as u16).to_le_bytes());
    for (_, n) in &header.counts {
        out.extend_from_slice(&n.to_le_bytes());
    }
    out.extend_from_slice(&header.journal_seq.to_le_bytes());
    out.extend_from_slice(&header.body_len.to_le_bytes());
    out.extend_from_slice(&header.checksum.to_le_bytes());
    out.extend_from_slice(&body);
    (out, header)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let Some(end) = end else {
            return Err(StoreError::Corrupt(format!(
                "unexpected end of data at byte {}",
                self.pos
            )));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

fn decode_header(c: &mut Cursor<'_>) -> Result<SnapshotHeader, StoreError> {
    if c.take(4)? != SNAPSHOT_MAGIC {
        return Err(StoreError::Corrupt("bad snapshot magic".into()));
    }
    let format_version = c.u16()?;
    if format_version != FORMAT_VERSION {
        return Err(StoreError::UnsupportedFormatVersion(format_version));
    }
    let relation_count = c.u16()? as usize;
    if relation_count != Relation::ALL.len() {
        return Err(StoreError::Corrupt(format!(
            "header lists {relation_count} relations"
        )));
    }
    let mut counts = Vec::with_capacity(relation_count);
    for relation in Relation::ALL {
        counts.push((relation, c.u64()?));
    }
    Ok(SnapshotHeader {
        format_version,
        counts,
        journal_seq: c.u64()?,
        body_len: c.u64()?,
        checksum: c.u64()?,
    })
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<(SnapshotHeader, Warehouse), StoreError> {
    if bytes.len() < FIXED_HEADER {
        return Err(StoreError::Corrupt(
            "snapshot shorter than its header".into(),
        ));
    }
    let mut c = Cursor { bytes, pos: 0 };
    let header = decode_header(&mut c)?;
    let body = &bytes[c.pos..];
    if body.len() as u64 != header.body_len {
        return Err(StoreError::Corrupt(format!(
            "body is {} bytes, header says {}",
            body.len(),
            header.body_len
        )));
    }
    let actual = checksum(body);
    if actual != header.checksum {
        return Err(StoreError::ChecksumMismatch {
            expected: header.checksum,
            actual,
        });
    }

    let mut c = Cursor {
        bytes: body,
        pos: 0,
    };
    if c.u16()? as usize != Table::ALL.len() {
        return Err(StoreError::Corrupt("unexpected table count".into()));
    }
    let mut next_ids = [1u64; 18];
    let mut rows = Vec::new();
    for table in Table::ALL {
        next_ids[table.index()] = c.u64()?;
        let n = c.u64()?;
        let mut last_id = 0;
        for _ in 0..n {
            let len = c.u32()? as usize;
            let record: Record = serde_json::from_slice(c.take(len)?)
                .map_err(|e| StoreError::Corrupt(format!("{table} row: {e}")))?;
            if record.table() != table || record.id() <= last_id {
                return Err(StoreError::Corrupt(format!("{table} rows out of order")));
            }
            last_id = record.id();
            rows.push(record);
        }
    }
    if c.pos != body.len() {
        return Err(StoreError::Corrupt("trailing bytes after body".into()));
    }
    let warehouse = Warehouse::from_rows(rows, next_ids, header.journal_seq)?;
    let derived: Vec<(Relation, u64)> = warehouse
        .counts()
        .into_iter()
        .map(|(r, n)| (r, n as u64))
        .collect();
    if derived != header.counts {
        return Err(StoreError::Corrupt(
            "header counts disagree with body".into(),
        ));
    }
    Ok((header, warehouse))
}

/// Writes the snapshot via a temporary file and an atomic rename.
pub fn save_snapshot(w: &Warehouse, path: &Path) -> Result<SnapshotHeader, StoreError> {
    let (bytes, header) = encode_snapshot_with_header(w);
    let tmp = path.with_extension("snap.tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(header)
}

pub fn load_snapshot(path: &Path) -> Result<Warehouse, StoreError> {
    let bytes = fs::read(path)?;
    decode_snapshot(&bytes).map(|(_, w)| w)
}

pub(crate) fn journal_header() -> Vec<u8> {
    let mut out = JOURNAL_MAGIC.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out
}

pub(crate) fn encode_journal_entry(entry: &JournalEntry) -> Vec<u8> {
    let payload = serde_json::to_vec(entry).expect("journal entries serialize");
    let mut out = Vec::with_capacity(payload.len() + 12);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum(&payload).to_le_bytes());
    out
}

/// Iterates the frames of a journal file.
pub struct JournalReader<R> {
    inner: R,
}

impl<R: Read> JournalReader<R> {
    pub fn new(mut inner: R) -> Result<Self, StoreError> {
        let mut head = [0u8; 6];
        inner.read_exact(&mut head).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => StoreError::Corrupt("journal header truncated".into()),
            _ => StoreError::Io(e),
        })?;
        if head[..4] != JOURNAL_MAGIC {
            return Err(StoreError::Corrupt("bad journal magic".into()));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedFormatVersion(version));
        }
        Ok(JournalReader { inner })
    }

    /// Next entry, `None` at a clean end or a torn final frame.
    pub fn next_entry(&mut self) -> Result<Option<JournalEntry>, StoreError> {
        let mut len = [0u8; 4];
        if !read_full(&mut self.inner, &mut len)? {
            return Ok(None);
        }
        let mut payload = vec![0u8; u32::from_le_bytes(len) as usize];
        let mut sum = [0u8; 8];
        if !read_full(&mut self.inner, &mut payload)? || !read_full(&mut self.inner, &mut sum)? {
            tracing::warn!("ignoring torn journal tail");
            return Ok(None);
        }
        let expected = u64::from_le_bytes(sum);
        let actual = checksum(&payload);
        if expected != actual {
            return Err(StoreError::ChecksumMismatch { expected, actual });
        }
        serde_json::from_slice(&payload)
            .map(Some)
            .map_err(|e| StoreError::Corrupt(format!("journal entry: {e}")))
    }
}

/// Fills `buf`; `false` if the reader ended first (even partway).
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> Result<bool, StoreError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => return Ok(false),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

pub fn read_journal(path: &Path) -> Result<Vec<JournalEntry>, StoreError> {
    let mut reader = JournalReader::new(io::BufReader::new(File::open(path)?))?;
    let mut out = Vec::new();
    while let Some(entry) = reader.next_entry()? {
        out.push(entry);
    }
    Ok(out)
}
