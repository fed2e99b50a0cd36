//! Binary tag files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes  magic "LUNATAGS"
//! offset 8   u32      format version (1)
//! offset 12  u32      reserved, zero
//! offset 16  records, 16 bytes each:
//!            u64 time_ps | u8 channel | u8 flags | 6 bytes zero
//! ```
//!
//! Records must be non-decreasing in time.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{TimeTag, MAX_CHANNELS};

pub const MAGIC: [u8; 8] = *b"LUNATAGS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum TagFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic at offset 0")]
    BadMagic,
    #[error("unsupported tag file version {found} at offset 8")]
    UnsupportedVersion { found: u32 },
    #[error("truncated {what} at offset {offset}")]
    Truncated { what: &'static str, offset: u64 },
    #[error("record at offset {offset} is earlier than its predecessor")]
    OutOfOrder { offset: u64 },
    #[error("record at offset {offset} has invalid channel {channel}")]
    InvalidChannel { offset: u64, channel: u8 },
    #[error("non-zero reserved bytes at offset {offset}")]
    NonZeroReserved { offset: u64 },
    #[error("stream to write is not time-sorted at index {index}")]
    UnsortedInput { index: usize },
    #[error(transparent)]
    Coincidence(#[from] super::CoincidenceError),
}

pub fn encode_record(tag: &TimeTag) -> [u8; RECORD_LEN] {
    let mut rec = [0u8; RECORD_LEN];
    rec[..8].copy_from_slice(&tag.time.to_le_bytes());
    rec[8] = tag.channel;
    rec[9] = tag.flags;
    rec
}

fn header() -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..8].copy_from_slice(&MAGIC);
    h[8..12].copy_from_slice(&VERSION.to_le_bytes());
    h
}

pub struct TagWriter<W: Write> {
    inner: W,
    last: Option<u64>,
    written: usize,
}

impl<W: Write> TagWriter<W> {
    pub fn new(mut inner: W) -> io::Result<Self> {
        inner.write_all(&header())?;
        Ok(Self {
            inner,
            last: None,
            written: 0,
        })
    }

    pub fn write(&mut self, tag: &TimeTag) -> Result<(), TagFileError> {
        if self.last.is_some_and(|t| tag.time < t) {
            return Err(TagFileError::UnsortedInput {
                index: self.written,
            });
        }
        self.inner
            .write_all(&encode_record(tag))
            .map_err(|source| TagFileError::Io {
                path: PathBuf::new(),
                source,
            })?;
        self.last = Some(tag.time);
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Streaming reader; yields one validated record at a time.
pub struct TagReader<R: Read> {
    inner: R,
    offset: u64,
    last: Option<u64>,
    done: bool,
}

impl TagReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TagFileError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| TagFileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::new(BufReader::with_capacity(1 << 20, file)).map_err(|e| with_path(e, path))
    }
}

fn with_path(e: TagFileError, path: &Path) -> TagFileError {
    match e {
        TagFileError::Io { source, .. } => TagFileError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    }
}

/// Read until `buf` is full or EOF; returns bytes read.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
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

impl<R: Read> TagReader<R> {
    pub fn new(mut inner: R) -> Result<Self, TagFileError> {
        let mut h = [0u8; HEADER_LEN];
        let n = read_full(&mut inner, &mut h).map_err(|source| TagFileError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if n < 8 || h[..8] != MAGIC {
            return Err(TagFileError::BadMagic);
        }
        if n < HEADER_LEN {
            return Err(TagFileError::Truncated {
                what: "header",
                offset: 0,
            });
        }
        let version = u32::from_le_bytes(h[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(TagFileError::UnsupportedVersion { found: version });
        }
        if h[12..16] != [0; 4] {
            return Err(TagFileError::NonZeroReserved { offset: 12 });
        }
        Ok(Self {
            inner,
            offset: HEADER_LEN as u64,
            last: None,
            done: false,
        })
    }

    fn read_record(&mut self) -> Result<Option<TimeTag>, TagFileError> {
        let mut rec = [0u8; RECORD_LEN];
        let n = read_full(&mut self.inner, &mut rec).map_err(|source| TagFileError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if n == 0 {
            return Ok(None);
        }
        let offset = self.offset;
        if n < RECORD_LEN {
            return Err(TagFileError::Truncated {
                what: "record",
                offset,
            });
        }
        let time = u64::from_le_bytes(rec[..8].try_into().expect("8 bytes"));
        let channel = rec[8];
        let flags = rec[9];
        if channel >= MAX_CHANNELS {
            return Err(TagFileError::InvalidChannel { offset, channel });
        }
        if rec[10..] != [0; 6] {
            return Err(TagFileError::NonZeroReserved {
                offset: offset + 10,
            });
        }
        if self.last.is_some_and(|t| time < t) {
            return Err(TagFileError::OutOfOrder { offset });
        }
        self.last = Some(time);
        self.offset += RECORD_LEN as u64;
        Ok(Some(TimeTag {
            time,
            channel,
            flags,
        }))
    }
}

impl<R: Read> Iterator for TagReader<R> {
    type Item = Result<TimeTag, TagFileError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_record() {
            Ok(Some(tag)) => Some(Ok(tag)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn write_tags(path: impl AsRef<Path>, tags: &[TimeTag]) -> Result<(), TagFileError> {
    let path = path.as_ref();
    if let Some(index) = super::first_unsorted(tags) {
        return Err(TagFileError::UnsortedInput { index });
    }
    let io_err = |source| TagFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = TagWriter::new(BufWriter::with_capacity(1 << 20, file)).map_err(io_err)?;
    for tag in tags {
        w.write(tag).map_err(|e| with_path(e, path))?;
    }
    w.finish().map_err(io_err)?;
    Ok(())
}

pub fn read_tags(path: impl AsRef<Path>) -> Result<Vec<TimeTag>, TagFileError> {
    let path = path.as_ref();
    TagReader::open(path)?
        .map(|r| r.map_err(|e| with_path(e, path)))
        .collect()
}
