//! DEMCKPT container format.
//!
//! ```text
//! 0..8    magic "DEMCKPT\0"
//! 8..12   format version, u32 LE (= 1)
//! 12..20  header length, u64 LE
//! 20..    header: compact UTF-8 JSON
//!           {"tensors":[{"name","dtype","shape","offset","length"}...],
//!            "data_crc32":u32,"kind":"model"|"delta","index_crc32":u32}
//! ...     data: raw little-endian payloads in index order, no padding
//! ```
//!
//! `data_crc32` covers the data section. `index_crc32` covers the header
//! serialized without that field, so a flipped byte anywhere in the index
//! (including tensor names) is caught as well.
//!
//! Readers verify both checksums on open, then serve tensors lazily through
//! positioned reads; nothing beyond the index is kept in memory.

use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use demerge_core::layout::validate_index;
use demerge_core::{CheckpointKind, DType, TensorMeta, TensorSpec};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{check_put, Checkpoint, TensorSink, TensorSource};
use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 8] = b"DEMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
/// Magic, version and header length.
pub const PREFIX_LEN: u64 = 20;

const VERIFY_CHUNK: usize = 1 << 20;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    name: String,
    dtype: String,
    shape: Vec<u64>,
    offset: u64,
    length: u64,
}

#[derive(Serialize)]
struct HeaderBody<'a> {
    tensors: &'a [IndexEntry],
    data_crc32: u32,
    kind: &'a str,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    tensors: Vec<IndexEntry>,
    data_crc32: u32,
    kind: String,
    index_crc32: u32,
}

fn encode_header(metas: &[TensorMeta], kind: CheckpointKind, data_crc32: u32) -> Vec<u8> {
    let tensors: Vec<IndexEntry> = metas
        .iter()
        .map(|m| IndexEntry {
            name: m.name.clone(),
            dtype: m.dtype.as_str().into(),
            shape: m.shape.clone(),
            offset: m.offset,
            length: m.length,
        })
        .collect();
    let body = HeaderBody {
        tensors: &tensors,
        data_crc32,
        kind: kind.as_str(),
    };
    let index_crc32 = crc32fast::hash(&serde_json::to_vec(&body).expect("header serializes"));
    let header = Header {
        tensors,
        data_crc32,
        kind: kind.as_str().into(),
        index_crc32,
    };
    serde_json::to_vec(&header).expect("header serializes")
}

fn write_prefix(w: &mut impl Write, header: &[u8]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(header)
}

/// Serializes `ckpt` to `sink`. Output depends only on the checkpoint's
/// contents.
pub fn write_checkpoint(ckpt: &Checkpoint, sink: &mut impl Write) -> Result<()> {
    let header = encode_header(ckpt.metas(), ckpt.kind(), crc32fast::hash(ckpt.data()));
    write_prefix(sink, &header).context(|| "writing checkpoint header".into())?;
    sink.write_all(ckpt.data())
        .context(|| "writing checkpoint data".into())?;
    sink.flush().context(|| "flushing checkpoint".into())
}

pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::with_capacity(ckpt.data().len() + 256);
    write_checkpoint(ckpt, &mut out).expect("writing to a Vec cannot fail");
    out
}

/// Positioned reads over an immutable byte container.
pub trait ByteSource {
    fn byte_len(&self) -> io::Result<u64>;
    fn read_exact_at(&self, buf: &mut [u8], offset: u64) -> io::Result<()>;
}

impl ByteSource for [u8] {
    fn byte_len(&self) -> io::Result<u64> {
        Ok(self.len() as u64)
    }

    fn read_exact_at(&self, buf: &mut [u8], offset: u64) -> io::Result<()> {
        let start = usize::try_from(offset).map_err(|_| io::ErrorKind::UnexpectedEof)?;
        let end = start
            .checked_add(buf.len())
            .filter(|&e| e <= self.len())
            .ok_or(io::ErrorKind::UnexpectedEof)?;
        buf.copy_from_slice(&self[start..end]);
        Ok(())
    }
}

impl ByteSource for Vec<u8> {
    fn byte_len(&self) -> io::Result<u64> {
        self.as_slice().byte_len()
    }

    fn read_exact_at(&self, buf: &mut [u8], offset: u64) -> io::Result<()> {
        self.as_slice().read_exact_at(buf, offset)
    }
}

impl ByteSource for File {
    fn byte_len(&self) -> io::Result<u64> {
        Ok(self.metadata()?.len())
    }

    #[cfg(unix)]
    fn read_exact_at(&self, buf: &mut [u8], offset: u64) -> io::Result<()> {
        std::os::unix::fs::FileExt::read_exact_at(self, buf, offset)
    }

    #[cfg(windows)]
    fn read_exact_at(&self, mut buf: &mut [u8], mut offset: u64) -> io::Result<()> {
        use std::os::windows::fs::FileExt;
        while !buf.is_empty() {
            match self.seek_read(buf, offset) {
                Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
                Ok(n) => {
                    buf = &mut buf[n..];
                    offset += n as u64;
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }
}

impl<T: ByteSource + ?Sized> ByteSource for &T {
    fn byte_len(&self) -> io::Result<u64> {
        (**self).byte_len()
    }

    fn read_exact_at(&self, buf: &mut [u8], offset: u64) -> io::Result<()> {
        (**self).read_exact_at(buf, offset)
    }
}

/// Read handle over a verified DEMCKPT container. Shareable across threads
/// when the underlying source is.
#[derive(Debug)]
pub struct CheckpointReader<S> {
    source: S,
    kind: CheckpointKind,
    metas: Vec<TensorMeta>,
    data_start: u64,
}

/// Opens and verifies a checkpoint file.
pub fn open(path: impl AsRef<Path>) -> Result<CheckpointReader<File>> {
    let path = path.as_ref();
    let file = File::open(path).context(|| format!("opening {}", path.display()))?;
    CheckpointReader::new(file).map_err(|e| match e {
        Error::Io { context, source } => Error::io(format!("{}: {context}", path.display()), source),
        other => other,
    })
}

/// Reads a whole checkpoint into memory.
pub fn read_checkpoint<S: ByteSource>(source: S) -> Result<Checkpoint> {
    CheckpointReader::new(source)?.to_checkpoint()
}

impl<S: ByteSource> CheckpointReader<S> {
    /// Parses the header, validates the index against the file size and
    /// checks both checksums.
    pub fn new(source: S) -> Result<Self> {
        let file_len = source.byte_len().context(|| "reading length".into())?;
        if file_len < PREFIX_LEN {
            return Err(Error::format("file shorter than the DEMCKPT prefix"));
        }
        let mut prefix = [0u8; PREFIX_LEN as usize];
        source
            .read_exact_at(&mut prefix, 0)
            .context(|| "reading prefix".into())?;
        if &prefix[..8] != MAGIC {
            return Err(Error::format("bad magic, not a DEMCKPT file"));
        }
        let version = u32::from_le_bytes(prefix[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported DEMCKPT version {version}"
            )));
        }
        let header_len = u64::from_le_bytes(prefix[12..20].try_into().unwrap());
        if header_len > file_len - PREFIX_LEN {
            return Err(Error::format(format!(
                "header length {header_len} exceeds file size {file_len}"
            )));
        }
        let mut raw = vec![0u8; header_len as usize];
        source
            .read_exact_at(&mut raw, PREFIX_LEN)
            .context(|| "reading header".into())?;
        let header: Header = serde_json::from_slice(&raw)
            .map_err(|e| Error::format(format!("malformed header: {e}")))?;

        let body = HeaderBody {
            tensors: &header.tensors,
            data_crc32: header.data_crc32,
            kind: &header.kind,
        };
        let index_crc = crc32fast::hash(&serde_json::to_vec(&body).expect("header serializes"));
        if index_crc != header.index_crc32 {
            return Err(Error::Integrity(format!(
                "index checksum mismatch: stored {:08x}, computed {index_crc:08x}",
                header.index_crc32
            )));
        }

        let kind = CheckpointKind::parse(&header.kind)
            .ok_or_else(|| Error::format(format!("unknown checkpoint kind '{}'", header.kind)))?;
        let metas = header
            .tensors
            .into_iter()
            .map(|e| {
                let dtype = DType::parse(&e.dtype).ok_or_else(|| {
                    Error::format(format!("tensor '{}' has unknown dtype '{}'", e.name, e.dtype))
                })?;
                Ok(TensorMeta {
                    name: e.name,
                    dtype,
                    shape: e.shape,
                    offset: e.offset,
                    length: e.length,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let data_start = PREFIX_LEN + header_len;
        validate_index(&metas, file_len - data_start)?;

        let reader = CheckpointReader {
            source,
            kind,
            metas,
            data_start,
        };
        let crc = reader.data_crc32()?;
        if crc != header.data_crc32 {
            return Err(Error::Integrity(format!(
                "data checksum mismatch: stored {:08x}, computed {crc:08x}",
                header.data_crc32
            )));
        }
        Ok(reader)
    }

    fn data_len(&self) -> u64 {
        self.metas.last().map_or(0, |m| m.offset + m.length)
    }

    fn data_crc32(&self) -> Result<u32> {
        let mut hasher = crc32fast::Hasher::new();
        let total = self.data_len();
        let mut buf = vec![0u8; VERIFY_CHUNK.min(total as usize)];
        let mut pos = 0u64;
        while pos < total {
            let n = (total - pos).min(buf.len() as u64) as usize;
            self.source
                .read_exact_at(&mut buf[..n], self.data_start + pos)
                .context(|| "reading data section".into())?;
            hasher.update(&buf[..n]);
            pos += n as u64;
        }
        Ok(hasher.finalize())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut data = vec![0u8; self.data_len() as usize];
        self.source
            .read_exact_at(&mut data, self.data_start)
            .context(|| "reading data section".into())?;
        Checkpoint::from_parts(self.kind, self.metas.clone(), data)
    }

    pub fn into_inner(self) -> S {
        self.source
    }
}

impl<S: ByteSource> TensorSource for CheckpointReader<S> {
    fn kind(&self) -> CheckpointKind {
        self.kind
    }

    fn metas(&self) -> &[TensorMeta] {
        &self.metas
    }

    fn read_tensor_into(&self, index: usize, buf: &mut Vec<u8>) -> Result<()> {
        let m = &self.metas[index];
        buf.clear();
        buf.resize(m.length as usize, 0);
        self.source
            .read_exact_at(buf, self.data_start + m.offset)
            .context(|| format!("reading tensor '{}'", m.name))
    }
}

/// Streaming DEMCKPT writer. Payloads are spooled to an anonymous file next
/// to the destination; [`CheckpointWriter::finish`] writes the header and
/// data to a temporary file and renames it into place, so the destination
/// never holds a partial checkpoint.
pub struct CheckpointWriter {
    dest: PathBuf,
    kind: CheckpointKind,
    metas: Vec<TensorMeta>,
    spool: io::BufWriter<File>,
    hasher: crc32fast::Hasher,
    written: u64,
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

impl CheckpointWriter {
    pub fn create(dest: impl Into<PathBuf>, kind: CheckpointKind) -> Result<Self> {
        let dest = dest.into();
        let dir = parent_dir(&dest);
        let spool = tempfile::tempfile_in(dir)
            .context(|| format!("creating spool file in {}", dir.display()))?;
        Ok(CheckpointWriter {
            dest,
            kind,
            metas: Vec::new(),
            spool: io::BufWriter::with_capacity(1 << 20, spool),
            hasher: crc32fast::Hasher::new(),
            written: 0,
        })
    }

    pub fn finish(self) -> Result<()> {
        let header = encode_header(&self.metas, self.kind, self.hasher.finalize());
        let mut spool = self
            .spool
            .into_inner()
            .map_err(|e| Error::io("flushing spool", e.into_error()))?;
        spool
            .seek(SeekFrom::Start(0))
            .context(|| "rewinding spool".into())?;
        let dir = parent_dir(&self.dest);
        let mut out = tempfile::NamedTempFile::new_in(dir)
            .context(|| format!("creating temporary file in {}", dir.display()))?;
        {
            let mut w = io::BufWriter::with_capacity(1 << 20, out.as_file_mut());
            write_prefix(&mut w, &header).context(|| "writing header".into())?;
            let copied = io::copy(&mut (&mut spool).take(self.written), &mut w)
                .context(|| "copying spooled data".into())?;
            if copied != self.written {
                return Err(Error::io(
                    "copying spooled data",
                    io::ErrorKind::UnexpectedEof.into(),
                ));
            }
            w.flush().context(|| "flushing output".into())?;
        }
        out.persist(&self.dest)
            .map_err(|e| Error::io(format!("renaming into {}", self.dest.display()), e.error))?;
        Ok(())
    }
}

impl TensorSink for CheckpointWriter {
    fn put(&mut self, spec: &TensorSpec, bytes: &[u8]) -> Result<()> {
        check_put(self.metas.last(), spec, bytes)?;
        self.spool
            .write_all(bytes)
            .context(|| format!("spooling tensor '{}'", spec.name))?;
        self.hasher.update(bytes);
        self.metas.push(TensorMeta {
            name: spec.name.clone(),
            dtype: spec.dtype,
            shape: spec.shape.clone(),
            offset: self.written,
            length: bytes.len() as u64,
        });
        self.written += bytes.len() as u64;
        Ok(())
    }
}

/// Bytes held by the copy buffer at its largest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CopyStats {
    pub peak_buffer: usize,
    pub tensors: usize,
}

/// Copies every tensor from `source` to `sink` through a single reusable
/// buffer, so resident payload memory never exceeds the largest tensor.
pub fn copy_tensors(source: &dyn TensorSource, sink: &mut dyn TensorSink) -> Result<CopyStats> {
    let mut buf = Vec::new();
    let mut peak = 0;
    for (i, meta) in source.metas().iter().enumerate() {
        source.read_tensor_into(i, &mut buf)?;
        peak = peak.max(buf.len());
        sink.put(&meta.spec(), &buf)?;
    }
    Ok(CopyStats {
        peak_buffer: peak,
        tensors: source.metas().len(),
    })
}

/// Writes any tensor source to `dest` as DEMCKPT.
pub fn save(source: &dyn TensorSource, dest: impl Into<PathBuf>) -> Result<CopyStats> {
    let mut w = CheckpointWriter::create(dest, source.kind())?;
    let stats = copy_tensors(source, &mut w)?;
    w.finish()?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::Tensor;

    fn sample() -> Checkpoint {
        Checkpoint::from_tensors(
            CheckpointKind::Model,
            [
                Tensor::f32("b", [2], &[1.0, 2.0]),
                Tensor::f32("a", [3], &[3.0, 4.0, 5.0]),
                Tensor::f64("s", [], &[0.5]),
            ],
        )
        .unwrap()
    }

    fn data_section(bytes: &[u8]) -> &[u8] {
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        &bytes[20 + header_len..]
    }

    #[test]
    fn scalar_one_layout() {
        let ck = Checkpoint::from_tensors(CheckpointKind::Model, [Tensor::f32("a", [], &[1.0])]).unwrap();
        let bytes = to_bytes(&ck);
        assert_eq!(&bytes[..8], b"DEMCKPT\0");
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(data_section(&bytes), &[0x00, 0x00, 0x80, 0x3F]);
    }

    #[test]
    fn header_is_canonical_json() {
        let bytes = to_bytes(&sample());
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[20..20 + header_len]).unwrap();
        assert!(header.starts_with(
            r#"{"tensors":[{"name":"a","dtype":"f32","shape":[3],"offset":0,"length":12},{"name":"b","dtype":"f32","shape":[2],"offset":12,"length":8},{"name":"s","dtype":"f64","shape":[],"offset":20,"length":8}],"data_crc32":"#
        ));
        assert!(header.contains(r#","kind":"model","index_crc32":"#));
    }

    #[test]
    fn empty_checkpoint() {
        let ck = Checkpoint::empty(CheckpointKind::Delta);
        let bytes = to_bytes(&ck);
        assert!(data_section(&bytes).is_empty());
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = to_bytes(&sample());
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back, sample());
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn lazy_tensor_reads() {
        let bytes = to_bytes(&sample());
        let r = CheckpointReader::new(bytes.as_slice()).unwrap();
        assert_eq!(r.values("s").unwrap(), [0.5]);
        assert_eq!(r.values("a").unwrap(), [3.0, 4.0, 5.0]);
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = to_bytes(&sample());
        for cut in [0, 5, 19, 25, bytes.len() - 1] {
            let err = read_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(err.is_format(), "cut {cut}: {err}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = to_bytes(&sample());
        bytes[0] = b'X';
        assert!(read_checkpoint(bytes.as_slice()).unwrap_err().is_format());
        let mut bytes = to_bytes(&sample());
        bytes[8] = 2;
        assert!(read_checkpoint(bytes.as_slice()).unwrap_err().is_format());
    }

    #[test]
    fn data_corruption_is_an_integrity_error() {
        let mut bytes = to_bytes(&sample());
        let n = bytes.len();
        bytes[n - 1] ^= 0x40;
        assert!(matches!(
            read_checkpoint(bytes.as_slice()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn renamed_tensor_is_caught() {
        let bytes = to_bytes(&sample());
        let pos = bytes.windows(10).position(|w| w == br#""name":"a""#).unwrap() + 8;
        let mut bad = bytes.clone();
        bad[pos] = b'0';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Integrity(_))));
    }

    fn rewrite_header(ck: &Checkpoint, edit: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
        let bytes = to_bytes(ck);
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[20..20 + header_len]).unwrap();
        edit(&mut header);
        // re-seal so that only the structural checks can object
        let obj = header.as_object_mut().unwrap();
        obj.remove("index_crc32");
        let crc = crc32fast::hash(&serde_json::to_vec(&header).unwrap());
        header["index_crc32"] = crc.into();
        let h = serde_json::to_vec(&header).unwrap();
        let mut out = Vec::new();
        write_prefix(&mut out, &h).unwrap();
        out.extend_from_slice(data_section(&bytes));
        out
    }

    #[test]
    fn unsorted_index_is_a_format_error() {
        let bytes = rewrite_header(&sample(), |h| {
            let t = h["tensors"].as_array_mut().unwrap();
            t.swap(0, 1);
            t[0]["offset"] = 0.into();
            t[1]["offset"] = 8.into();
        });
        let err = read_checkpoint(bytes.as_slice()).unwrap_err();
        assert!(err.is_format(), "{err}");
    }

    #[test]
    fn oversized_length_is_a_format_error() {
        let bytes = rewrite_header(&sample(), |h| {
            let t = h["tensors"].as_array_mut().unwrap();
            t[2]["shape"] = serde_json::json!([1000]);
            t[2]["length"] = 8000.into();
        });
        let err = read_checkpoint(bytes.as_slice()).unwrap_err();
        assert!(err.is_format(), "{err}");
    }

    #[test]
    fn streaming_writer_matches_in_memory_writer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.demckpt");
        let stats = save(&sample(), &path).unwrap();
        assert_eq!(stats.peak_buffer, 12);
        assert_eq!(std::fs::read(&path).unwrap(), to_bytes(&sample()));
        let r = open(&path).unwrap();
        assert_eq!(r.to_checkpoint().unwrap(), sample());
        // only the destination remains in the directory
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
