//! Bit-exact binary file formats.
//!
//! Tensor files (`.htns`):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HTNS"
//! 4       2     version, u16 LE (currently 1)
//! 6       1     dtype: 0 = real32, 1 = word32
//! 7       1     ndim (always 2)
//! 8       8·n   dims, u64 LE each
//! ...     —     payload, row-major, little-endian
//! ```
//!
//! Triplet files (`.htrp`): header `magic "HTRP", version u16 LE, d u32 LE,
//! group count u64 LE`, then per group `sequence_id u64, query_index u64,
//! key count m u64, query (d real32), keys (m·d real32), labels (m real32)`,
//! all little-endian. Layouts are host-endianness independent.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::codec::PackedCodes;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sampling::TripletGroup;

const TENSOR_MAGIC: &[u8; 4] = b"HTNS";
const TRIPLET_MAGIC: &[u8; 4] = b"HTRP";
const FORMAT_VERSION: u16 = 1;

/// Number of triplets (query–key pairs) per streamed chunk by default.
pub const DEFAULT_CHUNK_TRIPLETS: usize = 32768;

/// A tensor as stored on disk: either real-valued or packed code words.
#[derive(Clone, Debug, PartialEq)]
pub enum Tensor {
    Real(Matrix),
    Words(PackedCodes),
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let (dtype, rows, cols): (u8, usize, usize) = match tensor {
        Tensor::Real(m) => (0, m.rows(), m.cols()),
        Tensor::Words(c) => (1, c.rows(), c.words_per_row()),
    };
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument {
            op: "write_tensor",
            detail: format!("dims must be nonzero, got {}x{}", rows, cols),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let put = |w: &mut BufWriter<File>, bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    put(&mut w, TENSOR_MAGIC)?;
    put(&mut w, &FORMAT_VERSION.to_le_bytes())?;
    put(&mut w, &[dtype, 2])?;
    put(&mut w, &(rows as u64).to_le_bytes())?;
    put(&mut w, &(cols as u64).to_le_bytes())?;
    match tensor {
        Tensor::Real(m) => {
            for v in m.data() {
                put(&mut w, &v.to_le_bytes())?;
            }
        }
        Tensor::Words(c) => {
            for v in c.words() {
                put(&mut w, &v.to_le_bytes())?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, path, &mut magic, "header")?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format {
            path: path.to_owned(),
            detail: format!("bad magic {:02X?}", magic),
        });
    }
    let version = read_u16(&mut r, path)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            path: path.to_owned(),
            detail: format!("unsupported version {}", version),
        });
    }
    let mut meta = [0u8; 2];
    read_exact(&mut r, path, &mut meta, "header")?;
    let (dtype, ndim) = (meta[0], meta[1]);
    if dtype > 1 {
        return Err(Error::Format {
            path: path.to_owned(),
            detail: format!("unknown dtype code {}", dtype),
        });
    }
    if ndim != 2 {
        return Err(Error::Format {
            path: path.to_owned(),
            detail: format!("expected 2 dims, header says {}", ndim),
        });
    }
    let rows = read_u64(&mut r, path)? as usize;
    let cols = read_u64(&mut r, path)? as usize;
    let count = rows.checked_mul(cols).ok_or_else(|| Error::Corrupt {
        path: path.to_owned(),
        detail: format!("dims {}x{} overflow", rows, cols),
    })?;
    if count == 0 {
        return Err(Error::Corrupt {
            path: path.to_owned(),
            detail: format!("dims must be nonzero, got {}x{}", rows, cols),
        });
    }

    let tensor = if dtype == 0 {
        let mut data = vec![0f32; count];
        for v in data.iter_mut() {
            *v = read_f32(&mut r, path)?;
        }
        Tensor::Real(Matrix::from_vec(rows, cols, data)?)
    } else {
        let mut words = vec![0u32; count];
        for v in words.iter_mut() {
            *v = read_u32(&mut r, path)?;
        }
        Tensor::Words(PackedCodes::from_words(rows, cols * 32, words)?)
    };

    let mut extra = [0u8; 1];
    match r.read(&mut extra) {
        Ok(0) => Ok(tensor),
        Ok(_) => Err(Error::Corrupt {
            path: path.to_owned(),
            detail: "trailing bytes after payload".into(),
        }),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Writes a real-valued matrix; see [`write_tensor`].
pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_tensor(path, &Tensor::Real(m.clone()))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    match read_tensor(path)? {
        Tensor::Real(m) => Ok(m),
        Tensor::Words(_) => Err(Error::Format {
            path: path.to_owned(),
            detail: "expected a real32 tensor, found word32".into(),
        }),
    }
}

/// Writes packed codes; see [`write_tensor`].
pub fn write_codes(path: &Path, c: &PackedCodes) -> Result<()> {
    write_tensor(path, &Tensor::Words(c.clone()))
}

pub fn read_codes(path: &Path) -> Result<PackedCodes> {
    match read_tensor(path)? {
        Tensor::Words(c) => Ok(c),
        Tensor::Real(_) => Err(Error::Format {
            path: path.to_owned(),
            detail: "expected a word32 tensor, found real32".into(),
        }),
    }
}

fn validate_groups(groups: &[TripletGroup]) -> Result<usize> {
    let d = groups.first().map(|g| g.dim()).unwrap_or(0);
    for (gi, g) in groups.iter().enumerate() {
        if g.dim() != d || g.keys.cols() != d {
            return Err(Error::Validation(format!(
                "group {} has dim {}, expected {}",
                gi,
                g.dim(),
                d
            )));
        }
        if g.key_count() == 0 {
            return Err(Error::Validation(format!("group {} has no keys", gi)));
        }
        if g.labels.len() != g.key_count() {
            return Err(Error::Validation(format!(
                "group {} has {} labels for {} keys",
                gi,
                g.labels.len(),
                g.key_count()
            )));
        }
        for &l in &g.labels {
            if !l.is_finite() || !(l == -1.0 || (1.0..=20.0).contains(&l)) {
                return Err(Error::Validation(format!(
                    "group {} has label {}, expected −1 or a value in [1, 20]",
                    gi, l
                )));
            }
        }
    }
    Ok(d)
}

pub fn write_triplets(path: &Path, groups: &[TripletGroup]) -> Result<()> {
    let d = validate_groups(groups)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let put = |w: &mut BufWriter<File>, bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    put(&mut w, TRIPLET_MAGIC)?;
    put(&mut w, &FORMAT_VERSION.to_le_bytes())?;
    put(&mut w, &(d as u32).to_le_bytes())?;
    put(&mut w, &(groups.len() as u64).to_le_bytes())?;
    for g in groups {
        put(&mut w, &g.sequence_id.to_le_bytes())?;
        put(&mut w, &(g.query_index as u64).to_le_bytes())?;
        put(&mut w, &(g.key_count() as u64).to_le_bytes())?;
        for v in &g.query {
            put(&mut w, &v.to_le_bytes())?;
        }
        for v in g.keys.data() {
            put(&mut w, &v.to_le_bytes())?;
        }
        for v in &g.labels {
            put(&mut w, &v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Streaming reader yielding chunks of at most `chunk_size` triplets
/// (query–key pairs); every chunk holds at least one group. The on-disk
/// layout is chunk-free, so the chunk size never changes what is read.
pub struct TripletChunks {
    reader: BufReader<File>,
    path: PathBuf,
    d: usize,
    remaining: u64,
    chunk_size: usize,
    /// Group read past the current chunk's budget, held for the next chunk.
    pending: Option<TripletGroup>,
}

impl TripletChunks {
    pub fn open(path: &Path, chunk_size: usize) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::InvalidArgument {
                op: "TripletChunks::open",
                detail: "chunk_size must be ≥ 1".into(),
            });
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut magic = [0u8; 4];
        read_exact(&mut reader, path, &mut magic, "header")?;
        if &magic != TRIPLET_MAGIC {
            return Err(Error::Format {
                path: path.to_owned(),
                detail: format!("bad magic {:02X?}", magic),
            });
        }
        let version = read_u16(&mut reader, path)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format {
                path: path.to_owned(),
                detail: format!("unsupported version {}", version),
            });
        }
        let d = read_u32(&mut reader, path)? as usize;
        let remaining = read_u64(&mut reader, path)?;
        Ok(TripletChunks { reader, path: path.to_owned(), d, remaining, chunk_size, pending: None })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn read_group(&mut self) -> Result<TripletGroup> {
        let path = self.path.clone();
        let sequence_id = read_u64(&mut self.reader, &path)?;
        let query_index = read_u64(&mut self.reader, &path)? as usize;
        let m = read_u64(&mut self.reader, &path)? as usize;
        if m == 0 {
            return Err(Error::Corrupt { path, detail: "group with zero keys".into() });
        }
        let mut query = vec![0f32; self.d];
        for v in query.iter_mut() {
            *v = read_f32(&mut self.reader, &path)?;
        }
        let mut keys = vec![0f32; m * self.d];
        for v in keys.iter_mut() {
            *v = read_f32(&mut self.reader, &path)?;
        }
        let mut labels = vec![0f32; m];
        for v in labels.iter_mut() {
            *v = read_f32(&mut self.reader, &path)?;
        }
        let group = TripletGroup {
            query,
            keys: Matrix::from_vec(m, self.d, keys)?,
            labels,
            sequence_id,
            query_index,
        };
        validate_groups(std::slice::from_ref(&group))?;
        Ok(group)
    }
}

impl Iterator for TripletChunks {
    type Item = Result<Vec<TripletGroup>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 && self.pending.is_none() {
            return None;
        }
        let mut chunk = Vec::new();
        let mut triplets = 0usize;
        if let Some(g) = self.pending.take() {
            triplets += g.key_count();
            chunk.push(g);
        }
        while triplets < self.chunk_size && self.remaining > 0 {
            match self.read_group() {
                Ok(g) => {
                    self.remaining -= 1;
                    let n = g.key_count();
                    if !chunk.is_empty() && triplets + n > self.chunk_size {
                        self.pending = Some(g);
                        break;
                    }
                    triplets += n;
                    chunk.push(g);
                }
                Err(e) => {
                    self.remaining = 0;
                    self.pending = None;
                    return Some(Err(e));
                }
            }
        }
        Some(Ok(chunk))
    }
}

/// Reads a whole triplet file into memory.
pub fn read_triplets(path: &Path) -> Result<Vec<TripletGroup>> {
    let mut out = Vec::new();
    for chunk in TripletChunks::open(path, DEFAULT_CHUNK_TRIPLETS)? {
        out.extend(chunk?);
    }
    Ok(out)
}

fn read_exact(r: &mut BufReader<File>, path: &Path, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Corrupt { path: path.to_owned(), detail: format!("truncated {}", what) }
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u16(r: &mut BufReader<File>, path: &Path) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, path, &mut b, "field")?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut BufReader<File>, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, path, &mut b, "field")?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut BufReader<File>, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, path, &mut b, "field")?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32(r: &mut BufReader<File>, path: &Path) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, path, &mut b, "payload")?;
    Ok(f32::from_le_bytes(b))
}
