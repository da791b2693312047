//! The `ABST` binary parameter format.
//!
//! A bare parameter file is
//!
//! ```text
//! "ABST" | version: u32 = 1 | param_count: u64 | param_count x f64
//! ```
//!
//! Snapshot and aggregate files append a role byte and an index to the
//! header before the values:
//!
//! ```text
//! "ABST" | version: u32 = 1 | param_count: u64 | role: u8 | index: u64 | param_count x f64
//! ```
//!
//! `index` is the epoch of a student snapshot or the snapshot count of an
//! aggregate. All integers and floats are little-endian.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ParamVector;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ABST";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Student = 0,
    Aggregate = 1,
}

impl Role {
    fn from_byte(b: u8) -> Result<Role> {
        match b {
            0 => Ok(Role::Student),
            1 => Ok(Role::Aggregate),
            other => Err(Error::CorruptSnapshot(format!("unknown role tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Student => "student",
            Role::Aggregate => "aggregate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotFile {
    pub role: Role,
    pub index: u64,
    pub params: ParamVector,
}

fn corrupt(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::CorruptSnapshot("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn write_header<W: Write>(w: &mut W, count: usize) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(count as u64).to_le_bytes())
}

fn write_values<W: Write>(w: &mut W, params: &ParamVector) -> io::Result<()> {
    for v in params.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(corrupt)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_header<R: Read>(r: &mut R) -> Result<usize> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(corrupt)?;
    if &magic != MAGIC {
        return Err(Error::CorruptSnapshot("bad magic bytes".into()));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version).map_err(corrupt)?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(Error::CorruptSnapshot(format!("unsupported version {version}")));
    }
    let count = read_u64(r)?;
    usize::try_from(count).map_err(|_| Error::CorruptSnapshot(format!("param count {count}")))
}

fn read_values<R: Read>(r: &mut R, count: usize) -> Result<ParamVector> {
    // Grow as values arrive so a corrupt count cannot force a huge allocation.
    let mut values = Vec::with_capacity(count.min(1 << 20));
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf).map_err(corrupt)?;
        values.push(f64::from_le_bytes(buf));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::CorruptSnapshot("trailing bytes after parameters".into()));
    }
    ParamVector::new(values).map_err(|e| Error::CorruptSnapshot(e.to_string()))
}

pub fn write_params<W: Write>(w: &mut W, params: &ParamVector) -> Result<()> {
    write_header(w, params.len())?;
    write_values(w, params)?;
    Ok(())
}

pub fn read_params<R: Read>(r: &mut R) -> Result<ParamVector> {
    let count = read_header(r)?;
    read_values(r, count)
}

pub fn write_snapshot<W: Write>(w: &mut W, snap: &SnapshotFile) -> Result<()> {
    write_header(w, snap.params.len())?;
    w.write_all(&[snap.role as u8])?;
    w.write_all(&snap.index.to_le_bytes())?;
    write_values(w, &snap.params)?;
    Ok(())
}

pub fn read_snapshot<R: Read>(r: &mut R) -> Result<SnapshotFile> {
    let count = read_header(r)?;
    let mut role = [0u8; 1];
    r.read_exact(&mut role).map_err(corrupt)?;
    let role = Role::from_byte(role[0])?;
    let index = read_u64(r)?;
    let params = read_values(r, count)?;
    Ok(SnapshotFile {
        role,
        index,
        params,
    })
}

pub fn write_snapshot_file(path: &Path, snap: &SnapshotFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_snapshot(&mut w, snap)?;
    w.flush()?;
    Ok(())
}

pub fn read_snapshot_file(path: &Path) -> Result<SnapshotFile> {
    let mut r = BufReader::new(File::open(path)?);
    read_snapshot(&mut r)
}
