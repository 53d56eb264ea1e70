//! Code file format shared by the trainer and the retrieval engine.
//!
//! Layout (little-endian): magic `HSGC`, version u16 = 1, K u32,
//! node_count u64, then node_count × ceil(K/64) words of 64 bits.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::hamming::{validate_bits, words_for, CodeError, CodeMatrix};

pub const CODE_MAGIC: [u8; 4] = *b"HSGC";
pub const CODE_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CodeFileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected HSGC")]
    BadMagic,
    #[error("unsupported code file version {0} (expected {CODE_VERSION})")]
    BadVersion(u16),
    #[error("truncated code file: {0}")]
    Truncated(&'static str),
    #[error(transparent)]
    Code(#[from] CodeError),
}

pub fn write_codes<W: Write>(mut w: W, codes: &CodeMatrix) -> Result<(), CodeFileError> {
    w.write_all(&CODE_MAGIC)?;
    w.write_all(&CODE_VERSION.to_le_bytes())?;
    w.write_all(&codes.bits().to_le_bytes())?;
    w.write_all(&(codes.rows() as u64).to_le_bytes())?;
    for word in codes.raw_words() {
        w.write_all(&word.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_codes<R: Read>(mut r: R) -> Result<CodeMatrix, CodeFileError> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "header")?;
    if magic != CODE_MAGIC {
        return Err(CodeFileError::BadMagic);
    }
    let mut buf2 = [0u8; 2];
    read_exact_or(&mut r, &mut buf2, "version")?;
    let version = u16::from_le_bytes(buf2);
    if version != CODE_VERSION {
        return Err(CodeFileError::BadVersion(version));
    }
    let mut buf4 = [0u8; 4];
    read_exact_or(&mut r, &mut buf4, "code length")?;
    let bits = u32::from_le_bytes(buf4);
    validate_bits(bits)?;
    let mut buf8 = [0u8; 8];
    read_exact_or(&mut r, &mut buf8, "node count")?;
    let rows = u64::from_le_bytes(buf8) as usize;

    let total_words = rows * words_for(bits);
    let mut words = Vec::with_capacity(total_words);
    for _ in 0..total_words {
        read_exact_or(&mut r, &mut buf8, "code words")?;
        words.push(u64::from_le_bytes(buf8));
    }
    Ok(CodeMatrix::from_raw(bits, rows, words)?)
}

pub fn write_codes_file<P: AsRef<Path>>(path: P, codes: &CodeMatrix) -> Result<(), CodeFileError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_codes(&mut w, codes)?;
    w.flush()?;
    Ok(())
}

pub fn read_codes_file<P: AsRef<Path>>(path: P) -> Result<CodeMatrix, CodeFileError> {
    read_codes(BufReader::new(File::open(path)?))
}

fn read_exact_or<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    what: &'static str,
) -> Result<(), CodeFileError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CodeFileError::Truncated(what)
        } else {
            CodeFileError::Io(e)
        }
    })
}

/// Size in bytes of a code file with the given shape.
pub fn code_file_len(bits: u32, rows: usize) -> usize {
    4 + 2 + 4 + 8 + rows * words_for(bits) * 8
}
