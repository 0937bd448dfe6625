//! Model container: `FTXC` magic, format version, JSON config, vocabulary,
//! then the input and output matrices as row-major little-endian f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ClassifierConfig, TextClassifier, Vocab};
use crate::error::{Error, IoContext, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"FTXC";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn save_model(model: &TextClassifier, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    let tmp = path.with_extension("tmp");
    let mut w = BufWriter::with_capacity(1 << 20, File::create(&tmp).at(&tmp)?);
    write_model(model, &mut w).at(&tmp)?;
    w.into_inner().map_err(|e| e.into_error()).at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}

fn write_model(model: &TextClassifier, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(model.config()).map_err(std::io::Error::other)?;
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(&config)?;
    let vocab = model.vocab();
    w.write_all(&(vocab.len() as u32).to_le_bytes())?;
    for (word, count) in vocab.words().iter().zip(vocab.counts()) {
        w.write_all(&(word.len() as u32).to_le_bytes())?;
        w.write_all(word.as_bytes())?;
        w.write_all(&count.to_le_bytes())?;
    }
    write_matrix(w, model.input_weights(), model.rows(), model.config().dim)?;
    write_matrix(
        w,
        model.output_weights(),
        model.labels().len(),
        model.config().dim,
    )
}

fn write_matrix(w: &mut impl Write, values: &[f32], rows: usize, cols: usize) -> std::io::Result<()> {
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(1 << 16);
    for chunk in values.chunks(1 << 14) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TextClassifier> {
    let mut r = BufReader::with_capacity(1 << 20, File::open(path).at(path)?);
    read_model(&mut r).map_err(|e| match e {
        ReadError::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        ReadError::Format(m) => Error::ModelFormat(format!("{}: {m}", path.display())),
    })
}

enum ReadError {
    Io(std::io::Error),
    Format(String),
}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ReadError::Format("truncated file".into())
        } else {
            ReadError::Io(e)
        }
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, ReadError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, ReadError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_model(r: &mut impl Read) -> Result<TextClassifier, ReadError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(ReadError::Format("not a classifier model (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(ReadError::Format(format!(
            "unsupported format version {version} (expected {MODEL_FORMAT_VERSION})"
        )));
    }
    let len = read_u32(r)? as usize;
    let mut config = vec![0u8; len];
    r.read_exact(&mut config)?;
    let config: ClassifierConfig = serde_json::from_slice(&config)
        .map_err(|e| ReadError::Format(format!("config header: {e}")))?;
    config
        .validate()
        .map_err(|e| ReadError::Format(e.to_string()))?;

    let words = read_u32(r)? as usize;
    let mut entries = Vec::with_capacity(words.min(1 << 24));
    for _ in 0..words {
        let len = read_u32(r)? as usize;
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        let word = String::from_utf8(bytes)
            .map_err(|_| ReadError::Format("vocabulary entry is not UTF-8".into()))?;
        entries.push((word, read_u64(r)?));
    }
    let vocab = Vocab::from_entries(entries);
    let input = read_matrix(r, vocab.len() + config.buckets, config.dim)?;
    let output = read_matrix(r, config.labels.len(), config.dim)?;
    TextClassifier::from_parts(config, vocab, input, output)
        .map_err(|e| ReadError::Format(e.to_string()))
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> Result<Vec<f32>, ReadError> {
    let got_rows = read_u64(r)? as usize;
    let got_cols = read_u32(r)? as usize;
    if (got_rows, got_cols) != (rows, cols) {
        return Err(ReadError::Format(format!(
            "matrix is {got_rows} x {got_cols}, expected {rows} x {cols}"
        )));
    }
    let n = rows * cols;
    let mut out = Vec::with_capacity(n);
    let mut buf = vec![0u8; 1 << 16];
    while out.len() < n {
        let take = ((n - out.len()) * 4).min(buf.len());
        r.read_exact(&mut buf[..take])?;
        out.extend(
            buf[..take]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        );
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ReadError::Format("non-finite weight".into()));
    }
    Ok(out)
}
