//! Line-delimited JSON helpers used for every persisted artifact.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{IoContext, Result};

pub fn read_all<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).at(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Streams records; the first malformed line ends the stream with an error.
pub fn stream<T: DeserializeOwned>(path: &Path) -> Result<impl Iterator<Item = Result<T>>> {
    let reader = BufReader::new(File::open(path).at(path)?);
    let path = path.to_path_buf();
    Ok(reader.lines().filter_map(move |line| match line {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(serde_json::from_str(&l).map_err(Into::into)),
        Err(e) => Some(Err(e).at(&path)),
    }))
}

pub fn write_all<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<usize> {
    let mut writer = AtomicWriter::create(path)?;
    let mut n = 0;
    for item in items {
        writer.write_record(item)?;
        n += 1;
    }
    writer.commit()?;
    Ok(n)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).at(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Writes via a sibling temp file and renames, so readers never see torn files.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = AtomicWriter::create(path)?;
    w.inner.write_all(bytes).at(&w.tmp)?;
    w.commit()
}

pub struct AtomicWriter {
    inner: BufWriter<File>,
    tmp: std::path::PathBuf,
    dest: std::path::PathBuf,
}

impl AtomicWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).at(parent)?;
        }
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        let tmp = path.with_file_name(name);
        let file = File::create(&tmp).at(&tmp)?;
        Ok(Self {
            inner: BufWriter::new(file),
            tmp,
            dest: path.to_path_buf(),
        })
    }

    pub fn write_record<T: Serialize + ?Sized>(&mut self, item: &T) -> Result<()> {
        serde_json::to_writer(&mut self.inner, item)?;
        self.inner.write_all(b"\n").at(&self.tmp)
    }

    pub fn write_raw(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes).at(&self.tmp)
    }

    pub fn commit(self) -> Result<()> {
        self.inner
            .into_inner()
            .map_err(|e| e.into_error())
            .at(&self.tmp)?;
        fs::rename(&self.tmp, &self.dest).at(&self.dest)
    }
}
