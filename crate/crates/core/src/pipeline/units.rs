//! Helpers shared by the stage jobs: part files, line-offset chunking and
//! fallible document streams.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use crate::corpus::{read_shard, CorpusShard, RawDocument};
use crate::error::{Error, IoContext, Result};
use crate::jsonl::AtomicWriter;

/// Directory of one stage: `<out>/<stage>/` with unit parts under `parts/`.
#[derive(Debug, Clone)]
pub struct StageDir {
    pub out_dir: PathBuf,
    pub name: &'static str,
}

impl StageDir {
    pub fn root(&self) -> PathBuf {
        self.out_dir.join(self.name)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root().join(name)
    }

    /// Path relative to the output directory, as recorded in manifests.
    pub fn rel(&self, name: &str) -> PathBuf {
        Path::new(self.name).join(name)
    }

    pub fn part(&self, unit: &str, suffix: &str) -> PathBuf {
        self.root().join("parts").join(format!("{unit}.{suffix}"))
    }
}

pub fn unit_ids(prefix: char, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:05}")).collect()
}

/// Concatenates part files in unit order into `dest`.
pub fn concat(parts: impl IntoIterator<Item = PathBuf>, dest: &Path) -> Result<()> {
    let mut w = AtomicWriter::create(dest)?;
    let mut buf = Vec::new();
    for p in parts {
        buf.clear();
        File::open(&p).at(&p)?.read_to_end(&mut buf).at(&p)?;
        w.write_raw(&buf)?;
    }
    w.commit()
}

/// Byte ranges of consecutive groups of non-blank lines in a JSONL file.
pub struct LineChunks {
    path: PathBuf,
    ranges: Vec<(u64, u64, usize)>,
    lines: usize,
}

impl LineChunks {
    pub fn scan(path: &Path, per_chunk: usize) -> Result<Self> {
        assert!(per_chunk >= 1);
        let mut reader = BufReader::with_capacity(1 << 16, File::open(path).at(path)?);
        let mut ranges = Vec::new();
        let (mut pos, mut start, mut in_chunk, mut lines) = (0u64, 0u64, 0usize, 0usize);
        let mut line = Vec::new();
        loop {
            line.clear();
            let n = reader.read_until(b'\n', &mut line).at(path)?;
            if n == 0 {
                break;
            }
            pos += n as u64;
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            in_chunk += 1;
            lines += 1;
            if in_chunk == per_chunk {
                ranges.push((start, pos, in_chunk));
                start = pos;
                in_chunk = 0;
            }
        }
        if in_chunk > 0 {
            ranges.push((start, pos, in_chunk));
        }
        Ok(Self { path: path.to_path_buf(), ranges, lines })
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn read<T: DeserializeOwned>(&self, chunk: usize) -> Result<Vec<T>> {
        let (start, end, count) = self.ranges[chunk];
        let mut f = File::open(&self.path).at(&self.path)?;
        f.seek(SeekFrom::Start(start)).at(&self.path)?;
        let mut buf = vec![0u8; (end - start) as usize];
        f.read_exact(&mut buf).at(&self.path)?;
        let mut out = Vec::with_capacity(count);
        for line in buf.split(|&b| b == b'\n') {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            out.push(serde_json::from_slice(line).map_err(|e| {
                Error::Integrity(format!("{}: malformed record: {e}", self.path.display()))
            })?);
        }
        Ok(out)
    }
}

/// Every document of every shard, in manifest order.
pub fn corpus_docs(shards: &[CorpusShard]) -> impl Iterator<Item = Result<RawDocument>> + '_ {
    shards.iter().flat_map(|s| -> Box<dyn Iterator<Item = Result<RawDocument>>> {
        match read_shard(s) {
            Ok(r) => Box::new(r),
            Err(e) => Box::new(std::iter::once(Err(e))),
        }
    })
}

/// Yields the `Ok` items and parks the first error, ending the stream.
pub struct UntilErr<'e, I> {
    inner: I,
    error: &'e mut Option<Error>,
}

impl<'e, I> UntilErr<'e, I> {
    pub fn new(inner: I, error: &'e mut Option<Error>) -> Self {
        Self { inner, error }
    }
}

impl<T, I: Iterator<Item = Result<T>>> Iterator for UntilErr<'_, I> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        if self.error.is_some() {
            return None;
        }
        match self.inner.next()? {
            Ok(t) => Some(t),
            Err(e) => {
                *self.error = Some(e);
                None
            }
        }
    }
}
