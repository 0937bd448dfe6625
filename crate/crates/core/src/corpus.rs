//! Web-document ingest: WARC and JSONL shards, the uniform document model,
//! and the domain-key and token-count helpers every later stage uses.
//!
//! Shards are read lazily and in file order. Records that cannot be turned
//! into a [`RawDocument`] are skipped and counted rather than aborting the
//! stream, since crawl archives are routinely dirty.

use std::borrow::Cow;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeZone, Utc};
use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};
use url::{Host, Url};

use crate::error::{Error, IoContext, Result};
use crate::hash::short_id;

/// One fetched web page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub url: String,
    pub fetch_time: DateTime<Utc>,
    pub html: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub token_count: usize,
}

impl RawDocument {
    /// Builds a document at ingest time; `url` must be absolute with a host.
    pub fn new(url: &str, fetch_time: DateTime<Utc>, html: String) -> Result<Self> {
        Self::with_content(url, fetch_time, html, None)
    }

    /// Like [`Self::new`] followed by [`Self::with_text`], without stripping
    /// the HTML only to discard its token count.
    pub fn with_content(url: &str, fetch_time: DateTime<Utc>, html: String, text: Option<String>) -> Result<Self> {
        root_domain(url)?;
        let token_count = match &text {
            Some(t) => count_tokens(t),
            None => count_tokens(&strip_tags(&html)),
        };
        Ok(Self {
            id: document_id(url, &fetch_time),
            url: url.to_string(),
            fetch_time,
            html,
            text,
            token_count,
        })
    }

    pub fn with_text(mut self, text: String) -> Self {
        self.token_count = count_tokens(&text);
        self.text = Some(text);
        self
    }

    pub fn domain(&self) -> Result<DomainKey> {
        root_domain(&self.url)
    }

    /// Plain text when present, else the tag-stripped HTML.
    pub fn content(&self) -> Cow<'_, str> {
        match &self.text {
            Some(t) => Cow::Borrowed(t),
            None => Cow::Owned(strip_tags(&self.html)),
        }
    }
}

/// Stable id over (url, fetch_time).
pub fn document_id(url: &str, fetch_time: &DateTime<Utc>) -> String {
    let ts = format!(
        "{}.{:09}",
        fetch_time.timestamp(),
        fetch_time.timestamp_subsec_nanos()
    );
    short_id(&[url.as_bytes(), ts.as_bytes()])
}

/// Per-site grouping key: the URL host, lowercased, minus one leading `www.`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainKey(String);

impl DomainKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DomainKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<DomainKey> for String {
    fn from(k: DomainKey) -> String {
        k.0
    }
}

pub fn root_domain(url: &str) -> Result<DomainKey> {
    let malformed = |reason: &str| Error::MalformedUrl {
        url: url.to_string(),
        reason: reason.to_string(),
    };
    let parsed = Url::parse(url).map_err(|e| malformed(&e.to_string()))?;
    let key = match parsed.host() {
        None => return Err(malformed("no host component")),
        Some(Host::Domain(d)) => {
            let d = d.to_ascii_lowercase();
            match d.strip_prefix("www.") {
                Some(rest) if !rest.is_empty() => rest.to_string(),
                _ => d,
            }
        }
        Some(Host::Ipv4(ip)) => ip.to_string(),
        Some(Host::Ipv6(ip)) => format!("[{ip}]"),
    };
    if key.is_empty() {
        return Err(malformed("empty host"));
    }
    Ok(DomainKey(key))
}

/// Number of maximal non-whitespace runs.
pub fn count_tokens(text: &str) -> usize {
    let bytes = text.as_bytes();
    let mut count = 0;
    let mut prev_space = true;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let space = if b < 0x80 {
            i += 1;
            ASCII_SPACE[b as usize]
        } else {
            let c = text[i..].chars().next().expect("char boundary");
            i += c.len_utf8();
            c.is_whitespace()
        };
        count += usize::from(prev_space & !space);
        prev_space = space;
    }
    count
}

// ASCII bytes that `char::is_whitespace` accepts
const ASCII_SPACE: [bool; 128] = {
    let mut t = [false; 128];
    t[b' ' as usize] = true;
    let mut b = 0x09;
    while b <= 0x0d {
        t[b] = true;
        b += 1;
    }
    t
};

/// Cheap tag stripper used for token accounting and scoring raw pages.
/// Drops comments and the bodies of `script`/`style`; every tag becomes a
/// space. Entities are left as written.
pub fn strip_tags(html: &str) -> String {
    let bytes = html.as_bytes();
    let mut out = String::with_capacity(html.len());
    let mut i = 0;
    while i < bytes.len() {
        let Some(rel) = memchr_lt(&bytes[i..]) else {
            out.push_str(&html[i..]);
            break;
        };
        out.push_str(&html[i..i + rel]);
        i += rel;
        let rest = &bytes[i..];
        if rest.starts_with(b"<!--") {
            i = match find(&bytes[i + 4..], b"-->") {
                Some(p) => i + 4 + p + 3,
                None => bytes.len(),
            };
            out.push(' ');
            continue;
        }
        let raw_text = if starts_with_ci(rest, b"<script") {
            Some(&b"</script"[..])
        } else if starts_with_ci(rest, b"<style") {
            Some(&b"</style"[..])
        } else {
            None
        };
        let tag_end = match find(rest, b">") {
            Some(p) => i + p + 1,
            None => {
                // unterminated tag: keep the text verbatim
                out.push_str(&html[i..]);
                break;
            }
        };
        i = tag_end;
        if let Some(close) = raw_text {
            i = match find_ci(&bytes[i..], close) {
                Some(p) => match find(&bytes[i + p..], b">") {
                    Some(q) => i + p + q + 1,
                    None => bytes.len(),
                },
                None => bytes.len(),
            };
        }
        out.push(' ');
    }
    out
}

#[inline]
fn memchr_lt(hay: &[u8]) -> Option<usize> {
    hay.iter().position(|&b| b == b'<')
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

fn find_ci(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len())
        .position(|w| w.eq_ignore_ascii_case(needle))
}

fn starts_with_ci(hay: &[u8], prefix: &[u8]) -> bool {
    hay.len() > prefix.len()
        && hay[..prefix.len()].eq_ignore_ascii_case(prefix)
        && matches!(hay[prefix.len()], b'>' | b' ' | b'\t' | b'\n' | b'\r' | b'/')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShardFormat {
    Warc,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusShard {
    pub path: PathBuf,
    pub format: ShardFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_count: Option<u64>,
}

impl CorpusShard {
    pub fn new(path: impl Into<PathBuf>, format: ShardFormat) -> Self {
        Self {
            path: path.into(),
            format,
            record_count: None,
        }
    }

    /// Full pass over the shard; fills `record_count` with the documents
    /// yielded and returns the number of skipped records.
    pub fn scan(&mut self) -> Result<u64> {
        let mut reader = read_shard(self)?;
        let mut n = 0u64;
        for doc in reader.by_ref() {
            doc?;
            n += 1;
        }
        self.record_count = Some(n);
        Ok(reader.skipped())
    }
}

/// Reads a shard manifest (JSONL of `{path, format}`); relative paths are
/// resolved against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<CorpusShard>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut shards: Vec<CorpusShard> = crate::jsonl::read_all(path)?;
    for s in &mut shards {
        if s.path.is_relative() {
            s.path = base.join(&s.path);
        }
    }
    Ok(shards)
}

pub fn read_shard(shard: &CorpusShard) -> Result<ShardReader> {
    let file = File::open(&shard.path).at(&shard.path)?;
    let mut buffered = BufReader::with_capacity(1 << 16, file);
    let gz = buffered.fill_buf().at(&shard.path)?.starts_with(&[0x1f, 0x8b]);
    let input: Box<dyn BufRead + Send> = if gz {
        Box::new(BufReader::with_capacity(1 << 16, MultiGzDecoder::new(buffered)))
    } else {
        Box::new(buffered)
    };
    Ok(ShardReader {
        input,
        format: shard.format,
        path: shard.path.clone(),
        skipped: 0,
        line: Vec::new(),
        pending_header: None,
        done: false,
    })
}

/// Lazily decodes a shard into documents, in file order.
pub struct ShardReader {
    input: Box<dyn BufRead + Send>,
    format: ShardFormat,
    path: PathBuf,
    skipped: u64,
    line: Vec<u8>,
    // a version line found while resynchronising past a corrupt WARC record
    pending_header: Option<Vec<u8>>,
    done: bool,
}

impl ShardReader {
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    fn read_line(&mut self) -> Result<bool> {
        self.line.clear();
        let n = self.input.read_until(b'\n', &mut self.line).at(&self.path)?;
        Ok(n > 0)
    }

    fn next_jsonl(&mut self) -> Result<Option<RawDocument>> {
        loop {
            if !self.read_line()? {
                return Ok(None);
            }
            let line = String::from_utf8_lossy(&self.line);
            if line.trim().is_empty() {
                continue;
            }
            match parse_jsonl_record(&line) {
                Some(doc) => return Ok(Some(doc)),
                None => self.skipped += 1,
            }
        }
    }

    fn next_warc(&mut self) -> Result<Option<RawDocument>> {
        loop {
            let version = match self.pending_header.take() {
                Some(v) => v,
                None => {
                    if !self.read_line()? {
                        return Ok(None);
                    }
                    if trim_eol(&self.line).is_empty() {
                        continue;
                    }
                    self.line.clone()
                }
            };
            if !version.starts_with(b"WARC/") {
                self.skipped += 1;
                if !self.resync()? {
                    return Ok(None);
                }
                continue;
            }
            let mut headers = WarcHeaders::default();
            loop {
                if !self.read_line()? {
                    self.skipped += 1;
                    return Ok(None);
                }
                let l = trim_eol(&self.line);
                if l.is_empty() {
                    break;
                }
                headers.push(l);
            }
            let Some(len) = headers.content_length else {
                self.skipped += 1;
                if !self.resync()? {
                    return Ok(None);
                }
                continue;
            };
            let mut body = Vec::with_capacity(len.min(1 << 24));
            let got = (&mut self.input)
                .take(len as u64)
                .read_to_end(&mut body)
                .at(&self.path)?;
            if got < len {
                self.skipped += 1;
                return Ok(None);
            }
            if headers.record_type.as_deref() != Some("response") {
                continue;
            }
            match warc_response_to_doc(&headers, &body) {
                Some(doc) => return Ok(Some(doc)),
                None => self.skipped += 1,
            }
        }
    }

    /// Skips lines until the next `WARC/` version line.
    fn resync(&mut self) -> Result<bool> {
        loop {
            if !self.read_line()? {
                return Ok(false);
            }
            if self.line.starts_with(b"WARC/") {
                self.pending_header = Some(self.line.clone());
                return Ok(true);
            }
        }
    }
}

impl Iterator for ShardReader {
    type Item = Result<RawDocument>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let next = match self.format {
            ShardFormat::Jsonl => self.next_jsonl(),
            ShardFormat::Warc => self.next_warc(),
        };
        match next {
            Ok(Some(doc)) => Some(Ok(doc)),
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

#[derive(Deserialize)]
struct JsonlInput {
    url: String,
    html: String,
    #[serde(default)]
    fetch_time: Option<FetchTime>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FetchTime {
    Epoch(i64),
    Stamp(String),
}

fn parse_jsonl_record(line: &str) -> Option<RawDocument> {
    let rec: JsonlInput = serde_json::from_str(line).ok()?;
    let fetch_time = match rec.fetch_time {
        None => epoch(),
        Some(FetchTime::Epoch(s)) => Utc.timestamp_opt(s, 0).single()?,
        Some(FetchTime::Stamp(s)) => DateTime::parse_from_rfc3339(&s).ok()?.with_timezone(&Utc),
    };
    RawDocument::with_content(&rec.url, fetch_time, rec.html, rec.text).ok()
}

fn epoch() -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH
}

#[derive(Default)]
struct WarcHeaders {
    record_type: Option<String>,
    target_uri: Option<String>,
    date: Option<String>,
    content_length: Option<usize>,
}

impl WarcHeaders {
    fn push(&mut self, line: &[u8]) {
        let line = String::from_utf8_lossy(line);
        let Some((name, value)) = line.split_once(':') else {
            return;
        };
        let value = value.trim();
        match name.trim().to_ascii_lowercase().as_str() {
            "warc-type" => self.record_type = Some(value.to_string()),
            "warc-target-uri" => {
                let v = value.trim_start_matches('<').trim_end_matches('>');
                self.target_uri = Some(v.to_string());
            }
            "warc-date" => self.date = Some(value.to_string()),
            "content-length" => self.content_length = value.parse().ok(),
            _ => {}
        }
    }
}

fn warc_response_to_doc(headers: &WarcHeaders, body: &[u8]) -> Option<RawDocument> {
    let url = headers.target_uri.as_deref()?;
    let fetch_time = match &headers.date {
        Some(d) => DateTime::parse_from_rfc3339(d).ok()?.with_timezone(&Utc),
        None => epoch(),
    };
    // HTTP status line and headers precede the payload
    let payload = if body.starts_with(b"HTTP/") {
        match find(body, b"\r\n\r\n") {
            Some(p) => &body[p + 4..],
            None => match find(body, b"\n\n") {
                Some(p) => &body[p + 2..],
                None => &[][..],
            },
        }
    } else {
        body
    };
    let html = String::from_utf8_lossy(payload).into_owned();
    RawDocument::new(url, fetch_time, html).ok()
}

fn trim_eol(line: &[u8]) -> &[u8] {
    let mut end = line.len();
    while end > 0 && matches!(line[end - 1], b'\n' | b'\r') {
        end -= 1;
    }
    &line[..end]
}
