//! Deterministic synthetic inputs: a small crawl with quiz, forum and junk
//! sites, seed examples, a benchmark set with planted overlap, mock LLM
//! scripts and a matching pipeline config. Used by the `make-fixture`
//! command, the integration tests and the benches.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use flate2::write::GzEncoder;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::classifier::LabeledExample;
use crate::corpus::RawDocument;
use crate::decontam::BenchmarkEntry;
use crate::error::{IoContext, Result};
use crate::jsonl;
use crate::llm::{MockMatch, MockRule};

pub const QUIZ_WORDS: &[&str] = &[
    "question", "answer", "solve", "exercise", "practice", "quiz", "exam", "problem", "solution",
    "worksheet", "homework", "calculate", "explain", "marks", "test", "worked", "step", "show",
    "method", "correct", "score", "revision", "grade", "points", "attempt", "check", "hint",
];

pub const SHOP_WORDS: &[&str] = &[
    "buy", "cart", "shipping", "sale", "discount", "price", "order", "checkout", "shoes", "jacket",
    "delivery", "returns", "size", "colour", "stock", "brand", "offer", "coupon", "wishlist",
    "review", "stars", "deal", "free", "bundle", "outlet", "gift", "store",
];

pub const NEWS_WORDS: &[&str] = &[
    "reported", "officials", "city", "council", "weather", "election", "minister", "police",
    "yesterday", "statement", "match", "season", "traffic", "festival", "market", "economy",
    "storm", "vote", "mayor", "league", "announced", "residents", "museum", "concert", "airport",
];

pub const BLOG_WORDS: &[&str] = &[
    "students", "lesson", "classroom", "teaching", "today", "practice", "homework", "parents",
    "term", "reading", "our", "school", "week", "fun", "projects", "learning", "group", "ideas",
    "kids", "activity", "notes", "planning", "library", "club",
];

fn words(rng: &mut ChaCha8Rng, vocab: &[&str], n: usize) -> String {
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(vocab.choose(rng).expect("non-empty vocab"));
    }
    out
}

fn sentence(rng: &mut ChaCha8Rng, vocab: &[&str]) -> String {
    let n = rng.random_range(6..14);
    let mut s = words(rng, vocab, n);
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s.push('.');
    s
}

/// A quiz item with a short final answer. `Riddle` items are the ones the
/// fixture refiners decline to rewrite.
pub fn quiz_item(rng: &mut ChaCha8Rng) -> (String, String) {
    match rng.random_range(0..8) {
        0 => {
            let (a, b) = (rng.random_range(10..500), rng.random_range(10..500));
            (format!("What is {a} + {b}?"), format!("{}", a + b))
        }
        1 => {
            let (a, b) = (rng.random_range(3..40), rng.random_range(3..40));
            (format!("Compute {a} × {b}."), format!("{}", a * b))
        }
        2 => {
            let (a, x, b) = (rng.random_range(2..12), rng.random_range(1..20), rng.random_range(1..30));
            (format!("Solve for x: {a}x + {b} = {}.", a * x + b), format!("x = {x}"))
        }
        3 => {
            let (t, v) = (rng.random_range(2..6), rng.random_range(30..110));
            (
                format!("A train travels {} km in {t} hours. What is its average speed?", t * v),
                format!("{v} km/h"),
            )
        }
        4 => {
            let (name, molar) = [("water", 18), ("methane", 16), ("oxygen gas", 32), ("table salt", 58)]
                .choose(rng)
                .copied()
                .expect("non-empty");
            let k = rng.random_range(1..150);
            (
                format!("How many moles are in {} g of {name}, taking {molar} g/mol?", molar * k),
                format!("{k} mol"),
            )
        }
        5 => {
            let (c, p) = (rng.random_range(5..80), rng.random_range(1..40));
            (
                format!("A shop buys a lamp for ${c} and sells it for ${}. What is the profit?", c + p),
                format!("${p}"),
            )
        }
        6 => {
            let items = [
                ("Which part of a cell produces most of its ATP?", "The mitochondria."),
                ("Which cell structure holds the genetic material?", "The nucleus."),
                ("What do plant cells use to capture light energy?", "Chloroplasts."),
            ];
            let (q, a) = items.choose(rng).expect("non-empty");
            (format!("{q} (item {})", rng.random_range(1..1000)), (*a).to_owned())
        }
        _ => {
            let items = [
                ("what has keys but cannot open locks?", "A piano."),
                ("what gets wetter the more it dries?", "A towel."),
                ("what has hands but cannot clap?", "A clock."),
            ];
            let (q, a) = items.choose(rng).expect("non-empty");
            (format!("Riddle {}: {q}", rng.random_range(1..1000)), (*a).to_owned())
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn page_chrome(rng: &mut ChaCha8Rng, site: &str, title: &str, main: &str) -> String {
    let mut h = String::new();
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html><head><title>{t}</title><style>body {{ font: 14px sans-serif }}</style>\
         <script>var tracker = \"{site}\"; if (a < b) {{ load(); }}</script></head>\n<body>\n\
         <nav class=\"top-menu\"><a href=\"/\">Home</a> <a href=\"/about\">About</a></nav>\n\
         <div class=\"ad-banner\">Sponsored: {ad}</div>\n<main>\n<h1>{t}</h1>\n{main}</main>\n\
         <div class=\"shareButtons\">Share on social</div>\n\
         <footer>© {site} {year}</footer>\n</body></html>\n",
        t = escape(title),
        ad = escape(&sentence(rng, SHOP_WORDS)),
        year = rng.random_range(2015..2024),
    );
    h
}

/// Question and answer blocks under explicit headings.
pub fn quiz_page(rng: &mut ChaCha8Rng, site: &str, title: &str, items: &[(String, String)]) -> String {
    let mut main = String::new();
    for (i, (q, a)) in items.iter().enumerate() {
        if i > 0 {
            main.push_str("<p>---</p>\n");
        }
        let _ = write!(
            main,
            "<h2>QUESTION:</h2>\n<p>{}</p>\n<h2>ANSWER:</h2>\n<p>{}</p>\n",
            escape(q),
            escape(a)
        );
    }
    page_chrome(rng, site, title, &main)
}

/// A forum thread with the asker's post and an accepted reply.
pub fn forum_page(rng: &mut ChaCha8Rng, site: &str, item: &(String, String)) -> String {
    let user = format!("user{}", rng.random_range(100..999));
    let main = format!(
        "<div class=\"post\"><b>{user}</b> asks:<br>\n<h3>QUESTION:</h3>\n<p>{}</p></div>\n\
         <div class=\"post accepted\">\n<h3>ANSWER:</h3>\n<p>{}</p></div>\n",
        escape(&item.0),
        escape(&item.1)
    );
    let title = format!("Homework help: {}", words(rng, QUIZ_WORDS, 3));
    page_chrome(rng, site, &title, &main)
}

/// Pages with no question and answer pairs, drawn from `vocab`.
pub fn prose_page(rng: &mut ChaCha8Rng, site: &str, vocab: &[&str]) -> String {
    let mut main = String::new();
    for _ in 0..rng.random_range(3..7) {
        let _ = writeln!(main, "<p>{}</p>", escape(&format!("{} {}", sentence(rng, vocab), sentence(rng, vocab))));
    }
    let title = sentence(rng, vocab);
    page_chrome(rng, site, &title, &main)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteKind {
    Quiz,
    Forum,
    Blog,
    Shop,
    News,
}

#[derive(Debug, Clone)]
pub struct Site {
    pub host: &'static str,
    pub kind: SiteKind,
    /// Share of the corpus, before small sites are added.
    pub weight: u32,
}

pub const FIXTURE_SITES: &[Site] = &[
    Site { host: "www.mathdrills.org", kind: SiteKind::Quiz, weight: 12 },
    Site { host: "quizarchive.com", kind: SiteKind::Quiz, weight: 10 },
    Site { host: "www.examprep.edu", kind: SiteKind::Quiz, weight: 9 },
    Site { host: "sciencesheets.net", kind: SiteKind::Quiz, weight: 7 },
    Site { host: "forum.studyhelp.com", kind: SiteKind::Forum, weight: 8 },
    Site { host: "teacherblog.net", kind: SiteKind::Blog, weight: 7 },
    Site { host: "www.shoemart.com", kind: SiteKind::Shop, weight: 14 },
    Site { host: "gadgetdeals.shop", kind: SiteKind::Shop, weight: 10 },
    Site { host: "dailynews.info", kind: SiteKind::News, weight: 13 },
    Site { host: "cityherald.org", kind: SiteKind::News, weight: 10 },
];

/// Sites below any sensible round-1 document threshold.
pub const SMALL_SITES: &[Site] = &[
    Site { host: "tinyquiz.org", kind: SiteKind::Quiz, weight: 0 },
    Site { host: "minimath.io", kind: SiteKind::Quiz, weight: 0 },
    Site { host: "smallshop.biz", kind: SiteKind::Shop, weight: 0 },
    Site { host: "localpaper.net", kind: SiteKind::News, weight: 0 },
];

const SMALL_SITE_DOCS: usize = 6;

/// Planted benchmark item copied onto a quiz page.
pub struct Planted {
    pub url: String,
    pub entry: BenchmarkEntry,
}

pub struct SyntheticCorpus {
    pub docs: Vec<RawDocument>,
    pub planted: Vec<Planted>,
    pub benchmark: Vec<BenchmarkEntry>,
}

fn base_time() -> DateTime<Utc> {
    DateTime::from_timestamp(1_700_000_000, 0).expect("valid timestamp")
}

fn benchmark_entry(rng: &mut ChaCha8Rng, i: usize) -> BenchmarkEntry {
    let names = ["Ava", "Ben", "Chloe", "Dev", "Elif", "Femi", "Gus", "Hana"];
    let things = ["stickers", "marbles", "apples", "pencils", "coins", "seashells"];
    let name = names.choose(rng).expect("non-empty");
    let thing = things.choose(rng).expect("non-empty");
    let (a, b, c) = (rng.random_range(5..60), rng.random_range(2..9), rng.random_range(1..20));
    BenchmarkEntry {
        question: format!(
            "{name} collects {thing}. On day {i} {name} has {a} {thing}, buys {b} packs of {c} more and then gives away {} of them. How many {thing} are left?",
            c
        ),
        answer: format!("{a} + {b} × {c} − {c} = {}", a + b * c - c),
        benchmark: "wordprobs".into(),
    }
}

/// The fixture crawl: `docs` pages over [`FIXTURE_SITES`] (by weight) plus
/// [`SMALL_SITES`], shuffled. Two quiz pages carry benchmark questions and
/// `mirror` pages repeat another page's items on a second quiz site.
pub fn fixture_corpus(docs: usize, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let benchmark: Vec<BenchmarkEntry> = (0..40).map(|i| benchmark_entry(&mut rng, i)).collect();
    let total_weight: u32 = FIXTURE_SITES.iter().map(|s| s.weight).sum();
    let big = docs.saturating_sub(SMALL_SITES.len() * SMALL_SITE_DOCS);
    let mut plan: Vec<&Site> = Vec::with_capacity(docs);
    let mut assigned = 0;
    for (i, s) in FIXTURE_SITES.iter().enumerate() {
        let n = if i + 1 == FIXTURE_SITES.len() {
            big - assigned
        } else {
            big * s.weight as usize / total_weight as usize
        };
        assigned += n;
        plan.extend(std::iter::repeat_n(s, n));
    }
    for s in SMALL_SITES {
        plan.extend(std::iter::repeat_n(s, SMALL_SITE_DOCS.min(docs - plan.len().min(docs))));
    }
    plan.truncate(docs);

    let mut out = Vec::with_capacity(plan.len());
    let mut planted = Vec::new();
    let mut page_no = std::collections::HashMap::<&str, usize>::new();
    let mut last_quiz_items: Option<Vec<(String, String)>> = None;
    for site in plan {
        let n = page_no.entry(site.host).or_default();
        *n += 1;
        let n = *n;
        let (url, html) = match site.kind {
            SiteKind::Quiz => {
                let k = rng.random_range(2..5);
                let mut items: Vec<(String, String)> = (0..k).map(|_| quiz_item(&mut rng)).collect();
                let url = format!("https://{}/practice/set-{n}", site.host);
                if site.host == "quizarchive.com" && n % 25 == 0 {
                    // mirror of the previous quiz page
                    if let Some(prev) = &last_quiz_items {
                        items = prev.clone();
                    }
                }
                if site.host == "www.examprep.edu" && (n == 3 || n == 17) {
                    let e = benchmark[n % benchmark.len()].clone();
                    items.push((e.question.clone(), e.answer.clone()));
                    planted.push(Planted { url: url.clone(), entry: e });
                }
                last_quiz_items = Some(items.clone());
                let title = format!("Practice set {n}: {}", words(&mut rng, QUIZ_WORDS, 2));
                (url.clone(), quiz_page(&mut rng, site.host, &title, &items))
            }
            SiteKind::Forum => {
                let item = quiz_item(&mut rng);
                (format!("https://{}/thread/{n}", site.host), forum_page(&mut rng, site.host, &item))
            }
            SiteKind::Blog => {
                let vocab: Vec<&str> = BLOG_WORDS.iter().chain(QUIZ_WORDS).copied().collect();
                (format!("https://{}/posts/{n}", site.host), prose_page(&mut rng, site.host, &vocab))
            }
            SiteKind::Shop => {
                (format!("https://{}/item/{n}", site.host), prose_page(&mut rng, site.host, SHOP_WORDS))
            }
            SiteKind::News => {
                (format!("https://{}/story/{n}", site.host), prose_page(&mut rng, site.host, NEWS_WORDS))
            }
        };
        let t = base_time() + chrono::Duration::seconds(out.len() as i64);
        out.push(RawDocument::new(&url, t, html).expect("fixture urls are valid"));
    }
    use rand::seq::SliceRandom;
    out.shuffle(&mut rng);
    SyntheticCorpus { docs: out, planted, benchmark }
}

/// Labeled seeds: quiz-style text against shop and news text.
pub fn seed_examples(per_class: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * 2);
    for i in 0..per_class {
        let (q, a) = quiz_item(&mut rng);
        let n = rng.random_range(8..20);
        let filler = words(&mut rng, QUIZ_WORDS, n);
        out.push(LabeledExample::new(format!("QUESTION: {q} ANSWER: {a} {filler}"), "positive"));
        let vocab = if i % 2 == 0 { SHOP_WORDS } else { NEWS_WORDS };
        let n = rng.random_range(15..40);
        out.push(LabeledExample::new(words(&mut rng, vocab, n), "negative"));
    }
    out
}

/// Two classes over disjoint synthetic vocabularies.
pub fn disjoint_vocab_examples(n: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<String> = (0..50).map(|i| format!("alpha{i}")).collect();
    let b: Vec<String> = (0..50).map(|i| format!("beta{i}")).collect();
    (0..n)
        .map(|i| {
            let (vocab, label) = if i % 2 == 0 { (&a, "positive") } else { (&b, "negative") };
            let len = rng.random_range(10..40);
            let text: Vec<&str> = (0..len).map(|_| vocab.choose(&mut rng).expect("non-empty").as_str()).collect();
            LabeledExample::new(text.join(" "), label)
        })
        .collect()
}

/// Tag soup for cleaner fuzzing: random nesting, unclosed and mis-cased
/// tags, comments, attributes holding markup and stray angle brackets.
pub fn fuzz_html(rng: &mut ChaCha8Rng) -> String {
    const TAGS: &[&str] = &[
        "div", "p", "span", "script", "style", "SCRIPT", "Style", "nav", "footer", "table", "td", "tr",
        "pre", "code", "b", "i", "a", "ul", "li", "br", "noscript", "iframe", "svg", "template", "h2",
        "section", "textarea", "title", "xmp", "select", "option", "math",
    ];
    const BITS: &[&str] = &[
        "x < y", "a<b", "</", "<!--", "-->", "<![CDATA[", "]]>", "&lt;script&gt;", "&amp;", "<<", ">>",
        "if (i<n) {", "\"", "'", "<scr", "ipt>", "</scrip", "t>", "<!", "<?php", "?>", "&#60;style",
    ];
    let mut out = String::new();
    let mut open: Vec<&str> = Vec::new();
    for _ in 0..rng.random_range(5..80) {
        match rng.random_range(0..10) {
            0..=3 => {
                let t = *TAGS.choose(rng).expect("non-empty");
                let attr = match rng.random_range(0..4) {
                    0 => " class=\"ad-slot\"".to_owned(),
                    1 => format!(" data-x=\"<script>{}</script>\"", rng.random_range(0..9)),
                    2 => " id=\"mainContent\"".to_owned(),
                    _ => String::new(),
                };
                let _ = write!(out, "<{t}{attr}>");
                open.push(t);
            }
            4..=5 => {
                if let Some(t) = open.pop() {
                    if rng.random_bool(0.8) {
                        let _ = write!(out, "</{t}>");
                    }
                }
            }
            6 => out.push_str(BITS.choose(rng).expect("non-empty")),
            7 => {
                let _ = write!(out, "<!-- {} -->", words(rng, NEWS_WORDS, 3));
            }
            _ => out.push_str(&sentence(rng, QUIZ_WORDS)),
        }
    }
    while let Some(t) = open.pop() {
        if rng.random_bool(0.5) {
            let _ = write!(out, "</{t}>");
        }
    }
    out
}

/// Pages of plain prose totalling about `total_bytes` of HTML, for
/// throughput measurement.
pub fn throughput_documents(total_bytes: usize, seed: u64) -> Vec<RawDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocabs = [QUIZ_WORDS, SHOP_WORDS, NEWS_WORDS, BLOG_WORDS];
    let mut out = Vec::new();
    let mut bytes = 0;
    while bytes < total_bytes {
        let i = out.len();
        let vocab = vocabs[i % vocabs.len()];
        let mut text = String::with_capacity(8 << 10);
        while text.len() < 6000 {
            text.push_str(&sentence(&mut rng, vocab));
            text.push(' ');
        }
        let html = format!("<html><body><p>{text}</p></body></html>");
        bytes += html.len();
        let url = format!("https://site{}.example.com/page/{i}", i % 997);
        let t = base_time() + chrono::Duration::seconds(i as i64);
        out.push(RawDocument::new(&url, t, html.clone()).expect("valid url").with_text(text));
    }
    out
}

pub const EXTRACTOR_MODEL: &str = "extractor-sim";
pub const REFINER_MODELS: [&str; 2] = ["refiner-a", "refiner-b"];

/// Echoes marked blocks back, as a faithful extractor would.
pub fn extractor_rules() -> Vec<MockRule> {
    let mut flaky = MockRule::new(MockMatch::Substring("QUESTION:".into()), "{{input}}");
    flaky.fail_times = 3;
    flaky.fail_status = 503;
    vec![flaky, MockRule::new(MockMatch::Any, "NO_QA_FOUND")]
}

/// Keeps the question, appends a closing line to the answer; riddles are
/// declined, which exercises the unrefined fallback.
pub fn refiner_rules(closing: &str) -> Vec<MockRule> {
    vec![
        MockRule::new(MockMatch::Substring("Riddle".into()), "Sorry, I can't rewrite riddles."),
        MockRule::new(MockMatch::Any, format!("{{{{input}}}}\n{closing}")),
    ]
}

/// KEEP for any domain block whose snippets show marked questions. Relies on
/// one domain per batch.
pub fn judge_rules() -> Vec<MockRule> {
    let mut keep = MockRule::new(MockMatch::Substring("QUESTION:".into()), "{{value}}\tKEEP\tpages contain question and answer blocks");
    keep.per_line = Some("DOMAIN: ".into());
    let mut drop = MockRule::new(MockMatch::Any, "{{value}}\tDROP\tno question and answer content");
    drop.per_line = Some("DOMAIN: ".into());
    vec![keep, drop]
}

pub fn labeler_rules() -> Vec<MockRule> {
    [
        ("km", "Physics"),
        ("moles", "Chemistry"),
        ("cell", "Biology"),
        ("profit", "Business"),
        ("Riddle", "I am not sure."),
        ("", "Mathematics"),
    ]
    .into_iter()
    .map(|(needle, subject)| {
        let m = if needle.is_empty() { MockMatch::Any } else { MockMatch::Substring(needle.into()) };
        MockRule::new(m, subject)
    })
    .collect()
}

fn write_rules(path: &Path, comment: &str, rules: &[MockRule]) -> Result<()> {
    let mut text = format!("# {comment}\n");
    for r in rules {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    jsonl::write_bytes(path, text.as_bytes())
}

fn write_warc_gz(path: &Path, docs: &[RawDocument]) -> Result<()> {
    let file = std::fs::File::create(path).at(path)?;
    let mut gz = GzEncoder::new(file, flate2::Compression::fast());
    for d in docs {
        let body = format!("HTTP/1.1 200 OK\r\nContent-Type: text/html\r\n\r\n{}", d.html);
        let header = format!(
            "WARC/1.0\r\nWARC-Type: response\r\nWARC-Target-URI: {}\r\nWARC-Date: {}\r\nContent-Length: {}\r\n\r\n",
            d.url,
            d.fetch_time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            body.len()
        );
        gz.write_all(header.as_bytes()).at(path)?;
        gz.write_all(body.as_bytes()).at(path)?;
        gz.write_all(b"\r\n\r\n").at(path)?;
    }
    gz.finish().at(path)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureOptions {
    pub docs: usize,
    pub shards: usize,
    pub seed: u64,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self { docs: 1000, shards: 4, seed: 7 }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub docs: usize,
    pub planted_urls: Vec<String>,
}

/// Writes the fixture tree under `dir` and returns the config path. The last
/// shard is a gzipped WARC file, the others JSONL.
pub fn write_fixture(dir: &Path, opts: FixtureOptions) -> Result<Fixture> {
    let corpus = fixture_corpus(opts.docs, opts.seed);
    let shards = opts.shards.max(1);
    let cdir = dir.join("corpus");
    std::fs::create_dir_all(&cdir).at(&cdir)?;
    let mut manifest = String::new();
    let per = corpus.docs.len().div_ceil(shards);
    for (i, chunk) in corpus.docs.chunks(per.max(1)).enumerate() {
        let (name, format) = if i + 1 == shards && shards > 1 {
            (format!("shard-{i:02}.warc.gz"), "warc")
        } else {
            (format!("shard-{i:02}.jsonl"), "jsonl")
        };
        let path = cdir.join(&name);
        if format == "warc" {
            write_warc_gz(&path, chunk)?;
        } else {
            let mut text = String::new();
            for d in chunk {
                let rec = json!({"url": d.url, "fetch_time": d.fetch_time.to_rfc3339(), "html": d.html});
                text.push_str(&rec.to_string());
                text.push('\n');
            }
            jsonl::write_bytes(&path, text.as_bytes())?;
        }
        let _ = writeln!(manifest, "{}", json!({"path": name, "format": format}));
    }
    jsonl::write_bytes(&cdir.join("manifest.jsonl"), manifest.as_bytes())?;
    jsonl::write_all(&dir.join("seeds.jsonl"), &seed_examples(200, opts.seed))?;

    let bdir = dir.join("benchmarks");
    std::fs::create_dir_all(&bdir).at(&bdir)?;
    jsonl::write_all(&bdir.join("wordprobs.jsonl"), &corpus.benchmark)?;

    let mdir = dir.join("mocks");
    write_rules(&mdir.join("judge.jsonl"), "domain triage", &judge_rules())?;
    write_rules(&mdir.join("extractor.jsonl"), "extraction", &extractor_rules())?;
    write_rules(&mdir.join("refiner_a.jsonl"), "refiner a", &refiner_rules("Each step above leads to this result."))?;
    write_rules(&mdir.join("refiner_b.jsonl"), "refiner b", &refiner_rules("Checked by working through it again."))?;
    write_rules(&mdir.join("labeler.jsonl"), "subject labels", &labeler_rules())?;

    let config = dir.join("pipeline.toml");
    jsonl::write_bytes(&config, FIXTURE_CONFIG.as_bytes())?;
    Ok(Fixture {
        dir: dir.to_path_buf(),
        config,
        docs: corpus.docs.len(),
        planted_urls: corpus.planted.into_iter().map(|p| p.url).collect(),
    })
}

/// Pipeline config for the fixture tree; small classifier, scripted mocks.
pub const FIXTURE_CONFIG: &str = r#"# Fixture pipeline: every endpoint is a scripted mock.

[paths]
corpus_manifest = "corpus/manifest.jsonl"
seed_examples = "seeds.jsonl"
benchmarks = ["benchmarks"]
output_dir = "out"

[classifier]
dim = 16
buckets = 8192
min_count = 1
epochs = 15
lr = 0.5

[recall]
threshold = 0.5
min_docs = 20
per_class_cap = 300
triage_batch_size = 1
judge1 = { model = "judge-small", mock_script = "mocks/judge.jsonl", max_in_flight = 4 }
judge2 = { model = "judge-large", mock_script = "mocks/judge.jsonl", max_in_flight = 4 }

[extract]
batch_docs = 64
endpoint = { model = "extractor-sim", mock_script = "mocks/extractor.jsonl", max_in_flight = 8, backoff_base_ms = 1 }

[refine]
split = 0.5
seed = 11
batch_size = 64

[[refine.endpoints]]
model = "refiner-a"
mock_script = "mocks/refiner_a.jsonl"
max_in_flight = 8

[[refine.endpoints]]
model = "refiner-b"
mock_script = "mocks/refiner_b.jsonl"
max_in_flight = 8

[decontam]
n = 10
scope = "source-page"

[assemble]
label_subjects = true
labeler = { model = "labeler-sim", mock_script = "mocks/labeler.jsonl", max_in_flight = 8 }
audit_n = 50
audit_seed = 0
batch_size = 128
"#;
