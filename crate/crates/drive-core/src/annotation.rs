//! Caption simplification and verb-state annotation.
//!
//! The heavy lifting (splitting a caption into a triplet, classifying the
//! verb) belongs to an external service. This module defines the wire
//! contract, an offline deterministic stub driven by a rule fixture, a
//! minimal HTTP client, and a caching front end so that repeated pipelines
//! never re-query the service.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashutil::fnv1a64_hex;
use crate::triplet::{TaggedCaption, TaggedToken, VerbState};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("annotation unavailable: {0}")]
    AnnotationUnavailable(String),
    #[error("malformed annotation response: {0}")]
    MalformedResponse(String),
}

/// Body of the annotation request: `{"caption": ...}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct WireRequest {
    pub caption: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireTriplet {
    pub s: String,
    pub r: String,
    pub o: String,
}

/// Body of the annotation response:
/// `{"triplet": {"s","r","o"}, "state": "stative"|"dynamic"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireResponse {
    pub triplet: WireTriplet,
    pub state: VerbState,
    /// Lemma of the relation head, when the service knows it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_lemma: Option<String>,
}

/// Anything that can simplify a caption and classify its verb.
pub trait AnnotationClient: Send + Sync {
    fn annotate(&self, caption: &str) -> Result<WireResponse, AnnotationError>;
}

// ---------------------------------------------------------------------------
// Offline stub
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerbRule {
    pub state: VerbState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverrideRule {
    pub caption: String,
    pub s: String,
    pub r: String,
    pub o: String,
    pub state: VerbState,
}

/// Rule fixture backing the offline stub.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StubRules {
    /// Verb span (possibly multiword) to its default state.
    #[serde(default)]
    pub verbs: BTreeMap<String, VerbRule>,
    /// Full-caption overrides for context-dependent states.
    #[serde(default)]
    pub overrides: Vec<OverrideRule>,
}

/// Deterministic annotation stub: a verb table plus per-caption overrides
/// loaded from a fixture file. No network, no model.
pub struct StubClient {
    verbs: BTreeMap<String, VerbRule>,
    overrides: HashMap<String, OverrideRule>,
}

impl StubClient {
    pub fn new(rules: StubRules) -> Self {
        let overrides = rules
            .overrides
            .into_iter()
            .map(|r| (normalize(&r.caption), r))
            .collect();
        Self {
            verbs: rules.verbs,
            overrides,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, AnnotationError> {
        let text = fs::read_to_string(path).map_err(|e| {
            AnnotationError::AnnotationUnavailable(format!("fixture {}: {e}", path.display()))
        })?;
        let rules: StubRules = serde_json::from_str(&text)
            .map_err(|e| AnnotationError::MalformedResponse(format!("fixture: {e}")))?;
        Ok(Self::new(rules))
    }

    pub fn with_verb(mut self, verb: &str, state: VerbState) -> Self {
        self.verbs
            .insert(verb.to_string(), VerbRule { state, lemma: None });
        self
    }

    /// Leftmost-longest match of a verb-table key against the token stream.
    fn find_verb(&self, tokens: &[String]) -> Option<(usize, usize, &VerbRule)> {
        for start in 0..tokens.len() {
            let mut best: Option<(usize, &VerbRule)> = None;
            for len in 1..=(tokens.len() - start) {
                let span = tokens[start..start + len].join(" ");
                if let Some(rule) = self.verbs.get(&span) {
                    best = Some((len, rule));
                }
            }
            if let Some((len, rule)) = best {
                return Some((start, len, rule));
            }
        }
        None
    }
}

const DETERMINERS: [&str; 11] = [
    "a", "an", "the", "his", "her", "its", "their", "this", "that", "these", "those",
];
const AUXILIARIES: [&str; 8] = ["is", "are", "was", "were", "be", "been", "being", "am"];

fn normalize(s: &str) -> String {
    s.to_lowercase()
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

impl AnnotationClient for StubClient {
    fn annotate(&self, caption: &str) -> Result<WireResponse, AnnotationError> {
        let norm = normalize(caption);
        if let Some(rule) = self.overrides.get(&norm) {
            return Ok(WireResponse {
                triplet: WireTriplet {
                    s: normalize(&rule.s),
                    r: normalize(&rule.r),
                    o: normalize(&rule.o),
                },
                state: rule.state,
                relation_lemma: None,
            });
        }

        let tokens: Vec<String> = norm.split_whitespace().map(str::to_string).collect();
        let (start, len, rule) = self.find_verb(&tokens).ok_or_else(|| {
            AnnotationError::AnnotationUnavailable(format!("no verb rule matches {norm:?}"))
        })?;

        let content = |ws: &[String]| {
            ws.iter()
                .filter(|w| {
                    !DETERMINERS.contains(&w.as_str()) && !AUXILIARIES.contains(&w.as_str())
                })
                .cloned()
                .collect::<Vec<_>>()
                .join(" ")
        };

        Ok(WireResponse {
            triplet: WireTriplet {
                s: content(&tokens[..start]),
                r: tokens[start..start + len].join(" "),
                o: content(&tokens[start + len..]),
            },
            state: rule.state,
            relation_lemma: rule.lemma.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// HTTP client
// ---------------------------------------------------------------------------

/// Minimal HTTP/1.1 POST client for the annotation endpoint.
///
/// Speaks plain `http://host:port/path` with `Connection: close`, which is
/// all the protocol needs; anything fancier should sit behind a proxy.
pub struct HttpClient {
    host: String,
    path: String,
    timeout: Duration,
}

impl HttpClient {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, AnnotationError> {
        let rest = base_url.strip_prefix("http://").ok_or_else(|| {
            AnnotationError::AnnotationUnavailable(format!(
                "unsupported annotation url (need http://): {base_url}"
            ))
        })?;
        let (host, path) = match rest.find('/') {
            Some(i) => (&rest[..i], &rest[i..]),
            None => (rest, "/"),
        };
        let host = if host.contains(':') {
            host.to_string()
        } else {
            format!("{host}:80")
        };
        Ok(Self {
            host,
            path: path.to_string(),
            timeout,
        })
    }

    fn post(&self, body: &str) -> Result<String, AnnotationError> {
        let unavailable =
            |m: String| -> AnnotationError { AnnotationError::AnnotationUnavailable(m) };

        let addr = self
            .host
            .to_socket_addrs()
            .map_err(|e| unavailable(format!("resolve {}: {e}", self.host)))?
            .next()
            .ok_or_else(|| unavailable(format!("no address for {}", self.host)))?;
        let mut stream = TcpStream::connect_timeout(&addr, self.timeout)
            .map_err(|e| unavailable(format!("connect {}: {e}", self.host)))?;
        stream.set_read_timeout(Some(self.timeout)).ok();
        stream.set_write_timeout(Some(self.timeout)).ok();

        let request = format!(
            "POST {} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\n\
             Content-Length: {}\r\nConnection: close\r\n\r\n{}",
            self.path,
            self.host,
            body.len(),
            body
        );
        stream
            .write_all(request.as_bytes())
            .map_err(|e| unavailable(format!("send: {e}")))?;

        let mut raw = Vec::new();
        stream
            .read_to_end(&mut raw)
            .map_err(|e| unavailable(format!("receive: {e}")))?;
        let raw = String::from_utf8(raw)
            .map_err(|_| AnnotationError::MalformedResponse("non-utf8 response".into()))?;

        let (head, body) = raw
            .split_once("\r\n\r\n")
            .ok_or_else(|| AnnotationError::MalformedResponse("missing header break".into()))?;
        let status_line = head.lines().next().unwrap_or_default();
        let code: u16 = status_line
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                AnnotationError::MalformedResponse(format!("bad status line: {status_line:?}"))
            })?;
        if !(200..300).contains(&code) {
            return Err(unavailable(format!("server returned status {code}")));
        }

        let headers_lower = head.to_lowercase();
        if headers_lower.contains("transfer-encoding: chunked") {
            return decode_chunked(body);
        }
        let content_length = headers_lower
            .lines()
            .find_map(|l| l.strip_prefix("content-length:"))
            .and_then(|v| v.trim().parse::<usize>().ok());
        Ok(match content_length {
            Some(n) if n <= body.len() => body[..n].to_string(),
            _ => body.to_string(),
        })
    }
}

fn decode_chunked(body: &str) -> Result<String, AnnotationError> {
    let mut out = String::new();
    let mut rest = body;
    loop {
        let (size_line, tail) = rest
            .split_once("\r\n")
            .ok_or_else(|| AnnotationError::MalformedResponse("truncated chunk size".into()))?;
        let size = usize::from_str_radix(size_line.trim(), 16)
            .map_err(|_| AnnotationError::MalformedResponse("bad chunk size".into()))?;
        if size == 0 {
            return Ok(out);
        }
        if tail.len() < size {
            return Err(AnnotationError::MalformedResponse("truncated chunk".into()));
        }
        out.push_str(&tail[..size]);
        rest = tail[size..].strip_prefix("\r\n").unwrap_or(&tail[size..]);
    }
}

impl AnnotationClient for HttpClient {
    fn annotate(&self, caption: &str) -> Result<WireResponse, AnnotationError> {
        let body = serde_json::to_string(&WireRequest {
            caption: caption.to_string(),
        })
        .expect("request serializes");
        let response = self.post(&body)?;
        serde_json::from_str(&response)
            .map_err(|e| AnnotationError::MalformedResponse(format!("{e}: {response:?}")))
    }
}

// ---------------------------------------------------------------------------
// Tagged-caption synthesis
// ---------------------------------------------------------------------------

/// Build the canonical dependency parse of a simplified caption from its
/// triplet parts. Subject and object may be empty (the extraction step then
/// rejects the caption); the relation must not be.
pub fn synthesize_tagged(
    subject: &str,
    relation: &str,
    object: &str,
    relation_lemma: Option<&str>,
) -> Result<TaggedCaption, AnnotationError> {
    let s_words: Vec<String> = normalize(subject)
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let r_words: Vec<String> = normalize(relation)
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let o_words: Vec<String> = normalize(object)
        .split_whitespace()
        .map(str::to_string)
        .collect();
    if r_words.is_empty() {
        return Err(AnnotationError::MalformedResponse(
            "empty relation in annotation response".into(),
        ));
    }

    let root = s_words.len();
    let mut tokens = Vec::new();

    let s_head = root.saturating_sub(1);
    for (i, w) in s_words.iter().enumerate() {
        let is_head = i + 1 == s_words.len();
        tokens.push(TaggedToken {
            surface: w.clone(),
            lemma: w.clone(),
            pos: "NOUN".into(),
            head: if is_head { root } else { s_head },
            dep: if is_head { "nsubj" } else { "compound" }.into(),
        });
    }

    for (i, w) in r_words.iter().enumerate() {
        let lemma = if i == 0 {
            relation_lemma.unwrap_or(w).to_string()
        } else {
            w.clone()
        };
        tokens.push(TaggedToken {
            surface: w.clone(),
            lemma,
            pos: if i == 0 { "VERB" } else { "ADP" }.into(),
            head: root,
            dep: if i == 0 { "ROOT" } else { "prep" }.into(),
        });
    }

    // A multiword relation ends in a preposition; hang the object off it.
    let last_rel = root + r_words.len() - 1;
    let (obj_dep, obj_attach) = if r_words.len() > 1 {
        ("pobj", last_rel)
    } else {
        ("dobj", root)
    };
    let o_head = root + r_words.len() + o_words.len().saturating_sub(1);
    for (i, w) in o_words.iter().enumerate() {
        let is_head = i + 1 == o_words.len();
        tokens.push(TaggedToken {
            surface: w.clone(),
            lemma: w.clone(),
            pos: "NOUN".into(),
            head: if is_head { obj_attach } else { o_head },
            dep: if is_head { obj_dep } else { "compound" }.into(),
        });
    }

    TaggedCaption::new(tokens).map_err(|e| AnnotationError::MalformedResponse(e.to_string()))
}

// ---------------------------------------------------------------------------
// Caching annotator
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    hash: String,
    caption: String,
    s: String,
    r: String,
    o: String,
    state: VerbState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relation_lemma: Option<String>,
}

struct CacheState {
    entries: HashMap<String, WireResponse>,
    path: Option<PathBuf>,
}

/// Front end over an [`AnnotationClient`] that memoizes responses per raw
/// caption, optionally persisted to an append-only JSONL file so pipelines
/// replay offline.
pub struct Annotator {
    client: Box<dyn AnnotationClient>,
    cache: Mutex<CacheState>,
}

impl Annotator {
    pub fn new(client: Box<dyn AnnotationClient>) -> Self {
        Self {
            client,
            cache: Mutex::new(CacheState {
                entries: HashMap::new(),
                path: None,
            }),
        }
    }

    /// Attach a persistent cache file, loading any existing entries.
    pub fn with_cache_file(self, path: &Path) -> Result<Self, AnnotationError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| {
                AnnotationError::AnnotationUnavailable(format!("cache {}: {e}", path.display()))
            })?;
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheLine = serde_json::from_str(line).map_err(|e| {
                    AnnotationError::MalformedResponse(format!("cache line {}: {e}", lineno + 1))
                })?;
                entries.insert(
                    normalize(&entry.caption),
                    WireResponse {
                        triplet: WireTriplet {
                            s: entry.s,
                            r: entry.r,
                            o: entry.o,
                        },
                        state: entry.state,
                        relation_lemma: entry.relation_lemma,
                    },
                );
            }
        }
        Ok(Self {
            client: self.client,
            cache: Mutex::new(CacheState {
                entries,
                path: Some(path.to_path_buf()),
            }),
        })
    }

    /// Simplify and classify a caption, via cache when possible.
    pub fn annotate(
        &self,
        raw_caption: &str,
    ) -> Result<(TaggedCaption, VerbState), AnnotationError> {
        let key = normalize(raw_caption);

        if let Some(hit) = self.cache.lock().unwrap().entries.get(&key).cloned() {
            let tagged = synthesize_tagged(
                &hit.triplet.s,
                &hit.triplet.r,
                &hit.triplet.o,
                hit.relation_lemma.as_deref(),
            )?;
            return Ok((tagged, hit.state));
        }

        let response = self.client.annotate(raw_caption)?;
        let tagged = synthesize_tagged(
            &response.triplet.s,
            &response.triplet.r,
            &response.triplet.o,
            response.relation_lemma.as_deref(),
        )?;
        let state = response.state;

        let mut guard = self.cache.lock().unwrap();
        if !guard.entries.contains_key(&key) {
            if let Some(path) = guard.path.clone() {
                let line = CacheLine {
                    hash: fnv1a64_hex(key.as_bytes()),
                    caption: key.clone(),
                    s: response.triplet.s.clone(),
                    r: response.triplet.r.clone(),
                    o: response.triplet.o.clone(),
                    state: response.state,
                    relation_lemma: response.relation_lemma.clone(),
                };
                let mut file = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| {
                        AnnotationError::AnnotationUnavailable(format!(
                            "cache {}: {e}",
                            path.display()
                        ))
                    })?;
                let mut serialized = serde_json::to_string(&line).expect("cache serializes");
                serialized.push('\n');
                file.write_all(serialized.as_bytes()).map_err(|e| {
                    AnnotationError::AnnotationUnavailable(format!("cache {}: {e}", path.display()))
                })?;
            }
            guard.entries.insert(key, response);
        }

        Ok((tagged, state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triplet::extract_triplet;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn stub() -> StubClient {
        StubClient::new(StubRules {
            verbs: BTreeMap::from([
                (
                    "holding".to_string(),
                    VerbRule {
                        state: VerbState::Dynamic,
                        lemma: Some("hold".into()),
                    },
                ),
                (
                    "holds".to_string(),
                    VerbRule {
                        state: VerbState::Dynamic,
                        lemma: Some("hold".into()),
                    },
                ),
                (
                    "rides".to_string(),
                    VerbRule {
                        state: VerbState::Dynamic,
                        lemma: Some("ride".into()),
                    },
                ),
                (
                    "flies through".to_string(),
                    VerbRule {
                        state: VerbState::Dynamic,
                        lemma: Some("fly".into()),
                    },
                ),
            ]),
            overrides: vec![OverrideRule {
                caption: "the clocktower holds lights".into(),
                s: "clocktower".into(),
                r: "holds".into(),
                o: "lights".into(),
                state: VerbState::Stative,
            }],
        })
    }

    #[test]
    fn contextual_state_beats_verb_default() {
        let annotator = Annotator::new(Box::new(stub()));
        let (_, state) = annotator.annotate("a man is holding a racquet").unwrap();
        assert_eq!(state, VerbState::Dynamic);
        let (_, state) = annotator.annotate("the clocktower holds lights").unwrap();
        assert_eq!(state, VerbState::Stative);
    }

    #[test]
    fn unknown_verb_is_unavailable() {
        let annotator = Annotator::new(Box::new(stub()));
        let err = annotator.annotate("a dog chases a ball").unwrap_err();
        assert!(matches!(err, AnnotationError::AnnotationUnavailable(_)));
    }

    #[test]
    fn stub_is_deterministic_and_roundtrips_through_extraction() {
        let annotator = Annotator::new(Box::new(stub()));
        let (a1, s1) = annotator.annotate("a man is holding a racquet").unwrap();
        let (a2, s2) = annotator.annotate("a man is holding a racquet").unwrap();
        assert_eq!(a1, a2);
        assert_eq!(s1, s2);

        let t = extract_triplet(&a1).unwrap();
        assert_eq!(t.subject.text, "man");
        assert_eq!(t.relation.text, "holding");
        assert_eq!(t.relation.head, "hold");
        assert_eq!(t.object.text, "racquet");
    }

    #[test]
    fn multiword_relation_synthesis_extracts_back() {
        let annotator = Annotator::new(Box::new(stub()));
        let (tagged, _) = annotator.annotate("a plane flies through the sky").unwrap();
        let t = extract_triplet(&tagged).unwrap();
        assert_eq!(t.subject.text, "plane");
        assert_eq!(t.relation.text, "flies through");
        assert_eq!(t.object.text, "sky");
    }

    struct CountingClient {
        inner: StubClient,
        calls: AtomicUsize,
    }

    impl AnnotationClient for CountingClient {
        fn annotate(&self, caption: &str) -> Result<WireResponse, AnnotationError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.annotate(caption)
        }
    }

    #[test]
    fn cache_short_circuits_repeat_calls() {
        let client = Box::leak(Box::new(CountingClient {
            inner: stub(),
            calls: AtomicUsize::new(0),
        }));

        struct Borrowed(&'static CountingClient);
        impl AnnotationClient for Borrowed {
            fn annotate(&self, c: &str) -> Result<WireResponse, AnnotationError> {
                self.0.annotate(c)
            }
        }

        let annotator = Annotator::new(Box::new(Borrowed(client)));
        annotator.annotate("a man is holding a racquet").unwrap();
        annotator.annotate("a man is holding a racquet").unwrap();
        annotator.annotate("A man is HOLDING a racquet").unwrap();
        assert_eq!(client.calls.load(Ordering::SeqCst), 1);
    }

    struct FailingClient;
    impl AnnotationClient for FailingClient {
        fn annotate(&self, _: &str) -> Result<WireResponse, AnnotationError> {
            Err(AnnotationError::AnnotationUnavailable("offline".into()))
        }
    }

    #[test]
    fn warm_cache_file_covers_inputs_without_client() {
        let dir = tempfile::tempdir().unwrap();
        let cache_path = dir.path().join("annotations.jsonl");

        let warm = Annotator::new(Box::new(stub()))
            .with_cache_file(&cache_path)
            .unwrap();
        warm.annotate("a man is holding a racquet").unwrap();
        drop(warm);

        let cold = Annotator::new(Box::new(FailingClient))
            .with_cache_file(&cache_path)
            .unwrap();
        let (tagged, state) = cold.annotate("a man is holding a racquet").unwrap();
        assert_eq!(state, VerbState::Dynamic);
        assert_eq!(extract_triplet(&tagged).unwrap().subject.text, "man");
        // anything outside the cache still fails
        assert!(cold.annotate("a dog chases a ball").is_err());
    }

    #[test]
    fn concurrent_annotation_is_interleaving_independent() {
        let annotator = std::sync::Arc::new(Annotator::new(Box::new(stub())));
        let captions = [
            "a man is holding a racquet",
            "the clocktower holds lights",
            "a plane flies through the sky",
        ];
        let mut handles = Vec::new();
        for _ in 0..4 {
            let a = annotator.clone();
            handles.push(std::thread::spawn(move || {
                captions
                    .iter()
                    .map(|c| a.annotate(c).unwrap())
                    .collect::<Vec<_>>()
            }));
        }
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        for r in &results[1..] {
            assert_eq!(r, &results[0]);
        }
    }

    #[test]
    fn http_client_speaks_the_wire_protocol() {
        use std::net::TcpListener;

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut socket, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let mut req = Vec::new();
            loop {
                let n = socket.read(&mut buf).unwrap();
                req.extend_from_slice(&buf[..n]);
                let text = String::from_utf8_lossy(&req);
                if let Some((head, body)) = text.split_once("\r\n\r\n") {
                    let len: usize = head
                        .to_lowercase()
                        .lines()
                        .find_map(|l| l.strip_prefix("content-length:"))
                        .and_then(|v| v.trim().parse().ok())
                        .unwrap_or(0);
                    if body.len() >= len {
                        break;
                    }
                }
            }
            let request = String::from_utf8(req).unwrap();
            assert!(request.starts_with("POST /annotate HTTP/1.1"));
            assert!(request.contains("\"caption\""));
            let body = r#"{"triplet":{"s":"man","r":"driving","o":"car"},"state":"dynamic"}"#;
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            socket.write_all(response.as_bytes()).unwrap();
        });

        let client =
            HttpClient::new(&format!("http://{addr}/annotate"), Duration::from_secs(5)).unwrap();
        let response = client.annotate("a man driving a car").unwrap();
        assert_eq!(response.triplet.s, "man");
        assert_eq!(response.state, VerbState::Dynamic);
        server.join().unwrap();
    }

    #[test]
    fn http_garbage_is_malformed() {
        use std::net::TcpListener;

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut socket, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let _ = socket.read(&mut buf);
            socket
                .write_all(b"HTTP/1.1 200 OK\r\nContent-Length: 9\r\n\r\nnot json!")
                .unwrap();
        });

        let client =
            HttpClient::new(&format!("http://{addr}/annotate"), Duration::from_secs(5)).unwrap();
        let err = client.annotate("whatever").unwrap_err();
        assert!(matches!(err, AnnotationError::MalformedResponse(_)));
        server.join().unwrap();
    }

    #[test]
    fn connection_refused_is_unavailable() {
        // Port 1 is essentially never listening.
        let client =
            HttpClient::new("http://127.0.0.1:1/annotate", Duration::from_millis(200)).unwrap();
        let err = client.annotate("whatever").unwrap_err();
        assert!(matches!(err, AnnotationError::AnnotationUnavailable(_)));
    }
}
