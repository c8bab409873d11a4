//! Word-vector lexicon with a curated synonym oracle.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon {path}: {message}")]
    Parse { path: String, message: String },
    #[error("lexicon {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Immutable word vectors plus synonym sets. Shared read-only across
/// mining workers.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingLexicon {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
    synonym_sets: Vec<Vec<String>>,
    /// word -> indices of the synonym sets containing it
    synonym_index: HashMap<String, Vec<usize>>,
}

impl EmbeddingLexicon {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            ..Self::default()
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Insert a word vector. Panics on dimension mismatch or non-finite
    /// entries; lexicons are built once at load time.
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) {
        assert_eq!(vector.len(), self.dimension, "vector dimension mismatch");
        assert!(
            vector.iter().all(|v| v.is_finite()),
            "non-finite vector for {word:?}"
        );
        self.vectors.insert(word.to_string(), vector);
    }

    pub fn with_word(mut self, word: &str, vector: Vec<f64>) -> Self {
        self.insert(word, vector);
        self
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn add_synonym_set(&mut self, words: &[&str]) {
        let idx = self.synonym_sets.len();
        self.synonym_sets
            .push(words.iter().map(|w| w.to_string()).collect());
        for w in words {
            self.synonym_index
                .entry(w.to_string())
                .or_default()
                .push(idx);
        }
    }

    pub fn with_synonyms(mut self, words: &[&str]) -> Self {
        self.add_synonym_set(words);
        self
    }

    /// Confidence that two texts are synonyms: 1.0 when they share a set
    /// (membership is symmetric), 0.0 otherwise.
    pub fn synonym_confidence(&self, a: &str, b: &str) -> f64 {
        if a == b && self.synonym_index.contains_key(a) {
            return 1.0;
        }
        let (Some(sa), Some(sb)) = (self.synonym_index.get(a), self.synonym_index.get(b)) else {
            return 0.0;
        };
        if sa.iter().any(|i| sb.contains(i)) {
            1.0
        } else {
            0.0
        }
    }

    /// Load vectors from the text format: a `<vocab_size> <dimension>`
    /// header line, then one `word v1 v2 ... vd` line per word.
    pub fn load_vectors(path: &Path) -> Result<Self, LexiconError> {
        let display = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| LexiconError::Io {
            path: display.clone(),
            source: e,
        })?;
        let parse = |message: String| LexiconError::Parse {
            path: display.clone(),
            message,
        };

        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse("empty lexicon file".into()))?;
        let mut parts = header.split_whitespace();
        let vocab: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse(format!("bad header: {header:?}")))?;
        let dimension: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse(format!("bad header: {header:?}")))?;

        let mut lex = Self::new(dimension);
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().expect("nonempty line has a first field");
            let vector: Vec<f64> = fields
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| parse(format!("line {}: {e}", lineno + 1)))?;
            if vector.len() != dimension {
                return Err(parse(format!(
                    "line {}: expected {} components, found {}",
                    lineno + 1,
                    dimension,
                    vector.len()
                )));
            }
            if !vector.iter().all(|v| v.is_finite()) {
                return Err(parse(format!("line {}: non-finite component", lineno + 1)));
            }
            lex.vectors.insert(word.to_string(), vector);
        }
        if lex.vectors.len() != vocab {
            return Err(parse(format!(
                "header declares {} words, file has {}",
                vocab,
                lex.vectors.len()
            )));
        }
        Ok(lex)
    }

    /// Load synonym sets from a JSON array of word arrays:
    /// `[["driving","steering"], ...]`.
    pub fn load_synonyms(&mut self, path: &Path) -> Result<(), LexiconError> {
        let display = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| LexiconError::Io {
            path: display.clone(),
            source: e,
        })?;
        let sets: Vec<Vec<String>> =
            serde_json::from_str(&text).map_err(|e| LexiconError::Parse {
                path: display,
                message: e.to_string(),
            })?;
        for set in sets {
            let refs: Vec<&str> = set.iter().map(String::as_str).collect();
            self.add_synonym_set(&refs);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn loads_text_vectors_and_synonyms() {
        let dir = tempfile::tempdir().unwrap();
        let vec_path = dir.path().join("lexicon.txt");
        let syn_path = dir.path().join("synonyms.json");
        let mut f = std::fs::File::create(&vec_path).unwrap();
        writeln!(f, "3 2").unwrap();
        writeln!(f, "man 1.0 0.0").unwrap();
        writeln!(f, "driving 0.0 1.0").unwrap();
        writeln!(f, "steering 0.1 0.9").unwrap();
        drop(f);
        std::fs::write(&syn_path, r#"[["driving","steering"]]"#).unwrap();

        let mut lex = EmbeddingLexicon::load_vectors(&vec_path).unwrap();
        lex.load_synonyms(&syn_path).unwrap();
        assert_eq!(lex.dimension(), 2);
        assert_eq!(lex.vector("man"), Some(&[1.0, 0.0][..]));
        assert_eq!(lex.synonym_confidence("driving", "steering"), 1.0);
        assert_eq!(lex.synonym_confidence("steering", "driving"), 1.0);
        assert_eq!(lex.synonym_confidence("man", "driving"), 0.0);
    }

    #[test]
    fn header_count_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.txt");
        std::fs::write(&p, "2 2\nman 1.0 0.0\n").unwrap();
        assert!(matches!(
            EmbeddingLexicon::load_vectors(&p),
            Err(LexiconError::Parse { .. })
        ));
    }

    #[test]
    fn ragged_vector_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.txt");
        std::fs::write(&p, "1 3\nman 1.0 0.0\n").unwrap();
        assert!(EmbeddingLexicon::load_vectors(&p).is_err());
    }
}
