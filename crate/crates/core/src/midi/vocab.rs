use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{read_file, write_file, Error, Result};

/// Bijection between token strings and dense ids, ordered lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

/// Ids of one source file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub source: String,
}

pub fn build_vocabulary<S: AsRef<str>>(corpora: &[Vec<S>]) -> Result<Vocabulary> {
    let distinct: BTreeSet<&str> = corpora.iter().flatten().map(|s| s.as_ref()).collect();
    if distinct.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    Vocabulary::from_tokens(distinct.into_iter().map(String::from).collect())
}

impl Vocabulary {
    /// Uses the given order as the id assignment.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(['\n', '\r']) {
                return Err(Error::Vocabulary(format!("invalid token {t:?} at id {id}")));
            }
            if token_to_id.insert(t.clone(), id).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { id_to_token: tokens, token_to_id })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| {
                self.id(t.as_ref())
                    .ok_or_else(|| Error::Vocabulary(format!("unknown token {:?}", t.as_ref())))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token(id).map(String::from).ok_or_else(|| {
                    Error::Vocabulary(format!("id {id} out of range for vocabulary of {}", self.len()))
                })
            })
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        self.id_to_token.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(String::from).collect();
        if tokens.is_empty() {
            return Err(Error::Vocabulary("vocabulary file is empty".into()));
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read_file(path)?)
            .map_err(|_| Error::Vocabulary(format!("{} is not UTF-8", path.display())))?;
        Self::parse(&text)
    }
}

/// Per-file id sequences, one line each: `source<TAB>id id ...`.
pub fn token_corpus_to_text(seqs: &[TokenSequence]) -> Result<String> {
    let mut out = String::new();
    for s in seqs {
        if s.source.contains(['\t', '\n', '\r']) {
            return Err(Error::Data(format!("source name {:?} contains a tab or newline", s.source)));
        }
        let ids: Vec<String> = s.ids.iter().map(usize::to_string).collect();
        out.push_str(&format!("{}\t{}\n", s.source, ids.join(" ")));
    }
    Ok(out)
}

pub fn parse_token_corpus(text: &str) -> Result<Vec<TokenSequence>> {
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let (source, ids) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("token corpus line {}: missing tab", n + 1)))?;
            let ids = ids
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::Data(format!("token corpus line {}: bad id {t:?}", n + 1)))
                })
                .collect::<Result<_>>()?;
            Ok(TokenSequence { ids, source: source.to_string() })
        })
        .collect()
}

pub fn save_token_corpus(seqs: &[TokenSequence], path: &Path) -> Result<()> {
    write_file(path, token_corpus_to_text(seqs)?.as_bytes())
}

pub fn load_token_corpus(path: &Path) -> Result<Vec<TokenSequence>> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::Data(format!("{} is not UTF-8", path.display())))?;
    parse_token_corpus(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicographic_ids() {
        let v = build_vocabulary(&[vec!["60", "60.64", "48"]]).unwrap();
        assert_eq!(v.id("48"), Some(0));
        assert_eq!(v.id("60"), Some(1));
        assert_eq!(v.id("60.64"), Some(2));
        assert_eq!(v.len(), 3);
        assert_eq!(build_vocabulary(&[vec!["60.64", "48", "60", "48"]]).unwrap(), v);
    }

    #[test]
    fn empty_corpus_is_a_data_error() {
        let empty: Vec<Vec<String>> = vec![vec![]];
        assert!(matches!(build_vocabulary(&empty), Err(Error::Data(_))));
    }

    #[test]
    fn encode_decode_are_inverse() {
        let v = build_vocabulary(&[vec!["60", "62"], vec!["60.64.67"]]).unwrap();
        let t = vec!["62", "60.64.67", "60", "62"];
        let ids = v.encode(&t).unwrap();
        assert_eq!(v.decode(&ids).unwrap(), t);
        let unknown = v.encode(&["999.1"]).unwrap_err();
        assert!(matches!(&unknown, Error::Vocabulary(m) if m.contains("999.1")));
        assert!(v.decode(&[3]).is_err());
        assert!(v.encode::<&str>(&[]).unwrap().is_empty());
    }

    #[test]
    fn file_round_trip() {
        let v = build_vocabulary(&[vec!["36", "38.42", "46"]]).unwrap();
        assert_eq!(Vocabulary::parse(&v.to_text()).unwrap(), v);
        assert!(Vocabulary::parse("60\n60\n").is_err());
    }

    #[test]
    fn token_corpus_round_trip() {
        let seqs = vec![
            TokenSequence { ids: vec![3, 0, 12], source: "a.mid".into() },
            TokenSequence { ids: vec![], source: "empty song.mid".into() },
        ];
        let text = token_corpus_to_text(&seqs).unwrap();
        assert_eq!(text, "a.mid\t3 0 12\nempty song.mid\t\n");
        assert_eq!(parse_token_corpus(&text).unwrap(), seqs);
        assert!(matches!(parse_token_corpus("no tab here"), Err(Error::Data(_))));
        assert!(matches!(parse_token_corpus("a\t1 x"), Err(Error::Data(_))));
        let bad = [TokenSequence { ids: vec![], source: "a\tb".into() }];
        assert!(token_corpus_to_text(&bad).is_err());
    }
}
