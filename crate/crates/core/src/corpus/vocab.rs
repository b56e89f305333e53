use std::collections::HashMap;
use std::path::Path;

use super::dialog::Dialog;
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOU: &str = "__eou__";
pub const EOT: &str = "__eot__";
pub const POSITIVE: &str = ":)";
pub const NEGATIVE: &str = ":(";
pub const NEUTRAL: &str = ":P";

/// Reserved tokens in id order; they always occupy ids `0..RESERVED.len()`.
pub const RESERVED: [&str; 8] = [PAD, UNK, BOS, EOU, EOT, POSITIVE, NEGATIVE, NEUTRAL];

pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const BOS_ID: TokenId = 2;
pub const EOU_ID: TokenId = 3;
pub const EOT_ID: TokenId = 4;
pub const POSITIVE_ID: TokenId = 5;
pub const NEGATIVE_ID: TokenId = 6;
pub const NEUTRAL_ID: TokenId = 7;

/// Bijective token ↔ id map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds from an ordered token list, which must start with the reserved
    /// tokens and contain no duplicates.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("vocabulary must start with reserved token {r}"),
                });
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate vocabulary entry {t}"),
                });
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Id of a token, `<unk>` when out of vocabulary.
    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn encode_dialog(&self, d: &Dialog<String>) -> Dialog<TokenId> {
        d.map(|t| self.id(t))
    }

    pub fn decode_dialog(&self, d: &Dialog<TokenId>) -> Dialog<String> {
        d.map(|&t| self.token(t).to_string())
    }

    /// One token per line, line number = id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Reserved tokens plus the `max_size` most frequent other tokens; ties go to
/// the token seen first.
pub fn build_vocab<'a, I>(dialogs: I, max_size: usize) -> Vocab
where
    I: IntoIterator<Item = &'a Dialog<String>>,
{
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut order = 0usize;
    for d in dialogs {
        for tok in d.tokens() {
            if RESERVED.contains(&tok.as_str()) {
                continue;
            }
            let e = counts.entry(tok.as_str()).or_insert_with(|| {
                order += 1;
                (0, order)
            });
            e.0 += 1;
        }
    }
    let mut ranked: Vec<(&str, usize, usize)> =
        counts.into_iter().map(|(t, (c, o))| (t, c, o)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().take(max_size).map(|(t, _, _)| t.to_string()))
        .collect();
    Vocab::from_tokens(tokens).expect("reserved prefix and unique tokens")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_dialog;

    fn d(line: &str) -> Dialog<String> {
        parse_dialog(line).unwrap()
    }

    #[test]
    fn keeps_most_frequent() {
        let corpus = [d("a b a c a b __eou__ __eot__")];
        let v = build_vocab(&corpus, 2);
        assert_eq!(v.len(), RESERVED.len() + 2);
        assert_eq!(v.token(8), "a");
        assert_eq!(v.token(9), "b");
        assert_eq!(v.id("c"), UNK_ID);
    }

    #[test]
    fn ties_go_to_first_occurrence() {
        let corpus = [d("y x __eou__ __eot__ x y z __eou__ __eot__")];
        let v = build_vocab(&corpus, 2);
        assert_eq!(v.id("y"), 8);
        assert_eq!(v.id("x"), 9);
        assert_eq!(v.id("z"), UNK_ID);
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = build_vocab(&[d("hi __eou__ __eot__")], 10);
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(r), i as TokenId);
        }
        assert_eq!(v.id(EOU), EOU_ID);
        assert_eq!(v.id(NEUTRAL), NEUTRAL_ID);
    }

    #[test]
    fn rejects_missing_reserved_prefix() {
        assert!(Vocab::from_tokens(vec!["a".into()]).is_err());
        let mut toks: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        toks.push("a".into());
        toks.push("a".into());
        assert!(Vocab::from_tokens(toks).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let v = build_vocab(&[d("b a b __eou__ __eot__")], 10);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
    }
}
