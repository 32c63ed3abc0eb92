use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ctc::BLANK;
use crate::error::{Error, Result};

pub const BLANK_TOKEN: &str = "<blank>";
const HEADER_PREFIX: &str = "#gic-vocab";

/// How transcripts split into tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenMode {
    /// One token per non-whitespace character; whitespace is ignored.
    Char,
    /// Whitespace-separated tokens.
    Word,
}

impl TokenMode {
    fn name(self) -> &'static str {
        match self {
            TokenMode::Char => "char",
            TokenMode::Word => "word",
        }
    }

    /// Splits `text` into tokens under this mode.
    pub fn tokenize(self, text: &str) -> Vec<&str> {
        split(self, text).collect()
    }
}

/// Token inventory with the blank at index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    mode: TokenMode,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// `tokens` excludes the blank, which is prepended.
    pub fn new(mode: TokenMode, tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut all = vec![BLANK_TOKEN.to_string()];
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            let ok = !t.is_empty()
                && !t.chars().any(char::is_whitespace)
                && (mode == TokenMode::Word || i == 0 || t.chars().count() == 1);
            if !ok {
                return Err(Error::format("vocabulary", format!("invalid {} token {t:?}", mode.name())));
            }
            let id = u32::try_from(i).map_err(|_| Error::TooLarge("vocabulary size".into()))?;
            if index.insert(t.clone(), id).is_some() {
                return Err(Error::format("vocabulary", format!("duplicate token {t:?}")));
            }
        }
        Ok(Self {
            mode,
            tokens: all,
            index,
        })
    }

    /// Sorted inventory of every token in `transcripts`.
    pub fn from_transcripts<'a>(mode: TokenMode, transcripts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for line in transcripts {
            seen.extend(split(mode, line).map(str::to_string));
        }
        seen.remove(BLANK_TOKEN);
        Self::new(mode, seen)
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }

    /// Number of ids, blank included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Transcript text to ids. The blank is not a valid transcript token.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        split(self.mode, text)
            .map(|t| match self.id(t) {
                Some(BLANK) | None => Err(Error::UnknownToken(t.to_string())),
                Some(id) => Ok(id),
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let parts = ids
            .iter()
            .map(|&i| {
                self.token(i).ok_or(Error::OutOfVocabulary {
                    token: i,
                    size: self.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(match self.mode {
            TokenMode::Char => parts.concat(),
            TokenMode::Word => parts.join(" "),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER_PREFIX} mode={}\n", self.mode.name());
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format("vocabulary", "empty file"))?;
        let mode = match header.trim_end().strip_prefix(HEADER_PREFIX).map(str::trim) {
            Some("mode=char") => TokenMode::Char,
            Some("mode=word") => TokenMode::Word,
            _ => return Err(Error::format("vocabulary", format!("bad header {header:?}"))),
        };
        let mut tokens = lines.map(|l| l.trim_end_matches('\r'));
        match tokens.next() {
            Some(BLANK_TOKEN) => {}
            other => {
                return Err(Error::format(
                    "vocabulary",
                    format!("first token must be {BLANK_TOKEN}, found {other:?}"),
                ))
            }
        }
        Self::new(mode, tokens.map(str::to_string))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn split(mode: TokenMode, text: &str) -> Box<dyn Iterator<Item = &str> + '_> {
    match mode {
        TokenMode::Word => Box::new(text.split_whitespace()),
        TokenMode::Char => Box::new(
            text.char_indices()
                .filter(|(_, c)| !c.is_whitespace())
                .map(move |(i, c)| &text[i..i + c.len_utf8()]),
        ),
    }
}
