//! Tweet-style text normalization.
//!
//! [`Preprocessor::preprocess`] applies, in order: lowercasing; URL and
//! email removal; @-mention removal; elongation shortening ("yeeessss" →
//! "yes"); stop-word retention (deliberately a no-op — stop words are never
//! removed); punctuation, non-ASCII, and extra-delimiter removal; hashtag
//! stripping with dictionary segmentation ("#notracism" → "not racism");
//! and a minimum-length gate that maps anything shorter than 2 tokens to the
//! empty string. Emoji removal rides on the non-ASCII filter. The whole
//! pipeline is idempotent: cleaning already-clean text is the identity.

use std::collections::HashSet;

use regex::Regex;

/// Word list used for hashtag segmentation and elongation recovery.
#[derive(Clone, Debug, Default)]
struct Lexicon {
    words: HashSet<String>,
    max_len: usize,
}

impl Lexicon {
    fn new(words: impl IntoIterator<Item = String>) -> Self {
        let words: HashSet<String> = words.into_iter().collect();
        let max_len = words.iter().map(|w| w.chars().count()).max().unwrap_or(0);
        Lexicon { words, max_len }
    }

    fn contains(&self, w: &str) -> bool {
        self.words.contains(w)
    }
}

/// The normalization pipeline. Without a lexicon, hashtag bodies are kept
/// as single tokens and elongations always collapse to single letters; with
/// one (usually the token set of a first cleaning pass over the training
/// corpus), hashtag bodies are segmented by greedy longest match and
/// elongation shortening can back off to double letters for in-lexicon
/// words ("goood" → "good" rather than "god").
#[derive(Clone, Debug)]
pub struct Preprocessor {
    url_re: Regex,
    email_re: Regex,
    mention_re: Regex,
    lexicon: Option<Lexicon>,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self::new()
    }
}

impl Preprocessor {
    pub fn new() -> Self {
        Preprocessor {
            url_re: Regex::new(r"(?:https?://|www\.)\S+").expect("static pattern"),
            email_re: Regex::new(r"[a-z0-9._%+-]+@[a-z0-9.-]+\.[a-z]{2,}").expect("static pattern"),
            mention_re: Regex::new(r"@\w+").expect("static pattern"),
            lexicon: None,
        }
    }

    /// A pipeline whose segmentation and elongation recovery consult the
    /// given word list.
    pub fn with_lexicon(words: impl IntoIterator<Item = String>) -> Self {
        let mut p = Self::new();
        p.lexicon = Some(Lexicon::new(words));
        p
    }

    /// Whether a lexicon is attached.
    pub fn has_lexicon(&self) -> bool {
        self.lexicon.is_some()
    }

    /// Normalize one text. Returns the cleaned, single-spaced token string,
    /// or the empty string when fewer than 2 tokens survive.
    pub fn preprocess(&self, text: &str) -> String {
        // 1. lowercase
        let text = text.to_lowercase();
        // 2. URLs and emails
        let text = self.url_re.replace_all(&text, " ");
        let text = self.email_re.replace_all(&text, " ");
        // 3. @-mentions
        let text = self.mention_re.replace_all(&text, " ");
        // 4. elongation shortening (5. stop words stay put by construction:
        //    nothing below ever drops a token for being a stop word)
        let text = self.shorten_elongations(&text);
        // 6. punctuation, non-ASCII (which covers step 9's emojis), and
        //    delimiter noise; '#' survives for step 7, apostrophes vanish
        //    without leaving a gap ("don't" -> "dont")
        let mut cleaned = String::with_capacity(text.len());
        for ch in text.chars() {
            if ch.is_ascii_alphanumeric() || ch == '#' {
                cleaned.push(ch);
            } else if ch == '\'' || ch == '\u{2019}' {
                // delete
            } else {
                cleaned.push(' ');
            }
        }
        // 7. hashtags: strip '#' and segment the body
        let mut tokens: Vec<String> = Vec::new();
        for raw in cleaned.split_whitespace() {
            if raw.contains('#') {
                for part in raw.split('#') {
                    if !part.is_empty() {
                        tokens.extend(self.segment(part));
                    }
                }
            } else {
                tokens.push(raw.to_string());
            }
        }
        // 8. drop texts shorter than 2 tokens
        if tokens.len() < 2 {
            return String::new();
        }
        tokens.join(" ")
    }

    /// Collapse runs of 3+ identical letters. Each alphabetic word collapses
    /// to single letters; if that lands outside the lexicon but the
    /// double-letter collapse is a known word, the double form wins.
    fn shorten_elongations(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut word = String::new();
        for ch in text.chars().chain(std::iter::once('\0')) {
            if ch.is_alphabetic() {
                word.push(ch);
                continue;
            }
            if !word.is_empty() {
                out.push_str(&self.collapse_word(&word));
                word.clear();
            }
            if ch != '\0' {
                out.push(ch);
            }
        }
        out
    }

    fn collapse_word(&self, word: &str) -> String {
        let single = collapse_runs(word, 1);
        if single == word {
            return single;
        }
        if let Some(lex) = &self.lexicon {
            if !lex.contains(&single) {
                let double = collapse_runs(word, 2);
                if lex.contains(&double) {
                    return double;
                }
            }
        }
        single
    }

    /// Greedy longest-match segmentation of a hashtag body. Characters that
    /// start no lexicon word accumulate into residue tokens; without a
    /// lexicon the body stays whole.
    fn segment(&self, body: &str) -> Vec<String> {
        let Some(lex) = &self.lexicon else {
            return vec![body.to_string()];
        };
        let chars: Vec<char> = body.chars().collect();
        let mut out = Vec::new();
        let mut residue = String::new();
        let mut i = 0;
        while i < chars.len() {
            let longest = lex.max_len.min(chars.len() - i);
            let hit = (1..=longest).rev().find_map(|take| {
                let cand: String = chars[i..i + take].iter().collect();
                lex.contains(&cand).then_some((cand, take))
            });
            match hit {
                Some((word, take)) => {
                    if !residue.is_empty() {
                        out.push(std::mem::take(&mut residue));
                    }
                    out.push(word);
                    i += take;
                }
                None => {
                    residue.push(chars[i]);
                    i += 1;
                }
            }
        }
        if !residue.is_empty() {
            out.push(residue);
        }
        out
    }
}

/// Reduce every run of 3 or more identical letters to `keep` letters.
/// Runs of 1 or 2 pass through untouched.
fn collapse_runs(word: &str, keep: usize) -> String {
    let mut out = String::with_capacity(word.len());
    let chars: Vec<char> = word.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let mut j = i;
        while j < chars.len() && chars[j] == chars[i] {
            j += 1;
        }
        let run = j - i;
        let emit = if run >= 3 { keep } else { run };
        for _ in 0..emit {
            out.push(chars[i]);
        }
        i = j;
    }
    out
}
