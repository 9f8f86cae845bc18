//! Text normalization and light tokenization for short social-media posts.

use std::sync::OnceLock;

use regex::Regex;

pub const USER_TOKEN: &str = "<USER>";
pub const URL_TOKEN: &str = "<URL>";

/// Longest run of one repeated character kept by [`squeeze_runs`].
pub const MAX_RUN: usize = 2;

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(^|\s)(?:https?://|www\.)\S*").unwrap())
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(^|\s)@\w+").unwrap())
}

/// Cuts every run of an identical character down to [`MAX_RUN`].
pub fn squeeze_runs(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev = None;
    let mut run = 0;
    for c in text.chars() {
        if Some(c) == prev {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run <= MAX_RUN {
            out.push(c);
        }
    }
    out
}

/// Replaces URLs with `<URL>` and @-mentions with `<USER>`, then squeezes
/// character runs.
///
/// A URL is a whitespace-delimited token starting with `http://`, `https://`
/// or `www.`; a mention is `@` at the start of a token followed by at least
/// one word character (the rest of the token is kept, e.g. `@bob:` becomes
/// `<USER>:`). Matching runs on the raw text because squeezing would turn
/// `www.` into `ww.`.
pub fn normalize_text(raw: &str) -> String {
    let urls = url_re().replace_all(raw, format!("${{1}}{URL_TOKEN}").as_str());
    let mentions = mention_re().replace_all(&urls, format!("${{1}}{USER_TOKEN}").as_str());
    squeeze_runs(&mentions)
}

pub fn is_arabic_letter(c: char) -> bool {
    matches!(c as u32, 0x0600..=0x06FF | 0x0750..=0x077F | 0x08A0..=0x08FF)
}

pub fn is_diacritic(c: char) -> bool {
    matches!(c as u32, 0x064B..=0x0652 | 0x0670)
}

pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '،' | '؛' | '؟' | '٪' | '٫' | '٬' | '٭' | '۔' | '«' | '»' | '¡' | '¿' | '…' | '“' | '”' | '‘' | '’'
        )
        || (matches!(c as u32, 0x2010..=0x205E) && !c.is_whitespace())
}

/// Whitespace split with punctuation split off into standalone tokens.
/// `<USER>` and `<URL>` stay whole.
pub fn tokenize_light(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        let mut rest = word;
        while let Some(c) = rest.chars().next() {
            if let Some(ph) = [USER_TOKEN, URL_TOKEN].into_iter().find(|p| rest.starts_with(p)) {
                flush(&mut current, &mut tokens);
                tokens.push(ph.to_string());
                rest = &rest[ph.len()..];
                continue;
            }
            if is_punctuation(c) {
                flush(&mut current, &mut tokens);
                tokens.push(c.to_string());
            } else {
                current.push(c);
            }
            rest = &rest[c.len_utf8()..];
        }
        flush(&mut current, &mut tokens);
    }
    tokens
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(std::mem::take(current));
    }
}

/// True when more than half of the token's letters are Arabic.
pub fn is_arabic_word(token: &str) -> bool {
    let (letters, arabic) = letter_counts(token);
    letters > 0 && 2 * arabic > letters
}

fn letter_counts(token: &str) -> (usize, usize) {
    token
        .chars()
        .filter(|c| c.is_alphabetic())
        .fold((0, 0), |(l, a), c| (l + 1, a + usize::from(is_arabic_letter(c))))
}

pub fn count_arabic_words(text: &str) -> usize {
    text.split_whitespace().filter(|t| is_arabic_word(t)).count()
}

/// Whitespace tokens that contain letters, are not Arabic, and are not
/// placeholders.
pub fn foreign_words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace().filter(|t| {
        let (letters, _) = letter_counts(t);
        letters > 0 && !is_arabic_word(t) && !t.contains(USER_TOKEN) && !t.contains(URL_TOKEN)
    })
}

pub fn count_diacritics(text: &str) -> usize {
    text.chars().filter(|&c| is_diacritic(c)).count()
}

pub fn strip_diacritics(text: &str) -> String {
    text.chars().filter(|&c| !is_diacritic(c)).collect()
}
