//! Justification statistics: readability, negation cues, sentiment polarity,
//! length, and a few credibility signals.
//!
//! Lexicons are plain UTF-8 files with one entry per line. Blank lines and
//! lines starting with `#` are ignored. Sentiment entries are `word<TAB>score`
//! with scores in [-1, 1].

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::encode::tokenize;
use crate::error::{Error, Result};
use crate::windowing::{select_window, WindowMode};

pub const SHORT_JUSTIFICATION_TOKENS: usize = 20;

pub const DEFAULT_REFERENCE_PHRASES: [&str; 5] = ["initial forecast", "previous forecast", "consensus", "other forecasters", "@"];

fn lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Text pieces ending at `.`, `!` or `?` that contain at least one word.
pub fn sentences(text: &str) -> Vec<&str> {
    text.split(['.', '!', '?'])
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .collect()
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Vowel groups, minus a silent final `e` (but not a consonant + `le` ending),
/// and never less than one.
pub fn syllables(word: &str) -> usize {
    let chars: Vec<char> = word.to_lowercase().chars().filter(|c| c.is_alphabetic()).collect();
    let mut groups = 0usize;
    let mut prev = false;
    for &c in &chars {
        let v = is_vowel(c);
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    let n = chars.len();
    if n >= 2 && chars[n - 1] == 'e' {
        let consonant_le = n >= 3 && chars[n - 2] == 'l' && !is_vowel(chars[n - 3]);
        if !consonant_le {
            groups = groups.saturating_sub(1);
        }
    }
    groups.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextCounts {
    pub words: usize,
    pub sentences: usize,
    pub syllables: usize,
}

impl TextCounts {
    pub fn of(text: &str) -> Result<Self> {
        let words = tokenize(text);
        if words.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(TextCounts {
            words: words.len(),
            sentences: sentences(text).len().max(1),
            syllables: words.iter().map(|w| syllables(w.as_str())).sum(),
        })
    }

    fn words_per_sentence(&self) -> f64 {
        self.words as f64 / self.sentences as f64
    }
}

pub fn flesch_from_counts(counts: TextCounts) -> f64 {
    206.835 - 1.015 * counts.words_per_sentence() - 84.6 * (counts.syllables as f64 / counts.words as f64)
}

pub fn flesch(text: &str) -> Result<f64> {
    Ok(flesch_from_counts(TextCounts::of(text)?))
}

/// Dale-Chall from the percentage of difficult words and the average
/// sentence length.
pub fn dale_chall_from_parts(pdw: f64, asl: f64) -> f64 {
    let raw = 0.1579 * pdw + 0.0496 * asl;
    if pdw > 5.0 {
        raw + 3.6365
    } else {
        raw
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EasyWords(HashSet<String>);

impl EasyWords {
    pub fn parse(text: &str) -> Result<Self> {
        let set: HashSet<String> = lines(text).map(str::to_lowercase).collect();
        if set.is_empty() {
            return Err(Error::EmptyLexicon("easy words".into()));
        }
        Ok(EasyWords(set))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read(path.as_ref())?)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }
}

pub fn dale_chall(text: &str, easy: &EasyWords) -> Result<f64> {
    let words = tokenize(text);
    if words.is_empty() {
        return Err(Error::EmptyText);
    }
    let hard = words.iter().filter(|w| !easy.contains(w.as_str())).count();
    let pdw = 100.0 * hard as f64 / words.len() as f64;
    let asl = words.len() as f64 / sentences(text).len().max(1) as f64;
    Ok(dale_chall_from_parts(pdw, asl))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadabilityScores {
    pub flesch: f64,
    pub dale_chall: f64,
}

pub fn readability(text: &str, easy: &EasyWords) -> Result<ReadabilityScores> {
    Ok(ReadabilityScores {
        flesch: flesch(text)?,
        dale_chall: dale_chall(text, easy)?,
    })
}

/// Negation cues. A line is one of:
/// a word (`not`), several words (`by no means`), a contraction matched as a
/// word ending (`n't`), a suffix (`-less`), or a prefix (`un-`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CueLexicon {
    words: Vec<Vec<String>>,
    endings: Vec<String>,
    suffixes: Vec<String>,
    prefixes: Vec<String>,
}

fn normalize_apostrophes(s: &str) -> String {
    s.replace(['\u{2019}', '\u{2018}'], "'").to_lowercase()
}

impl CueLexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = CueLexicon::default();
        for line in lines(text) {
            let cue = normalize_apostrophes(line);
            if cue.contains('\'') {
                lex.endings.push(cue);
            } else if let Some(s) = cue.strip_prefix('-').filter(|s| !s.is_empty()) {
                lex.suffixes.push(s.to_string());
            } else if let Some(p) = cue.strip_suffix('-').filter(|p| !p.is_empty()) {
                lex.prefixes.push(p.to_string());
            } else {
                let words: Vec<String> = tokenize(&cue).into_iter().map(|t| t.to_string()).collect();
                if !words.is_empty() {
                    lex.words.push(words);
                }
            }
        }
        if lex.words.is_empty() && lex.endings.is_empty() && lex.suffixes.is_empty() && lex.prefixes.is_empty() {
            return Err(Error::EmptyLexicon("negation cues".into()));
        }
        lex.words.sort_by_key(|w| std::cmp::Reverse(w.len()));
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read(path.as_ref())?)
    }

    fn count_sentence(&self, sentence: &str) -> usize {
        let raw = normalize_apostrophes(sentence);
        let mut n = raw
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\''))
            .filter(|w| self.endings.iter().any(|e| w.ends_with(e.as_str())))
            .count();
        let tokens: Vec<String> = tokenize(&raw).into_iter().map(|t| t.to_string()).collect();
        let mut i = 0;
        while i < tokens.len() {
            if let Some(cue) = self.words.iter().find(|c| tokens[i..].starts_with(c)) {
                n += 1;
                i += cue.len();
                continue;
            }
            let t = &tokens[i];
            let affixed = self.suffixes.iter().any(|s| t.len() > s.len() && t.ends_with(s.as_str()))
                || self.prefixes.iter().any(|p| t.len() > p.len() && t.starts_with(p.as_str()));
            n += usize::from(affixed);
            i += 1;
        }
        n
    }
}

/// Cue occurrences, counted sentence by sentence so a multiword cue never
/// spans a sentence boundary.
pub fn negation_count(text: &str, cues: &CueLexicon) -> usize {
    text.split(['.', '!', '?']).map(|s| cues.count_sentence(s)).sum()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SentimentLexicon(HashMap<String, f64>);

impl SentimentLexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| Error::MalformedLine {
                line: i + 1,
                message: m.to_string(),
            };
            let (word, score) = line.split_once('\t').ok_or_else(|| bad("expected word<TAB>score"))?;
            let score: f64 = score.trim().parse().map_err(|_| bad("score is not a number"))?;
            if !(-1.0..=1.0).contains(&score) {
                return Err(bad("score outside [-1, 1]"));
            }
            map.insert(word.trim().to_lowercase(), score);
        }
        if map.is_empty() {
            return Err(Error::EmptyLexicon("sentiment".into()));
        }
        Ok(SentimentLexicon(map))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read(path.as_ref())?)
    }
}

/// Mean score of the tokens found in the lexicon, 0 when none are.
pub fn polarity(text: &str, lexicon: &SentimentLexicon) -> f64 {
    let scores: Vec<f64> = tokenize(text)
        .iter()
        .filter_map(|t| lexicon.0.get(t.as_str()).copied())
        .collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Everything the text statistics need, loaded once.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicons {
    pub cues: CueLexicon,
    pub easy_words: EasyWords,
    pub sentiment: SentimentLexicon,
    pub references: Vec<String>,
}

impl Lexicons {
    pub const CUE_FILE: &'static str = "negation_cues.txt";
    pub const EASY_FILE: &'static str = "easy_words.txt";
    pub const SENTIMENT_FILE: &'static str = "sentiment.tsv";
    pub const REFERENCE_FILE: &'static str = "reference_phrases.txt";

    /// Loads the lexicon files from `dir`. The reference phrase file is
    /// optional and falls back to [`DEFAULT_REFERENCE_PHRASES`].
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let ref_path = dir.join(Self::REFERENCE_FILE);
        let references = if ref_path.exists() {
            lines(&read(&ref_path)?).map(str::to_lowercase).collect()
        } else {
            DEFAULT_REFERENCE_PHRASES.iter().map(|s| s.to_string()).collect()
        };
        Ok(Lexicons {
            cues: CueLexicon::load(dir.join(Self::CUE_FILE))?,
            easy_words: EasyWords::load(dir.join(Self::EASY_FILE))?,
            sentiment: SentimentLexicon::load(dir.join(Self::SENTIMENT_FILE))?,
            references,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CredibilitySignals {
    pub token_count: usize,
    pub is_short: bool,
    pub refers_previous: bool,
    pub negation_cues: usize,
    pub polarity: f64,
}

pub fn refers_previous(text: &str, phrases: &[String]) -> bool {
    let lower = text.to_lowercase();
    phrases.iter().any(|p| lower.contains(p.as_str()))
}

pub fn credibility_signals(text: &str, lexicons: &Lexicons) -> CredibilitySignals {
    let token_count = tokenize(text).len();
    CredibilitySignals {
        token_count,
        is_short: token_count < SHORT_JUSTIFICATION_TOKENS,
        refers_previous: refers_previous(text, &lexicons.references),
        negation_cues: negation_count(text, &lexicons.cues),
        polarity: polarity(text, &lexicons.sentiment),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Five-number summary plus mean, with linear interpolation between order
/// statistics. `None` for no values.
pub fn summarize(values: impl IntoIterator<Item = f64>) -> Option<Summary> {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(Summary {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
        mean: v.iter().sum::<f64>() / v.len() as f64,
    })
}

/// Mean forecasts per open question on one day of question life.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayCurvePoint {
    pub day: u32,
    pub open_questions: usize,
    pub submitted: f64,
    pub active: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub questions: usize,
    pub forecasts: usize,
    pub question_life_days: Option<Summary>,
    pub question_tokens: Option<Summary>,
    pub justification_tokens: Option<Summary>,
    pub justification_sentences: Option<Summary>,
    pub forecasts_per_question: Option<Summary>,
    pub pct_with_negation: Option<f64>,
    pub pct_short: Option<f64>,
    pub pct_refers_previous: Option<f64>,
    pub polarity: Option<Summary>,
    pub flesch: Option<Summary>,
    pub dale_chall: Option<Summary>,
    pub forecasts_per_day: Vec<DayCurvePoint>,
}

fn pct(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| 100.0 * hits as f64 / n as f64)
}

pub fn corpus_report(dataset: &Dataset, lexicons: &Lexicons, active: WindowMode) -> Result<CorpusReport> {
    let forecasts = dataset.forecasts();
    let signals: Vec<CredibilitySignals> = forecasts
        .iter()
        .map(|f| credibility_signals(&f.justification, lexicons))
        .collect();
    let readable: Vec<ReadabilityScores> = forecasts
        .iter()
        .filter_map(|f| readability(&f.justification, &lexicons.easy_words).ok())
        .collect();
    let n = forecasts.len();

    let max_life = dataset.questions().iter().map(|q| q.life()).max().unwrap_or(0);
    let mut curve = Vec::with_capacity(max_life as usize);
    for day in 0..max_life {
        let open: Vec<_> = dataset.questions().iter().filter(|q| q.life() > day).collect();
        let mut submitted = 0usize;
        let mut in_window = 0usize;
        for q in &open {
            submitted += dataset
                .forecasts_of(&q.id)
                .iter()
                .filter(|&&r| q.day_index(dataset.forecast(r).date) == i64::from(day))
                .count();
            in_window += select_window(dataset, &q.id, i64::from(day), active)?.len();
        }
        let k = open.len() as f64;
        curve.push(DayCurvePoint {
            day,
            open_questions: open.len(),
            submitted: submitted as f64 / k,
            active: in_window as f64 / k,
        });
    }

    Ok(CorpusReport {
        questions: dataset.questions().len(),
        forecasts: n,
        question_life_days: summarize(dataset.questions().iter().map(|q| f64::from(q.life()))),
        question_tokens: summarize(dataset.questions().iter().map(|q| tokenize(&q.text).len() as f64)),
        justification_tokens: summarize(signals.iter().map(|s| s.token_count as f64)),
        justification_sentences: summarize(forecasts.iter().map(|f| sentences(&f.justification).len() as f64)),
        forecasts_per_question: summarize(dataset.questions().iter().map(|q| dataset.forecasts_of(&q.id).len() as f64)),
        pct_with_negation: pct(signals.iter().filter(|s| s.negation_cues > 0).count(), n),
        pct_short: pct(signals.iter().filter(|s| s.is_short).count(), n),
        pct_refers_previous: pct(signals.iter().filter(|s| s.refers_previous).count(), n),
        polarity: summarize(signals.iter().map(|s| s.polarity)),
        flesch: summarize(readable.iter().map(|r| r.flesch)),
        dale_chall: summarize(readable.iter().map(|r| r.dale_chall)),
        forecasts_per_day: curve,
    })
}
