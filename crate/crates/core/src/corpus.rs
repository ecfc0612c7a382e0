//! Questions, forecasts, and the line-delimited dataset format.
//!
//! A dataset file holds one JSON object per line, either a question or a
//! forecast, distinguished by its `"type"` field. Questions may appear after
//! the forecasts that reference them; references are resolved in a second
//! pass once every question is known.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn from_bool(yes: bool) -> Self {
        if yes {
            Answer::Yes
        } else {
            Answer::No
        }
    }

    pub fn is_yes(self) -> bool {
        self == Answer::Yes
    }

    /// 1.0 for yes, 0.0 for no.
    pub fn label(self) -> f64 {
        if self.is_yes() {
            1.0
        } else {
            0.0
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Answer::Yes => "yes",
            Answer::No => "no",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(rename = "open")]
    pub open_date: NaiveDate,
    #[serde(rename = "close")]
    pub close_date: NaiveDate,
    pub answer: Answer,
}

impl Question {
    /// Number of days the question is open, both ends included.
    pub fn life(&self) -> u32 {
        let span = (self.close_date - self.open_date).num_days();
        (span + 1).max(0) as u32
    }

    /// Day index of `date` relative to the opening date (may be out of range).
    pub fn day_index(&self, date: NaiveDate) -> i64 {
        (date - self.open_date).num_days()
    }

    pub fn date_of(&self, day: u32) -> NaiveDate {
        self.open_date + chrono::Days::new(u64::from(day))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub question_id: String,
    pub forecaster_id: String,
    pub date: NaiveDate,
    pub prediction: f64,
    #[serde(default)]
    pub justification: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Record {
    Question(Question),
    Forecast(Forecast),
}

/// Questions and forecasts in record order.
///
/// Construction never fails; use [`validate`] to check invariants or
/// [`parse_dataset`] to load a file with strict checking.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    questions: Vec<Question>,
    forecasts: Vec<Forecast>,
    index: HashMap<String, usize>,
    by_question: HashMap<String, Vec<usize>>,
}

impl Dataset {
    pub fn from_parts(questions: Vec<Question>, forecasts: Vec<Forecast>) -> Self {
        let mut index = HashMap::with_capacity(questions.len());
        for (i, q) in questions.iter().enumerate() {
            index.entry(q.id.clone()).or_insert(i);
        }
        let mut by_question: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, f) in forecasts.iter().enumerate() {
            by_question.entry(f.question_id.clone()).or_default().push(i);
        }
        Dataset {
            questions,
            forecasts,
            index,
            by_question,
        }
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn forecasts(&self) -> &[Forecast] {
        &self.forecasts
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.index.get(id).map(|&i| &self.questions[i])
    }

    pub fn forecast(&self, record: usize) -> &Forecast {
        &self.forecasts[record]
    }

    /// Record indices of the forecasts on question `id`, in record order.
    pub fn forecasts_of(&self, id: &str) -> &[usize] {
        self.by_question.get(id).map_or(&[], Vec::as_slice)
    }

    pub fn question_ids(&self) -> Vec<String> {
        self.questions.iter().map(|q| q.id.clone()).collect()
    }

    /// [`Dataset::forecast_keys`] entry of a single record.
    pub fn forecast_key(&self, record: usize) -> String {
        let f = &self.forecasts[record];
        let ordinal = self
            .forecasts_of(&f.question_id)
            .iter()
            .take_while(|&&r| r < record)
            .filter(|&&r| {
                let o = &self.forecasts[r];
                o.date == f.date && o.forecaster_id == f.forecaster_id
            })
            .count();
        format!("{}|{}|{}|{}", f.question_id, f.date, f.forecaster_id, ordinal)
    }

    /// A copy restricted to the given questions and their forecasts.
    pub fn subset(&self, ids: &[String]) -> Dataset {
        let keep: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        let questions = self
            .questions
            .iter()
            .filter(|q| keep.contains(q.id.as_str()))
            .cloned()
            .collect();
        let forecasts = self
            .forecasts
            .iter()
            .filter(|f| keep.contains(f.question_id.as_str()))
            .cloned()
            .collect();
        Dataset::from_parts(questions, forecasts)
    }

    /// Key used for a forecast's text embedding: question id, date,
    /// forecaster id, and the ordinal of this record among forecasts sharing
    /// those three fields, joined by `|`.
    pub fn forecast_keys(&self) -> Vec<String> {
        let mut seen: HashMap<(&str, NaiveDate, &str), usize> = HashMap::new();
        self.forecasts
            .iter()
            .map(|f| {
                let slot = seen
                    .entry((&f.question_id, f.date, &f.forecaster_id))
                    .or_insert(0);
                let key = format!(
                    "{}|{}|{}|{}",
                    f.question_id, f.date, f.forecaster_id, *slot
                );
                *slot += 1;
                key
            })
            .collect()
    }
}

pub fn parse_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_dataset(BufReader::new(file))
}

pub fn read_dataset(reader: impl BufRead) -> Result<Dataset> {
    let mut questions: Vec<Question> = Vec::new();
    let mut forecasts: Vec<(usize, Forecast)> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(format!("line {lineno}"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: lineno,
            message: e.to_string(),
        })?;
        match record {
            Record::Question(q) => {
                if seen.contains_key(&q.id) {
                    return Err(Error::DuplicateQuestion {
                        line: lineno,
                        id: q.id,
                    });
                }
                if q.text.trim().is_empty() {
                    return Err(Error::InvalidQuestion {
                        line: lineno,
                        id: q.id,
                        message: "has empty text".into(),
                    });
                }
                if q.open_date > q.close_date {
                    return Err(Error::InvalidQuestion {
                        line: lineno,
                        id: q.id,
                        message: "closes before it opens".into(),
                    });
                }
                seen.insert(q.id.clone(), questions.len());
                questions.push(q);
            }
            Record::Forecast(f) => forecasts.push((lineno, f)),
        }
    }

    for (line, f) in &forecasts {
        let Some(&qi) = seen.get(&f.question_id) else {
            return Err(Error::UnknownQuestionRef {
                line: *line,
                question_id: f.question_id.clone(),
            });
        };
        let q = &questions[qi];
        if f.date < q.open_date || f.date > q.close_date {
            return Err(Error::ForecastOutsideLife {
                line: *line,
                question_id: f.question_id.clone(),
                date: f.date,
                open: q.open_date,
                close: q.close_date,
            });
        }
        if !(0.0..=1.0).contains(&f.prediction) {
            return Err(Error::PredictionOutOfRange {
                line: *line,
                value: f.prediction,
            });
        }
    }

    Ok(Dataset::from_parts(
        questions,
        forecasts.into_iter().map(|(_, f)| f).collect(),
    ))
}

/// Writes questions first, then forecasts, each in record order.
pub fn write_dataset(dataset: &Dataset, writer: impl Write) -> Result<()> {
    #[derive(Serialize)]
    #[serde(tag = "type", rename_all = "lowercase")]
    enum RecordRef<'a> {
        Question(&'a Question),
        Forecast(&'a Forecast),
    }

    let mut w = BufWriter::new(writer);
    let io = |e| Error::io("writing dataset", e);
    for q in dataset.questions() {
        serde_json::to_writer(&mut w, &RecordRef::Question(q))?;
        w.write_all(b"\n").map_err(io)?;
    }
    for f in dataset.forecasts() {
        serde_json::to_writer(&mut w, &RecordRef::Forecast(f))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_dataset(dataset, file)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    DuplicateId,
    EmptyText,
    OpenAfterClose,
    UnknownQuestion,
    OutsideLife,
    PredictionRange,
    EmptyJustification,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// `question <id>` or `forecast #<record>`.
    pub entity: String,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Accepted but suspicious records, such as empty justifications.
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate(dataset: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut first: HashMap<&str, usize> = HashMap::new();

    for (i, q) in dataset.questions().iter().enumerate() {
        let entity = format!("question {}", q.id);
        if first.insert(&q.id, i).is_some() {
            report.violations.push(Violation {
                entity: entity.clone(),
                rule: Rule::DuplicateId,
                message: "id is not unique".into(),
            });
        }
        if q.text.trim().is_empty() {
            report.violations.push(Violation {
                entity: entity.clone(),
                rule: Rule::EmptyText,
                message: "text is empty".into(),
            });
        }
        if q.open_date > q.close_date {
            report.violations.push(Violation {
                entity,
                rule: Rule::OpenAfterClose,
                message: format!("opens {} after it closes {}", q.open_date, q.close_date),
            });
        }
    }

    for (i, f) in dataset.forecasts().iter().enumerate() {
        let entity = format!("forecast #{i}");
        match dataset.question(&f.question_id) {
            None => report.violations.push(Violation {
                entity: entity.clone(),
                rule: Rule::UnknownQuestion,
                message: format!("references unknown question `{}`", f.question_id),
            }),
            Some(q) if f.date < q.open_date || f.date > q.close_date => {
                report.violations.push(Violation {
                    entity: entity.clone(),
                    rule: Rule::OutsideLife,
                    message: format!(
                        "dated {} outside {}..={}",
                        f.date, q.open_date, q.close_date
                    ),
                })
            }
            Some(_) => {}
        }
        if !(0.0..=1.0).contains(&f.prediction) {
            report.violations.push(Violation {
                entity: entity.clone(),
                rule: Rule::PredictionRange,
                message: format!("prediction {} outside [0, 1]", f.prediction),
            });
        }
        if f.justification.trim().is_empty() {
            report.warnings.push(Violation {
                entity,
                rule: Rule::EmptyJustification,
                message: "justification is empty".into(),
            });
        }
    }
    report
}

/// Disjoint train / validation / test question ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Split> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

/// Shuffles question ids with a seeded generator and cuts them into
/// train / validation / test.
///
/// Validation and test receive `floor(n * ratio)` questions (at least one if
/// their ratio is positive); train receives the remainder.
pub fn split_by_question(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::InvalidConfig(format!(
            "split ratios must be non-negative, got {ratios:?}"
        )));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split ratios must sum to 1, got {total}"
        )));
    }

    let mut ids = dataset.question_ids();
    let n = ids.len();
    let requested = ratios.iter().filter(|r| **r > 0.0).count();
    if n < requested {
        return Err(Error::InsufficientQuestions {
            requested,
            available: n,
        });
    }

    let size = |r: f64| {
        if r > 0.0 {
            ((n as f64 * r).floor() as usize).max(1)
        } else {
            0
        }
    };
    let n_val = size(ratios[1]);
    let n_test = size(ratios[2]);
    let n_train = n.checked_sub(n_val + n_test).unwrap_or(0);
    if n_val + n_test > n || (ratios[0] > 0.0 && n_train == 0) {
        return Err(Error::InsufficientQuestions {
            requested,
            available: n,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test = ids.split_off(n - n_test);
    let validation = ids.split_off(n_train);
    Ok(Split {
        train: ids,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    pub(crate) fn question(id: &str, open: &str, close: &str, answer: Answer) -> Question {
        Question {
            id: id.into(),
            text: format!("Will {id} happen?"),
            open_date: date(open),
            close_date: date(close),
            answer,
        }
    }

    const FIXTURE: &str = r#"{"type":"forecast","question_id":"q2","forecaster_id":"a","date":"2020-01-03","prediction":0.2,"justification":"Unlikely."}
{"type":"question","id":"q1","text":"Will it rain?","open":"2020-01-01","close":"2020-01-10","answer":"yes"}
{"type":"question","id":"q2","text":"Will it snow?","open":"2020-01-02","close":"2020-01-05","answer":"no"}
{"type":"forecast","question_id":"q1","forecaster_id":"a","date":"2020-01-01","prediction":0.7,"justification":"Clouds."}
{"type":"forecast","question_id":"q1","forecaster_id":"b","date":"2020-01-10","prediction":0.9,"justification":""}
"#;

    #[test]
    fn parses_fixture_in_any_order() {
        let ds = read_dataset(FIXTURE.as_bytes()).unwrap();
        assert_eq!(ds.questions().len(), 2);
        assert_eq!(ds.forecasts().len(), 3);
        assert_eq!(ds.forecasts()[0].question_id, "q2");
        assert_eq!(ds.question("q1").unwrap().life(), 10);
        assert_eq!(ds.forecasts_of("q1"), &[1, 2]);
    }

    #[test]
    fn single_question_file() {
        let line = r#"{"type":"question","id":"q","text":"T?","open":"2021-05-01","close":"2021-05-01","answer":"no"}"#;
        let ds = read_dataset(line.as_bytes()).unwrap();
        assert_eq!(ds.questions().len(), 1);
        assert!(ds.forecasts().is_empty());
        assert_eq!(ds.questions()[0].life(), 1);
    }

    #[test]
    fn rejects_forecast_after_close() {
        let text = r#"{"type":"question","id":"q","text":"T?","open":"2021-05-01","close":"2021-05-03","answer":"no"}
{"type":"forecast","question_id":"q","forecaster_id":"a","date":"2021-05-04","prediction":0.5,"justification":"x"}"#;
        match read_dataset(text.as_bytes()) {
            Err(Error::ForecastOutsideLife { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_records() {
        let dup = r#"{"type":"question","id":"q","text":"T?","open":"2021-05-01","close":"2021-05-03","answer":"no"}
{"type":"question","id":"q","text":"U?","open":"2021-05-01","close":"2021-05-03","answer":"no"}"#;
        assert!(matches!(
            read_dataset(dup.as_bytes()),
            Err(Error::DuplicateQuestion { line: 2, .. })
        ));

        let unknown = r#"{"type":"forecast","question_id":"zz","forecaster_id":"a","date":"2021-05-01","prediction":0.5,"justification":"x"}"#;
        assert!(matches!(
            read_dataset(unknown.as_bytes()),
            Err(Error::UnknownQuestionRef { line: 1, .. })
        ));

        let range = r#"{"type":"question","id":"q","text":"T?","open":"2021-05-01","close":"2021-05-03","answer":"no"}

{"type":"forecast","question_id":"q","forecaster_id":"a","date":"2021-05-01","prediction":1.5,"justification":"x"}"#;
        assert!(matches!(
            read_dataset(range.as_bytes()),
            Err(Error::PredictionOutOfRange { line: 3, .. })
        ));

        assert!(matches!(
            read_dataset("{not json".as_bytes()),
            Err(Error::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn validate_reports_injected_violations() {
        let ds = read_dataset(FIXTURE.as_bytes()).unwrap();
        let report = validate(&ds);
        assert!(report.is_valid());
        assert_eq!(report.warnings.len(), 1);

        let mut forecasts = ds.forecasts().to_vec();
        forecasts[1].prediction = 1.5;
        let bad = Dataset::from_parts(ds.questions().to_vec(), forecasts.clone());
        let report = validate(&bad);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].rule, Rule::PredictionRange);
        assert_eq!(report.violations[0].entity, "forecast #1");

        forecasts[1].prediction = 0.5;
        forecasts[0].question_id = "nope".into();
        let report = validate(&Dataset::from_parts(ds.questions().to_vec(), forecasts));
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].rule, Rule::UnknownQuestion);
    }

    fn ten_questions() -> Dataset {
        let qs = (0..10)
            .map(|i| question(&format!("q{i}"), "2020-01-01", "2020-01-05", Answer::Yes))
            .collect();
        Dataset::from_parts(qs, vec![])
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let ds = ten_questions();
        let split = split_by_question(&ds, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!(split.sizes(), (8, 1, 1));
        assert_eq!(split, split_by_question(&ds, [0.8, 0.1, 0.1], 7).unwrap());

        let all = split_by_question(&ds, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(all.sizes(), (10, 0, 0));

        let odd = split_by_question(&ds, [0.5, 0.25, 0.25], 1).unwrap();
        assert_eq!(odd.sizes(), (6, 2, 2));
    }

    #[test]
    fn split_errors() {
        let ds = ten_questions().subset(&["q1".into(), "q2".into()]);
        assert!(matches!(
            split_by_question(&ds, [0.8, 0.1, 0.1], 0),
            Err(Error::InsufficientQuestions { .. })
        ));
        assert!(matches!(
            split_by_question(&ds, [0.8, 0.1, 0.2], 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn forecast_keys_count_same_day_resubmissions() {
        let mut ds = read_dataset(FIXTURE.as_bytes()).unwrap();
        let mut forecasts = ds.forecasts().to_vec();
        forecasts.push(forecasts[1].clone());
        ds = Dataset::from_parts(ds.questions().to_vec(), forecasts);
        let keys = ds.forecast_keys();
        assert_eq!(keys[1], "q1|2020-01-01|a|0");
        assert_eq!(keys[3], "q1|2020-01-01|a|1");
        assert_eq!(keys.iter().collect::<HashSet<_>>().len(), keys.len());
        for (i, k) in keys.iter().enumerate() {
            assert_eq!(&ds.forecast_key(i), k);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_dataset() -> impl Strategy<Value = Dataset> {
            (1usize..6, prop::collection::vec((0usize..6, 0u32..5, 0.0f64..=1.0, "[a-z ]{0,12}"), 0..20))
                .prop_map(|(nq, raw)| {
                    let qs: Vec<Question> = (0..nq)
                        .map(|i| question(&format!("q{i}"), "2020-02-01", "2020-02-05", Answer::from_bool(i % 2 == 0)))
                        .collect();
                    let fs = raw
                        .into_iter()
                        .map(|(q, d, p, j)| Forecast {
                            question_id: format!("q{}", q % nq),
                            forecaster_id: format!("f{d}"),
                            date: qs[0].date_of(d),
                            prediction: p,
                            justification: j,
                        })
                        .collect();
                    Dataset::from_parts(qs, fs)
                })
        }

        proptest! {
            #[test]
            fn serialize_then_parse_is_identity(ds in arb_dataset()) {
                let mut buf = Vec::new();
                write_dataset(&ds, &mut buf).unwrap();
                let back = read_dataset(buf.as_slice()).unwrap();
                prop_assert!(validate(&back).is_valid());
                prop_assert_eq!(back, ds);
            }

            #[test]
            fn splits_partition_questions(n in 1usize..40, a in 0.0f64..1.0, b in 0.0f64..1.0, seed in any::<u64>()) {
                let qs = (0..n).map(|i| question(&format!("q{i}"), "2020-01-01", "2020-01-02", Answer::No)).collect();
                let ds = Dataset::from_parts(qs, vec![]);
                let val = a * (1.0 - b) * 0.5;
                let test = b * 0.5;
                let ratios = [1.0 - val - test, val, test];
                if let Ok(split) = split_by_question(&ds, ratios, seed) {
                    let mut all: Vec<_> = split.train.iter().chain(&split.validation).chain(&split.test).cloned().collect();
                    prop_assert_eq!(all.len(), n);
                    all.sort();
                    all.dedup();
                    prop_assert_eq!(all.len(), n);
                }
            }
        }
    }
}
