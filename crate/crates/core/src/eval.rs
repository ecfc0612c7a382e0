//! Day-by-day evaluation.
//!
//! Every question is called on each day of its life. Days whose window is
//! empty are skipped and counted; the rest are scored against the resolved
//! answer. Accuracy is reported per question (macro), pooled (micro), and per
//! life quartile, where day `t` of a question with life `L` falls in quartile
//! `min(floor(4t / L), 3)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{Baseline, Call};
use crate::corpus::{Answer, Dataset};
use crate::error::{Error, Result};
use crate::neural::NeuralAggregator;
use crate::windowing::{select_window, ForecastWindow, WindowMode};

pub trait Aggregator: Sync {
    fn name(&self) -> String;
    fn call(&self, dataset: &Dataset, window: &ForecastWindow) -> Result<Call>;
}

impl Aggregator for Baseline {
    fn name(&self) -> String {
        Baseline::name(self)
    }

    fn call(&self, _dataset: &Dataset, window: &ForecastWindow) -> Result<Call> {
        Baseline::call(self, window)
    }
}

impl Aggregator for NeuralAggregator {
    fn name(&self) -> String {
        format!("model-{}", self.params.shape.ablation)
    }

    fn call(&self, dataset: &Dataset, window: &ForecastWindow) -> Result<Call> {
        NeuralAggregator::call(self, dataset, window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub question_id: String,
    pub day: u32,
    pub life: u32,
    /// `None` when the window was empty.
    pub answer: Option<Answer>,
    pub score: Option<f64>,
    pub correct: Option<bool>,
}

impl DayRecord {
    pub fn is_skipped(&self) -> bool {
        self.correct.is_none()
    }
}

pub fn life_quartile(day: u32, life: u32) -> usize {
    ((4 * u64::from(day) / u64::from(life.max(1))) as usize).min(3)
}

fn call_question(aggregator: &dyn Aggregator, dataset: &Dataset, id: &str, mode: WindowMode) -> Result<Vec<DayRecord>> {
    let q = dataset
        .question(id)
        .ok_or_else(|| Error::UnknownQuestion(id.to_string()))?;
    let life = q.life();
    (0..life)
        .map(|day| {
            let window = select_window(dataset, id, i64::from(day), mode)?;
            if window.is_empty() {
                return Ok(DayRecord {
                    question_id: id.to_string(),
                    day,
                    life,
                    answer: None,
                    score: None,
                    correct: None,
                });
            }
            let call = aggregator.call(dataset, &window)?;
            Ok(DayRecord {
                question_id: id.to_string(),
                day,
                life,
                answer: Some(call.answer),
                score: Some(call.score),
                correct: Some(call.answer == q.answer),
            })
        })
        .collect()
}

/// Calls every listed question on every day. With `jobs > 1` questions are
/// processed in parallel; the output is sorted by (question id, day) either way.
pub fn call_all_days(
    aggregator: &dyn Aggregator,
    dataset: &Dataset,
    question_ids: &[String],
    mode: WindowMode,
    jobs: usize,
) -> Result<Vec<DayRecord>> {
    mode.validate()?;
    let per_question: Vec<Vec<DayRecord>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start {jobs} workers: {e}")))?;
        pool.install(|| {
            question_ids
                .par_iter()
                .map(|id| call_question(aggregator, dataset, id, mode))
                .collect::<Result<_>>()
        })?
    } else {
        question_ids
            .iter()
            .map(|id| call_question(aggregator, dataset, id, mode))
            .collect::<Result<_>>()?
    };
    let mut records: Vec<DayRecord> = per_question.into_iter().flatten().collect();
    records.sort_by(|a, b| (&a.question_id, a.day).cmp(&(&b.question_id, b.day)));
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question_id: String,
    pub life: u32,
    pub scored: usize,
    pub correct: usize,
    pub skipped: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub overall_macro: Option<f64>,
    pub overall_micro: Option<f64>,
    pub life_quartiles: [Option<f64>; 4],
    pub scored_days: usize,
    pub skipped_days: usize,
    /// Questions with no scored day, left out of every macro mean.
    pub unscored_questions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty_quartiles: Option<[Option<f64>; 4]>,
    pub per_question: Vec<QuestionScore>,
}

#[derive(Default)]
struct Counts {
    life: u32,
    scored: usize,
    correct: usize,
    skipped: usize,
    quartiles: [(usize, usize); 4],
}

fn percent(correct: usize, scored: usize) -> Option<f64> {
    (scored > 0).then(|| 100.0 * correct as f64 / scored as f64)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn count(records: &[DayRecord]) -> BTreeMap<&str, Counts> {
    let mut by_question: BTreeMap<&str, Counts> = BTreeMap::new();
    for r in records {
        let c = by_question.entry(&r.question_id).or_default();
        c.life = r.life;
        match r.correct {
            None => c.skipped += 1,
            Some(ok) => {
                let q = &mut c.quartiles[life_quartile(r.day, r.life)];
                c.scored += 1;
                q.1 += 1;
                if ok {
                    c.correct += 1;
                    q.0 += 1;
                }
            }
        }
    }
    by_question
}

pub fn accuracy(system: impl Into<String>, records: &[DayRecord]) -> EvalReport {
    let by_question = count(records);
    let per_question: Vec<QuestionScore> = by_question
        .iter()
        .map(|(id, c)| QuestionScore {
            question_id: id.to_string(),
            life: c.life,
            scored: c.scored,
            correct: c.correct,
            skipped: c.skipped,
            accuracy: percent(c.correct, c.scored),
        })
        .collect();
    let scored: usize = per_question.iter().map(|q| q.scored).sum();
    let correct: usize = per_question.iter().map(|q| q.correct).sum();
    let life_quartiles =
        std::array::from_fn(|k| mean(by_question.values().filter_map(|c| percent(c.quartiles[k].0, c.quartiles[k].1))));
    EvalReport {
        system: system.into(),
        overall_macro: mean(per_question.iter().filter_map(|q| q.accuracy)),
        overall_micro: percent(correct, scored),
        life_quartiles,
        scored_days: scored,
        skipped_days: per_question.iter().map(|q| q.skipped).sum(),
        unscored_questions: per_question
            .iter()
            .filter(|q| q.scored == 0)
            .map(|q| q.question_id.clone())
            .collect(),
        difficulty_quartiles: None,
        per_question,
    }
}

fn wrong_days(records: &[DayRecord]) -> HashMap<&str, usize> {
    let mut wrong = HashMap::new();
    for r in records {
        let w = wrong.entry(r.question_id.as_str()).or_insert(0);
        if r.correct == Some(false) {
            *w += 1;
        }
    }
    wrong
}

/// Group sizes for `n` items split into four, remainders to the earlier groups.
pub fn quartile_sizes(n: usize) -> [usize; 4] {
    std::array::from_fn(|k| n / 4 + usize::from(k < n % 4))
}

/// Assigns each question a difficulty quartile 1..=4 by its wrong-day count
/// under whichever baseline makes fewer mistakes overall.
pub fn difficulty_quartiles(majority: &[DayRecord], weighted: &[DayRecord], question_ids: &[String]) -> BTreeMap<String, u8> {
    let (wm, ww) = (wrong_days(majority), wrong_days(weighted));
    let total = |w: &HashMap<&str, usize>| question_ids.iter().map(|id| w.get(id.as_str()).copied().unwrap_or(0)).sum::<usize>();
    let reference = if total(&ww) < total(&wm) { &ww } else { &wm };
    let mut ranked: Vec<(usize, &String)> = question_ids
        .iter()
        .map(|id| (reference.get(id.as_str()).copied().unwrap_or(0), id))
        .collect();
    ranked.sort();
    let mut out = BTreeMap::new();
    let mut it = ranked.into_iter();
    for (k, size) in quartile_sizes(question_ids.len()).into_iter().enumerate() {
        for (_, id) in it.by_ref().take(size) {
            out.insert(id.clone(), k as u8 + 1);
        }
    }
    out
}

/// Macro accuracy within each difficulty quartile.
pub fn difficulty_accuracy(report: &EvalReport, quartiles: &BTreeMap<String, u8>) -> [Option<f64>; 4] {
    std::array::from_fn(|k| {
        mean(
            report
                .per_question
                .iter()
                .filter(|q| quartiles.get(&q.question_id) == Some(&(k as u8 + 1)))
                .filter_map(|q| q.accuracy),
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub d: usize,
}

impl ContingencyTable {
    pub fn total(&self) -> usize {
        self.a + self.b + self.c + self.d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    pub table: ContingencyTable,
    /// Keys not scored by both systems.
    pub unpaired: usize,
    pub chi2: f64,
    pub p: f64,
    pub corrected: bool,
    pub significant: bool,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Chi-square statistic and its survival at one degree of freedom.
pub fn mcnemar_statistic(b: usize, c: usize, corrected: bool) -> (f64, f64) {
    if b + c == 0 {
        return (0.0, 1.0);
    }
    let diff = b.abs_diff(c) as f64;
    let num = if corrected { (diff - 1.0).max(0.0) } else { diff };
    let chi2 = num * num / (b + c) as f64;
    (chi2, chi_square_1_survival(chi2))
}

pub fn chi_square_1_survival(x: f64) -> f64 {
    statrs::function::erf::erfc((x / 2.0).sqrt())
}

pub fn contingency(a: &[DayRecord], b: &[DayRecord]) -> (ContingencyTable, usize) {
    let key = |r: &DayRecord| (r.question_id.clone(), r.day);
    let b_map: HashMap<(String, u32), Option<bool>> = b.iter().map(|r| (key(r), r.correct)).collect();
    let mut table = ContingencyTable::default();
    let mut paired = 0usize;
    for r in a {
        let (Some(x), Some(Some(y))) = (r.correct, b_map.get(&key(r))) else {
            continue;
        };
        paired += 1;
        match (x, *y) {
            (true, true) => table.a += 1,
            (true, false) => table.b += 1,
            (false, true) => table.c += 1,
            (false, false) => table.d += 1,
        }
    }
    let scored = |rs: &[DayRecord]| rs.iter().filter(|r| r.correct.is_some()).count();
    (table, scored(a) + scored(b) - 2 * paired)
}

pub fn mcnemar(a: &[DayRecord], b: &[DayRecord], corrected: bool) -> McNemar {
    let (table, unpaired) = contingency(a, b);
    let (chi2, p) = mcnemar_statistic(table.b, table.c, corrected);
    McNemar {
        table,
        unpaired,
        chi2,
        p,
        corrected,
        significant: p < SIGNIFICANCE_LEVEL,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

/// Plain-text table with one row per system and All, Q1-Q4 columns.
pub fn format_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.system.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}  {:>9}\n",
        "System", "All", "Q1", "Q2", "Q3", "Q4", "All-micro"
    );
    for r in reports {
        let _ = write!(out, "{:<width$}  {:>7}", r.system, cell(r.overall_macro));
        for q in r.life_quartiles {
            let _ = write!(out, "  {:>7}", cell(q));
        }
        let _ = writeln!(out, "  {:>9}", cell(r.overall_micro));
    }
    out
}

pub fn format_mcnemar(pair: &str, m: &McNemar) -> String {
    format!(
        "{pair}\tb={}\tc={}\tchi2={:.4}\tp={:.4}\t{}\n",
        m.table.b,
        m.table.c,
        m.chi2,
        m.p,
        if m.significant { "significant" } else { "not-significant" }
    )
}

pub fn write_records(records: &[DayRecord], writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("records", e))?;
    }
    w.flush().map_err(|e| Error::io("records", e))
}

pub fn save_records(records: &[DayRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_records(records, file)
}

pub fn read_records(reader: impl BufRead) -> Result<Vec<DayRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("records", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<DayRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_records(BufReader::new(file))
}
