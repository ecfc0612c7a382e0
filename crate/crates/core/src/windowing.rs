//! Selecting the forecasts an aggregator may look at when calling a question
//! on a given day.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Only forecasts submitted on the calling day.
    Daily,
    /// The latest forecast of each forecaster within the trailing span.
    Active,
}

impl FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daily" => Ok(WindowKind::Daily),
            "active" => Ok(WindowKind::Active),
            other => Err(Error::InvalidConfig(format!(
                "unknown window mode `{other}` (expected daily or active)"
            ))),
        }
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowKind::Daily => "daily",
            WindowKind::Active => "active",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowMode {
    pub kind: WindowKind,
    pub active_span: u32,
    /// When set, the active span covers the `active_span` days before the
    /// calling day plus the calling day itself, instead of `active_span`
    /// days ending at the calling day.
    #[serde(default)]
    pub span_excludes_calling_day: bool,
}

pub const DEFAULT_ACTIVE_SPAN: u32 = 10;

impl WindowMode {
    pub fn daily() -> Self {
        WindowMode {
            kind: WindowKind::Daily,
            active_span: DEFAULT_ACTIVE_SPAN,
            span_excludes_calling_day: false,
        }
    }

    pub fn active(span: u32) -> Self {
        WindowMode {
            kind: WindowKind::Active,
            active_span: span,
            span_excludes_calling_day: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.active_span == 0 {
            return Err(Error::InvalidConfig("active span must be at least 1".into()));
        }
        Ok(())
    }

    /// First day index (inclusive) visible when calling on `day`.
    fn first_day(&self, day: i64) -> i64 {
        match self.kind {
            WindowKind::Daily => day,
            WindowKind::Active if self.span_excludes_calling_day => day - i64::from(self.active_span),
            WindowKind::Active => day - i64::from(self.active_span) + 1,
        }
    }
}

impl Default for WindowMode {
    fn default() -> Self {
        WindowMode::active(DEFAULT_ACTIVE_SPAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowEntry {
    /// Index of the forecast in the dataset's record order.
    pub record: usize,
    pub day: u32,
    pub prediction: f64,
    /// Submitted on the calling day (as opposed to earlier).
    pub current: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastWindow {
    pub question_id: String,
    pub day: u32,
    pub entries: Vec<WindowEntry>,
}

impl ForecastWindow {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn predictions(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.prediction)
    }

    /// A window made only of predictions, for callers with no backing dataset.
    pub fn from_predictions(predictions: &[f64]) -> Self {
        ForecastWindow {
            question_id: String::new(),
            day: 0,
            entries: predictions
                .iter()
                .enumerate()
                .map(|(i, &p)| WindowEntry {
                    record: i,
                    day: 0,
                    prediction: p,
                    current: true,
                })
                .collect(),
        }
    }
}

/// The forecasts visible when calling `question_id` on `day`.
///
/// Entries are ordered by (day, forecaster id, record order), oldest first.
pub fn select_window(
    dataset: &Dataset,
    question_id: &str,
    day: i64,
    mode: WindowMode,
) -> Result<ForecastWindow> {
    mode.validate()?;
    let question = dataset
        .question(question_id)
        .ok_or_else(|| Error::UnknownQuestion(question_id.to_string()))?;
    let life = question.life();
    if day < 0 || day >= i64::from(life) {
        return Err(Error::DayOutOfRange {
            question_id: question_id.to_string(),
            day,
            life,
        });
    }
    let first = mode.first_day(day);

    // Latest in-span record per forecaster; later records win ties on a day.
    let mut latest: HashMap<&str, (i64, usize)> = HashMap::new();
    let mut picked: Vec<(i64, usize)> = Vec::new();
    for &record in dataset.forecasts_of(question_id) {
        let f = dataset.forecast(record);
        let t = question.day_index(f.date);
        if t < first || t > day {
            continue;
        }
        match mode.kind {
            WindowKind::Daily => picked.push((t, record)),
            WindowKind::Active => {
                let slot = latest.entry(&f.forecaster_id).or_insert((t, record));
                if t >= slot.0 {
                    *slot = (t, record);
                }
            }
        }
    }
    if mode.kind == WindowKind::Active {
        picked = latest.into_values().collect();
    }

    picked.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| {
                dataset
                    .forecast(a.1)
                    .forecaster_id
                    .cmp(&dataset.forecast(b.1).forecaster_id)
            })
            .then_with(|| a.1.cmp(&b.1))
    });

    Ok(ForecastWindow {
        question_id: question_id.to_string(),
        day: day as u32,
        entries: picked
            .into_iter()
            .map(|(t, record)| WindowEntry {
                record,
                day: t as u32,
                prediction: dataset.forecast(record).prediction,
                current: t == day,
            })
            .collect(),
    })
}
