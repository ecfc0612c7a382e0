//! Unsupervised vote baselines.
//!
//! A forecast votes yes when its prediction is strictly above 0.5. The
//! majority baseline counts votes; the weighted baseline sums the predictions
//! behind each side, so three forecasts of 0.99, 0.45 and 0.45 give the
//! majority `no` (two votes to one) but the weighted vote `yes` (0.99 against
//! 0.90).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Answer;
use crate::error::{Error, Result};
use crate::windowing::ForecastWindow;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VoteTally {
    pub yes_weight: f64,
    pub no_weight: f64,
    pub n_yes_votes: usize,
    pub n_no_votes: usize,
}

impl VoteTally {
    pub fn of(window: &ForecastWindow) -> Self {
        // Summed in sorted order so the tally does not depend on window order.
        let (mut yes, mut no): (Vec<f64>, Vec<f64>) = window.predictions().partition(|&p| votes_yes(p));
        yes.sort_by(f64::total_cmp);
        no.sort_by(f64::total_cmp);
        VoteTally {
            yes_weight: yes.iter().sum(),
            no_weight: no.iter().sum(),
            n_yes_votes: yes.len(),
            n_no_votes: no.len(),
        }
    }

    fn weighted_answer(&self) -> Answer {
        Answer::from_bool(self.yes_weight > self.no_weight)
    }
}

pub fn votes_yes(prediction: f64) -> bool {
    prediction > 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallSource {
    Majority,
    Weighted,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Call {
    pub question_id: String,
    pub day: u32,
    pub answer: Answer,
    pub score: f64,
    pub source: CallSource,
}

/// How the weighted baseline turns predictions into an answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightedRule {
    /// Sum the raw predictions of yes-voters against those of no-voters.
    #[default]
    PaperLiteral,
    /// Call yes when the mean prediction exceeds 0.5.
    MeanThreshold,
}

impl FromStr for WeightedRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-literal" => Ok(WeightedRule::PaperLiteral),
            "mean-threshold" => Ok(WeightedRule::MeanThreshold),
            other => Err(Error::InvalidConfig(format!(
                "unknown weighted rule `{other}` (expected paper-literal or mean-threshold)"
            ))),
        }
    }
}

impl fmt::Display for WeightedRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightedRule::PaperLiteral => "paper-literal",
            WeightedRule::MeanThreshold => "mean-threshold",
        })
    }
}

fn call(window: &ForecastWindow, answer: Answer, score: f64, source: CallSource) -> Call {
    Call {
        question_id: window.question_id.clone(),
        day: window.day,
        answer,
        score,
        source,
    }
}

/// Calls the side with more votes. A tie in votes falls back to the weighted
/// comparison, and a tie there too calls `no`.
pub fn majority_vote(window: &ForecastWindow) -> Result<Call> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let tally = VoteTally::of(window);
    let answer = match tally.n_yes_votes.cmp(&tally.n_no_votes) {
        std::cmp::Ordering::Greater => Answer::Yes,
        std::cmp::Ordering::Less => Answer::No,
        std::cmp::Ordering::Equal => tally.weighted_answer(),
    };
    let score = tally.n_yes_votes as f64 / (tally.n_yes_votes + tally.n_no_votes) as f64;
    Ok(call(window, answer, score, CallSource::Majority))
}

pub fn weighted_vote(window: &ForecastWindow, rule: WeightedRule) -> Result<Call> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let (answer, score) = match rule {
        WeightedRule::PaperLiteral => {
            let tally = VoteTally::of(window);
            let total = tally.yes_weight + tally.no_weight;
            let score = if total > 0.0 {
                tally.yes_weight / total
            } else {
                0.5
            };
            (tally.weighted_answer(), score)
        }
        WeightedRule::MeanThreshold => {
            let mean = window.predictions().sum::<f64>() / window.len() as f64;
            (Answer::from_bool(mean > 0.5), mean)
        }
    };
    Ok(call(window, answer, score, CallSource::Weighted))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Majority,
    Weighted(WeightedRule),
}

impl Baseline {
    pub fn call(&self, window: &ForecastWindow) -> Result<Call> {
        match *self {
            Baseline::Majority => majority_vote(window),
            Baseline::Weighted(rule) => weighted_vote(window, rule),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Baseline::Majority => "majority".into(),
            Baseline::Weighted(WeightedRule::PaperLiteral) => "weighted".into(),
            Baseline::Weighted(rule) => format!("weighted-{rule}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(ps: &[f64]) -> ForecastWindow {
        ForecastWindow::from_predictions(ps)
    }

    #[test]
    fn worked_example_disagrees() {
        let window = w(&[0.99, 0.45, 0.45]);
        assert_eq!(majority_vote(&window).unwrap().answer, Answer::No);
        let weighted = weighted_vote(&window, WeightedRule::PaperLiteral).unwrap();
        assert_eq!(weighted.answer, Answer::Yes);
        let tally = VoteTally::of(&window);
        assert_eq!(tally.yes_weight, 0.99);
        assert_eq!(tally.no_weight, 0.45 + 0.45);
        assert_eq!((tally.n_yes_votes, tally.n_no_votes), (1, 2));
    }

    #[test]
    fn single_and_boundary_votes() {
        assert_eq!(majority_vote(&w(&[0.7])).unwrap().answer, Answer::Yes);
        let c = weighted_vote(&w(&[0.5]), WeightedRule::PaperLiteral).unwrap();
        assert_eq!(c.answer, Answer::No);
        assert_eq!(c.score, 0.0);
        let c = weighted_vote(&w(&[0.0]), WeightedRule::PaperLiteral).unwrap();
        assert_eq!((c.answer, c.score), (Answer::No, 0.5));
    }

    #[test]
    fn majority_tie_falls_back_to_weights() {
        let c = majority_vote(&w(&[0.8, 0.2])).unwrap();
        assert_eq!(c.answer, Answer::Yes);
        assert_eq!(c.score, 0.5);
        // 0.6 vs 0.6 ties again and resolves to no.
        let c = majority_vote(&w(&[0.6, 0.4, 0.2, 0.6, 0.0, 0.0]));
        assert_eq!(c.unwrap().answer, Answer::No);
    }

    #[test]
    fn weighted_rules_differ() {
        let window = w(&[0.9, 0.2, 0.2]);
        let literal = weighted_vote(&window, WeightedRule::PaperLiteral).unwrap();
        assert_eq!(literal.answer, Answer::Yes);
        assert!((literal.score - 0.9 / 1.3).abs() < 1e-12);
        let mean = weighted_vote(&window, WeightedRule::MeanThreshold).unwrap();
        assert_eq!(mean.answer, Answer::No);
        assert!((mean.score - 1.3 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_window_is_an_error() {
        assert!(matches!(majority_vote(&w(&[])), Err(Error::EmptyWindow)));
        assert!(matches!(
            weighted_vote(&w(&[]), WeightedRule::MeanThreshold),
            Err(Error::EmptyWindow)
        ));
    }

    #[test]
    fn rule_names_round_trip() {
        for rule in [WeightedRule::PaperLiteral, WeightedRule::MeanThreshold] {
            assert_eq!(rule.to_string().parse::<WeightedRule>().unwrap(), rule);
        }
        assert!("bogus".parse::<WeightedRule>().is_err());
    }

    proptest! {
        #[test]
        fn answers_ignore_order_and_duplication(mut ps in prop::collection::vec(0.0f64..=1.0, 1..40), rot in 0usize..40) {
            let base_m = majority_vote(&w(&ps)).unwrap().answer;
            let base_w = weighted_vote(&w(&ps), WeightedRule::PaperLiteral).unwrap().answer;
            let doubled: Vec<f64> = ps.iter().chain(ps.iter()).copied().collect();
            prop_assert_eq!(majority_vote(&w(&doubled)).unwrap().answer, base_m);
            prop_assert_eq!(weighted_vote(&w(&doubled), WeightedRule::PaperLiteral).unwrap().answer, base_w);
            let k = rot % ps.len();
            ps.rotate_left(k);
            ps.reverse();
            prop_assert_eq!(majority_vote(&w(&ps)).unwrap().answer, base_m);
            prop_assert_eq!(weighted_vote(&w(&ps), WeightedRule::PaperLiteral).unwrap().answer, base_w);
        }

        #[test]
        fn score_agrees_with_answer(ps in prop::collection::vec(0.0f64..=1.0, 1..40)) {
            for c in [majority_vote(&w(&ps)).unwrap(), weighted_vote(&w(&ps), WeightedRule::PaperLiteral).unwrap()] {
                prop_assert!((0.0..=1.0).contains(&c.score));
                if c.score != 0.5 {
                    prop_assert_eq!(c.answer.is_yes(), c.score > 0.5);
                }
            }
        }
    }
}
