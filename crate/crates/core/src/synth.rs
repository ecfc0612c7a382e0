//! Synthetic corpora with planted structure.
//!
//! Every question's answer is a fair coin. Forecasters are split once into a
//! reliable and an unreliable population. On day `t` a forecast's distance
//! from the pole it is pushed toward is `|N(0, σ_t)|` with
//! `σ_t = max(σ_min, σ0 · decay^t)`; reliable forecasters are pushed toward
//! the true answer, unreliable ones toward the wrong one. Predictions are
//! clamped to [0, 1]. Each justification carries its population's marker
//! token, so text identifies reliability while the prediction alone does not.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::index::sample;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Answer, Dataset, Forecast, Question};
use crate::error::{Error, Result};
use crate::windowing::{select_window, WindowMode};

pub const SIGMA_MIN: f64 = 0.05;

/// Seed of the default configuration.
pub const DEFAULT_SEED: u64 = 17;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_questions: usize,
    pub life_min: u32,
    pub life_max: u32,
    pub n_forecasters: usize,
    pub forecasts_per_day: f64,
    pub base_noise: f64,
    pub noise_decay: f64,
    pub reliable_fraction: f64,
    pub reliable_marker: String,
    pub unreliable_marker: String,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_questions: 200,
            life_min: 20,
            life_max: 20,
            n_forecasters: 40,
            forecasts_per_day: 5.0,
            base_noise: 0.6,
            noise_decay: 0.85,
            reliable_fraction: 0.6,
            reliable_marker: "sourced".into(),
            unreliable_marker: "hunch".into(),
            start_date: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
            seed: DEFAULT_SEED,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_questions == 0 || self.n_forecasters == 0 {
            return bad("synth needs at least one question and one forecaster");
        }
        if self.life_min == 0 || self.life_min > self.life_max {
            return bad("life range must satisfy 1 <= life_min <= life_max");
        }
        if !(self.forecasts_per_day >= 0.0 && self.forecasts_per_day.is_finite()) {
            return bad("forecasts_per_day must be a non-negative number");
        }
        if !(self.base_noise > 0.0 && self.base_noise.is_finite()) {
            return bad("base_noise must be positive");
        }
        if !(0.0..=1.0).contains(&self.noise_decay) || !(0.0..=1.0).contains(&self.reliable_fraction) {
            return bad("noise_decay and reliable_fraction must be in [0, 1]");
        }
        let marker_ok = |m: &str| !m.is_empty() && m.chars().all(|c| c.is_ascii_lowercase());
        if !marker_ok(&self.reliable_marker) || !marker_ok(&self.unreliable_marker) || self.reliable_marker == self.unreliable_marker {
            return bad("markers must be two different lowercase words");
        }
        if FILLER.iter().chain(OPENERS).chain(QUESTIONS).any(|w| w.split(' ').any(|t| t == self.reliable_marker || t == self.unreliable_marker)) {
            return bad("markers must not be template words");
        }
        Ok(())
    }

    pub fn sigma(&self, day: u32) -> f64 {
        (self.base_noise * self.noise_decay.powi(day as i32)).max(SIGMA_MIN)
    }

    /// Forecasts submitted on day `day` of each question.
    pub fn count_on_day(&self, day: u32) -> usize {
        let r = self.forecasts_per_day;
        ((f64::from(day) + 1.0) * r).floor() as usize - (f64::from(day) * r).floor() as usize
    }

    pub fn reliable_count(&self) -> usize {
        (self.reliable_fraction * self.n_forecasters as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ManifestEntry {
    Config(SynthConfig),
    Forecaster {
        id: String,
        reliable: bool,
    },
    Question {
        id: String,
        answer: Answer,
        life: u32,
    },
    Forecast {
        record: usize,
        question_id: String,
        forecaster_id: String,
        day: u32,
        sigma: f64,
        distance: f64,
        reliable: bool,
    },
}

/// The latent variables behind a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub reliable: Vec<bool>,
    pub answers: Vec<Answer>,
    pub lives: Vec<u32>,
    pub forecasts: Vec<LatentForecast>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentForecast {
    pub question: usize,
    pub forecaster: usize,
    pub day: u32,
    pub sigma: f64,
    pub distance: f64,
}

fn forecaster_id(i: usize) -> String {
    format!("f{i:03}")
}

fn question_id(i: usize) -> String {
    format!("s{i:04}")
}

impl GroundTruth {
    pub fn entries(&self) -> Vec<ManifestEntry> {
        let mut out = vec![ManifestEntry::Config(self.config.clone())];
        out.extend(self.reliable.iter().enumerate().map(|(i, &reliable)| ManifestEntry::Forecaster {
            id: forecaster_id(i),
            reliable,
        }));
        out.extend(self.answers.iter().zip(&self.lives).enumerate().map(|(i, (&answer, &life))| ManifestEntry::Question {
            id: question_id(i),
            answer,
            life,
        }));
        out.extend(self.forecasts.iter().enumerate().map(|(record, f)| ManifestEntry::Forecast {
            record,
            question_id: question_id(f.question),
            forecaster_id: forecaster_id(f.forecaster),
            day: f.day,
            sigma: f.sigma,
            distance: f.distance,
            reliable: self.reliable[f.forecaster],
        }));
        out
    }

    pub fn write(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for e in self.entries() {
            serde_json::to_writer(&mut w, &e)?;
            w.write_all(b"\n").map_err(|e| Error::io("manifest", e))?;
        }
        w.flush().map_err(|e| Error::io("manifest", e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write(file)
    }
}

pub fn read_manifest(reader: impl BufRead) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("manifest", e))?;
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

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_manifest(BufReader::new(file))
}

const QUESTIONS: &[&str] = &[
    "Will the measure pass before the deadline?",
    "Will the index close above the threshold?",
    "Will the talks conclude with an agreement?",
    "Will the launch happen on schedule?",
];
const OPENERS: &[&str] = &["my read", "going with", "for now", "overall", "on balance"];
const FILLER: &[&str] = &[
    "the trend looks steady",
    "recent news points this way",
    "the numbers moved a bit",
    "little has changed this week",
    "the timeline still matters",
    "watching the next update",
];

/// Where a forecast lands given the truth, its population and its distance
/// from the pole it is pushed toward.
pub fn place(answer: Answer, reliable: bool, distance: f64) -> f64 {
    let toward_yes = answer.is_yes() == reliable;
    let p = if toward_yes { 1.0 - distance } else { distance };
    p.clamp(0.0, 1.0)
}

pub fn generate(config: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut reliable = vec![false; config.n_forecasters];
    reliable[..config.reliable_count()].iter_mut().for_each(|r| *r = true);
    reliable.shuffle(&mut rng);

    let mut questions = Vec::with_capacity(config.n_questions);
    let mut forecasts = Vec::new();
    let mut truth = GroundTruth {
        config: config.clone(),
        reliable,
        answers: Vec::new(),
        lives: Vec::new(),
        forecasts: Vec::new(),
    };

    for qi in 0..config.n_questions {
        let answer = Answer::from_bool(rng.random_bool(0.5));
        let life = rng.random_range(config.life_min..=config.life_max);
        let open = config.start_date + Duration::days(qi as i64);
        let id = question_id(qi);
        questions.push(Question {
            id: id.clone(),
            text: QUESTIONS.choose(&mut rng).expect("non-empty").to_string(),
            open_date: open,
            close_date: open + Duration::days(i64::from(life) - 1),
            answer,
        });
        truth.answers.push(answer);
        truth.lives.push(life);

        for day in 0..life {
            let sigma = config.sigma(day);
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let k = config.count_on_day(day);
            let who: Vec<usize> = if k <= config.n_forecasters {
                sample(&mut rng, config.n_forecasters, k).into_vec()
            } else {
                (0..k).map(|_| rng.random_range(0..config.n_forecasters)).collect()
            };
            for f in who {
                let distance: f64 = normal.sample(&mut rng).abs();
                let is_reliable = truth.reliable[f];
                let marker = if is_reliable { &config.reliable_marker } else { &config.unreliable_marker };
                let opener = OPENERS.choose(&mut rng).expect("non-empty");
                let filler = FILLER.choose(&mut rng).expect("non-empty");
                forecasts.push(Forecast {
                    question_id: id.clone(),
                    forecaster_id: forecaster_id(f),
                    date: open + Duration::days(i64::from(day)),
                    prediction: place(answer, is_reliable, distance),
                    justification: format!("{marker}: {opener}, {filler}."),
                });
                truth.forecasts.push(LatentForecast {
                    question: qi,
                    forecaster: f,
                    day,
                    sigma,
                    distance,
                });
            }
        }
    }
    Ok((Dataset::from_parts(questions, forecasts), truth))
}

/// A log-likelihood that may carry point masses: `atoms` counts factors that
/// are probabilities of an exact value rather than densities, and any number
/// of atoms dominates any density.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Evidence {
    atoms: u32,
    log: f64,
}

impl Evidence {
    const ZERO: Evidence = Evidence { atoms: 0, log: f64::NEG_INFINITY };
    const ONE: Evidence = Evidence { atoms: 0, log: 0.0 };

    fn times(self, o: Evidence) -> Evidence {
        Evidence {
            atoms: self.atoms + o.atoms,
            log: self.log + o.log,
        }
    }

    fn scale(self, w: f64) -> Evidence {
        if w <= 0.0 {
            Evidence::ZERO
        } else {
            Evidence {
                atoms: self.atoms,
                log: self.log + w.ln(),
            }
        }
    }

    fn plus(self, o: Evidence) -> Evidence {
        if self.log == f64::NEG_INFINITY {
            return o;
        }
        if o.log == f64::NEG_INFINITY {
            return self;
        }
        match self.atoms.cmp(&o.atoms) {
            std::cmp::Ordering::Greater => self,
            std::cmp::Ordering::Less => o,
            std::cmp::Ordering::Equal => {
                let m = self.log.max(o.log);
                Evidence {
                    atoms: self.atoms,
                    log: m + ((self.log - m).exp() + (o.log - m).exp()).ln(),
                }
            }
        }
    }

    fn beats(self, o: Evidence) -> bool {
        match (self.log == f64::NEG_INFINITY, o.log == f64::NEG_INFINITY) {
            (true, _) => false,
            (false, true) => true,
            _ => (self.atoms, self.log) > (o.atoms, o.log),
        }
    }
}

/// Likelihood of observing `prediction` from a forecaster of the given
/// population when the answer is `answer` and the noise scale is `sigma`.
fn likelihood(prediction: f64, answer: Answer, reliable: bool, sigma: f64) -> Evidence {
    let toward_yes = answer.is_yes() == reliable;
    let distance = if toward_yes { 1.0 - prediction } else { prediction };
    if distance >= 1.0 {
        let mass = statrs::function::erf::erfc(1.0 / (sigma * std::f64::consts::SQRT_2));
        return Evidence { atoms: 1, log: mass.ln() };
    }
    let z = distance / sigma;
    Evidence {
        atoms: 0,
        log: (2.0 / (2.0 * std::f64::consts::PI).sqrt()).ln() - sigma.ln() - 0.5 * z * z,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesBounds {
    pub acc_prediction_only: f64,
    pub acc_with_markers: f64,
    pub windows: usize,
}

/// Accuracy of the Bayes-optimal caller over every non-empty window of
/// freshly generated datasets, once seeing predictions only and once also
/// knowing each forecaster's population. Datasets are drawn with seeds
/// derived from the config seed until at least `min_windows` windows are
/// scored. Ties call `no`.
pub fn bayes_bounds(config: &SynthConfig, mode: WindowMode, min_windows: usize) -> Result<BayesBounds> {
    config.validate()?;
    mode.validate()?;
    let prior_reliable = config.reliable_count() as f64 / config.n_forecasters as f64;
    let (mut windows, mut right_p, mut right_m) = (0usize, 0usize, 0usize);
    let mut round = 0u64;
    while windows < min_windows {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(round + 1));
        round += 1;
        let (ds, truth) = generate(&cfg)?;
        if ds.forecasts().is_empty() {
            return Err(Error::InvalidConfig("configuration produces no forecasts".into()));
        }
        for (qi, q) in ds.questions().iter().enumerate() {
            for day in 0..q.life() {
                let window = select_window(&ds, &q.id, i64::from(day), mode)?;
                if window.is_empty() {
                    continue;
                }
                let (mut yes_m, mut no_m, mut yes_p, mut no_p) = (Evidence::ONE, Evidence::ONE, Evidence::ONE, Evidence::ONE);
                for e in &window.entries {
                    let latent = truth.forecasts[e.record];
                    debug_assert_eq!(latent.question, qi);
                    let rel = truth.reliable[latent.forecaster];
                    let x = e.prediction;
                    let s = latent.sigma;
                    yes_m = yes_m.times(likelihood(x, Answer::Yes, rel, s));
                    no_m = no_m.times(likelihood(x, Answer::No, rel, s));
                    let mix = |a: Answer| {
                        likelihood(x, a, true, s)
                            .scale(prior_reliable)
                            .plus(likelihood(x, a, false, s).scale(1.0 - prior_reliable))
                    };
                    yes_p = yes_p.times(mix(Answer::Yes));
                    no_p = no_p.times(mix(Answer::No));
                }
                let answer = truth.answers[qi];
                windows += 1;
                right_m += usize::from(Answer::from_bool(yes_m.beats(no_m)) == answer);
                right_p += usize::from(Answer::from_bool(yes_p.beats(no_p)) == answer);
            }
        }
    }
    Ok(BayesBounds {
        acc_prediction_only: right_p as f64 / windows as f64,
        acc_with_markers: right_m as f64 / windows as f64,
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::Baseline;
    use crate::corpus::{validate, write_dataset};
    use crate::eval::{accuracy, call_all_days};

    fn small() -> SynthConfig {
        SynthConfig {
            n_questions: 4,
            life_min: 8,
            life_max: 8,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    fn bytes(ds: &Dataset) -> Vec<u8> {
        let mut b = Vec::new();
        write_dataset(ds, &mut b).unwrap();
        b
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, ta) = generate(&small()).unwrap();
        let (b, tb) = generate(&small()).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        let (mut ma, mut mb) = (Vec::new(), Vec::new());
        ta.write(&mut ma).unwrap();
        tb.write(&mut mb).unwrap();
        assert_eq!(ma, mb);
        let other = generate(&SynthConfig { seed: 12, ..small() }).unwrap().0;
        assert_ne!(bytes(&a), bytes(&other));
    }

    #[test]
    fn generated_data_validates_and_matches_manifest() {
        let cfg = SynthConfig {
            life_min: 5,
            life_max: 12,
            forecasts_per_day: 2.5,
            ..SynthConfig::default()
        };
        let (ds, truth) = generate(&cfg).unwrap();
        let report = validate(&ds);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        for (q, a) in ds.questions().iter().zip(&truth.answers) {
            assert_eq!(q.answer, *a);
        }
        assert_eq!(ds.forecasts().len(), truth.forecasts.len());
        let mut buf = Vec::new();
        truth.write(&mut buf).unwrap();
        let entries = read_manifest(buf.as_slice()).unwrap();
        assert_eq!(entries, truth.entries());
        assert_eq!(entries[0], ManifestEntry::Config(cfg));
    }

    #[test]
    fn markers_identify_populations() {
        let cfg = SynthConfig::default();
        let (ds, truth) = generate(&cfg).unwrap();
        for (f, latent) in ds.forecasts().iter().zip(&truth.forecasts) {
            let tokens: Vec<String> = crate::encode::tokenize(&f.justification).into_iter().map(|t| t.to_string()).collect();
            let has = |m: &str| tokens.iter().any(|t| t == m);
            let reliable = truth.reliable[latent.forecaster];
            assert_eq!(has(&cfg.reliable_marker), reliable);
            assert_eq!(has(&cfg.unreliable_marker), !reliable);
        }
    }

    #[test]
    fn daily_counts_follow_rate() {
        let cfg = SynthConfig {
            forecasts_per_day: 2.5,
            ..small()
        };
        let counts: Vec<usize> = (0..8).map(|d| cfg.count_on_day(d)).collect();
        assert_eq!(counts, vec![2, 3, 2, 3, 2, 3, 2, 3]);
        let (ds, _) = generate(&cfg).unwrap();
        assert_eq!(ds.forecasts().len(), 4 * 20);
    }

    #[test]
    fn noise_schedule() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.sigma(0), 0.6);
        assert!((cfg.sigma(1) - 0.51).abs() < 1e-12);
        assert_eq!(cfg.sigma(200), SIGMA_MIN);
    }

    #[test]
    fn noiseless_reliable_crowd_is_always_right() {
        let cfg = SynthConfig {
            reliable_fraction: 1.0,
            base_noise: 1e-9,
            noise_decay: 1.0,
            n_questions: 10,
            ..SynthConfig::default()
        };
        let (ds, _) = generate(&cfg).unwrap();
        let recs = call_all_days(&Baseline::Majority, &ds, &ds.question_ids(), WindowMode::active(10), 1).unwrap();
        let r = accuracy("majority", &recs);
        assert_eq!(r.overall_macro, Some(100.0));
        assert_eq!(r.life_quartiles, [Some(100.0); 4]);
    }

    #[test]
    fn majority_improves_over_life() {
        let cfg = SynthConfig::default();
        let (ds, _) = generate(&cfg).unwrap();
        let recs = call_all_days(&Baseline::Majority, &ds, &ds.question_ids(), WindowMode::daily(), 1).unwrap();
        let r = accuracy("majority", &recs);
        assert!(r.life_quartiles[3].unwrap() >= r.life_quartiles[0].unwrap(), "{:?}", r.life_quartiles);
    }

    #[test]
    fn place_pushes_by_population() {
        assert_eq!(place(Answer::Yes, true, 0.2), 0.8);
        assert_eq!(place(Answer::Yes, false, 0.2), 0.2);
        assert_eq!(place(Answer::No, true, 0.2), 0.2);
        assert_eq!(place(Answer::No, false, 1.7), 0.0);
        assert_eq!(place(Answer::No, true, 1.7), 1.0);
    }

    #[test]
    fn evidence_arithmetic() {
        let d = Evidence { atoms: 0, log: 3.0 };
        let a = Evidence { atoms: 1, log: -20.0 };
        assert!(a.beats(d));
        assert!(!d.beats(d));
        assert_eq!(d.plus(a), a);
        assert_eq!(d.plus(Evidence::ZERO), d);
        let s = d.plus(d);
        assert!((s.log - (3.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn likelihood_integrates_to_one() {
        let sigma = 0.7;
        let n = 20_000;
        let h = 1.0 / n as f64;
        let density: f64 = (0..n)
            .map(|i| likelihood((i as f64 + 0.5) * h, Answer::Yes, true, sigma).log.exp() * h)
            .sum();
        let atom = likelihood(0.0, Answer::Yes, true, sigma).log.exp();
        assert!((density + atom - 1.0).abs() < 1e-6, "{}", density + atom);
    }

    #[test]
    fn balanced_populations_leave_predictions_uninformative() {
        let cfg = SynthConfig {
            reliable_fraction: 0.5,
            n_questions: 200,
            life_min: 1,
            life_max: 1,
            ..SynthConfig::default()
        };
        let b = bayes_bounds(&cfg, WindowMode::daily(), 2000).unwrap();
        assert!((b.acc_prediction_only - 0.5).abs() < 0.04, "{b:?}");
        assert!(b.acc_with_markers > 0.75, "{b:?}");
    }

    #[test]
    fn fully_reliable_crowd_gains_nothing_from_markers() {
        let cfg = SynthConfig {
            reliable_fraction: 1.0,
            n_questions: 20,
            ..SynthConfig::default()
        };
        let b = bayes_bounds(&cfg, WindowMode::daily(), 400).unwrap();
        assert_eq!(b.acc_prediction_only, b.acc_with_markers);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            SynthConfig { n_questions: 0, ..small() },
            SynthConfig { life_min: 9, ..small() },
            SynthConfig { base_noise: 0.0, ..small() },
            SynthConfig { noise_decay: 1.5, ..small() },
            SynthConfig { unreliable_marker: "sourced".into(), ..small() },
            SynthConfig { reliable_marker: "trend".into(), ..small() },
        ] {
            assert!(generate(&cfg).is_err(), "{cfg:?}");
        }
    }
}
