//! Seeded synthetic multi-user traces and the ground-truth oracles used to
//! test estimators against them.
//!
//! Each user has situations that tile the 2880-minute cycle in interleaved
//! segments and a dozen places. A situation prefers a home place; the place
//! drives gps, cell and accelerometer readings, and places share a few usage
//! profiles. With strength `lambda` usage follows Zipf rankings of the
//! situation and of the place's profile, otherwise a global one. A chance of repeating the previous label of the same kind is
//! mixed in.

use std::path::{Path, PathBuf};

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::SourceId;
use crate::discretize::{equal_width_bins, Binning};
use crate::error::{Error, Result};
use crate::estimate::Distribution;
use crate::trace::{
    time_of_cycle, ContextSnapshot, LabeledEvent, Trace, TraceHeader, UsageEvent, UsageKind, UserTrace, Vocabulary,
    ACCEL_POWER_RANGE, CYCLE_MINUTES,
};

const CAMPUS: (f64, f64) = (30.2849, -97.7341);
/// Half-width, in degrees, of the square the places are drawn from.
const PLACE_SPREAD_DEG: f64 = 0.02;
const EXTRA_CELLS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    /// Mean events per user for web, phone and app usage before scaling.
    pub events_per_user: [usize; 3],
    pub scale: f64,
    pub zipf_exponent: f64,
    pub n_situations: usize,
    /// Equal-length time segments per cycle, dealt out to situations.
    pub time_segments: usize,
    pub n_places: usize,
    /// Distinct usage profiles shared out among the places.
    pub n_profiles: usize,
    /// Weight of the context-specific rankings against the global ranking.
    pub lambda: f64,
    /// Part of `lambda` given to the situation's ranking; the rest goes to
    /// the place's.
    pub situation_share: f64,
    /// Probability that an event happens at its situation's home place.
    pub place_stickiness: f64,
    /// Probability of repeating the previous label of the same kind.
    pub repeat_prob: f64,
    pub vocab_sizes: [usize; 3],
    pub gps_sigma_m: f64,
    pub gps_missing: f64,
    /// Probability that the cell id is the place's own cell.
    pub cell_fidelity: f64,
    /// Half-width of the uniform accelerometer log-power band of a place.
    pub accel_width: f64,
    pub days: u64,
    pub epoch_weekday: u8,
    pub depth: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 24,
            events_per_user: [700, 2300, 21200],
            scale: 0.1,
            zipf_exponent: 1.5,
            n_situations: 6,
            time_segments: 24,
            n_places: 12,
            n_profiles: 4,
            lambda: 0.7,
            situation_share: 0.0,
            place_stickiness: 0.7,
            repeat_prob: 0.1,
            vocab_sizes: [150, 120, 100],
            gps_sigma_m: 50.0,
            gps_missing: 0.05,
            cell_fidelity: 0.8,
            accel_width: 1.5,
            days: 365,
            epoch_weekday: 0,
            depth: 3,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn events_of(&self, kind: UsageKind) -> usize {
        ((self.events_per_user[kind.index()] as f64 * self.scale).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("lambda", self.lambda)?;
        unit("situation_share", self.situation_share)?;
        unit("place_stickiness", self.place_stickiness)?;
        unit("repeat_prob", self.repeat_prob)?;
        unit("gps_missing", self.gps_missing)?;
        unit("cell_fidelity", self.cell_fidelity)?;
        if self.n_users == 0 || self.n_situations == 0 || self.n_places == 0 || self.n_profiles == 0 || self.days == 0 {
            return Err(Error::invalid("users, situations, places, profiles and days must be at least 1"));
        }
        if self.time_segments < self.n_situations {
            return Err(Error::invalid("need at least one time segment per situation"));
        }
        if self.vocab_sizes.contains(&0) {
            return Err(Error::invalid("vocabulary sizes must be at least 1"));
        }
        if !(self.zipf_exponent > 0.0) || !(self.scale > 0.0) {
            return Err(Error::invalid("zipf exponent and scale must be positive"));
        }
        if !(self.gps_sigma_m > 0.0) || !(self.accel_width > 0.0) {
            return Err(Error::invalid("gps sigma and accel width must be positive"));
        }
        if self.epoch_weekday > 6 {
            return Err(Error::invalid("epoch weekday must be 0..=6"));
        }
        Ok(())
    }
}

/// Zipf probabilities for ranks `0..k`.
pub fn zipf_pmf(k: usize, s: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=k).map(|r| (r as f64).powf(-s)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Situation {
    pub home_place: usize,
    pub ranks: [Vec<usize>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub center: (f64, f64),
    pub cell: String,
    pub accel_mean: f64,
    /// Index into [`UserModel::profiles`].
    pub profile: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserModel {
    pub user_id: String,
    /// Situation of each time segment.
    pub segments: Vec<usize>,
    pub situations: Vec<Situation>,
    pub places: Vec<Place>,
    /// Every cell id the user can observe.
    pub cells: Vec<String>,
    /// Per-kind rankings of each usage profile.
    pub profiles: Vec<[Vec<usize>; 3]>,
    pub global_ranks: [Vec<usize>; 3],
}

/// Ground truth of a generated trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub config: SynthConfig,
    pub labels: [Vec<String>; 3],
    pub users: Vec<UserModel>,
}

impl GeneratorModel {
    pub fn user(&self, id: &str) -> Option<&UserModel> {
        self.users.iter().find(|u| u.user_id == id)
    }

    /// Situation whose window contains `time_of_cycle`.
    pub fn situation_at(&self, user: &UserModel, time_of_cycle: f64) -> Result<usize> {
        if !(0.0..CYCLE_MINUTES).contains(&time_of_cycle) {
            return Err(Error::invalid(format!("time of cycle {time_of_cycle} is outside every situation window")));
        }
        let width = CYCLE_MINUTES / user.segments.len() as f64;
        let seg = ((time_of_cycle / width) as usize).min(user.segments.len() - 1);
        Ok(user.segments[seg])
    }

    /// `P(place | situation)`.
    pub fn place_prior(&self, user: &UserModel, situation: usize) -> Vec<f64> {
        let n = user.places.len() as f64;
        let stick = self.config.place_stickiness;
        (0..user.places.len())
            .map(|p| (1.0 - stick) / n + if p == user.situations[situation].home_place { stick } else { 0.0 })
            .collect()
    }

    /// Outcome distribution in a situation at a place, without the repeat
    /// component: `lambda` times the context Zipf (situation and place
    /// rankings split by `situation_share`) plus `1 - lambda` times the
    /// global Zipf.
    pub fn mixture(&self, user: &UserModel, kind: UsageKind, situation: usize, place: usize) -> Vec<f64> {
        let c = &self.config;
        let k = self.labels[kind.index()].len();
        let zipf = zipf_pmf(k, c.zipf_exponent);
        let sit = &user.situations[situation].ranks[kind.index()];
        let at = &user.profiles[user.places[place].profile][kind.index()];
        let global = &user.global_ranks[kind.index()];
        let (ws, wp) = (c.lambda * c.situation_share, c.lambda * (1.0 - c.situation_share));
        (0..k)
            .map(|g| ws * zipf[sit[g]] + wp * zipf[at[g]] + (1.0 - c.lambda) * zipf[global[g]])
            .collect()
    }

    /// Likelihood of the sensor readings of `snapshot` at each place, up to a
    /// common factor.
    fn place_likelihoods(&self, user: &UserModel, snapshot: &ContextSnapshot) -> Vec<f64> {
        let c = &self.config;
        let sigma_lat = c.gps_sigma_m / crate::discretize::METERS_PER_DEGREE;
        let pool = user.cells.len() as f64;
        let logs: Vec<f64> = user
            .places
            .iter()
            .map(|place| {
                let mut log = 0.0;
                if let Some((lat, lon)) = snapshot.gps {
                    let sigma_lon = sigma_lat / place.center.0.to_radians().cos();
                    let zl = (lat - place.center.0) / sigma_lat;
                    let zo = (lon - place.center.1) / sigma_lon;
                    log += -0.5 * (zl * zl + zo * zo) - sigma_lon.ln();
                }
                if let Some(cell) = &snapshot.cell_id {
                    let p = (1.0 - c.cell_fidelity) / pool + if *cell == place.cell { c.cell_fidelity } else { 0.0 };
                    log += p.ln();
                }
                if (snapshot.accel_log_power - place.accel_mean).abs() > c.accel_width {
                    log = f64::NEG_INFINITY;
                }
                log
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return vec![1.0; logs.len()];
        }
        logs.iter().map(|l| (l - max).exp()).collect()
    }

    /// Exact `P(outcome | snapshot)` for events of `kind` by `user`, over
    /// `self.labels[kind]`.
    pub fn oracle_posterior(&self, user: &UserModel, kind: UsageKind, snapshot: &ContextSnapshot) -> Result<Distribution> {
        let s = self.situation_at(user, snapshot.time_of_cycle)?;
        let prior = self.place_prior(user, s);
        let like = self.place_likelihoods(user, snapshot);
        let mut post: Vec<f64> = prior.iter().zip(&like).map(|(a, b)| a * b).collect();
        let z: f64 = post.iter().sum();
        post.iter_mut().for_each(|p| *p /= z);
        let k = self.labels[kind.index()].len();
        let mut out = vec![0.0; k];
        for (p, w) in post.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            for (o, m) in out.iter_mut().zip(self.mixture(user, kind, s, p)) {
                *o += w * m;
            }
        }
        let previous = snapshot
            .prior(kind)
            .first()
            .and_then(|l| self.labels[kind.index()].iter().position(|x| x == l));
        if let Some(prev) = previous {
            let beta = self.config.repeat_prob;
            out.iter_mut().for_each(|o| *o *= 1.0 - beta);
            out[prev] += beta;
        }
        Ok(Distribution(out))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<GeneratorModel> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Free-function form of [`GeneratorModel::oracle_posterior`].
pub fn oracle_posterior(
    model: &GeneratorModel,
    user: &UserModel,
    kind: UsageKind,
    snapshot: &ContextSnapshot,
) -> Result<Distribution> {
    model.oracle_posterior(user, kind, snapshot)
}

fn label_names(config: &SynthConfig) -> [Vec<String>; 3] {
    let prefix = ["site", "num", "app"];
    UsageKind::ALL.map(|kind| {
        (0..config.vocab_sizes[kind.index()])
            .map(|i| format!("{}{:03}", prefix[kind.index()], i))
            .collect()
    })
}

fn random_ranks(rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
    let mut r: Vec<usize> = (0..k).collect();
    r.shuffle(rng);
    r
}

fn all_ranks(rng: &mut ChaCha8Rng, config: &SynthConfig) -> [Vec<usize>; 3] {
    [
        random_ranks(rng, config.vocab_sizes[0]),
        random_ranks(rng, config.vocab_sizes[1]),
        random_ranks(rng, config.vocab_sizes[2]),
    ]
}

/// Per-user generator; users draw from independent streams of one seed.
pub fn user_rng(seed: u64, user_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user_index as u64);
    rng
}

fn user_id(index: usize, n_users: usize) -> String {
    let width = n_users.saturating_sub(1).to_string().len().max(2);
    format!("u{index:0width$}")
}

fn build_user(config: &SynthConfig, index: usize, rng: &mut ChaCha8Rng) -> UserModel {
    let id = user_id(index, config.n_users);
    let mut segments: Vec<usize> = (0..config.time_segments).map(|j| j % config.n_situations).collect();
    segments.shuffle(rng);
    let cells: Vec<String> = (0..config.n_places + EXTRA_CELLS)
        .map(|c| format!("{id}-cell{c}"))
        .collect();
    let (lo, hi) = (ACCEL_POWER_RANGE.0.ln() + config.accel_width, ACCEL_POWER_RANGE.1.ln() - config.accel_width);
    let places: Vec<Place> = (0..config.n_places)
        .map(|p| Place {
            center: (
                CAMPUS.0 + rng.gen_range(-PLACE_SPREAD_DEG..PLACE_SPREAD_DEG),
                CAMPUS.1 + rng.gen_range(-PLACE_SPREAD_DEG..PLACE_SPREAD_DEG),
            ),
            cell: cells[p].clone(),
            accel_mean: rng.gen_range(0.0f64..6.0).clamp(lo, hi),
            profile: p % config.n_profiles,
        })
        .collect();
    let profiles: Vec<[Vec<usize>; 3]> = (0..config.n_profiles).map(|_| all_ranks(rng, config)).collect();
    let situations: Vec<Situation> = (0..config.n_situations)
        .map(|_| Situation {
            home_place: rng.gen_range(0..config.n_places),
            ranks: all_ranks(rng, config),
        })
        .collect();
    UserModel {
        user_id: id,
        segments,
        situations,
        places,
        cells,
        profiles,
        global_ranks: all_ranks(rng, config),
    }
}

fn generate_user(model: &GeneratorModel, index: usize) -> UserTrace {
    let config = &model.config;
    let mut rng = user_rng(config.seed, index);
    let user = build_user(config, index, &mut rng);
    let mut stamps: Vec<(u64, UsageKind)> = Vec::new();
    for kind in UsageKind::ALL {
        for _ in 0..config.events_of(kind) {
            stamps.push((rng.gen_range(0..config.days * 86_400), kind));
        }
    }
    stamps.sort();
    let samplers: Vec<Vec<Vec<WeightedIndex<f64>>>> = UsageKind::ALL
        .iter()
        .map(|&kind| {
            (0..config.n_situations)
                .map(|s| {
                    (0..config.n_places)
                        .map(|p| WeightedIndex::new(model.mixture(&user, kind, s, p)).expect("positive weights"))
                        .collect()
                })
                .collect()
        })
        .collect();
    let sigma_lat = config.gps_sigma_m / crate::discretize::METERS_PER_DEGREE;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut history: [Vec<String>; 3] = Default::default();
    let mut events = Vec::with_capacity(stamps.len());
    for (ts, kind) in stamps {
        let tod = time_of_cycle(ts, config.epoch_weekday);
        let s = model.situation_at(&user, tod).expect("cycle time in range");
        let p = if rng.gen::<f64>() < config.place_stickiness {
            user.situations[s].home_place
        } else {
            rng.gen_range(0..config.n_places)
        };
        let place = &user.places[p];
        let gps = if rng.gen::<f64>() < config.gps_missing {
            None
        } else {
            let sigma_lon = sigma_lat / place.center.0.to_radians().cos();
            Some((
                place.center.0 + sigma_lat * noise.sample(&mut rng),
                place.center.1 + sigma_lon * noise.sample(&mut rng),
            ))
        };
        let cell = if rng.gen::<f64>() < config.cell_fidelity {
            place.cell.clone()
        } else {
            user.cells[rng.gen_range(0..user.cells.len())].clone()
        };
        let accel = place.accel_mean + rng.gen_range(-config.accel_width..config.accel_width);
        let h = &history[kind.index()];
        let label = match h.first() {
            Some(prev) if rng.gen::<f64>() < config.repeat_prob => prev.clone(),
            _ => model.labels[kind.index()][samplers[kind.index()][s][p].sample(&mut rng)].clone(),
        };
        events.push(LabeledEvent {
            context: ContextSnapshot {
                time_of_cycle: tod,
                accel_log_power: accel,
                gps,
                cell_id: Some(cell),
                prior_usage: history.clone(),
            },
            outcome: UsageEvent {
                user_id: user.user_id.clone(),
                timestamp: ts,
                kind,
                label: label.clone(),
            },
        });
        let h = &mut history[kind.index()];
        h.insert(0, label);
        h.truncate(config.depth);
    }
    UserTrace {
        user_id: user.user_id,
        events,
    }
}

/// Builds the ground-truth model of every user without sampling events.
pub fn generator_model(config: &SynthConfig) -> Result<GeneratorModel> {
    config.validate()?;
    let users = (0..config.n_users)
        .map(|i| build_user(config, i, &mut user_rng(config.seed, i)))
        .collect();
    Ok(GeneratorModel {
        config: config.clone(),
        labels: label_names(config),
        users,
    })
}

/// Generates a trace and its ground-truth model. Deterministic in the config.
pub fn generate(config: &SynthConfig) -> Result<(Trace, GeneratorModel)> {
    let model = generator_model(config)?;
    let users: Vec<UserTrace> = (0..config.n_users)
        .into_par_iter()
        .map(|i| generate_user(&model, i))
        .collect();
    let trace = Trace {
        header: TraceHeader {
            depth: config.depth,
            epoch_weekday: config.epoch_weekday,
        },
        users,
    };
    Ok((trace, model))
}

pub fn generate_trace(config: &SynthConfig) -> Result<Trace> {
    Ok(generate(config)?.0)
}

/// `trace.jsonl` -> `trace.model.json`.
pub fn model_path(trace_path: &Path) -> PathBuf {
    let stem = trace_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    trace_path.with_file_name(format!("{stem}.model.json"))
}

/// Writes the trace and, next to it, the model JSON.
pub fn write_synth(trace: &Trace, model: &GeneratorModel, trace_path: &Path) -> Result<PathBuf> {
    trace.write(trace_path)?;
    let mp = model_path(trace_path);
    std::fs::write(&mp, model.to_json()).map_err(|e| Error::io(&mp, e))?;
    Ok(mp)
}

/// Two scalar sources (time and movement) that are conditionally independent
/// given the outcome, each taking `bins` equally wide bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentDesign {
    pub priors: Vec<f64>,
    /// `likelihoods[source][outcome][bin]`.
    pub likelihoods: [Vec<Vec<f64>>; 2],
}

impl IndependentDesign {
    pub const SOURCES: [SourceId; 2] = [SourceId::Time, SourceId::Movement];

    /// Zipf priors over `k` outcomes and Dirichlet(`concentration`) bin
    /// profiles per outcome and source.
    pub fn random(k: usize, bins: usize, concentration: f64, seed: u64) -> Result<IndependentDesign> {
        if k == 0 || bins < 2 || !(concentration > 0.0) {
            return Err(Error::invalid("need k >= 1, bins >= 2 and a positive concentration"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = Dirichlet::new_with_size(concentration, bins).map_err(|e| Error::invalid(e.to_string()))?;
        let mut profile = || (0..k).map(|_| dir.sample(&mut rng)).collect::<Vec<Vec<f64>>>();
        let likelihoods = [profile(), profile()];
        Ok(IndependentDesign {
            priors: zipf_pmf(k, 1.0),
            likelihoods,
        })
    }

    pub fn k(&self) -> usize {
        self.priors.len()
    }

    pub fn bins(&self) -> usize {
        self.likelihoods[0][0].len()
    }

    fn range(source: SourceId) -> (f64, f64) {
        match source {
            SourceId::Time => (0.0, CYCLE_MINUTES),
            _ => (ACCEL_POWER_RANGE.0.ln(), ACCEL_POWER_RANGE.1.ln()),
        }
    }

    /// Exact equal-width binnings of both sources.
    pub fn binnings(&self) -> Vec<Binning> {
        IndependentDesign::SOURCES
            .iter()
            .map(|&s| {
                let (lo, hi) = IndependentDesign::range(s);
                equal_width_bins(s, &[lo, hi], self.bins()).expect("non-degenerate range")
            })
            .collect()
    }

    pub fn label(outcome: usize) -> String {
        format!("g{outcome:03}")
    }

    /// `n` events for one user of app usage. Readings sit strictly inside
    /// their bins.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<LabeledEvent> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outcome_dist = WeightedIndex::new(&self.priors).expect("positive priors");
        let bin_dists: Vec<Vec<WeightedIndex<f64>>> = self
            .likelihoods
            .iter()
            .map(|src| src.iter().map(|p| WeightedIndex::new(p).expect("positive profile")).collect())
            .collect();
        let bins = self.bins() as f64;
        (0..n)
            .map(|i| {
                let g = outcome_dist.sample(&mut rng);
                let mut value = |src: usize| {
                    let (lo, hi) = IndependentDesign::range(IndependentDesign::SOURCES[src]);
                    let b = bin_dists[src][g].sample(&mut rng) as f64;
                    lo + (hi - lo) * (b + rng.gen_range(0.05..0.95)) / bins
                };
                let t = value(0);
                let a = value(1);
                LabeledEvent {
                    context: ContextSnapshot {
                        time_of_cycle: t,
                        accel_log_power: a,
                        gps: None,
                        cell_id: None,
                        prior_usage: Default::default(),
                    },
                    outcome: UsageEvent {
                        user_id: "ci".into(),
                        timestamp: i as u64,
                        kind: UsageKind::App,
                        label: IndependentDesign::label(g),
                    },
                }
            })
            .collect()
    }

    /// True `P(g | bin tuple)`.
    pub fn exact_posterior(&self, tuple: &[usize]) -> Distribution {
        let w: Vec<f64> = (0..self.k())
            .map(|g| self.priors[g] * self.likelihoods[0][g][tuple[0]] * self.likelihoods[1][g][tuple[1]])
            .collect();
        let z: f64 = w.iter().sum();
        Distribution(w.into_iter().map(|x| x / z).collect())
    }
}

/// Laplace-corrected (`m = k`) outcome frequencies among the events whose
/// bins under `binnings` equal `tuple` exactly; class priors come from all
/// events. Meant for small instances only.
pub fn joint_posterior_oracle(
    events: &[&LabeledEvent],
    binnings: &[Binning],
    vocab: &Vocabulary,
    tuple: &[usize],
) -> Distribution {
    let k = vocab.len();
    let mut counts = vec![0u64; k];
    let mut class = vec![0u64; k];
    let mut n = 0u64;
    let mut total = 0u64;
    for e in events {
        let Some(id) = vocab.id(&e.outcome.label) else {
            continue;
        };
        class[id] += 1;
        total += 1;
        let matches = binnings
            .iter()
            .zip(tuple)
            .all(|(b, &t)| b.assign(b.source.read(&e.context)) == t);
        if matches {
            counts[id] += 1;
            n += 1;
        }
    }
    let priors: Vec<f64> = if total == 0 {
        vec![1.0 / k as f64; k]
    } else {
        class.iter().map(|&c| c as f64 / total as f64).collect()
    };
    let m = k as f64;
    Distribution(
        counts
            .iter()
            .zip(&priors)
            .map(|(&c, &p)| (c as f64 + m * p) / (n as f64 + m))
            .collect(),
    )
}

