//! Synthetic follower graphs and cascades with known parameters.
//!
//! Each item starts with a few posters at `t = 0`. Every response broadcasts an
//! exposure to all of the responder's followers in the same second, and each
//! exposed user then responds in a given second with the model probability
//! `p_twitter` or `p_digg`. Between exposure arrivals and TRF bin edges that
//! probability is constant, so the waiting time to the next response is drawn
//! exactly as a geometric variable instead of second by second.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use log::info;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contagion::{EnhancementTable, HazardModel, MissingFactor, ModelParams};
use crate::error::{Error, Result};
use crate::events::{apply_exposure_cap, build_series, split_by_item, Event, FollowerGraph, SeriesOptions};
use crate::inference::{fit_model, FitOptions, FitReport};
use crate::visibility::{
    log_bin_edges, AnalyticSusceptibility, CohortLabel, SusceptibilityCurve, SusceptibilityForm,
    TimeResponseFunction, TrfBundle,
};
use crate::Site;

/// Friend-count distribution of generated users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegreeSpec {
    Constant { k: u32 },
    /// `P(k) ∝ k^{-exponent}` on `k_min..=k_max`.
    PowerLaw { exponent: f64, k_min: u32, k_max: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub users: usize,
    pub degree: DegreeSpec,
    pub seed: u64,
}

impl DegreeSpec {
    fn validate(&self, users: usize) -> Result<()> {
        let max = match *self {
            DegreeSpec::Constant { k } => k,
            DegreeSpec::PowerLaw { exponent, k_min, k_max } => {
                if !exponent.is_finite() || k_min == 0 || k_min > k_max {
                    return Err(Error::InfeasibleGraph(format!(
                        "power law needs 1 ≤ k_min ≤ k_max and a finite exponent, got {self:?}"
                    )));
                }
                k_max
            }
        };
        if max as usize >= users {
            return Err(Error::InfeasibleGraph(format!(
                "{max} friends requested among {users} users"
            )));
        }
        Ok(())
    }

    /// Expected friend count.
    pub fn mean(&self) -> f64 {
        match *self {
            DegreeSpec::Constant { k } => k as f64,
            DegreeSpec::PowerLaw { exponent, k_min, k_max } => {
                let w = |k: u32| (k as f64).powf(-exponent);
                let z: f64 = (k_min..=k_max).map(w).sum();
                (k_min..=k_max).map(|k| k as f64 * w(k)).sum::<f64>() / z
            }
        }
    }
}

/// `user{i}` zero-padded so lexicographic and index order agree.
pub fn user_name(i: usize, users: usize) -> String {
    let width = users.saturating_sub(1).to_string().len();
    format!("user{i:0width$}")
}

pub fn item_name(i: usize, items: usize) -> String {
    let width = items.saturating_sub(1).to_string().len();
    format!("item{i:0width$}")
}

/// Draws each user's friend count from the spec and picks that many distinct
/// friends uniformly among the other users.
pub fn generate_graph(spec: &GraphSpec) -> Result<FollowerGraph> {
    if spec.users == 0 {
        return Err(Error::InfeasibleGraph("no users".into()));
    }
    spec.degree.validate(spec.users)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, 0x6772_6170_68));
    let cdf: Vec<(u32, f64)> = match spec.degree {
        DegreeSpec::Constant { k } => vec![(k, 1.0)],
        DegreeSpec::PowerLaw { exponent, k_min, k_max } => {
            let mut acc = 0.0;
            let mut cdf: Vec<(u32, f64)> = (k_min..=k_max)
                .map(|k| {
                    acc += (k as f64).powf(-exponent);
                    (k, acc)
                })
                .collect();
            cdf.iter_mut().for_each(|c| c.1 /= acc);
            cdf
        }
    };
    let n = spec.users;
    let friends: Vec<Vec<usize>> = (0..n)
        .map(|u| {
            let x: f64 = rng.gen();
            let k = cdf[cdf.partition_point(|c| c.1 <= x).min(cdf.len() - 1)].0 as usize;
            sample(&mut rng, n - 1, k)
                .into_iter()
                .map(|j| if j >= u { j + 1 } else { j })
                .collect()
        })
        .collect();
    let users = (0..n).map(|i| user_name(i, n)).collect();
    FollowerGraph::from_adjacency(users, friends)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seeding {
    pub items: usize,
    /// Number of initial posters per item, drawn uniformly from this range.
    pub posters_min: usize,
    pub posters_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: ModelParams,
    pub graph: GraphSpec,
    pub seeding: Seeding,
    /// Last simulated second.
    pub horizon: i64,
    pub rng_seed: u64,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let s = &self.seeding;
        if s.items == 0 || s.posters_min == 0 || s.posters_min > s.posters_max {
            return Err(Error::InvalidInput(format!("invalid seeding {s:?}")));
        }
        if s.posters_max > self.graph.users {
            return Err(Error::InvalidInput(format!(
                "{} posters requested among {} users",
                s.posters_max, self.graph.users
            )));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidInput("horizon must be at least one second".into()));
        }
        Ok(())
    }
}

/// Horizon of the TRFs in [`reference_truth`].
pub const REFERENCE_TRF_HORIZON: i64 = 8192;

/// Cohort TRFs `∝ exp(−Δt/s)` with scales of 600, 300 and 120 s for the
/// 1-, 10- and 100-friend cohorts.
pub fn reference_trf(horizon: i64) -> Result<TrfBundle> {
    let edges = log_bin_edges(horizon);
    let make = |cohort, scale: f64| {
        TimeResponseFunction::from_shape(cohort, edges.clone(), |dt| (-(dt as f64) / scale).exp())
    };
    TrfBundle::new(
        make(CohortLabel::T1, 600.0)?,
        make(CohortLabel::T10, 300.0)?,
        make(CohortLabel::T100, 120.0)?,
    )
}

/// A self-contained synthetic setup for `site`: published susceptibility
/// constants, `F = (1, 1.5, 1.8, 2.0)`, a 3000-user graph with friend counts
/// `∝ k^{-1}` on 1..=150, 280 items seeded by 1..=80 posters each and seven
/// simulated days. One run logs about 10⁶ events.
///
/// Digg uses `P0 = 667`, `ln v_min = −19`; Twitter uses `ln v_min = −14` and
/// `P0 = 1`, because the published `P0 = 16.6` with the published
/// susceptibility makes nearly every exposed user respond.
pub fn reference_truth(site: Site) -> Result<GroundTruth> {
    let (p0, log_v_min) = match site {
        Site::Digg => (667.0, -19.0),
        Site::Twitter => (1.0, -14.0),
    };
    Ok(GroundTruth {
        params: ModelParams {
            site,
            p0,
            log_v_min,
            enhancement: EnhancementTable::from_factors(&[1.0, 1.5, 1.8, 2.0])?,
            susceptibility: SusceptibilityCurve::analytic(AnalyticSusceptibility::reference(
                SusceptibilityForm::for_site(site),
            )),
            trf: reference_trf(REFERENCE_TRF_HORIZON)?,
        },
        graph: GraphSpec {
            users: 3000,
            degree: DegreeSpec::PowerLaw { exponent: 1.0, k_min: 1, k_max: 150 },
            seed: 1,
        },
        seeding: Seeding { items: 280, posters_min: 1, posters_max: 80 },
        horizon: 7 * 24 * 3600,
        rng_seed: 7,
    })
}

/// SplitMix64 finaliser of `seed ^ stream`, used to derive independent RNG
/// streams (the graph, each item) from one seed.
pub fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates the graph and simulates every item.
pub fn simulate(truth: &GroundTruth) -> Result<(FollowerGraph, Vec<Event>)> {
    let graph = generate_graph(&truth.graph)?;
    let events = simulate_cascades(truth, &graph)?;
    Ok((graph, events))
}

/// Simulates every item of `truth` on `graph`; items run in parallel on
/// independent RNG streams. Events are ordered by time, then item.
pub fn simulate_cascades(truth: &GroundTruth, graph: &FollowerGraph) -> Result<Vec<Event>> {
    truth.validate()?;
    let max_nf = (0..graph.len()).map(|u| graph.friends_of(u).len()).max().unwrap_or(0);
    let model = HazardModel::new(&truth.params, max_nf as u32, MissingFactor::HoldLast)?;
    let s = truth.seeding;
    let per_item: Vec<Vec<Event>> = (0..s.items)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(truth.rng_seed, i as u64 + 1));
            let m = rng.gen_range(s.posters_min..=s.posters_max);
            let posters = sample(&mut rng, graph.len(), m).into_vec();
            simulate_item(graph, &model, &item_name(i, s.items), &posters, truth.horizon, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut events: Vec<Event> = per_item.into_iter().flatten().collect();
    events.sort_by_key(|e| e.time);
    info!("simulated {} items, {} events", s.items, events.len());
    Ok(events)
}

#[derive(Default)]
struct PairState {
    exposures: Vec<i64>,
    candidate: Option<i64>,
    version: u32,
    done: bool,
}

/// Simulates one item from `posters` (graph indices) posting at `t = 0`.
pub fn simulate_item(
    graph: &FollowerGraph,
    model: &HazardModel,
    item: &str,
    posters: &[usize],
    horizon: i64,
    rng: &mut impl Rng,
) -> Result<Vec<Event>> {
    let users = graph.users();
    let mut events = Vec::new();
    let mut state: HashMap<usize, PairState> = HashMap::new();
    let mut queue: BinaryHeap<Reverse<(i64, u64, usize, u32)>> = BinaryHeap::new();
    let mut seq = 0u64;

    for &p in posters {
        events.push(Event::post(&users[p], item, 0));
        state.entry(p).or_default().done = true;
    }
    let mut broadcasts: Vec<(usize, i64)> = posters.iter().map(|&p| (p, 0)).collect();
    loop {
        for (src, r) in broadcasts.drain(..) {
            for &v in graph.followers_of(src) {
                events.push(Event::exposure(&users[v], item, r, &users[src]));
                let st = state.entry(v).or_default();
                if st.done {
                    continue;
                }
                st.exposures.push(r);
                if st.candidate == Some(r) {
                    continue;
                }
                st.version += 1;
                let n_f = graph.friends_of(v).len() as u32;
                st.candidate = draw_response(model, n_f, &st.exposures, r + 1, horizon, rng)?;
                if let Some(c) = st.candidate {
                    queue.push(Reverse((c, seq, v, st.version)));
                    seq += 1;
                }
            }
        }
        let Some(Reverse((t, _, u, version))) = queue.pop() else { break };
        let st = state.get_mut(&u).expect("queued users have state");
        if st.done || st.version != version {
            continue;
        }
        st.done = true;
        events.push(Event::response(&users[u], item, t));
        broadcasts.push((u, t));
    }
    Ok(events)
}

/// First response second in `from..=horizon` with every exposure in
/// `exposures` already visible, or `None`.
fn draw_response(
    model: &HazardModel,
    n_f: u32,
    exposures: &[i64],
    from: i64,
    horizon: i64,
    rng: &mut impl Rng,
) -> Result<Option<i64>> {
    if from > horizon {
        return Ok(None);
    }
    let starts = model.constant_runs(exposures, from, horizon);
    for (i, &a) in starts.iter().enumerate() {
        let b = starts.get(i + 1).map_or(horizon, |&n| n - 1);
        let h = model.hazard(n_f, exposures, a)?;
        if h <= 0.0 {
            continue;
        }
        if h >= 1.0 {
            return Ok(Some(a));
        }
        let u: f64 = 1.0 - rng.gen::<f64>();
        let k = (u.ln() / (-h).ln_1p()).floor();
        if k <= (b - a) as f64 {
            return Ok(Some(a + k as i64));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone)]
pub struct RecoveryOptions {
    pub train_fraction: f64,
    pub max_exposures: usize,
    pub fit: FitOptions,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions {
            train_fraction: 0.5,
            max_exposures: crate::events::DEFAULT_MAX_EXPOSURES,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub events: usize,
    pub exposures: usize,
    pub responses: usize,
    pub train_series: usize,
    pub fit: FitReport,
    /// Relative error of every compared quantity, keyed by name.
    pub relative_errors: BTreeMap<String, f64>,
}

impl RecoveryReport {
    pub fn max_error(&self, prefix: &str) -> f64 {
        self.relative_errors
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, &v)| v.abs())
            .fold(0.0, f64::max)
    }
}

/// Simulates `truth`, fits the model on the training items and compares.
///
/// Compared quantities: `p0` on the reference susceptibility amplitude,
/// `v_min`, `F(n_e)` for every tabulated `n_e` of the truth, and the product
/// `p0·P(n_f)` at the three cohort centres.
pub fn recovery_experiment(truth: &GroundTruth, opts: &RecoveryOptions) -> Result<RecoveryReport> {
    let (graph, events) = simulate(truth)?;
    let n_events = events.len();
    let count = |k| events.iter().filter(|e| e.kind == k).count();
    let exposures = count(crate::events::EventKind::Exposure);
    let responses = count(crate::events::EventKind::Response);
    let log = apply_exposure_cap(events, opts.max_exposures);
    let (series, _) = build_series(
        &log.events,
        &graph,
        &SeriesOptions { observed_until: Some(truth.horizon) },
    );
    let (train, _) = split_by_item(series, opts.train_fraction);
    info!("fitting {} training series", train.len());
    let fit = fit_model(&train, truth.params.site, &opts.fit)?;

    let rel = |got: f64, want: f64| got / want - 1.0;
    let t = &truth.params;
    let p = &fit.params;
    let mut errs = BTreeMap::new();
    let form = AnalyticSusceptibility::reference(t.susceptibility.analytic.map_or(
        crate::visibility::SusceptibilityForm::for_site(t.site),
        |a| a.form(),
    ));
    let truth_amp = t.susceptibility.analytic.map_or(form.amplitude(), |a| a.amplitude());
    let truth_p0 = t.p0 * truth_amp / form.amplitude();
    errs.insert("p0".to_owned(), rel(p.p0, truth_p0));
    errs.insert("v_min".to_owned(), rel(p.v_min(), t.v_min()));
    for (&n_e, &f) in t.enhancement.values() {
        if let Some(g) = p.enhancement.factor(n_e) {
            errs.insert(format!("F({n_e})"), rel(g, f));
        } else {
            errs.insert(format!("F({n_e})"), f64::INFINITY);
        }
    }
    for c in CohortLabel::ALL {
        let n = c.center() as u32;
        let want = t.p0 * t.susceptibility_at(n)?;
        let got = p.p0 * p.susceptibility_at(n)?;
        errs.insert(format!("p0*P({n})"), rel(got, want));
    }
    Ok(RecoveryReport {
        events: n_events,
        exposures,
        responses,
        train_series: train.len(),
        fit,
        relative_errors: errs,
    })
}
