//! Time-response functions `T(Δt, n_f)` and susceptibility curves `P(n_f)`.
//!
//! A time-response function is the density of the delay between exposure and
//! response, conditional on a response happening. It is binned on dyadic
//! edges `1, 2, 4, …` seconds so bins widen with the delay; the support is
//! `[1, horizon)`. Three cohorts of friend counts (1–2, 9–11, 90–110) are
//! estimated separately and blended for arbitrary `n_f` with inverse-distance
//! weights.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::ExposureSeries;
use crate::optim::NelderMead;
use crate::Site;

/// Default observation horizon for Digg time-response functions (24 h).
pub const DIGG_HORIZON: i64 = 24 * 3600;
/// Default observation horizon for Twitter time-response functions (7 days).
pub const TWITTER_HORIZON: i64 = 7 * 24 * 3600;

const WEIGHT_EPS: f64 = 1e-6;

/// Inclusive range of friend counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NfRange {
    pub lo: u32,
    pub hi: u32,
}

impl NfRange {
    pub const fn new(lo: u32, hi: u32) -> Self {
        NfRange { lo, hi }
    }

    pub fn contains(&self, n_f: u32) -> bool {
        self.lo <= n_f && n_f <= self.hi
    }
}

impl fmt::Display for NfRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

impl FromStr for NfRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("bad friend-count range `{s}` (expected LO-HI)"));
        let (lo, hi) = match s.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (s.trim(), s.trim()),
        };
        let lo: u32 = lo.parse().map_err(|_| bad())?;
        let hi: u32 = hi.parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        Ok(NfRange { lo, hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CohortLabel {
    T1,
    T10,
    T100,
}

impl CohortLabel {
    pub const ALL: [CohortLabel; 3] = [CohortLabel::T1, CohortLabel::T10, CohortLabel::T100];

    /// Friend count used in the interpolation weights.
    pub fn center(self) -> f64 {
        match self {
            CohortLabel::T1 => 1.0,
            CohortLabel::T10 => 10.0,
            CohortLabel::T100 => 100.0,
        }
    }

    /// Friend counts pooled to estimate this cohort.
    pub fn default_range(self) -> NfRange {
        match self {
            CohortLabel::T1 => NfRange::new(1, 2),
            CohortLabel::T10 => NfRange::new(9, 11),
            CohortLabel::T100 => NfRange::new(90, 110),
        }
    }
}

/// Dyadic bin edges `1, 2, 4, …` ending exactly at `horizon`. A trailing bin
/// narrower than its predecessor is merged into it so widths never shrink.
pub fn log_bin_edges(horizon: i64) -> Vec<i64> {
    assert!(horizon >= 2, "horizon must be at least 2 seconds");
    let mut edges = vec![1i64];
    let mut e = 2i64;
    while e < horizon {
        edges.push(e);
        e *= 2;
    }
    edges.push(horizon);
    let n = edges.len();
    if n >= 3 {
        let last = edges[n - 1] - edges[n - 2];
        let prev = edges[n - 2] - edges[n - 3];
        if last < prev {
            edges.remove(n - 2);
        }
    }
    edges
}

/// Binned conditional delay density. `density[k]` holds the probability mass
/// of bin `[bin_edges[k], bin_edges[k+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeResponseFunction {
    pub cohort: CohortLabel,
    pub bin_edges: Vec<i64>,
    pub density: Vec<f64>,
}

impl TimeResponseFunction {
    pub fn new(cohort: CohortLabel, bin_edges: Vec<i64>, density: Vec<f64>) -> Result<Self> {
        if bin_edges.len() < 2 || density.len() + 1 != bin_edges.len() {
            return Err(Error::InvalidInput(format!(
                "{} edges for {} bins",
                bin_edges.len(),
                density.len()
            )));
        }
        if bin_edges[0] < 1 || bin_edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "bin edges must be ascending and start at >= 1 s".into(),
            ));
        }
        if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidInput("negative or non-finite bin mass".into()));
        }
        Ok(TimeResponseFunction {
            cohort,
            bin_edges,
            density,
        })
    }

    /// Discretises a per-second density shape onto `bin_edges` and normalises it.
    pub fn from_shape(
        cohort: CohortLabel,
        bin_edges: Vec<i64>,
        shape: impl Fn(i64) -> f64,
    ) -> Result<Self> {
        let mut mass: Vec<f64> = bin_edges
            .windows(2)
            .map(|w| (w[0]..w[1]).map(&shape).sum())
            .collect();
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("shape has no mass".into()));
        }
        mass.iter_mut().for_each(|m| *m /= total);
        Self::new(cohort, bin_edges, mass)
    }

    pub fn horizon(&self) -> i64 {
        *self.bin_edges.last().expect("validated non-empty")
    }

    pub fn bins(&self) -> usize {
        self.density.len()
    }

    pub fn width(&self, bin: usize) -> i64 {
        self.bin_edges[bin + 1] - self.bin_edges[bin]
    }

    pub fn bin_of(&self, dt: i64) -> Option<usize> {
        bin_of(&self.bin_edges, dt)
    }

    /// Per-second density at delay `dt`; zero outside `[1, horizon)`.
    pub fn density_at(&self, dt: i64) -> f64 {
        self.bin_of(dt)
            .map_or(0.0, |k| self.density[k] / self.width(k) as f64)
    }

    /// Per-second density of every bin.
    pub fn per_second(&self) -> Vec<f64> {
        (0..self.bins())
            .map(|k| self.density[k] / self.width(k) as f64)
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let trf: TimeResponseFunction = read_json(path)?;
        Self::new(trf.cohort, trf.bin_edges, trf.density)
    }
}

pub(crate) fn bin_of(edges: &[i64], dt: i64) -> Option<usize> {
    if dt < edges[0] || dt >= *edges.last()? {
        return None;
    }
    Some(edges.partition_point(|&e| e <= dt) - 1)
}

/// Empirical time-response function of one cohort.
///
/// The delay is measured from the first exposure. With `single_exposure_only`
/// only pairs that received exactly one exposure in total contribute.
/// Same-second responses count as a one-second delay; delays at or beyond the
/// horizon are ignored.
pub fn estimate_trf(
    series: &[ExposureSeries],
    cohort: CohortLabel,
    range: NfRange,
    single_exposure_only: bool,
    bin_edges: &[i64],
) -> Result<TimeResponseFunction> {
    let counts = response_counts(series, range, single_exposure_only, bin_edges);
    normalized_trf(cohort, range, bin_edges, counts)
}

/// As [`estimate_trf`], after removing from every delay bin the responses a
/// visibility-independent floor would produce. `floor(n_e)` is the floor's
/// per-second hazard while `n_e` exposures are visible. Bins left negative
/// are clipped to zero.
pub fn estimate_trf_net(
    series: &[ExposureSeries],
    cohort: CohortLabel,
    range: NfRange,
    single_exposure_only: bool,
    bin_edges: &[i64],
    floor: &dyn Fn(usize) -> f64,
) -> Result<TimeResponseFunction> {
    let mut counts = response_counts(series, range, single_exposure_only, bin_edges);
    let expected = floor_counts(series, range, single_exposure_only, bin_edges, floor);
    for (c, e) in counts.iter_mut().zip(expected) {
        *c = (*c - e).max(0.0);
    }
    normalized_trf(cohort, range, bin_edges, counts)
}

fn cohort_series<'a>(
    series: &'a [ExposureSeries],
    range: NfRange,
    single_exposure_only: bool,
) -> impl Iterator<Item = &'a ExposureSeries> {
    series
        .iter()
        .filter(move |s| range.contains(s.n_f) && (!single_exposure_only || s.exposure_times.len() == 1))
}

fn response_counts(
    series: &[ExposureSeries],
    range: NfRange,
    single_exposure_only: bool,
    bin_edges: &[i64],
) -> Vec<f64> {
    let mut counts = vec![0.0; bin_edges.len() - 1];
    for s in cohort_series(series, range, single_exposure_only) {
        let Some(r) = s.response_time else { continue };
        if let Some(k) = bin_of(bin_edges, (r - s.first_exposure()).max(1)) {
            counts[k] += 1.0;
        }
    }
    counts
}

/// Expected floor responses per delay bin over every at-risk second.
fn floor_counts(
    series: &[ExposureSeries],
    range: NfRange,
    single_exposure_only: bool,
    bin_edges: &[i64],
    floor: &dyn Fn(usize) -> f64,
) -> Vec<f64> {
    let horizon = *bin_edges.last().expect("edges are non-empty");
    let mut out = vec![0.0; bin_edges.len() - 1];
    for s in cohort_series(series, range, single_exposure_only) {
        let first = s.first_exposure();
        let end = s.at_risk_end().min(first + horizon - 1);
        let mut t = first + 1;
        while t <= end {
            let n = s.exposures_before(t).len();
            let seg_end = s.exposure_times.get(n).map_or(end, |&x| x.min(end));
            add_seconds(&mut out, bin_edges, t - first, seg_end - first, floor(n));
            t = seg_end + 1;
        }
    }
    out
}

/// Adds `rate` per second of the delays `lo..=hi` to the bins they fall in.
fn add_seconds(out: &mut [f64], edges: &[i64], lo: i64, hi: i64, rate: f64) {
    let Some(mut k) = bin_of(edges, lo) else { return };
    while k < out.len() && edges[k] <= hi {
        let a = lo.max(edges[k]);
        let b = hi.min(edges[k + 1] - 1);
        out[k] += rate * (b - a + 1) as f64;
        k += 1;
    }
}

fn normalized_trf(
    cohort: CohortLabel,
    range: NfRange,
    bin_edges: &[i64],
    counts: Vec<f64>,
) -> Result<TimeResponseFunction> {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyCohort {
            lo: range.lo,
            hi: range.hi,
        });
    }
    let mass = counts.iter().map(|&c| c / total).collect();
    TimeResponseFunction::new(cohort, bin_edges.to_vec(), mass)
}

/// Inverse-distance blending weights `(w_1, w_10, w_100)`.
pub fn interpolation_weights(n_f: f64, site: Site) -> [f64; 3] {
    let w1 = 1.0 / ((n_f - 1.0).powi(2) + WEIGHT_EPS);
    let w10 = 1.0 / ((n_f - 10.0).powi(2) + WEIGHT_EPS);
    let w100 = match site {
        Site::Twitter => 1.0 / ((n_f - 100.0).powi(2) + WEIGHT_EPS),
        Site::Digg => 1.0 / ((n_f - 100.0).abs() + WEIGHT_EPS),
    };
    [w1, w10, w100]
}

/// Blended per-second density `T(dt, n_f)` from the three cohort functions.
pub fn interpolate_trf(
    t1: &TimeResponseFunction,
    t10: &TimeResponseFunction,
    t100: &TimeResponseFunction,
    n_f: u32,
    site: Site,
    dt: i64,
) -> Result<f64> {
    if t1.bin_edges != t10.bin_edges || t1.bin_edges != t100.bin_edges {
        return Err(Error::MismatchedBins);
    }
    let [w1, w10, w100] = interpolation_weights(n_f as f64, site);
    let num = w1 * t1.density_at(dt) + w10 * t10.density_at(dt) + w100 * t100.density_at(dt);
    Ok(num / (w1 + w10 + w100))
}

/// The three cohort functions sharing one bin structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrfBundleWire")]
pub struct TrfBundle {
    pub t1: TimeResponseFunction,
    pub t10: TimeResponseFunction,
    pub t100: TimeResponseFunction,
}

#[derive(Deserialize)]
struct TrfBundleWire {
    t1: TimeResponseFunction,
    t10: TimeResponseFunction,
    t100: TimeResponseFunction,
}

impl TryFrom<TrfBundleWire> for TrfBundle {
    type Error = Error;

    fn try_from(w: TrfBundleWire) -> Result<Self> {
        TrfBundle::new(w.t1, w.t10, w.t100)
    }
}

impl TrfBundle {
    pub fn new(
        t1: TimeResponseFunction,
        t10: TimeResponseFunction,
        t100: TimeResponseFunction,
    ) -> Result<Self> {
        if t1.bin_edges != t10.bin_edges || t1.bin_edges != t100.bin_edges {
            return Err(Error::MismatchedBins);
        }
        Ok(TrfBundle { t1, t10, t100 })
    }

    pub fn bin_edges(&self) -> &[i64] {
        &self.t1.bin_edges
    }

    pub fn horizon(&self) -> i64 {
        self.t1.horizon()
    }

    pub fn density_at(&self, n_f: u32, site: Site, dt: i64) -> f64 {
        let [w1, w10, w100] = interpolation_weights(n_f as f64, site);
        (w1 * self.t1.density_at(dt) + w10 * self.t10.density_at(dt) + w100 * self.t100.density_at(dt))
            / (w1 + w10 + w100)
    }

    /// Blended per-second density of every bin for one friend count.
    pub fn per_second(&self, n_f: u32, site: Site) -> Vec<f64> {
        let [w1, w10, w100] = interpolation_weights(n_f as f64, site);
        let norm = w1 + w10 + w100;
        let (a, b, c) = (self.t1.per_second(), self.t10.per_second(), self.t100.per_second());
        (0..a.len())
            .map(|k| (w1 * a[k] + w10 * b[k] + w100 * c[k]) / norm)
            .collect()
    }

    /// Estimates all three cohorts with their default friend-count ranges.
    pub fn estimate(
        series: &[ExposureSeries],
        single_exposure_only: bool,
        bin_edges: &[i64],
    ) -> Result<Self> {
        let [t1, t10, t100] = CohortLabel::ALL.map(|c| {
            estimate_trf(series, c, c.default_range(), single_exposure_only, bin_edges)
        });
        TrfBundle::new(t1?, t10?, t100?)
    }

    /// As [`TrfBundle::estimate`] with [`estimate_trf_net`].
    pub fn estimate_net(
        series: &[ExposureSeries],
        single_exposure_only: bool,
        bin_edges: &[i64],
        floor: &dyn Fn(usize) -> f64,
    ) -> Result<Self> {
        let [t1, t10, t100] = CohortLabel::ALL.map(|c| {
            estimate_trf_net(series, c, c.default_range(), single_exposure_only, bin_edges, floor)
        });
        TrfBundle::new(t1?, t10?, t100?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub responses: u64,
    pub trials: u64,
}

impl Counts {
    pub fn probability(&self) -> f64 {
        self.responses as f64 / self.trials as f64
    }
}

/// `P'(n_f) = A / ((e^{B n_f} + C)(n_f + D)(n_f + E))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiggParams {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "E")]
    pub e: f64,
}

impl DiggParams {
    /// Published fit for Digg.
    pub const REFERENCE: DiggParams = DiggParams {
        a: 7.6e-3,
        b: -6.2e-2,
        c: 1.7e-3,
        d: 3.7,
        e: 17.8,
    };
}

/// `P(n_f) = A n_f^P / (n_f + B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwitterParams {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "B")]
    pub b: f64,
}

impl TwitterParams {
    /// Published fit for Twitter.
    pub const REFERENCE: TwitterParams = TwitterParams {
        a: 0.3,
        p: 0.16,
        b: 0.55,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SusceptibilityForm {
    Digg,
    Twitter,
}

impl SusceptibilityForm {
    pub fn for_site(site: Site) -> Self {
        match site {
            Site::Twitter => SusceptibilityForm::Twitter,
            Site::Digg => SusceptibilityForm::Digg,
        }
    }

    pub fn param_count(self) -> usize {
        match self {
            SusceptibilityForm::Digg => 5,
            SusceptibilityForm::Twitter => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", content = "params", rename_all = "lowercase")]
pub enum AnalyticSusceptibility {
    Digg(DiggParams),
    Twitter(TwitterParams),
}

impl AnalyticSusceptibility {
    pub fn reference(form: SusceptibilityForm) -> Self {
        match form {
            SusceptibilityForm::Digg => AnalyticSusceptibility::Digg(DiggParams::REFERENCE),
            SusceptibilityForm::Twitter => AnalyticSusceptibility::Twitter(TwitterParams::REFERENCE),
        }
    }

    pub fn form(&self) -> SusceptibilityForm {
        match self {
            AnalyticSusceptibility::Digg(_) => SusceptibilityForm::Digg,
            AnalyticSusceptibility::Twitter(_) => SusceptibilityForm::Twitter,
        }
    }

    pub fn evaluate(&self, n_f: f64) -> f64 {
        match *self {
            AnalyticSusceptibility::Digg(p) => {
                p.a / (((p.b * n_f).exp() + p.c) * (n_f + p.d) * (n_f + p.e))
            }
            AnalyticSusceptibility::Twitter(p) => p.a * n_f.powf(p.p) / (n_f + p.b),
        }
    }

    /// Amplitude `A`; every other parameter only shapes the curve.
    pub fn amplitude(&self) -> f64 {
        match self {
            AnalyticSusceptibility::Digg(p) => p.a,
            AnalyticSusceptibility::Twitter(p) => p.a,
        }
    }

    pub fn with_amplitude(mut self, a: f64) -> Self {
        match &mut self {
            AnalyticSusceptibility::Digg(p) => p.a = a,
            AnalyticSusceptibility::Twitter(p) => p.a = a,
        }
        self
    }

    /// Parameters in the optimizer's coordinates (logs of positive parameters).
    fn to_coords(self) -> Vec<f64> {
        match self {
            AnalyticSusceptibility::Digg(p) => {
                vec![p.a.ln(), p.b, p.c.ln(), p.d.ln(), p.e.ln()]
            }
            AnalyticSusceptibility::Twitter(p) => vec![p.a.ln(), p.p, p.b.ln()],
        }
    }

    fn from_coords(form: SusceptibilityForm, x: &[f64]) -> Self {
        match form {
            SusceptibilityForm::Digg => AnalyticSusceptibility::Digg(DiggParams {
                a: x[0].exp(),
                b: x[1],
                c: x[2].exp(),
                d: x[3].exp(),
                e: x[4].exp(),
            }),
            SusceptibilityForm::Twitter => AnalyticSusceptibility::Twitter(TwitterParams {
                a: x[0].exp(),
                p: x[1],
                b: x[2].exp(),
            }),
        }
    }

    /// Named parameter map, as exported.
    pub fn params(&self) -> BTreeMap<&'static str, f64> {
        match *self {
            AnalyticSusceptibility::Digg(p) => {
                BTreeMap::from([("A", p.a), ("B", p.b), ("C", p.c), ("D", p.d), ("E", p.e)])
            }
            AnalyticSusceptibility::Twitter(p) => {
                BTreeMap::from([("A", p.a), ("P", p.p), ("B", p.b)])
            }
        }
    }
}

/// Single-exposure response probability versus friend count.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SusceptibilityCurve {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub empirical: BTreeMap<u32, Counts>,
    #[serde(default, flatten, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticSusceptibility>,
}

impl SusceptibilityCurve {
    pub fn analytic(form: AnalyticSusceptibility) -> Self {
        SusceptibilityCurve {
            empirical: BTreeMap::new(),
            analytic: Some(form),
        }
    }

    /// Analytic value when available, otherwise the empirical frequency.
    pub fn probability(&self, n_f: u32) -> Option<f64> {
        match &self.analytic {
            Some(a) => Some(a.evaluate(n_f as f64)),
            None => self.empirical.get(&n_f).map(Counts::probability),
        }
    }

    pub fn empirical_probability(&self, n_f: u32) -> Option<f64> {
        self.empirical.get(&n_f).map(Counts::probability)
    }
}

/// Per-`n_f` response counts of pairs exposed once and only once over the
/// whole log, so a later exposure excludes a pair even after its response.
pub fn estimate_susceptibility(series: &[ExposureSeries]) -> SusceptibilityCurve {
    estimate_susceptibility_within(series, None)
}

/// As [`estimate_susceptibility`], counting only responses that arrive less
/// than `window` seconds after the exposure. Later responses are left to the
/// visibility floor.
pub fn estimate_susceptibility_within(
    series: &[ExposureSeries],
    window: Option<i64>,
) -> SusceptibilityCurve {
    let mut empirical: BTreeMap<u32, Counts> = BTreeMap::new();
    for s in series.iter().filter(|s| s.exposure_times.len() == 1) {
        let c = empirical.entry(s.n_f).or_default();
        c.trials += 1;
        let counted = match (s.response_time, window) {
            (Some(r), Some(w)) => r - s.exposure_times[0] < w,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if counted {
            c.responses += 1;
        }
    }
    SusceptibilityCurve {
        empirical,
        analytic: None,
    }
}

/// Mean at-risk seconds of the pairs counted by
/// [`estimate_susceptibility_within`], per friend count, over the same window.
pub fn single_exposure_seconds(series: &[ExposureSeries], window: Option<i64>) -> BTreeMap<u32, f64> {
    let mut acc: BTreeMap<u32, (f64, u64)> = BTreeMap::new();
    for s in series.iter().filter(|s| s.exposure_times.len() == 1) {
        let first = s.first_exposure();
        let end = window.map_or(s.at_risk_end(), |w| s.at_risk_end().min(first + w - 1));
        let e = acc.entry(s.n_f).or_default();
        e.0 += (end - first).max(0) as f64;
        e.1 += 1;
    }
    acc.into_iter().map(|(n, (sum, k))| (n, sum / k as f64)).collect()
}

#[derive(Debug, Clone)]
pub struct SusceptibilityFitOptions {
    /// Starting point; defaults to the published constants with the amplitude
    /// matched to the data.
    pub start: Option<AnalyticSusceptibility>,
    /// Bins with fewer trials are ignored.
    pub min_trials: u64,
    /// Weight each bin's squared log error by its share of trials.
    pub weight_by_trials: bool,
    /// Fit `-ln(1 - f)` rather than the frequency `f`, undoing the saturation
    /// of a response probability accumulated over many seconds.
    pub cumulative_hazard: bool,
    /// Cumulative hazard per friend count owed to the visibility floor,
    /// subtracted before fitting. Only used with `cumulative_hazard`; bins
    /// left without a positive hazard are skipped.
    pub floor_hazard: Option<BTreeMap<u32, f64>>,
    pub max_iterations: usize,
}

impl Default for SusceptibilityFitOptions {
    fn default() -> Self {
        SusceptibilityFitOptions {
            start: None,
            min_trials: 1,
            weight_by_trials: false,
            cumulative_hazard: false,
            floor_hazard: None,
            max_iterations: 50_000,
        }
    }
}

/// Fits an analytic form to the empirical curve by minimising the RMS error of
/// log-probabilities. Bins with zero responses carry no log-probability and are
/// skipped.
pub fn fit_susceptibility_analytic(
    curve: &SusceptibilityCurve,
    form: SusceptibilityForm,
    opts: &SusceptibilityFitOptions,
) -> Result<AnalyticSusceptibility> {
    let points: Vec<(f64, f64, f64)> = curve
        .empirical
        .iter()
        .filter(|(&n, c)| {
            n >= 1 && c.trials >= opts.min_trials && c.responses > 0
                && (!opts.cumulative_hazard || c.responses < c.trials)
        })
        .filter_map(|(&n, c)| {
            let w = if opts.weight_by_trials { c.trials as f64 } else { 1.0 };
            let f = c.probability();
            let y = if opts.cumulative_hazard {
                let floor = opts.floor_hazard.as_ref().and_then(|m| m.get(&n)).copied().unwrap_or(0.0);
                -(-f).ln_1p() - floor
            } else {
                f
            };
            (y > 0.0).then(|| (n as f64, y.ln(), w))
        })
        .collect();
    let total_weight: f64 = points.iter().map(|p| p.2).sum();
    if points.len() < form.param_count() {
        return Err(Error::Underdetermined {
            params: form.param_count(),
            bins: points.len(),
        });
    }

    let start = match opts.start {
        Some(s) if s.form() == form => s,
        Some(_) => {
            return Err(Error::InvalidInput(
                "start point does not match the requested form".into(),
            ))
        }
        None => {
            let reference = AnalyticSusceptibility::reference(form);
            let offset = points
                .iter()
                .map(|&(n, lp, w)| w * (lp - reference.evaluate(n).ln()))
                .sum::<f64>()
                / total_weight;
            reference.with_amplitude(reference.amplitude() * offset.exp())
        }
    };

    let rms = |x: &[f64]| {
        let model = AnalyticSusceptibility::from_coords(form, x);
        let sse: f64 = points
            .iter()
            .map(|&(n, lp, w)| w * (model.evaluate(n).ln() - lp).powi(2))
            .sum();
        (sse / total_weight).sqrt()
    };
    let x0 = start.to_coords();
    let step: Vec<f64> = match form {
        SusceptibilityForm::Digg => vec![0.3, 0.2 * x0[1].abs().max(0.01), 0.5, 0.3, 0.3],
        SusceptibilityForm::Twitter => vec![0.3, 0.05, 0.3],
    };
    let mut nm = NelderMead::new(step);
    nm.max_iterations = opts.max_iterations;
    nm.f_tol = 1e-15;
    nm.max_restarts = 20;
    let best = nm.minimize(rms, &x0)?;
    Ok(AnalyticSusceptibility::from_coords(form, &best.point))
}

pub(crate) fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn responder(n_f: u32, exposures: Vec<i64>, response: i64) -> ExposureSeries {
        ExposureSeries {
            user: "u".into(),
            item: "i".into(),
            n_f,
            exposure_times: exposures,
            response_time: Some(response),
            censor_time: None,
            observed_until: 1_000_000,
        }
    }

    fn silent(n_f: u32, exposures: Vec<i64>) -> ExposureSeries {
        ExposureSeries {
            response_time: None,
            ..responder(n_f, exposures, 0)
        }
    }

    #[test]
    fn edges_are_dyadic_with_nondecreasing_widths() {
        assert_eq!(log_bin_edges(16), vec![1, 2, 4, 8, 16]);
        let e = log_bin_edges(DIGG_HORIZON);
        assert_eq!(e[0], 1);
        assert_eq!(*e.last().unwrap(), DIGG_HORIZON);
        let widths: Vec<i64> = e.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(widths.windows(2).all(|w| w[1] >= w[0]), "{widths:?}");
        // 86400 would leave a 20864 s tail after 65536; it is merged.
        assert_eq!(e[e.len() - 2], 32768);
    }

    #[test]
    fn degenerate_density_puts_all_mass_in_first_bin() {
        let series: Vec<_> = (0..7).map(|i| responder(1, vec![i * 10], i * 10 + 1)).collect();
        let trf = estimate_trf(&series, CohortLabel::T1, NfRange::new(1, 2), true, &log_bin_edges(64)).unwrap();
        assert_eq!(trf.density[0], 1.0);
        assert!((trf.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(trf.density_at(1), 1.0);
        assert_eq!(trf.density_at(0), 0.0);
        assert_eq!(trf.density_at(64), 0.0);
    }

    #[test]
    fn uniform_delays_give_flat_density() {
        // one response at every delay 1..=127: per-second density 1/127 in every bin
        let series: Vec<_> = (1..128).map(|d| responder(10, vec![0], d)).collect();
        let trf = estimate_trf(&series, CohortLabel::T10, NfRange::new(9, 11), false, &log_bin_edges(128)).unwrap();
        for dt in 1..128 {
            assert!((trf.density_at(dt) - 1.0 / 127.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_on_zero_to_hundred_within_binning_error() {
        // analytic density 1/100 on (0, 100]; every bin fully inside the range is exact
        let series: Vec<_> = (1..=100).map(|d| responder(10, vec![5], 5 + d)).collect();
        let trf = estimate_trf(&series, CohortLabel::T10, NfRange::new(9, 11), false, &log_bin_edges(128)).unwrap();
        for dt in 1..64 {
            assert!((trf.density_at(dt) - 0.01).abs() < 1e-12);
        }
        // last bin [64,128) only sees 37 of its 64 seconds
        assert!((trf.density_at(100) - 37.0 / 100.0 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn empty_cohort_names_range() {
        let series = vec![responder(50, vec![0], 3), silent(1, vec![0])];
        match estimate_trf(&series, CohortLabel::T1, NfRange::new(1, 2), true, &log_bin_edges(64)) {
            Err(Error::EmptyCohort { lo: 1, hi: 2 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_exposure_filter() {
        let series = vec![responder(1, vec![0], 3), responder(1, vec![0, 1], 40)];
        let edges = log_bin_edges(64);
        let single = estimate_trf(&series, CohortLabel::T1, NfRange::new(1, 2), true, &edges).unwrap();
        assert_eq!(single.density[1], 1.0); // dt = 3 in [2, 4)
        let all = estimate_trf(&series, CohortLabel::T1, NfRange::new(1, 2), false, &edges).unwrap();
        assert_eq!(all.density[1], 0.5);
        assert_eq!(all.density[5], 0.5); // dt = 40 in [32, 64)
    }

    fn synthetic_bundle() -> TrfBundle {
        let edges = log_bin_edges(16);
        let t1 = TimeResponseFunction::new(CohortLabel::T1, edges.clone(), vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let t10 = TimeResponseFunction::new(CohortLabel::T10, edges.clone(), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let t100 = TimeResponseFunction::new(CohortLabel::T100, edges, vec![0.25, 0.25, 0.25, 0.25]).unwrap();
        TrfBundle::new(t1, t10, t100).unwrap()
    }

    #[test]
    fn interpolation_hits_cohort_centers() {
        let b = synthetic_bundle();
        for site in [Site::Twitter, Site::Digg] {
            for dt in 1..16 {
                let v10 = interpolate_trf(&b.t1, &b.t10, &b.t100, 10, site, dt).unwrap();
                assert!((v10 / b.t10.density_at(dt) - 1.0).abs() < 1e-5);
                let v1 = interpolate_trf(&b.t1, &b.t10, &b.t100, 1, site, dt).unwrap();
                assert!((v1 / b.t1.density_at(dt) - 1.0).abs() < 1e-5);
                let v100 = interpolate_trf(&b.t1, &b.t10, &b.t100, 100, site, dt).unwrap();
                assert!((v100 / b.t100.density_at(dt) - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn interpolation_at_55_matches_hand_weights() {
        // n_f = 55: w1 = 1/2916, w10 = 1/2025, w100 = 1/2025 (Twitter) or 1/45 (Digg)
        let b = synthetic_bundle();
        let (t1, t10, t100) = (0.4, 0.1, 0.25); // bin [1,2) densities
        let tw = (t1 / 2916.0 + t10 / 2025.0 + t100 / 2025.0) / (1.0 / 2916.0 + 2.0 / 2025.0);
        let dg = (t1 / 2916.0 + t10 / 2025.0 + t100 / 45.0) / (1.0 / 2916.0 + 1.0 / 2025.0 + 1.0 / 45.0);
        let got_tw = interpolate_trf(&b.t1, &b.t10, &b.t100, 55, Site::Twitter, 1).unwrap();
        let got_dg = interpolate_trf(&b.t1, &b.t10, &b.t100, 55, Site::Digg, 1).unwrap();
        assert!((got_tw - tw).abs() < 1e-9 * tw, "{got_tw} vs {tw}");
        assert!((got_dg - dg).abs() < 1e-9 * dg, "{got_dg} vs {dg}");
        assert!((b.density_at(55, Site::Digg, 1) - got_dg).abs() < 1e-15, "{} vs {dg}", b.density_at(55, Site::Digg, 1));
    }

    #[test]
    fn mismatched_bins_rejected() {
        let b = synthetic_bundle();
        let other = TimeResponseFunction::new(CohortLabel::T100, log_bin_edges(8), vec![0.5, 0.3, 0.2]).unwrap();
        assert!(matches!(
            interpolate_trf(&b.t1, &b.t10, &other, 5, Site::Digg, 1),
            Err(Error::MismatchedBins)
        ));
        assert!(TrfBundle::new(b.t1.clone(), b.t10.clone(), other).is_err());
    }

    #[test]
    fn trf_json_round_trip() {
        let b = synthetic_bundle();
        let json = serde_json::to_string(&b.t1).unwrap();
        assert!(json.contains("\"cohort\":\"T1\""));
        assert!(json.contains("\"bin_edges\""));
        let back: TimeResponseFunction = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b.t1);
    }

    #[test]
    fn susceptibility_counts_single_exposure_only() {
        let mut series = Vec::new();
        for i in 0..10 {
            if i < 2 {
                series.push(responder(5, vec![0], 10));
            } else {
                series.push(silent(5, vec![0]));
            }
        }
        series.push(responder(5, vec![0, 3], 10));
        // a later exposure disqualifies the pair even after its response
        series.push(responder(5, vec![0, 50], 10));
        series.push(silent(9, vec![0, 1]));
        let curve = estimate_susceptibility(&series);
        assert_eq!(curve.empirical[&5], Counts { responses: 2, trials: 10 });
        assert!((curve.empirical_probability(5).unwrap() - 0.2).abs() < 1e-15);
        assert!(!curve.empirical.contains_key(&9));
        assert!(!curve.empirical.contains_key(&7));
    }

    #[test]
    fn digg_reference_at_ten() {
        // A / ((e^{-0.62} + 0.0017) * 13.7 * 27.8) evaluated by hand
        let denom = ((-0.62f64).exp() + 0.0017) * 13.7 * 27.8;
        let want = 7.6e-3 / denom;
        let got = AnalyticSusceptibility::reference(SusceptibilityForm::Digg).evaluate(10.0);
        assert!((got - want).abs() < 1e-18);
        assert!((got - 3.70e-5).abs() < 0.005e-5, "{got}");
    }

    fn exact_curve(form: AnalyticSusceptibility, ns: impl Iterator<Item = u32>) -> SusceptibilityCurve {
        let trials = 1_000_000_000_000u64;
        let empirical = ns
            .map(|n| {
                let p = form.evaluate(n as f64);
                (n, Counts { responses: (p * trials as f64).round() as u64, trials })
            })
            .collect();
        SusceptibilityCurve { empirical, analytic: None }
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn digg_form_recovered_from_exact_data() {
        let truth = AnalyticSusceptibility::reference(SusceptibilityForm::Digg);
        let curve = exact_curve(truth, 1..=250);
        let start = AnalyticSusceptibility::Digg(DiggParams { a: 0.02, b: -0.05, c: 3e-3, d: 2.0, e: 25.0 });
        let opts = SusceptibilityFitOptions { start: Some(start), ..Default::default() };
        let fit = fit_susceptibility_analytic(&curve, SusceptibilityForm::Digg, &opts).unwrap();
        let (AnalyticSusceptibility::Digg(f), AnalyticSusceptibility::Digg(t)) = (fit, truth) else { unreachable!() };
        for (got, want) in [(f.a, t.a), (f.b, t.b), (f.c, t.c), (f.d, t.d), (f.e, t.e)] {
            assert!(rel(got, want) < 0.01, "{fit:?}");
        }
    }

    #[test]
    fn twitter_form_recovered_from_exact_data() {
        let truth = AnalyticSusceptibility::reference(SusceptibilityForm::Twitter);
        let curve = exact_curve(truth, 1..=300);
        let fit = fit_susceptibility_analytic(&curve, SusceptibilityForm::Twitter, &Default::default()).unwrap();
        let (AnalyticSusceptibility::Twitter(f), AnalyticSusceptibility::Twitter(t)) = (fit, truth) else { unreachable!() };
        assert!(rel(f.a, t.a) < 0.01 && rel(f.p, t.p) < 0.01 && rel(f.b, t.b) < 0.01, "{fit:?}");
    }

    #[test]
    fn net_trf_removes_floor_responses() {
        let edges = log_bin_edges(8);
        let mut series = vec![silent(1, vec![0])];
        series.extend((0..3).map(|_| responder(1, vec![0], 5)));
        series.push(responder(1, vec![0], 1));
        // floor seconds per bin: [5, 8, 10]
        let trf = estimate_trf_net(&series, CohortLabel::T1, NfRange::new(1, 2), false, &edges, &|_| 0.1).unwrap();
        for (got, want) in trf.density.iter().zip([0.2, 0.0, 0.8]) {
            assert!((got - want).abs() < 1e-12, "{:?}", trf.density);
        }
    }

    #[test]
    fn net_trf_floor_follows_visible_exposures() {
        let edges = log_bin_edges(8);
        // one visible exposure for delays 1..=3, two for 4..=7
        let series = vec![silent(1, vec![0, 3]), responder(1, vec![0], 2), responder(1, vec![0], 6)];
        let floor = |n: usize| 0.01 * n as f64;
        let trf = estimate_trf_net(&series, CohortLabel::T1, NfRange::new(1, 2), false, &edges, &floor).unwrap();
        let bin1 = 1.0 - 0.01 * (2.0 + 2.0 + 1.0);
        let bin2 = 1.0 - 0.01 * (8.0 + 3.0);
        assert!((trf.density[1] - bin1 / (bin1 + bin2)).abs() < 1e-12);
        assert_eq!(trf.density[0], 0.0);
        assert!(matches!(
            estimate_trf_net(&series[..1], CohortLabel::T1, NfRange::new(1, 2), false, &edges, &floor),
            Err(Error::EmptyCohort { .. })
        ));
    }

    #[test]
    fn single_exposure_seconds_respect_window_and_response() {
        let series = vec![
            silent(3, vec![10]),
            responder(3, vec![10], 40),
            silent(3, vec![10, 20]),
        ];
        let all = single_exposure_seconds(&series, None);
        assert_eq!(all[&3], ((1_000_000 - 10) + 30) as f64 / 2.0);
        assert_eq!(single_exposure_seconds(&series, Some(100))[&3], (99.0 + 30.0) / 2.0);
    }

    #[test]
    fn floor_hazard_is_removed_before_fitting() {
        let truth = AnalyticSusceptibility::reference(SusceptibilityForm::Twitter);
        let trials = 1_000_000_000_000u64;
        let floor: BTreeMap<u32, f64> = (1..=300).map(|n| (n, 0.01)).collect();
        let empirical = (1..=300)
            .map(|n| {
                let f = -(-(truth.evaluate(n as f64) + 0.01)).exp_m1();
                (n, Counts { responses: (f * trials as f64).round() as u64, trials })
            })
            .collect();
        let curve = SusceptibilityCurve { empirical, analytic: None };
        let opts = SusceptibilityFitOptions {
            cumulative_hazard: true,
            floor_hazard: Some(floor),
            ..Default::default()
        };
        let fit = fit_susceptibility_analytic(&curve, SusceptibilityForm::Twitter, &opts).unwrap();
        let (AnalyticSusceptibility::Twitter(f), AnalyticSusceptibility::Twitter(t)) = (fit, truth) else { unreachable!() };
        assert!(rel(f.a, t.a) < 0.01 && rel(f.p, t.p) < 0.01 && rel(f.b, t.b) < 0.01, "{fit:?}");
    }

    #[test]
    fn window_drops_late_responses() {
        let series = vec![
            responder(4, vec![100], 105),
            responder(4, vec![100], 600),
            silent(4, vec![100]),
        ];
        let within = estimate_susceptibility_within(&series, Some(100));
        assert_eq!(within.empirical[&4], Counts { responses: 1, trials: 3 });
        assert_eq!(estimate_susceptibility(&series).empirical[&4].responses, 2);
    }

    #[test]
    fn cumulative_hazard_undoes_saturation() {
        let truth = AnalyticSusceptibility::Twitter(TwitterParams { a: 1.5, p: 0.16, b: 0.55 });
        let trials = 1_000_000_000_000u64;
        let mut empirical: BTreeMap<u32, Counts> = (1..=300)
            .map(|n| {
                let f = -(-truth.evaluate(n as f64)).exp_m1();
                (n, Counts { responses: (f * trials as f64).round() as u64, trials })
            })
            .collect();
        // saturated bins carry no hazard and are skipped
        empirical.insert(301, Counts { responses: 5, trials: 5 });
        let curve = SusceptibilityCurve { empirical, analytic: None };
        let opts = SusceptibilityFitOptions { cumulative_hazard: true, ..Default::default() };
        let fit = fit_susceptibility_analytic(&curve, SusceptibilityForm::Twitter, &opts).unwrap();
        let (AnalyticSusceptibility::Twitter(f), AnalyticSusceptibility::Twitter(t)) = (fit, truth) else { unreachable!() };
        assert!(rel(f.a, t.a) < 0.01 && rel(f.p, t.p) < 0.01 && rel(f.b, t.b) < 0.01, "{fit:?}");
    }

    #[test]
    fn trial_weights_suppress_sparse_outliers() {
        let truth = AnalyticSusceptibility::reference(SusceptibilityForm::Twitter);
        let mut curve = exact_curve(truth, 1..=300);
        for n in [3, 40, 200] {
            curve.empirical.insert(n, Counts { responses: 9, trials: 10 });
        }
        let opts = SusceptibilityFitOptions { weight_by_trials: true, ..Default::default() };
        let fit = fit_susceptibility_analytic(&curve, SusceptibilityForm::Twitter, &opts).unwrap();
        let (AnalyticSusceptibility::Twitter(f), AnalyticSusceptibility::Twitter(t)) = (fit, truth) else { unreachable!() };
        assert!(rel(f.a, t.a) < 0.01 && rel(f.p, t.p) < 0.01 && rel(f.b, t.b) < 0.01, "{fit:?}");
    }

    #[test]
    fn underdetermined_fit_is_error() {
        let truth = AnalyticSusceptibility::reference(SusceptibilityForm::Digg);
        let curve = exact_curve(truth, [3, 8].into_iter());
        assert!(matches!(
            fit_susceptibility_analytic(&curve, SusceptibilityForm::Digg, &Default::default()),
            Err(Error::Underdetermined { params: 5, bins: 2 })
        ));
    }

    #[test]
    fn fit_invariant_under_trial_scaling() {
        let truth = AnalyticSusceptibility::reference(SusceptibilityForm::Twitter);
        let mut curve = SusceptibilityCurve::default();
        for n in 1..40u32 {
            let p = truth.evaluate(n as f64) * (1.0 + 0.05 * ((n * 7 % 5) as f64 - 2.0));
            curve.empirical.insert(n, Counts { responses: (p * 1000.0).round() as u64, trials: 1000 });
        }
        let mut scaled = curve.clone();
        for c in scaled.empirical.values_mut() {
            c.responses *= 7;
            c.trials *= 7;
        }
        let a = fit_susceptibility_analytic(&curve, SusceptibilityForm::Twitter, &Default::default()).unwrap();
        let b = fit_susceptibility_analytic(&scaled, SusceptibilityForm::Twitter, &Default::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn susceptibility_json_shape() {
        let curve = SusceptibilityCurve::analytic(AnalyticSusceptibility::reference(SusceptibilityForm::Twitter));
        let v: serde_json::Value = serde_json::to_value(&curve).unwrap();
        assert_eq!(v["form"], "twitter");
        assert_eq!(v["params"]["B"], 0.55);
        let back: SusceptibilityCurve = serde_json::from_value(v).unwrap();
        assert_eq!(back, curve);
    }

    #[test]
    fn nf_range_parse() {
        assert_eq!("9-11".parse::<NfRange>().unwrap(), NfRange::new(9, 11));
        assert_eq!("7".parse::<NfRange>().unwrap(), NfRange::new(7, 7));
        assert!("11-9".parse::<NfRange>().is_err());
        assert!("x".parse::<NfRange>().is_err());
    }
}
