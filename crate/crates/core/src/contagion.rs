//! Response-probability models.
//!
//! A message that arrived at `t_i` is found at second `t` with probability
//! `τ_i = P(n_f)·T(t − t_i, n_f)`. The number of messages actually seen is a
//! sum of independent Bernoulli variables, whose distribution `V_n` is read off
//! the generating function
//!
//! ```text
//! G(y) = Π_i (1 + r_i y),   r_i = τ_i / (1 − τ_i),   V_n = C · [y^n] G(y),   C = Π_i (1 − τ_i)
//! ```
//!
//! The general model weighs `V_n` by a per-seen-count enhancement `f(n)`. The
//! two interface models used for fitting and forecasting are
//!
//! ```text
//! Twitter:  P = P0 · F(n_e) · (1 − Π_i (1 − τ_i)) + v_min
//! Digg:     P = F(n_e) · (P0 · τ_first + v_min)
//! ```
//!
//! Note the floor `v_min` sits outside the enhancement for Twitter and inside it
//! for Digg. Messages become visible the second after they arrive: at second
//! `t` only exposures with `t_i < t` count, both for `τ` and for `n_e`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::ExposureSeries;
use crate::visibility::{
    self, read_json, write_json, Counts, NfRange, SusceptibilityCurve, TrfBundle,
};
use crate::Site;

/// Exposure count above which [`v_n_exact`] refuses to enumerate subsets.
pub const EXACT_LIMIT: usize = 20;

/// Per-exposure discovery probabilities, each in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TauVector(Vec<f64>);

impl TauVector {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = taus.iter().find(|t| !(0.0..1.0).contains(*t)) {
            return Err(Error::ProbabilityOutOfRange { value: bad });
        }
        Ok(TauVector(taus))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `Σ ln(1 − τ_i)`, the log-probability of finding none of the messages.
fn log_miss_all(taus: &[f64]) -> f64 {
    taus.iter().map(|t| (-t).ln_1p()).sum()
}

/// `1 − Π(1 − τ_i)` without cancellation for small `τ`.
fn prob_any(taus: &[f64]) -> f64 {
    -log_miss_all(taus).exp_m1()
}

/// Probability of finding at least one of the messages.
pub fn visibility_all(taus: &TauVector) -> f64 {
    prob_any(&taus.0)
}

/// Probability of finding the first message; only the first exposure's delay matters.
pub fn visibility_first(tau_first: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&tau_first) {
        return Err(Error::ProbabilityOutOfRange { value: tau_first });
    }
    Ok(tau_first)
}

/// `V_n` by explicit enumeration of all `n`-subsets.
pub fn v_n_exact(taus: &TauVector, n: usize) -> Result<f64> {
    let t = &taus.0;
    if t.len() > EXACT_LIMIT {
        return Err(Error::TooManyExposures {
            n_e: t.len(),
            limit: EXACT_LIMIT,
        });
    }
    if n > t.len() {
        return Err(Error::InvalidInput(format!(
            "cannot see {n} of {} messages",
            t.len()
        )));
    }
    let mut total = 0.0;
    for mask in 0u32..(1u32 << t.len()) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let term: f64 = t
            .iter()
            .enumerate()
            .map(|(i, &p)| if mask >> i & 1 == 1 { p } else { 1.0 - p })
            .product();
        total += term;
    }
    Ok(total)
}

/// `V_0 … V_{n_e}` from the generating function: elementary symmetric
/// polynomials of the odds `τ/(1 − τ)`, scaled by `Π(1 − τ)`.
pub fn v_n_generating(taus: &TauVector) -> Vec<f64> {
    let mut coeffs = vec![1.0];
    for &t in &taus.0 {
        let r = t / (1.0 - t);
        coeffs.push(0.0);
        for k in (1..coeffs.len()).rev() {
            coeffs[k] += r * coeffs[k - 1];
        }
    }
    let c = log_miss_all(&taus.0).exp();
    coeffs.iter_mut().for_each(|v| *v *= c);
    coeffs
}

/// `Σ_{n≥1} f(n) V_n`.
///
/// Evaluated as `f(1)·(1 − V_0) + Σ_{n≥2} (f(n) − f(1)) V_n`, which reduces to
/// [`visibility_all`] exactly when `f` is constant.
pub fn p_general(taus: &TauVector, f: impl Fn(usize) -> f64) -> Result<f64> {
    let n_e = taus.len();
    let fs: Vec<f64> = (1..=n_e).map(&f).collect();
    if let Some((i, &v)) = fs.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeEnhancement { n: i + 1, value: v });
    }
    if n_e == 0 {
        return Ok(0.0);
    }
    let any = prob_any(&taus.0);
    let v = v_n_generating(taus);
    let f1 = fs[0];
    let excess: f64 = (2..=n_e).map(|n| (fs[n - 1] - f1) * v[n]).sum();
    Ok(f1 * any + excess)
}

/// `F*(n_e, t)`: the exact multi-exposure probability divided by the
/// probability of finding any message.
pub fn f_star_ratio(taus: &TauVector, f: impl Fn(usize) -> f64) -> Result<f64> {
    if taus.0.iter().all(|&t| t == 0.0) {
        return Err(Error::ZeroVisibility);
    }
    Ok(p_general(taus, f)? / visibility_all(taus))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CohortKey {
    All,
    Range(NfRange),
}

impl From<CohortKey> for String {
    fn from(k: CohortKey) -> String {
        match k {
            CohortKey::All => "all".to_owned(),
            CohortKey::Range(r) => r.to_string(),
        }
    }
}

impl TryFrom<String> for CohortKey {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        if s == "all" {
            Ok(CohortKey::All)
        } else {
            Ok(CohortKey::Range(s.parse()?))
        }
    }
}

impl Serialize for CohortKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&String::from(*self))
    }
}

impl<'de> Deserialize<'de> for CohortKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        CohortKey::try_from(s).map_err(serde::de::Error::custom)
    }
}

/// Social enhancement factor per exposure count, `F(1) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnhancementWire")]
pub struct EnhancementTable {
    pub cohort: CohortKey,
    #[serde(rename = "F")]
    values: BTreeMap<u32, f64>,
}

#[derive(Deserialize)]
struct EnhancementWire {
    cohort: CohortKey,
    #[serde(rename = "F")]
    values: BTreeMap<u32, f64>,
}

impl TryFrom<EnhancementWire> for EnhancementTable {
    type Error = Error;

    fn try_from(w: EnhancementWire) -> Result<Self> {
        EnhancementTable::new(w.cohort, w.values)
    }
}

impl EnhancementTable {
    pub fn new(cohort: CohortKey, values: BTreeMap<u32, f64>) -> Result<Self> {
        if values.get(&1) != Some(&1.0) {
            return Err(Error::InvalidInput("enhancement table must have F(1) = 1".into()));
        }
        if let Some((&n, &v)) = values.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NegativeEnhancement {
                n: n as usize,
                value: v,
            });
        }
        Ok(EnhancementTable { cohort, values })
    }

    /// Table `F(n) = factors[n − 1]`.
    pub fn from_factors(factors: &[f64]) -> Result<Self> {
        let values = factors
            .iter()
            .enumerate()
            .map(|(i, &f)| (i as u32 + 1, f))
            .collect();
        Self::new(CohortKey::All, values)
    }

    /// `F ≡ 1` for `n_e = 1..=max`.
    pub fn ones(max: u32) -> Self {
        EnhancementTable {
            cohort: CohortKey::All,
            values: (1..=max.max(1)).map(|n| (n, 1.0)).collect(),
        }
    }

    pub fn factor(&self, n_e: u32) -> Option<f64> {
        self.values.get(&n_e).copied()
    }

    /// Factor for `n_e`, holding the last tabulated value beyond the table.
    pub fn factor_or_last(&self, n_e: u32) -> f64 {
        self.values
            .range(..=n_e)
            .next_back()
            .map_or(1.0, |(_, &v)| v)
    }

    pub fn max_exposures(&self) -> u32 {
        self.values.keys().next_back().copied().unwrap_or(1)
    }

    pub fn values(&self) -> &BTreeMap<u32, f64> {
        &self.values
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }
}

/// Complete parameter set of an interface model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub site: Site,
    pub p0: f64,
    /// Natural log of the visibility floor.
    pub log_v_min: f64,
    pub enhancement: EnhancementTable,
    pub susceptibility: SusceptibilityCurve,
    pub trf: TrfBundle,
}

impl ModelParams {
    pub fn v_min(&self) -> f64 {
        self.log_v_min.exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0.is_finite()) {
            return Err(Error::InvalidInput(format!("p0 must be positive, got {}", self.p0)));
        }
        if !self.log_v_min.is_finite() {
            return Err(Error::InvalidInput("log_v_min must be finite".into()));
        }
        Ok(())
    }

    pub fn susceptibility_at(&self, n_f: u32) -> Result<f64> {
        self.susceptibility
            .probability(n_f)
            .ok_or_else(|| Error::InvalidInput(format!("no susceptibility value for n_f = {n_f}")))
    }

    /// `τ = P(n_f) · T(dt, n_f)`.
    pub fn tau(&self, n_f: u32, dt: i64) -> Result<f64> {
        let tau = self.susceptibility_at(n_f)? * self.trf.density_at(n_f, self.site, dt);
        TauVector::new(vec![tau])?;
        Ok(tau)
    }

    pub fn with_enhancement(&self, enhancement: EnhancementTable) -> Self {
        ModelParams {
            enhancement,
            ..self.clone()
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p: ModelParams = read_json(path)?;
        p.validate()?;
        Ok(p)
    }
}

fn enhancement(params: &ModelParams, n_e: u32) -> Result<f64> {
    params
        .enhancement
        .factor(n_e)
        .ok_or(Error::MissingEnhancement(n_e as usize))
}

/// Per-second Twitter response probability at second `t`.
pub fn p_twitter(params: &ModelParams, n_f: u32, exposure_times: &[i64], t: i64) -> Result<f64> {
    let visible: Vec<i64> = exposure_times.iter().copied().filter(|&x| x < t).collect();
    let v_min = params.v_min();
    if visible.is_empty() {
        return Ok(v_min.clamp(0.0, 1.0));
    }
    let taus = visible
        .iter()
        .map(|&ti| params.tau(n_f, t - ti))
        .collect::<Result<Vec<_>>>()?;
    let f = enhancement(params, visible.len() as u32)?;
    Ok((params.p0 * f * prob_any(&taus) + v_min).clamp(0.0, 1.0))
}

/// Per-second Digg response probability at second `t`, `n_e` exposures after a
/// first exposure at `first_exposure`.
pub fn p_digg(params: &ModelParams, n_f: u32, first_exposure: i64, n_e: u32, t: i64) -> Result<f64> {
    if t < first_exposure {
        return Err(Error::InvalidInput(format!(
            "evaluation time {t} precedes first exposure {first_exposure}"
        )));
    }
    if n_e == 0 {
        return Err(Error::InvalidInput("Digg model needs at least one exposure".into()));
    }
    let f = enhancement(params, n_e)?;
    let tau = params.tau(n_f, t - first_exposure)?;
    Ok((f * (params.p0 * tau + params.v_min())).clamp(0.0, 1.0))
}

/// How the evaluator treats exposure counts missing from the enhancement table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingFactor {
    Error,
    /// Hold the last tabulated factor; used by the simulator for uncapped counts.
    HoldLast,
}

/// Cached `τ = P(n_f) · T(bin, n_f)` for friend counts `0..=max_nf`.
///
/// Friend counts without a susceptibility value get `τ = 0`.
#[derive(Debug, Clone)]
pub struct VisibilityModel {
    site: Site,
    edges: Vec<i64>,
    /// `tau_by_nf[n_f][bin]`.
    tau_by_nf: Vec<Vec<f64>>,
}

impl VisibilityModel {
    pub fn new(
        site: Site,
        susceptibility: &SusceptibilityCurve,
        trf: &TrfBundle,
        max_nf: u32,
    ) -> Result<Self> {
        let mut tau_by_nf = Vec::with_capacity(max_nf as usize + 1);
        for n_f in 0..=max_nf {
            let p = susceptibility.probability(n_f).unwrap_or(0.0);
            let row: Vec<f64> = trf.per_second(n_f, site).into_iter().map(|d| p * d).collect();
            if let Some(&bad) = row.iter().find(|t| !(0.0..1.0).contains(*t)) {
                return Err(Error::ProbabilityOutOfRange { value: bad });
            }
            tau_by_nf.push(row);
        }
        Ok(VisibilityModel {
            site,
            edges: trf.bin_edges().to_vec(),
            tau_by_nf,
        })
    }

    pub fn from_params(params: &ModelParams, max_nf: u32) -> Result<Self> {
        Self::new(params.site, &params.susceptibility, &params.trf, max_nf)
    }

    pub fn site(&self) -> Site {
        self.site
    }

    pub fn edges(&self) -> &[i64] {
        &self.edges
    }

    pub fn max_nf(&self) -> u32 {
        self.tau_by_nf.len() as u32 - 1
    }

    /// `τ` for a message that arrived `dt` seconds ago.
    ///
    /// # Panics
    /// If `n_f` exceeds the cached range.
    pub fn tau(&self, n_f: u32, dt: i64) -> f64 {
        let row = &self.tau_by_nf[n_f as usize];
        visibility::bin_of(&self.edges, dt).map_or(0.0, |k| row[k])
    }

    /// `τ_first` for Digg, `1 − Π(1 − τ_i)` for Twitter.
    pub fn visibility(&self, n_f: u32, visible: &[i64], t: i64) -> f64 {
        match self.site {
            Site::Digg => visible.first().map_or(0.0, |&t0| self.tau(n_f, t - t0)),
            Site::Twitter => {
                let log_miss: f64 = visible.iter().map(|&ti| (-self.tau(n_f, t - ti)).ln_1p()).sum();
                -log_miss.exp_m1()
            }
        }
    }

    /// Splits the seconds `from..=to` into runs over which the visibility is
    /// constant for a fixed set of visible exposures. Returns the start of each
    /// run; runs end one second before the next start (the last ends at `to`).
    pub fn constant_runs(&self, visible: &[i64], from: i64, to: i64) -> Vec<i64> {
        let mut starts = vec![from];
        let anchors: &[i64] = match self.site {
            Site::Digg => &visible[..visible.len().min(1)],
            Site::Twitter => visible,
        };
        for &ti in anchors {
            for &e in &self.edges {
                let b = ti + e;
                if b > from && b <= to {
                    starts.push(b);
                }
            }
        }
        starts.sort_unstable();
        starts.dedup();
        starts
    }

    /// Calls `f(start, end, n_visible)` for maximal runs of seconds in
    /// `from..=to` over which both the visible exposures (a prefix of the
    /// sorted `exposures`) and their visibility stay constant.
    pub fn for_each_run(
        &self,
        exposures: &[i64],
        from: i64,
        to: i64,
        mut f: impl FnMut(i64, i64, usize),
    ) {
        let mut s = from;
        while s <= to {
            let k = exposures.partition_point(|&x| x < s);
            let seg_end = exposures.get(k).map_or(to, |&next| to.min(next));
            let visible = &exposures[..k];
            let starts = self.constant_runs(visible, s, seg_end);
            for (i, &a) in starts.iter().enumerate() {
                let b = starts.get(i + 1).map_or(seg_end, |&n| n - 1);
                f(a, b, k);
            }
            s = seg_end + 1;
        }
    }
}

/// Precomputed per-second hazard evaluator for one parameter set.
#[derive(Debug, Clone)]
pub struct HazardModel {
    vis: VisibilityModel,
    p0: f64,
    v_min: f64,
    enhancement: EnhancementTable,
    missing: MissingFactor,
}

impl HazardModel {
    /// Builds the cache for friend counts `0..=max_nf`.
    pub fn new(params: &ModelParams, max_nf: u32, missing: MissingFactor) -> Result<Self> {
        params.validate()?;
        Ok(HazardModel {
            vis: VisibilityModel::from_params(params, max_nf)?,
            p0: params.p0,
            v_min: params.v_min(),
            enhancement: params.enhancement.clone(),
            missing,
        })
    }

    pub fn visibility_model(&self) -> &VisibilityModel {
        &self.vis
    }

    pub fn site(&self) -> Site {
        self.vis.site
    }

    pub fn max_nf(&self) -> u32 {
        self.vis.max_nf()
    }

    pub fn tau(&self, n_f: u32, dt: i64) -> f64 {
        self.vis.tau(n_f, dt)
    }

    pub fn visibility(&self, n_f: u32, visible: &[i64], t: i64) -> f64 {
        self.vis.visibility(n_f, visible, t)
    }

    pub fn constant_runs(&self, visible: &[i64], from: i64, to: i64) -> Vec<i64> {
        self.vis.constant_runs(visible, from, to)
    }

    fn factor(&self, n_e: u32) -> Result<f64> {
        match (self.enhancement.factor(n_e), self.missing) {
            (Some(f), _) => Ok(f),
            (None, MissingFactor::HoldLast) => Ok(self.enhancement.factor_or_last(n_e)),
            (None, MissingFactor::Error) => Err(Error::MissingEnhancement(n_e as usize)),
        }
    }

    /// Per-second response probability at `t` given the exposures visible then.
    pub fn hazard(&self, n_f: u32, visible: &[i64], t: i64) -> Result<f64> {
        if visible.is_empty() {
            return Ok(match self.vis.site {
                Site::Twitter => self.v_min.clamp(0.0, 1.0),
                Site::Digg => 0.0,
            });
        }
        let f = self.factor(visible.len() as u32)?;
        let vis = self.vis.visibility(n_f, visible, t);
        let p = match self.vis.site {
            Site::Twitter => self.p0 * f * vis + self.v_min,
            Site::Digg => f * (self.p0 * vis + self.v_min),
        };
        Ok(p.clamp(0.0, 1.0))
    }
}

/// Fraction of at-risk pairs that responded while at each exposure count.
pub fn exposure_response_counts(series: &[ExposureSeries]) -> BTreeMap<usize, Counts> {
    let mut out: BTreeMap<usize, Counts> = BTreeMap::new();
    for s in series {
        let reached = s.at_risk_exposures().len();
        for n in 1..=reached {
            out.entry(n).or_default().trials += 1;
        }
        if let Some(n) = s.exposures_at_response() {
            out.entry(n).or_default().responses += 1;
        }
    }
    out
}

pub fn exposure_response_curve(series: &[ExposureSeries]) -> BTreeMap<usize, f64> {
    exposure_response_counts(series)
        .into_iter()
        .map(|(n, c)| (n, c.probability()))
        .collect()
}
