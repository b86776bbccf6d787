//! Fitting the interface models to exposure series.
//!
//! Every at-risk second is a Bernoulli trial. Trials are grouped by the number
//! of visible exposures `n_e` and by a log bin of the visibility `ν` (`τ_first`
//! for Digg, the probability of finding any message for Twitter). Single-exposure
//! trials fix the scale `P0` and floor `v_min`; the remaining groups give the
//! enhancement `F(n_e)` by binomial maximum likelihood against the
//! single-exposure frequency `P(ν)` of the same bin.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::contagion::{CohortKey, EnhancementTable, ModelParams, VisibilityModel};
use crate::error::{Error, Result};
use crate::events::ExposureSeries;
use crate::optim::NelderMead;
use crate::visibility::{
    estimate_susceptibility_within, fit_susceptibility_analytic, log_bin_edges, single_exposure_seconds,
    AnalyticSusceptibility,
    NfRange, SusceptibilityCurve, SusceptibilityFitOptions, SusceptibilityForm, TrfBundle,
    DIGG_HORIZON, TWITTER_HORIZON,
};
use crate::Site;

/// Calibration points with fewer trials are left out of fits.
pub const MIN_TRIALS: u64 = 30;
/// Fewest responses for a bin to enter the scale fit.
pub const MIN_RESPONSES: u64 = 30;

/// Visibility bins per decade.
pub const BINS_PER_DECADE: f64 = 10.0;

/// Log bin of a visibility value; `Zero` holds seconds with nothing findable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NuLabel {
    Zero,
    /// Bin `k` covers `[10^{k/10}, 10^{(k+1)/10})`.
    Log(i32),
}

impl NuLabel {
    pub fn of(nu: f64) -> Self {
        if nu <= 0.0 {
            NuLabel::Zero
        } else {
            NuLabel::Log((BINS_PER_DECADE * nu.log10()).floor() as i32)
        }
    }

    /// `(lo, hi)` bounds of the bin.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            NuLabel::Zero => (0.0, 0.0),
            NuLabel::Log(k) => (
                10f64.powf(k as f64 / BINS_PER_DECADE),
                10f64.powf((k + 1) as f64 / BINS_PER_DECADE),
            ),
        }
    }
}

impl fmt::Display for NuLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NuLabel::Zero => f.write_str("zero"),
            NuLabel::Log(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityBin {
    pub nu: NuLabel,
    pub trials: u64,
    pub responses: u64,
    /// Sum of `ν` over the trials.
    pub visibility_sum: f64,
}

impl VisibilityBin {
    pub fn new(nu: NuLabel, trials: u64, responses: u64) -> Result<Self> {
        if responses > trials {
            return Err(Error::InvalidInput(format!(
                "bin {nu}: {responses} responses exceed {trials} trials"
            )));
        }
        let (lo, hi) = nu.bounds();
        Ok(VisibilityBin {
            nu,
            trials,
            responses,
            visibility_sum: trials as f64 * (lo * hi).sqrt(),
        })
    }

    pub fn frequency(&self) -> f64 {
        self.responses as f64 / self.trials as f64
    }

    pub fn mean_visibility(&self) -> f64 {
        self.visibility_sum / self.trials as f64
    }
}

/// At-risk seconds grouped by exposure count, then by visibility bin.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExposureBins {
    pub by_ne: BTreeMap<u32, BTreeMap<NuLabel, VisibilityBin>>,
}

impl ExposureBins {
    pub fn from_bins(bins: impl IntoIterator<Item = (u32, VisibilityBin)>) -> Result<Self> {
        let mut out = ExposureBins::default();
        for (n_e, b) in bins {
            if out.by_ne.entry(n_e).or_default().insert(b.nu, b).is_some() {
                return Err(Error::InvalidInput(format!("duplicate bin {} at n_e = {n_e}", b.nu)));
            }
        }
        Ok(out)
    }

    fn add(&mut self, n_e: u32, nu: f64, trials: u64, responded: bool) {
        let label = NuLabel::of(nu);
        let bin = self
            .by_ne
            .entry(n_e)
            .or_default()
            .entry(label)
            .or_insert(VisibilityBin {
                nu: label,
                trials: 0,
                responses: 0,
                visibility_sum: 0.0,
            });
        bin.trials += trials;
        bin.responses += responded as u64;
        bin.visibility_sum += nu * trials as f64;
    }

    pub fn total_trials(&self) -> u64 {
        self.by_ne.values().flat_map(|m| m.values()).map(|b| b.trials).sum()
    }

    pub fn total_responses(&self) -> u64 {
        self.by_ne.values().flat_map(|m| m.values()).map(|b| b.responses).sum()
    }

    pub fn single_exposure(&self) -> Option<&BTreeMap<NuLabel, VisibilityBin>> {
        self.by_ne.get(&1)
    }

    /// CSV with columns `n_e,nu_bin,nu_mean,trials,responses`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::from("n_e,nu_bin,nu_mean,trials,responses\n");
        for (n_e, bins) in &self.by_ne {
            for b in bins.values() {
                text.push_str(&format!(
                    "{n_e},{},{:e},{},{}\n",
                    b.nu,
                    b.mean_visibility(),
                    b.trials,
                    b.responses
                ));
            }
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Bins every at-risk second of every series.
///
/// A series is at risk from the second after its first exposure through
/// [`ExposureSeries::at_risk_end`]; the response second is a trial with a
/// response.
///
/// # Panics
/// If a series has more friends than `vis` caches.
pub fn bin_at_risk_seconds(series: &[ExposureSeries], vis: &VisibilityModel) -> ExposureBins {
    let mut bins = ExposureBins::default();
    for s in series {
        let from = s.first_exposure() + 1;
        let to = s.at_risk_end();
        vis.for_each_run(&s.exposure_times, from, to, |a, b, k| {
            let visible = &s.exposure_times[..k];
            let nu = vis.visibility(s.n_f, visible, a);
            let responded = s.response_time.is_some_and(|r| a <= r && r <= b);
            bins.add(k as u32, nu, (b - a + 1) as u64, responded);
        });
    }
    bins
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub predicted: f64,
    pub observed: f64,
    pub trials: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub points: Vec<CalibrationPoint>,
}

impl CalibrationCurve {
    pub fn new(points: Vec<CalibrationPoint>) -> Result<Self> {
        for p in &points {
            if !(0.0..=1.0).contains(&p.predicted) || !(0.0..=1.0).contains(&p.observed) {
                return Err(Error::ProbabilityOutOfRange {
                    value: if (0.0..=1.0).contains(&p.predicted) { p.observed } else { p.predicted },
                });
            }
            if p.trials == 0 {
                return Err(Error::InvalidInput("calibration point with no trials".into()));
            }
        }
        Ok(CalibrationCurve { points })
    }

    /// CSV with columns `predicted,observed,trials`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::from("predicted,observed,trials\n");
        for p in &self.points {
            text.push_str(&format!("{:e},{:e},{}\n", p.predicted, p.observed, p.trials));
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Trial-weighted mean of `|p0·O + v_min − p| / p`.
pub fn wmap_error(curve: &CalibrationCurve, p0: f64, v_min: f64) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(Error::InvalidInput("empty calibration curve".into()));
    }
    if let Some(p) = curve.points.iter().find(|p| p.predicted <= 0.0) {
        return Err(Error::ProbabilityOutOfRange { value: p.predicted });
    }
    Ok(weighted_error(&normalized_weights(curve), curve, p0, v_min))
}

/// Weights `trials / Σ trials`; unchanged bit for bit when all counts scale.
fn normalized_weights(curve: &CalibrationCurve) -> Vec<f64> {
    let total: f64 = curve.points.iter().map(|p| p.trials as f64).sum();
    curve.points.iter().map(|p| p.trials as f64 / total).collect()
}

fn weighted_error(weights: &[f64], curve: &CalibrationCurve, p0: f64, v_min: f64) -> f64 {
    curve
        .points
        .iter()
        .zip(weights)
        .map(|(p, w)| w * (p0 * p.observed + v_min - p.predicted).abs() / p.predicted)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleFit {
    pub p0: f64,
    pub v_min: f64,
    pub wmap: f64,
}

/// Points per axis of the coarse search.
const GRID: usize = 41;

/// Finds `(p0, v_min)` minimising [`wmap_error`]: a log grid over both,
/// refined by simplex descent in log coordinates.
pub fn fit_scale_and_floor(curve: &CalibrationCurve) -> Result<ScaleFit> {
    wmap_error(curve, 1.0, 0.0)?;
    let mut distinct: Vec<(u64, u64)> = curve
        .points
        .iter()
        .map(|p| (p.predicted.to_bits(), p.observed.to_bits()))
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Underdetermined { params: 2, bins: distinct.len() });
    }
    let ratios: Vec<f64> = curve
        .points
        .iter()
        .filter(|p| p.observed > 0.0)
        .map(|p| p.predicted / p.observed)
        .collect();
    if ratios.is_empty() {
        return Err(Error::DegenerateCurve("every observed value is zero".into()));
    }
    let (r_lo, r_hi) = min_max(&ratios);
    let (p_lo, p_hi) = min_max(&curve.points.iter().map(|p| p.predicted).collect::<Vec<_>>());
    let ln_p0 = (r_lo.ln() - 2.0, r_hi.ln() + 2.0);
    let ln_v = (p_lo.ln() - 8.0 * std::f64::consts::LN_10, p_hi.ln());

    let weights = normalized_weights(curve);
    let objective = |x: &[f64]| weighted_error(&weights, curve, x[0].exp(), x[1].exp());

    let axis = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (GRID - 1) as f64;
    let mut best = ([ln_p0.0, ln_v.0], f64::INFINITY);
    for i in 0..GRID {
        for j in 0..GRID {
            let x = [axis(ln_p0, i), axis(ln_v, j)];
            let v = objective(&x);
            if v < best.1 {
                best = (x, v);
            }
        }
    }
    debug!("scale grid minimum {:?} -> {}", best.0, best.1);
    let step = vec![
        (ln_p0.1 - ln_p0.0) / (GRID - 1) as f64,
        (ln_v.1 - ln_v.0) / (GRID - 1) as f64,
    ];
    let mut nm = NelderMead::new(step);
    nm.f_tol = 1e-13;
    nm.x_tol = 1e-12;
    let m = nm.minimize(objective, &best.0)?;
    Ok(ScaleFit {
        p0: m.point[0].exp(),
        v_min: m.point[1].exp(),
        wmap: m.value,
    })
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Calibration curve for [`fit_scale_and_floor`] from single-exposure bins:
/// the observed response frequency plays `p` and the mean visibility plays
/// `O`, so the fit finds `frequency ≈ P0·ν + v_min`. Bins with fewer than
/// `min_trials` trials or `min_responses` responses (at least one) are dropped.
pub fn scale_fit_curve(
    single: &BTreeMap<NuLabel, VisibilityBin>,
    min_trials: u64,
    min_responses: u64,
) -> Result<CalibrationCurve> {
    let points = single
        .values()
        .filter(|b| b.trials >= min_trials && b.responses >= min_responses.max(1))
        .map(|b| CalibrationPoint {
            predicted: b.frequency(),
            observed: b.mean_visibility(),
            trials: b.trials,
        })
        .collect();
    CalibrationCurve::new(points)
}

#[derive(Debug, Clone, Copy)]
pub struct MleOptions {
    /// Single-exposure bins with fewer trials do not define `P(ν)`.
    pub min_reference_trials: u64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions { min_reference_trials: 1 }
    }
}

/// Per-`n_e` result of the likelihood maximisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleDiagnostics {
    pub bins_used: usize,
    /// Bins without a usable single-exposure reference.
    pub bins_skipped: usize,
    pub trials: u64,
    pub responses: u64,
    /// Gradient of the log-likelihood at the returned factor.
    pub stationarity_residual: f64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementFit {
    pub table: EnhancementTable,
    pub diagnostics: BTreeMap<u32, MleDiagnostics>,
    /// `P(ν) = N_r/N` of the single-exposure bins.
    pub reference: BTreeMap<NuLabel, f64>,
}

/// `(N, N_r, P(ν))` triples entering the likelihood for one exposure count.
pub type LikelihoodTerms = Vec<(u64, u64, f64)>;

/// `∂L/∂F = Σ_ν [N_r/F − (N − N_r)·P/(1 − F·P)]`.
pub fn likelihood_gradient(terms: &[(u64, u64, f64)], f: f64) -> f64 {
    terms
        .iter()
        .map(|&(n, nr, p)| {
            let hit = if nr == 0 { 0.0 } else { nr as f64 / f };
            let miss = if n == nr { 0.0 } else { (n - nr) as f64 * p / (1.0 - f * p) };
            hit - miss
        })
        .sum()
}

/// `L = Σ_ν [N_r ln(F·P) + (N − N_r) ln(1 − F·P)]`.
pub fn log_likelihood(terms: &[(u64, u64, f64)], f: f64) -> f64 {
    terms
        .iter()
        .map(|&(n, nr, p)| {
            let hit = if nr == 0 { 0.0 } else { nr as f64 * (f * p).ln() };
            let miss = if n == nr { 0.0 } else { (n - nr) as f64 * (-f * p).ln_1p() };
            hit + miss
        })
        .sum()
}

/// Root of [`likelihood_gradient`] on `(0, 1/max P)` by bisection to machine
/// precision.
pub fn solve_enhancement(terms: &[(u64, u64, f64)], n_e: u32) -> Result<f64> {
    if terms.iter().all(|&(_, nr, _)| nr == 0) {
        return Ok(0.0);
    }
    let max_p = terms.iter().map(|t| t.2).fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, 1.0 / max_p);
    let g_hi = likelihood_gradient(terms, hi);
    if g_hi >= 0.0 {
        return Err(Error::NoRootInBracket {
            n_e,
            lo,
            hi,
            g_lo: f64::INFINITY,
            g_hi,
        });
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if likelihood_gradient(terms, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g_lo = likelihood_gradient(terms, lo).abs();
    let g_hi = likelihood_gradient(terms, hi).abs();
    Ok(if g_lo <= g_hi { lo } else { hi })
}

/// Maximum-likelihood `F(n_e)` for every exposure count present.
///
/// Bins at `n_e > 1` whose visibility bin has no single-exposure reference,
/// or a reference with no responses, are skipped and counted.
pub fn mle_enhancement(bins: &ExposureBins, opts: &MleOptions) -> Result<EnhancementFit> {
    let single = bins
        .single_exposure()
        .ok_or_else(|| Error::InvalidInput("no single-exposure bins".into()))?;
    let reference: BTreeMap<NuLabel, f64> = single
        .values()
        .filter(|b| b.trials >= opts.min_reference_trials && b.trials > 0)
        .map(|b| (b.nu, b.frequency()))
        .collect();

    let mut values = BTreeMap::from([(1, 1.0)]);
    let mut diagnostics = BTreeMap::new();
    for (&n_e, group) in &bins.by_ne {
        let mut terms = Vec::new();
        let mut skipped = 0;
        for b in group.values() {
            match reference.get(&b.nu) {
                Some(&p) if p > 0.0 => terms.push((b.trials, b.responses, p)),
                _ => skipped += 1,
            }
        }
        let f = if n_e == 1 {
            1.0
        } else {
            if terms.is_empty() {
                warn!("n_e = {n_e}: no bin shares a visibility bin with single exposures");
                continue;
            }
            solve_enhancement(&terms, n_e)?
        };
        if skipped > 0 {
            debug!("n_e = {n_e}: skipped {skipped} bins without reference");
        }
        diagnostics.insert(
            n_e,
            MleDiagnostics {
                bins_used: terms.len(),
                bins_skipped: skipped,
                trials: terms.iter().map(|t| t.0).sum(),
                responses: terms.iter().map(|t| t.1).sum(),
                stationarity_residual: if n_e == 1 { 0.0 } else { likelihood_gradient(&terms, f) },
                log_likelihood: log_likelihood(&terms, f),
            },
        );
        values.insert(n_e, f);
    }
    Ok(EnhancementFit {
        table: EnhancementTable::new(CohortKey::All, values)?,
        diagnostics,
        reference,
    })
}

/// Independent [`mle_enhancement`] per friend-count cohort. Cohorts without
/// data or without single-exposure trials are skipped with a warning.
pub fn enhancement_by_cohort(
    series: &[ExposureSeries],
    cohorts: &[NfRange],
    vis: &VisibilityModel,
    opts: &MleOptions,
) -> Result<BTreeMap<CohortKey, EnhancementFit>> {
    let mut out = BTreeMap::new();
    for &range in cohorts {
        let members: Vec<ExposureSeries> =
            series.iter().filter(|s| range.contains(s.n_f)).cloned().collect();
        let bins = bin_at_risk_seconds(&members, vis);
        if bins.single_exposure().is_none() {
            warn!("cohort {range}: no single-exposure trials, skipped");
            continue;
        }
        let mut fit = mle_enhancement(&bins, opts)?;
        fit.table.cohort = CohortKey::Range(range);
        out.insert(CohortKey::Range(range), fit);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// TRF bin edges; defaults to dyadic bins over the site's horizon.
    pub bin_edges: Option<Vec<i64>>,
    /// Estimate TRFs from pairs exposed once and only once; defaults to
    /// `true` for Twitter and `false` for Digg.
    pub trf_single_exposure_only: Option<bool>,
    pub min_trials: u64,
    /// Scale-fit bins with fewer responses are dropped.
    pub min_responses: u64,
    pub susceptibility: SusceptibilityFitOptions,
    pub mle: MleOptions,
    /// Digg only: choose the susceptibility constant `E` by minimising the
    /// scale-fit WMAP instead of keeping the RMS-fit value.
    pub joint_e: bool,
    /// Re-estimations of the TRFs and susceptibility after removing the
    /// responses the fitted floor `v_min` accounts for.
    pub floor_passes: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            bin_edges: None,
            trf_single_exposure_only: None,
            min_trials: MIN_TRIALS,
            min_responses: MIN_RESPONSES,
            susceptibility: SusceptibilityFitOptions {
                cumulative_hazard: true,
                ..Default::default()
            },
            mle: MleOptions::default(),
            joint_e: false,
            floor_passes: 1,
        }
    }
}

pub fn default_horizon(site: Site) -> i64 {
    match site {
        Site::Digg => DIGG_HORIZON,
        Site::Twitter => TWITTER_HORIZON,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub params: ModelParams,
    /// RMS error of log-probabilities of the analytic susceptibility fit.
    pub susceptibility_rms: f64,
    /// Amplitude of the fitted susceptibility before it was folded into `p0`.
    pub fitted_amplitude: f64,
    pub scale: ScaleFit,
    pub scale_curve: CalibrationCurve,
    pub enhancement: EnhancementFit,
    pub series: usize,
    pub at_risk_seconds: u64,
    pub responses: u64,
}

fn susceptibility_rms(curve: &SusceptibilityCurve, form: &AnalyticSusceptibility, min_trials: u64) -> f64 {
    let errs: Vec<f64> = curve
        .empirical
        .iter()
        .filter(|(&n, c)| n >= 1 && c.trials >= min_trials && c.responses > 0)
        .map(|(&n, c)| (form.evaluate(n as f64).ln() - c.probability().ln()).powi(2))
        .collect();
    (errs.iter().sum::<f64>() / errs.len() as f64).sqrt()
}

/// Trial-weighted geometric mean of `fitted(n_f) / reference(n_f)` over the
/// friend counts present in the data.
fn reference_ratio(
    curve: &SusceptibilityCurve,
    fitted: &AnalyticSusceptibility,
    reference: &AnalyticSusceptibility,
) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&n, c) in curve.empirical.iter().filter(|(&n, _)| n >= 1) {
        let w = c.trials as f64;
        num += w * (fitted.evaluate(n as f64) / reference.evaluate(n as f64)).ln();
        den += w;
    }
    if den > 0.0 {
        (num / den).exp()
    } else {
        fitted.amplitude() / reference.amplitude()
    }
}

/// Runs the full estimation: TRFs, susceptibility, scale and floor, enhancement.
///
/// Only the product `p0·P(n_f)` is identified. The fitted curve is rescaled to
/// agree on average with the published constants over the observed friend
/// counts, and the factor moves into `p0`, so `p0` is comparable across fits.
pub fn fit_model(series: &[ExposureSeries], site: Site, opts: &FitOptions) -> Result<FitReport> {
    if series.is_empty() {
        return Err(Error::InvalidInput("no exposure series to fit".into()));
    }
    let edges = opts
        .bin_edges
        .clone()
        .unwrap_or_else(|| log_bin_edges(default_horizon(site)));
    let single_only = opts.trf_single_exposure_only.unwrap_or(site == Site::Twitter);
    let window = edges.last().copied();
    let mut susceptibility = estimate_susceptibility_within(series, window);
    let form = SusceptibilityForm::for_site(site);
    let max_nf = series.iter().map(|s| s.n_f).max().unwrap_or(0);

    let mut trf = TrfBundle::estimate(series, single_only, &edges)?;
    let mut susc_opts = opts.susceptibility.clone();
    let mut pass = fit_pass(series, site, &trf, &susceptibility, &susc_opts, opts, max_nf)?;
    for _ in 0..opts.floor_passes {
        let v = pass.scale.v_min;
        let table = pass.enhancement.table.clone();
        let floor = |n: usize| match site {
            Site::Digg => v * table.factor_or_last(n as u32),
            Site::Twitter => v,
        };
        trf = TrfBundle::estimate_net(series, single_only, &edges, &floor)?;
        susc_opts.floor_hazard = Some(
            single_exposure_seconds(series, window)
                .into_iter()
                .map(|(n, secs)| (n, v * secs))
                .collect(),
        );
        pass = fit_pass(series, site, &trf, &susceptibility, &susc_opts, opts, max_nf)?;
    }
    let FitPass {
        analytic,
        rms,
        scale,
        scale_curve,
        bins,
        enhancement,
    } = pass;

    let fitted_amplitude = analytic.amplitude();
    let c = reference_ratio(&susceptibility, &analytic, &AnalyticSusceptibility::reference(form));
    let p0 = scale.p0 * c;
    susceptibility.analytic = Some(analytic.with_amplitude(fitted_amplitude / c));

    let params = ModelParams {
        site,
        p0,
        log_v_min: scale.v_min.ln(),
        enhancement: enhancement.table.clone(),
        susceptibility,
        trf,
    };
    params.validate()?;
    Ok(FitReport {
        params,
        susceptibility_rms: rms,
        fitted_amplitude,
        scale,
        scale_curve,
        enhancement,
        series: series.len(),
        at_risk_seconds: bins.total_trials(),
        responses: bins.total_responses(),
    })
}

struct FitPass {
    analytic: AnalyticSusceptibility,
    rms: f64,
    scale: ScaleFit,
    scale_curve: CalibrationCurve,
    bins: ExposureBins,
    enhancement: EnhancementFit,
}

/// Susceptibility form, scale and floor, and enhancement for fixed TRFs.
fn fit_pass(
    series: &[ExposureSeries],
    site: Site,
    trf: &TrfBundle,
    susceptibility: &SusceptibilityCurve,
    susc_opts: &SusceptibilityFitOptions,
    opts: &FitOptions,
    max_nf: u32,
) -> Result<FitPass> {
    let form = SusceptibilityForm::for_site(site);
    let mut analytic = fit_susceptibility_analytic(susceptibility, form, susc_opts)?;
    let rms = susceptibility_rms(susceptibility, &analytic, susc_opts.min_trials);
    let scale_for = |a: &AnalyticSusceptibility| -> Result<(ScaleFit, CalibrationCurve, ExposureBins)> {
        let vis = VisibilityModel::new(site, &SusceptibilityCurve::analytic(*a), trf, max_nf)?;
        let bins = bin_at_risk_seconds(series, &vis);
        let single = bins
            .single_exposure()
            .ok_or_else(|| Error::InvalidInput("no single-exposure trials".into()))?;
        let curve = scale_fit_curve(single, opts.min_trials, opts.min_responses)?;
        Ok((fit_scale_and_floor(&curve)?, curve, bins))
    };
    if opts.joint_e && site == Site::Digg {
        analytic = joint_e_search(analytic, |a| scale_for(a).map(|r| r.0.wmap))?;
    }
    let (scale, scale_curve, bins) = scale_for(&analytic)?;
    let enhancement = mle_enhancement(&bins, &opts.mle)?;
    Ok(FitPass {
        analytic,
        rms,
        scale,
        scale_curve,
        bins,
        enhancement,
    })
}

/// Golden-section search over `ln E` within a decade either side of the start.
fn joint_e_search(
    start: AnalyticSusceptibility,
    wmap: impl Fn(&AnalyticSusceptibility) -> Result<f64>,
) -> Result<AnalyticSusceptibility> {
    let AnalyticSusceptibility::Digg(p0) = start else {
        return Ok(start);
    };
    let with_e = |ln_e: f64| {
        let mut p = p0;
        p.e = ln_e.exp();
        AnalyticSusceptibility::Digg(p)
    };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (p0.e.ln() - std::f64::consts::LN_10, p0.e.ln() + std::f64::consts::LN_10);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = wmap(&with_e(c))?;
    let mut fd = wmap(&with_e(d))?;
    for _ in 0..40 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = wmap(&with_e(c))?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = wmap(&with_e(d))?;
        }
    }
    let f_start = wmap(&start)?;
    let best = if fc < fd { c } else { d };
    Ok(if fc.min(fd) < f_start { with_e(best) } else { start })
}
