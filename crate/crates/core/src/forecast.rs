//! Windowed response forecasts and predicted-versus-observed calibration.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contagion::{HazardModel, MissingFactor, ModelParams};
use crate::error::{Error, Result};
use crate::events::ExposureSeries;
use crate::inference::{wmap_error, CalibrationCurve, CalibrationPoint, BINS_PER_DECADE, MIN_TRIALS};

pub const DEFAULT_WINDOW: i64 = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub user: String,
    pub item: String,
    pub window_start: i64,
    pub window_len: i64,
    pub predicted: f64,
    pub outcome: bool,
}

/// Probability of a response in `t..t+window`, given the exposures in `series`.
/// Exposures arriving inside the window count from the second after arrival.
pub fn forecast_window(params: &ModelParams, series: &ExposureSeries, t: i64, window: i64) -> Result<f64> {
    let model = HazardModel::new(params, series.n_f, MissingFactor::Error)?;
    window_probability(&model, series, t, window)
}

/// [`forecast_window`] against a prebuilt hazard cache.
pub fn window_probability(model: &HazardModel, series: &ExposureSeries, t: i64, window: i64) -> Result<f64> {
    if window <= 0 {
        return Err(Error::InvalidInput(format!("window must be positive, got {window}")));
    }
    if series.response_time.is_some_and(|r| r < t) {
        return Err(Error::InvalidInput(format!(
            "{}/{} responded before {t}",
            series.user, series.item
        )));
    }
    let mut log_miss = 0.0;
    let mut failed = None;
    model.visibility_model().for_each_run(&series.exposure_times, t, t + window - 1, |a, b, k| {
        if failed.is_some() {
            return;
        }
        match model.hazard(series.n_f, &series.exposure_times[..k], a) {
            Ok(p) => log_miss += (b - a + 1) as f64 * (-p).ln_1p(),
            Err(e) => failed = Some(e),
        }
    });
    if let Some(e) = failed {
        return Err(e);
    }
    Ok(-log_miss.exp_m1())
}

#[derive(Debug, Clone, Copy)]
pub struct ForecastOptions {
    pub window: i64,
    /// Seconds between window starts; equal to `window` tiles disjoint windows.
    pub stride: i64,
    /// Only windows starting at most this long after the first exposure.
    pub max_delay: Option<i64>,
    pub missing: MissingFactor,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        ForecastOptions {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_WINDOW,
            max_delay: None,
            missing: MissingFactor::Error,
        }
    }
}

/// Forecasts every window of every series. Windows start one second after the
/// first exposure and stop at the response; a window must lie wholly inside
/// the observed, uncensored period.
pub fn forecast_series(
    params: &ModelParams,
    series: &[ExposureSeries],
    opts: &ForecastOptions,
) -> Result<Vec<ForecastPoint>> {
    if opts.window <= 0 || opts.stride <= 0 {
        return Err(Error::InvalidInput("window and stride must be positive".into()));
    }
    let max_nf = series.iter().map(|s| s.n_f).max().unwrap_or(0);
    let model = HazardModel::new(params, max_nf, opts.missing)?;
    let per_series: Vec<Vec<ForecastPoint>> = series
        .par_iter()
        .map(|s| series_points(&model, s, opts))
        .collect::<Result<_>>()?;
    Ok(per_series.into_iter().flatten().collect())
}

fn series_points(model: &HazardModel, s: &ExposureSeries, opts: &ForecastOptions) -> Result<Vec<ForecastPoint>> {
    let first = s.first_exposure();
    let mut last_end = s.observed_until;
    if let Some(c) = s.censor_time {
        last_end = last_end.min(c - 1);
    }
    let mut out = Vec::new();
    let mut start = first + 1;
    loop {
        let end = start + opts.window - 1;
        let responded = s.response_time.is_some_and(|r| r < start);
        let too_late = opts.max_delay.is_some_and(|d| start - first > d);
        if responded || too_late || end > last_end {
            break;
        }
        out.push(ForecastPoint {
            user: s.user.clone(),
            item: s.item.clone(),
            window_start: start,
            window_len: opts.window,
            predicted: window_probability(model, s, start, opts.window)?,
            outcome: s.response_time.is_some_and(|r| r <= end),
        });
        start += opts.stride;
    }
    Ok(out)
}

pub fn write_forecasts(path: impl AsRef<Path>, points: &[ForecastPoint]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut put = |line: String| w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e));
    put("user,item,window_start,predicted,outcome\n".into())?;
    for p in points {
        put(format!(
            "{},{},{},{:e},{}\n",
            p.user, p.item, p.window_start, p.predicted, p.outcome as u8
        ))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub predicted_mean: f64,
    pub observed: f64,
    pub trials: u64,
    /// Too few trials to resolve the observed frequency; excluded from WMAP.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub bins: Vec<CalibrationBin>,
    /// Forecasts with zero predicted probability, which no log bin holds.
    pub zero_predictions: u64,
    pub wmap: f64,
    /// Every bin was flagged, so the WMAP covers them all.
    pub wmap_uses_flagged: bool,
}

impl Calibration {
    /// The unflagged bins as a curve of `(predicted mean, observed)`, or every
    /// bin when all are flagged.
    pub fn curve(&self) -> Result<CalibrationCurve> {
        let all_flagged = self.bins.iter().all(|b| b.flagged);
        CalibrationCurve::new(
            self.bins
                .iter()
                .filter(|b| all_flagged || !b.flagged)
                .map(|b| CalibrationPoint {
                    predicted: b.predicted_mean,
                    observed: b.observed,
                    trials: b.trials,
                })
                .collect(),
        )
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::from("bin_lo,bin_hi,predicted_mean,observed,trials\n");
        for b in &self.bins {
            text.push_str(&format!(
                "{:e},{:e},{:e},{:e},{}\n",
                b.lo, b.hi, b.predicted_mean, b.observed, b.trials
            ));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Bins forecasts by predicted probability on a log scale with `bins_per_decade`
/// bins per decade and reports the trial-weighted WMAP of the unflagged bins.
/// When every bin is flagged the WMAP falls back to all of them.
pub fn calibration(points: &[ForecastPoint], bins_per_decade: u32) -> Result<Calibration> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no forecast points".into()));
    }
    if bins_per_decade == 0 {
        return Err(Error::InvalidInput("bins_per_decade must be positive".into()));
    }
    let k = bins_per_decade as f64;
    let mut acc: std::collections::BTreeMap<i64, (f64, u64, u64)> = Default::default();
    let mut zero_predictions = 0;
    for p in points {
        if !(0.0..=1.0).contains(&p.predicted) {
            return Err(Error::ProbabilityOutOfRange { value: p.predicted });
        }
        if p.predicted == 0.0 {
            zero_predictions += 1;
            continue;
        }
        let label = (k * p.predicted.log10()).floor() as i64;
        let e = acc.entry(label).or_default();
        e.0 += p.predicted;
        e.1 += 1;
        e.2 += p.outcome as u64;
    }
    let bins: Vec<CalibrationBin> = acc
        .into_iter()
        .map(|(label, (sum, n, r))| CalibrationBin {
            lo: 10f64.powf(label as f64 / k),
            hi: 10f64.powf((label + 1) as f64 / k),
            predicted_mean: sum / n as f64,
            observed: r as f64 / n as f64,
            trials: n,
            flagged: n < MIN_TRIALS,
        })
        .collect();
    let mut out = Calibration {
        bins,
        zero_predictions,
        wmap: f64::NAN,
        wmap_uses_flagged: false,
    };
    out.wmap_uses_flagged = out.bins.iter().all(|b| b.flagged);
    out.wmap = wmap_error(&out.curve()?, 1.0, 0.0)?;
    Ok(out)
}

/// [`calibration`] at the default resolution.
pub fn calibrate(points: &[ForecastPoint]) -> Result<Calibration> {
    calibration(points, BINS_PER_DECADE as u32)
}
