use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the heart-rate channel (beats/minute) in every record.
pub const HR_CHANNEL: &str = "hr";
/// Name of the photoplethysmogram channel, when present.
pub const PPG_CHANNEL: &str = "ppg";

/// One uniformly sampled channel. Missing samples are `NaN`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSeries {
    pub name: String,
    pub rate_hz: f64,
    /// Time of the first sample, in seconds from the record origin.
    #[serde(default)]
    pub start_s: f64,
    pub values: Vec<f64>,
    #[serde(default)]
    pub units: String,
}

impl ChannelSeries {
    pub fn new(name: impl Into<String>, rate_hz: f64, values: Vec<f64>) -> Self {
        ChannelSeries {
            name: name.into(),
            rate_hz,
            start_s: 0.0,
            values,
            units: String::new(),
        }
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = units.into();
        self
    }

    pub fn with_start(mut self, start_s: f64) -> Self {
        self.start_s = start_s;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Time just past the last sample.
    pub fn end_s(&self) -> f64 {
        self.start_s + self.values.len() as f64 / self.rate_hz
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }
}

/// All channels recorded for one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub dataset: String,
    pub channels: Vec<ChannelSeries>,
}

impl SubjectRecord {
    pub fn channel(&self, name: &str) -> Option<&ChannelSeries> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn hr(&self) -> Option<&ChannelSeries> {
        self.channel(HR_CHANNEL)
    }

    /// Sensor channels: everything except heart rate and PPG.
    pub fn sensor_names(&self) -> Vec<String> {
        self.channels
            .iter()
            .filter(|c| c.name != HR_CHANNEL && c.name != PPG_CHANNEL)
            .map(|c| c.name.clone())
            .collect()
    }
}

/// Resamples onto the grid `start_s + k / target_hz`, keeping the covered duration.
///
/// Upsampling interpolates linearly between neighbouring samples; downsampling
/// averages the source samples inside each output tick's window.
pub fn resample(series: &ChannelSeries, target_hz: f64) -> Result<ChannelSeries> {
    check_rate(target_hz)?;
    let n_out = ((series.len() as f64 * target_hz / series.rate_hz) + 1e-9).floor() as usize;
    resample_onto(series, target_hz, series.start_s, n_out.max(1))
}

/// Resamples onto `n_out` ticks at `t0 + k / target_hz`. Times outside the source
/// span hold the nearest edge value.
pub fn resample_onto(series: &ChannelSeries, target_hz: f64, t0: f64, n_out: usize) -> Result<ChannelSeries> {
    check_rate(target_hz)?;
    if series.is_empty() {
        return Err(Error::InvalidArgument(format!("cannot resample empty channel {}", series.name)));
    }
    let src = &series.values;
    let n = src.len();
    let rate = series.rate_hz;
    let same_grid = (target_hz - rate).abs() < 1e-12 && ((t0 - series.start_s) * rate).abs() < 1e-9;
    let values = if same_grid {
        (0..n_out).map(|k| src[k.min(n - 1)]).collect()
    } else if target_hz > rate {
        (0..n_out)
            .map(|k| {
                let pos = ((t0 + k as f64 / target_hz) - series.start_s) * rate;
                if pos <= 0.0 {
                    return src[0];
                }
                let i = pos.floor() as usize;
                if i + 1 >= n {
                    return src[n - 1];
                }
                let frac = pos - i as f64;
                src[i] + (src[i + 1] - src[i]) * frac
            })
            .collect()
    } else {
        let half = 0.5 / target_hz;
        (0..n_out)
            .map(|k| {
                let t = t0 + k as f64 / target_hz;
                let lo = (((t - half) - series.start_s) * rate - 1e-9).ceil().max(0.0) as usize;
                let hi = ((((t + half) - series.start_s) * rate - 1e-9).ceil().max(0.0) as usize).min(n);
                if lo >= hi {
                    let nearest = (((t - series.start_s) * rate).round().max(0.0) as usize).min(n - 1);
                    return src[nearest];
                }
                src[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect()
    };
    Ok(ChannelSeries {
        name: series.name.clone(),
        rate_hz: target_hz,
        start_s: t0,
        values,
        units: series.units.clone(),
    })
}

fn check_rate(hz: f64) -> Result<()> {
    if !(hz.is_finite() && hz > 0.0) {
        return Err(Error::InvalidArgument(format!("target rate {hz} Hz must be positive")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ImputeStats {
    pub imputed: usize,
    /// Missing points whose window held no present value.
    pub widened: usize,
}

/// Replaces each missing sample by the mean of present samples within `±window_s / 2`.
///
/// When that window is empty, the nearest present neighbours on each side are
/// averaged instead and the point is counted in [`ImputeStats::widened`].
pub fn impute_local_average(series: &ChannelSeries, window_s: f64) -> Result<(ChannelSeries, ImputeStats)> {
    let v = &series.values;
    let mut stats = ImputeStats::default();
    if !v.iter().any(|x| x.is_nan()) {
        return Ok((series.clone(), stats));
    }
    if v.iter().all(|x| x.is_nan()) {
        return Err(Error::MissingData(format!("channel {} has no present samples", series.name)));
    }
    let half = ((window_s / 2.0) * series.rate_hz + 1e-9).floor() as usize;
    let n = v.len();
    // nearest present index at or before / at or after each position
    let mut prev = vec![None; n];
    let mut last = None;
    for i in 0..n {
        if !v[i].is_nan() {
            last = Some(i);
        }
        prev[i] = last;
    }
    let mut next = vec![None; n];
    let mut last = None;
    for i in (0..n).rev() {
        if !v[i].is_nan() {
            last = Some(i);
        }
        next[i] = last;
    }
    let mut out = v.clone();
    for i in 0..n {
        if !v[i].is_nan() {
            continue;
        }
        stats.imputed += 1;
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let (sum, cnt) = v[lo..hi]
            .iter()
            .filter(|x| !x.is_nan())
            .fold((0.0, 0usize), |(s, c), &x| (s + x, c + 1));
        out[i] = if cnt > 0 {
            sum / cnt as f64
        } else {
            stats.widened += 1;
            let neighbours: Vec<f64> = [prev[i], next[i]].into_iter().flatten().map(|j| v[j]).collect();
            neighbours.iter().sum::<f64>() / neighbours.len() as f64
        };
    }
    if stats.widened > 0 {
        log::warn!(
            "channel {}: {} missing samples had no neighbour within {window_s} s; used nearest present values",
            series.name,
            stats.widened
        );
    }
    Ok((
        ChannelSeries {
            values: out,
            ..series.clone()
        },
        stats,
    ))
}

/// Mean and (population) standard deviation of a normalized channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats { mean: 0.0, std: 1.0 };

    /// Statistics of `values`; a spread below `1e-8` is recorded as `std = 1`.
    pub fn of(values: &[f64]) -> NormStats {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < 1e-8 {
            NormStats { mean, std: 1.0 }
        } else {
            NormStats { mean, std }
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Z-normalizes `values`. Degenerate (constant) channels map to all zeros.
pub fn znorm(values: &[f64]) -> (Vec<f64>, NormStats) {
    let stats = NormStats::of(values);
    (values.iter().map(|&v| stats.apply(v)).collect(), stats)
}

pub fn denorm(values: &[f64], stats: NormStats) -> Vec<f64> {
    values.iter().map(|&v| stats.invert(v)).collect()
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn upsample_linear_midpoint() {
        let s = ChannelSeries::new("hr", 1.0, vec![60.0, 62.0]);
        let r = resample(&s, 32.0).unwrap();
        assert_eq!(r.rate_hz, 32.0);
        assert_eq!(r.len(), 64);
        assert_abs_diff_eq!(r.values[16], 61.0, epsilon = 1e-12);
        assert_eq!(r.values[0], 60.0);
        assert_eq!(*r.values.last().unwrap(), 62.0);
    }

    #[test]
    fn constant_series_stays_constant() {
        for (from, to) in [(100.0, 32.0), (1.0, 32.0), (32.0, 32.0), (9.0, 30.0)] {
            let s = ChannelSeries::new("x", from, vec![4.25; 500]);
            let r = resample(&s, to).unwrap();
            assert!(r.values.iter().all(|&v| (v - 4.25).abs() < 1e-12));
        }
    }

    #[test]
    fn rejects_non_positive_rate() {
        let s = ChannelSeries::new("x", 10.0, vec![1.0; 5]);
        assert!(resample(&s, 0.0).is_err());
        assert!(resample(&s, -3.0).is_err());
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn downsampled_sine_tracks_closed_form() {
        let tau = std::f64::consts::TAU;
        let s = ChannelSeries::new("x", 100.0, (0..1000).map(|i| (tau * i as f64 / 100.0).sin()).collect());
        let r = resample(&s, 32.0).unwrap();
        let truth: Vec<f64> = (0..r.len()).map(|k| (tau * k as f64 / 32.0).sin()).collect();
        let c = correlation(&r.values, &truth);
        assert!(c > 0.999, "correlation {c}");
    }

    #[test]
    fn impute_symmetric_mean() {
        let s = ChannelSeries::new("x", 10.0, vec![1.0, f64::NAN, 3.0]);
        let (r, st) = impute_local_average(&s, 0.4).unwrap();
        assert_eq!(r.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(st, ImputeStats { imputed: 1, widened: 0 });
    }

    #[test]
    fn impute_identity_without_missing() {
        let s = ChannelSeries::new("x", 10.0, vec![1.0, 5.0, 3.0]);
        let (r, st) = impute_local_average(&s, 0.4).unwrap();
        assert_eq!(r, s);
        assert_eq!(st.imputed, 0);
    }

    #[test]
    fn impute_widens_empty_windows() {
        let mut v = vec![f64::NAN; 20];
        v[0] = 2.0;
        v[19] = 4.0;
        let s = ChannelSeries::new("x", 10.0, v);
        let (r, st) = impute_local_average(&s, 0.4).unwrap();
        assert_eq!(r.values[10], 3.0);
        assert!(st.widened > 0);
        assert!(r.values.iter().all(|v| v.is_finite()));
        assert!(impute_local_average(&ChannelSeries::new("x", 1.0, vec![f64::NAN; 3]), 0.4).is_err());
    }

    #[test]
    fn impute_smooth_signal_error_bounded_by_local_variation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rate = 32.0;
        let truth: Vec<f64> = (0..3200).map(|i| (i as f64 / rate * 0.7).sin() * 3.0 + (i as f64 / rate * 0.13).cos()).collect();
        let mut v = truth.clone();
        for x in v.iter_mut() {
            if rng.gen_bool(0.05) {
                *x = f64::NAN;
            }
        }
        let (r, _) = impute_local_average(&ChannelSeries::new("x", rate, v.clone()), 0.4).unwrap();
        let half = (0.2 * rate) as usize;
        for i in 0..truth.len() {
            if !v[i].is_nan() {
                continue;
            }
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(truth.len());
            let tv: f64 = truth[lo..hi].windows(2).map(|w| (w[1] - w[0]).abs()).sum();
            assert!((r.values[i] - truth[i]).abs() <= tv + 1e-12, "at {i}");
        }
    }

    #[test]
    fn znorm_examples() {
        let (z, st) = znorm(&[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(z[0], -1.224744871391589, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[2], 1.224744871391589, epsilon = 1e-12);
        assert_abs_diff_eq!(st.std, (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);

        let (z, st) = znorm(&[7.0; 10]);
        assert!(z.iter().all(|&v| v == 0.0));
        assert_eq!(st.std, 1.0);
    }

    proptest! {
        #[test]
        fn znorm_output_is_standardized(values in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let spread = values.iter().cloned().fold(f64::MIN, f64::max) - values.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-6);
            let (z, _) = znorm(&values);
            let back = NormStats::of(&z);
            prop_assert!(back.mean.abs() < 1e-6);
            prop_assert!((back.std - 1.0).abs() < 1e-6);
        }

        #[test]
        fn denorm_inverts_znorm(values in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let (z, st) = znorm(&values);
            prop_assume!(st.std > 1e-6);
            let back = denorm(&z, st);
            for (a, b) in back.iter().zip(&values) {
                prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
            }
        }
    }
}
