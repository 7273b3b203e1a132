use serde::{Deserialize, Serialize};

use super::fft::fft_magnitude;
use super::series::{
    impute_local_average, resample_onto, ChannelSeries, ImputeStats, NormStats, SubjectRecord, HR_CHANNEL,
    PPG_CHANNEL,
};
use crate::error::{Error, Result};

/// Preprocessing parameters shared by every subject of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub rate_hz: f64,
    /// Snippet duration in seconds.
    pub tau_s: f64,
    /// Overlap ratio between consecutive snippets, in `[0, 1)`.
    pub overlap: f64,
    pub n_snippets: usize,
    pub init_snippets: usize,
    pub impute_window_s: f64,
    /// Sensor channels to keep, in order. `None` keeps every sensor channel of the record.
    pub channels: Option<Vec<String>>,
    /// Carry the PPG channel and its per-snippet FFT magnitudes.
    pub use_ppg: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rate_hz: 32.0,
            tau_s: 4.0,
            overlap: 0.5,
            n_snippets: 50,
            init_snippets: 12,
            impute_window_s: 0.4,
            channels: None,
            use_ppg: false,
        }
    }
}

impl PipelineConfig {
    /// 8 s snippets with 75 % overlap, PPG included.
    pub fn ppg() -> Self {
        PipelineConfig {
            tau_s: 8.0,
            overlap: 0.75,
            use_ppg: true,
            ..Default::default()
        }
    }

    /// 30 Hz, 3 s snippets.
    pub fn deepconvlstm() -> Self {
        PipelineConfig {
            rate_hz: 30.0,
            tau_s: 3.0,
            ..Default::default()
        }
    }

    pub fn snippet_len(&self) -> usize {
        (self.tau_s * self.rate_hz).round() as usize
    }

    pub fn snippet_stride(&self) -> usize {
        ((self.tau_s * (1.0 - self.overlap)) * self.rate_hz).round() as usize
    }

    /// Shortest series, in seconds, that yields one full segment.
    pub fn min_series_s(&self) -> f64 {
        self.tau_s + (self.n_snippets - 1) as f64 * self.tau_s * (1.0 - self.overlap)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.rate_hz > 0.0) {
            return bad(format!("rate {} Hz must be positive", self.rate_hz));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return bad(format!("overlap {} not in [0, 1)", self.overlap));
        }
        if self.snippet_len() == 0 || self.snippet_stride() == 0 {
            return bad(format!("tau {} s is too short at {} Hz", self.tau_s, self.rate_hz));
        }
        if !(self.n_snippets > self.init_snippets && self.init_snippets >= 1) {
            return bad(format!(
                "need n_snippets > init_snippets >= 1, got {} and {}",
                self.n_snippets, self.init_snippets
            ));
        }
        Ok(())
    }
}

/// A record whose channels share one rate, origin, and length.
#[derive(Clone, Debug)]
pub struct AlignedRecord {
    pub subject_id: String,
    pub rate_hz: f64,
    pub channels: Vec<ChannelSeries>,
    pub impute: ImputeStats,
}

impl AlignedRecord {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, ChannelSeries::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, name: &str) -> Option<&ChannelSeries> {
        self.channels.iter().find(|c| c.name == name)
    }
}

/// Imputes and resamples the named channels onto one common grid spanning the
/// overlap of their time ranges.
pub fn align(record: &SubjectRecord, names: &[String], rate_hz: f64, impute_window_s: f64) -> Result<AlignedRecord> {
    let mut picked = Vec::with_capacity(names.len());
    for name in names {
        let ch = record.channel(name).ok_or_else(|| {
            Error::MissingData(format!("subject {} has no channel {name:?}", record.subject_id))
        })?;
        picked.push(ch);
    }
    let t0 = picked.iter().map(|c| c.start_s).fold(f64::MIN, f64::max);
    let t1 = picked.iter().map(|c| c.end_s()).fold(f64::MAX, f64::min);
    let n = if t1 > t0 { ((t1 - t0) * rate_hz + 1e-9).floor() as usize } else { 0 };
    let mut impute = ImputeStats::default();
    let mut channels = Vec::with_capacity(picked.len());
    for ch in picked {
        if n == 0 {
            channels.push(ChannelSeries { values: Vec::new(), rate_hz, start_s: t0, ..ch.clone() });
            continue;
        }
        let (filled, st) = impute_local_average(ch, impute_window_s)?;
        impute.imputed += st.imputed;
        impute.widened += st.widened;
        channels.push(resample_onto(&filled, rate_hz, t0, n)?);
    }
    Ok(AlignedRecord {
        subject_id: record.subject_id.clone(),
        rate_hz,
        channels,
        impute,
    })
}

/// One snippet, stored as a window into its subject's aligned series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSnippet {
    pub start_sample: usize,
    pub start_s: f64,
    /// Mean heart rate inside the window, beats/minute.
    pub mean_hr: Option<f64>,
}

/// Cuts `n_samples` into windows of `len` samples every `stride` samples.
///
/// Returns an empty list (and logs a warning) when the series is shorter than one window.
pub fn discretize(n_samples: usize, rate_hz: f64, len: usize, stride: usize, hr: Option<&[f64]>) -> Vec<TimeSnippet> {
    if n_samples < len || len == 0 || stride == 0 {
        log::warn!(
            "series of {:.1} s is shorter than one {:.1} s snippet",
            n_samples as f64 / rate_hz,
            len as f64 / rate_hz
        );
        return Vec::new();
    }
    let count = (n_samples - len) / stride + 1;
    (0..count)
        .map(|k| {
            let start = k * stride;
            TimeSnippet {
                start_sample: start,
                start_s: start as f64 / rate_hz,
                mean_hr: hr.map(|h| h[start..start + len].iter().sum::<f64>() / len as f64),
            }
        })
        .collect()
}

/// `n_snippets` consecutive snippets; the first `init_len` form the initialization part.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub subject_id: String,
    pub segment_index: usize,
    pub first_snippet: usize,
    pub n_snippets: usize,
    pub init_len: usize,
}

impl Segment {
    pub fn snippet_indices(&self) -> std::ops::Range<usize> {
        self.first_snippet..self.first_snippet + self.n_snippets
    }

    pub fn prediction_len(&self) -> usize {
        self.n_snippets - self.init_len
    }
}

/// Tiles `n_available` snippets into non-overlapping blocks of `n`; the remainder is dropped.
pub fn segment(subject_id: &str, n_available: usize, n: usize, init_len: usize) -> Result<Vec<Segment>> {
    if !(n > init_len && init_len >= 1) {
        return Err(Error::InvalidArgument(format!("need N > I >= 1, got N={n}, I={init_len}")));
    }
    if n_available < n {
        log::warn!("subject {subject_id}: {n_available} snippets is fewer than one segment of {n}; excluded");
    }
    Ok((0..n_available / n)
        .map(|k| Segment {
            subject_id: subject_id.to_string(),
            segment_index: k,
            first_snippet: k * n,
            n_snippets: n,
            init_len,
        })
        .collect())
}

/// A subject after alignment, normalization, snippet cutting, and segmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedSubject {
    pub subject_id: String,
    pub rate_hz: f64,
    pub channel_names: Vec<String>,
    /// Per-subject z-normalized sensor channels, `[channel][sample]`.
    pub sensors: Vec<Vec<f64>>,
    pub sensor_stats: Vec<NormStats>,
    /// Per-subject z-normalized PPG.
    pub ppg: Option<Vec<f64>>,
    /// Heart rate in beats/minute on the common grid.
    pub hr: Option<Vec<f64>>,
    pub snippet_len: usize,
    pub snippets: Vec<TimeSnippet>,
    /// Per-snippet FFT magnitudes of the PPG window (`snippet_len / 2` values each).
    pub ppg_fft: Option<Vec<Vec<f64>>>,
    pub segments: Vec<Segment>,
}

impl PreparedSubject {
    pub fn n_channels(&self) -> usize {
        self.sensors.len()
    }

    /// Sensor samples of snippet `k` as a row-major `channels × snippet_len` matrix.
    pub fn snippet_matrix(&self, k: usize) -> Vec<f64> {
        let s = self.snippets[k].start_sample;
        self.sensors
            .iter()
            .flat_map(|ch| ch[s..s + self.snippet_len].iter().copied())
            .collect()
    }

    pub fn ppg_window(&self, k: usize) -> Option<&[f64]> {
        let s = self.snippets[k].start_sample;
        self.ppg.as_ref().map(|p| &p[s..s + self.snippet_len])
    }

    /// Mean sensor value per channel over snippet `k`.
    pub fn snippet_channel_means(&self, k: usize) -> Vec<f64> {
        let s = self.snippets[k].start_sample;
        self.sensors
            .iter()
            .map(|ch| ch[s..s + self.snippet_len].iter().sum::<f64>() / self.snippet_len as f64)
            .collect()
    }

    pub fn snippet_hr(&self, k: usize) -> Result<f64> {
        self.snippets[k]
            .mean_hr
            .ok_or_else(|| Error::MissingData(format!("subject {} has no heart rate", self.subject_id)))
    }
}

/// Runs the whole preprocessing chain on one record.
pub fn prepare(record: &SubjectRecord, cfg: &PipelineConfig) -> Result<PreparedSubject> {
    cfg.validate()?;
    let sensor_names = cfg.channels.clone().unwrap_or_else(|| record.sensor_names());
    if sensor_names.is_empty() {
        return Err(Error::MissingData(format!("subject {} has no sensor channels", record.subject_id)));
    }
    let mut names = sensor_names.clone();
    let has_hr = record.hr().is_some();
    if has_hr {
        names.push(HR_CHANNEL.to_string());
    }
    if cfg.use_ppg {
        if record.channel(PPG_CHANNEL).is_none() {
            return Err(Error::MissingData(format!("subject {} has no {PPG_CHANNEL} channel", record.subject_id)));
        }
        names.push(PPG_CHANNEL.to_string());
    }
    let aligned = align(record, &names, cfg.rate_hz, cfg.impute_window_s)?;
    if aligned.impute.imputed > 0 {
        log::debug!("subject {}: imputed {} samples", record.subject_id, aligned.impute.imputed);
    }

    let mut sensors = Vec::with_capacity(sensor_names.len());
    let mut sensor_stats = Vec::with_capacity(sensor_names.len());
    for name in &sensor_names {
        let (z, st) = super::znorm(&aligned.channel(name).expect("aligned").values);
        sensors.push(z);
        sensor_stats.push(st);
    }
    let hr = has_hr.then(|| aligned.channel(HR_CHANNEL).expect("aligned").values.clone());
    let ppg = cfg
        .use_ppg
        .then(|| super::znorm(&aligned.channel(PPG_CHANNEL).expect("aligned").values).0);

    let len = cfg.snippet_len();
    let snippets = discretize(aligned.len(), cfg.rate_hz, len, cfg.snippet_stride(), hr.as_deref());
    let segments = segment(&record.subject_id, snippets.len(), cfg.n_snippets, cfg.init_snippets)?;
    let ppg_fft = match &ppg {
        Some(p) => Some(
            snippets
                .iter()
                .map(|s| fft_magnitude(&p[s.start_sample..s.start_sample + len]))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    Ok(PreparedSubject {
        subject_id: record.subject_id.clone(),
        rate_hz: cfg.rate_hz,
        channel_names: sensor_names,
        sensors,
        sensor_stats,
        ppg,
        hr,
        snippet_len: len,
        snippets,
        ppg_fft,
        segments,
    })
}

/// Every subject of a dataset, prepared with one shared configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub dataset: String,
    pub config: PipelineConfig,
    pub subjects: Vec<PreparedSubject>,
}

impl PreparedDataset {
    pub fn prepare(dataset: &str, records: &[SubjectRecord], config: &PipelineConfig) -> Result<Self> {
        let subjects = records.iter().map(|r| prepare(r, config)).collect::<Result<Vec<_>>>()?;
        Ok(PreparedDataset {
            dataset: dataset.to_string(),
            config: config.clone(),
            subjects,
        })
    }

    pub fn subject(&self, id: &str) -> Option<&PreparedSubject> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn n_channels(&self) -> usize {
        self.subjects.first().map_or(0, PreparedSubject::n_channels)
    }
}
