use crate::error::{Error, Result};
use crate::signal::{NormStats, PreparedDataset, SegmentRef};
use crate::tensor::Scalar;

/// Which optional rows a model wants stacked under the sensor channels of each snippet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BatchLayout {
    /// Raw PPG as an extra channel, plus per-snippet FFT magnitudes.
    pub ppg: bool,
    /// Normalized heart rate as an extra constant channel, zeroed after the init snippets.
    pub hr_channel: bool,
}

/// Segments gathered into dense arrays. Snippet rows are segment-major: row `b * n + k`.
#[derive(Clone, Debug)]
pub struct SegmentBatch<T> {
    pub refs: Vec<SegmentRef>,
    pub batch: usize,
    /// Snippets per segment held in this batch (all of them, or only the init part).
    pub n: usize,
    pub init: usize,
    pub sensor_channels: usize,
    pub len: usize,
    /// `[batch * n, channels, len]` with channels = sensors, then PPG, then HR when requested.
    pub snippets: Vec<T>,
    pub channels: usize,
    /// `[batch * n, len / 2]`, present with a PPG layout.
    pub fft: Option<Vec<T>>,
    /// Per-channel sensor means, `[batch, n, sensor_channels]`.
    pub means: Vec<T>,
    /// Normalized heart rate per snippet, `[batch, n]`.
    pub hr_norm: Vec<T>,
    /// Heart rate per snippet in beats/minute, `[batch, n]`.
    pub hr_bpm: Vec<f64>,
    /// Snippet start times in seconds, `[batch, n]`.
    pub start_s: Vec<f64>,
    pub hr_stats: NormStats,
}

impl<T: Scalar> SegmentBatch<T> {
    /// Builds a batch from whole segments, or from their first `limit` snippets.
    pub fn build(
        data: &PreparedDataset,
        refs: &[SegmentRef],
        layout: BatchLayout,
        hr_stats: NormStats,
        limit: Option<usize>,
    ) -> Result<Self> {
        let first = refs
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty segment batch".into()))?;
        let s0 = subject(data, *first)?;
        let seg0 = segment(data, *first)?;
        let n = limit.unwrap_or(seg0.n_snippets).min(seg0.n_snippets);
        let init = seg0.init_len;
        let sensor_channels = s0.n_channels();
        let len = s0.snippet_len;
        let channels = sensor_channels + layout.ppg as usize + layout.hr_channel as usize;
        let rows = refs.len() * n;

        let mut snippets = Vec::with_capacity(rows * channels * len);
        let mut fft = layout.ppg.then(|| Vec::with_capacity(rows * len / 2));
        let mut means = Vec::with_capacity(rows * sensor_channels);
        let mut hr_norm = Vec::with_capacity(rows);
        let mut hr_bpm = Vec::with_capacity(rows);
        let mut start_s = Vec::with_capacity(rows);

        for &r in refs {
            let s = subject(data, r)?;
            let seg = segment(data, r)?;
            if s.n_channels() != sensor_channels || s.snippet_len != len || seg.n_snippets < n || seg.init_len != init {
                return Err(Error::shape(
                    "segment batch",
                    format!("subject {} does not match the geometry of subject {}", s.subject_id, s0.subject_id),
                ));
            }
            for (pos, k) in seg.snippet_indices().take(n).enumerate() {
                let bpm = s.snippet_hr(k)?;
                let z = hr_stats.apply(bpm);
                snippets.extend(s.snippet_matrix(k).into_iter().map(T::lit));
                if layout.ppg {
                    let w = s.ppg_window(k).ok_or_else(|| {
                        Error::MissingData(format!("subject {} has no PPG channel", s.subject_id))
                    })?;
                    snippets.extend(w.iter().map(|&v| T::lit(v)));
                    let mags = &s.ppg_fft.as_ref().expect("ppg fft alongside ppg")[k];
                    fft.as_mut().expect("ppg layout").extend(mags.iter().map(|&v| T::lit(v)));
                }
                if layout.hr_channel {
                    let v = if pos < init { z } else { 0.0 };
                    snippets.extend(std::iter::repeat_n(T::lit(v), len));
                }
                means.extend(s.snippet_channel_means(k).into_iter().map(T::lit));
                hr_norm.push(T::lit(z));
                hr_bpm.push(bpm);
                start_s.push(s.snippets[k].start_s);
            }
        }
        Ok(SegmentBatch {
            refs: refs.to_vec(),
            batch: refs.len(),
            n,
            init,
            sensor_channels,
            len,
            snippets,
            channels,
            fft,
            means,
            hr_norm,
            hr_bpm,
            start_s,
            hr_stats,
        })
    }

    pub fn prediction_len(&self) -> usize {
        self.n - self.init
    }

    /// Normalized heart rate of the prediction snippets, `[batch, n - init]`.
    pub fn target_norm(&self) -> Vec<T> {
        self.hr_norm
            .chunks(self.n)
            .flat_map(|row| row[self.init..].iter().copied())
            .collect()
    }

    pub fn target_bpm(&self) -> Vec<f64> {
        self.hr_bpm
            .chunks(self.n)
            .flat_map(|row| row[self.init..].iter().copied())
            .collect()
    }
}

fn subject(data: &PreparedDataset, r: SegmentRef) -> Result<&crate::signal::PreparedSubject> {
    data.subjects
        .get(r.subject)
        .ok_or_else(|| Error::InvalidArgument(format!("subject index {} out of range", r.subject)))
}

fn segment(data: &PreparedDataset, r: SegmentRef) -> Result<&crate::signal::Segment> {
    let s = subject(data, r)?;
    s.segments.get(r.segment).ok_or_else(|| {
        Error::InvalidArgument(format!("subject {} has no segment {}", s.subject_id, r.segment))
    })
}

/// Global heart-rate statistics over the snippets of the given segments.
pub fn hr_stats_of(data: &PreparedDataset, refs: &[SegmentRef]) -> Result<NormStats> {
    let mut values = Vec::new();
    for &r in refs {
        let s = subject(data, r)?;
        for k in segment(data, r)?.snippet_indices() {
            values.push(s.snippet_hr(k)?);
        }
    }
    if values.is_empty() {
        return Err(Error::MissingData("no heart-rate values to normalize with".into()));
    }
    Ok(NormStats::of(&values))
}
