//! Synthetic population in which each subject's heart-rate response to movement is
//! scaled by a per-subject conditioning factor.
//!
//! Heart rate follows `dH/dt = ρ (H_target − H)` with `H_target = hr_rest + c · a(t)`,
//! where `a(t)` is a piecewise-constant activity intensity in beats/minute-equivalent
//! units. Accelerometer channels are zero-mean Gaussian noise with standard deviation
//! `accel_gain · a(t)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{ChannelSeries, SubjectRecord, HR_CHANNEL, PPG_CHANNEL};

pub const SYNTH_CHANNELS: [&str; 6] = [
    "chest_acc_x",
    "chest_acc_y",
    "chest_acc_z",
    "wrist_acc_x",
    "wrist_acc_y",
    "wrist_acc_z",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `(duration_s, intensity)` blocks, repeated until the series is long enough.
    Fixed(Vec<(u32, f64)>),
    /// Blocks with intensity drawn from `levels` and whole-second durations drawn
    /// uniformly from `[min_block_s, max_block_s]`.
    Random {
        levels: Vec<f64>,
        min_block_s: u32,
        max_block_s: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub duration_s: u32,
    pub conditioning_range: [f64; 2],
    pub schedule: Schedule,
    /// Standard deviation of the additive heart-rate observation noise, beats/minute.
    pub noise_bpm: f64,
    pub hr_rest: f64,
    /// Recovery rate ρ in 1/s.
    pub recovery_rate: f64,
    /// Accelerometer standard deviation per unit of intensity.
    pub accel_gain: f64,
    pub rate_hz: f64,
    pub hr_rate_hz: f64,
    /// Also emit a PPG channel: a pulse wave at the heart-rate frequency plus motion noise.
    pub with_ppg: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 8,
            duration_s: 1200,
            conditioning_range: [0.5, 2.0],
            schedule: Schedule::Random {
                levels: vec![0.0, 10.0, 25.0, 40.0, 50.0],
                min_block_s: 30,
                max_block_s: 120,
            },
            noise_bpm: 1.0,
            hr_rest: 65.0,
            recovery_rate: 0.05,
            accel_gain: 0.02,
            rate_hz: 32.0,
            hr_rate_hz: 1.0,
            with_ppg: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SynthConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let [lo, hi] = self.conditioning_range;
        if !(lo < hi) {
            return bad("conditioning_range needs c_min < c_max");
        }
        if !(self.rate_hz > 0.0 && self.hr_rate_hz > 0.0 && self.recovery_rate > 0.0) {
            return bad("rates must be positive");
        }
        if self.n_subjects == 0 || self.duration_s == 0 {
            return bad("need at least one subject and a positive duration");
        }
        match &self.schedule {
            Schedule::Fixed(blocks) if blocks.is_empty() || blocks.iter().all(|b| b.0 == 0) => {
                bad("fixed schedule has no time in it")
            }
            Schedule::Random { levels, min_block_s, max_block_s }
                if levels.is_empty() || *min_block_s == 0 || min_block_s > max_block_s =>
            {
                bad("random schedule needs levels and 0 < min_block_s <= max_block_s")
            }
            _ => Ok(()),
        }
    }
}

/// Intensity per whole second.
pub fn intensity_per_second<R: Rng>(schedule: &Schedule, duration_s: u32, rng: &mut R) -> Vec<f64> {
    let n = duration_s as usize;
    let mut out = Vec::with_capacity(n);
    match schedule {
        Schedule::Fixed(blocks) => {
            while out.len() < n {
                for &(d, a) in blocks {
                    out.extend(std::iter::repeat_n(a, d as usize));
                }
            }
        }
        Schedule::Random { levels, min_block_s, max_block_s } => {
            while out.len() < n {
                let a = levels[rng.gen_range(0..levels.len())];
                let d = rng.gen_range(*min_block_s..=*max_block_s);
                out.extend(std::iter::repeat_n(a, d as usize));
            }
        }
    }
    out.truncate(n);
    out
}

/// Exact solution of the heart-rate ODE at every whole second, for an intensity that is
/// constant within each second.
pub fn integrate_hr(intensity: &[f64], c: f64, hr_rest: f64, rho: f64, h0: f64) -> Vec<f64> {
    let decay = (-rho).exp();
    let mut h = h0;
    let mut out = Vec::with_capacity(intensity.len() + 1);
    out.push(h);
    for &a in intensity {
        let target = hr_rest + c * a;
        h = target + (h - target) * decay;
        out.push(h);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSubject {
    pub subject_id: String,
    pub conditioning: f64,
}

/// Generates the population; also returns each subject's conditioning factor.
pub fn generate(cfg: &SynthConfig) -> Result<(Vec<SubjectRecord>, Vec<SynthSubject>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut records = Vec::with_capacity(cfg.n_subjects);
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    let width = cfg.n_subjects.to_string().len().max(2);
    for s in 0..cfg.n_subjects {
        let id = format!("s{:0width$}", s + 1);
        let c = rng.gen_range(cfg.conditioning_range[0]..cfg.conditioning_range[1]);
        let a = intensity_per_second(&cfg.schedule, cfg.duration_s, &mut rng);
        let hr_exact = integrate_hr(&a, c, cfg.hr_rest, cfg.recovery_rate, cfg.hr_rest);

        let n_acc = (cfg.duration_s as f64 * cfg.rate_hz).round() as usize;
        let intensity_at = |t: f64| a[(t as usize).min(a.len() - 1)];
        let mut channels: Vec<ChannelSeries> = SYNTH_CHANNELS
            .iter()
            .map(|name| {
                let values = (0..n_acc)
                    .map(|k| {
                        let t = k as f64 / cfg.rate_hz;
                        cfg.accel_gain * intensity_at(t) * unit.sample(&mut rng)
                    })
                    .collect();
                ChannelSeries::new(*name, cfg.rate_hz, values).with_units("g")
            })
            .collect();

        let n_hr = (cfg.duration_s as f64 * cfg.hr_rate_hz).round() as usize;
        let hr_at = |t: f64| {
            let i = (t.floor() as usize).min(hr_exact.len() - 2);
            let frac = t - i as f64;
            let target = cfg.hr_rest + c * a[i];
            target + (hr_exact[i] - target) * (-cfg.recovery_rate * frac).exp()
        };
        let hr: Vec<f64> = (0..n_hr)
            .map(|k| hr_at(k as f64 / cfg.hr_rate_hz) + cfg.noise_bpm * unit.sample(&mut rng))
            .collect();
        channels.push(ChannelSeries::new(HR_CHANNEL, cfg.hr_rate_hz, hr).with_units("bpm"));

        if cfg.with_ppg {
            let mut phase = 0.0f64;
            let dt = 1.0 / cfg.rate_hz;
            let values = (0..n_acc)
                .map(|k| {
                    let t = k as f64 * dt;
                    phase += 2.0 * std::f64::consts::PI * hr_at(t) / 60.0 * dt;
                    phase.sin() + 0.02 * intensity_at(t) * unit.sample(&mut rng)
                })
                .collect();
            channels.push(ChannelSeries::new(PPG_CHANNEL, cfg.rate_hz, values).with_units("a.u."));
        }
        records.push(SubjectRecord {
            subject_id: id.clone(),
            dataset: "synth".into(),
            channels,
        });
        subjects.push(SynthSubject {
            subject_id: id,
            conditioning: c,
        });
    }
    Ok((records, subjects))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_converges_exponentially() {
        let rho = 0.1;
        let a = vec![0.0; 60];
        let h = integrate_hr(&a, 1.0, 60.0, rho, 100.0);
        let t = (5.0 / rho) as usize;
        assert!((h[t] - 60.0).abs() < 0.01 * 40.0);
        // Closed form at every second.
        for (k, v) in h.iter().enumerate() {
            assert!((v - (60.0 + 40.0 * (-rho * k as f64).exp())).abs() < 1e-9);
        }
    }

    #[test]
    fn steady_state_gap_scales_with_conditioning() {
        let a = vec![30.0; 400];
        let h1 = integrate_hr(&a, 1.0, 60.0, 0.05, 60.0);
        let h2 = integrate_hr(&a, 2.0, 60.0, 0.05, 60.0);
        assert!((h2[400] - h1[400] - 30.0).abs() < 1e-6);
    }

    #[test]
    fn accelerometer_spread_tracks_intensity() {
        let cfg = SynthConfig {
            n_subjects: 1,
            duration_s: 64,
            schedule: Schedule::Fixed(vec![(16, 10.0), (16, 40.0)]),
            noise_bpm: 0.0,
            ..Default::default()
        };
        let (recs, _) = generate(&cfg).unwrap();
        let win = 4 * 32;
        for w in 0..16 {
            let level = if (w * 4 / 16) % 2 == 0 { 10.0 } else { 40.0 };
            let vals: Vec<f64> = recs[0].channels[..6]
                .iter()
                .flat_map(|c| c.values[w * win..(w + 1) * win].iter().copied())
                .collect();
            let sd = (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt();
            let expected = cfg.accel_gain * level;
            assert!((sd / expected - 1.0).abs() < 0.1, "window {w}: {sd} vs {expected}");
        }
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig {
            n_subjects: 2,
            duration_s: 30,
            ..Default::default()
        };
        let (a, ca) = generate(&cfg).unwrap();
        let (b, cb) = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert!(ca.iter().all(|s| (0.5..2.0).contains(&s.conditioning)));
        assert_eq!(a[0].hr().unwrap().values.len(), 30);
        assert_eq!(a[0].channels[0].values.len(), 30 * 32);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.conditioning_range = [2.0, 1.0];
        assert!(generate(&cfg).is_err());
    }
}
