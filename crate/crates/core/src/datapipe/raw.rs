use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::SensorSequence;

/// One scalar sensor stream the pipeline expects, at an integer rate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub rate_hz: u32,
}

impl ChannelSpec {
    pub fn new(name: impl Into<String>, rate_hz: u32) -> Self {
        ChannelSpec {
            name: name.into(),
            rate_hz,
        }
    }
}

/// Channels of the smartwatch (Table-1 order) followed by the smartphone.
///
/// Multi-axis sensors are split into one stream per axis. The flattened
/// width of one second is 4 + 4 + 3·32 + 1 + 64 = 169 smartwatch values
/// plus 26·5 = 130 smartphone values, 299 in all.
pub fn table1_channels() -> Vec<ChannelSpec> {
    let mut ch = vec![
        ChannelSpec::new("watch.gsr", 4),
        ChannelSpec::new("watch.skin_temp", 4),
        ChannelSpec::new("watch.accel.x", 32),
        ChannelSpec::new("watch.accel.y", 32),
        ChannelSpec::new("watch.accel.z", 32),
        ChannelSpec::new("watch.heart_rate", 1),
        ChannelSpec::new("watch.bvp", 64),
    ];
    let phone: [(&str, &[&str]); 13] = [
        ("humidity", &[""]),
        ("illuminance", &[""]),
        ("light", &["r", "g", "b", "w"]),
        ("ambient_temp", &[""]),
        ("gravity", &["x", "y", "z"]),
        ("angular_velocity", &["x", "y", "z"]),
        ("orientation", &["x", "y", "z"]),
        ("accel", &["x", "y", "z"]),
        ("linear_accel", &["x", "y", "z"]),
        ("air_pressure", &[""]),
        ("proximity", &[""]),
        ("wifi_strength", &[""]),
        ("magnetic_field", &[""]),
    ];
    for (name, axes) in phone {
        for axis in axes {
            let full = if axis.is_empty() {
                format!("phone.{name}")
            } else {
                format!("phone.{name}.{axis}")
            };
            ch.push(ChannelSpec::new(full, 5));
        }
    }
    ch
}

/// One channel's samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub rate_hz: u32,
    /// Timestamp of the first sample, in seconds.
    pub start: f64,
    pub samples: Vec<f64>,
}

/// All streams of one recording session.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub subject: u32,
    pub label: Option<usize>,
    pub streams: BTreeMap<String, Stream>,
}

/// Aligns the streams on their common time span and cuts consecutive,
/// non-overlapping windows of `window_seconds` one-second instances.
///
/// Within an instance, channels are concatenated in `channels` order and
/// each channel contributes its samples for that second in time order.
/// A trailing partial window is dropped.
pub fn align_and_window(
    rec: &RawRecording,
    channels: &[ChannelSpec],
    window_seconds: usize,
) -> Result<Vec<SensorSequence>> {
    if channels.is_empty() || window_seconds == 0 {
        return Err(Error::invalid("need at least one channel and a positive window"));
    }
    let mut streams = Vec::with_capacity(channels.len());
    for ch in channels {
        let s = rec.streams.get(&ch.name).ok_or_else(|| {
            Error::invalid(format!("subject {}: missing channel {}", rec.subject, ch.name))
        })?;
        if s.rate_hz == 0 || s.rate_hz != ch.rate_hz {
            return Err(Error::invalid(format!(
                "channel {} sampled at {} Hz, expected {} Hz",
                ch.name, s.rate_hz, ch.rate_hz
            )));
        }
        if !s.start.is_finite() {
            return Err(Error::invalid(format!("channel {} has no valid start time", ch.name)));
        }
        streams.push(s);
    }

    let t0 = streams.iter().map(|s| s.start).fold(f64::NEG_INFINITY, f64::max);
    let mut offsets = Vec::with_capacity(streams.len());
    let mut seconds = usize::MAX;
    for s in &streams {
        let off = ((t0 - s.start) * s.rate_hz as f64).round() as usize;
        let available = s.samples.len().saturating_sub(off) / s.rate_hz as usize;
        seconds = seconds.min(available);
        offsets.push(off);
    }

    let width: usize = channels.iter().map(|c| c.rate_hz as usize).sum();
    let windows = seconds / window_seconds;
    let mut out = Vec::with_capacity(windows);
    for w in 0..windows {
        let mut tokens = Matrix::zeros(window_seconds, width);
        for sec in 0..window_seconds {
            let abs_sec = w * window_seconds + sec;
            let row = tokens.row_mut(sec);
            let mut col = 0;
            for (s, &off) in streams.iter().zip(&offsets) {
                let rate = s.rate_hz as usize;
                let from = off + abs_sec * rate;
                row[col..col + rate].copy_from_slice(&s.samples[from..from + rate]);
                col += rate;
            }
        }
        if !tokens.all_finite() {
            return Err(Error::numeric(format!(
                "subject {}: non-finite sample in window {w}",
                rec.subject
            )));
        }
        out.push(SensorSequence::new(tokens, rec.subject, rec.label));
    }
    Ok(out)
}

/// On-disk description of a raw dataset.
///
/// ```toml
/// name = "diab"
/// class_names = ["healthy", "t1d", "t2d"]
/// healthy_class = 0
///
/// [[channels]]
/// name = "watch.gsr"
/// rate_hz = 4
///
/// [[recordings]]
/// subject = 1
/// label = 0
/// streams = [{ channel = "watch.gsr", start = 0.0, file = "s1/gsr.txt" }]
/// ```
///
/// Sample files hold whitespace-separated numbers; paths are relative to the
/// manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawManifest {
    pub name: String,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub healthy_class: usize,
    /// Omitted means the Table-1 channel set.
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    pub recordings: Vec<RawRecordingEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecordingEntry {
    pub subject: u32,
    pub label: usize,
    pub streams: Vec<RawStreamEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawStreamEntry {
    pub channel: String,
    pub start: f64,
    pub file: PathBuf,
}

/// Parses a raw manifest and loads every referenced stream.
pub fn load_raw_manifest(path: impl AsRef<Path>) -> Result<(RawManifest, Vec<RawRecording>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: RawManifest =
        toml::from_str(&text).map_err(|e| Error::format(0, format!("{}: {e}", path.display())))?;
    if manifest.channels.is_empty() {
        manifest.channels = table1_channels();
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let rates: BTreeMap<&str, u32> = manifest
        .channels
        .iter()
        .map(|c| (c.name.as_str(), c.rate_hz))
        .collect();
    let mut recordings = Vec::with_capacity(manifest.recordings.len());
    for entry in &manifest.recordings {
        if entry.label >= manifest.class_names.len() {
            return Err(Error::invalid(format!(
                "subject {} has label {} but only {} classes are named",
                entry.subject,
                entry.label,
                manifest.class_names.len()
            )));
        }
        let mut streams = BTreeMap::new();
        for s in &entry.streams {
            let rate = *rates.get(s.channel.as_str()).ok_or_else(|| {
                Error::invalid(format!("stream for undeclared channel {}", s.channel))
            })?;
            let file = base.join(&s.file);
            let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
            let samples = text
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| Error::invalid(format!("{}: bad sample {tok:?}", file.display())))
                })
                .collect::<Result<Vec<f64>>>()?;
            streams.insert(
                s.channel.clone(),
                Stream {
                    rate_hz: rate,
                    start: s.start,
                    samples,
                },
            );
        }
        recordings.push(RawRecording {
            subject: entry.subject,
            label: Some(entry.label),
            streams,
        });
    }
    Ok((manifest, recordings))
}
