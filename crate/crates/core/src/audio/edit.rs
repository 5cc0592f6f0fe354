use std::f64::consts::{FRAC_PI_2, PI};

use super::{seconds_to_samples, Alignment, AudioError, Waveform, TIME_EPS};

pub const DEFAULT_FADE_MS: f64 = 10.0;

/// Equal-power crossfade length used at every loop joint.
const CROSSFADE_S: f64 = 0.010;

/// Shortest phone that can be prolonged.
const MIN_PROLONG_SEGMENT_S: f64 = 0.040;

fn check_duration(d: f64) -> Result<(), AudioError> {
    if d.is_finite() && d >= 0.0 {
        Ok(())
    } else {
        Err(AudioError::InvalidDuration(d))
    }
}

fn to_i16(x: f64) -> i16 {
    x.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Inserts `duration_s` of silence at `boundary_s`, with raised-cosine fades
/// of `fade_ms` on the audio either side.
///
/// The output is exactly `round(duration_s * sample_rate)` samples longer.
/// Intervals starting at or after the boundary move by that many samples.
/// A zero duration returns the input unchanged.
pub fn insert_pause(
    w: &Waveform,
    a: &Alignment,
    boundary_s: f64,
    duration_s: f64,
    fade_ms: f64,
) -> Result<(Waveform, Alignment), AudioError> {
    check_duration(duration_s)?;
    check_duration(fade_ms)?;
    a.check(w.duration_s())?;
    if !(boundary_s.is_finite() && -TIME_EPS <= boundary_s && boundary_s <= w.duration_s() + TIME_EPS) {
        return Err(AudioError::OutOfRange(format!(
            "boundary {boundary_s}s outside [0, {}]s",
            w.duration_s()
        )));
    }
    let tol = 0.5 / w.sample_rate as f64;
    if let Some(iv) = a.intervals.iter().find(|iv| iv.start_s + tol < boundary_s && boundary_s < iv.end_s - tol) {
        return Err(AudioError::BoundaryInsidePhone {
            boundary_s,
            phone: iv.phone.clone(),
            start_s: iv.start_s,
            end_s: iv.end_s,
        });
    }
    let n = w.to_samples(duration_s);
    if n == 0 {
        return Ok((w.clone(), a.clone()));
    }

    let pos = w.to_samples(boundary_s).min(w.len());
    let fade = w.to_samples(fade_ms / 1000.0);
    let mut samples = Vec::with_capacity(w.len() + n);
    samples.extend_from_slice(&w.samples[..pos]);
    let out_fade = fade.min(pos);
    for k in 0..out_fade {
        let i = pos - out_fade + k;
        let g = 0.5 * (1.0 + (PI * (k + 1) as f64 / out_fade as f64).cos());
        samples[i] = to_i16(samples[i] as f64 * g);
    }
    samples.resize(pos + n, 0);
    let in_fade = fade.min(w.len() - pos);
    for (k, &s) in w.samples[pos..].iter().enumerate() {
        let g = if k < in_fade { 0.5 * (1.0 - (PI * k as f64 / in_fade as f64).cos()) } else { 1.0 };
        samples.push(to_i16(s as f64 * g));
    }

    let shift = w.to_seconds(n);
    let mut out_a = a.clone();
    for iv in out_a.intervals.iter_mut().filter(|iv| iv.start_s >= boundary_s - tol) {
        iv.start_s += shift;
        iv.end_s += shift;
    }
    Ok((Waveform { samples, sample_rate: w.sample_rate }, out_a))
}

/// Lengthens phone `index` by `extra_s` by looping the central half of its
/// segment with 10 ms equal-power crossfades.
///
/// Each full loop adds one chunk minus the crossfade; the last pass uses a
/// suffix of the chunk so that exactly `round(extra_s * sample_rate)`
/// samples are added and the loop always ends where the original chunk
/// ends. The phone's end and every later interval move by that amount.
pub fn prolong_phone(
    w: &Waveform,
    a: &Alignment,
    index: usize,
    extra_s: f64,
) -> Result<(Waveform, Alignment), AudioError> {
    check_duration(extra_s)?;
    if extra_s == 0.0 {
        return Err(AudioError::InvalidDuration(extra_s));
    }
    a.check(w.duration_s())?;
    let iv = a
        .intervals
        .get(index)
        .ok_or(AudioError::IndexOutOfRange { index, len: a.intervals.len() })?;
    let too_short = AudioError::SegmentTooShort { index, duration_s: iv.duration_s() };
    if iv.duration_s() < MIN_PROLONG_SEGMENT_S - TIME_EPS {
        return Err(too_short);
    }
    let s = w.to_samples(iv.start_s).min(w.len());
    let e = w.to_samples(iv.end_s).min(w.len());
    let seg = e.saturating_sub(s);
    let c0 = s + seg / 4;
    let c1 = e - seg / 4;
    let chunk = c1 - c0;
    let xfade = seconds_to_samples(CROSSFADE_S, w.sample_rate).min(chunk / 2).max(1);
    if chunk < 2 || chunk <= xfade {
        return Err(too_short);
    }
    let step = chunk - xfade;
    let added = w.to_samples(extra_s);

    let mut out: Vec<f64> = Vec::with_capacity(w.len() + added);
    out.extend(w.samples[..c1].iter().map(|&x| x as f64));
    let mut remaining = added;
    while remaining > 0 {
        let add = remaining.min(step);
        let piece = &w.samples[c1 - add - xfade..c1];
        let tail = out.len() - xfade;
        for k in 0..xfade {
            let theta = FRAC_PI_2 * (k as f64 + 0.5) / xfade as f64;
            out[tail + k] = out[tail + k] * theta.cos() + piece[k] as f64 * theta.sin();
        }
        out.extend(piece[xfade..].iter().map(|&x| x as f64));
        remaining -= add;
    }
    out.extend(w.samples[c1..].iter().map(|&x| x as f64));

    let shift = w.to_seconds(added);
    let mut out_a = a.clone();
    out_a.intervals[index].end_s += shift;
    for later in &mut out_a.intervals[index + 1..] {
        later.start_s += shift;
        later.end_s += shift;
    }
    let samples = out.into_iter().map(to_i16).collect();
    Ok((Waveform { samples, sample_rate: w.sample_rate }, out_a))
}
