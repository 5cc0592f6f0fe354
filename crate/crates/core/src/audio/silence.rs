use super::Waveform;

pub const DEFAULT_FRAME_MS: f64 = 20.0;
pub const DEFAULT_THRESHOLD_DB: f64 = -40.0;

const FULL_SCALE: f64 = 32768.0;

/// Silent stretches as `[start_s, end_s)` pairs.
///
/// Frames of `frame_ms` whose RMS is below `threshold_db` (relative to full
/// scale) are silent; maximal runs of silent frames form spans. Each span
/// edge that borders sound is then moved to sample resolution: to just
/// after the last sample, or onto the first sample, whose magnitude reaches
/// the threshold amplitude within one frame of the edge.
pub fn detect_silence(w: &Waveform, frame_ms: f64, threshold_db: f64) -> Vec<(f64, f64)> {
    let n = w.len();
    if n == 0 {
        return Vec::new();
    }
    let frame = w.to_samples(frame_ms / 1000.0).max(1);
    let amp = FULL_SCALE * 10f64.powf(threshold_db / 20.0);
    let silent: Vec<bool> = w
        .samples
        .chunks(frame)
        .map(|c| {
            let energy: f64 = c.iter().map(|&x| (x as f64) * (x as f64)).sum();
            (energy / c.len() as f64).sqrt() < amp
        })
        .collect();
    let loud = |i: usize| (w.samples[i] as f64).abs() >= amp;

    let mut spans = Vec::new();
    let mut f = 0;
    while f < silent.len() {
        if !silent[f] {
            f += 1;
            continue;
        }
        let first = f;
        while f < silent.len() && silent[f] {
            f += 1;
        }
        let (s0, e0) = (first * frame, (f * frame).min(n));
        let start = if s0 == 0 {
            0
        } else {
            let lo = s0.saturating_sub(frame);
            let hi = (s0 + frame).min(e0);
            (lo..hi).rev().find(|&i| loud(i)).map_or(lo, |i| i + 1)
        };
        let end = if e0 == n {
            n
        } else {
            let lo = e0.saturating_sub(frame).max(start);
            let hi = (e0 + frame).min(n);
            (lo..hi).find(|&i| loud(i)).unwrap_or(hi)
        };
        if start < end {
            spans.push((w.to_seconds(start), w.to_seconds(end)));
        }
    }
    spans
}
