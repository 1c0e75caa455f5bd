//! Coincidence histograms between the two HBT channels.
//!
//! Delay is `t(second stream) − t(first stream)` in integer picoseconds and
//! lands in bin `floor(d / w)`; bins run from `−n` to `n − 1` with
//! `n = ceil(window / w)`, so zero delay sits on the boundary between the
//! two central bins and accepted delays satisfy `−n w ≤ d < n w`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::timetags::TimeTagStream;
use crate::{Error, Result, PS_PER_NS, PS_PER_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistogramMode {
    /// Each start is paired with the next event on the other channel only.
    StartStop,
    /// Every pair within the window.
    #[default]
    Full,
}

impl HistogramMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            HistogramMode::StartStop => "start-stop",
            HistogramMode::Full => "full",
        }
    }
}

impl FromStr for HistogramMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start-stop" => Ok(HistogramMode::StartStop),
            "full" => Ok(HistogramMode::Full),
            other => Err(Error::Invalid(format!("unknown histogram mode {other:?}"))),
        }
    }
}

/// Bin width and half-window, both in integer picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binning {
    pub width_ps: u64,
    pub bins_per_side: usize,
}

impl Binning {
    pub fn new(width_ns: f64, window_ns: f64) -> Result<Self> {
        if !(width_ns.is_finite() && window_ns.is_finite()) {
            return Err(Error::Invalid("bin width and window must be finite".into()));
        }
        let width_ps = (width_ns * PS_PER_NS).round();
        let window_ps = (window_ns * PS_PER_NS).round();
        if width_ps < 1.0 {
            return Err(Error::Invalid(format!("bin width {width_ns} ns below 1 ps")));
        }
        if window_ps < width_ps {
            return Err(Error::Invalid(format!(
                "window {window_ns} ns smaller than bin width {width_ns} ns"
            )));
        }
        let width_ps = width_ps as u64;
        let bins_per_side = (window_ps as u64).div_ceil(width_ps) as usize;
        Ok(Self {
            width_ps,
            bins_per_side,
        })
    }

    pub fn span_ps(&self) -> i64 {
        self.width_ps as i64 * self.bins_per_side as i64
    }

    pub fn width_ns(&self) -> f64 {
        self.width_ps as f64 / PS_PER_NS
    }

    pub fn window_ns(&self) -> f64 {
        self.span_ps() as f64 / PS_PER_NS
    }

    pub fn n_bins(&self) -> usize {
        2 * self.bins_per_side
    }

    /// Storage index of a delay, or `None` outside the window.
    #[inline]
    pub fn index(&self, delay_ps: i64) -> Option<usize> {
        let span = self.span_ps();
        if delay_ps < -span || delay_ps >= span {
            return None;
        }
        let k = delay_ps.div_euclid(self.width_ps as i64);
        Some((k + self.bins_per_side as i64) as usize)
    }

    /// Centre of storage bin `i`, in ns.
    pub fn center_ns(&self, i: usize) -> f64 {
        let k = i as f64 - self.bins_per_side as f64;
        (k + 0.5) * self.width_ns()
    }
}

/// Acquisition metadata entering the g² normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    /// Integration time T (s).
    pub duration: f64,
    /// Count rate of the first stream (counts/s).
    pub r1: f64,
    /// Count rate of the second stream (counts/s).
    pub r2: f64,
}

impl Acquisition {
    /// Rates recomputed from the streams themselves.
    pub fn from_streams(s1: &TimeTagStream, s2: &TimeTagStream) -> Self {
        let duration_ps = s1.duration_ps().max(s2.duration_ps());
        let duration = duration_ps as f64 / PS_PER_S;
        let rate = |s: &TimeTagStream| {
            if duration > 0.0 {
                s.len() as f64 / duration
            } else {
                0.0
            }
        };
        Self {
            duration,
            r1: rate(s1),
            r2: rate(s2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    pub binning: Binning,
    /// Counts by storage index; see [`Binning::index`].
    pub counts: Vec<u64>,
    pub acquisition: Acquisition,
    pub mode: HistogramMode,
}

impl CoincidenceHistogram {
    pub fn empty(binning: Binning, acquisition: Acquisition, mode: HistogramMode) -> Self {
        Self {
            binning,
            counts: vec![0; binning.n_bins()],
            acquisition,
            mode,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Count at signed bin `k` (`−n ≤ k < n`).
    pub fn at(&self, k: i64) -> u64 {
        self.counts[(k + self.binning.bins_per_side as i64) as usize]
    }

    pub fn centers_ns(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|i| self.binning.center_ns(i)).collect()
    }

    /// Expected coincidences per bin for uncorrelated light, R₁R₂Tw.
    pub fn poisson_level(&self) -> f64 {
        let a = &self.acquisition;
        a.r1 * a.r2 * a.duration * self.binning.width_ns() * 1e-9
    }

    /// Bin-wise sum; binning and mode must match.
    pub fn merge(&mut self, other: &CoincidenceHistogram) -> Result<()> {
        if self.binning != other.binning || self.mode != other.mode {
            return Err(Error::Invalid("cannot merge histograms with different binning".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Every pair within the window, one forward sweep over both streams.
pub fn full_correlation_histogram(
    s1: &TimeTagStream,
    s2: &TimeTagStream,
    width_ns: f64,
    window_ns: f64,
) -> Result<CoincidenceHistogram> {
    let binning = Binning::new(width_ns, window_ns)?;
    let mut h = CoincidenceHistogram::empty(binning, Acquisition::from_streams(s1, s2), HistogramMode::Full);
    accumulate_full(&s1.times(), &s2.times(), &binning, &mut h.counts);
    Ok(h)
}

fn accumulate_full(starts: &[u64], stops: &[u64], binning: &Binning, counts: &mut [u64]) {
    let span = binning.span_ps();
    let mut lo = 0usize;
    for &t1 in starts {
        let t1 = t1 as i64;
        while lo < stops.len() && (stops[lo] as i64) < t1 - span {
            lo += 1;
        }
        for &t2 in &stops[lo..] {
            let d = t2 as i64 - t1;
            if d >= span {
                break;
            }
            let k = d.div_euclid(binning.width_ps as i64) + binning.bins_per_side as i64;
            counts[k as usize] += 1;
        }
    }
}

/// Same result as [`full_correlation_histogram`], with the start stream cut
/// into `shards` contiguous pieces processed on separate threads and merged
/// by addition.
pub fn full_correlation_sharded(
    s1: &TimeTagStream,
    s2: &TimeTagStream,
    width_ns: f64,
    window_ns: f64,
    shards: usize,
) -> Result<CoincidenceHistogram> {
    let binning = Binning::new(width_ns, window_ns)?;
    let starts = s1.times();
    let stops = s2.times();
    let shards = shards.max(1);
    let chunk = starts.len().div_ceil(shards).max(1);
    let parts: Vec<Vec<u64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = starts
            .chunks(chunk)
            .map(|piece| {
                let stops = &stops;
                let binning = &binning;
                scope.spawn(move || {
                    let mut counts = vec![0u64; binning.n_bins()];
                    // Start the stop cursor near the shard instead of at zero.
                    let first = piece[0] as i64 - binning.span_ps();
                    let from = stops.partition_point(|&t| (t as i64) < first);
                    accumulate_full(piece, &stops[from..], binning, &mut counts);
                    counts
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("shard panicked")).collect()
    });
    let mut h = CoincidenceHistogram::empty(binning, Acquisition::from_streams(s1, s2), HistogramMode::Full);
    for part in parts {
        for (a, b) in h.counts.iter_mut().zip(part) {
            *a += b;
        }
    }
    Ok(h)
}

/// Start on one stream, stop on the next event of the other.
///
/// Positive delays: each event of `s1` paired with the first `s2` event at
/// or after it. Negative delays: each event of `s2` paired with the first
/// `s1` event strictly after it.
pub fn start_stop_histogram(
    s1: &TimeTagStream,
    s2: &TimeTagStream,
    width_ns: f64,
    window_ns: f64,
) -> Result<CoincidenceHistogram> {
    let binning = Binning::new(width_ns, window_ns)?;
    let mut h = CoincidenceHistogram::empty(
        binning,
        Acquisition::from_streams(s1, s2),
        HistogramMode::StartStop,
    );
    let a = s1.times();
    let b = s2.times();

    let mut j = 0usize;
    for &t in &a {
        while j < b.len() && b[j] < t {
            j += 1;
        }
        if j == b.len() {
            break;
        }
        if let Some(i) = binning.index(b[j] as i64 - t as i64) {
            h.counts[i] += 1;
        }
    }
    let mut i = 0usize;
    for &t in &b {
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        if i == a.len() {
            break;
        }
        if let Some(k) = binning.index(t as i64 - a[i] as i64) {
            h.counts[k] += 1;
        }
    }
    Ok(h)
}

pub fn histogram(
    s1: &TimeTagStream,
    s2: &TimeTagStream,
    width_ns: f64,
    window_ns: f64,
    mode: HistogramMode,
) -> Result<CoincidenceHistogram> {
    match mode {
        HistogramMode::Full => full_correlation_histogram(s1, s2, width_ns, window_ns),
        HistogramMode::StartStop => start_stop_histogram(s1, s2, width_ns, window_ns),
    }
}

/// A normalised g² curve with per-bin Poisson errors.
#[derive(Debug, Clone, PartialEq)]
pub struct G2Curve {
    /// Bin centres (ns).
    pub t: Vec<f64>,
    pub g2: Vec<f64>,
    pub stderr: Vec<f64>,
    pub counts: Vec<u64>,
    /// Bin width (ns).
    pub bin_width: f64,
    /// R₁R₂Tw, coincidences per bin for Poissonian light.
    pub norm: f64,
}

impl G2Curve {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Standard error with empty bins assigned the error of one count.
    pub fn weight_sigma(&self, i: usize) -> f64 {
        (self.counts[i].max(1) as f64).sqrt() / self.norm
    }

    /// Keep only bins whose centre satisfies `keep`.
    pub fn select(&self, keep: impl Fn(f64) -> bool) -> G2Curve {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.t[i])).collect();
        G2Curve {
            t: idx.iter().map(|&i| self.t[i]).collect(),
            g2: idx.iter().map(|&i| self.g2[i]).collect(),
            stderr: idx.iter().map(|&i| self.stderr[i]).collect(),
            counts: idx.iter().map(|&i| self.counts[i]).collect(),
            bin_width: self.bin_width,
            norm: self.norm,
        }
    }
}

/// g²(t) = c(t) / (R₁R₂Tw) with errors √c / (R₁R₂Tw).
pub fn normalize(h: &CoincidenceHistogram) -> Result<G2Curve> {
    let norm = h.poisson_level();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::Invalid(format!(
            "normalisation constant R1 R2 T w = {norm} must be positive"
        )));
    }
    Ok(G2Curve {
        t: h.centers_ns(),
        g2: h.counts.iter().map(|&c| c as f64 / norm).collect(),
        stderr: h.counts.iter().map(|&c| (c as f64).sqrt() / norm).collect(),
        counts: h.counts.clone(),
        bin_width: h.binning.width_ns(),
        norm,
    })
}

pub const HISTOGRAM_HEADER: &str = "# emitterlab coincidence histogram v1";
const COLUMNS: &str = "bin_center_ns,counts,g2,g2_stderr";

/// Text export: `#`-prefixed metadata block, then comma-separated columns.
pub fn write_histogram<W: Write>(h: &CoincidenceHistogram, mut dest: W) -> Result<()> {
    let a = &h.acquisition;
    let mut out = String::new();
    let _ = writeln!(out, "{HISTOGRAM_HEADER}");
    let _ = writeln!(out, "# T_s = {}", a.duration);
    let _ = writeln!(out, "# R1_per_s = {}", a.r1);
    let _ = writeln!(out, "# R2_per_s = {}", a.r2);
    let _ = writeln!(out, "# w_ps = {}", h.binning.width_ps);
    let _ = writeln!(out, "# bins_per_side = {}", h.binning.bins_per_side);
    let _ = writeln!(out, "# window_ns = {}", h.binning.window_ns());
    let _ = writeln!(out, "# mode = {}", h.mode.as_str());
    let norm = h.poisson_level();
    let _ = writeln!(out, "# norm = {norm}");
    let _ = writeln!(out, "{COLUMNS}");
    for (i, &c) in h.counts.iter().enumerate() {
        let (g2, err) = if norm > 0.0 {
            (c as f64 / norm, (c as f64).sqrt() / norm)
        } else {
            (f64::NAN, f64::NAN)
        };
        let _ = writeln!(out, "{},{},{},{}", h.binning.center_ns(i), c, g2, err);
    }
    dest.write_all(out.as_bytes())
        .map_err(|e| Error::Format(format!("write failed: {e}")))?;
    Ok(())
}

pub fn read_histogram<R: BufRead>(src: R) -> Result<CoincidenceHistogram> {
    let fmt = |m: String| Error::Format(m);
    let mut meta = std::collections::BTreeMap::new();
    let mut counts = Vec::new();
    let mut seen_header = false;
    let mut seen_columns = false;
    for (n, line) in src.lines().enumerate() {
        let line = line.map_err(|e| fmt(format!("read failed: {e}")))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if n == 0 {
            if line != HISTOGRAM_HEADER {
                return Err(fmt(format!("missing header line, found {line:?}")));
            }
            seen_header = true;
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| fmt(format!("line {}: bad metadata {line:?}", n + 1)))?;
            meta.insert(k.trim().to_string(), v.trim().to_string());
            continue;
        }
        if !seen_columns {
            if line != COLUMNS {
                return Err(fmt(format!("line {}: expected column header", n + 1)));
            }
            seen_columns = true;
            continue;
        }
        let c = line
            .split(',')
            .nth(1)
            .ok_or_else(|| fmt(format!("line {}: missing counts column", n + 1)))?;
        counts.push(
            c.parse::<u64>()
                .map_err(|e| fmt(format!("line {}: bad count {c:?}: {e}", n + 1)))?,
        );
    }
    if !seen_header {
        return Err(fmt("empty histogram file".into()));
    }
    let get = |k: &str| {
        meta.get(k)
            .ok_or_else(|| fmt(format!("missing metadata key {k}")))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse::<f64>()
            .map_err(|e| fmt(format!("bad value for {k}: {e}")))
    };
    let width_ps = get("w_ps")?
        .parse::<u64>()
        .map_err(|e| fmt(format!("bad w_ps: {e}")))?;
    let bins_per_side = get("bins_per_side")?
        .parse::<usize>()
        .map_err(|e| fmt(format!("bad bins_per_side: {e}")))?;
    if width_ps == 0 || counts.len() != 2 * bins_per_side {
        return Err(fmt(format!(
            "expected {} bins of nonzero width, found {}",
            2 * bins_per_side,
            counts.len()
        )));
    }
    let mode = get("mode")?.parse::<HistogramMode>().map_err(|e| fmt(e.to_string()))?;
    Ok(CoincidenceHistogram {
        binning: Binning {
            width_ps,
            bins_per_side,
        },
        counts,
        acquisition: Acquisition {
            duration: num("T_s")?,
            r1: num("R1_per_s")?,
            r2: num("R2_per_s")?,
        },
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timetags::TimeTagStream;

    fn stream(times_ns: &[f64], channel: u8) -> TimeTagStream {
        let times: Vec<u64> = times_ns.iter().map(|t| (t * 1e3).round() as u64).collect();
        TimeTagStream::from_times(times, channel, 1_000_000_000).unwrap()
    }

    #[test]
    fn single_pair_start_stop() {
        let h = start_stop_histogram(&stream(&[0.0], 0), &stream(&[5.0], 1), 1.0, 10.0).unwrap();
        assert_eq!(h.total(), 1);
        assert_eq!(h.at(5), 1);
    }

    #[test]
    fn periodic_offset_start_stop() {
        let period = 100.0;
        let a: Vec<f64> = (0..50).map(|k| k as f64 * period).collect();
        let b: Vec<f64> = a.iter().map(|t| t + 3.0).collect();
        let h = start_stop_histogram(&stream(&a, 0), &stream(&b, 1), 1.0, 20.0).unwrap();
        assert_eq!(h.at(3), 50);
        assert_eq!(h.total(), 50);
    }

    #[test]
    fn full_correlation_small_example() {
        let h = full_correlation_histogram(&stream(&[0.0], 0), &stream(&[5.0, 7.0], 1), 1.0, 10.0).unwrap();
        assert_eq!(h.at(5), 1);
        assert_eq!(h.at(7), 1);
        assert_eq!(h.total(), 2);
    }

    #[test]
    fn empty_streams_give_empty_histograms() {
        let e = TimeTagStream::empty(1_000);
        for mode in [HistogramMode::Full, HistogramMode::StartStop] {
            let h = histogram(&e, &e, 1.0, 10.0, mode).unwrap();
            assert_eq!(h.total(), 0);
            assert_eq!(h.counts.len(), 20);
        }
    }

    #[test]
    fn binning_rules() {
        let b = Binning::new(0.17, 20.0).unwrap();
        assert_eq!(b.width_ps, 170);
        assert_eq!(b.bins_per_side, 118);
        assert_eq!(b.index(0), Some(118));
        assert_eq!(b.index(-1), Some(117));
        assert_eq!(b.index(169), Some(118));
        assert_eq!(b.index(170), Some(119));
        assert_eq!(b.index(b.span_ps()), None);
        assert_eq!(b.index(-b.span_ps()), Some(0));
        assert!(Binning::new(1.0, 0.5).is_err());
        assert!(Binning::new(0.0, 10.0).is_err());
    }

    #[test]
    fn normalisation_constants() {
        let mk = |r1: f64, r2: f64, t: f64, w: f64| {
            let b = Binning::new(w, 20.0 * w).unwrap();
            CoincidenceHistogram::empty(
                b,
                Acquisition {
                    duration: t,
                    r1,
                    r2,
                },
                HistogramMode::Full,
            )
        };
        let fig3 = mk(37_000.0, 48_700.0, 590.0, 0.17);
        assert!((fig3.poisson_level() - 180.730_57).abs() < 1e-6);
        let fig4 = mk(38_600.0, 33_400.0, 605.0, 2.3);
        assert!((fig4.poisson_level() - 1_793.977_46).abs() < 1e-6);

        let mut flat = mk(1000.0, 2000.0, 10.0, 500.0);
        let level = flat.poisson_level();
        assert!((level - 10.0).abs() < 1e-12);
        flat.counts.iter_mut().for_each(|c| *c = 10);
        let g = normalize(&flat).unwrap();
        assert!(g.g2.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(g.stderr.iter().all(|e| (e - 10f64.sqrt() / 10.0).abs() < 1e-12));

        let zero = mk(0.0, 2000.0, 10.0, 1.0);
        assert!(normalize(&zero).is_err());
    }

    #[test]
    fn export_round_trip() {
        let a: Vec<f64> = (0..200).map(|k| k as f64 * 13.7).collect();
        let b: Vec<f64> = (0..150).map(|k| 3.3 + k as f64 * 17.1).collect();
        let h = full_correlation_histogram(&stream(&a, 0), &stream(&b, 1), 0.17, 20.0).unwrap();
        let mut buf = Vec::new();
        write_histogram(&h, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("# mode = full"));
        assert!(text.contains("bin_center_ns,counts,g2,g2_stderr"));
        let back = read_histogram(&buf[..]).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn malformed_export_rejected() {
        assert!(matches!(read_histogram(&b"hello\n"[..]), Err(Error::Format(_))));
        let a = stream(&[0.0, 1.0], 0);
        let h = full_correlation_histogram(&a, &a, 1.0, 3.0).unwrap();
        let mut buf = Vec::new();
        write_histogram(&h, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_histogram(truncated.as_bytes()), Err(Error::Format(_))));
    }
}
