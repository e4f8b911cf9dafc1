//! Temporal and spectral structure of off-policy deviation.
//!
//! Classifies tokens into up/down/on states against a ratio band, then
//! measures how that structure evolves along the sequence: window-wise
//! off-policy frequency, run-lengths of constant-state segments, adjacent
//! switch frequency, the low-frequency energy ratio of the series, and
//! global/windowed variance. A paired before/after report aggregates all
//! of it across samples.

use alloc::vec::Vec;

use crate::error::DiagnosticsError;
use crate::math;
use crate::objectives::ClipConfig;
use crate::trace::RatioSeries;

/// Off-policy state of one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenState {
    /// Ratio above the band.
    Up,
    /// Ratio below the band.
    Down,
    /// Ratio inside the band.
    On,
}

/// How the on-policy band is defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandMode {
    /// On iff `1 - eps_lo <= r <= 1 + eps_hi` (closed band).
    Band(ClipConfig),
    /// On iff `|r - 1| <= tolerance`; suits raw pre-filter ratios where
    /// exact equality is the nominal definition but floating point makes
    /// bitwise `r == 1` fragile.
    Exact { tolerance: f64 },
}

impl BandMode {
    /// Exact mode with the default 1e-12 tolerance.
    pub fn exact_default() -> Self {
        BandMode::Exact { tolerance: 1e-12 }
    }

    fn classify(&self, ratio: f64) -> TokenState {
        let (lower, upper) = match self {
            BandMode::Band(cfg) => (cfg.lower(), cfg.upper()),
            BandMode::Exact { tolerance } => (1.0 - tolerance, 1.0 + tolerance),
        };
        if ratio > upper {
            TokenState::Up
        } else if ratio < lower {
            TokenState::Down
        } else {
            TokenState::On
        }
    }
}

/// Per-token state labels with the band that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSeries {
    states: Vec<TokenState>,
    mask: Vec<bool>,
    band: BandMode,
}

impl StateSeries {
    pub fn states(&self) -> &[TokenState] {
        &self.states
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn band(&self) -> BandMode {
        self.band
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Valid states in order.
    pub fn valid_states(&self) -> Vec<TokenState> {
        self.states
            .iter()
            .zip(&self.mask)
            .filter_map(|(&s, &m)| m.then_some(s))
            .collect()
    }

    /// (up, down, on) fractions over valid tokens; (0, 0, 0) when empty.
    pub fn proportions(&self) -> (f64, f64, f64) {
        let mut counts = [0usize; 3];
        let mut total = 0usize;
        for (&s, &m) in self.states.iter().zip(&self.mask) {
            if m {
                counts[state_index(s)] += 1;
                total += 1;
            }
        }
        if total == 0 {
            return (0.0, 0.0, 0.0);
        }
        let t = total as f64;
        (
            counts[0] as f64 / t,
            counts[1] as f64 / t,
            counts[2] as f64 / t,
        )
    }
}

fn state_index(s: TokenState) -> usize {
    match s {
        TokenState::Up => 0,
        TokenState::Down => 1,
        TokenState::On => 2,
    }
}

/// Labels every valid token by its position relative to the band; masked
/// positions get `On` and must not be read.
pub fn classify_token_states(ratios: &RatioSeries, band: BandMode) -> StateSeries {
    let states = ratios
        .values()
        .iter()
        .zip(ratios.mask())
        .map(|(&r, &m)| if m { band.classify(r) } else { TokenState::On })
        .collect();
    StateSeries {
        states,
        mask: ratios.mask().to_vec(),
        band,
    }
}

/// Fraction of off-policy (up or down) tokens per non-overlapping window
/// over the valid prefix; the valid length is truncated to a whole number
/// of windows, so samples shorter than one window contribute nothing.
pub fn window_offpolicy_frequency(
    states: &StateSeries,
    window: usize,
) -> Result<Vec<f64>, DiagnosticsError> {
    if window == 0 {
        return Err(DiagnosticsError::InvalidWindow { window });
    }
    let valid = states.valid_states();
    let full = valid.len() / window;
    let mut out = Vec::with_capacity(full);
    for chunk in valid.chunks_exact(window) {
        let off = chunk.iter().filter(|&&s| s != TokenState::On).count();
        out.push(off as f64 / window as f64);
    }
    Ok(out)
}

/// Missing-aware mean and variance per window index across samples.
///
/// Window `w`'s statistics use only the samples long enough to contain
/// window `w`. Curves extend to the longest sample's window count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowCurves {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Number of samples contributing to each window index.
    pub support: Vec<usize>,
}

/// Aggregates per-sample window-frequency vectors into mean/variance
/// curves indexed by window position.
pub fn aggregate_window_curves(samples: &[Vec<f64>]) -> WindowCurves {
    let longest = samples.iter().map(Vec::len).max().unwrap_or(0);
    let mut curves = WindowCurves {
        mean: Vec::with_capacity(longest),
        variance: Vec::with_capacity(longest),
        support: Vec::with_capacity(longest),
    };
    for w in 0..longest {
        let present: Vec<f64> = samples.iter().filter_map(|s| s.get(w).copied()).collect();
        curves.support.push(present.len());
        curves.mean.push(math::mean(&present));
        curves.variance.push(math::population_variance(&present));
    }
    curves
}

/// Run lengths of maximal constant-state segments, per state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLengths {
    pub up: Vec<usize>,
    pub down: Vec<usize>,
    pub on: Vec<usize>,
}

impl RunLengths {
    pub fn mean_up(&self) -> f64 {
        mean_usize(&self.up)
    }

    pub fn mean_down(&self) -> f64 {
        mean_usize(&self.down)
    }

    pub fn mean_on(&self) -> f64 {
        mean_usize(&self.on)
    }
}

fn mean_usize(xs: &[usize]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<usize>() as f64 / xs.len() as f64
}

/// Scans the valid tokens left to right, recording every maximal
/// contiguous run under its state.
pub fn run_lengths(states: &StateSeries) -> RunLengths {
    let valid = states.valid_states();
    let mut out = RunLengths::default();
    let mut iter = valid.iter();
    let Some(&first) = iter.next() else {
        return out;
    };
    let mut current = first;
    let mut length = 1usize;
    for &s in iter {
        if s == current {
            length += 1;
        } else {
            push_run(&mut out, current, length);
            current = s;
            length = 1;
        }
    }
    push_run(&mut out, current, length);
    out
}

fn push_run(out: &mut RunLengths, state: TokenState, length: usize) {
    match state {
        TokenState::Up => out.up.push(length),
        TokenState::Down => out.down.push(length),
        TokenState::On => out.on.push(length),
    }
}

/// Adjacent state changes normalized by window length.
///
/// The valid sequence is split into non-overlapping windows; each window of
/// length `L >= 2` contributes `changes / (L - 1)`, and the result is the
/// mean over contributing windows. A sequence shorter than one window is
/// its own window; one or zero valid tokens yield 0.
pub fn switch_frequency(states: &StateSeries, window: usize) -> Result<f64, DiagnosticsError> {
    if window == 0 {
        return Err(DiagnosticsError::InvalidWindow { window });
    }
    let valid = states.valid_states();
    if valid.len() <= 1 {
        return Ok(0.0);
    }
    let mut rates = Vec::new();
    for chunk in valid.chunks(window) {
        if chunk.len() < 2 {
            continue;
        }
        let changes = chunk.windows(2).filter(|w| w[0] != w[1]).count();
        rates.push(changes as f64 / (chunk.len() - 1) as f64);
    }
    Ok(math::mean(&rates))
}

/// Complex spectrum magnitude-squared (periodogram) of a real series,
/// unnormalized DFT convention.
///
/// Radix-2 FFT for power-of-two lengths, direct evaluation otherwise.
pub fn power_spectrum(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return alloc::vec![series[0] * series[0]];
    }
    if n.is_power_of_two() {
        let mut re: Vec<f64> = series.to_vec();
        let mut im = alloc::vec![0.0; n];
        fft_radix2(&mut re, &mut im);
        re.iter().zip(&im).map(|(r, i)| r * r + i * i).collect()
    } else {
        dft_direct_power(series)
    }
}

fn fft_radix2(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    let bits = n.trailing_zeros();
    // Bit-reversal permutation.
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let step = -2.0 * core::f64::consts::PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let (s, c) = math::sin_cos(step * k as f64);
                let i = start + k;
                let j = i + len / 2;
                let tr = re[j] * c - im[j] * s;
                let ti = re[j] * s + im[j] * c;
                re[j] = re[i] - tr;
                im[j] = im[i] - ti;
                re[i] += tr;
                im[i] += ti;
            }
        }
        len <<= 1;
    }
}

fn dft_direct_power(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut re = 0.0;
        let mut im = 0.0;
        for (t, &x) in series.iter().enumerate() {
            let angle = -2.0 * core::f64::consts::PI * (k as f64) * (t as f64) / n as f64;
            let (s, c) = math::sin_cos(angle);
            re += x * c;
            im += x * s;
        }
        out.push(re * re + im * im);
    }
    out
}

/// Fraction of mean-centered spectral energy in the symmetric low band
/// `{0..k_c} + {T-k_c..T-1}` (each bin counted once).
///
/// A series whose centered power is below 1e-15 counts as entirely
/// low-frequency (LFR 1): a constant is the smoothest possible signal.
pub fn low_frequency_ratio(series: &[f64], k_c: usize) -> Result<f64, DiagnosticsError> {
    let n = series.len();
    if n == 0 {
        return Err(DiagnosticsError::EmptySeries);
    }
    if k_c > n / 2 {
        return Err(DiagnosticsError::CutoffOutOfRange { k_c, len: n });
    }
    let mean = math::mean(series);
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let power = power_spectrum(&centered);
    let total: f64 = power.iter().sum();
    if total < 1e-15 {
        return Ok(1.0);
    }
    let mut in_band = alloc::vec![false; n];
    for (k, slot) in in_band.iter_mut().enumerate() {
        *slot = k <= k_c || k + k_c >= n;
    }
    let low: f64 = power
        .iter()
        .zip(&in_band)
        .filter_map(|(&p, &m)| m.then_some(p))
        .sum();
    Ok(low / total)
}

/// Global population variance and the mean of per-window population
/// variances (non-overlapping windows; windows shorter than 2 skipped).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VarianceStats {
    pub global: f64,
    pub windowed_local: f64,
}

pub fn variance_stats(series: &[f64], window: usize) -> Result<VarianceStats, DiagnosticsError> {
    if window == 0 {
        return Err(DiagnosticsError::InvalidWindow { window });
    }
    let global = math::population_variance(series);
    let mut locals = Vec::new();
    for chunk in series.chunks(window) {
        if chunk.len() >= 2 {
            locals.push(math::population_variance(chunk));
        }
    }
    Ok(VarianceStats {
        global,
        windowed_local: math::mean(&locals),
    })
}

/// Which representation the continuous metrics (LFR, variances) analyzed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesRepresentation {
    Ratio,
    LogRatio,
}

/// Aggregated token-level dynamics of one collection of samples.
///
/// Proportions and run lengths pool tokens and runs across samples, so the
/// run accounting identity (`runs x mean length = state token count`)
/// holds exactly; switch frequency, LFR, and variances are per-sample
/// metrics averaged over samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsReport {
    pub proportions: (f64, f64, f64),
    pub mean_run_lengths: (f64, f64, f64),
    pub switch_frequency: f64,
    pub lfr: f64,
    pub global_variance: f64,
    pub windowed_local_variance: f64,
    pub representation: SeriesRepresentation,
    pub sample_count: usize,
}

/// Settings shared by both sides of a paired dynamics report.
#[derive(Debug, Clone, Copy)]
pub struct DynamicsConfig {
    pub band: BandMode,
    pub window: usize,
    /// DFT cutoff; `None` means `floor(valid_len / 20)` per sample.
    pub k_c: Option<usize>,
    pub representation: SeriesRepresentation,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            band: BandMode::Band(ClipConfig::filtered_default()),
            window: 50,
            k_c: None,
            representation: SeriesRepresentation::Ratio,
        }
    }
}

/// Computes one side of the report over many samples.
pub fn dynamics_report(
    samples: &[RatioSeries],
    config: &DynamicsConfig,
) -> Result<DynamicsReport, DiagnosticsError> {
    let mut counts = [0usize; 3];
    let mut run_sums = [0usize; 3];
    let mut run_counts = [0usize; 3];
    let mut switch_acc = Vec::new();
    let mut lfr_acc = Vec::new();
    let mut global_acc = Vec::new();
    let mut local_acc = Vec::new();

    for sample in samples {
        let states = classify_token_states(sample, config.band);
        for s in states.valid_states() {
            counts[state_index(s)] += 1;
        }
        let runs = run_lengths(&states);
        for (idx, list) in [(0, &runs.up), (1, &runs.down), (2, &runs.on)] {
            run_sums[idx] += list.iter().sum::<usize>();
            run_counts[idx] += list.len();
        }
        switch_acc.push(switch_frequency(&states, config.window)?);

        let values = match config.representation {
            SeriesRepresentation::Ratio => sample.valid_values(),
            SeriesRepresentation::LogRatio => sample.to_log().valid_values(),
        };
        if values.is_empty() {
            continue;
        }
        let k_c = config.k_c.unwrap_or(values.len() / 20).min(values.len() / 2);
        lfr_acc.push(low_frequency_ratio(&values, k_c)?);
        let vs = variance_stats(&values, config.window)?;
        global_acc.push(vs.global);
        local_acc.push(vs.windowed_local);
    }

    let total: usize = counts.iter().sum();
    let proportions = if total == 0 {
        (0.0, 0.0, 0.0)
    } else {
        let t = total as f64;
        (
            counts[0] as f64 / t,
            counts[1] as f64 / t,
            counts[2] as f64 / t,
        )
    };
    let mean_run = |idx: usize| {
        if run_counts[idx] == 0 {
            0.0
        } else {
            run_sums[idx] as f64 / run_counts[idx] as f64
        }
    };
    Ok(DynamicsReport {
        proportions,
        mean_run_lengths: (mean_run(0), mean_run(1), mean_run(2)),
        switch_frequency: math::mean(&switch_acc),
        lfr: math::mean(&lfr_acc),
        global_variance: math::mean(&global_acc),
        windowed_local_variance: math::mean(&local_acc),
        representation: config.representation,
        sample_count: samples.len(),
    })
}

/// Before/after pair over identical masks.
pub fn paired_dynamics_report(
    raw: &[RatioSeries],
    filtered: &[RatioSeries],
    config: &DynamicsConfig,
) -> Result<(DynamicsReport, DynamicsReport), DiagnosticsError> {
    if raw.len() != filtered.len() {
        return Err(DiagnosticsError::SeriesMismatch { index: raw.len().min(filtered.len()) });
    }
    for (index, (r, f)) in raw.iter().zip(filtered).enumerate() {
        if r.len() != f.len() || r.mask() != f.mask() {
            return Err(DiagnosticsError::SeriesMismatch { index });
        }
    }
    Ok((
        dynamics_report(raw, config)?,
        dynamics_report(filtered, config)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn band() -> BandMode {
        BandMode::Band(ClipConfig::filtered_default())
    }

    fn states_of(ratios: Vec<f64>) -> StateSeries {
        classify_token_states(&RatioSeries::dense(ratios), band())
    }

    fn series_from(states: &[TokenState]) -> StateSeries {
        let ratios: Vec<f64> = states
            .iter()
            .map(|s| match s {
                TokenState::Up => 1.01,
                TokenState::Down => 0.99,
                TokenState::On => 1.0,
            })
            .collect();
        states_of(ratios)
    }

    use TokenState::{Down as D, On, Up as U};

    #[test]
    fn classify_all_on_for_unit_ratios() {
        let s = states_of(vec![1.0, 1.0, 1.0]);
        assert!(s.states().iter().all(|&x| x == On));
        let exact = classify_token_states(
            &RatioSeries::dense(vec![1.0, 1.0]),
            BandMode::exact_default(),
        );
        assert!(exact.states().iter().all(|&x| x == On));
    }

    #[test]
    fn classify_band_example() {
        let s = states_of(vec![1.001, 0.999, 1.0]);
        assert_eq!(s.states(), &[U, D, On]);
    }

    #[test]
    fn classify_boundary_is_on() {
        let s = states_of(vec![1.0 + 4e-4, 1.0 - 3e-4]);
        assert_eq!(s.states(), &[On, On]);
    }

    #[test]
    fn classify_exact_mode_tolerance() {
        let m = BandMode::Exact { tolerance: 1e-12 };
        let s = classify_token_states(&RatioSeries::dense(vec![1.0 + 1e-13, 1.0 + 1e-9]), m);
        assert_eq!(s.states(), &[On, U]);
    }

    #[test]
    fn proportions_partition_unity() {
        let s = states_of(vec![1.01, 0.5, 1.0, 1.0, 2.0, 0.9, 1.0]);
        let (u, d, o) = s.proportions();
        assert!((u + d + o - 1.0).abs() < 1e-15);
    }

    #[test]
    fn window_frequency_examples() {
        let all_on = series_from(&[On; 8]);
        assert_eq!(window_offpolicy_frequency(&all_on, 4).unwrap(), vec![0.0, 0.0]);

        let all_up = series_from(&[U; 8]);
        assert_eq!(window_offpolicy_frequency(&all_up, 4).unwrap(), vec![1.0, 1.0]);

        let mixed = series_from(&[U, On, On, D, On, On, On, On]);
        assert_eq!(window_offpolicy_frequency(&mixed, 4).unwrap(), vec![0.5, 0.0]);

        // Shorter than one window: contributes no windows.
        let short = series_from(&[U, D]);
        assert!(window_offpolicy_frequency(&short, 4).unwrap().is_empty());
    }

    #[test]
    fn window_curves_are_missing_aware() {
        let samples = vec![vec![1.0, 0.5], vec![0.0]];
        let curves = aggregate_window_curves(&samples);
        assert_eq!(curves.support, vec![2, 1]);
        assert!((curves.mean[0] - 0.5).abs() < 1e-15);
        assert!((curves.mean[1] - 0.5).abs() < 1e-15);
        assert!((curves.variance[0] - 0.25).abs() < 1e-15);
        assert_eq!(curves.variance[1], 0.0);
    }

    #[test]
    fn run_length_examples() {
        let s = series_from(&[U, U, D, D, D, U]);
        let r = run_lengths(&s);
        assert_eq!(r.up, vec![2, 1]);
        assert_eq!(r.down, vec![3]);
        assert!((r.mean_up() - 1.5).abs() < 1e-15);
        assert!((r.mean_down() - 3.0).abs() < 1e-15);

        let s = series_from(&[On; 7]);
        let r = run_lengths(&s);
        assert_eq!(r.on, vec![7]);

        let s = series_from(&[U, D, U, D]);
        let r = run_lengths(&s);
        assert_eq!(r.up, vec![1, 1]);
        assert_eq!(r.down, vec![1, 1]);

        let empty = series_from(&[]);
        let r = run_lengths(&empty);
        assert!(r.up.is_empty() && r.down.is_empty() && r.on.is_empty());
    }

    #[test]
    fn run_accounting_matches_token_counts() {
        let s = states_of(vec![
            1.01, 1.01, 0.9, 1.0, 1.0, 1.0, 2.0, 0.5, 0.5, 1.01, 1.0,
        ]);
        let r = run_lengths(&s);
        let (u, d, o) = s.proportions();
        let total = s.valid_states().len() as f64;
        assert_eq!(r.up.iter().sum::<usize>() as f64, u * total);
        assert_eq!(r.down.iter().sum::<usize>() as f64, d * total);
        assert_eq!(r.on.iter().sum::<usize>() as f64, o * total);
    }

    #[test]
    fn switch_frequency_examples() {
        let s = series_from(&[U, D, U, D]);
        assert!((switch_frequency(&s, 50).unwrap() - 1.0).abs() < 1e-15);

        let s = series_from(&[On; 12]);
        assert_eq!(switch_frequency(&s, 4).unwrap(), 0.0);

        let s = series_from(&[U]);
        assert_eq!(switch_frequency(&s, 50).unwrap(), 0.0);

        let s = series_from(&[]);
        assert_eq!(switch_frequency(&s, 50).unwrap(), 0.0);
    }

    #[test]
    fn switch_frequency_windows_average() {
        // Two windows of 4: [U,D,U,D] -> 1.0, [On,On,On,U] -> 1/3.
        let s = series_from(&[U, D, U, D, On, On, On, U]);
        let f = switch_frequency(&s, 4).unwrap();
        assert!((f - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn lfr_constant_series_is_one() {
        assert_eq!(low_frequency_ratio(&[2.5; 16], 2).unwrap(), 1.0);
    }

    #[test]
    fn lfr_pure_high_frequency_sinusoid_is_zero() {
        // Bin-8 sinusoid over T = 64; all energy sits above k_c = 2.
        let n = 64usize;
        let series: Vec<f64> = (0..n)
            .map(|t| (2.0 * core::f64::consts::PI * 8.0 * t as f64 / n as f64).sin())
            .collect();
        let lfr = low_frequency_ratio(&series, 2).unwrap();
        assert!(lfr.abs() < 1e-9, "lfr = {lfr}");
    }

    #[test]
    fn lfr_full_band_is_one_and_monotone() {
        let series: Vec<f64> = (0..31)
            .map(|t| ((t * 7919) % 13) as f64 - 6.0 + 0.1 * t as f64)
            .collect();
        let full = low_frequency_ratio(&series, series.len() / 2).unwrap();
        assert!((full - 1.0).abs() < 1e-12);
        let mut prev = 0.0;
        for k in 0..=series.len() / 2 {
            let v = low_frequency_ratio(&series, k).unwrap();
            assert!(v >= prev - 1e-12, "not monotone at k = {k}");
            prev = v;
        }
    }

    #[test]
    fn lfr_input_errors() {
        assert!(matches!(
            low_frequency_ratio(&[], 0),
            Err(DiagnosticsError::EmptySeries)
        ));
        assert!(matches!(
            low_frequency_ratio(&[1.0, 2.0, 3.0], 2),
            Err(DiagnosticsError::CutoffOutOfRange { .. })
        ));
    }

    #[test]
    fn spectrum_matches_direct_dft_and_parseval() {
        for n in [16usize, 64, 256] {
            let series: Vec<f64> = (0..n)
                .map(|t| {
                    let x = t as f64;
                    (x * 0.37).sin() + 0.25 * (x * 1.91).cos() + ((t * 2654435761) % 97) as f64 / 97.0
                })
                .collect();
            let fast = power_spectrum(&series);
            let slow = dft_direct_power(&series);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-6 * (1.0 + b), "fft vs dft");
            }
            // Parseval (unnormalized DFT): sum |X_k|^2 = T * sum x_t^2.
            let lhs: f64 = fast.iter().sum();
            let rhs: f64 = n as f64 * series.iter().map(|x| x * x).sum::<f64>();
            assert!((lhs - rhs).abs() < 1e-9 * rhs, "parseval at T = {n}");
        }
    }

    #[test]
    fn variance_examples() {
        let v = variance_stats(&[3.0; 10], 5).unwrap();
        assert_eq!(v.global, 0.0);
        assert_eq!(v.windowed_local, 0.0);

        let v = variance_stats(&[0.0, 2.0], 50).unwrap();
        assert!((v.global - 1.0).abs() < 1e-15);
        assert!((v.windowed_local - 1.0).abs() < 1e-15);

        let v = variance_stats(&[0.0, 2.0, 0.0, 2.0], 2).unwrap();
        assert!((v.global - 1.0).abs() < 1e-15);
        assert!((v.windowed_local - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_inputs_make_identical_paired_reports() {
        let samples = vec![
            RatioSeries::dense(vec![1.0, 1.01, 0.98, 1.0, 1.002]),
            RatioSeries::dense(vec![0.97, 1.0, 1.0]),
        ];
        let cfg = DynamicsConfig::default();
        let (before, after) = paired_dynamics_report(&samples, &samples, &cfg).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn paired_report_rejects_mask_mismatch() {
        let a = vec![RatioSeries::dense(vec![1.0, 1.0])];
        let b = vec![RatioSeries::new(vec![1.0, 1.0], vec![true, false]).unwrap()];
        let cfg = DynamicsConfig::default();
        assert!(matches!(
            paired_dynamics_report(&a, &b, &cfg),
            Err(DiagnosticsError::SeriesMismatch { index: 0 })
        ));
    }
}
