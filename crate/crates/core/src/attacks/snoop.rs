//! Screen snooping: match observed flash points against the predicted flash
//! points of every candidate image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::frame::{observe_frames, FlashError, FlashVector, FrameProbeConfig, PeakMode};
use crate::hierarchy::{splitmix, Hierarchy};
use crate::stats::{mse, zscore};
use crate::victims::raster::{digits_row_profile, itf_char_top, itf_row_profile};
use crate::victims::screen::band_fractions_from_rows;
use crate::victims::screen::band_height;
use crate::victims::{CompressionModel, EncodeError, FrameSchedule, NoiseSpec, BANDS, SCREEN_H, SCREEN_W};

/// Drop the first epoch, whose traffic carries per-frame overhead, and
/// z-score the rest.
pub fn normalize(v: &[f64]) -> Vec<f64> {
    zscore(&v[1.min(v.len())..])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub label: String,
    /// Predicted per-epoch traffic.
    pub traffic: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatternLibrary {
    pub entries: Vec<LibraryEntry>,
}

impl PatternLibrary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Predicted epoch traffic for per-band nonzero fractions.
pub fn predict_traffic(model: &CompressionModel, fractions: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = fractions.iter().map(|&f| model.traffic_f(f)).collect();
    if let Some(first) = v.first_mut() {
        *first *= model.first_epoch_factor;
    }
    v
}

/// One entry per distinct label; `fractions` gives a label's per-band
/// nonzero fractions.
pub fn build_library<F>(candidates: &[String], fractions: F, model: &CompressionModel) -> Result<PatternLibrary, EncodeError>
where
    F: Fn(&str) -> Result<Vec<f64>, EncodeError>,
{
    let mut lib = PatternLibrary::default();
    for c in candidates {
        if lib.entries.iter().any(|e| &e.label == c) {
            continue;
        }
        lib.entries.push(LibraryEntry { label: c.clone(), traffic: predict_traffic(model, &fractions(c)?) });
    }
    Ok(lib)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// `(label, mse)`, best first.
    pub ranked: Vec<(String, f64)>,
}

impl Ranking {
    pub fn best(&self) -> Option<&str> {
        self.ranked.first().map(|r| r.0.as_str())
    }

    /// Zero-based rank of `label`, if present.
    pub fn rank_of(&self, label: &str) -> Option<usize> {
        self.ranked.iter().position(|r| r.0 == label)
    }

    pub fn in_top(&self, label: &str, k: usize) -> bool {
        self.rank_of(label).is_some_and(|r| r < k)
    }
}

/// Rank library entries by MSE to the observation over all epochs but the
/// first.
pub fn snoop_match(observed: &[f64], lib: &PatternLibrary) -> Ranking {
    let bands: Vec<usize> = (1..observed.len()).collect();
    snoop_match_on(observed, lib, &bands)
}

/// Rank by MSE over the given epochs only, each side z-scored over them.
pub fn snoop_match_on(observed: &[f64], lib: &PatternLibrary, epochs: &[usize]) -> Ranking {
    let pick = |v: &[f64]| zscore(&epochs.iter().map(|&i| v[i]).collect::<Vec<_>>());
    let o = pick(observed);
    let mut ranked: Vec<(String, f64)> = lib.entries.iter().map(|e| (e.label.clone(), mse(&o, &pick(&e.traffic)))).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    Ranking { ranked }
}

/// Digits in ascending order: the label class of an order-free match.
pub fn digit_class(digits: &str) -> String {
    let mut c: Vec<char> = digits.chars().collect();
    c.sort_unstable();
    c.into_iter().collect()
}

/// Every multiset of `n` digits, as sorted strings.
pub fn digit_classes(n: usize) -> Vec<String> {
    fn rec(n: usize, from: u8, cur: &mut String, out: &mut Vec<String>) {
        if n == 0 {
            out.push(cur.clone());
            return;
        }
        for d in from..10 {
            cur.push(char::from(b'0' + d));
            rec(n - 1, d, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, 0, &mut String::new(), &mut out);
    out
}

pub fn digit_fractions(digits: &str) -> Result<Vec<f64>, EncodeError> {
    Ok(band_fractions_from_rows(&digits_row_profile(digits)?, SCREEN_W))
}

pub fn digit_library(n: usize, model: &CompressionModel) -> Result<PatternLibrary, EncodeError> {
    build_library(&digit_classes(n), digit_fractions, model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnoopConfig {
    pub probe: FrameProbeConfig,
    pub frame: FrameSchedule,
    pub noise: NoiseSpec,
    /// Horizontal length of barcode bars.
    pub bar_length_px: usize,
}

impl Default for SnoopConfig {
    fn default() -> Self {
        SnoopConfig {
            probe: FrameProbeConfig { peak_mode: PeakMode::FixedOffsets, ..Default::default() },
            frame: FrameSchedule::default(),
            noise: NoiseSpec::default(),
            bar_length_px: SCREEN_W,
        }
    }
}

/// Render a screen with the given band fractions and measure its flash
/// points.
pub fn observe_screen(h: &Hierarchy, fractions: &[f64], cfg: &SnoopConfig, seed: u64) -> Result<FlashVector, FlashError> {
    let model = CompressionModel::scaled(h.config());
    let bands: Vec<u64> = fractions.iter().map(|&f| model.traffic(f)).collect();
    observe_frames(h, &model.epoch_traffic_from(&bands), &cfg.frame, &cfg.probe, cfg.noise, seed)
}

/// Bands whose rows all lie in `rows` and that intersect `within`.
fn bands_in(rows: std::ops::Range<usize>, within: std::ops::Range<usize>) -> Vec<usize> {
    let bh = band_height(SCREEN_H);
    (1..BANDS)
        .filter(|&b| {
            let start = b * bh;
            let end = if b + 1 == BANDS { SCREEN_H } else { start + bh };
            start >= rows.start && end <= rows.end && start < within.end && end > within.start
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarcodeGuess {
    pub decoded: String,
    /// Ranking for each character in turn.
    pub per_char: Vec<Ranking>,
}

/// Decode an ITF code of known length one character at a time. Character
/// k is matched on the bands it covers whose content is fixed once the
/// characters up to k are; later characters are filled with "00" when
/// predicting.
pub fn decode_itf(observed: &[f64], n_digits: usize, narrow_h: usize, bar_length_px: usize, model: &CompressionModel) -> Result<BarcodeGuess, EncodeError> {
    if n_digits % 2 == 1 {
        return Err(EncodeError::OddLength(n_digits));
    }
    let chars = n_digits / 2;
    let mut decoded = String::new();
    let mut per_char = Vec::with_capacity(chars);
    for k in 0..chars {
        let top = itf_char_top(k, narrow_h);
        let next = itf_char_top(k + 1, narrow_h);
        let fixed = if k + 1 == chars { SCREEN_H } else { next };
        let epochs = bands_in(0..fixed, top..next);
        let rest = "00".repeat(chars - k - 1);
        let cands: Vec<String> = (0..100).map(|c| format!("{decoded}{c:02}")).collect();
        let lib = build_library(
            &cands,
            |p| Ok(band_fractions_from_rows(&itf_row_profile(&format!("{p}{rest}"), narrow_h, bar_length_px)?, SCREEN_W)),
            model,
        )?;
        let r = if epochs.len() >= 2 { snoop_match_on(observed, &lib, &epochs) } else { snoop_match(observed, &lib) };
        let best = r.best().unwrap_or_default().to_string();
        decoded = best;
        per_char.push(r);
    }
    Ok(BarcodeGuess { decoded, per_char })
}

pub fn itf_fractions(code: &str, narrow_h: usize, bar_length_px: usize) -> Result<Vec<f64>, EncodeError> {
    Ok(band_fractions_from_rows(&itf_row_profile(code, narrow_h, bar_length_px)?, SCREEN_W))
}

#[derive(Debug, Error)]
pub enum SnoopError {
    #[error(transparent)]
    Flash(#[from] FlashError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarcodeTrial {
    pub code: String,
    pub decoded: String,
}

/// Displays an ITF code, measures it and decodes it.
pub fn snoop_barcode(h: &Hierarchy, code: &str, narrow_h: usize, cfg: &SnoopConfig, seed: u64) -> Result<BarcodeTrial, SnoopError> {
    let model = CompressionModel::scaled(h.config());
    let obs = observe_screen(h, &itf_fractions(code, narrow_h, cfg.bar_length_px)?, cfg, seed)?;
    let g = decode_itf(&obs.values, code.len(), narrow_h, cfg.bar_length_px, &model)?;
    Ok(BarcodeTrial { code: code.to_string(), decoded: g.decoded })
}

/// A random code of two or four digits.
pub fn random_itf_code(rng: &mut impl Rng) -> String {
    let len = if rng.random_bool(0.5) { 2 } else { 4 };
    (0..len).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect()
}

/// The codes shown in a batch of barcode trials, and each trial's seed.
pub fn barcode_batch(narrow_h: usize, trials: usize, seed: u64) -> Vec<(String, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ narrow_h as u64));
    (0..trials).map(|i| (random_itf_code(&mut rng), splitmix(seed.wrapping_add(i as u64)))).collect()
}

/// `trials` random codes at one narrow bar height.
pub fn barcode_trials(h: &Hierarchy, narrow_h: usize, trials: usize, cfg: &SnoopConfig, seed: u64) -> Result<Vec<BarcodeTrial>, SnoopError> {
    barcode_batch(narrow_h, trials, seed).iter().map(|(code, s)| snoop_barcode(h, code, narrow_h, cfg, *s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitTrial {
    pub digits: String,
    /// Order-free label of the displayed digits.
    pub class: String,
    /// Zero-based rank of the true class.
    pub rank: usize,
    pub guess: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitStats {
    pub n_digits: usize,
    pub trials: Vec<DigitTrial>,
    pub top1: f64,
    pub top5: f64,
    pub top10: f64,
}

impl DigitStats {
    pub fn from_trials(n_digits: usize, trials: Vec<DigitTrial>) -> Self {
        let n = trials.len().max(1) as f64;
        let top = |k: usize| trials.iter().filter(|t| t.rank < k).count() as f64 / n;
        DigitStats { n_digits, top1: top(1), top5: top(5), top10: top(10), trials }
    }

    /// Single-digit confusion counts, `[true][guessed]`.
    pub fn confusion(&self) -> [[u32; 10]; 10] {
        let mut m = [[0; 10]; 10];
        for t in self.trials.iter().filter(|t| t.digits.len() == 1) {
            let d = |s: &str| (s.as_bytes()[0] - b'0') as usize;
            m[d(&t.digits)][d(&t.guess)] += 1;
        }
        m
    }

    /// Off-diagonal cells `(true, guessed, count)` by count, largest first.
    pub fn top_confusions(&self) -> Vec<(usize, usize, u32)> {
        let m = self.confusion();
        let mut v: Vec<(usize, usize, u32)> =
            (0..10).flat_map(|i| (0..10).map(move |j| (i, j))).filter(|&(i, j)| i != j && m[i][j] > 0).map(|(i, j)| (i, j, m[i][j])).collect();
        v.sort_by(|a, b| b.2.cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        v
    }
}

/// The digit strings shown in a batch of trials, and each trial's seed. A
/// single digit cycles through 0-9 so every row of the confusion matrix
/// gets the same count; longer strings are random.
pub fn digit_batch(n_digits: usize, trials: usize, seed: u64) -> Vec<(String, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ (0xd161 + n_digits as u64)));
    (0..trials)
        .map(|i| {
            let digits: String = if n_digits == 1 {
                char::from((i % 10) as u8 + b'0').to_string()
            } else {
                (0..n_digits).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect()
            };
            (digits, splitmix(seed.wrapping_add(1000 * n_digits as u64 + i as u64)))
        })
        .collect()
}

/// White digits on black: measure the screen and rank the library.
pub fn snoop_digits(h: &Hierarchy, lib: &PatternLibrary, digits: &str, cfg: &SnoopConfig, seed: u64) -> Result<DigitTrial, SnoopError> {
    let obs = observe_screen(h, &digit_fractions(digits)?, cfg, seed)?;
    let r = snoop_match(&obs.values, lib);
    let class = digit_class(digits);
    let rank = r.rank_of(&class).unwrap_or(lib.len());
    Ok(DigitTrial { digits: digits.to_string(), class, rank, guess: r.best().unwrap_or_default().to_string() })
}

pub fn digit_trials(h: &Hierarchy, n_digits: usize, trials: usize, cfg: &SnoopConfig, seed: u64) -> Result<DigitStats, SnoopError> {
    let lib = digit_library(n_digits, &CompressionModel::scaled(h.config()))?;
    let out: Result<Vec<DigitTrial>, SnoopError> =
        digit_batch(n_digits, trials, seed).iter().map(|(d, s)| snoop_digits(h, &lib, d, cfg, *s)).collect();
    Ok(DigitStats::from_trials(n_digits, out?))
}
