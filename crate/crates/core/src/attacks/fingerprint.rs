//! Closed-world website fingerprinting from occupancy traces.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::svm::{ClassifierError, LinearSvm, SvmParams};
use super::{collect_trace, noise_activity, Channel, ChannelKind};
use crate::hierarchy::{splitmix, Hierarchy};
use crate::mem::MemError;
use crate::sched::Schedule;
use crate::victims::{Arena, NoiseSpec, Placement, SiteActivity, SyntheticSite, VisitJitter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub channel: ChannelKind,
    pub placement: Placement,
    pub sites: u32,
    pub traces_per_site: usize,
    pub duration_ms: u64,
    pub period_ms: f64,
    pub noise: NoiseSpec,
    pub jitter: VisitJitter,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            channel: ChannelKind::SlcOccupancy,
            placement: Placement::Gpu,
            sites: 20,
            traces_per_site: 30,
            duration_ms: 2000,
            period_ms: 20.0,
            noise: NoiseSpec::default(),
            jitter: VisitJitter::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
}

/// One trace per visit; every visit starts from the same warmed state.
pub fn collect_dataset(h: &Hierarchy, cfg: &DatasetConfig) -> Result<Dataset, MemError> {
    let mut base = h.clone();
    let mut ch = Channel::new(&mut base, cfg.channel, cfg.period_ms)?;
    ch.warm(&mut base);
    let scale = base.config().scale_divisor();
    let n = (cfg.duration_ms as f64 / cfg.period_ms).round() as usize;
    let mut ds = Dataset { features: Vec::new(), labels: Vec::new() };
    for s in 0..cfg.sites {
        let site = SyntheticSite::generate(s, cfg.seed, cfg.duration_ms, scale);
        for j in 0..cfg.traces_per_site {
            let visit_seed = splitmix(cfg.seed ^ splitmix(((s as u64) << 32) | j as u64));
            let mut h = base.clone();
            h.reseed(visit_seed);
            let mut ch = ch.clone();
            let start = ch.next_boundary(h.now());
            let arena = Arena::new(&mut h)?;
            let mut sched = Schedule::new();
            sched.push(Box::new(SiteActivity::visit(&site, cfg.jitter, visit_seed, cfg.placement, start, cfg.duration_ms, arena)));
            if let Some(a) = noise_activity(&mut h, cfg.noise, start, visit_seed)? {
                sched.push(a);
            }
            let tr = collect_trace(&mut h, &mut ch, &mut sched, start, n);
            ds.features.push(tr.samples);
            ds.labels.push(s);
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub accuracy: f64,
    pub classes: Vec<u32>,
    /// `confusion[true][predicted]`, indexed by position in `classes`.
    pub confusion: Vec<Vec<u32>>,
}

/// Stratified k-fold cross-validation (k = 10 gives 90/10 splits).
pub fn cross_validate(ds: &Dataset, folds: usize, params: &SvmParams) -> Result<CvResult, ClassifierError> {
    let mut classes = ds.labels.clone();
    classes.sort_unstable();
    classes.dedup();
    let idx = |c: u32| classes.binary_search(&c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(params.seed ^ 0xf01d));
    let mut fold_of = vec![0usize; ds.labels.len()];
    for &c in &classes {
        let mut members: Vec<usize> = (0..ds.labels.len()).filter(|&i| ds.labels[i] == c).collect();
        members.shuffle(&mut rng);
        for (k, i) in members.into_iter().enumerate() {
            fold_of[i] = k % folds;
        }
    }
    let mut confusion = vec![vec![0u32; classes.len()]; classes.len()];
    let mut correct = 0usize;
    for f in 0..folds {
        let train: Vec<usize> = (0..fold_of.len()).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..fold_of.len()).filter(|&i| fold_of[i] == f).collect();
        if test.is_empty() {
            continue;
        }
        let x: Vec<Vec<f64>> = train.iter().map(|&i| ds.features[i].clone()).collect();
        let y: Vec<u32> = train.iter().map(|&i| ds.labels[i]).collect();
        let m = LinearSvm::train(&x, &y, params)?;
        for &i in &test {
            let p = m.predict(&ds.features[i]);
            confusion[idx(ds.labels[i])][idx(p)] += 1;
            correct += (p == ds.labels[i]) as usize;
        }
    }
    Ok(CvResult { accuracy: correct as f64 / ds.labels.len() as f64, classes, confusion })
}

/// Same dataset with labels permuted; accuracy should fall to chance.
pub fn shuffled_control(ds: &Dataset, folds: usize, params: &SvmParams) -> Result<CvResult, ClassifierError> {
    let mut labels = ds.labels.clone();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix(params.seed ^ 0x5af1e)));
    cross_validate(&Dataset { features: ds.features.clone(), labels }, folds, params)
}
