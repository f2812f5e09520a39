//! Linear probes on frozen object encoders, scored by mean average precision.

pub mod dataset;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{encode_object_rows, NetConfig, PATCH_DIM};
use crate::objmodel::oracle::{oracle_features, oracle_objects, ORACLE_DIM};
use crate::objmodel::standard_normal;
use crate::sim::NUM_CATEGORIES;
use crate::tensor::{Graph, ParamGroup, Tensor, TensorError};

pub use dataset::{
    gen_programmatic, gen_random, labels, manifestations, read_dataset, run_sequence,
    start_world, teleport_pose, write_dataset, Frame, LabeledSample, Labels, Sequence, Step,
    CONTAINMENT_NAMES, PROPERTY_NAMES,
};

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("no class has a positive example")]
    NoPositives,
    #[error("empty dataset")]
    Empty,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProbeTarget {
    Category,
    Properties,
    Containment,
}

impl ProbeTarget {
    pub const ALL: [ProbeTarget; 3] = [Self::Category, Self::Properties, Self::Containment];

    pub fn name(self) -> &'static str {
        match self {
            Self::Category => "category",
            Self::Properties => "properties",
            Self::Containment => "containment",
        }
    }

    pub fn width(self) -> usize {
        match self {
            Self::Category => NUM_CATEGORIES,
            Self::Properties => 6,
            Self::Containment => 2,
        }
    }

    /// Label matrix, one row per sample.
    pub fn targets(self, samples: &[LabeledSample]) -> Vec<Vec<bool>> {
        samples
            .iter()
            .map(|s| match self {
                Self::Category => (0..NUM_CATEGORIES)
                    .map(|c| c == s.labels.category as usize)
                    .collect(),
                Self::Properties => s.labels.properties.to_vec(),
                Self::Containment => s.labels.containment.to_vec(),
            })
            .collect()
    }
}

/// Frozen feature extractor for probing.
#[derive(Clone, Debug)]
pub enum Encoder {
    /// Ground-truth oracle features of the labelled object.
    Oracle,
    /// The object encoder of a network snapshot.
    Network {
        params: ParamGroup<f64>,
        net: NetConfig,
    },
}

impl Encoder {
    pub fn dim(&self) -> usize {
        match self {
            Self::Oracle => ORACLE_DIM,
            Self::Network { net, .. } => net.d_o,
        }
    }

    /// `n x dim` features. Only reads the parameters.
    pub fn features(&self, samples: &[LabeledSample]) -> Result<Tensor<f64>, ProbeError> {
        if samples.is_empty() {
            return Err(ProbeError::Empty);
        }
        let oracle = |cat_only: bool| -> Result<Tensor<f64>, ProbeError> {
            let mut rows = Vec::with_capacity(samples.len() * ORACLE_DIM);
            for s in samples {
                let o = oracle_objects(s.frame_world(), &[s.target])?;
                rows.extend_from_slice(oracle_features(&o, cat_only).data());
            }
            Ok(Tensor::matrix(samples.len(), ORACLE_DIM, rows)?)
        };
        match self {
            Self::Oracle => oracle(false),
            Self::Network { params, net } => {
                let x = if net.aux.uses_oracle() {
                    oracle(net.aux == crate::agent::AuxMode::OracleCategoryOnly)?
                } else {
                    let data = samples
                        .iter()
                        .flat_map(|s| s.patch.iter().map(|&v| v as f64))
                        .collect();
                    Tensor::matrix(samples.len(), PATCH_DIM, data)?
                };
                let mut g = Graph::new();
                let xi = g.input(x);
                let z = encode_object_rows(&mut g, params, net, xi)?;
                Ok(g.value(z).clone())
            }
        }
    }
}

/// Average precision of one class: mean precision at the rank of each
/// positive, scores sorted descending (ties keep sample order).
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// Mean AP over classes with at least one positive. `scores[i][c]`,
/// `labels[i][c]` index sample `i`, class `c`.
pub fn map_score(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<f64, ProbeError> {
    let classes = labels.first().map_or(0, |r| r.len());
    let aps: Vec<f64> = (0..classes)
        .filter_map(|c| {
            let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let l: Vec<bool> = labels.iter().map(|r| r[c]).collect();
            average_precision(&s, &l)
        })
        .collect();
    if aps.is_empty() {
        return Err(ProbeError::NoPositives);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub train_fraction: f64,
    pub seeds: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            lr: 0.05,
            train_fraction: 0.8,
            seeds: 5,
        }
    }
}

/// Seeded split; resampled while some label column with positives has
/// none in the training part.
fn split(labels: &[Vec<bool>], frac: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let n = labels.len();
    let n_train = ((n as f64 * frac).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let cols = labels[0].len();
    let present: Vec<usize> = (0..cols).filter(|&c| labels.iter().any(|r| r[c])).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    for attempt in 0..100 {
        idx.shuffle(rng);
        let ok = present
            .iter()
            .all(|&c| idx[..n_train].iter().any(|&i| labels[i][c]));
        if ok {
            break;
        }
        log::warn!("probe split {attempt} leaves a label without training positives; resampling");
    }
    (idx[..n_train].to_vec(), idx[n_train..].to_vec())
}

fn rows(x: &Tensor<f64>, idx: &[usize]) -> Tensor<f64> {
    let d = x.cols();
    let data = idx.iter().flat_map(|&i| x.row(i).iter().copied()).collect();
    Tensor::matrix(idx.len(), d, data).expect("row gather")
}

/// Standardises columns with the training statistics.
fn standardise(train: &mut Tensor<f64>, test: &mut Tensor<f64>) {
    let (n, d) = train.dims2();
    for c in 0..d {
        let mean = (0..n).map(|r| train.at(r, c)).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (train.at(r, c) - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = if var > 1e-16 { var.sqrt() } else { 1.0 };
        for t in [&mut *train, &mut *test] {
            for r in 0..t.rows() {
                let v = (t.at(r, c) - mean) / sd;
                t.set(r, c, v);
            }
        }
    }
}

/// Trains one linear probe by full-batch gradient descent (softmax
/// cross-entropy for categories, per-feature logistic loss otherwise) and
/// returns the held-out mAP.
pub fn train_probe(
    features: &Tensor<f64>,
    samples: &[LabeledSample],
    target: ProbeTarget,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<f64, ProbeError> {
    if samples.len() < 2 {
        return Err(ProbeError::Empty);
    }
    let labels = target.targets(samples);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tr, te) = split(&labels, cfg.train_fraction, &mut rng);
    let mut xtr = rows(features, &tr);
    let mut xte = rows(features, &te);
    standardise(&mut xtr, &mut xte);
    let (n, d) = xtr.dims2();
    let k = target.width();
    let y: Vec<f64> = tr
        .iter()
        .flat_map(|&i| labels[i].iter().map(|&b| b as u8 as f64))
        .collect();
    let mut w = Tensor::matrix(d, k, (0..d * k).map(|_| 0.01 * standard_normal(&mut rng)).collect())?;
    let mut b = vec![0.0; k];
    let xt = xtr.transpose();
    for _ in 0..cfg.epochs {
        let mut p = xtr.matmul(&w)?;
        activate(&mut p, &b, target);
        // d(loss)/d(logits) = (p - y) / n for both losses
        let data = p.data_mut();
        for (v, &t) in data.iter_mut().zip(&y) {
            *v = (*v - t) / n as f64;
        }
        let gw = xt.matmul(&p)?;
        for (wv, gv) in w.data_mut().iter_mut().zip(gw.data()) {
            *wv -= cfg.lr * gv;
        }
        for (c, bv) in b.iter_mut().enumerate() {
            *bv -= cfg.lr * (0..n).map(|r| p.at(r, c)).sum::<f64>();
        }
    }
    let mut s = xte.matmul(&w)?;
    activate(&mut s, &b, target);
    let scores: Vec<Vec<f64>> = (0..s.rows()).map(|r| s.row(r).to_vec()).collect();
    let test_labels: Vec<Vec<bool>> = te.iter().map(|&i| labels[i].clone()).collect();
    map_score(&scores, &test_labels)
}

/// Adds the bias and applies softmax (category) or sigmoid (binary).
fn activate(z: &mut Tensor<f64>, b: &[f64], target: ProbeTarget) {
    let (n, k) = z.dims2();
    let data = z.data_mut();
    for r in 0..n {
        let row = &mut data[r * k..(r + 1) * k];
        for (v, bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
        match target {
            ProbeTarget::Category => {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            _ => {
                for v in row.iter_mut() {
                    *v = 1.0 / (1.0 + (-*v).exp());
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub encoder: String,
    pub target: ProbeTarget,
    pub seed: u64,
    pub map: f64,
}

pub const PROBE_HEADER: &str = "encoder,target,seed,map";

impl ProbeRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{}", self.encoder, self.target.name(), self.seed, self.map)
    }
}

/// Probes every target with `cfg.seeds` split/init seeds.
pub fn probe_encoder(
    name: &str,
    encoder: &Encoder,
    samples: &[LabeledSample],
    cfg: &ProbeConfig,
) -> Result<Vec<ProbeRow>, ProbeError> {
    let x = encoder.features(samples)?;
    let mut out = Vec::new();
    for target in ProbeTarget::ALL {
        for seed in 0..cfg.seeds {
            out.push(ProbeRow {
                encoder: name.to_string(),
                target,
                seed,
                map: train_probe(&x, samples, target, cfg, seed)?,
            });
        }
    }
    Ok(out)
}

/// Mean and standard error of the mean.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
