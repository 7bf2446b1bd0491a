//! End-to-end stages over a run directory.
//!
//! Layout under `run_dir`:
//! `backbone/` (checkpoint), `pretrain.jsonl`, `latents/<settings>/<split>/`,
//! `lft/seed_<s>/` (checkpoints), `finetune_seed_<s>.jsonl`, `report.json`.

use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use serde_json::json;

use eegdm::backbone::{extract_pooled, ExtractConfig, Ssmdp, SsmdpConfig};
use eegdm::checkpoint::Checkpoint;
use eegdm::diffusion::ancestral_sample;
use eegdm::latent::{LatentCache, LatentNormalizer, PooledBatch};
use eegdm::lft::{Lft, LftConfig};
use eegdm::metrics::{summarize, MetricReport, MetricSummary};
use eegdm::numerics::rng::{child, derive_seed};
use eegdm::signal::{mu_law_expand, synth_dataset, write_segment, DatasetManifest, SegmentBatch, SegmentFile, Split};
use eegdm::training::{evaluate, finetune, pretrain, EpochRecord, FinetuneConfig, JsonlLog, PretrainConfig, TrainState};
use eegdm::{Error, Module, Result};

use crate::config::{LayerSelection, RunConfig};

const BACKBONE: &str = "backbone";
const LFT: &str = "lft";

pub fn backbone_dir(cfg: &RunConfig) -> PathBuf {
    cfg.run_dir.join(BACKBONE)
}

pub fn classifier_dir(cfg: &RunConfig, seed: u64) -> PathBuf {
    cfg.run_dir.join(LFT).join(format!("seed_{seed}"))
}

/// Seeds of the fine-tuning runs.
pub fn run_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.seeds as u64).map(|i| cfg.seed + i).collect()
}

pub fn run_synth(cfg: &RunConfig) -> Result<DatasetManifest> {
    let spec = eegdm::signal::SynthSpec { seed: cfg.seed, ..cfg.synth.clone() };
    synth_dataset(&spec, &cfg.data_dir)
}

pub fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    DatasetManifest::load(&cfg.data_dir)
}

pub fn load_split(cfg: &RunConfig, manifest: &DatasetManifest, split: Split) -> Result<SegmentBatch> {
    manifest.load_split(&cfg.data_dir, split, &cfg.preprocess)
}

fn check_channels(backbone: &SsmdpConfig, manifest: &DatasetManifest) -> Result<()> {
    if manifest.channels > backbone.num_channels {
        return Err(Error::Config(format!(
            "data has {} channels but the backbone embeds only {}",
            manifest.channels, backbone.num_channels
        )));
    }
    Ok(())
}

/// Diffusion pretraining; checkpoints after every epoch. With `resume`, an
/// existing checkpoint's weights, optimiser state and counters are reused.
pub fn run_pretrain(cfg: &RunConfig, resume: bool) -> Result<Vec<EpochRecord>> {
    let manifest = load_manifest(cfg)?;
    check_channels(&cfg.backbone, &manifest)?;
    let train = load_split(cfg, &manifest, Split::Train)?;
    let valid = load_split(cfg, &manifest, Split::Valid).ok();
    let dir = backbone_dir(cfg);
    let log_path = cfg.run_dir.join("pretrain.jsonl");
    fs::create_dir_all(&cfg.run_dir)?;

    let existing = if resume { Checkpoint::load(&dir).ok() } else { None };
    let (mut model, mut state, mut log) = match existing {
        Some(ck) => {
            ck.expect_kind(BACKBONE)?;
            let mut model = Ssmdp::new(ck.config()?, &mut child(cfg.seed, &[10]))?;
            ck.load_into(&mut model, false)?;
            let state = ck.state.clone().ok_or_else(|| Error::Format("checkpoint has no optimiser state".into()))?;
            log::info!("resuming pretraining at epoch {} step {}", state.epoch, state.step);
            (model, state, JsonlLog::append(&log_path)?)
        }
        None => {
            let model = Ssmdp::new(cfg.backbone.clone(), &mut child(cfg.seed, &[10]))?;
            let state = TrainState::new(&model, &cfg.pretrain.optim)?;
            (model, state, JsonlLog::create(&log_path)?)
        }
    };
    let pcfg = PretrainConfig { seed: derive_seed(cfg.seed, &[11]), ..cfg.pretrain.clone() };
    let extra = json!({ "seed": cfg.seed, "rate": cfg.preprocess.target_rate, "preprocess": cfg.preprocess });
    let mut on_epoch = |rec: &EpochRecord, m: &Ssmdp<f32>, s: &TrainState| -> Result<()> {
        log.write(rec)?;
        Checkpoint::capture(BACKBONE, m.config(), m, Some(s), extra.clone())?.save(&dir)
    };
    pretrain(&mut model, &mut state, &train, valid.as_ref(), &pcfg, &mut on_epoch)
}

/// The pretrained backbone with its EMA weights.
pub fn load_backbone(cfg: &RunConfig) -> Result<Ssmdp<f32>> {
    let ck = Checkpoint::load(&backbone_dir(cfg))?;
    ck.expect_kind(BACKBONE)?;
    let mut model = Ssmdp::new(ck.config()?, &mut child(0, &[0]))?;
    ck.load_into(&mut model, ck.ema.is_some())?;
    Ok(model)
}

fn extraction_key(e: &ExtractConfig) -> String {
    format!("{:?}-{:?}-{:?}-t{}-p{}", e.tap, e.pool, e.mode, e.step, e.pools).to_lowercase()
}

pub fn latent_root(cfg: &RunConfig) -> PathBuf {
    cfg.latent_cache.clone().unwrap_or_else(|| cfg.run_dir.join("latents").join(extraction_key(&cfg.extract)))
}

/// FNV-1a over the backbone weights, extraction and preprocessing settings
/// and the split's file list.
pub fn fingerprint(cfg: &RunConfig, manifest: &DatasetManifest, split: Split) -> Result<String> {
    let dir = backbone_dir(cfg);
    let mut h = FnvHasher::default();
    h.write(&fs::read(dir.join("manifest.json"))?);
    let sub = if dir.join("ema").is_dir() { "ema" } else { "params" };
    let mut blobs: Vec<PathBuf> = fs::read_dir(dir.join(sub))?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    blobs.sort();
    for b in blobs {
        h.write(&fs::read(b)?);
    }
    let settings = ExtractConfig { chunk: 0, ..cfg.extract };
    h.write(&serde_json::to_vec(&settings)?);
    h.write(&serde_json::to_vec(&cfg.preprocess)?);
    h.write(&serde_json::to_vec(manifest.entries(split))?);
    h.write(split.name().as_bytes());
    Ok(format!("{:016x}", h.finish()))
}

/// Pooled latents of one split, reusing the cache when its fingerprint
/// matches. Returns the cache and whether it was reused.
pub fn extract_split(cfg: &RunConfig, manifest: &DatasetManifest, model: Option<&Ssmdp<f32>>, split: Split) -> Result<(LatentCache, bool)> {
    let dir = latent_root(cfg).join(split.name());
    let fp = fingerprint(cfg, manifest, split)?;
    if let Some(c) = LatentCache::load_matching(&dir, &fp)? {
        return Ok((c, true));
    }
    if cfg.latent_cache.is_some() && dir.exists() {
        return Err(Error::Config(format!("latent cache {} was built with different settings or weights", dir.display())));
    }
    let owned;
    let model = match model {
        Some(m) => m,
        None => {
            owned = load_backbone(cfg)?;
            &owned
        }
    };
    let batch = load_split(cfg, manifest, split)?;
    let pooled = extract_pooled(model, &batch, &cfg.extract)?;
    let cache = LatentCache::new(fp, pooled, cfg.extract.meta(), batch.labels.clone())?;
    cache.save(&dir)?;
    Ok((cache, false))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractSummary {
    pub dir: PathBuf,
    /// `(C, n, p, H)` of one sample.
    pub shape: [usize; 4],
    pub segments: Vec<(Split, usize)>,
    pub reused: bool,
}

pub fn run_extract(cfg: &RunConfig) -> Result<ExtractSummary> {
    let manifest = load_manifest(cfg)?;
    let model = load_backbone(cfg)?;
    let mut segments = Vec::new();
    let mut reused = true;
    let mut shape = [0; 4];
    for split in Split::ALL {
        if manifest.entries(split).is_empty() {
            continue;
        }
        let (c, r) = extract_split(cfg, &manifest, Some(&model), split)?;
        let b = &c.batch;
        shape = [b.channels, b.layers, b.pools, b.hidden];
        segments.push((split, b.segments));
        reused &= r;
    }
    Ok(ExtractSummary { dir: latent_root(cfg), shape, segments, reused })
}

/// Everything a trained classifier needs besides its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub seed: u64,
    pub layers: LayerSelection,
    pub layer_indices: Vec<usize>,
    pub normalizer: LatentNormalizer,
    pub extract: ExtractConfig,
    pub best_epoch: usize,
    pub best_valid_kappa: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinetuneReport {
    pub lft: LftConfig,
    pub parameters: usize,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<MetricReport>,
    pub best_epochs: Vec<usize>,
    pub summary: MetricSummary,
}

struct Prepared {
    train: (PooledBatch<f32>, Vec<usize>),
    valid: Option<(PooledBatch<f32>, Vec<usize>)>,
    test: Option<(PooledBatch<f32>, Vec<usize>)>,
    indices: Vec<usize>,
    normalizer: LatentNormalizer,
}

fn prepare(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<Prepared> {
    let need_model = Split::ALL.iter().any(|&s| {
        !manifest.entries(s).is_empty()
            && fingerprint(cfg, manifest, s)
                .ok()
                .and_then(|fp| LatentCache::load_matching(&latent_root(cfg).join(s.name()), &fp).ok().flatten())
                .is_none()
    });
    let model = if need_model { Some(load_backbone(cfg)?) } else { None };
    let get = |split: Split| -> Result<Option<(PooledBatch<f32>, Vec<usize>)>> {
        if manifest.entries(split).is_empty() {
            return Ok(None);
        }
        let (c, _) = extract_split(cfg, manifest, model.as_ref(), split)?;
        check_cache(cfg, &c)?;
        Ok(Some((c.batch, c.meta.labels)))
    };
    let train = get(Split::Train)?.ok_or_else(|| Error::Format("training split is empty".into()))?;
    let valid = get(Split::Valid)?;
    let test = get(Split::Test)?;
    let layers = train.0.layers;
    let indices = cfg.layers.indices(layers)?;
    let subset = |b: Option<(PooledBatch<f32>, Vec<usize>)>| -> Result<Option<(PooledBatch<f32>, Vec<usize>)>> {
        b.map(|(p, l)| Ok((p.layer_subset(&indices)?, l))).transpose()
    };
    let mut train = subset(Some(train))?.expect("present");
    let mut valid = subset(valid)?;
    let mut test = subset(test)?;
    let normalizer = if cfg.normalize_latents {
        LatentNormalizer::fit(&train.0)?
    } else {
        LatentNormalizer::identity(indices.len(), train.0.hidden)
    };
    normalizer.apply(&mut train.0)?;
    for b in [&mut valid, &mut test].into_iter().flatten() {
        normalizer.apply(&mut b.0)?;
    }
    Ok(Prepared { train, valid, test, indices, normalizer })
}

fn check_cache(cfg: &RunConfig, c: &LatentCache) -> Result<()> {
    let e = &cfg.extract;
    if c.meta.pool != e.pool || c.meta.pools != e.pools || c.meta.latent != e.meta() {
        return Err(Error::Config(format!(
            "latent cache holds ({:?}, p={}, {:?}) but the run asks for ({:?}, p={}, {:?})",
            c.meta.pool,
            c.meta.pools,
            c.meta.latent,
            e.pool,
            e.pools,
            e.meta()
        )));
    }
    Ok(())
}

/// Trains one classifier per seed on the pooled latents of the frozen
/// backbone and scores each on the test split.
pub fn run_finetune(cfg: &RunConfig) -> Result<FinetuneReport> {
    let manifest = load_manifest(cfg)?;
    let data = prepare(cfg, &manifest)?;
    let (train, train_labels) = &data.train;
    let lft_cfg = cfg.resolve_lft(train.channels, manifest.num_classes)?;
    let (eval_batch, eval_labels) = data.test.as_ref().or(data.valid.as_ref()).unwrap_or(&data.train);
    let mut per_seed = Vec::new();
    let mut best_epochs = Vec::new();
    let mut parameters = 0;
    for seed in run_seeds(cfg) {
        let mut model = Lft::<f32>::new(lft_cfg.clone(), &mut child(seed, &[12]))?;
        parameters = model.num_trainable();
        let fcfg = FinetuneConfig { seed: derive_seed(seed, &[13]), ..cfg.finetune.clone() };
        let mut log = JsonlLog::create(&cfg.run_dir.join(format!("finetune_seed_{seed}.jsonl")))?;
        let valid = data.valid.as_ref().map(|(b, l)| (b, l.as_slice()));
        let outcome = finetune(&mut model, train, train_labels, valid, &fcfg, &mut |r| log.write(r))?;
        let report = evaluate(&model, eval_batch, eval_labels)?;
        log::info!("seed {seed}: best epoch {} test kappa {:.4} bacc {:.4}", outcome.best_epoch, report.kappa, report.bacc);
        let meta = ClassifierMeta {
            seed,
            layers: cfg.layers,
            layer_indices: data.indices.clone(),
            normalizer: data.normalizer.clone(),
            extract: cfg.extract,
            best_epoch: outcome.best_epoch,
            best_valid_kappa: outcome.best_score,
        };
        Checkpoint::capture(LFT, &lft_cfg, &model, None, serde_json::to_value(&meta)?)?.save(&classifier_dir(cfg, seed))?;
        per_seed.push(report);
        best_epochs.push(outcome.best_epoch);
    }
    let report = FinetuneReport { lft: lft_cfg, parameters, seeds: run_seeds(cfg), summary: summarize(&per_seed)?, per_seed, best_epochs };
    fs::write(cfg.run_dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub split: Split,
    pub rate: f64,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<MetricReport>,
    pub summary: MetricSummary,
}

/// Scores the trained classifiers on `split`, optionally after resampling
/// the data to `rate` Hz and retargeting the backbone's step sizes.
pub fn run_eval(cfg: &RunConfig, split: Split, rate: Option<f64>) -> Result<EvalReport> {
    let manifest = load_manifest(cfg)?;
    let seeds: Vec<u64> = run_seeds(cfg).into_iter().filter(|&s| classifier_dir(cfg, s).join("manifest.json").is_file()).collect();
    if seeds.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no trained classifier under {}", cfg.run_dir.join(LFT).display()),
        )));
    }
    let base_rate = cfg.preprocess.target_rate;
    let pooled = match rate {
        Some(r) if r != base_rate => {
            let mut model = load_backbone(cfg)?;
            model.retarget_rate(r / base_rate)?;
            let pre = eegdm::signal::PreprocessConfig { target_rate: r, ..cfg.preprocess.clone() };
            let batch = manifest.load_split(&cfg.data_dir, split, &pre)?;
            if batch.samples % cfg.extract.pools != 0 {
                return Err(Error::Config(format!("{} samples at {r} Hz do not split into {} pools", batch.samples, cfg.extract.pools)));
            }
            (extract_pooled(&model, &batch, &cfg.extract)?, batch.labels)
        }
        _ => {
            let (c, _) = extract_split(cfg, &manifest, None, split)?;
            check_cache(cfg, &c)?;
            (c.batch, c.meta.labels)
        }
    };
    let mut per_seed = Vec::new();
    for &seed in &seeds {
        let ck = Checkpoint::load(&classifier_dir(cfg, seed))?;
        ck.expect_kind(LFT)?;
        let meta: ClassifierMeta = serde_json::from_value(ck.manifest.extra.clone())?;
        let mut model = Lft::<f32>::new(ck.config()?, &mut child(seed, &[12]))?;
        ck.load_into(&mut model, false)?;
        let mut batch = pooled.0.layer_subset(&meta.layer_indices)?;
        meta.normalizer.apply(&mut batch)?;
        per_seed.push(evaluate(&model, &batch, &pooled.1)?);
    }
    Ok(EvalReport { split, rate: rate.unwrap_or(base_rate), summary: summarize(&per_seed)?, seeds, per_seed })
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerateSummary {
    pub files: Vec<PathBuf>,
    pub schedule_csv: PathBuf,
    pub waveforms_csv: PathBuf,
}

/// Ancestral samples from the backbone, written as segment files in the
/// original amplitude units, plus schedule and waveform CSVs.
pub fn run_generate(cfg: &RunConfig, count: usize, out: &Path) -> Result<GenerateSummary> {
    if count == 0 {
        return Err(Error::Config("nothing to generate".into()));
    }
    let model = load_backbone(cfg)?;
    let manifest = load_manifest(cfg).ok();
    let channels = manifest.as_ref().map_or(model.config().num_channels, |m| m.channels);
    let len = cfg.preprocess.window_len();
    let rate = cfg.preprocess.target_rate;
    let ids: Vec<usize> = (0..channels).collect();
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut wave = String::from("segment,channel,index,time_s,value\n");
    for i in 0..count {
        let mut rng = child(cfg.seed, &[14, i as u64]);
        let x: Vec<f32> = ancestral_sample(&model, model.schedule(), len, &ids, &mut rng)?;
        let data: Vec<f32> = x
            .iter()
            .map(|&v| {
                let v = if cfg.preprocess.compand { mu_law_expand(v as f64) } else { v as f64 };
                (v * cfg.preprocess.scale) as f32
            })
            .collect();
        for (k, v) in data.iter().enumerate() {
            let (c, t) = (k / len, k % len);
            wave.push_str(&format!("{i},{c},{t},{:.6},{v}\n", t as f64 / rate));
        }
        let path = out.join(format!("gen_{i:04}.seg"));
        write_segment(&path, &SegmentFile::new(channels, len, rate, 0, data)?)?;
        files.push(path);
    }
    let sched = model.schedule();
    let schedule_csv = out.join("schedule.csv");
    fs::write(&schedule_csv, sched.to_csv())?;
    let mut snr = String::from("t,snr,snr_db\n");
    for t in 1..=sched.steps() {
        let r = sched.alpha_bar(t) / (1.0 - sched.alpha_bar(t));
        snr.push_str(&format!("{t},{r:.10e},{:.6}\n", 10.0 * r.log10()));
    }
    fs::write(out.join("snr.csv"), snr)?;
    let waveforms_csv = out.join("waveforms.csv");
    fs::write(&waveforms_csv, wave)?;
    Ok(GenerateSummary { files, schedule_csv, waveforms_csv })
}
