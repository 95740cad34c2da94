//! Training checkpoints: a tar archive of `meta.json` plus safetensors
//! blobs, each blob's SHA-256 recorded in the metadata.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use srseg_autograd::{Adam, AdamConfig, AdamState, ParamStore};

use crate::losses::LossWeights;
use crate::model::{
    build_discriminator, build_generator, Discriminator, DiscriminatorSpec, Generator,
    GeneratorSpec, BN_EPS, BN_MOMENTUM,
};
use crate::tensor_io::{decode, encode, NamedTensors};
use crate::{Error, Result};

const FORMAT_VERSION: u32 = 1;
const META: &str = "meta.json";

/// Run-level facts stored alongside the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub loss_weights: LossWeights,
    pub remap_table_digest: String,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub generator: Generator,
    pub g_opt: Adam<f32>,
    /// Created when the first adversarial stage starts.
    pub discriminator: Option<(Discriminator, Adam<f32>)>,
    /// Completed epochs.
    pub epoch: usize,
    pub global_step: u64,
    pub stage_index: usize,
    pub seed: u64,
    pub info: RunInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BatchNormMeta {
    eps: f64,
    momentum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AdamMeta {
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format_version: u32,
    generator_spec: GeneratorSpec,
    with_seg_head: bool,
    discriminator_spec: Option<DiscriminatorSpec>,
    stage_index: usize,
    epoch: usize,
    global_step: u64,
    seed: u64,
    loss_weights: LossWeights,
    remap_table_digest: String,
    batch_norm: BatchNormMeta,
    generator_adam: AdamMeta,
    discriminator_adam: Option<AdamMeta>,
    /// Blob name to hex SHA-256.
    blobs: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn named(iter: impl Iterator<Item = (impl ToString, srseg_autograd::Tensor<f32>)>) -> NamedTensors {
    iter.map(|(k, v)| (k.to_string(), v)).collect()
}

fn adam_meta(opt: &Adam<f32>) -> AdamMeta {
    AdamMeta {
        beta1: opt.config.beta1,
        beta2: opt.config.beta2,
        eps: opt.config.eps,
        steps: opt.state.steps.clone(),
    }
}

fn store_blobs(
    prefix: &str,
    store: &ParamStore<f32>,
    opt: &Adam<f32>,
    blobs: &mut BTreeMap<String, Vec<u8>>,
) {
    blobs.insert(
        format!("{prefix}.safetensors"),
        encode(&named(store.params().map(|(k, v)| (k, v.clone())))),
    );
    blobs.insert(
        format!("{prefix}_buffers.safetensors"),
        encode(&named(store.buffers().map(|(k, v)| (k, v.clone())))),
    );
    blobs.insert(format!("{prefix}_adam_m.safetensors"), encode(&opt.state.m));
    blobs.insert(format!("{prefix}_adam_v.safetensors"), encode(&opt.state.v));
}

/// Serialized checkpoint bytes; identical states give identical bytes.
pub fn checkpoint_bytes(state: &TrainState) -> Vec<u8> {
    let mut blobs = BTreeMap::new();
    store_blobs(
        "generator",
        &state.generator.params,
        &state.g_opt,
        &mut blobs,
    );
    if let Some((d, opt)) = &state.discriminator {
        store_blobs("discriminator", &d.params, opt, &mut blobs);
    }
    let meta = Meta {
        format_version: FORMAT_VERSION,
        generator_spec: state.generator.spec.clone(),
        with_seg_head: state.generator.has_seg_head(),
        discriminator_spec: state.discriminator.as_ref().map(|(d, _)| d.spec.clone()),
        stage_index: state.stage_index,
        epoch: state.epoch,
        global_step: state.global_step,
        seed: state.seed,
        loss_weights: state.info.loss_weights,
        remap_table_digest: state.info.remap_table_digest.clone(),
        batch_norm: BatchNormMeta {
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        },
        generator_adam: adam_meta(&state.g_opt),
        discriminator_adam: state.discriminator.as_ref().map(|(_, o)| adam_meta(o)),
        blobs: blobs
            .iter()
            .map(|(k, v)| (k.clone(), sha256_hex(v)))
            .collect(),
    };
    let meta_bytes = serde_json::to_vec_pretty(&meta).expect("metadata serializes");

    let mut builder = tar::Builder::new(Vec::new());
    let mut append = |name: &str, data: &[u8]| {
        let mut header = tar::Header::new_gnu();
        header.set_size(data.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_cksum();
        builder
            .append_data(&mut header, name, data)
            .expect("in-memory tar");
    };
    append(META, &meta_bytes);
    for (name, data) in &blobs {
        append(name, data);
    }
    builder.into_inner().expect("in-memory tar")
}

/// Writes atomically: a temporary sibling file renamed into place.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, checkpoint_bytes(state)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn corrupt(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::CorruptCheckpoint(format!("{}: {reason}", path.display()))
}

fn read_entries(path: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut archive = tar::Archive::new(bytes.as_slice());
    let mut out = BTreeMap::new();
    let entries = archive.entries().map_err(|e| corrupt(path, e))?;
    for entry in entries {
        let mut entry = entry.map_err(|e| corrupt(path, e))?;
        let name = entry
            .path()
            .map_err(|e| corrupt(path, e))?
            .to_string_lossy()
            .into_owned();
        let mut data = Vec::new();
        entry.read_to_end(&mut data).map_err(|e| corrupt(path, e))?;
        out.insert(name, data);
    }
    Ok(out)
}

fn restore_store(
    path: &Path,
    blobs: &mut BTreeMap<String, NamedTensors>,
    prefix: &str,
    reference: &ParamStore<f32>,
) -> Result<ParamStore<f32>> {
    let mut take = |name: String| {
        blobs
            .remove(&name)
            .ok_or_else(|| corrupt(path, format!("missing blob {name}")))
    };
    let params = take(format!("{prefix}.safetensors"))?;
    let buffers = take(format!("{prefix}_buffers.safetensors"))?;
    let mut store = ParamStore::new();
    for (k, v) in params {
        store.insert_param(k, v);
    }
    for (k, v) in buffers {
        store.insert_buffer(k, v);
    }
    let layout = |s: &ParamStore<f32>| {
        s.params()
            .chain(s.buffers())
            .map(|(k, t)| (k.to_string(), t.shape().to_vec()))
            .collect::<Vec<_>>()
    };
    if layout(&store) != layout(reference) {
        return Err(Error::SpecMismatch(format!(
            "{prefix} weights in {} do not match the recorded spec",
            path.display()
        )));
    }
    Ok(store)
}

fn restore_adam(
    path: &Path,
    blobs: &mut BTreeMap<String, NamedTensors>,
    prefix: &str,
    meta: &AdamMeta,
) -> Result<Adam<f32>> {
    let mut take = |name: String| {
        blobs
            .remove(&name)
            .ok_or_else(|| corrupt(path, format!("missing blob {name}")))
    };
    let m = take(format!("{prefix}_adam_m.safetensors"))?;
    let v = take(format!("{prefix}_adam_v.safetensors"))?;
    Ok(Adam {
        config: AdamConfig {
            beta1: meta.beta1,
            beta2: meta.beta2,
            eps: meta.eps,
        },
        state: AdamState {
            steps: meta.steps.clone(),
            m,
            v,
        },
    })
}

/// Reads and verifies a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let mut entries = read_entries(path)?;
    let meta_bytes = entries
        .remove(META)
        .ok_or_else(|| corrupt(path, "no meta.json"))?;
    let meta: Meta = serde_json::from_slice(&meta_bytes).map_err(|e| corrupt(path, e))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(corrupt(
            path,
            format!("unsupported format version {}", meta.format_version),
        ));
    }
    if entries.keys().ne(meta.blobs.keys()) {
        return Err(corrupt(
            path,
            "archive entries differ from the recorded blob list",
        ));
    }
    let mut blobs = BTreeMap::new();
    for (name, data) in entries {
        if sha256_hex(&data) != meta.blobs[&name] {
            return Err(corrupt(path, format!("checksum mismatch in {name}")));
        }
        blobs.insert(
            name.clone(),
            decode(&data).map_err(|e| corrupt(path, format!("{name}: {e}")))?,
        );
    }

    let reference = build_generator(&meta.generator_spec, meta.with_seg_head, 0)
        .map_err(|e| Error::SpecMismatch(e.to_string()))?;
    let params = restore_store(path, &mut blobs, "generator", &reference.params)?;
    let generator = Generator::from_params(meta.generator_spec.clone(), params)?;
    let g_opt = restore_adam(path, &mut blobs, "generator", &meta.generator_adam)?;

    let discriminator = match (&meta.discriminator_spec, &meta.discriminator_adam) {
        (Some(spec), Some(adam)) => {
            let reference =
                build_discriminator(spec, 0).map_err(|e| Error::SpecMismatch(e.to_string()))?;
            let params = restore_store(path, &mut blobs, "discriminator", &reference.params)?;
            let d = Discriminator::from_params(spec.clone(), params)?;
            Some((d, restore_adam(path, &mut blobs, "discriminator", adam)?))
        }
        (None, None) => None,
        _ => {
            return Err(corrupt(
                path,
                "discriminator spec and optimizer state disagree",
            ))
        }
    };

    Ok(TrainState {
        generator,
        g_opt,
        discriminator,
        epoch: meta.epoch,
        global_step: meta.global_step,
        stage_index: meta.stage_index,
        seed: meta.seed,
        info: RunInfo {
            loss_weights: meta.loss_weights,
            remap_table_digest: meta.remap_table_digest,
        },
    })
}

/// Fails with `SpecMismatch` unless the checkpoint was trained with `spec`.
pub fn ensure_generator_spec(state: &TrainState, spec: &GeneratorSpec) -> Result<()> {
    if &state.generator.spec == spec {
        Ok(())
    } else {
        Err(Error::SpecMismatch(format!(
            "checkpoint generator {:?} differs from requested {:?}",
            state.generator.spec, spec
        )))
    }
}

/// SHA-256 of each weight blob, for comparing saved archives.
pub fn weight_checksums(path: &Path) -> Result<BTreeMap<String, String>> {
    let entries = read_entries(path)?;
    Ok(entries
        .into_iter()
        .filter(|(k, _)| k != META)
        .map(|(k, v)| (k, sha256_hex(&v)))
        .collect())
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.ckpt"))
}

/// Newest `epoch_NNNN.ckpt` in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Option<(usize, PathBuf)> {
    fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let n = name
                .strip_prefix("epoch_")?
                .strip_suffix(".ckpt")?
                .parse()
                .ok()?;
            Some((n, e.path()))
        })
        .max_by_key(|(n, _)| *n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DiscriminatorSpec;

    fn tiny_state(with_disc: bool) -> TrainState {
        let spec = GeneratorSpec {
            n_res_blocks: 1,
            trunk_width: 4,
            ..GeneratorSpec::default()
        };
        let generator = build_generator(&spec, true, 3).unwrap();
        let mut g_opt = Adam::new(AdamConfig::default());
        let grads: BTreeMap<_, _> = generator
            .params
            .params()
            .map(|(k, t)| (k.to_string(), t.map(|v| v * 0.5 + 0.01)))
            .collect();
        let mut generator = generator;
        g_opt.step(&mut generator.params, &grads, 1e-3);
        let discriminator = with_disc.then(|| {
            let spec = DiscriminatorSpec {
                base_width: 4,
                max_width: 8,
                dense_units: 8,
                input_size: 16,
                leaky_slope: 0.2,
            };
            (
                build_discriminator(&spec, 9).unwrap(),
                Adam::new(AdamConfig::default()),
            )
        });
        TrainState {
            generator,
            g_opt,
            discriminator,
            epoch: 7,
            global_step: 123,
            stage_index: 2,
            seed: 42,
            info: RunInfo {
                loss_weights: LossWeights::default(),
                remap_table_digest: "abc".into(),
            },
        }
    }

    #[test]
    fn round_trip_restores_everything() {
        let dir = tempfile::tempdir().unwrap();
        for with_disc in [false, true] {
            let state = tiny_state(with_disc);
            let path = dir.path().join(format!("s{with_disc}.ckpt"));
            save_checkpoint(&state, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back.generator, state.generator);
            assert_eq!(back.g_opt.state, state.g_opt.state);
            assert_eq!(
                back.discriminator.map(|d| d.0),
                state.discriminator.clone().map(|d| d.0)
            );
            assert_eq!(
                (back.epoch, back.global_step, back.stage_index, back.seed),
                (7, 123, 2, 42)
            );
            assert_eq!(back.info, state.info);
        }
    }

    #[test]
    fn save_load_save_keeps_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save_checkpoint(&tiny_state(true), &a).unwrap();
        save_checkpoint(&load_checkpoint(&a).unwrap(), &b).unwrap();
        assert_eq!(weight_checksums(&a).unwrap(), weight_checksums(&b).unwrap());
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        save_checkpoint(&tiny_state(false), &path).unwrap();
        let clean = fs::read(&path).unwrap();
        // flip one byte inside each non-header region in turn
        let mut detected = 0;
        for offset in (600..clean.len() - 1100).step_by(997) {
            let mut bytes = clean.clone();
            bytes[offset] ^= 0x40;
            fs::write(&path, &bytes).unwrap();
            match load_checkpoint(&path) {
                Err(Error::CorruptCheckpoint(_)) => detected += 1,
                Ok(_) => {
                    // padding bytes carry no data; the weights must still be intact
                    fs::write(&path, &clean).unwrap();
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(detected > 0);
        fs::write(&path, b"not a tar archive at all").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn spec_mismatch_is_explicit() {
        let state = tiny_state(false);
        assert!(ensure_generator_spec(&state, &state.generator.spec.clone()).is_ok());
        let other = GeneratorSpec {
            trunk_width: 8,
            ..state.generator.spec.clone()
        };
        assert!(matches!(
            ensure_generator_spec(&state, &other),
            Err(Error::SpecMismatch(_))
        ));
    }

    #[test]
    fn latest_checkpoint_picks_the_highest_epoch() {
        let dir = tempfile::tempdir().unwrap();
        assert!(latest_checkpoint(dir.path()).is_none());
        for e in [1, 3, 2] {
            fs::write(checkpoint_path(dir.path(), e), b"x").unwrap();
        }
        fs::write(dir.path().join("epoch_0009.ckpt.tmp"), b"x").unwrap();
        assert_eq!(latest_checkpoint(dir.path()).unwrap().0, 3);
    }
}
