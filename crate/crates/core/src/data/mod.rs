//! Loading, label remapping, resampling and sample preparation.

pub mod manifest;
pub mod remap;
pub mod resize;
pub mod sample;
pub mod synth;

pub use manifest::{
    load_dataset, load_entry, load_manifest, load_manifest_images_only, remap_digest,
    write_manifest, DatasetManifest, LabeledImage, ManifestEntry,
};
pub use remap::{
    remap_classes, ClassRemapTable, ClassVocabulary, RemapRegistry, CLASS_NAMES, COCO_STUFF_VOCAB,
    NUM_CLASSES, SYNTHETIC_VOCAB,
};
pub use resize::{bicubic_downsample, bicubic_resize, bicubic_upsample};
pub use sample::{
    derive_seed, downsample_label, make_train_sample, paired_random_crop, prepare_sample,
    CropConfig, TrainSample,
};
pub use synth::{make_synthetic_dataset, render_texture};
