//! Sensor ingestion, windowing, augmentation, and subject splits.

pub mod augment;
pub mod cache;
pub mod parse;
pub mod splits;
pub mod synth;
pub mod types;
pub mod windows;

pub use augment::{augment_noise, augment_scale, AugmentConfig, ScaleMode};
pub use cache::{PreparedDataset, RoleCounts};
pub use parse::{
    load_dataset, parse_label_file, parse_sensor_file, Annotation, ColumnLayout, DatasetConfig, DatasetFormat,
    SensorTable,
};
pub use splits::{make_logo_splits, FoldAssignment, Role, SplitPlan};
pub use synth::SynthConfig;
pub use types::{
    ActivityKind, InstanceMeta, LabeledWindow, SensorInstance, WindowLabel, AXES, FRAME_MS, SAMPLE_RATE_HZ, WINDOW_LEN,
};
pub use windows::{build_test_set, build_train_set, sample_adl_windows, slide_fall_windows};
