#![allow(dead_code)]

use std::fs::File;
use std::path::PathBuf;

use polopt::{ColumnSchema, ModelSpec, PolicyDataset};

pub const NSW_COVARIATES: [&str; 8] = [
    "re74",
    "re75",
    "age",
    "education",
    "nodegree",
    "married",
    "black",
    "hispanic",
];
pub const NSW_MODEL: [&str; 8] = [
    "re74", "re75", "age", "age^2", "nodegree", "married", "black", "hispanic",
];

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn nsw_path() -> PathBuf {
    repo_root().join("data/nsw_dw.csv")
}

pub fn nsw_config() -> PathBuf {
    repo_root().join("configs/nsw.conf")
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn nsw_schema() -> ColumnSchema {
    ColumnSchema::new("re78", "treat", NSW_COVARIATES).with_id("id")
}

pub fn nsw() -> PolicyDataset {
    let f = File::open(nsw_path()).expect("NSW data file");
    polopt::data::load_dataset(f, &nsw_schema(), b',').expect("NSW parses")
}

pub fn nsw_model() -> ModelSpec {
    ModelSpec::parse(NSW_MODEL).expect("valid model")
}

/// Dataset with one covariate `x`, built from plain vectors.
pub fn toy(y: Vec<f64>, t: Vec<u8>, x: Vec<f64>) -> PolicyDataset {
    PolicyDataset::from_columns(
        ColumnSchema::new("y", "t", vec!["x".to_string()]),
        y,
        t,
        vec![x],
        None,
    )
    .expect("valid toy dataset")
}
