use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::maic::{ProjectionParams, PARAM_NAMES};
use crate::tensorfile::{read_tensors, write_tensors, CHECKPOINT_MAGIC};

/// Writes the projection parameters as `MCK1`.
pub fn save_checkpoint(path: &Path, params: &ProjectionParams) -> Result<()> {
    let named = params.named();
    let refs: Vec<(&str, &Tensor)> = named.iter().map(|(n, t)| (*n, *t)).collect();
    write_tensors(path, CHECKPOINT_MAGIC, &refs)
}

pub fn load_checkpoint(path: &Path) -> Result<ProjectionParams> {
    let tensors = read_tensors(path, CHECKPOINT_MAGIC)?;
    let names: Vec<&str> = tensors.iter().map(|(n, _)| n.as_str()).collect();
    if names != PARAM_NAMES {
        return Err(Error::format(path, None, format!("unexpected tensors {names:?}, expected {PARAM_NAMES:?}")));
    }
    ProjectionParams::from_vec(tensors.into_iter().map(|(_, t)| t).collect())
        .map_err(|e| Error::format(path, None, e.to_string()))
}
