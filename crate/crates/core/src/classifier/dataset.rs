use std::path::Path;

use super::{Patch, PatchClass};
use crate::error::{Error, Result};
use crate::volume::read_volume;

/// Label index file inside a dataset directory.
pub const DATASET_INDEX: &str = "labels.txt";

/// Reads `labels.txt` (`patch_file,class` per line, `#` comments) and the
/// MVOL patches it names, in index order.
pub fn read_patch_dataset(dir: impl AsRef<Path>) -> Result<Vec<(Patch, PatchClass)>> {
    let dir = dir.as_ref();
    let index = dir.join(DATASET_INDEX);
    let text = std::fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((file, class)) = line.split_once(',') else {
            return Err(Error::Format {
                path: index.clone(),
                reason: format!("line {}: expected patch_file,class", ln + 1),
            });
        };
        let class: PatchClass = class.trim().parse()?;
        let path = dir.join(file.trim());
        let vol = read_volume(&path)?.into_scalar()?;
        let mut patch = Patch::from_volume(&vol)?;
        patch.source = file.trim().to_string();
        out.push((patch, class));
    }
    Ok(out)
}
