//! On-disk dataset: `manifest.json` plus one `<id>.img` (little-endian
//! `f32`, row-major) and, for labelled samples, one `<id>.msk` (`u8`
//! labels) per sample.

use std::fs;
use std::path::{Path, PathBuf};

use dannseg_core::data::{GeneratorConfig, Image, LabelMap, Sample, Split, CLASS_NAMES};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub domain_id: String,
    pub split: Split,
    /// `[row, column]` in mm.
    pub spacing: [f64; 2],
    /// `[height, width]`.
    pub shape: [usize; 2],
    pub has_mask: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    /// Generator settings when the dataset was synthesized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    pub samples: Vec<ManifestEntry>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.img"))
}

fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.msk"))
}

/// True when `dir` is missing or has no entries.
pub fn is_empty_dir(dir: &Path) -> Result<bool> {
    match fs::read_dir(dir) {
        Ok(mut it) => Ok(it.next().is_none()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(true),
        Err(e) => Err(CliError::io(dir)(e)),
    }
}

/// Remove a previous dataset's manifest and sample files from `dir`.
fn clear_dataset(dir: &Path) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(CliError::io(dir))? {
        let path = entry.map_err(CliError::io(dir))?.path();
        let ext = path.extension().and_then(|e| e.to_str());
        let is_manifest = path.file_name().and_then(|n| n.to_str()) == Some(MANIFEST);
        if is_manifest || matches!(ext, Some("img" | "msk")) {
            fs::remove_file(&path).map_err(CliError::io(&path))?;
        }
    }
    Ok(())
}

/// Write `samples` to `dir`. A non-empty `dir` is an error unless `force`,
/// in which case any previous dataset files there are replaced.
pub fn write_dataset(
    dir: &Path,
    samples: &[Sample],
    generator: Option<&GeneratorConfig>,
    force: bool,
) -> Result<()> {
    if !is_empty_dir(dir)? {
        if !force {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty (use --force)",
                dir.display()
            )));
        }
        clear_dataset(dir)?;
    }
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let mut entries = Vec::with_capacity(samples.len());
    let mut seen = std::collections::BTreeSet::new();
    for s in samples {
        if !valid_id(&s.id) {
            return Err(CliError::Data(format!(
                "sample id `{}` cannot be used as a file name",
                s.id
            )));
        }
        if !seen.insert(s.id.as_str()) {
            return Err(CliError::Data(format!("duplicate sample id `{}`", s.id)));
        }
        let (h, w) = s.image.dims();
        let bytes: Vec<u8> = s
            .image
            .data()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let path = image_path(dir, &s.id);
        fs::write(&path, bytes).map_err(CliError::io(&path))?;
        if let Some(mask) = &s.mask {
            if mask.dims() != (h, w) {
                return Err(CliError::Data(format!(
                    "sample {}: mask {:?} vs image {:?}",
                    s.id,
                    mask.dims(),
                    (h, w)
                )));
            }
            let path = mask_path(dir, &s.id);
            fs::write(&path, mask.data()).map_err(CliError::io(&path))?;
        }
        entries.push(ManifestEntry {
            id: s.id.clone(),
            domain_id: s.domain_id.clone(),
            split: s.split,
            spacing: [s.spacing.0, s.spacing.1],
            shape: [h, w],
            has_mask: s.mask.is_some(),
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        generator: generator.cloned(),
        samples: entries,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: malformed manifest: {e}", path.display())))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(CliError::Data(format!(
            "{}: schema version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            manifest.schema_version
        )));
    }
    Ok(manifest)
}

fn read_exact_len(path: &Path, id: &str, expected: usize, what: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    if bytes.len() != expected {
        return Err(CliError::Data(format!(
            "sample {id}: {what} file {} has {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes)
}

/// Read every sample listed in the manifest of `dir`.
pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<Sample>)> {
    let manifest = read_manifest(dir)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        if !valid_id(&e.id) {
            return Err(CliError::Data(format!(
                "invalid sample id `{}` in manifest",
                e.id
            )));
        }
        let [h, w] = e.shape;
        if h == 0 || w == 0 {
            return Err(CliError::Data(format!(
                "sample {}: empty shape {:?}",
                e.id, e.shape
            )));
        }
        let bytes = read_exact_len(&image_path(dir, &e.id), &e.id, h * w * 4, "image")?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let image = Image::new(h, w, data)?;
        let mask = if e.has_mask {
            let labels = read_exact_len(&mask_path(dir, &e.id), &e.id, h * w, "mask")?;
            if let Some(&bad) = labels.iter().find(|&&l| l as usize >= CLASS_NAMES.len()) {
                return Err(CliError::Data(format!(
                    "sample {}: label {bad} out of range",
                    e.id
                )));
            }
            Some(LabelMap::new(h, w, labels)?)
        } else {
            None
        };
        samples.push(Sample {
            id: e.id.clone(),
            image,
            mask,
            domain_id: e.domain_id.clone(),
            spacing: (e.spacing[0], e.spacing[1]),
            split: e.split,
        });
    }
    Ok((manifest, samples))
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}
