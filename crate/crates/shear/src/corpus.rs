//! File exchange format for rollout corpora.
//!
//! A corpus is two files: a JSON manifest describing groups, rollouts,
//! rewards, and where each rollout's rows live, plus a flat binary file of
//! 32-bit little-endian floats, row-major, one row per token. Rollouts may
//! sit anywhere in the data file (offsets are explicit) but must not
//! overlap. Writing then loading a corpus reproduces it exactly: values are
//! stored at dump precision (`f32`) and never rounded through a wider type.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShearError};
use crate::model::{HiddenStateMatrix, Rollout, RolloutGroup};

/// Manifest schema version this crate reads and writes.
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layer: Option<String>,
    groups: Vec<ManifestGroup>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestGroup {
    group_id: String,
    rollouts: Vec<ManifestRollout>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRollout {
    rollout_id: String,
    length: usize,
    reward: u8,
    offset_tokens: usize,
}

/// Load a corpus. Groups and rollouts come back in manifest order with
/// hidden states decoded exactly as stored.
pub fn load_group(manifest_path: &Path, data_path: &Path) -> Result<Vec<RolloutGroup>> {
    let manifest_bytes = fs::read(manifest_path)
        .map_err(|e| ShearError::io(manifest_path.display().to_string(), e))?;
    let manifest: ManifestFile = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| ShearError::Manifest(format!("{}: {e}", manifest_path.display())))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(ShearError::Manifest(format!(
            "unsupported manifest version {} (expected {MANIFEST_VERSION})",
            manifest.version
        )));
    }
    let any_rollouts = manifest.groups.iter().any(|g| !g.rollouts.is_empty());
    if any_rollouts && manifest.dim == 0 {
        return Err(ShearError::Manifest("field `dim` must be >= 1".into()));
    }

    let data =
        fs::read(data_path).map_err(|e| ShearError::io(data_path.display().to_string(), e))?;
    let dim = manifest.dim;

    // Reject overlapping storage before decoding anything.
    let mut intervals: Vec<(usize, usize, &str)> = Vec::new();
    for g in &manifest.groups {
        for r in &g.rollouts {
            if r.length == 0 {
                return Err(ShearError::Manifest(format!(
                    "rollout {:?}: field `length` must be >= 1",
                    r.rollout_id
                )));
            }
            if r.reward > 1 {
                return Err(ShearError::Manifest(format!(
                    "rollout {:?}: field `reward` must be 0 or 1, got {}",
                    r.rollout_id, r.reward
                )));
            }
            intervals.push((r.offset_tokens, r.offset_tokens + r.length, &r.rollout_id));
        }
    }
    intervals.sort_unstable();
    for pair in intervals.windows(2) {
        if pair[0].1 > pair[1].0 {
            return Err(ShearError::Manifest(format!(
                "rollouts {:?} and {:?} overlap in the data file",
                pair[0].2, pair[1].2
            )));
        }
    }

    let mut groups = Vec::with_capacity(manifest.groups.len());
    for g in &manifest.groups {
        let mut rollouts = Vec::with_capacity(g.rollouts.len());
        for r in &g.rollouts {
            rollouts.push(decode_rollout(r, dim, &data)?);
        }
        groups.push(RolloutGroup::new(g.group_id.clone(), rollouts)?);
    }
    Ok(groups)
}

fn decode_rollout(r: &ManifestRollout, dim: usize, data: &[u8]) -> Result<Rollout> {
    let start = r
        .offset_tokens
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| ShearError::Bounds(format!("rollout {:?}: offset overflow", r.rollout_id)))?;
    let len = r.length * dim * 4;
    let end = start + len;
    if end > data.len() {
        return Err(ShearError::Bounds(format!(
            "rollout {:?} needs bytes {start}..{end} but data file holds {}",
            r.rollout_id,
            data.len()
        )));
    }
    let mut values = Vec::with_capacity(r.length * dim);
    for (i, chunk) in data[start..end].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(ShearError::Validation(format!(
                "rollout {:?}: non-finite value at token {} dim {}",
                r.rollout_id,
                i / dim + 1,
                i % dim
            )));
        }
        values.push(v);
    }
    Ok(Rollout {
        id: r.rollout_id.clone(),
        reward: r.reward == 1,
        hidden: HiddenStateMatrix::new(values, r.length, dim)?,
    })
}

/// Write a corpus with rollouts laid out contiguously in group order.
pub fn write_group(groups: &[RolloutGroup], manifest_path: &Path, data_path: &Path) -> Result<()> {
    write_group_labeled(groups, None, manifest_path, data_path)
}

/// Like [`write_group`] but records the informative `layer` field, for
/// producers that know which layer their hidden states came from.
pub fn write_group_labeled(
    groups: &[RolloutGroup],
    layer: Option<&str>,
    manifest_path: &Path,
    data_path: &Path,
) -> Result<()> {
    let dim = groups.first().map_or(0, RolloutGroup::dim);
    for g in groups {
        if g.dim() != dim {
            return Err(ShearError::DimensionMismatch(format!(
                "group {:?} has dim {}, corpus uses {dim}",
                g.id,
                g.dim()
            )));
        }
    }

    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    let mut manifest_groups = Vec::with_capacity(groups.len());
    for g in groups {
        let mut rollouts = Vec::with_capacity(g.len());
        for r in g.rollouts() {
            for v in r.hidden.raw() {
                data.extend_from_slice(&v.to_le_bytes());
            }
            rollouts.push(ManifestRollout {
                rollout_id: r.id.clone(),
                length: r.tokens(),
                reward: u8::from(r.reward),
                offset_tokens: offset,
            });
            offset += r.tokens();
        }
        manifest_groups.push(ManifestGroup {
            group_id: g.id.clone(),
            rollouts,
        });
    }

    let manifest = ManifestFile {
        version: MANIFEST_VERSION,
        dim,
        layer: layer.map(str::to_string),
        groups: manifest_groups,
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
    manifest_bytes.push(b'\n');
    fs::write(manifest_path, manifest_bytes)
        .map_err(|e| ShearError::io(manifest_path.display().to_string(), e))?;
    fs::write(data_path, data).map_err(|e| ShearError::io(data_path.display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn rollout(id: &str, reward: bool, values: Vec<f32>, t: usize, d: usize) -> Rollout {
        Rollout {
            id: id.to_string(),
            reward,
            hidden: HiddenStateMatrix::new(values, t, d).unwrap(),
        }
    }

    #[test]
    fn known_bytes_round_trip() {
        let dir = tmp();
        let m = dir.path().join("manifest.json");
        let d = dir.path().join("data.bin");
        let g = RolloutGroup::new(
            "g0",
            vec![rollout("r0", true, (0..6).map(|v| v as f32).collect(), 2, 3)],
        )
        .unwrap();
        write_group(&[g.clone()], &m, &d).unwrap();
        assert_eq!(fs::metadata(&d).unwrap().len(), 24); // 2 tokens * 3 dims * 4 bytes
        let loaded = load_group(&m, &d).unwrap();
        assert_eq!(loaded, vec![g]);
    }

    #[test]
    fn single_token_rollout_payload_size() {
        let dir = tmp();
        let m = dir.path().join("manifest.json");
        let d = dir.path().join("data.bin");
        let g = RolloutGroup::new("g", vec![rollout("r", false, vec![1.5; 7], 1, 7)]).unwrap();
        write_group(&[g], &m, &d).unwrap();
        assert_eq!(fs::metadata(&d).unwrap().len(), 4 * 7);
    }

    #[test]
    fn empty_corpus_round_trip() {
        let dir = tmp();
        let m = dir.path().join("manifest.json");
        let d = dir.path().join("data.bin");
        write_group(&[], &m, &d).unwrap();
        assert_eq!(fs::metadata(&d).unwrap().len(), 0);
        assert!(load_group(&m, &d).unwrap().is_empty());
    }

    #[test]
    fn random_corpora_round_trip_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let dir = tmp();
            let m = dir.path().join("manifest.json");
            let d = dir.path().join("data.bin");
            let dim = rng.gen_range(1..=6);
            let n_groups = rng.gen_range(1..=3);
            let groups: Vec<RolloutGroup> = (0..n_groups)
                .map(|gi| {
                    let rollouts: Vec<Rollout> = (0..rng.gen_range(1..=4))
                        .map(|ri| {
                            let t = rng.gen_range(1..=9);
                            let values: Vec<f32> =
                                (0..t * dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
                            rollout(&format!("g{gi}r{ri}"), rng.gen_bool(0.5), values, t, dim)
                        })
                        .collect();
                    RolloutGroup::new(format!("g{gi}"), rollouts).unwrap()
                })
                .collect();
            write_group(&groups, &m, &d).unwrap();
            let loaded = load_group(&m, &d).unwrap();
            assert_eq!(loaded, groups);
        }
    }

    #[test]
    fn declared_length_beyond_file_is_bounds_error() {
        let dir = tmp();
        let m = dir.path().join("manifest.json");
        let d = dir.path().join("data.bin");
        let manifest = r#"{
            "version": 1, "dim": 1,
            "groups": [{ "group_id": "g", "rollouts": [
                { "rollout_id": "r", "length": 10, "reward": 1, "offset_tokens": 0 }
            ]}]
        }"#;
        fs::write(&m, manifest).unwrap();
        fs::write(&d, vec![0u8; 5 * 4]).unwrap(); // 5 tokens, manifest claims 10
        let err = load_group(&m, &d).unwrap_err();
        assert!(matches!(err, ShearError::Bounds(_)), "got {err}");
    }

    #[test]
    fn missing_field_names_the_field() {
        let dir = tmp();
        let m = dir.path().join("manifest.json");
        let d = dir.path().join("data.bin");
        fs::write(&m, r#"{ "version": 1, "groups": [] }"#).unwrap();
        fs::write(&d, b"").unwrap();
        let err = load_group(&m, &d).unwrap_err();
        assert!(err.to_string().contains("dim"), "got {err}");
    }

    #[test]
    fn overlapping_rollouts_are_rejected() {
        let dir = tmp();
        let m = dir.path().join("manifest.json");
        let d = dir.path().join("data.bin");
        let manifest = r#"{
            "version": 1, "dim": 1,
            "groups": [{ "group_id": "g", "rollouts": [
                { "rollout_id": "a", "length": 4, "reward": 1, "offset_tokens": 0 },
                { "rollout_id": "b", "length": 4, "reward": 0, "offset_tokens": 2 }
            ]}]
        }"#;
        fs::write(&m, manifest).unwrap();
        fs::write(&d, vec![0u8; 6 * 4]).unwrap();
        let err = load_group(&m, &d).unwrap_err();
        assert!(err.to_string().contains("overlap"), "got {err}");
    }

    #[test]
    fn non_contiguous_offsets_load_fine() {
        let dir = tmp();
        let m = dir.path().join("manifest.json");
        let d = dir.path().join("data.bin");
        let manifest = r#"{
            "version": 1, "dim": 2,
            "groups": [{ "group_id": "g", "rollouts": [
                { "rollout_id": "b", "length": 1, "reward": 0, "offset_tokens": 3 },
                { "rollout_id": "a", "length": 2, "reward": 1, "offset_tokens": 0 }
            ]}]
        }"#;
        fs::write(&m, manifest).unwrap();
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 4.0, 0.0, 0.0, 9.0, 8.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&d, bytes).unwrap();
        let groups = load_group(&m, &d).unwrap();
        assert_eq!(groups[0].rollouts()[0].hidden.row(1), &[9.0, 8.0]);
        assert_eq!(groups[0].rollouts()[1].hidden.row(2), &[3.0, 4.0]);
    }

    #[test]
    fn non_finite_payload_names_the_token() {
        let dir = tmp();
        let m = dir.path().join("manifest.json");
        let d = dir.path().join("data.bin");
        let manifest = r#"{
            "version": 1, "dim": 2,
            "groups": [{ "group_id": "g", "rollouts": [
                { "rollout_id": "r", "length": 2, "reward": 1, "offset_tokens": 0 }
            ]}]
        }"#;
        fs::write(&m, manifest).unwrap();
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, f32::INFINITY, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&d, bytes).unwrap();
        let err = load_group(&m, &d).unwrap_err();
        assert!(err.to_string().contains("token 2"), "got {err}");
    }

    #[test]
    fn bad_reward_and_version_are_rejected() {
        let dir = tmp();
        let m = dir.path().join("manifest.json");
        let d = dir.path().join("data.bin");
        fs::write(&d, vec![0u8; 8]).unwrap();
        fs::write(
            &m,
            r#"{ "version": 2, "dim": 1, "groups": [] }"#,
        )
        .unwrap();
        assert!(load_group(&m, &d).unwrap_err().to_string().contains("version"));
        let manifest = r#"{
            "version": 1, "dim": 1,
            "groups": [{ "group_id": "g", "rollouts": [
                { "rollout_id": "r", "length": 1, "reward": 3, "offset_tokens": 0 }
            ]}]
        }"#;
        fs::write(&m, manifest).unwrap();
        assert!(load_group(&m, &d).unwrap_err().to_string().contains("reward"));
    }
}
