//! JSONL dataset manifests: one record per simulated scene.
//!
//! A record holds everything needed to regenerate its images (seed, size and
//! capture parameters) plus the file names they were written under.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intrinsic::{self, AlbedoMap, ShadingMap};
use crate::isp::{self, IspParams, SyntheticScene};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFiles {
    /// 8-bit codes; absent for other bit depths.
    pub ldr_png: Option<String>,
    /// Linearized LDR capture.
    pub ldr: String,
    pub hdr_gt: String,
    pub albedo_gt: String,
    pub shading_gt: String,
    /// Inverse shading of the LDR capture.
    pub inv_shading_ldr: String,
    pub albedo_ldr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub id: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub isp: IspParams,
    pub files: SceneFiles,
}

impl SceneRecord {
    /// Record with the standard file names derived from the seed.
    pub fn new(seed: u64, height: usize, width: usize, isp: IspParams) -> Result<Self> {
        isp.validate()?;
        let id = format!("scene_{seed:06}");
        let name = |suffix: &str| format!("{id}_{suffix}");
        let files = SceneFiles {
            ldr_png: (isp.bit_depth == 8).then(|| name("ldr.png")),
            ldr: name("ldr.pfm"),
            hdr_gt: name("hdr.pfm"),
            albedo_gt: name("albedo.pfm"),
            shading_gt: name("shading.pfm"),
            inv_shading_ldr: name("dl.pfm"),
            albedo_ldr: name("al.pfm"),
        };
        Ok(Self {
            id,
            seed,
            height,
            width,
            isp,
            files,
        })
    }

    pub fn regenerate(&self) -> Result<SyntheticScene> {
        isp::generate_scene(self.seed, self.height, self.width)
    }

    /// Generates the scene and writes every referenced file into `dir`.
    pub fn materialize(&self, dir: &Path) -> Result<()> {
        let scene = self.regenerate()?;
        let (codes, ldr) = isp::simulate_ldr(&scene, &self.isp)?;
        let (albedo_l, shading_l) = isp::oracle_ldr_decomposition(&scene, &self.isp, &ldr)?;
        let f = &self.files;
        if let Some(png) = &f.ldr_png {
            super::png::write(&dir.join(png), &codes)?;
        }
        super::pfm::write(&dir.join(&f.ldr), &ldr)?;
        super::pfm::write(&dir.join(&f.hdr_gt), &scene.hdr_gt)?;
        super::pfm::write(&dir.join(&f.albedo_gt), scene.albedo_gt.as_image())?;
        super::pfm::write(&dir.join(&f.shading_gt), scene.shading_gt.as_image())?;
        let inv = intrinsic::shading_to_inverse(&shading_l)?;
        super::pfm::write(&dir.join(&f.inv_shading_ldr), inv.as_image())?;
        super::pfm::write(&dir.join(&f.albedo_ldr), albedo_l.as_image())?;
        Ok(())
    }

    /// Reads the ground-truth scene back from `dir`.
    pub fn load_scene(&self, dir: &Path) -> Result<SyntheticScene> {
        let f = &self.files;
        let albedo = AlbedoMap::new(super::pfm::read(&dir.join(&f.albedo_gt))?)?;
        let shading = ShadingMap::new(super::pfm::read(&dir.join(&f.shading_gt))?)?;
        let hdr = super::pfm::read(&dir.join(&f.hdr_gt))?;
        for img in [albedo.as_image(), shading.as_image(), &hdr] {
            if (img.height(), img.width()) != (self.height, self.width) {
                return Err(Error::DimensionMismatch(format!(
                    "{}: files are {}x{}, manifest says {}x{}",
                    self.id,
                    img.height(),
                    img.width(),
                    self.height,
                    self.width
                )));
            }
        }
        Ok(SyntheticScene {
            albedo_gt: albedo,
            shading_gt: shading,
            hdr_gt: hdr,
            seed: self.seed,
        })
    }
}

pub fn write_manifest(path: &Path, records: &[SceneRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a manifest; blank lines are skipped and errors report the byte
/// offset of the offending line.
pub fn read_manifest(path: &Path) -> Result<Vec<SceneRecord>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let (mut line, mut offset) = (String::new(), 0);
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        if !line.trim().is_empty() {
            let rec = serde_json::from_str(&line).map_err(|e| Error::parse(offset, format!("manifest record: {e}")))?;
            records.push(rec);
        }
        offset += n;
    }
    Ok(records)
}
