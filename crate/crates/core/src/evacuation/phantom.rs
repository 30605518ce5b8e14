use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{CtrError, Result};

/// Boolean voxel grid of clot occupancy. Index order is x fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct ClotPhantom {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    occupancy: Vec<bool>,
}

impl ClotPhantom {
    pub fn empty(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(CtrError::InvalidInput(format!("voxel spacing must be positive, got {spacing:?}")));
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| CtrError::InvalidInput("phantom dimensions overflow".into()))?;
        Ok(ClotPhantom {
            dims,
            spacing,
            origin,
            occupancy: vec![false; n],
        })
    }

    pub fn from_occupancy(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        occupancy: Vec<bool>,
    ) -> Result<Self> {
        let mut p = Self::empty(dims, spacing, origin)?;
        if occupancy.len() != p.occupancy.len() {
            return Err(CtrError::InvalidInput(format!(
                "occupancy has {} voxels, dimensions need {}",
                occupancy.len(),
                p.occupancy.len()
            )));
        }
        p.occupancy = occupancy;
        Ok(p)
    }

    /// Grid just large enough for the ellipsoid, occupied where voxel centers lie inside it.
    pub fn ellipsoid(center: [f64; 3], semi_axes: [f64; 3], spacing: [f64; 3]) -> Result<Self> {
        if semi_axes.iter().any(|a| !(*a > 0.0)) {
            return Err(CtrError::InvalidInput("ellipsoid semi-axes must be positive".into()));
        }
        let mut dims = [0usize; 3];
        let mut origin = [0.0; 3];
        for a in 0..3 {
            let half = (semi_axes[a] / spacing[a]).ceil() as usize + 1;
            dims[a] = 2 * half + 1;
            origin[a] = center[a] - half as f64 * spacing[a];
        }
        let mut p = Self::empty(dims, spacing, origin)?;
        for idx in 0..p.occupancy.len() {
            let c = p.center_of(idx);
            let q: f64 = (0..3).map(|a| ((c[a] - center[a]) / semi_axes[a]).powi(2)).sum();
            p.occupancy[idx] = q <= 1.0;
        }
        Ok(p)
    }

    /// Ellipsoid with the given axis proportions, scaled so its voxel volume is
    /// as close as the grid allows to `volume_ml`.
    pub fn ellipsoid_with_volume(
        center: [f64; 3],
        proportions: [f64; 3],
        spacing: [f64; 3],
        volume_ml: f64,
    ) -> Result<Self> {
        if !(volume_ml > 0.0) {
            return Err(CtrError::InvalidInput("target volume must be positive".into()));
        }
        let unit = 4.0 / 3.0 * std::f64::consts::PI * proportions.iter().product::<f64>();
        let guess = (volume_ml * 1000.0 / unit).cbrt();
        let build = |k: f64| Self::ellipsoid(center, proportions.map(|p| p * k), spacing);
        let (mut lo, mut hi) = (0.8 * guess, 1.2 * guess);
        let mut best = build(guess)?;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let p = build(mid)?;
            if (p.volume_ml() - volume_ml).abs() < (best.volume_ml() - volume_ml).abs() {
                best = p.clone();
            }
            if p.volume_ml() < volume_ml {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(best)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied_count() == 0
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|v| **v).count()
    }

    pub fn volume_ml(&self) -> f64 {
        self.occupied_count() as f64 * self.voxel_volume_mm3() / 1000.0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    /// Voxel center in the image frame, mm.
    pub fn center_of(&self, idx: usize) -> Point3<f64> {
        let c = self.coords(idx);
        Point3::new(
            self.origin[0] + c[0] as f64 * self.spacing[0],
            self.origin[1] + c[1] as f64 * self.spacing[1],
            self.origin[2] + c[2] as f64 * self.spacing[2],
        )
    }

    pub fn is_occupied(&self, idx: usize) -> bool {
        self.occupancy[idx]
    }

    pub fn set(&mut self, idx: usize, value: bool) {
        self.occupancy[idx] = value;
    }

    pub fn occupied_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.occupancy
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(i, _)| i)
    }

    /// Inclusive index range along `axis` whose voxel centers may lie within
    /// `radius` of coordinate `c`, or `None` if the slab misses the grid.
    pub(crate) fn axis_range(&self, axis: usize, c: f64, radius: f64) -> Option<(usize, usize)> {
        let lo = ((c - radius - self.origin[axis]) / self.spacing[axis]).ceil();
        let hi = ((c + radius - self.origin[axis]) / self.spacing[axis]).floor();
        let max = self.dims[axis] as f64 - 1.0;
        if hi < 0.0 || lo > max || hi < lo {
            return None;
        }
        Some((lo.max(0.0) as usize, hi.min(max) as usize))
    }

    /// 6-connected components of the occupied voxels, largest first (ties by lowest index).
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut label = vec![false; self.occupancy.len()];
        let mut out = Vec::new();
        let [nx, ny, nz] = self.dims;
        for seed in 0..self.occupancy.len() {
            if !self.occupancy[seed] || label[seed] {
                continue;
            }
            let mut comp = vec![seed];
            label[seed] = true;
            let mut head = 0;
            while head < comp.len() {
                let idx = comp[head];
                head += 1;
                let [i, j, k] = self.coords(idx);
                let mut visit = |ii: usize, jj: usize, kk: usize| {
                    let n = self.index(ii, jj, kk);
                    if self.occupancy[n] && !label[n] {
                        label[n] = true;
                        comp.push(n);
                    }
                };
                if i > 0 {
                    visit(i - 1, j, k);
                }
                if i + 1 < nx {
                    visit(i + 1, j, k);
                }
                if j > 0 {
                    visit(i, j - 1, k);
                }
                if j + 1 < ny {
                    visit(i, j + 1, k);
                }
                if k > 0 {
                    visit(i, j, k - 1);
                }
                if k + 1 < nz {
                    visit(i, j, k + 1);
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    /// Raw occupancy file, one byte per voxel (0 or 1), relative to the header.
    pub data_file: String,
}

/// Writes `<stem>.json` and `<stem>.raw` next to each other.
pub fn save_phantom(phantom: &ClotPhantom, header_path: impl AsRef<Path>) -> Result<()> {
    let header_path = header_path.as_ref();
    let raw_path = header_path.with_extension("raw");
    let data_file = raw_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| CtrError::InvalidInput("phantom path has no file name".into()))?;
    let header = PhantomHeader {
        dims: phantom.dims,
        spacing: phantom.spacing,
        origin: phantom.origin,
        data_file,
    };
    let json = serde_json::to_string_pretty(&header).map_err(|e| CtrError::parse(header_path, e))?;
    fs::write(header_path, json).map_err(|e| CtrError::io(header_path, e))?;
    let bytes: Vec<u8> = phantom.occupancy.iter().map(|v| u8::from(*v)).collect();
    fs::write(&raw_path, bytes).map_err(|e| CtrError::io(&raw_path, e))
}

pub fn load_phantom(header_path: impl AsRef<Path>) -> Result<ClotPhantom> {
    let header_path = header_path.as_ref();
    let text = fs::read_to_string(header_path).map_err(|e| CtrError::io(header_path, e))?;
    let header: PhantomHeader = serde_json::from_str(&text).map_err(|e| CtrError::parse(header_path, e))?;
    let raw_path: PathBuf = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.data_file);
    let bytes = fs::read(&raw_path).map_err(|e| CtrError::io(&raw_path, e))?;
    if let Some(bad) = bytes.iter().find(|b| **b > 1) {
        return Err(CtrError::parse(&raw_path, format!("occupancy byte {bad} is not 0 or 1")));
    }
    ClotPhantom::from_occupancy(
        header.dims,
        header.spacing,
        header.origin,
        bytes.into_iter().map(|b| b == 1).collect(),
    )
}

/// Builds a phantom from a directory of PGM slices (sorted by file name, one
/// per z index), occupied where the gray level is at least `threshold`.
pub fn import_pgm_stack(
    dir: impl AsRef<Path>,
    threshold: u16,
    spacing: [f64; 3],
    origin: [f64; 3],
) -> Result<ClotPhantom> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CtrError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CtrError::InvalidInput(format!("no .pgm slices in {}", dir.display())));
    }
    let mut dims = [0, 0, files.len()];
    let mut occupancy = Vec::new();
    for (k, path) in files.iter().enumerate() {
        let img = image::open(path).map_err(|e| CtrError::parse(path, e))?.into_luma16();
        let (w, h) = img.dimensions();
        if k == 0 {
            dims[0] = w as usize;
            dims[1] = h as usize;
        } else if [w as usize, h as usize] != [dims[0], dims[1]] {
            return Err(CtrError::parse(path, format!("slice is {w}x{h}, expected {}x{}", dims[0], dims[1])));
        }
        // 8-bit slices are widened by 257 when converted to 16 bit
        let scale = match image::open(path).map_err(|e| CtrError::parse(path, e))? {
            image::DynamicImage::ImageLuma8(_) => 257u32,
            _ => 1,
        };
        let level = (u32::from(threshold) * scale).min(u32::from(u16::MAX)) as u16;
        occupancy.extend(img.pixels().map(|p| p.0[0] >= level));
    }
    ClotPhantom::from_occupancy(dims, spacing, origin, occupancy)
}
