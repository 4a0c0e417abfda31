//! Supra-threshold cluster extraction and per-cluster TDP tables.

use std::collections::VecDeque;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bounds::tdp_on_subset;
use crate::calibration::{CalibratedFamily, Method};
use crate::error::{Error, Result};

/// Neighbourhood used to join supra-threshold voxels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connectivity {
    /// 6 neighbours in 3D, 4 in 2D.
    #[default]
    Face,
    /// 18 neighbours in 3D, 8 in 2D.
    FaceEdge,
    /// 26 neighbours in 3D, 8 in 2D.
    FaceEdgeCorner,
}

impl Connectivity {
    fn max_manhattan(self) -> i64 {
        match self {
            Connectivity::Face => 1,
            Connectivity::FaceEdge => 2,
            Connectivity::FaceEdgeCorner => 3,
        }
    }

    fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                for dz in -1..=1i64 {
                    let d = dx.abs() + dy.abs() + dz.abs();
                    if d > 0 && d <= self.max_manhattan() {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "face" | "6" | "4" => Ok(Connectivity::Face),
            "face-edge" | "18" => Ok(Connectivity::FaceEdge),
            "face-edge-corner" | "26" | "8" => Ok(Connectivity::FaceEdgeCorner),
            other => Err(Error::InvalidParameter(format!(
                "unknown connectivity {other:?}"
            ))),
        }
    }
}

/// A statistic map on a 2D or 3D grid, stored in C order (last axis fastest).
///
/// With a mask, test indices enumerate in-mask voxels in grid order, which is
/// how p-value vectors are laid out for masked data.
#[derive(Debug, Clone, PartialEq)]
pub struct StatMap {
    values: Vec<f64>,
    dims: [usize; 3],
    ndim: usize,
    mask: Option<Vec<bool>>,
}

impl StatMap {
    pub fn new(values: Vec<f64>, dims: &[usize], mask: Option<Vec<bool>>) -> Result<Self> {
        let grid = match dims {
            [x, y] => [*x, *y, 1],
            [x, y, z] => [*x, *y, *z],
            _ => {
                return Err(Error::InvalidInput(format!(
                    "expected 2 or 3 grid dimensions, got {}",
                    dims.len()
                )))
            }
        };
        if grid.contains(&0) {
            return Err(Error::InvalidInput(
                "grid dimensions must be positive".into(),
            ));
        }
        let len: usize = grid.iter().product();
        if values.len() != len {
            return Err(Error::InvalidInput(format!(
                "{} values for a grid of {len} voxels",
                values.len()
            )));
        }
        if let Some(mask) = &mask {
            if mask.len() != len {
                return Err(Error::InvalidInput("mask does not match grid".into()));
            }
        }
        Ok(StatMap {
            values,
            dims: grid,
            ndim: dims.len(),
            mask,
        })
    }

    /// Scatter per-test statistics back onto the grid (masked voxels get 0).
    pub fn from_tests(tests: &[f64], dims: &[usize], mask: Option<Vec<bool>>) -> Result<Self> {
        let len: usize = dims.iter().product();
        let values = match &mask {
            None => tests.to_vec(),
            Some(mask) => {
                if mask.len() != len || mask.iter().filter(|&&b| b).count() != tests.len() {
                    return Err(Error::InvalidInput("mask does not match test count".into()));
                }
                let mut it = tests.iter();
                mask.iter()
                    .map(|&inside| if inside { *it.next().unwrap() } else { 0.0 })
                    .collect()
            }
        };
        Self::new(values, dims, mask)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.ndim]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn in_mask(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }

    /// Grid coordinate of a linear voxel index.
    pub fn coord(&self, i: usize) -> Vec<usize> {
        let [_, ny, nz] = self.dims;
        let full = [i / (ny * nz), (i / nz) % ny, i % nz];
        full[..self.ndim].to_vec()
    }

    /// Map from grid voxel to test index; `None` outside the mask.
    pub fn test_indices(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        (0..self.len())
            .map(|i| {
                self.in_mask(i).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    }
}

/// One connected component of supra-threshold voxels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// 1-based, by decreasing peak statistic.
    pub id: usize,
    /// Linear grid indices, ascending.
    pub voxels: Vec<usize>,
    pub peak_index: usize,
    pub peak_coord: Vec<usize>,
    pub peak_value: f64,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.voxels.len()
    }
}

/// Connected components of `{v in mask : stat(v) > z_threshold}`.
pub fn extract_clusters(
    map: &StatMap,
    z_threshold: f64,
    connectivity: Connectivity,
) -> Result<Vec<Cluster>> {
    if let Some(i) = (0..map.len()).find(|&i| map.in_mask(i) && !map.values[i].is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite statistic at voxel {:?}",
            map.coord(i)
        )));
    }
    let [nx, ny, nz] = map.dims;
    let supra: Vec<bool> = (0..map.len())
        .map(|i| map.in_mask(i) && map.values[i] > z_threshold)
        .collect();
    let offsets = connectivity.offsets();
    let mut seen = vec![false; map.len()];
    let mut clusters = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..map.len() {
        if !supra[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut voxels = Vec::new();
        while let Some(v) = queue.pop_front() {
            voxels.push(v);
            let (x, y, z) = (v / (ny * nz), (v / nz) % ny, v % nz);
            for [dx, dy, dz] in &offsets {
                let (xx, yy, zz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                if xx < 0 || yy < 0 || zz < 0 {
                    continue;
                }
                let (xx, yy, zz) = (xx as usize, yy as usize, zz as usize);
                if xx >= nx || yy >= ny || zz >= nz {
                    continue;
                }
                let w = (xx * ny + yy) * nz + zz;
                if supra[w] && !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        voxels.sort_unstable();
        // first voxel wins ties, so the peak does not depend on traversal order
        let peak_index = voxels.iter().copied().fold(voxels[0], |best, v| {
            if map.values[v] > map.values[best] {
                v
            } else {
                best
            }
        });
        clusters.push(Cluster {
            id: 0,
            peak_coord: map.coord(peak_index),
            peak_value: map.values[peak_index],
            peak_index,
            voxels,
        });
    }

    clusters.sort_by(|a, b| {
        b.peak_value
            .total_cmp(&a.peak_value)
            .then(a.peak_index.cmp(&b.peak_index))
    });
    for (i, c) in clusters.iter_mut().enumerate() {
        c.id = i + 1;
    }
    Ok(clusters)
}

/// Voxel size and origin used to report millimetre coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub voxel_size: [f64; 3],
    pub origin: [f64; 3],
}

impl Affine {
    pub fn to_mm(&self, coord: &[usize]) -> Vec<f64> {
        coord
            .iter()
            .enumerate()
            .map(|(a, &c)| self.origin[a] + c as f64 * self.voxel_size[a])
            .collect()
    }

    fn voxel_volume(&self, ndim: usize) -> f64 {
        self.voxel_size[..ndim].iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTdp {
    pub method: Method,
    pub v: usize,
    pub tdp_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub id: usize,
    pub peak_coord: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_mm: Option<Vec<f64>>,
    pub peak_stat: f64,
    pub size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size_mm3: Option<f64>,
    pub tdp: Vec<MethodTdp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTable {
    pub z_threshold: f64,
    pub alpha: Option<f64>,
    pub rows: Vec<ClusterRow>,
}

impl ClusterTable {
    pub fn sort_by_size(&mut self) {
        self.rows
            .sort_by(|a, b| b.size.cmp(&a.size).then(a.id.cmp(&b.id)));
    }

    pub fn sort_by_peak(&mut self) {
        self.rows
            .sort_by(|a, b| b.peak_stat.total_cmp(&a.peak_stat).then(a.id.cmp(&b.id)));
    }

    pub fn tdp(&self, id: usize, method: Method) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.id == id)?
            .tdp
            .iter()
            .find(|t| t.method == method)
            .map(|t| t.tdp_bound)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let ndim = self.rows.first().map_or(3, |r| r.peak_coord.len());
        let axes = ["x", "y", "z"];
        let mut header: Vec<String> = vec!["cluster_id".into()];
        header.extend(axes[..ndim].iter().map(|a| a.to_string()));
        let with_mm = self.rows.iter().any(|r| r.peak_mm.is_some());
        if with_mm {
            header.extend(axes[..ndim].iter().map(|a| format!("{a}_mm")));
        }
        header.push("peak_stat".into());
        header.push("size_voxels".into());
        if with_mm {
            header.push("size_mm3".into());
        }
        let methods: Vec<Method> = self
            .rows
            .first()
            .map(|r| r.tdp.iter().map(|t| t.method).collect())
            .unwrap_or_default();
        header.extend(methods.iter().map(|m| format!("tdp_{m}")));
        out.write_record(&header).map_err(err)?;

        for r in &self.rows {
            let mut rec = vec![r.id.to_string()];
            rec.extend(r.peak_coord.iter().map(|c| c.to_string()));
            if with_mm {
                let mm = r.peak_mm.clone().unwrap_or_default();
                rec.extend(mm.iter().map(|c| c.to_string()));
            }
            rec.push(r.peak_stat.to_string());
            rec.push(r.size.to_string());
            if with_mm {
                rec.push(r.size_mm3.map(|v| v.to_string()).unwrap_or_default());
            }
            rec.extend(r.tdp.iter().map(|t| t.tdp_bound.to_string()));
            out.write_record(&rec).map_err(err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// TDP lower bound of every cluster under each family.
///
/// `p_values` is indexed by test (see [`StatMap::test_indices`]).
pub fn cluster_tdp_table(
    map: &StatMap,
    clusters: &[Cluster],
    z_threshold: f64,
    p_values: &[f64],
    families: &[CalibratedFamily],
    affine: Option<&Affine>,
) -> Result<ClusterTable> {
    let tests = map.test_indices();
    let m = tests.iter().flatten().count();
    if p_values.len() != m {
        return Err(Error::InvalidInput(format!(
            "{} p-values for {m} in-mask voxels",
            p_values.len()
        )));
    }
    let rows = clusters
        .iter()
        .map(|c| {
            let subset: Vec<f64> = c
                .voxels
                .iter()
                .filter_map(|&v| tests[v].map(|t| p_values[t]))
                .collect();
            let tdp = families
                .iter()
                .map(|f| {
                    let r = tdp_on_subset(&subset, f)?;
                    Ok(MethodTdp {
                        method: f.method,
                        v: r.v,
                        tdp_bound: r.tdp_bound,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ClusterRow {
                id: c.id,
                peak_coord: c.peak_coord.clone(),
                peak_mm: affine.map(|a| a.to_mm(&c.peak_coord)),
                peak_stat: c.peak_value,
                size: c.size(),
                size_mm3: affine.map(|a| a.voxel_volume(map.ndim) * c.size() as f64),
                tdp,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterTable {
        z_threshold,
        alpha: families.first().map(|f| f.alpha),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2(rows: &[&str]) -> StatMap {
        let ny = rows[0].len();
        let values = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c.to_digit(10).unwrap() as f64))
            .collect();
        StatMap::new(values, &[rows.len(), ny], None).unwrap()
    }

    #[test]
    fn below_threshold_is_empty() {
        let map = grid2(&["111", "121"]);
        assert!(extract_clusters(&map, 2.0, Connectivity::Face)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn isolated_voxel() {
        let map = grid2(&["000", "050", "000"]);
        let c = extract_clusters(&map, 3.0, Connectivity::Face).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].size(), 1);
        assert_eq!(c[0].peak_coord, vec![1, 1]);
        assert_eq!(c[0].peak_value, 5.0);
    }

    #[test]
    fn diagonal_joins_only_with_wider_connectivity() {
        let map = grid2(&["90", "08"]);
        assert_eq!(
            extract_clusters(&map, 1.0, Connectivity::Face)
                .unwrap()
                .len(),
            2
        );
        assert_eq!(
            extract_clusters(&map, 1.0, Connectivity::FaceEdge)
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn ordered_by_peak() {
        let map = grid2(&["40009", "40009", "00000", "77000"]);
        let c = extract_clusters(&map, 3.0, Connectivity::Face).unwrap();
        let peaks: Vec<f64> = c.iter().map(|c| c.peak_value).collect();
        assert_eq!(peaks, vec![9.0, 7.0, 4.0]);
        assert_eq!(c.iter().map(|c| c.id).collect::<Vec<_>>(), vec![1, 2, 3]);
        // tie on 9: the lower linear index is the peak
        assert_eq!(c[0].peak_coord, vec![0, 4]);
    }

    #[test]
    fn mask_excludes_and_non_finite_rejected() {
        let mask = vec![true, false, true, true];
        let map = StatMap::new(vec![5.0, f64::NAN, 5.0, 0.0], &[2, 2], Some(mask)).unwrap();
        let c = extract_clusters(&map, 1.0, Connectivity::Face).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].voxels, vec![0, 2]);
        assert_eq!(map.test_indices(), vec![Some(0), None, Some(1), Some(2)]);

        let bad = StatMap::new(vec![5.0, f64::NAN, 5.0, 0.0], &[2, 2], None).unwrap();
        assert!(matches!(
            extract_clusters(&bad, 1.0, Connectivity::Face),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn three_d_connectivity_counts() {
        assert_eq!(Connectivity::Face.offsets().len(), 6);
        assert_eq!(Connectivity::FaceEdge.offsets().len(), 18);
        assert_eq!(Connectivity::FaceEdgeCorner.offsets().len(), 26);
    }

    #[test]
    fn affine_reports_millimetres() {
        let a = Affine {
            voxel_size: [3.0, 3.0, 3.0],
            origin: [-90.0, -126.0, -72.0],
        };
        assert_eq!(a.to_mm(&[1, 2, 3]), vec![-87.0, -120.0, -63.0]);
        assert_eq!(a.voxel_volume(3), 27.0);
    }
}
