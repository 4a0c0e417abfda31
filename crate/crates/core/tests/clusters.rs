use std::collections::BTreeSet;

use notipkit::bounds::AriContext;
use notipkit::{cluster_tdp_table, extract_clusters, false_positive_bound, Connectivity, StatMap};
use proptest::prelude::*;

/// Recursive depth-first labelling; neighbours are voxels whose coordinates
/// differ by at most one on each axis and by at most `reach` in total.
fn flood_fill(values: &[f64], dims: [usize; 3], z: f64, reach: usize) -> BTreeSet<Vec<usize>> {
    fn visit(
        v: [usize; 3],
        dims: [usize; 3],
        supra: &dyn Fn([usize; 3]) -> bool,
        seen: &mut BTreeSet<[usize; 3]>,
        out: &mut Vec<[usize; 3]>,
        reach: usize,
    ) {
        if !seen.insert(v) {
            return;
        }
        out.push(v);
        for x in v[0].saturating_sub(1)..=(v[0] + 1).min(dims[0] - 1) {
            for y in v[1].saturating_sub(1)..=(v[1] + 1).min(dims[1] - 1) {
                for zz in v[2].saturating_sub(1)..=(v[2] + 1).min(dims[2] - 1) {
                    let d = x.abs_diff(v[0]) + y.abs_diff(v[1]) + zz.abs_diff(v[2]);
                    if d >= 1 && d <= reach && supra([x, y, zz]) {
                        visit([x, y, zz], dims, supra, seen, out, reach);
                    }
                }
            }
        }
    }
    let lin = |c: [usize; 3]| (c[0] * dims[1] + c[1]) * dims[2] + c[2];
    let supra = |c: [usize; 3]| values[lin(c)] > z;
    let mut seen = BTreeSet::new();
    let mut clusters = BTreeSet::new();
    for x in 0..dims[0] {
        for y in 0..dims[1] {
            for zz in 0..dims[2] {
                if supra([x, y, zz]) && !seen.contains(&[x, y, zz]) {
                    let mut out = Vec::new();
                    visit([x, y, zz], dims, &supra, &mut seen, &mut out, reach);
                    let mut ids: Vec<usize> = out.into_iter().map(lin).collect();
                    ids.sort_unstable();
                    clusters.insert(ids);
                }
            }
        }
    }
    clusters
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn clusters_match_flood_fill(
        values in prop::collection::vec(-1.0..3.0f64, 5 * 4 * 6),
        z in 0.0..2.0f64,
        conn in prop::sample::select(vec![
            (Connectivity::Face, 1),
            (Connectivity::FaceEdge, 2),
            (Connectivity::FaceEdgeCorner, 3),
        ]),
    ) {
        let map = StatMap::new(values.clone(), &[5, 4, 6], None).unwrap();
        let got = extract_clusters(&map, z, conn.0).unwrap();
        let got_sets: BTreeSet<Vec<usize>> = got.iter().map(|c| c.voxels.clone()).collect();
        prop_assert_eq!(got_sets, flood_fill(&values, [5, 4, 6], z, conn.1));
        for w in got.windows(2) {
            prop_assert!(w[0].peak_value >= w[1].peak_value);
        }
        for (i, c) in got.iter().enumerate() {
            prop_assert_eq!(c.id, i + 1);
            let max = c.voxels.iter().map(|&v| values[v]).fold(f64::MIN, f64::max);
            prop_assert_eq!(c.peak_value, max);
        }
    }

    #[test]
    fn two_dimensional_maps_use_planar_neighbours(
        values in prop::collection::vec(-1.0..3.0f64, 7 * 6),
        z in 0.0..2.0f64,
    ) {
        let map = StatMap::new(values.clone(), &[7, 6], None).unwrap();
        let face: BTreeSet<Vec<usize>> = extract_clusters(&map, z, Connectivity::Face)
            .unwrap().into_iter().map(|c| c.voxels).collect();
        prop_assert_eq!(face, flood_fill(&values, [7, 6, 1], z, 1));
        let diag: BTreeSet<Vec<usize>> = extract_clusters(&map, z, Connectivity::FaceEdge)
            .unwrap().into_iter().map(|c| c.voxels).collect();
        prop_assert_eq!(diag, flood_fill(&values, [7, 6, 1], z, 2));
    }
}

#[test]
fn cluster_table_matches_direct_bound() {
    // two blobs of strong signal in a weak background
    let dims = [6, 6];
    let mut p = vec![0.6; 36];
    for &i in &[0, 1, 6, 7] {
        p[i] = 1e-6;
    }
    for &i in &[28, 29, 34, 35] {
        p[i] = 0.02;
    }
    let z: Vec<f64> = p
        .iter()
        .map(|&x| if x < 0.05 { 4.0 - x } else { 0.0 })
        .collect();
    let map = StatMap::from_tests(&z, &dims, None).unwrap();
    let clusters = extract_clusters(&map, 3.0, Connectivity::Face).unwrap();
    assert_eq!(clusters.len(), 2);
    let ari = AriContext::new(&p, 0.05).unwrap().calibrated().unwrap();
    let table =
        cluster_tdp_table(&map, &clusters, 3.0, &p, std::slice::from_ref(&ari), None).unwrap();
    for (row, c) in table.rows.iter().zip(&clusters) {
        let subset: Vec<f64> = c.voxels.iter().map(|&v| p[v]).collect();
        let v = false_positive_bound(&subset, ari.thresholds(), ari.k_max).unwrap();
        let expected = (subset.len() - v) as f64 / subset.len() as f64;
        assert_eq!(row.tdp[0].tdp_bound, expected);
    }
    // the strong blob is fully certified, the weak one is not
    assert_eq!(table.rows[0].tdp[0].tdp_bound, 1.0);
    assert!(table.rows[1].tdp[0].tdp_bound < 1.0);
}

#[test]
fn masked_map_uses_in_mask_test_order() {
    let dims = [3, 3];
    let mask: Vec<bool> = (0..9).map(|i| i != 4).collect();
    let tests: Vec<f64> = (0..8).map(|i| i as f64).collect();
    let map = StatMap::from_tests(&tests, &dims, Some(mask)).unwrap();
    let idx = map.test_indices();
    assert_eq!(idx[4], None);
    assert_eq!(idx[5], Some(4));
    assert_eq!(map.values()[8], 7.0);
}
