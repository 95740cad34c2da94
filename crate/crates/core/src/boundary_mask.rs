//! Keep-masks that switch the segmentation loss off near class boundaries.
//!
//! Class edges are the support of the label's discrete derivative (a pixel
//! whose 4-neighbour carries another non-ignore class). They are dilated by
//! a Euclidean disk of radius `d1` and inverted, so `1` keeps a pixel's loss
//! and `0` suppresses it. Ignore pixels are always suppressed.

use ndarray::Array2;

use crate::pixels::{SegLabelMap, IGNORE_ID};
use crate::{Error, Result};

pub const DEFAULT_DISK_RADIUS: i64 = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryMask {
    data: Array2<u8>,
    disk_radius: usize,
}

impl BoundaryMask {
    /// Mask that keeps every pixel.
    pub fn full(h: usize, w: usize) -> Self {
        BoundaryMask {
            data: Array2::ones((h, w)),
            disk_radius: 0,
        }
    }

    /// Wraps a precomputed 0/1 map.
    pub fn from_raw(data: Array2<u8>, disk_radius: usize) -> Result<Self> {
        if let Some(&bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidLabel(format!(
                "mask value {bad} is not 0 or 1"
            )));
        }
        Ok(BoundaryMask { data, disk_radius })
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn disk_radius(&self) -> usize {
        self.disk_radius
    }

    /// Share of pixels whose loss is suppressed.
    pub fn suppressed_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().filter(|&&v| v == 0).count() as f64 / self.data.len() as f64
    }

    /// 0/255 rendering for previews.
    pub fn to_gray(&self) -> Array2<u8> {
        self.data.mapv(|v| v * 255)
    }
}

/// Marks pixels that have a 4-neighbour of a different non-ignore class.
pub fn detect_class_edges(label: &SegLabelMap) -> Array2<u8> {
    let (h, w) = label.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let id = label[[y, x]];
        if id == IGNORE_ID {
            return 0;
        }
        let differs = |ny: usize, nx: usize| {
            let other = label[[ny, nx]];
            other != IGNORE_ID && other != id
        };
        let edge = (y > 0 && differs(y - 1, x))
            || (y + 1 < h && differs(y + 1, x))
            || (x > 0 && differs(y, x - 1))
            || (x + 1 < w && differs(y, x + 1));
        edge as u8
    })
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let r2 = r * r;
    (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= r2)
        .collect()
}

/// Binary dilation by the discrete disk `{(dy, dx) : dy² + dx² ≤ d1²}`.
pub fn dilate_disk(edges: &Array2<u8>, d1: i64) -> Result<Array2<u8>> {
    if d1 < 0 {
        return Err(Error::NegativeRadius(d1));
    }
    let (h, w) = edges.dim();
    let offsets = disk_offsets(d1 as usize);
    let mut out = Array2::zeros((h, w));
    for ((y, x), _) in edges.indexed_iter().filter(|(_, &v)| v != 0) {
        for &(dy, dx) in &offsets {
            let (ny, nx) = (y as isize + dy, x as isize + dx);
            if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                out[[ny as usize, nx as usize]] = 1;
            }
        }
    }
    Ok(out)
}

pub fn generate_boundary_mask(label: &SegLabelMap, d1: i64) -> Result<BoundaryMask> {
    let dilated = dilate_disk(&detect_class_edges(label), d1)?;
    let data = Array2::from_shape_fn(label.dim(), |p| {
        (dilated[p] == 0 && label[p] != IGNORE_ID) as u8
    });
    Ok(BoundaryMask {
        data,
        disk_radius: d1 as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn half_half() -> SegLabelMap {
        Array2::from_shape_fn((6, 6), |(_, x)| (x >= 3) as u8)
    }

    /// Brute force: compare every pixel with each of its in-bounds 4-neighbours.
    fn edges_oracle(label: &SegLabelMap) -> Array2<u8> {
        let (h, w) = label.dim();
        let mut out = Array2::zeros((h, w));
        for y in 0..h as isize {
            for x in 0..w as isize {
                let a = label[[y as usize, x as usize]];
                for (dy, dx) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let b = label[[ny as usize, nx as usize]];
                    if a != 255 && b != 255 && a != b {
                        out[[y as usize, x as usize]] = 1;
                    }
                }
            }
        }
        out
    }

    /// Brute force: a pixel is set iff some set input pixel is within distance r.
    fn dilate_oracle(map: &Array2<u8>, r: i64) -> Array2<u8> {
        Array2::from_shape_fn(map.dim(), |(y, x)| {
            map.indexed_iter().any(|((qy, qx), &v)| {
                let (dy, dx) = (qy as i64 - y as i64, qx as i64 - x as i64);
                v == 1 && dy * dy + dx * dx <= r * r
            }) as u8
        })
    }

    #[test]
    fn uniform_label_has_no_edges() {
        let label = Array2::from_elem((5, 7), 2u8);
        assert!(detect_class_edges(&label).iter().all(|&v| v == 0));
        for d1 in 0..4 {
            let m = generate_boundary_mask(&label, d1).unwrap();
            assert!(m.data().iter().all(|&v| v == 1));
            assert_eq!(m.suppressed_fraction(), 0.0);
        }
    }

    #[test]
    fn half_half_edges_sit_on_the_seam() {
        let edges = detect_class_edges(&half_half());
        assert_eq!(edges, edges_oracle(&half_half()));
        for ((_, x), &v) in edges.indexed_iter() {
            assert_eq!(v, (x == 2 || x == 3) as u8);
        }
    }

    #[test]
    fn isolated_pixel_marks_plus_shape() {
        let mut label = Array2::zeros((5, 5));
        label[[2, 2]] = 1u8;
        let edges = detect_class_edges(&label);
        assert_eq!(edges, edges_oracle(&label));
        assert_eq!(edges.sum(), 5);
        for p in [[2, 2], [1, 2], [3, 2], [2, 1], [2, 3]] {
            assert_eq!(edges[p], 1);
        }
    }

    #[test]
    fn disk_sizes() {
        let mut point = Array2::zeros((7, 7));
        point[[3, 3]] = 1u8;
        assert_eq!(dilate_disk(&point, 0).unwrap(), point);
        let d1 = dilate_disk(&point, 1).unwrap();
        assert_eq!(d1.iter().filter(|&&v| v == 1).count(), 5);
        assert_eq!(d1, dilate_oracle(&point, 1));
        let d2 = dilate_disk(&point, 2).unwrap();
        assert_eq!(d2.iter().filter(|&&v| v == 1).count(), 13);
        assert_eq!(d2, dilate_oracle(&point, 2));
        assert!(matches!(
            dilate_disk(&point, -1),
            Err(Error::NegativeRadius(-1))
        ));
    }

    #[test]
    fn half_half_mask_with_radius_one() {
        let m = generate_boundary_mask(&half_half(), 1).unwrap();
        for ((_, x), &v) in m.data().indexed_iter() {
            assert_eq!(v, (x == 0 || x == 5) as u8, "column {x}");
        }
    }

    #[test]
    fn ignore_region_is_always_suppressed() {
        let label = array![[0u8, 0, 255, 255], [0, 0, 255, 255], [0, 0, 0, 0]];
        let m = generate_boundary_mask(&label, 0).unwrap();
        assert_eq!(
            m.data(),
            &array![[1u8, 1, 0, 0], [1, 1, 0, 0], [1, 1, 1, 1]]
        );
    }

    #[test]
    fn checkerboard_is_fully_suppressed() {
        let board = Array2::from_shape_fn((8, 8), |(y, x)| ((y + x) % 2) as u8);
        for d1 in 1..4 {
            assert_eq!(
                generate_boundary_mask(&board, d1)
                    .unwrap()
                    .suppressed_fraction(),
                1.0
            );
        }
    }

    fn label_strategy() -> impl Strategy<Value = SegLabelMap> {
        (1usize..=12, 1usize..=12).prop_flat_map(|(h, w)| {
            proptest::collection::vec(prop_oneof![8 => 0u8..3, 1 => Just(255u8)], h * w)
                .prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn matches_edge_and_dilation_oracles(label in label_strategy(), d1 in 0i64..4) {
            let m = generate_boundary_mask(&label, d1).unwrap();
            let dil = dilate_oracle(&edges_oracle(&label), d1);
            let want = Array2::from_shape_fn(label.dim(), |p| (dil[p] == 0 && label[p] != 255) as u8);
            prop_assert_eq!(m.data(), &want);
        }

        #[test]
        fn larger_radius_suppresses_more(label in label_strategy(), d1 in 0i64..3) {
            let a = generate_boundary_mask(&label, d1).unwrap();
            let b = generate_boundary_mask(&label, d1 + 1).unwrap();
            prop_assert!(a.data().iter().zip(b.data().iter()).all(|(x, y)| y <= x));
        }

        #[test]
        fn invariant_under_class_permutation(label in label_strategy(), d1 in 0i64..4, shift in 1u8..6) {
            let permuted = label.mapv(|v| if v == 255 { 255 } else { (v + shift) % 6 });
            prop_assert_eq!(
                generate_boundary_mask(&label, d1).unwrap(),
                generate_boundary_mask(&permuted, d1).unwrap()
            );
        }
    }
}
