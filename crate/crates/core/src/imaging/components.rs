//! Connected-component labelling on binary masks (8-connectivity).

use super::BinaryMask;

/// Labels 8-connected components. Returns `(labels, areas)` where
/// `labels[i] == 0` for background and components are numbered from 1 in
/// raster-scan order of their first pixel; `areas[k]` is the pixel count
/// of label `k + 1`.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    let mut next = 1u32;
    for start in 0..w * h {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        let mut area = 0usize;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = (i % w, i / w);
            let x0 = x.saturating_sub(1);
            let y0 = y.saturating_sub(1);
            for ny in y0..=(y + 1).min(h - 1) {
                for nx in x0..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask.bits[j] && labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
        areas.push(area);
        next += 1;
    }
    (labels, areas)
}

/// Masks of the `k` largest 8-connected components, ordered by
/// descending area with raster-scan order breaking ties. Returns fewer
/// than `k` masks when the input has fewer components; an empty mask
/// yields an empty vector.
pub fn largest_components(mask: &BinaryMask, k: usize) -> Vec<BinaryMask> {
    let (labels, areas) = label_components(mask);
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by(|&a, &b| areas[b].cmp(&areas[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
        .into_iter()
        .map(|idx| {
            let want = idx as u32 + 1;
            let bits = labels.iter().map(|&l| l == want).collect();
            BinaryMask { width: mask.width, height: mask.height, bits }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from_rows(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        let mut m = BinaryMask::new_false(w, h);
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                m.set(x, y, ch == '#');
            }
        }
        m
    }

    #[test]
    fn diagonal_pixels_connect() {
        let m = mask_from_rows(&["#...", ".#..", "..#.", "...#"]);
        let comps = largest_components(&m, 5);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].area(), 4);
    }

    #[test]
    fn two_blobs_sorted_by_area() {
        let m = mask_from_rows(&[
            "##....#",
            "##....#",
            "##.....",
            ".......",
        ]);
        let comps = largest_components(&m, 2);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].area(), 6);
        assert_eq!(comps[1].area(), 2);
        assert!(comps[0].get(0, 0) && !comps[0].get(6, 0));
        assert!(comps[1].get(6, 0) && !comps[1].get(0, 0));
    }

    #[test]
    fn equal_areas_break_ties_by_scan_order() {
        let m = mask_from_rows(&["#..#", "....", "...."]);
        let comps = largest_components(&m, 2);
        assert_eq!(comps.len(), 2);
        assert!(comps[0].get(0, 0));
        assert!(comps[1].get(3, 0));
    }

    #[test]
    fn empty_mask_yields_nothing() {
        let m = BinaryMask::new_false(5, 5);
        assert!(largest_components(&m, 3).is_empty());
    }

    #[test]
    fn k_larger_than_component_count() {
        let m = mask_from_rows(&["#.#"]);
        assert_eq!(largest_components(&m, 10).len(), 2);
    }

    proptest! {
        #[test]
        fn components_partition_the_mask(bits in proptest::collection::vec(any::<bool>(), 48)) {
            let m = BinaryMask::from_bits(8, 6, bits).unwrap();
            let comps = largest_components(&m, usize::MAX);
            // Components are disjoint, each is a subset, and their union
            // reconstructs the input mask exactly.
            let mut union = BinaryMask::new_false(8, 6);
            for c in &comps {
                prop_assert!(c.is_subset_of(&m));
                prop_assert_eq!(c.and(&union).unwrap().area(), 0);
                union = union.or(c).unwrap();
            }
            prop_assert_eq!(union, m);
            // Ordered by non-increasing area.
            for pair in comps.windows(2) {
                prop_assert!(pair[0].area() >= pair[1].area());
            }
        }
    }
}
