use std::collections::HashSet;

use fairtrack::decode::{decode, DecodeConfig};
use fairtrack::encoding::{encode_targets, quantize_center, GtObject, SigmaParams};
use fairtrack::{BBox, GridSpec};
use proptest::prelude::*;

fn objects() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    prop::collection::vec(
        (0.0f64..1.0, 0.0f64..1.0, 8.0f64..200.0, 8.0f64..200.0),
        0..20,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decode_recovers_encoded_boxes(raw in objects()) {
        let grid = GridSpec::default();
        let (iw, ih) = (grid.image_w as f64, grid.image_h as f64);
        let mut cells = HashSet::new();
        let mut objs = Vec::new();
        for (u, v, w, h) in raw {
            let x1 = u * (iw - w);
            let y1 = v * (ih - h);
            let bbox = BBox::new(x1, y1, x1 + w, y1 + h).unwrap();
            let q = quantize_center(&bbox, &grid).unwrap();
            if cells.insert((q.cell_x, q.cell_y)) {
                objs.push(GtObject { bbox, identity: objs.len() });
            }
        }
        let (maps, report) = encode_targets(&objs, &grid, objs.len().max(1), &SigmaParams::default()).unwrap();
        prop_assert!(report.dropped.is_empty());
        let dets = decode(&maps.heatmap, &maps.offsets, &maps.sizes, None, &grid, &DecodeConfig { top_k: 500, ..Default::default() }).unwrap();
        prop_assert_eq!(dets.len(), objs.len());
        let half = grid.stride as f64 / 2.0;
        for o in &objs {
            let hit = dets.iter().any(|d| {
                (d.bbox.x1 - o.bbox.x1).abs() <= half
                    && (d.bbox.y1 - o.bbox.y1).abs() <= half
                    && (d.bbox.x2 - o.bbox.x2).abs() <= half
                    && (d.bbox.y2 - o.bbox.y2).abs() <= half
            });
            prop_assert!(hit, "{:?} not recovered", o.bbox);
        }
    }
}
