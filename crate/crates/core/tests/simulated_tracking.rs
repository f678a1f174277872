use fairtrack::decode::{decode, DecodeConfig, Detection, Sampling};
use fairtrack::metrics::{clear_mot, idf1, FrameBoxes};
use fairtrack::sim::{generate, generate_maps, Motion, Sequence, SimConfig};
use fairtrack::{GridSpec, Tracker, TrackerConfig};

fn run(seq: &Sequence, cfg: TrackerConfig<f64>) -> (FrameBoxes<f64>, FrameBoxes<f64>) {
    let mut tracker = Tracker::new(cfg).unwrap();
    let (mut gt, mut pred) = (FrameBoxes::new(), FrameBoxes::new());
    for f in &seq.frames {
        let dets: Vec<Detection<f64>> = f
            .detections
            .iter()
            .map(|d| Detection {
                bbox: d.bbox,
                score: d.score,
                embedding: Some(d.embedding.clone()),
                center_feat: d.bbox.center(),
            })
            .collect();
        let out = tracker.step(f.frame, &dets).unwrap();
        gt.insert(f.frame, f.gt.clone());
        pred.insert(
            f.frame,
            out.iter().map(|o| (o.track_id as i64, o.bbox)).collect(),
        );
    }
    (gt, pred)
}

#[test]
fn perfect_sequence_is_tracked_perfectly() {
    for seed in 0..5 {
        let seq = generate(&SimConfig {
            seed,
            ..SimConfig::default()
        })
        .unwrap();
        let (gt, pred) = run(&seq, TrackerConfig::default());
        let c = clear_mot(&gt, &pred, 0.5).unwrap();
        assert_eq!((c.mota, c.id_switches), (1.0, 0), "seed {seed}");
        assert_eq!(idf1(&gt, &pred, 0.5).unwrap().idf1, 1.0, "seed {seed}");
    }
}

#[test]
fn iou_only_switches_at_least_as_often_on_crossings() {
    let (mut iou_only, mut full) = (0, 0);
    for seed in 0..10 {
        let cfg = SimConfig {
            seed,
            motion: Motion::Crossing,
            box_noise_std: 2.0,
            emb_noise_std: 0.3,
            ..SimConfig::default()
        };
        let seq = generate(&cfg).unwrap();
        let no_reid = TrackerConfig {
            use_reid: false,
            use_kalman: false,
            ..TrackerConfig::default()
        };
        let (gt, pred) = run(&seq, no_reid);
        iou_only += clear_mot(&gt, &pred, 0.5).unwrap().id_switches;
        let (gt, pred) = run(&seq, TrackerConfig::default());
        full += clear_mot(&gt, &pred, 0.5).unwrap().id_switches;
    }
    assert!(iou_only >= full, "{iou_only} < {full}");
}

#[test]
fn maps_decode_to_frame_detections() {
    let seq = generate(&SimConfig {
        frames: 20,
        ..SimConfig::default()
    })
    .unwrap();
    let grid = GridSpec::default();
    for sampling in [Sampling::Center, Sampling::CenterBilinear] {
        for f in &seq.frames {
            let m = generate_maps(&seq, f.frame, &grid).unwrap();
            if m.report.collisions > 0 {
                continue;
            }
            let cfg = DecodeConfig {
                sampling,
                ..DecodeConfig::default()
            };
            let dets = decode(
                &m.heatmap,
                &m.offsets,
                &m.sizes,
                Some(&m.embeddings),
                &grid,
                &cfg,
            )
            .unwrap();
            assert_eq!(dets.len(), f.detections.len());
            for d in &dets {
                let e = d.embedding.as_ref().unwrap();
                let best = seq
                    .anchors
                    .iter()
                    .map(|a| a.iter().zip(e).map(|(x, y)| x * y).sum::<f64>())
                    .fold(f64::MIN, f64::max);
                assert!(best > 1.0 - 1e-9, "{sampling:?} frame {}: {best}", f.frame);
            }
        }
    }
}

#[test]
fn noisy_embeddings_stay_near_anchors() {
    let sigma = 0.2;
    let seq = generate(&SimConfig {
        emb_noise_std: sigma,
        ..SimConfig::default()
    })
    .unwrap();
    let grid = GridSpec::default();
    let (mut sum, mut n) = (0.0, 0);
    for f in &seq.frames {
        let m = generate_maps(&seq, f.frame, &grid).unwrap();
        let dets = decode(
            &m.heatmap,
            &m.offsets,
            &m.sizes,
            Some(&m.embeddings),
            &grid,
            &DecodeConfig::default(),
        )
        .unwrap();
        for d in dets {
            let e = d.embedding.unwrap();
            sum += seq
                .anchors
                .iter()
                .map(|a| a.iter().zip(&e).map(|(x, y)| x * y).sum::<f64>())
                .fold(f64::MIN, f64::max);
            n += 1;
        }
    }
    let mean = sum / n as f64;
    assert!(mean >= 1.0 - 2.0 * sigma * sigma, "{mean}");
}
