//! `eval`, `reid-eval` and `gradcheck`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{bail, Result};
use fairtrack::gradcheck::{check_fixture, random_fixture};
use fairtrack::metrics::{
    clear_mot, detection_ap, idf1, tpr_at_far, verification_pairs, IdentitySample,
};
use fairtrack::mot_io::{to_frame_boxes, MotKind};
use fairtrack::{iou, Error};
use rayon::prelude::*;
use serde::Serialize;

use crate::io::{
    frame_file, load_mot, read_tensor, sidecar_manifest, write_atomic, write_manifest, RunInfo,
};
use crate::{EvalArgs, GradcheckArgs, ReidEvalArgs};

#[derive(Debug, Default, Serialize)]
struct Summary {
    #[serde(skip_serializing_if = "Option::is_none")]
    mota: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    motp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    id_switches: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fp: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r#fn: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_gt: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gt_tracks: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mt_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ml_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    idf1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    idp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    idr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ap: Option<f64>,
}

const METRICS: [&str; 3] = ["clear", "idf1", "ap"];

pub fn run_eval(a: &EvalArgs, info: &RunInfo) -> Result<()> {
    let wanted: Vec<&str> = a
        .metrics
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if let Some(bad) = wanted.iter().find(|m| !METRICS.contains(m)) {
        bail!(Error::invalid(format!(
            "unknown metric '{bad}' (clear, idf1, ap)"
        )));
    }
    if !(a.iou > 0.0 && a.iou <= 1.0) {
        bail!(Error::invalid(format!(
            "--iou must be in (0, 1], got {}",
            a.iou
        )));
    }
    let gt_recs = load_mot(&a.gt, MotKind::Gt)?;
    let pred_recs = load_mot(&a.pred, MotKind::Result)?;
    let gt = to_frame_boxes(&gt_recs)?;
    let pred = to_frame_boxes(&pred_recs)?;

    let want = |m: &str| wanted.contains(&m);
    let clear = want("clear")
        .then(|| clear_mot(&gt, &pred, a.iou))
        .transpose()?;
    let ident = want("idf1").then(|| idf1(&gt, &pred, a.iou)).transpose()?;
    let ap = if want("ap") {
        let g: BTreeMap<u64, Vec<_>> = gt
            .iter()
            .map(|(f, v)| (*f, v.iter().map(|(_, b)| *b).collect()))
            .collect();
        let p = pred_recs
            .iter()
            .map(|(f, rs)| {
                Ok((
                    *f,
                    rs.iter()
                        .map(|r| Ok((r.bbox()?, r.conf)))
                        .collect::<Result<Vec<_>>>()?,
                ))
            })
            .collect::<Result<BTreeMap<u64, Vec<_>>>>()?;
        Some(detection_ap(&g, &p, a.iou))
    } else {
        None
    };

    let mut s = Summary::default();
    let mut report = String::new();
    if let Some(c) = &clear {
        s.mota = Some(c.mota);
        s.motp = Some(c.motp);
        s.id_switches = Some(c.id_switches);
        s.fp = Some(c.fp);
        s.r#fn = Some(c.fn_);
        s.num_gt = Some(c.total_gt);
        s.gt_tracks = Some(c.num_gt_tracks);
        s.mt_ratio = Some(c.mt_ratio());
        s.ml_ratio = Some(c.ml_ratio());
        let _ = writeln!(report, "mota={:.6}", c.mota);
        let _ = writeln!(report, "motp={:.6}", c.motp);
        let _ = writeln!(report, "id_switches={}", c.id_switches);
        let _ = writeln!(report, "fp={}", c.fp);
        let _ = writeln!(report, "fn={}", c.fn_);
        let _ = writeln!(report, "num_gt={}", c.total_gt);
        let _ = writeln!(report, "gt_tracks={}", c.num_gt_tracks);
        let _ = writeln!(report, "mt_ratio={:.6}", c.mt_ratio());
        let _ = writeln!(report, "ml_ratio={:.6}", c.ml_ratio());
    }
    if let Some(m) = &ident {
        s.idf1 = Some(m.idf1);
        s.idp = Some(m.idp);
        s.idr = Some(m.idr);
        let _ = writeln!(report, "idf1={:.6}", m.idf1);
        let _ = writeln!(report, "idp={:.6}", m.idp);
        let _ = writeln!(report, "idr={:.6}", m.idr);
    }
    if let Some(v) = ap {
        s.ap = Some(v);
        let _ = writeln!(report, "ap={v:.6}");
    }
    if a.json {
        report.push_str(&serde_json::to_string(&s)?);
        report.push('\n');
    }
    print!("{report}");
    if let Some(out) = &a.out {
        write_atomic(out, report.as_bytes())?;
        let mut cfg = BTreeMap::new();
        cfg.insert("iou".to_string(), a.iou.to_string());
        cfg.insert("metrics".to_string(), wanted.join(","));
        let manifest = info.manifest(
            Some(cfg),
            vec![a.gt.clone(), a.pred.clone()],
            vec![out.clone()],
            None,
        )?;
        write_manifest(&sidecar_manifest(out), &manifest)?;
    }
    Ok(())
}

/// Labels every detection with the ground-truth identity it overlaps most (at least
/// `iou_thresh`), then scores genuine and impostor pairs.
pub fn run_reid_eval(a: &ReidEvalArgs, info: &RunInfo) -> Result<()> {
    if !(a.far > 0.0 && a.far < 1.0) {
        bail!(Error::invalid(format!(
            "--far must be in (0, 1), got {}",
            a.far
        )));
    }
    let gt_path = a.input.join("gt.txt");
    let det_path = a.input.join("det.txt");
    let gt = to_frame_boxes(&load_mot(&gt_path, MotKind::Gt)?)?;
    let dets = load_mot(&det_path, MotKind::Det)?;
    let emb_dir = a.input.join("emb");
    let mut inputs = vec![gt_path, det_path];
    let mut samples = Vec::new();
    let empty = Vec::new();
    for (frame, recs) in &dets {
        let p = frame_file(&emb_dir, *frame, "dets.ften");
        let t = read_tensor(&p)?.into_2d()?.cast::<f64>();
        if t.height() != recs.len() {
            bail!(Error::Format {
                offset: 0,
                message: format!(
                    "{}: {} rows for {} detections",
                    p.display(),
                    t.height(),
                    recs.len()
                ),
            });
        }
        inputs.push(p);
        let g = gt.get(frame).unwrap_or(&empty);
        for (i, r) in recs.iter().enumerate() {
            let b = r.bbox()?;
            let best = g
                .iter()
                .map(|(id, gb)| (*id, iou(&b, gb)))
                .filter(|(_, o)| *o >= a.iou)
                .fold(None::<(i64, f64)>, |acc, x| match acc {
                    Some(best) if best.1 >= x.1 => Some(best),
                    _ => Some(x),
                });
            if let Some((identity, _)) = best {
                samples.push(IdentitySample {
                    frame: *frame,
                    identity,
                    embedding: t.data()[i * t.width()..(i + 1) * t.width()].to_vec(),
                });
            }
        }
    }
    let (genuine, impostor) = verification_pairs(&samples);
    let tpr = tpr_at_far(&genuine, &impostor, a.far)?;
    let report = format!(
        "samples={}\ngenuine_pairs={}\nimpostor_pairs={}\nfar={}\ntpr_at_far={tpr:.6}\n",
        samples.len(),
        genuine.len(),
        impostor.len(),
        a.far
    );
    print!("{report}");
    if let Some(out) = &a.out {
        write_atomic(out, report.as_bytes())?;
        let mut cfg = BTreeMap::new();
        cfg.insert("far".to_string(), a.far.to_string());
        cfg.insert("iou".to_string(), a.iou.to_string());
        let manifest = info.manifest(Some(cfg), inputs, vec![out.clone()], None)?;
        write_manifest(&sidecar_manifest(out), &manifest)?;
    }
    Ok(())
}

/// Returns whether every check passed.
pub fn run_gradcheck(a: &GradcheckArgs, info: &RunInfo) -> Result<bool> {
    if a.seeds == 0 || a.max_side < 2 || a.max_identities < 2 {
        bail!(Error::invalid(
            "need --seeds >= 1, --max-side >= 2 and --max-identities >= 2"
        ));
    }
    let per_seed: Vec<Vec<fairtrack::gradcheck::GradReport>> = (a.start_seed
        ..a.start_seed + a.seeds)
        .into_par_iter()
        .map(|seed| {
            Ok(check_fixture(&random_fixture(
                seed,
                a.max_side,
                a.max_identities,
            )?)?)
        })
        .collect::<Result<_>>()?;
    let mut worst: BTreeMap<&'static str, (f64, u64)> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, reports) in per_seed.iter().enumerate() {
        for r in reports {
            let seed = a.start_seed + i as u64;
            let e = worst.entry(r.name).or_insert_with(|| {
                order.push(r.name);
                (0.0, seed)
            });
            if r.max_rel_error > e.0 {
                *e = (r.max_rel_error, seed);
            }
        }
    }
    let mut report = String::new();
    let mut overall = 0.0f64;
    for name in order {
        let (err, seed) = worst[name];
        overall = overall.max(err);
        let verdict = if err <= a.tolerance { "ok" } else { "FAIL" };
        let _ = writeln!(
            report,
            "{name}: worst_rel_error={err:.3e} seed={seed} {verdict}"
        );
    }
    let pass = overall <= a.tolerance;
    let _ = writeln!(
        report,
        "worst_rel_error={overall:.3e} tolerance={:.1e} seeds={}",
        a.tolerance, a.seeds
    );
    print!("{report}");
    if let Some(out) = &a.out {
        write_atomic(out, report.as_bytes())?;
        let manifest = info.manifest(None, Vec::new(), vec![out.clone()], Some(a.start_seed))?;
        write_manifest(&sidecar_manifest(out), &manifest)?;
    }
    Ok(pass)
}
