//! `encode` and `decode`: ground truth to target maps, and predicted maps to detections.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fairtrack::config::Config;
use fairtrack::decode::decode;
use fairtrack::encoding::{encode_targets, GtObject, SigmaParams};
use fairtrack::ften::FtenTensor;
use fairtrack::mot_io::{fmt2, MotKind};
use fairtrack::{GridSpec, Tensor2D};
use rayon::prelude::*;

use crate::io::{
    find_seqinfo, frame_file, load_config, load_mot, read_tensor, write_atomic, write_manifest,
    write_tensor, RunInfo,
};
use crate::{DecodeArgs, EncodeArgs};

/// Image size from flags, else a `seqinfo.ini` in `near`, else `fallback`.
fn image_size(
    w: Option<usize>,
    h: Option<usize>,
    near: Option<&Path>,
    fallback: (usize, usize),
) -> Result<(usize, usize)> {
    let seq = match near {
        Some(dir) => find_seqinfo(dir)?,
        None => None,
    };
    let (sw, sh) = seq.map_or(fallback, |s| (s.im_width, s.im_height));
    Ok((w.unwrap_or(sw), h.unwrap_or(sh)))
}

pub fn run_encode(a: &EncodeArgs, info: &RunInfo) -> Result<()> {
    let records = load_mot(&a.gt, MotKind::Gt)?;
    let (iw, ih) = image_size(a.image_w, a.image_h, a.gt.parent(), (1088, 608))?;
    let grid = GridSpec::new(iw, ih, a.stride)?;
    let ids: BTreeMap<i64, usize> = records
        .values()
        .flatten()
        .map(|r| r.id)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    let identity_ids: Vec<i64> = ids.keys().copied().collect();
    let k = ids.len().max(1);

    type FrameOut = (String, Vec<PathBuf>, usize, usize);
    let frames: Vec<(u64, Vec<fairtrack::mot_io::MotRecord>)> = records.into_iter().collect();
    let results: Vec<FrameOut> = frames
        .par_iter()
        .map(|(frame, recs)| -> Result<FrameOut> {
            let objects: Vec<GtObject<f64>> = recs
                .iter()
                .map(|r| {
                    Ok(GtObject {
                        bbox: r.bbox()?,
                        identity: ids[&r.id],
                    })
                })
                .collect::<Result<_>>()?;
            let (maps, report) = encode_targets(&objects, &grid, k, &SigmaParams::default())?;
            let mut centers = String::new();
            for c in maps.centers() {
                let _ = writeln!(
                    centers,
                    "{frame},{},{},{}",
                    c.x, c.y, identity_ids[c.identity]
                );
            }
            let files = [
                (
                    frame_file(&a.out, *frame, "heat.ften"),
                    FtenTensor::from(&maps.heatmap),
                ),
                (
                    frame_file(&a.out, *frame, "off.ften"),
                    FtenTensor::from(&maps.offsets),
                ),
                (
                    frame_file(&a.out, *frame, "size.ften"),
                    FtenTensor::from(&maps.sizes),
                ),
            ];
            let mut paths = Vec::new();
            for (p, t) in files {
                write_tensor(&p, &t)?;
                paths.push(p);
            }
            Ok((centers, paths, report.dropped.len(), report.collisions))
        })
        .collect::<Result<_>>()?;

    let mut centers = String::new();
    let mut outputs = Vec::new();
    let (mut dropped, mut collisions) = (0, 0);
    for (c, p, d, col) in results {
        centers.push_str(&c);
        outputs.extend(p);
        dropped += d;
        collisions += col;
    }
    let centers_path = a.out.join("centers.txt");
    write_atomic(&centers_path, centers.as_bytes())?;
    outputs.push(centers_path);
    let mut cfg = BTreeMap::new();
    cfg.insert("image_w".to_string(), iw.to_string());
    cfg.insert("image_h".to_string(), ih.to_string());
    cfg.insert("stride".to_string(), a.stride.to_string());
    let manifest = info.manifest(Some(cfg), vec![a.gt.clone()], outputs, None)?;
    write_manifest(&a.out.join("manifest.json"), &manifest)?;
    println!(
        "frames={} identities={} dropped={dropped} collisions={collisions} out={}",
        frames.len(),
        ids.len(),
        a.out.display()
    );
    Ok(())
}

/// Frames that have a `{frame:06}.heat.ften` in `dir`, ascending.
fn heat_frames(dir: &Path) -> Result<Vec<u64>> {
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".heat.ften") {
            if let Ok(f) = stem.parse::<u64>() {
                frames.push(f);
            }
        }
    }
    frames.sort_unstable();
    Ok(frames)
}

pub fn resolve_decode_config(a: &DecodeArgs) -> Result<Config> {
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    if let Some(t) = a.threshold {
        cfg.decode.threshold = t;
    }
    if let Some(k) = a.top_k {
        cfg.decode.top_k = k;
    }
    if let Some(s) = a.sampling {
        cfg.decode.sampling = s;
    }
    if cfg.decode.top_k == 0 {
        bail!(fairtrack::Error::Config {
            key: "top_k".into(),
            message: "must be at least 1".into()
        });
    }
    Ok(cfg)
}

pub fn run_decode(a: &DecodeArgs, info: &RunInfo) -> Result<()> {
    let cfg = resolve_decode_config(a)?;
    let frames = heat_frames(&a.input)?;
    if frames.is_empty() {
        bail!(fairtrack::Error::invalid(format!(
            "no *.heat.ften files in {}",
            a.input.display()
        )));
    }

    type FrameOut = (String, Option<PathBuf>, Vec<PathBuf>);
    let results: Vec<FrameOut> = frames
        .par_iter()
        .map(|&frame| -> Result<FrameOut> {
            let heat_path = frame_file(&a.input, frame, "heat.ften");
            let off_path = frame_file(&a.input, frame, "off.ften");
            let size_path = frame_file(&a.input, frame, "size.ften");
            let emb_path = frame_file(&a.input, frame, "emb.ften");
            let heat = read_tensor(&heat_path)?.into_2d()?.cast::<f64>();
            let off = read_tensor(&off_path)?.into_3d()?.cast::<f64>();
            let size = read_tensor(&size_path)?.into_3d()?.cast::<f64>();
            let mut inputs = vec![heat_path, off_path, size_path];
            let emb = if emb_path.is_file() {
                let e = read_tensor(&emb_path)?.into_3d()?.cast::<f64>();
                inputs.push(emb_path);
                Some(e)
            } else {
                None
            };
            let (fh, fw) = heat.shape();
            let (iw, ih) = image_size(
                a.image_w,
                a.image_h,
                a.input.parent(),
                (fw * a.stride, fh * a.stride),
            )?;
            let grid = GridSpec::new(iw, ih, a.stride)?;
            let dets = decode(&heat, &off, &size, emb.as_ref(), &grid, &cfg.decode)?;

            let mut text = String::new();
            for d in &dets {
                let b = &d.bbox;
                let _ = writeln!(
                    text,
                    "{frame},{:.4},{},{},{},{}",
                    d.score,
                    fmt2(b.x1),
                    fmt2(b.y1),
                    fmt2(b.x2),
                    fmt2(b.y2)
                );
            }
            let mut written = None;
            if let Some(e) = &emb {
                if !dets.is_empty() {
                    let dim = e.channels();
                    let rows: Vec<f64> = dets
                        .iter()
                        .flat_map(|d| d.embedding.clone().unwrap_or_else(|| vec![0.0; dim]))
                        .collect();
                    let p = frame_file(&a.out, frame, "dets.ften");
                    write_tensor(
                        &p,
                        &FtenTensor::from(&Tensor2D::from_vec(dets.len(), dim, rows)?),
                    )?;
                    written = Some(p);
                }
            }
            Ok((text, written, inputs))
        })
        .collect::<Result<_>>()?;

    let mut text = String::new();
    let mut outputs = Vec::new();
    let mut inputs = Vec::new();
    for (t, w, i) in results {
        text.push_str(&t);
        outputs.extend(w);
        inputs.extend(i);
    }
    let det_path = a.out.join("detections.txt");
    write_atomic(&det_path, text.as_bytes())?;
    outputs.insert(0, det_path);
    let n = text.lines().count();
    if let Some(p) = &a.config {
        inputs.push(p.clone());
    }
    let manifest = info.manifest(Some(cfg.entries()), inputs, outputs, None)?;
    write_manifest(&a.out.join("manifest.json"), &manifest)?;
    println!(
        "frames={} detections={n} out={}",
        frames.len(),
        a.out.display()
    );
    Ok(())
}
