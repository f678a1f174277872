use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use fairtrack::config::Config;
use fairtrack::decode::Detection;
use fairtrack::mot_io::{parse_mot_str, result_line, MotKind};
use fairtrack::{BBox, Error, Tracker};

use crate::io::{
    find_seqinfo, frame_file, load_config, read_tensor, read_text, sidecar_manifest, write_atomic,
    write_manifest, RunInfo,
};
use crate::TrackArgs;

pub type FrameDetections = BTreeMap<u64, Vec<(BBox<f64>, f64)>>;

fn parse_error(path: &Path, line: usize, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

/// Reads MOTChallenge detections (9 or 10 fields) or decoder output
/// (`frame,score,x1,y1,x2,y2`), chosen by the first line.
pub fn parse_detections(path: &Path) -> Result<FrameDetections> {
    let text = read_text(path)?;
    let first = text.lines().map(str::trim).find(|l| !l.is_empty());
    let Some(first) = first else {
        return Ok(FrameDetections::new());
    };
    if first.split(',').count() != 6 {
        let recs = parse_mot_str(&text, MotKind::Det, path)?;
        return recs
            .into_iter()
            .map(|(f, rs)| {
                Ok((
                    f,
                    rs.iter()
                        .map(|r| Ok((r.bbox()?, r.conf)))
                        .collect::<Result<Vec<_>>>()?,
                ))
            })
            .collect();
    }
    let mut out = FrameDetections::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            bail!(parse_error(
                path,
                i + 1,
                format!("expected 6 fields, found {}", fields.len())
            ));
        }
        let frame: u64 = fields[0]
            .parse()
            .ok()
            .filter(|&f| f >= 1)
            .ok_or_else(|| parse_error(path, i + 1, format!("bad frame '{}'", fields[0])))?;
        let mut v = [0.0f64; 5];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = fields[k + 1]
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| {
                    parse_error(path, i + 1, format!("bad number '{}'", fields[k + 1]))
                })?;
        }
        let bbox = BBox::new(v[1], v[2], v[3], v[4])
            .map_err(|e| parse_error(path, i + 1, e.to_string()))?;
        out.entry(frame).or_default().push((bbox, v[0]));
    }
    Ok(out)
}

pub fn resolve_config(a: &TrackArgs) -> Result<Config> {
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    if a.no_reid {
        cfg.tracker.use_reid = false;
    }
    if a.no_iou {
        cfg.tracker.use_iou = false;
    }
    if a.no_kalman {
        cfg.tracker.use_kalman = false;
    }
    cfg.tracker.validate()?;
    Ok(cfg)
}

pub fn run(a: &TrackArgs, info: &RunInfo) -> Result<()> {
    let cfg = resolve_config(a)?;
    let (det_path, emb_dir, seq_dir): (PathBuf, Option<PathBuf>, Option<PathBuf>) =
        match (&a.input, &a.dets) {
            (Some(dir), None) => {
                let emb = dir.join("emb");
                (
                    dir.join("det.txt"),
                    emb.is_dir().then_some(emb),
                    Some(dir.clone()),
                )
            }
            (None, Some(d)) => (
                d.clone(),
                a.emb_dir.clone(),
                d.parent().map(Path::to_path_buf),
            ),
            _ => bail!("give exactly one of --in DIR or --dets FILE"),
        };
    let emb_dir = if a.input.is_some() && a.emb_dir.is_some() {
        a.emb_dir.clone()
    } else {
        emb_dir
    };
    if cfg.tracker.use_reid && emb_dir.is_none() {
        bail!(Error::invalid(
            "re-ID association needs embeddings: pass --emb-dir or --no-reid"
        ));
    }

    let detections = parse_detections(&det_path)?;
    let last_det = detections.keys().next_back().copied().unwrap_or(0);
    let frames = match a.frames {
        Some(n) => n,
        None => match seq_dir.as_deref().map(find_seqinfo).transpose()?.flatten() {
            Some(s) => s.seq_length.max(last_det),
            None => last_det,
        },
    };

    let mut inputs = vec![det_path.clone()];
    if let Some(p) = &a.config {
        inputs.push(p.clone());
    }
    let mut tracker = Tracker::new(cfg.tracker)?;
    let mut text = String::new();
    let mut rows = 0usize;
    let empty = Vec::new();
    for frame in 1..=frames {
        let raw = detections.get(&frame).unwrap_or(&empty);
        let embeddings: Option<Vec<Vec<f64>>> = match (&emb_dir, raw.is_empty()) {
            (Some(dir), false) if cfg.tracker.use_reid => {
                let p = frame_file(dir, frame, "dets.ften");
                let t = read_tensor(&p)?.into_2d()?.cast::<f64>();
                if t.height() != raw.len() {
                    bail!(Error::Format {
                        offset: 0,
                        message: format!(
                            "{}: {} rows for {} detections",
                            p.display(),
                            t.height(),
                            raw.len()
                        ),
                    });
                }
                inputs.push(p);
                Some(t.data().chunks(t.width()).map(<[f64]>::to_vec).collect())
            }
            _ => None,
        };
        let dets: Vec<Detection<f64>> = raw
            .iter()
            .enumerate()
            .map(|(i, (bbox, score))| Detection {
                bbox: *bbox,
                score: *score,
                embedding: embeddings.as_ref().map(|e| e[i].clone()),
                center_feat: bbox.center(),
            })
            .collect();
        for o in tracker.step(frame, &dets)? {
            text.push_str(&result_line(frame, o.track_id as i64, &o.bbox, o.score));
            text.push('\n');
            rows += 1;
        }
    }
    write_atomic(&a.out, text.as_bytes())?;
    let manifest = info.manifest(Some(cfg.entries()), inputs, vec![a.out.clone()], None)?;
    write_manifest(&sidecar_manifest(&a.out), &manifest)?;
    println!("frames={frames} rows={rows} out={}", a.out.display());
    Ok(())
}
