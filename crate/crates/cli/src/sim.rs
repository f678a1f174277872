use std::path::PathBuf;

use anyhow::Result;
use fairtrack::config::Config;
use fairtrack::ften::FtenTensor;
use fairtrack::mot_io::{detection_line, gt_line};
use fairtrack::sim::{generate, generate_maps, Sequence};
use fairtrack::{GridSpec, Tensor2D};
use rayon::prelude::*;

use crate::io::{
    frame_file, load_config, write_atomic, write_manifest, write_tensor, RunInfo, SeqInfo,
};
use crate::SimArgs;

pub fn resolve_config(a: &SimArgs) -> Result<Config> {
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    let s = &mut cfg.sim;
    macro_rules! overlay {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag.clone() { s.$field = v; })*
        };
    }
    overlay!(
        seed => seed,
        frames => frames,
        targets => num_targets,
        motion => motion,
        image_w => image_w,
        image_h => image_h,
        box_noise => box_noise_std,
        emb_noise => emb_noise_std,
        emb_dim => emb_dim,
        dropout => det_dropout_prob,
        fp_rate => fp_rate
    );
    s.validate()?;
    Ok(cfg)
}

fn embedding_tensor(seq: &Sequence, frame: usize) -> Result<Option<FtenTensor>> {
    let dets = &seq.frames[frame].detections;
    if dets.is_empty() {
        return Ok(None);
    }
    let dim = seq.config.emb_dim;
    let data: Vec<f64> = dets
        .iter()
        .flat_map(|d| d.embedding.iter().copied())
        .collect();
    Ok(Some(FtenTensor::from(&Tensor2D::from_vec(
        dets.len(),
        dim,
        data,
    )?)))
}

pub fn run(a: &SimArgs, info: &RunInfo) -> Result<()> {
    let cfg = resolve_config(a)?;
    let seq = generate(&cfg.sim)?;
    let out = &a.out;

    let mut gt = String::new();
    let mut det = String::new();
    for f in &seq.frames {
        for (id, b) in &f.gt {
            gt.push_str(&gt_line(f.frame, *id, b));
            gt.push('\n');
        }
        for d in &f.detections {
            det.push_str(&detection_line(f.frame, &d.bbox, d.score));
            det.push('\n');
        }
    }
    let mut outputs: Vec<PathBuf> = vec![
        out.join("gt.txt"),
        out.join("det.txt"),
        out.join("seqinfo.ini"),
    ];
    write_atomic(&outputs[0], gt.as_bytes())?;
    write_atomic(&outputs[1], det.as_bytes())?;
    let info_file = SeqInfo {
        name: "sim".into(),
        frame_rate: cfg.sim.frame_rate,
        seq_length: cfg.sim.frames,
        im_width: cfg.sim.image_w,
        im_height: cfg.sim.image_h,
    };
    write_atomic(&outputs[2], info_file.render().as_bytes())?;

    let emb_dir = out.join("emb");
    let written: Vec<Option<PathBuf>> = (0..seq.frames.len())
        .into_par_iter()
        .map(|i| -> Result<Option<PathBuf>> {
            match embedding_tensor(&seq, i)? {
                Some(t) => {
                    let p = frame_file(&emb_dir, seq.frames[i].frame, "dets.ften");
                    write_tensor(&p, &t)?;
                    Ok(Some(p))
                }
                None => Ok(None),
            }
        })
        .collect::<Result<_>>()?;
    outputs.extend(written.into_iter().flatten());

    if a.maps {
        let grid = GridSpec::new(cfg.sim.image_w, cfg.sim.image_h, a.stride)?;
        let map_dir = out.join("maps");
        let written: Vec<Vec<PathBuf>> = seq
            .frames
            .par_iter()
            .map(|f| -> Result<Vec<PathBuf>> {
                let m = generate_maps(&seq, f.frame, &grid)?;
                let files = [
                    (
                        frame_file(&map_dir, f.frame, "heat.ften"),
                        FtenTensor::from(&m.heatmap),
                    ),
                    (
                        frame_file(&map_dir, f.frame, "off.ften"),
                        FtenTensor::from(&m.offsets),
                    ),
                    (
                        frame_file(&map_dir, f.frame, "size.ften"),
                        FtenTensor::from(&m.sizes),
                    ),
                    (
                        frame_file(&map_dir, f.frame, "emb.ften"),
                        FtenTensor::from(&m.embeddings),
                    ),
                ];
                files
                    .into_iter()
                    .map(|(p, t)| write_tensor(&p, &t).map(|_| p))
                    .collect()
            })
            .collect::<Result<_>>()?;
        outputs.extend(written.into_iter().flatten());
    }

    let manifest = info.manifest(
        Some(cfg.entries()),
        a.config.iter().cloned().collect(),
        outputs,
        Some(cfg.sim.seed),
    )?;
    write_manifest(&out.join("manifest.json"), &manifest)?;
    println!(
        "frames={} targets={} detections={} out={}",
        seq.frames.len(),
        cfg.sim.num_targets,
        seq.frames.iter().map(|f| f.detections.len()).sum::<usize>(),
        out.display()
    );
    Ok(())
}
