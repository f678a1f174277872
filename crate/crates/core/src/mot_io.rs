//! MOTChallenge text files.
//!
//! Ground truth lines are `frame,id,left,top,width,height,flag,class,visibility`;
//! detection and result lines are `frame,id,left,top,width,height,conf,x,y,z`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::FrameBoxes;
use crate::tensor::BBox;

/// Pedestrian class in ground-truth files.
pub const PEDESTRIAN_CLASS: i64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotKind {
    Gt,
    Det,
    Result,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRecord {
    /// 1-based.
    pub frame: u64,
    /// `-1` for raw detections.
    pub id: i64,
    pub bb_left: f64,
    pub bb_top: f64,
    pub bb_width: f64,
    pub bb_height: f64,
    pub conf: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Ground-truth class column when present.
    pub class: Option<i64>,
    /// Ground-truth visibility column when present.
    pub visibility: Option<f64>,
}

impl MotRecord {
    pub fn bbox(&self) -> Result<BBox<f64>> {
        BBox::from_tlwh(self.bb_left, self.bb_top, self.bb_width, self.bb_height)
    }
}

pub type MotFrames = BTreeMap<u64, Vec<MotRecord>>;

fn parse_integral(s: &str) -> Option<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = s.parse().ok()?;
    (f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

fn parse_line(line: &str, kind: MotKind) -> std::result::Result<MotRecord, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 9 && fields.len() != 10 {
        return Err(format!("expected 9 or 10 fields, found {}", fields.len()));
    }
    let num = |i: usize, name: &str| -> std::result::Result<f64, String> {
        let v: f64 = fields[i]
            .parse()
            .map_err(|_| format!("{name} '{}' is not a number", fields[i]))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{name} is not finite"))
        }
    };
    let frame = parse_integral(fields[0])
        .ok_or_else(|| format!("frame '{}' is not an integer", fields[0]))?;
    if frame < 1 {
        return Err(format!("frame {frame} must be at least 1"));
    }
    let id =
        parse_integral(fields[1]).ok_or_else(|| format!("id '{}' is not an integer", fields[1]))?;
    let (bb_width, bb_height) = (num(4, "width")?, num(5, "height")?);
    if bb_width < 0.0 || bb_height < 0.0 {
        return Err("negative box size".into());
    }
    let mut rec = MotRecord {
        frame: frame as u64,
        id,
        bb_left: num(2, "left")?,
        bb_top: num(3, "top")?,
        bb_width,
        bb_height,
        conf: num(6, "conf")?,
        x: -1.0,
        y: -1.0,
        z: -1.0,
        class: None,
        visibility: None,
    };
    if kind == MotKind::Gt && fields.len() == 9 {
        rec.class = Some(
            parse_integral(fields[7])
                .ok_or_else(|| format!("class '{}' is not an integer", fields[7]))?,
        );
        rec.visibility = Some(num(8, "visibility")?);
    } else {
        rec.x = num(7, "x")?;
        rec.y = num(8, "y")?;
        if fields.len() == 10 {
            rec.z = num(9, "z")?;
        }
    }
    Ok(rec)
}

/// Parses file contents; `path` is only used in error messages.
///
/// Records are grouped by frame in input order. Ground truth keeps only entries with a
/// non-zero flag and, when the class column is present, the pedestrian class.
pub fn parse_mot_str(text: &str, kind: MotKind, path: &Path) -> Result<MotFrames> {
    let mut out = MotFrames::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let rec = parse_line(line, kind).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        if kind == MotKind::Gt
            && (rec.conf == 0.0 || rec.class.is_some_and(|c| c != PEDESTRIAN_CLASS))
        {
            continue;
        }
        out.entry(rec.frame).or_default().push(rec);
    }
    Ok(out)
}

pub fn parse_mot(path: &Path, kind: MotKind) -> Result<MotFrames> {
    let text = std::fs::read_to_string(path)?;
    parse_mot_str(&text, kind, path)
}

/// Per-frame `(id, box)` lists for evaluation.
pub fn to_frame_boxes(frames: &MotFrames) -> Result<FrameBoxes<f64>> {
    frames
        .iter()
        .map(|(f, recs)| {
            Ok((
                *f,
                recs.iter()
                    .map(|r| Ok((r.id, r.bbox()?)))
                    .collect::<Result<Vec<_>>>()?,
            ))
        })
        .collect()
}

/// Two decimals, never `-0.00`.
pub fn fmt2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn push_box(out: &mut String, b: &BBox<f64>) {
    let [l, t, w, h] = b.to_tlwh();
    let _ = write!(out, "{},{},{},{}", fmt2(l), fmt2(t), fmt2(w), fmt2(h));
}

/// `frame,id,left,top,width,height,conf,-1,-1,-1`
pub fn result_line(frame: u64, id: i64, b: &BBox<f64>, conf: f64) -> String {
    let mut s = format!("{frame},{id},");
    push_box(&mut s, b);
    let _ = write!(s, ",{},-1,-1,-1", fmt2(conf));
    s
}

/// `frame,-1,left,top,width,height,conf,-1,-1,-1`
pub fn detection_line(frame: u64, b: &BBox<f64>, conf: f64) -> String {
    result_line(frame, -1, b, conf)
}

/// `frame,id,left,top,width,height,1,1,1`
pub fn gt_line(frame: u64, id: i64, b: &BBox<f64>) -> String {
    let mut s = format!("{frame},{id},");
    push_box(&mut s, b);
    s.push_str(",1,1,1");
    s
}

/// Serializes records in frame order using the layout of `kind`.
pub fn serialize_mot(frames: &MotFrames, kind: MotKind) -> Result<String> {
    let mut out = String::new();
    for recs in frames.values() {
        for r in recs {
            let b = r.bbox()?;
            let line = match kind {
                MotKind::Gt => {
                    let mut s = format!("{},{},", r.frame, r.id);
                    push_box(&mut s, &b);
                    let _ = write!(
                        s,
                        ",{},{},{}",
                        fmt2(r.conf),
                        r.class.unwrap_or(PEDESTRIAN_CLASS),
                        fmt2(r.visibility.unwrap_or(1.0))
                    );
                    s
                }
                MotKind::Det | MotKind::Result => result_line(r.frame, r.id, &b, r.conf),
            };
            out.push_str(&line);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Path used in parse errors for in-memory text.
pub fn memory_path() -> PathBuf {
    PathBuf::from("<memory>")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_mapping() {
        let m = parse_mot_str(
            "1,1,100,40,40,80,1,-1,-1,-1\n",
            MotKind::Result,
            &memory_path(),
        )
        .unwrap();
        let r = m[&1][0];
        assert_eq!((r.frame, r.id), (1, 1));
        assert_eq!(
            r.bbox().unwrap(),
            BBox::new(100.0, 40.0, 140.0, 120.0).unwrap()
        );
    }

    #[test]
    fn empty_file() {
        assert!(parse_mot_str("", MotKind::Gt, &memory_path())
            .unwrap()
            .is_empty());
        assert!(parse_mot_str("\n  \n", MotKind::Det, &memory_path())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = "1,1,0,0,10,10,1,-1,-1,-1\n1,2,0,0,ten,10,1,-1,-1,-1\n";
        match parse_mot_str(text, MotKind::Result, Path::new("r.txt")) {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(path, Path::new("r.txt"));
            }
            other => panic!("{other:?}"),
        }
        for bad in [
            "1,2,3",
            "0,1,0,0,1,1,1,-1,-1,-1",
            "1,1,0,0,-1,1,1,-1,-1,-1",
            "1.5,1,0,0,1,1,1,-1,-1,-1",
        ] {
            assert!(
                parse_mot_str(bad, MotKind::Result, &memory_path()).is_err(),
                "{bad}"
            );
        }
    }

    #[test]
    fn gt_filters_class_and_flag() {
        let text = "1,1,0,0,10,10,1,1,1.0\n1,2,0,0,10,10,0,1,1.0\n1,3,0,0,10,10,1,7,0.5\n2,4,0,0,10,10,1,1,0.2\n";
        let m = parse_mot_str(text, MotKind::Gt, &memory_path()).unwrap();
        assert_eq!(m[&1].iter().map(|r| r.id).collect::<Vec<_>>(), vec![1]);
        assert_eq!(m[&2][0].visibility, Some(0.2));
    }

    #[test]
    fn frames_regrouped_in_input_order() {
        let text = "2,5,0,0,1,1,1,-1,-1,-1\n1,3,0,0,1,1,1,-1,-1,-1\n2,4,0,0,1,1,1,-1,-1,-1\n";
        let m = parse_mot_str(text, MotKind::Result, &memory_path()).unwrap();
        assert_eq!(m.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(m[&2].iter().map(|r| r.id).collect::<Vec<_>>(), vec![5, 4]);
    }

    #[test]
    fn result_line_format() {
        let b = BBox::new(100.0, 40.0, 140.5, 120.134).unwrap();
        assert_eq!(
            result_line(3, 7, &b, 0.9),
            "3,7,100.00,40.00,40.50,80.13,0.90,-1,-1,-1"
        );
        assert_eq!(fmt2(-0.001), "0.00");
        assert_eq!(gt_line(1, 2, &b), "1,2,100.00,40.00,40.50,80.13,1,1,1");
    }

    #[test]
    fn serialize_round_trip() {
        let text = "1,1,100.00,40.00,40.00,80.00,0.95,-1,-1,-1\n2,1,101.25,41.00,40.00,80.00,0.90,-1,-1,-1\n";
        let m = parse_mot_str(text, MotKind::Result, &memory_path()).unwrap();
        assert_eq!(serialize_mot(&m, MotKind::Result).unwrap(), text);
        let gt = "1,1,1.00,2.00,3.00,4.00,1.00,1,0.50\n";
        let m = parse_mot_str(gt, MotKind::Gt, &memory_path()).unwrap();
        assert_eq!(serialize_mot(&m, MotKind::Gt).unwrap(), gt);
    }
}
