//! Atomic writes, run manifests and small text formats shared by the subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use fairtrack::config::Config;
use fairtrack::ften::{self, FtenTensor};
use fairtrack::mot_io::{parse_mot, MotFrames, MotKind};
use serde::{Deserialize, Serialize};

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path
        .file_name()
        .with_context(|| format!("{} has no file name", path.display()))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_tensor(path: &Path, t: &FtenTensor) -> Result<()> {
    write_atomic(path, &ften::to_bytes(t))
}

pub fn read_tensor(path: &Path) -> Result<FtenTensor> {
    ften::read_tensor(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_mot(path: &Path, kind: MotKind) -> Result<MotFrames> {
    parse_mot(path, kind).with_context(|| format!("reading {}", path.display()))
}

pub fn load_config(path: &Path) -> Result<Config> {
    fairtrack::config::load_config(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// `{frame:06}.{suffix}` inside `dir`.
pub fn frame_file(dir: &Path, frame: u64, suffix: &str) -> PathBuf {
    dir.join(format!("{frame:06}.{suffix}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Command line after the program name.
    pub args: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    pub config: Option<BTreeMap<String, String>>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub version: String,
    pub duration_secs: f64,
}

/// What a subcommand records about itself.
pub struct RunInfo {
    pub subcommand: &'static str,
    pub args: Vec<String>,
    pub started: Instant,
}

impl RunInfo {
    pub fn manifest(
        &self,
        config: Option<BTreeMap<String, String>>,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        seed: Option<u64>,
    ) -> Result<RunManifest> {
        Ok(RunManifest {
            subcommand: self.subcommand.to_string(),
            args: self.args.clone(),
            cwd: std::env::current_dir().context("reading the working directory")?,
            config,
            inputs,
            outputs,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        })
    }
}

pub fn write_manifest(path: &Path, m: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(m)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// `<file>.manifest.json`
pub fn sidecar_manifest(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// The `[Sequence]` keys of a `seqinfo.ini`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqInfo {
    pub name: String,
    pub frame_rate: u32,
    pub seq_length: u64,
    pub im_width: usize,
    pub im_height: usize,
}

impl SeqInfo {
    pub fn render(&self) -> String {
        format!(
            "[Sequence]\nname={}\nframeRate={}\nseqLength={}\nimWidth={}\nimHeight={}\n",
            self.name, self.frame_rate, self.seq_length, self.im_width, self.im_height
        )
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let kv: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let get = |k: &str| -> Result<&str> {
            kv.get(k)
                .copied()
                .ok_or_else(|| fairtrack::Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("missing {k}"),
                })
                .map_err(Into::into)
        };
        let num = |k: &str| -> Result<u64> {
            let v = get(k)?;
            v.parse().map_err(|_| {
                fairtrack::Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("{k}={v} is not an integer"),
                }
                .into()
            })
        };
        Ok(SeqInfo {
            name: kv.get("name").unwrap_or(&"").to_string(),
            frame_rate: num("frameRate")? as u32,
            seq_length: num("seqLength")?,
            im_width: num("imWidth")? as usize,
            im_height: num("imHeight")? as usize,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }
}

/// Reads `dir/seqinfo.ini` when present.
pub fn find_seqinfo(dir: &Path) -> Result<Option<SeqInfo>> {
    let p = dir.join("seqinfo.ini");
    if p.is_file() {
        SeqInfo::load(&p).map(Some)
    } else {
        Ok(None)
    }
}

/// Exit status for an error: 2 for I/O and malformed files, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<fairtrack::Error>() {
            return match e {
                fairtrack::Error::Io(_)
                | fairtrack::Error::Format { .. }
                | fairtrack::Error::Parse { .. } => 2,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seqinfo_round_trip() {
        let s = SeqInfo {
            name: "sim".into(),
            frame_rate: 30,
            seq_length: 100,
            im_width: 1088,
            im_height: 608,
        };
        assert_eq!(SeqInfo::parse(&s.render(), Path::new("x")).unwrap(), s);
        assert!(SeqInfo::parse("[Sequence]\nname=a\n", Path::new("x")).is_err());
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(
            sidecar_manifest(Path::new("a/r.txt")),
            PathBuf::from("a/r.txt.manifest.json")
        );
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"abc").unwrap();
        write_atomic(&p, b"xyz").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"xyz");
        let names: Vec<_> = fs::read_dir(dir.path().join("sub")).unwrap().collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn exit_codes() {
        let io: anyhow::Error = std::io::Error::new(std::io::ErrorKind::NotFound, "x").into();
        assert_eq!(exit_code(&io.context("reading")), 2);
        let cfg: anyhow::Error = fairtrack::Error::Config {
            key: "k".into(),
            message: "m".into(),
        }
        .into();
        assert_eq!(exit_code(&cfg), 1);
        assert_eq!(exit_code(&anyhow::anyhow!("bad flag")), 1);
    }
}
