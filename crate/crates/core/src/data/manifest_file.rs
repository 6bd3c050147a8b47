//! Tab-separated manifest files.
//!
//! ```text
//! # euisnet manifest v1
//! # height=256 width=256 folds=5
//! id	provenance	origin	split	fold	image	masks
//! benign (1)	original	-	train	3	data/benign (1).png	data/benign (1)_mask.png
//! benign (1)#hflip	hflip	benign (1)	train	3	-	-
//! ```
//!
//! Paths below the manifest's directory are stored relative to it, so a
//! prepared directory can be moved as a whole. Multiple masks are joined
//! with `|`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Component, Path, PathBuf};

use crate::error::{Error, Result};

use super::io::{load_pair, PairSpec};
use super::manifest::{DatasetManifest, Entry, Split};
use super::sample::Provenance;

pub const MANIFEST_MAGIC: &str = "# euisnet manifest v1";
const COLUMNS: &str = "id\tprovenance\torigin\tsplit\tfold\timage\tmasks";

fn path_text(base: &Path, p: &Path) -> String {
    let rel = p.strip_prefix(base).unwrap_or(p);
    let mut parts: Vec<String> = Vec::new();
    for c in rel.components() {
        match c {
            Component::RootDir => parts.push(String::new()),
            Component::Normal(s) => parts.push(s.to_string_lossy().into_owned()),
            other => parts.push(other.as_os_str().to_string_lossy().into_owned()),
        }
    }
    if parts.len() == 1 && parts[0].is_empty() {
        return "/".into();
    }
    parts.join("/")
}

fn check_field(what: &str, s: &str) -> Result<()> {
    if s.is_empty() || s == "-" || s.contains(['\t', '\n', '\r', '|']) {
        return Err(Error::Dataset(format!("{what} '{s}' cannot be stored in a manifest")));
    }
    Ok(())
}

/// Renders `m` as manifest text. Every original needs a source path.
pub fn manifest_to_string(m: &DatasetManifest, base: &Path) -> Result<String> {
    let (h, w) = m.image_size()?;
    let mut out = String::new();
    writeln!(out, "{MANIFEST_MAGIC}").unwrap();
    let folds = m.num_folds.map_or("-".to_string(), |k| k.to_string());
    writeln!(out, "# height={h} width={w} folds={folds}").unwrap();
    writeln!(out, "{COLUMNS}").unwrap();
    for (i, e) in m.entries.iter().enumerate() {
        let id = m.entry_id(i);
        let original = &m.originals[e.origin];
        check_field("sample id", &original.id)?;
        let split = m.splits[e.origin].map_or("-", |s| s.as_str());
        let fold = m.folds[e.origin].map_or("-".to_string(), |f| f.to_string());
        let (origin, image, masks) = match e.provenance {
            Provenance::Original => {
                let src = original
                    .source
                    .as_ref()
                    .ok_or_else(|| Error::Dataset(format!("sample '{id}' has no source file")))?;
                let image = path_text(base, &src.image);
                let masks: Vec<String> = src.masks.iter().map(|p| path_text(base, p)).collect();
                check_field("image path", &image)?;
                for p in &masks {
                    check_field("mask path", p)?;
                }
                ("-".to_string(), image, masks.join("|"))
            }
            Provenance::Augmented(_) => (original.id.clone(), "-".into(), "-".into()),
        };
        writeln!(
            out,
            "{id}\t{}\t{origin}\t{split}\t{fold}\t{image}\t{masks}",
            e.provenance
        )
        .unwrap();
    }
    Ok(out)
}

/// Writes `m` to `path`.
pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let text = manifest_to_string(m, base)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Row {
    line: usize,
    id: String,
    provenance: Provenance,
    origin: Option<String>,
    split: Option<Split>,
    fold: Option<usize>,
    image: Option<String>,
    masks: Vec<String>,
}

fn opt(s: &str) -> Option<&str> {
    (s != "-").then_some(s)
}

fn parse_header(line: &str) -> Result<(usize, usize, Option<usize>)> {
    let mut h = None;
    let mut w = None;
    let mut folds = None;
    for kv in line.trim_start_matches('#').split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Dataset(format!("bad manifest header field '{kv}'")))?;
        let num = || {
            v.parse::<usize>()
                .map_err(|_| Error::Dataset(format!("bad manifest value {kv}")))
        };
        match k {
            "height" => h = Some(num()?),
            "width" => w = Some(num()?),
            "folds" => folds = opt(v).map(|_| num()).transpose()?,
            _ => return Err(Error::Dataset(format!("unknown manifest header field '{k}'"))),
        }
    }
    match (h, w) {
        (Some(h), Some(w)) => Ok((h, w, folds)),
        _ => Err(Error::Dataset("manifest header lacks height/width".into())),
    }
}

fn parse_row(line_no: usize, line: &str) -> Result<Row> {
    let f: Vec<&str> = line.split('\t').collect();
    let err = |msg: String| Error::Dataset(format!("manifest line {line_no}: {msg}"));
    if f.len() != 7 {
        return Err(err(format!("expected 7 columns, found {}", f.len())));
    }
    Ok(Row {
        line: line_no,
        id: f[0].to_string(),
        provenance: f[1].parse().map_err(|e: Error| err(e.to_string()))?,
        origin: opt(f[2]).map(str::to_string),
        split: opt(f[3])
            .map(str::parse)
            .transpose()
            .map_err(|e: Error| err(e.to_string()))?,
        fold: opt(f[4])
            .map(|v| v.parse::<usize>().map_err(|_| err(format!("bad fold '{v}'"))))
            .transpose()?,
        image: opt(f[5]).map(str::to_string),
        masks: opt(f[6])
            .map(|m| m.split('|').map(str::to_string).collect())
            .unwrap_or_default(),
    })
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads a manifest, loading (and resizing) every original it lists.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == MANIFEST_MAGIC => {}
        _ => return Err(Error::Dataset(format!("{} is not a manifest file", path.display()))),
    }
    let (h, w, num_folds) = match lines.next() {
        Some((_, l)) => parse_header(l)?,
        None => return Err(Error::Dataset("manifest is truncated".into())),
    };
    match lines.next() {
        Some((_, l)) if l == COLUMNS => {}
        _ => return Err(Error::Dataset("manifest column header is missing".into())),
    }
    let rows = lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_row(i + 1, l))
        .collect::<Result<Vec<_>>>()?;

    let mut m = DatasetManifest::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    for r in rows.iter().filter(|r| r.provenance.is_original()) {
        let image = r
            .image
            .as_deref()
            .ok_or_else(|| Error::Dataset(format!("manifest line {}: original without image", r.line)))?;
        if r.masks.is_empty() {
            return Err(Error::MissingMasks(vec![image.to_string()]));
        }
        let pair = PairSpec {
            id: r.id.clone(),
            image: resolve(base, image),
            masks: r.masks.iter().map(|p| resolve(base, p)).collect(),
        };
        if index.insert(r.id.clone(), m.originals.len()).is_some() {
            return Err(Error::Dataset(format!(
                "manifest line {}: duplicate id '{}'",
                r.line, r.id
            )));
        }
        if let (Some(f), Some(k)) = (r.fold, num_folds) {
            if f >= k {
                return Err(Error::Dataset(format!(
                    "manifest line {}: fold {f} out of range",
                    r.line
                )));
            }
        }
        m.originals.push(load_pair(&pair, Some((h, w)))?);
        m.splits.push(r.split);
        m.folds.push(r.fold);
    }
    for r in &rows {
        let origin = match r.provenance {
            Provenance::Original => index[&r.id],
            Provenance::Augmented(_) => {
                let name = r
                    .origin
                    .as_deref()
                    .ok_or_else(|| Error::Dataset(format!("manifest line {}: augmented row without origin", r.line)))?;
                let o = *index
                    .get(name)
                    .ok_or_else(|| Error::Dataset(format!("manifest line {}: unknown origin '{name}'", r.line)))?;
                if r.split != m.splits[o] || r.fold != m.folds[o] {
                    return Err(Error::Dataset(format!(
                        "manifest line {}: augmented sample does not share its origin's assignment",
                        r.line
                    )));
                }
                o
            }
        };
        m.entries.push(Entry {
            origin,
            provenance: r.provenance,
        });
    }
    m.num_folds = num_folds;
    if m.originals.is_empty() {
        return Err(Error::Dataset(format!("{} lists no samples", path.display())));
    }
    Ok(m)
}
