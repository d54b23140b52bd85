//! Dataset directory layout and index.
//!
//! A dataset root holds one directory per pair and a manifest, by default
//! `manifest.tsv`. Every manifest line is
//!
//! ```text
//! pair_id<TAB>split<TAB>img1<TAB>img2<TAB>lcm1<TAB>lcm2<TAB>change
//! ```
//!
//! with paths relative to the root, `-` for an absent raster and trailing
//! absent columns optional. `split` is `train`, `test` or `auto`; `auto`
//! assigns the pair by a hash of its id, about half to each side. Blank
//! lines and lines starting with `#` are ignored. Land-cover maps use the
//! L1 nomenclature, change maps the binary one.

use std::fs;
use std::path::{Path, PathBuf};

use semcd_core::nomenclature::Nomenclature;
use semcd_core::raster::{Image, ImagePair, LabelMap};
use semcd_core::synth::{generate, SynthSpec};

use crate::error::{io, Error, Result};
use crate::raster_io::{read_image, read_labels, write_image, write_labels};

pub const MANIFEST: &str = "manifest.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    /// Deterministic assignment from the FNV-1a hash of the pair id.
    pub fn auto(pair_id: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in pair_id.as_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        if h & 1 == 0 {
            Split::Train
        } else {
            Split::Test
        }
    }
}

/// Raster roles in manifest column order.
pub const ROLES: [&str; 5] = ["img1", "img2", "lcm1", "lcm2", "change"];

/// Manifest row: split as written (`None` for `auto`) and one optional
/// relative path per role.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub pair_id: String,
    pub split: Option<Split>,
    pub paths: [Option<PathBuf>; 5],
}

pub fn parse_manifest(path: &Path, text: &str) -> Result<Vec<ManifestRow>> {
    let err = |line: usize, msg: String| Error::Manifest { path: path.to_path_buf(), line, msg };
    let mut rows: Vec<ManifestRow> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if !(4..=7).contains(&cols.len()) {
            return Err(err(i + 1, format!("expected 4 to 7 tab-separated columns, found {}", cols.len())));
        }
        let pair_id = cols[0].trim();
        if pair_id.is_empty() || pair_id.contains(['/', '\\']) {
            return Err(err(i + 1, format!("invalid pair id {pair_id:?}")));
        }
        if rows.iter().any(|r| r.pair_id == pair_id) {
            return Err(err(i + 1, format!("duplicate pair id {pair_id}")));
        }
        let split = match cols[1].trim() {
            "auto" => None,
            s => Some(Split::parse(s).ok_or_else(|| err(i + 1, format!("split must be train, test or auto, got {s:?}")))?),
        };
        let mut paths: [Option<PathBuf>; 5] = Default::default();
        for (k, slot) in paths.iter_mut().enumerate() {
            *slot = cols.get(k + 2).map(|c| c.trim()).filter(|c| *c != "-" && !c.is_empty()).map(PathBuf::from);
        }
        for role in &ROLES[..2] {
            let k = ROLES.iter().position(|r| r == role).unwrap();
            if paths[k].is_none() {
                return Err(err(i + 1, format!("pair {pair_id}: {role} is mandatory")));
            }
        }
        rows.push(ManifestRow { pair_id: pair_id.to_string(), split, paths });
    }
    Ok(rows)
}

pub fn render_manifest(rows: &[ManifestRow]) -> String {
    let mut s = String::from("# pair_id\tsplit\timg1\timg2\tlcm1\tlcm2\tchange\n");
    for r in rows {
        s.push_str(&r.pair_id);
        s.push('\t');
        s.push_str(r.split.map_or("auto", Split::name));
        for p in &r.paths {
            s.push('\t');
            match p {
                Some(p) => s.push_str(&p.to_string_lossy()),
                None => s.push('-'),
            }
        }
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    pub pair_id: String,
    pub split: Split,
    /// Absolute (root-joined) path per role.
    pub paths: [Option<PathBuf>; 5],
}

impl IndexEntry {
    pub fn has(&self, role: &str) -> bool {
        ROLES.iter().position(|r| *r == role).is_some_and(|k| self.paths[k].is_some())
    }
}

/// Validated pairs of a dataset, sorted by pair id.
#[derive(Clone, Debug)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub nomenclature: Nomenclature,
    pub entries: Vec<IndexEntry>,
}

fn pair_err(pair_id: &str, role: &str, e: impl std::fmt::Display) -> Error {
    Error::Pair { pair_id: pair_id.to_string(), role: role.to_string(), msg: e.to_string() }
}

impl DatasetIndex {
    /// Reads the manifest and decodes every raster it names, so that
    /// missing files, shape mismatches and unknown codes surface here.
    pub fn build(root: &Path, manifest: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest).map_err(io(manifest))?;
        let rows = parse_manifest(manifest, &text)?;
        let mut entries: Vec<IndexEntry> = rows
            .into_iter()
            .map(|r| IndexEntry {
                split: r.split.unwrap_or_else(|| Split::auto(&r.pair_id)),
                paths: r.paths.map(|p| p.map(|p| root.join(p))),
                pair_id: r.pair_id,
            })
            .collect();
        entries.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        let index = Self { root: root.to_path_buf(), nomenclature: Nomenclature::l1(), entries };
        for e in &index.entries {
            index.load(e)?;
        }
        Ok(index)
    }

    pub fn entries(&self, split: Option<Split>) -> impl Iterator<Item = &IndexEntry> {
        self.entries.iter().filter(move |e| split.is_none_or(|s| e.split == s))
    }

    pub fn load(&self, e: &IndexEntry) -> Result<ImagePair> {
        let id = &e.pair_id;
        let image = |k: usize| -> Result<Image> {
            let p = e.paths[k].as_ref().ok_or_else(|| pair_err(id, ROLES[k], "missing"))?;
            read_image(p).map_err(|err| pair_err(id, ROLES[k], err))
        };
        let (a, b) = (image(0)?, image(1)?);
        if a.shape() != b.shape() || a.channels() != b.channels() {
            return Err(pair_err(
                id,
                "img2",
                format!("{}x{}x{} differs from img1 {}x{}x{}", b.height(), b.width(), b.channels(), a.height(), a.width(), a.channels()),
            ));
        }
        let binary = Nomenclature::binary_change();
        let labels = |k: usize, nom: &Nomenclature| -> Result<Option<LabelMap>> {
            let Some(p) = &e.paths[k] else { return Ok(None) };
            let m = read_labels(p, nom).map_err(|err| pair_err(id, ROLES[k], err))?;
            if m.shape() != a.shape() {
                return Err(pair_err(
                    id,
                    ROLES[k],
                    format!("{}x{} differs from img1 {}x{}", m.height(), m.width(), a.height(), a.width()),
                ));
            }
            Ok(Some(m))
        };
        let (l1, l2, ch) = (labels(2, &self.nomenclature)?, labels(3, &self.nomenclature)?, labels(4, &binary)?);
        Ok(ImagePair::new(id.clone(), a, b, l1, l2, ch)?)
    }

    pub fn load_split(&self, split: Option<Split>) -> Result<Vec<ImagePair>> {
        self.entries(split).map(|e| self.load(e)).collect()
    }
}

/// Resolves the manifest: an explicit path as given, else `root/manifest.tsv`.
pub fn manifest_path(root: &Path, manifest: Option<&Path>) -> PathBuf {
    manifest.map_or_else(|| root.join(MANIFEST), Path::to_path_buf)
}

/// Writes every pair to `root/<pair_id>/{img1,img2,lcm1,lcm2,change}.png`
/// and the manifest. With `n_test`, the last `n_test` pairs are marked
/// test and the rest train; otherwise every pair is `auto`.
pub fn write_dataset(root: &Path, pairs: &[ImagePair], n_test: Option<usize>) -> Result<Vec<ManifestRow>> {
    fs::create_dir_all(root).map_err(io(root))?;
    let mut rows = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let dir = root.join(&p.pair_id);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let mut paths: [Option<PathBuf>; 5] = Default::default();
        let rel = |role: &str| PathBuf::from(&p.pair_id).join(format!("{role}.png"));
        write_image(&root.join(rel("img1")), &p.image1)?;
        write_image(&root.join(rel("img2")), &p.image2)?;
        paths[0] = Some(rel("img1"));
        paths[1] = Some(rel("img2"));
        for (k, m) in [(2, &p.lcm1), (3, &p.lcm2), (4, &p.change)] {
            if let Some(m) = m {
                write_labels(&root.join(rel(ROLES[k])), m)?;
                paths[k] = Some(rel(ROLES[k]));
            }
        }
        let split = n_test.map(|n| if i + n >= pairs.len() { Split::Test } else { Split::Train });
        rows.push(ManifestRow { pair_id: p.pair_id.clone(), split, paths });
    }
    let m = root.join(MANIFEST);
    fs::write(&m, render_manifest(&rows)).map_err(io(&m))?;
    Ok(rows)
}

/// Generates a synthetic L1 dataset on disk.
pub fn write_synth(root: &Path, spec: &SynthSpec, n_test: Option<usize>) -> Result<Vec<ManifestRow>> {
    let pairs = generate(spec, &Nomenclature::l1())?;
    write_dataset(root, &pairs, n_test)
}
