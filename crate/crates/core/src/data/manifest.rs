//! Plain-text dataset manifests.
//!
//! ```text
//! # comment
//! [palette x]
//! 0	#804080	road
//! [paired]
//! x/00000.png	y/00000.png
//! [unpaired_x]
//! x/00010.png
//! [unpaired_y]
//! y/00010.png
//! ```
//!
//! Fields are tab-separated; relative paths resolve against the manifest's
//! directory. The optional `[palette x|y]` section names the domain whose
//! images are label maps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{LabelPalette, PaletteEntry};
use crate::networks::Domain;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub paired: Vec<(PathBuf, PathBuf)>,
    pub unpaired_x: Vec<PathBuf>,
    pub unpaired_y: Vec<PathBuf>,
    pub palette: Option<LabelPalette>,
    /// Domain whose images are label maps; set whenever `palette` is.
    pub label_domain: Option<Domain>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleCounts {
    pub paired: usize,
    pub unpaired_x: usize,
    pub unpaired_y: usize,
}

impl SampleCounts {
    pub fn is_fully_paired(&self) -> bool {
        self.unpaired_x == 0 && self.unpaired_y == 0
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Palette,
    Paired,
    UnpairedX,
    UnpairedY,
}

fn parse_color(s: &str) -> Option<[u8; 3]> {
    let hex = s.strip_prefix('#')?;
    if hex.len() != 6 {
        return None;
    }
    let v = u32::from_str_radix(hex, 16).ok()?;
    Some([(v >> 16) as u8, (v >> 8) as u8, v as u8])
}

impl DatasetManifest {
    pub fn counts(&self) -> SampleCounts {
        SampleCounts {
            paired: self.paired.len(),
            unpaired_x: self.unpaired_x.len(),
            unpaired_y: self.unpaired_y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.paired.is_empty() && self.unpaired_x.is_empty() && self.unpaired_y.is_empty()
    }

    /// Parses manifest text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut m = DatasetManifest::default();
        let mut section = Section::None;
        let mut palette = Vec::new();
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::Validation(format!("manifest line {}: {what}: {line:?}", lineno + 1));
            if let Some(header) = line.trim().strip_prefix('[').and_then(|h| h.strip_suffix(']')) {
                section = match header.trim() {
                    "paired" => Section::Paired,
                    "unpaired_x" => Section::UnpairedX,
                    "unpaired_y" => Section::UnpairedY,
                    "palette x" => {
                        m.label_domain = Some(Domain::X);
                        Section::Palette
                    }
                    "palette y" => {
                        m.label_domain = Some(Domain::Y);
                        Section::Palette
                    }
                    _ => return Err(bad("unknown section")),
                };
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match section {
                Section::None => return Err(bad("entry before any section header")),
                Section::Palette => {
                    let [id, color, name] = fields[..] else {
                        return Err(bad("palette entries need id, #rrggbb color and name"));
                    };
                    palette.push(PaletteEntry {
                        class_id: id.trim().parse().map_err(|_| bad("bad class id"))?,
                        color: parse_color(color.trim()).ok_or_else(|| bad("bad color"))?,
                        name: name.trim().to_string(),
                    });
                }
                Section::Paired => {
                    let [x, y] = fields[..] else {
                        return Err(bad("paired entries need two tab-separated paths"));
                    };
                    m.paired.push((resolve(x), resolve(y)));
                }
                Section::UnpairedX | Section::UnpairedY => {
                    let [p] = fields[..] else {
                        return Err(bad("unpaired entries hold a single path"));
                    };
                    let list = if section == Section::UnpairedX {
                        &mut m.unpaired_x
                    } else {
                        &mut m.unpaired_y
                    };
                    list.push(resolve(p));
                }
            }
        }
        if m.label_domain.is_some() {
            m.palette = Some(LabelPalette::new(palette)?);
        }
        Ok(m)
    }

    /// Serializes with paths relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut s = String::from("# hybridgan dataset manifest\n");
        if let (Some(palette), Some(domain)) = (&self.palette, self.label_domain) {
            let d = if domain == Domain::X { "x" } else { "y" };
            let _ = writeln!(s, "[palette {d}]");
            for e in palette.entries() {
                let [r, g, b] = e.color;
                let _ = writeln!(s, "{}\t#{r:02x}{g:02x}{b:02x}\t{}", e.class_id, e.name);
            }
        }
        s.push_str("[paired]\n");
        for (x, y) in &self.paired {
            let _ = writeln!(s, "{}\t{}", rel(x), rel(y));
        }
        s.push_str("[unpaired_x]\n");
        for p in &self.unpaired_x {
            let _ = writeln!(s, "{}", rel(p));
        }
        s.push_str("[unpaired_y]\n");
        for p in &self.unpaired_y {
            let _ = writeln!(s, "{}", rel(p));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        std::fs::write(path, self.to_text(base)).map_err(|e| Error::io(path, e))
    }

    pub fn all_paths(&self) -> impl Iterator<Item = &PathBuf> {
        self.paired
            .iter()
            .flat_map(|(x, y)| [x, y])
            .chain(&self.unpaired_x)
            .chain(&self.unpaired_y)
    }

    /// Rejects empty manifests and entries that do not exist on disk.
    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Validation("manifest lists no samples".into()));
        }
        let dangling: Vec<PathBuf> = self.all_paths().filter(|p| !p.is_file()).cloned().collect();
        if !dangling.is_empty() {
            return Err(Error::DanglingEntries(dangling));
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let manifest = DatasetManifest::parse(&text, base)?;
    manifest.validate()?;
    Ok(manifest)
}
