//! Point cloud scenes and the whitespace-separated text format.
//!
//! One point per line: `x y z r g b [label] [instance]`. Colors are either
//! 0–255 integers or 0–1 reals; the scale is detected from the largest color
//! value in the file. Lines starting with `#` are comments.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{check_len, Error, Result};

/// Class id of a point.
pub type Label = u32;

/// A labeled (or unlabeled) point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    positions: Vec<[f64; 3]>,
    colors: Vec<[f64; 3]>,
    labels: Option<Vec<Label>>,
    instance_ids: Option<Vec<u32>>,
    class_count: usize,
}

impl Scene {
    pub fn new(
        positions: Vec<[f64; 3]>,
        colors: Vec<[f64; 3]>,
        labels: Option<Vec<Label>>,
        instance_ids: Option<Vec<u32>>,
        class_count: usize,
    ) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::EmptyScene);
        }
        if class_count < 2 {
            return Err(Error::invalid("class_count", "at least 2 classes are required"));
        }
        check_len(n, colors.len())?;
        if let Some(labels) = &labels {
            check_len(n, labels.len())?;
            check_labels(labels, class_count)?;
        }
        if let Some(ids) = &instance_ids {
            check_len(n, ids.len())?;
        }
        for (i, c) in colors.iter().enumerate() {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid("colors", format!("point {i} has a component outside [0, 1]")));
            }
        }
        for (i, p) in positions.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("positions", format!("point {i} is not finite")));
            }
        }
        Ok(Self {
            positions,
            colors,
            labels,
            instance_ids,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    /// Labels, or [`Error::MissingLabels`].
    pub fn require_labels(&self) -> Result<&[Label]> {
        self.labels().ok_or(Error::MissingLabels)
    }

    pub fn instance_ids(&self) -> Option<&[u32]> {
        self.instance_ids.as_deref()
    }

    pub fn require_instances(&self) -> Result<&[u32]> {
        self.instance_ids().ok_or(Error::MissingInstances)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Copy of the scene with its labels replaced.
    pub fn with_labels(&self, labels: Vec<Label>) -> Result<Self> {
        check_len(self.len(), labels.len())?;
        check_labels(&labels, self.class_count)?;
        Ok(Self {
            labels: Some(labels),
            ..self.clone()
        })
    }

    /// Axis-aligned bounds `(min, max)` of the positions.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    /// Parses the text format. When `class_count` is `None` it is inferred
    /// as `max(label) + 1` (at least 2).
    pub fn read_text<R: Read>(reader: R, class_count: Option<usize>) -> Result<Self> {
        let mut positions = Vec::new();
        let mut raw_colors = Vec::new();
        let mut labels = Vec::new();
        let mut instances = Vec::new();
        let mut columns = None;
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse_err = |message: String| Error::Parse {
                line: lineno + 1,
                message,
            };
            if !(6..=8).contains(&fields.len()) {
                return Err(parse_err(format!("expected 6 to 8 columns, found {}", fields.len())));
            }
            match columns {
                None => columns = Some(fields.len()),
                Some(c) if c != fields.len() => {
                    return Err(parse_err(format!("expected {c} columns, found {}", fields.len())))
                }
                _ => {}
            }
            let mut nums = [0.0f64; 6];
            for (slot, field) in nums.iter_mut().zip(&fields) {
                *slot = field
                    .parse()
                    .map_err(|_| parse_err(format!("`{field}` is not a number")))?;
            }
            positions.push([nums[0], nums[1], nums[2]]);
            raw_colors.push([nums[3], nums[4], nums[5]]);
            if fields.len() >= 7 {
                labels.push(parse_id(fields[6]).ok_or_else(|| parse_err(format!("`{}` is not a label", fields[6])))?);
            }
            if fields.len() == 8 {
                instances.push(parse_id(fields[7]).ok_or_else(|| parse_err(format!("`{}` is not an instance id", fields[7])))?);
            }
        }
        if positions.is_empty() {
            return Err(Error::EmptyScene);
        }
        let max_color = raw_colors.iter().flatten().cloned().fold(0.0f64, f64::max);
        let scale = if max_color > 1.0 { 255.0 } else { 1.0 };
        let colors = raw_colors
            .into_iter()
            .map(|c| [c[0] / scale, c[1] / scale, c[2] / scale])
            .collect();
        let class_count = class_count.unwrap_or_else(|| {
            labels.iter().max().map_or(2, |&m| (m as usize + 1).max(2))
        });
        Scene::new(
            positions,
            colors,
            (!labels.is_empty()).then_some(labels),
            (!instances.is_empty()).then_some(instances),
            class_count,
        )
    }

    pub fn read_path(path: impl AsRef<Path>, class_count: Option<usize>) -> Result<Self> {
        Self::read_text(File::open(path)?, class_count)
    }

    /// Writes the text format with colors as 0–1 reals. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn write_text<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = BufWriter::new(writer);
        for i in 0..self.len() {
            let p = self.positions[i];
            let c = self.colors[i];
            write!(out, "{} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2])?;
            if let Some(labels) = &self.labels {
                write!(out, " {}", labels[i])?;
                if let Some(ids) = &self.instance_ids {
                    write!(out, " {}", ids[i])?;
                }
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_text(File::create(path)?)
    }
}

// Ids may be written as integral floats by other tools ("3.0").
fn parse_id(field: &str) -> Option<u32> {
    if let Ok(v) = field.parse::<u32>() {
        return Some(v);
    }
    let v: f64 = field.parse().ok()?;
    (v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX)).then_some(v as u32)
}

pub(crate) fn check_labels(labels: &[Label], class_count: usize) -> Result<()> {
    match labels.iter().find(|&&l| l as usize >= class_count) {
        Some(&label) => Err(Error::LabelOutOfRange { label, class_count }),
        None => Ok(()),
    }
}
