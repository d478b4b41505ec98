//! Sparse point correspondences between the reference image I0 and the
//! candidate image I1: a plain-text file format and a built-in fallback
//! matcher.

mod matcher;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::BufRead;

pub use matcher::{detect_and_match, harris_corners, MatcherParams};

use crate::error::{Result, StitchError};
use crate::geometry::{Homography, Point};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    /// Position in the reference image.
    pub p0: Point,
    /// Position in the candidate image.
    pub p1: Point,
    /// Match confidence, 1.0 when not supplied.
    pub score: f64,
}

impl Correspondence {
    pub fn new(p0: Point, p1: Point) -> Self {
        Correspondence { p0, p1, score: 1.0 }
    }

    fn key(&self) -> [u64; 4] {
        // +0.0 so that -0.0 and 0.0 compare equal.
        [self.p0.x, self.p0.y, self.p1.x, self.p1.y].map(|v| (v + 0.0).to_bits())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    File,
    BuiltinMatcher,
    Synthetic,
}

/// Ordered correspondence list. Indices are stable for the lifetime of a
/// pipeline run; inlier sets refer to them.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceSet {
    items: Vec<Correspondence>,
    source: Source,
    duplicates_dropped: usize,
}

impl CorrespondenceSet {
    /// Builds a set, dropping exact duplicate point pairs (first occurrence wins).
    pub fn new(items: impl IntoIterator<Item = Correspondence>, source: Source) -> Self {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        let mut dropped = 0;
        for c in items {
            if seen.insert(c.key()) {
                kept.push(c);
            } else {
                dropped += 1;
            }
        }
        CorrespondenceSet {
            items: kept,
            source,
            duplicates_dropped: dropped,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Correspondence {
        &self.items[i]
    }

    pub fn as_slice(&self) -> &[Correspondence] {
        &self.items
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Correspondence> {
        self.items.iter()
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    /// Checks that every point lies inside its image (`0 <= x < w`, `0 <= y < h`).
    pub fn validate_bounds(&self, dims0: (usize, usize), dims1: (usize, usize)) -> Result<()> {
        let inside = |p: Point, (w, h): (usize, usize)| {
            p.x >= 0.0 && p.y >= 0.0 && p.x < w as f64 && p.y < h as f64
        };
        for (index, c) in self.items.iter().enumerate() {
            if !inside(c.p0, dims0) {
                return Err(StitchError::Validation {
                    index,
                    reason: format!(
                        "reference point ({}, {}) outside {}x{}",
                        c.p0.x, c.p0.y, dims0.0, dims0.1
                    ),
                });
            }
            if !inside(c.p1, dims1) {
                return Err(StitchError::Validation {
                    index,
                    reason: format!(
                        "candidate point ({}, {}) outside {}x{}",
                        c.p1.x, c.p1.y, dims1.0, dims1.1
                    ),
                });
            }
        }
        Ok(())
    }

    /// Canonical text form, one `x0 y0 x1 y1 score` line per match.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# x0 y0 x1 y1 score\n");
        for c in &self.items {
            let _ = writeln!(s, "{} {} {} {} {}", c.p0.x, c.p0.y, c.p1.x, c.p1.y, c.score);
        }
        s
    }
}

impl<'a> IntoIterator for &'a CorrespondenceSet {
    type Item = &'a Correspondence;
    type IntoIter = std::slice::Iter<'a, Correspondence>;
    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Reads `x0 y0 x1 y1 [score]` lines; `#` starts a comment line and blank
/// lines are skipped. Exact duplicate pairs are dropped and counted.
pub fn parse_correspondences(reader: impl BufRead) -> Result<CorrespondenceSet> {
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| StitchError::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 4 && fields.len() != 5 {
            return Err(StitchError::Parse {
                line: lineno,
                reason: format!("expected 4 or 5 numbers, found {}", fields.len()),
            });
        }
        let mut v = [0.0f64; 5];
        v[4] = 1.0;
        for (k, f) in fields.iter().enumerate() {
            v[k] = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| StitchError::Parse {
                    line: lineno,
                    reason: format!("`{f}` is not a finite number"),
                })?;
        }
        if v[4] < 0.0 {
            return Err(StitchError::Parse {
                line: lineno,
                reason: "negative score".into(),
            });
        }
        items.push(Correspondence {
            p0: Point::new(v[0], v[1]),
            p1: Point::new(v[2], v[3]),
            score: v[4],
        });
    }
    let set = CorrespondenceSet::new(items, Source::File);
    if set.duplicates_dropped() > 0 {
        log::warn!(
            "dropped {} duplicate correspondences",
            set.duplicates_dropped()
        );
    }
    Ok(set)
}

/// Distance in reference pixels between `H·p1` and `p0`; 1e12 when `p1`
/// maps to the line at infinity.
pub fn reprojection_error(h: &Homography, c: &Correspondence) -> f64 {
    h.transfer_error(c.p1, c.p0)
}
