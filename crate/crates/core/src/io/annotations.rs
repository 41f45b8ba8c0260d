//! Target-size statistics over box annotations.
//!
//! The input is a JSON array of records:
//!
//! ```json
//! [{"image_width": 300, "image_height": 300, "boxes": [[10, 20, 9, 5]]}]
//! ```

use std::fmt;
use std::io::{self, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::toy::format_significant;

/// Area proportion under which a target counts as small.
pub const SMALL_AREA: f64 = 0.001;
/// Linear extent above which a target counts as near-full-frame.
pub const LARGE_EXTENT: f64 = 0.9;
pub const RATIO_CSV_HEADER: &str = "w_ratio,h_ratio";

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct AnnotationRecord {
    pub image_width: f64,
    pub image_height: f64,
    /// `[x, y, w, h]` in pixels.
    pub boxes: Vec<[f64; 4]>,
}

/// One accepted box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRatio {
    pub record: usize,
    pub w: f64,
    pub h: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub w_ratio: f64,
    pub h_ratio: f64,
}

impl BoxRatio {
    pub fn area_proportion(&self) -> f64 {
        self.w_ratio * self.h_ratio
    }

    pub fn linear_extent(&self) -> f64 {
        self.w_ratio.max(self.h_ratio)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub records: usize,
    /// Accepted boxes in document order.
    pub ratios: Vec<BoxRatio>,
    /// Boxes dropped because a ratio fell outside `[0, 1]`.
    pub skipped: usize,
    pub smallest: Option<BoxRatio>,
    pub largest: Option<BoxRatio>,
    /// Boxes with area proportion below [`SMALL_AREA`].
    pub below_small_area: usize,
    /// Boxes whose larger ratio exceeds [`LARGE_EXTENT`].
    pub above_large_extent: usize,
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>> {
    serde_json::from_str(text).map_err(|e| Error::Annotation(e.to_string()))
}

pub fn annotation_stats(records: &[AnnotationRecord]) -> StatsReport {
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for (i, rec) in records.iter().enumerate() {
        for &[_, _, w, h] in &rec.boxes {
            let (w_ratio, h_ratio) = (w / rec.image_width, h / rec.image_height);
            let valid = |r: f64| r.is_finite() && (0.0..=1.0).contains(&r);
            if rec.image_width > 0.0 && rec.image_height > 0.0 && valid(w_ratio) && valid(h_ratio) {
                ratios.push(BoxRatio {
                    record: i,
                    w,
                    h,
                    image_width: rec.image_width,
                    image_height: rec.image_height,
                    w_ratio,
                    h_ratio,
                });
            } else {
                skipped += 1;
            }
        }
    }
    let by_area = |a: &&BoxRatio, b: &&BoxRatio| a.area_proportion().total_cmp(&b.area_proportion());
    StatsReport {
        records: records.len(),
        skipped,
        smallest: ratios.iter().min_by(by_area).copied(),
        largest: ratios.iter().max_by(by_area).copied(),
        below_small_area: ratios.iter().filter(|r| r.area_proportion() < SMALL_AREA).count(),
        above_large_extent: ratios.iter().filter(|r| r.linear_extent() > LARGE_EXTENT).count(),
        ratios,
    }
}

pub fn annotation_stats_file(path: impl AsRef<Path>) -> Result<StatsReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(annotation_stats(&parse_annotations(&text)?))
}

pub fn write_ratio_csv(ratios: &[BoxRatio], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{RATIO_CSV_HEADER}")?;
    for r in ratios {
        writeln!(out, "{},{}", format_significant(r.w_ratio, 9), format_significant(r.h_ratio, 9))?;
    }
    Ok(())
}

fn percent(p: f64) -> String {
    format!("{}%", format_significant(100.0 * p, 4))
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records: {}", self.records)?;
        writeln!(f, "boxes: {} accepted, {} skipped", self.ratios.len(), self.skipped)?;
        let describe = |r: &BoxRatio| {
            format!("{} ({}x{} on {}x{})", percent(r.area_proportion()), r.w, r.h, r.image_width, r.image_height)
        };
        if let (Some(lo), Some(hi)) = (&self.smallest, &self.largest) {
            let small_flag = if lo.area_proportion() < SMALL_AREA { ", < 0.1%" } else { "" };
            writeln!(f, "min area proportion: {}{small_flag}", describe(lo))?;
            writeln!(f, "max area proportion: {}", describe(hi))?;
        }
        writeln!(f, "boxes below 0.1% area: {}", self.below_small_area)?;
        write!(f, "boxes above 90% linear extent: {}", self.above_large_extent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"[
        {"image_width": 300, "image_height": 300, "boxes": [[0, 0, 9, 5]]},
        {"image_width": 300, "image_height": 300, "boxes": [[2, 4, 296, 292]]}
    ]"#;

    #[test]
    fn smallest_and_largest_targets() {
        let report = annotation_stats(&parse_annotations(FIXTURE).unwrap());
        let lo = report.smallest.unwrap();
        let hi = report.largest.unwrap();
        assert!((lo.area_proportion() - 45.0 / 90000.0).abs() < 1e-15);
        assert!((hi.area_proportion() - 296.0 * 292.0 / 90000.0).abs() < 1e-15);
        assert_eq!((report.below_small_area, report.above_large_extent, report.skipped), (1, 1, 0));
        let text = report.to_string();
        assert!(text.contains("min area proportion: 0.05% (9x5 on 300x300), < 0.1%"), "{text}");
        assert!(text.contains("max area proportion: 96.04% (296x292 on 300x300)"), "{text}");
    }

    #[test]
    fn empty_box_list() {
        let report =
            annotation_stats(&parse_annotations(r#"[{"image_width": 10, "image_height": 10, "boxes": []}]"#).unwrap());
        assert!(report.ratios.is_empty());
        assert_eq!((report.below_small_area, report.above_large_extent), (0, 0));
        let mut csv = Vec::new();
        write_ratio_csv(&report.ratios, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "w_ratio,h_ratio\n");
    }

    #[test]
    fn out_of_range_boxes_are_skipped() {
        let doc = r#"[{"image_width": 100, "image_height": 50, "boxes": [[0,0,120,10],[0,0,10,-1],[0,0,50,25]]},
                      {"image_width": 0, "image_height": 50, "boxes": [[0,0,0,10]]}]"#;
        let report = annotation_stats(&parse_annotations(doc).unwrap());
        assert_eq!(report.skipped, 3);
        assert_eq!(report.ratios.len(), 1);
        assert_eq!((report.ratios[0].w_ratio, report.ratios[0].h_ratio), (0.5, 0.5));
    }

    #[test]
    fn malformed_documents() {
        for doc in [
            "",
            "{}",
            "[{\"image_width\": 1}]",
            "[{\"image_width\": 1, \"image_height\": 1, \"boxes\": [[1, 2, 3]]}]",
            "[1, 2",
        ] {
            assert!(matches!(parse_annotations(doc), Err(Error::Annotation(_))), "{doc}");
        }
    }
}
