//! Per-class, per-condition evaluation tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ap::{interpolated_ap, match_frame, pr_curve, IouKind};
use crate::boxes::{Box3D, ObjectClass};
use crate::config::EvalConfig;
use crate::detection::DetectionRecord;
use crate::error::{Error, Result};
use crate::geometry::roi_contains;

/// Column name of the pooled evaluation.
pub const TOTAL: &str = "Total";

/// Ground truth of one evaluated frame.
#[derive(Debug, Clone)]
pub struct EvalFrame {
    pub frame_id: String,
    pub condition: String,
    pub boxes: Vec<Box3D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub n_gt: usize,
    pub tp: usize,
    pub fp: usize,
    /// `None` when the cell has no ground truth.
    pub ap_bev: Option<f64>,
    pub ap_3d: Option<f64>,
    /// BEV precision–recall points as (recall, precision), score-descending.
    pub pr_bev: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: ObjectClass,
    /// Keyed by condition tag, plus [`TOTAL`].
    pub cells: BTreeMap<String, CellResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub interpolation_points: usize,
    /// Condition tags in column order, ending with [`TOTAL`].
    pub conditions: Vec<String>,
    pub rows: Vec<ClassRow>,
    /// mAP per column over classes with ground truth in that column.
    pub map_bev: BTreeMap<String, Option<f64>>,
    pub map_3d: BTreeMap<String, Option<f64>>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn evaluate_cell(pairs: &[(Vec<Box3D>, Vec<Box3D>)], cfg: &EvalConfig) -> CellResult {
    let mut bev = Vec::new();
    let mut vol = Vec::new();
    let mut n_gt = 0;
    for (d, g) in pairs {
        bev.extend(match_frame(d, g, cfg.iou_threshold, IouKind::Bev));
        vol.extend(match_frame(d, g, cfg.iou_threshold, IouKind::Volume));
        n_gt += g.len();
    }
    let tp = bev.iter().filter(|m| m.1).count();
    CellResult {
        n_gt,
        tp,
        fp: bev.len() - tp,
        ap_bev: interpolated_ap(&bev, n_gt, cfg.interpolation_points),
        ap_3d: interpolated_ap(&vol, n_gt, cfg.interpolation_points),
        pr_bev: if n_gt > 0 { pr_curve(&bev, n_gt) } else { Vec::new() },
    }
}

/// Builds the table from detections keyed by frame id. Every detection must
/// name a known frame; boxes outside the ROI are dropped on both sides.
pub fn build_report(detections: &[DetectionRecord], frames: &[EvalFrame], cfg: &EvalConfig) -> Result<EvalReport> {
    let mut index = BTreeMap::new();
    for (i, f) in frames.iter().enumerate() {
        if index.insert(f.frame_id.as_str(), i).is_some() {
            return Err(Error::Eval(format!("duplicate frame id '{}'", f.frame_id)));
        }
    }
    let mut dets: Vec<Vec<Box3D>> = vec![Vec::new(); frames.len()];
    for d in detections {
        let i = *index
            .get(d.frame_id.as_str())
            .ok_or_else(|| Error::Eval(format!("detection for unknown frame '{}'", d.frame_id)))?;
        dets[i].push(d.to_box());
    }

    let mut conditions: Vec<String> = frames
        .iter()
        .map(|f| f.condition.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    conditions.push(TOTAL.to_string());

    let mut rows = Vec::new();
    for class in ObjectClass::ALL {
        let pairs: Vec<(&str, (Vec<Box3D>, Vec<Box3D>))> = frames
            .iter()
            .zip(&dets)
            .map(|(f, d)| {
                let keep = |b: &&Box3D| b.class == class && roi_contains(b, &cfg.roi);
                (
                    f.condition.as_str(),
                    (
                        d.iter().filter(keep).copied().collect(),
                        f.boxes.iter().filter(keep).copied().collect(),
                    ),
                )
            })
            .collect();
        let mut cells = BTreeMap::new();
        for cond in &conditions {
            let subset: Vec<_> = pairs
                .iter()
                .filter(|(c, _)| cond == TOTAL || c == cond)
                .map(|(_, p)| p.clone())
                .collect();
            cells.insert(cond.clone(), evaluate_cell(&subset, cfg));
        }
        rows.push(ClassRow { class, cells });
    }

    let column_map = |pick: fn(&CellResult) -> Option<f64>| -> BTreeMap<String, Option<f64>> {
        conditions
            .iter()
            .map(|c| (c.clone(), mean(rows.iter().map(|r| pick(&r.cells[c])))))
            .collect()
    };
    let map_bev = column_map(|c| c.ap_bev);
    let map_3d = column_map(|c| c.ap_3d);
    Ok(EvalReport {
        iou_threshold: cfg.iou_threshold,
        interpolation_points: cfg.interpolation_points,
        conditions,
        rows,
        map_bev,
        map_3d,
    })
}

fn fmt_ap(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.1}", 100.0 * x),
        None => "-".to_string(),
    }
}

impl EvalReport {
    pub fn row(&self, class: ObjectClass) -> &ClassRow {
        &self.rows[class.index()]
    }

    pub fn total_map_bev(&self) -> Option<f64> {
        self.map_bev.get(TOTAL).copied().flatten()
    }

    pub fn total_map_3d(&self) -> Option<f64> {
        self.map_3d.get(TOTAL).copied().flatten()
    }

    /// Aligned text table: one block per metric, classes as rows and
    /// conditions as columns; AP in percent, "-" for cells without ground
    /// truth.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "IoU threshold {:.2}, {}-point interpolation",
            self.iou_threshold, self.interpolation_points
        );
        let width = 14;
        for (title, pick, maps) in [
            ("AP_BEV", (|c: &CellResult| c.ap_bev) as fn(&CellResult) -> Option<f64>, &self.map_bev),
            ("AP_3D", |c: &CellResult| c.ap_3d, &self.map_3d),
        ] {
            let _ = writeln!(s);
            let _ = write!(s, "{title:<width$}");
            for c in &self.conditions {
                let _ = write!(s, "{c:>10}");
            }
            let _ = writeln!(s);
            for r in &self.rows {
                let _ = write!(s, "{:<width$}", r.class.display_name());
                for c in &self.conditions {
                    let _ = write!(s, "{:>10}", fmt_ap(pick(&r.cells[c])));
                }
                let _ = writeln!(s);
            }
            let _ = write!(s, "{:<width$}", "mAP");
            for c in &self.conditions {
                let _ = write!(s, "{:>10}", fmt_ap(maps[c]));
            }
            let _ = writeln!(s);
        }
        s
    }

    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, class: ObjectClass) -> Box3D {
        Box3D::new([x, 0.0, 0.0], [2.0, 2.0, 2.0], 0.0, class)
    }

    #[test]
    fn perfect_single_cell_and_absent_classes() {
        let frames = vec![EvalFrame {
            frame_id: "a".into(),
            condition: "clear".into(),
            boxes: vec![bx(10.0, ObjectClass::Sedan)],
        }];
        let dets = vec![DetectionRecord::new("a", &bx(10.0, ObjectClass::Sedan))];
        let r = build_report(&dets, &frames, &EvalConfig::default()).unwrap();
        assert_eq!(r.row(ObjectClass::Sedan).cells["clear"].ap_bev, Some(1.0));
        assert_eq!(r.row(ObjectClass::Bicycle).cells["clear"].ap_bev, None);
        assert_eq!(r.total_map_bev(), Some(1.0));
        let text = r.to_text();
        assert!(text.contains("Bicycle") && text.contains('-'));
    }

    #[test]
    fn unknown_frame_is_an_error() {
        let dets = vec![DetectionRecord::new("zz", &bx(10.0, ObjectClass::Sedan))];
        assert!(matches!(
            build_report(&dets, &[], &EvalConfig::default()),
            Err(Error::Eval(_))
        ));
    }
}
