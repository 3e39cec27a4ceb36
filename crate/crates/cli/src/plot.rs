//! Raster figures: BEV overlay and precision–recall curves.

use std::path::Path;

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;

use radfuse::boxes::{Box3D, ObjectClass};
use radfuse::config::PlotConfig;
use radfuse::eval::report::TOTAL;
use radfuse::eval::EvalReport;
use radfuse::geometry::RegionOfInterest;
use radfuse::{Error, Result};

pub const BACKGROUND: Rgb<u8> = Rgb([16, 16, 16]);
pub const GT_COLOR: Rgb<u8> = Rgb([255, 255, 255]);
pub const PRED_COLOR: Rgb<u8> = Rgb([255, 0, 0]);
pub const ROI_COLOR: Rgb<u8> = Rgb([200, 200, 0]);
const MARGIN_M: f64 = 2.0;
const DASH_PX: f32 = 6.0;

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

/// Top-down view transform: forward (x) points up, left (y) points left,
/// uniform scale fitting the ROI plus a margin.
#[derive(Debug, Clone, Copy)]
pub struct BevView {
    scale: f64,
    x_mid: f64,
    y_mid: f64,
    width: f64,
    height: f64,
}

impl BevView {
    pub fn fit(roi: &RegionOfInterest, plot: PlotConfig) -> Self {
        let (w, h) = (plot.width_px as f64, plot.height_px as f64);
        let span_y = roi.y_bounds_m.1 - roi.y_bounds_m.0 + 2.0 * MARGIN_M;
        let span_x = roi.x_bounds_m.1 - roi.x_bounds_m.0 + 2.0 * MARGIN_M;
        BevView {
            scale: (w / span_y).min(h / span_x),
            x_mid: 0.5 * (roi.x_bounds_m.0 + roi.x_bounds_m.1),
            y_mid: 0.5 * (roi.y_bounds_m.0 + roi.y_bounds_m.1),
            width: w,
            height: h,
        }
    }

    /// Pixel (column, row) of an ego-frame point.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f32, f32) {
        let col = 0.5 * self.width - (y - self.y_mid) * self.scale;
        let row = 0.5 * self.height - (x - self.x_mid) * self.scale;
        (col as f32, row as f32)
    }
}

fn draw_polygon(img: &mut RgbImage, pts: &[(f32, f32)], color: Rgb<u8>) {
    for i in 0..pts.len() {
        draw_line_segment_mut(img, pts[i], pts[(i + 1) % pts.len()], color);
    }
}

fn draw_dashed(img: &mut RgbImage, a: (f32, f32), b: (f32, f32), color: Rgb<u8>) {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let n = (len / DASH_PX).ceil().max(1.0) as usize;
    for k in (0..n).step_by(2) {
        let t0 = k as f32 / n as f32;
        let t1 = ((k + 1) as f32 / n as f32).min(1.0);
        let p = |t: f32| (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        draw_line_segment_mut(img, p(t0), p(t1), color);
    }
}

fn box_outline(view: &BevView, b: &Box3D) -> Vec<(f32, f32)> {
    b.bev_corners().iter().map(|c| view.to_pixel(c[0], c[1])).collect()
}

/// Ground truth in white, predictions in red (drawn last), ROI as a dashed
/// rectangle.
pub fn bev_overlay(gt: &[Box3D], preds: &[Box3D], roi: &RegionOfInterest, plot: PlotConfig) -> RgbImage {
    let mut img = RgbImage::from_pixel(plot.width_px, plot.height_px, BACKGROUND);
    let view = BevView::fit(roi, plot);
    let corners = [
        view.to_pixel(roi.x_bounds_m.0, roi.y_bounds_m.0),
        view.to_pixel(roi.x_bounds_m.1, roi.y_bounds_m.0),
        view.to_pixel(roi.x_bounds_m.1, roi.y_bounds_m.1),
        view.to_pixel(roi.x_bounds_m.0, roi.y_bounds_m.1),
    ];
    for i in 0..4 {
        draw_dashed(&mut img, corners[i], corners[(i + 1) % 4], ROI_COLOR);
    }
    for b in gt {
        draw_polygon(&mut img, &box_outline(&view, b), GT_COLOR);
    }
    for b in preds {
        draw_polygon(&mut img, &box_outline(&view, b), PRED_COLOR);
    }
    img
}

const PR_SIZE: (u32, u32) = (640, 480);
const PR_PAD: f32 = 40.0;

fn palette(i: usize) -> Rgb<u8> {
    const P: [[u8; 3]; 8] = [
        [31, 119, 180],
        [255, 127, 14],
        [44, 160, 44],
        [214, 39, 40],
        [148, 103, 189],
        [140, 86, 75],
        [227, 119, 194],
        [127, 127, 127],
    ];
    Rgb(P[i % P.len()])
}

/// Maps (recall, precision) in [0, 1]² to pixels of the PR figure.
pub fn pr_to_pixel(recall: f64, precision: f64) -> (f32, f32) {
    let w = PR_SIZE.0 as f32 - 2.0 * PR_PAD;
    let h = PR_SIZE.1 as f32 - 2.0 * PR_PAD;
    (
        PR_PAD + recall.clamp(0.0, 1.0) as f32 * w,
        PR_PAD + (1.0 - precision.clamp(0.0, 1.0) as f32) * h,
    )
}

/// One curve per selected (class, condition). Empty selections mean all
/// classes and only the pooled column. Cells without ground truth are
/// skipped with a warning.
pub fn pr_figure(report: &EvalReport, classes: &[String], conditions: &[String], out: &Path) -> Result<Vec<(String, String)>> {
    let wanted: Vec<ObjectClass> = if classes.is_empty() {
        ObjectClass::ALL.to_vec()
    } else {
        classes
            .iter()
            .map(|c| c.parse().map_err(Error::Config))
            .collect::<Result<_>>()?
    };
    let conds: Vec<String> = if conditions.is_empty() {
        vec![TOTAL.to_string()]
    } else {
        conditions.to_vec()
    };
    let mut img = RgbImage::from_pixel(PR_SIZE.0, PR_SIZE.1, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    let (x0, y0) = pr_to_pixel(0.0, 0.0);
    let (x1, y1) = pr_to_pixel(1.0, 1.0);
    draw_hollow_rect_mut(
        &mut img,
        Rect::at(x0 as i32, y1 as i32).of_size((x1 - x0) as u32 + 1, (y0 - y1) as u32 + 1),
        axis,
    );
    for k in 1..4 {
        let t = k as f64 / 4.0;
        let (gx, _) = pr_to_pixel(t, 0.0);
        let (_, gy) = pr_to_pixel(0.0, t);
        draw_dashed(&mut img, (gx, y0), (gx, y1), Rgb([210, 210, 210]));
        draw_dashed(&mut img, (x0, gy), (x1, gy), Rgb([210, 210, 210]));
    }
    let mut drawn = Vec::new();
    for class in wanted {
        let row = report.row(class);
        for cond in &conds {
            let Some(cell) = row.cells.get(cond).filter(|c| c.n_gt > 0 && !c.pr_bev.is_empty()) else {
                log::warn!("no PR data for {class} / {cond}; skipped");
                continue;
            };
            let color = palette(drawn.len());
            let mut prev = pr_to_pixel(0.0, cell.pr_bev[0].1);
            for &(r, p) in &cell.pr_bev {
                let cur = pr_to_pixel(r, p);
                draw_line_segment_mut(&mut img, prev, cur, color);
                prev = cur;
            }
            drawn.push((class.display_name().to_string(), cond.clone()));
        }
    }
    save_png(&img, out)?;
    Ok(drawn)
}
