//! Space-time diagrams as SVG: one panel per lane (top lane first), time on
//! the horizontal axis, cell on the vertical axis. EMV traces are drawn in
//! red and thicker than OV traces.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::domain::{GridSpec, VehicleClass, VehicleId};
use crate::engine::TrajectoryRow;
use crate::error::{Error, Result};

const PANEL_W: f64 = 720.0;
const PANEL_H: f64 = 180.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_T: f64 = 24.0;
const GAP: f64 = 28.0;

pub fn emit_plot(rows: &[TrajectoryRow], grid: &GridSpec) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Empty("trajectory table has no rows"));
    }
    let max_tick = rows.iter().map(|r| r.tick).max().unwrap_or(0).max(1);
    let lanes = grid.lane_count.max(1);
    let width = MARGIN_L + PANEL_W + 16.0;
    let height = MARGIN_T + f64::from(lanes) * (PANEL_H + GAP) + 8.0;
    let x = |tick: u32| MARGIN_L + PANEL_W * f64::from(tick) / f64::from(max_tick);
    let panel_top = |lane: i32| MARGIN_T + f64::from(lanes - lane) * (PANEL_H + GAP);
    let y = |lane: i32, cell: i32| {
        let frac = f64::from(cell - 1) / f64::from((grid.cell_count - 1).max(1));
        panel_top(lane) + PANEL_H * (1.0 - frac)
    };

    // Runs of consecutive ticks a vehicle spends in one lane.
    let mut per_vehicle: BTreeMap<VehicleId, Vec<&TrajectoryRow>> = BTreeMap::new();
    for r in rows {
        per_vehicle.entry(r.id).or_default().push(r);
    }
    let mut segments: Vec<(VehicleClass, i32, Vec<&TrajectoryRow>)> = Vec::new();
    for track in per_vehicle.values_mut() {
        track.sort_by_key(|r| r.tick);
        let mut cur: Vec<&TrajectoryRow> = Vec::new();
        for r in track.iter() {
            if let Some(last) = cur.last() {
                if last.l != r.l || last.tick + 1 != r.tick {
                    segments.push((last.class, last.l, std::mem::take(&mut cur)));
                }
            }
            cur.push(r);
        }
        if let Some(last) = cur.last() {
            segments.push((last.class, last.l, cur));
        }
    }
    // OVs underneath EMVs.
    segments.sort_by_key(|(class, _, _)| *class == VehicleClass::Emv);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for lane in (1..=lanes).rev() {
        let top = panel_top(lane);
        let _ = writeln!(
            svg,
            r##"<rect x="{MARGIN_L:.2}" y="{top:.2}" width="{PANEL_W:.2}" height="{PANEL_H:.2}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(svg, r#"<text x="4" y="{:.2}">lane {lane}</text>"#, top + 12.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, MARGIN_L - 4.0, top + 10.0, grid.cell_count);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1</text>"#, MARGIN_L - 4.0, top + PANEL_H);
    }
    let bottom = panel_top(1) + PANEL_H;
    let _ = writeln!(svg, r#"<text x="{MARGIN_L:.2}" y="{:.2}">0</text>"#, bottom + 14.0);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">tick {max_tick}</text>"#, MARGIN_L + PANEL_W, bottom + 14.0);

    for (class, lane, seg) in &segments {
        let (stroke, w) = match class {
            VehicleClass::Emv => ("#d62728", 2.0),
            VehicleClass::Ov => ("#7f7f7f", 0.8),
        };
        let mut points = String::new();
        for r in seg {
            let _ = write!(points, "{:.2},{:.2} ", x(r.tick), y(*lane, r.i));
        }
        let points = points.trim_end();
        if seg.len() == 1 {
            let r = seg[0];
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="{:.1}" fill="{stroke}"/>"#, x(r.tick), y(*lane, r.i), w);
        } else {
            let _ = writeln!(
                svg,
                r#"<polyline points="{points}" fill="none" stroke="{stroke}" stroke-width="{w:.1}"/>"#
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
