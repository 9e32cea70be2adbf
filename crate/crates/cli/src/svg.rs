//! SVG 1.1 overlay of ground truth and predictions in the BEV plane.

use std::fmt::Write;

use mapforge_core::{ElementClass, MapElement, PerceptionRange, ScoredElement};

const PX_PER_M: f64 = 10.0;

fn hue(class: ElementClass) -> &'static str {
    match class {
        ElementClass::PedCrossing => "#1f77b4",
        ElementClass::Divider => "#ff7f0e",
        ElementClass::Boundary => "#2ca02c",
        ElementClass::Centerline => "#9467bd",
    }
}

fn shape(out: &mut String, el: &MapElement, range: &PerceptionRange, role: &str, style: &str) {
    let tag = if el.closed { "polygon" } else { "polyline" };
    let pts: Vec<String> = el
        .points
        .iter()
        .map(|p| format!("{:.3},{:.3}", (p.x - range.x_min) * PX_PER_M, (range.y_max - p.y) * PX_PER_M))
        .collect();
    let _ = writeln!(
        out,
        r#"  <{tag} class="{role} {cls}" points="{pts}" fill="none" stroke="{color}" stroke-width="2" {style}/>"#,
        cls = el.class,
        pts = pts.join(" "),
        color = hue(el.class),
    );
}

/// Ground truth drawn solid, predictions dashed with opacity equal to their
/// score, one shape per element.
pub fn render(range: &PerceptionRange, gt: &[MapElement], preds: &[ScoredElement]) -> String {
    let (w, h) = (range.width() * PX_PER_M, range.height() * PX_PER_M);
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.3} {h:.3}">"#
    );
    let _ = writeln!(out, r#"  <rect width="100%" height="100%" fill="white"/>"#);
    for el in gt {
        shape(&mut out, el, range, "gt", "");
    }
    for p in preds {
        shape(
            &mut out,
            &p.element,
            range,
            "pred",
            &format!(r#"stroke-dasharray="6,4" stroke-opacity="{:.3}""#, p.score),
        );
    }
    out.push_str("</svg>\n");
    out
}
