//! Bland–Altman scatter plots as standalone SVG 1.1 documents.

use std::fmt::Write as _;

use tractseg::{Error, Result};

pub const WIDTH: f64 = 480.0;
pub const HEIGHT: f64 = 360.0;
/// Plot area `[left, right] × [top, bottom]` in viewport pixels.
pub const AREA: [f64; 4] = [80.0, 460.0, 30.0, 300.0];

/// Linear map from a data interval onto a pixel interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub from: f64,
    pub to: f64,
}

impl Axis {
    fn covering(values: impl Iterator<Item = f64>, from: f64, to: f64) -> Axis {
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let span = hi - lo;
        let scale = lo.abs().max(hi.abs());
        let pad = if span > 1e-12 * scale.max(1e-300) {
            0.1 * span
        } else if scale > 0.0 {
            0.1 * scale
        } else {
            1.0
        };
        lo -= pad;
        hi += pad;
        Axis { lo, hi, from, to }
    }

    pub fn px(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }

    pub fn value(&self, px: f64) -> f64 {
        self.lo + (px - self.from) / (self.to - self.from) * (self.hi - self.lo)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Axis ticks carry the full range so the data transform can be recovered
/// from the document.
fn tick(v: f64) -> String {
    format!("{v:.9e}")
}

/// Renders `(mean, diff)` points with horizontal lines at the mean
/// difference and both limits of agreement. `loa` is `(mean, lower, upper)`.
pub fn bland_altman_svg(table: &[(f64, f64)], loa: (f64, f64, f64), measure: &str, unit: &str) -> Result<String> {
    if table.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let finite = |v: f64| v.is_finite();
    if !table.iter().all(|&(m, d)| finite(m) && finite(d)) || ![loa.0, loa.1, loa.2].into_iter().all(finite) {
        return Err(Error::Numeric(format!("non-finite value in the {measure} Bland-Altman table")));
    }
    let [left, right, top, bottom] = AREA;
    let xa = Axis::covering(table.iter().map(|p| p.0), left, right);
    let ya = Axis::covering(table.iter().map(|p| p.1).chain([loa.0, loa.1, loa.2]), bottom, top);
    let (m, u) = (escape(measure), escape(unit));

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">"
    )
    .unwrap();
    writeln!(s, "<title>Bland-Altman plot of {m}</title>").unwrap();
    writeln!(
        s,
        "<rect class=\"frame\" x=\"{left:.3}\" y=\"{top:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"none\" stroke=\"#444\"/>",
        right - left,
        bottom - top
    )
    .unwrap();
    s.push_str("<g class=\"points\" fill=\"#1f5f99\" fill-opacity=\"0.8\">\n");
    for &(mean, diff) in table {
        writeln!(s, "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"3\"/>", xa.px(mean), ya.px(diff)).unwrap();
    }
    s.push_str("</g>\n");
    for (class, v, dash) in [("mean", loa.0, ""), ("loa-lower", loa.1, " stroke-dasharray=\"6 4\""), ("loa-upper", loa.2, " stroke-dasharray=\"6 4\"")] {
        writeln!(
            s,
            "<line class=\"{class}\" x1=\"{left:.3}\" y1=\"{y:.3}\" x2=\"{right:.3}\" y2=\"{y:.3}\" stroke=\"#b22\"{dash}/>",
            y = ya.px(v)
        )
        .unwrap();
    }
    let labels = [
        ("x-min", left, bottom + 14.0, "start", tick(xa.lo)),
        ("x-max", right, bottom + 14.0, "end", tick(xa.hi)),
        ("y-min", left - 4.0, bottom, "end", tick(ya.lo)),
        ("y-max", left - 4.0, top + 8.0, "end", tick(ya.hi)),
        ("x-label", (left + right) / 2.0, HEIGHT - 20.0, "middle", format!("Mean of scan and rescan {m} ({u})")),
        ("y-label", 14.0, (top + bottom) / 2.0, "middle", format!("Rescan - scan {m} ({u})")),
    ];
    for (class, x, y, anchor, text) in labels {
        let rotate = if class == "y-label" {
            format!(" transform=\"rotate(-90 {x:.3} {y:.3})\"")
        } else {
            String::new()
        };
        writeln!(s, "<text class=\"{class}\" x=\"{x:.3}\" y=\"{y:.3}\" text-anchor=\"{anchor}\"{rotate}>{text}</text>").unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(elem: &str, name: &str) -> f64 {
        let key = format!(" {name}=\"");
        let start = elem.find(&key).unwrap() + key.len();
        elem[start..].split('"').next().unwrap().parse().unwrap()
    }

    fn text_of(svg: &str, class: &str) -> f64 {
        let line = svg.lines().find(|l| l.contains(&format!("class=\"{class}\""))).unwrap();
        line.split('>').nth(1).unwrap().split('<').next().unwrap().parse().unwrap()
    }

    #[test]
    fn single_point() {
        let svg = bland_altman_svg(&[(0.5, 0.0)], (0.0, 0.0, 0.0), "FA", "1").unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches("<line").count(), 3);
        assert!(svg.starts_with("<?xml") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_table_is_rejected() {
        assert!(matches!(
            bland_altman_svg(&[], (0.0, 0.0, 0.0), "FA", "1"),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn output_is_deterministic_and_escaped() {
        let t = [(1.0, 0.2), (2.0, -0.1), (1.5, 0.05)];
        let a = bland_altman_svg(&t, (0.05, -0.2, 0.3), "MD", "mm²/s & <x>").unwrap();
        assert_eq!(a, bland_altman_svg(&t, (0.05, -0.2, 0.3), "MD", "mm²/s & <x>").unwrap());
        assert!(a.contains("&amp; &lt;x&gt;"));
    }

    #[test]
    fn reference_lines_invert_to_limits() {
        let x = [0.41, 0.44, 0.39, 0.47, 0.43, 0.45];
        let y = [0.42, 0.43, 0.40, 0.45, 0.44, 0.47];
        let ba = tractseg::metrics::bland_altman(&x, &y).unwrap();
        let svg = bland_altman_svg(&ba.table, (ba.mean_diff, ba.lower, ba.upper), "FA", "1").unwrap();
        let (lo, hi) = (text_of(&svg, "y-min"), text_of(&svg, "y-max"));
        let [_, _, top, bottom] = AREA;
        let axis = Axis {
            lo,
            hi,
            from: bottom,
            to: top,
        };
        let line_y = |class: &str| {
            let l = svg.lines().find(|l| l.contains(&format!("<line class=\"{class}\""))).unwrap();
            assert_eq!(attr(l, "y1"), attr(l, "y2"));
            axis.value(attr(l, "y1"))
        };
        let tol = 1e-5 * (hi - lo);
        let sd = ba.sd_diff;
        assert!((line_y("mean") - ba.mean_diff).abs() < tol);
        assert!((line_y("loa-upper") - (ba.mean_diff + 1.96 * sd)).abs() < tol);
        assert!((line_y("loa-lower") - (ba.mean_diff - 1.96 * sd)).abs() < tol);
        for (c, &(m, d)) in svg.lines().filter(|l| l.starts_with("<circle")).zip(&ba.table) {
            assert!((axis.value(attr(c, "cy")) - d).abs() < tol);
            let xa = Axis {
                lo: text_of(&svg, "x-min"),
                hi: text_of(&svg, "x-max"),
                from: AREA[0],
                to: AREA[1],
            };
            assert!((xa.value(attr(c, "cx")) - m).abs() < 1e-5 * (xa.hi - xa.lo));
        }
    }
}
