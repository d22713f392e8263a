//! Minimal hand-emitted SVG line charts. No dependencies: a chart is a
//! handful of `<line>`, `<polyline>`, `<circle>`, and `<text>` elements.

pub struct Series {
    pub name: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 48.0;

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1000.0 || a < 0.01 {
        format!("{v:.1e}")
    } else if a >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Renders the series into one chart. Axis ranges cover all points; the y
/// axis is extended to include zero so magnitudes stay comparable.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = 0.0f64;
    let mut y_max = f64::NEG_INFINITY;
    for &(x, y) in pts {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    let x_span = (x_max - x_min).max(1e-9);
    let y_span = (y_max - y_min).max(1e-9);
    let (pw, ph) = (WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B);
    let sx = |x: f64| MARGIN_L + (x - x_min) / x_span * pw;
    let sy = |y: f64| MARGIN_T + ph - (y - y_min) / y_span * ph;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        title
    ));

    // Frame and grid with 5 ticks per axis.
    out.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{pw}\" height=\"{ph}\" \
         fill=\"none\" stroke=\"#333\"/>\n"
    ));
    for k in 0..=5 {
        let f = k as f64 / 5.0;
        let xv = x_min + f * x_span;
        let yv = y_min + f * y_span;
        let gx = sx(xv);
        let gy = sy(yv);
        out.push_str(&format!(
            "<line x1=\"{gx}\" y1=\"{MARGIN_T}\" x2=\"{gx}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            MARGIN_T + ph
        ));
        out.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{gy}\" x2=\"{}\" y2=\"{gy}\" stroke=\"#ddd\"/>\n",
            MARGIN_L + pw
        ));
        out.push_str(&format!(
            "<text x=\"{gx}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_T + ph + 18.0,
            fmt_tick(xv)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 6.0,
            gy + 4.0,
            fmt_tick(yv)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_L + pw / 2.0,
        HEIGHT - 10.0,
        x_label
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        y_label
    ));

    for (i, s) in series.iter().enumerate() {
        let coords: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            coords.join(" "),
            s.color
        ));
        // Markers keep single-point series visible.
        if s.points.len() <= 25 {
            for &(x, y) in &s.points {
                out.push_str(&format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\"/>\n",
                    sx(x),
                    sy(y),
                    s.color
                ));
            }
        }
        let ly = MARGIN_T + 16.0 + 18.0 * i as f64;
        let lx = MARGIN_L + pw - 150.0;
        out.push_str(&format!(
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            lx + 22.0,
            s.color
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            lx + 28.0,
            ly + 4.0,
            s.name
        ));
    }
    out.push_str("</svg>\n");
    out
}
