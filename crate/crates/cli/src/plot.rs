//! Rank-frequency SVG: log10 frequency on the y-axis, rank on the x-axis,
//! one polyline per subset series with a legend labeled by subset size.

pub struct Series {
    pub label: String,
    /// (rank, count) pairs, rank ascending, count >= 1.
    pub points: Vec<(u64, u64)>,
}

const PALETTE: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79", "#ad494a",
];

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 55.0;

pub fn render(series: &[Series]) -> String {
    let max_rank = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(r, _)| r))
        .max()
        .unwrap_or(1)
        .max(1);
    let max_count = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(_, c)| c))
        .max()
        .unwrap_or(1)
        .max(1);
    let max_log = (max_count as f64).log10().ceil().max(1.0);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x = |rank: u64| MARGIN_LEFT + (rank.saturating_sub(1)) as f64 / (max_rank.max(2) - 1) as f64 * plot_w;
    let y = |count: u64| {
        let v = (count.max(1) as f64).log10();
        MARGIN_TOP + plot_h - v / max_log * plot_h
    };

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));

    // axes
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP + plot_h;
    svg.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        MARGIN_LEFT + plot_w
    ));
    svg.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{MARGIN_TOP}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));

    // y ticks at powers of ten
    for power in 0..=(max_log as u64) {
        let value = 10u64.pow(power as u32);
        let ty = y(value);
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{ty}\" x2=\"{x0}\" y2=\"{ty}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">1e{power}</text>\n",
            x0 - 8.0,
            ty + 4.0
        ));
    }
    // x ticks: start, middle, end
    for rank in [1, max_rank / 2, max_rank] {
        if rank == 0 {
            continue;
        }
        let tx = x(rank);
        svg.push_str(&format!(
            "  <line x1=\"{tx}\" y1=\"{y0}\" x2=\"{tx}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{tx}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{rank}</text>\n",
            y0 + 20.0
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">rank</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "  <text x=\"18\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">frequency (log scale)</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    ));

    // series
    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let points: Vec<String> = s
            .points
            .iter()
            .map(|&(rank, count)| format!("{:.1},{:.1}", x(rank), y(count)))
            .collect();
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let ly = MARGIN_TOP + 16.0 * idx as f64 + 10.0;
        let lx = MARGIN_LEFT + plot_w + 18.0;
        svg.push_str(&format!(
            "  <line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            lx + 18.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>\n",
            lx + 24.0,
            ly + 4.0,
            escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
