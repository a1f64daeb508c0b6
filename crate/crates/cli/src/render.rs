//! SVG route rendering: one fill color per cluster (12-color palette,
//! cycling), all nodes as circles, selected nodes emphasized, the tour as a
//! closed polyline, and the depot marked. Byte-deterministic for fixed input.

use gtsp_core::instance::{validate_tour, GtspInstance, InstanceError, Tour};

const CANVAS: f64 = 800.0;
const MARGIN: f64 = 20.0;

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78",
];

fn px(x: f64) -> f64 {
    MARGIN + x * (CANVAS - 2.0 * MARGIN)
}

fn py(y: f64) -> f64 {
    CANVAS - (MARGIN + y * (CANVAS - 2.0 * MARGIN))
}

/// Renders a feasible tour over its instance. Infeasible tours are refused
/// with the full violation report.
pub fn render_route(instance: &GtspInstance, tour: &Tour) -> Result<String, InstanceError> {
    let report = validate_tour(instance, tour.nodes());
    if !report.is_feasible() {
        return Err(InstanceError::Infeasible(report));
    }
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CANVAS}\" height=\"{CANVAS}\" viewBox=\"0 0 {CANVAS} {CANVAS}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // closed tour polyline: m + 1 points
    let mut points = String::new();
    for &node in tour.nodes().iter().chain(std::iter::once(&tour.nodes()[0])) {
        let c = instance.coords[node];
        points.push_str(&format!("{:.2},{:.2} ", px(c[0]), py(c[1])));
    }
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#333333\" stroke-width=\"2\"/>\n",
        points.trim_end()
    ));

    let selected: Vec<bool> = {
        let mut s = vec![false; instance.n];
        for &node in tour.nodes() {
            s[node] = true;
        }
        s
    };
    for i in 0..instance.n {
        let c = instance.coords[i];
        let color = PALETTE[instance.cluster[i] % PALETTE.len()];
        let (r, stroke) = if selected[i] {
            (8.0, " stroke=\"black\" stroke-width=\"2\"")
        } else {
            (5.0, "")
        };
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{r}\" fill=\"{color}\"{stroke}/>\n",
            px(c[0]),
            py(c[1])
        ));
    }

    // depot marker: outer ring
    let depot = instance.coords[instance.depot];
    svg.push_str(&format!(
        "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"12\" fill=\"none\" stroke=\"black\" stroke-width=\"2\" stroke-dasharray=\"4 2\"/>\n",
        px(depot[0]),
        py(depot[1])
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}
