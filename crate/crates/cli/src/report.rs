//! SVG bar-chart rendering for eval-equiv report CSVs.

use std::path::Path;

use equilearn::error::{Error, Result};

struct Row {
    kind: String,
    r2: f64,
}

fn parse_report_csv(path: &Path) -> Result<(Vec<Row>, Option<f64>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read report {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    let mut mean = None;
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if !line.starts_with("kind,r2") {
                return Err(Error::Config(format!("unexpected report header: {line}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::Config(format!("bad report row {i}: {line}")));
        }
        let r2: f64 = fields[1]
            .parse()
            .map_err(|_| Error::Config(format!("bad r2 '{}' in row {i}", fields[1])))?;
        if fields[0] == "mean" {
            mean = Some(r2);
        } else {
            rows.push(Row { kind: fields[0].to_string(), r2 });
        }
    }
    if rows.is_empty() {
        return Err(Error::Config("report has no kind rows".to_string()));
    }
    Ok((rows, mean))
}

/// Render one bar per transformation kind, with the mean drawn as a dashed
/// reference line.
pub fn render_svg_report(input: &Path, out: &Path) -> Result<()> {
    let (rows, mean) = parse_report_csv(input)?;
    let bar_w = 64.0;
    let gap = 24.0;
    let chart_h = 220.0;
    let margin_l = 56.0;
    let margin_top = 28.0;
    let margin_bottom = 48.0;
    let width = margin_l + rows.len() as f64 * (bar_w + gap) + gap;
    let height = margin_top + chart_h + margin_bottom;

    let ymap = |v: f64| margin_top + chart_h * (1.0 - v.clamp(0.0, 1.0));
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.0}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">Held-out R\u{b2} by transformation</text>\n",
        margin_l
    ));
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = ymap(tick);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n",
            margin_l,
            width - gap
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\" fill=\"#555\">{tick:.2}</text>\n",
            margin_l - 6.0,
            y + 4.0
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        let x = margin_l + gap + i as f64 * (bar_w + gap);
        let clamped = row.r2.clamp(0.0, 1.0);
        let y = ymap(clamped);
        let h = chart_h * clamped;
        svg.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{h:.1}\" fill=\"#4878a8\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            x + bar_w / 2.0,
            margin_top + chart_h + 18.0,
            row.kind
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\" fill=\"#333\">{:.3}</text>\n",
            x + bar_w / 2.0,
            y - 5.0,
            row.r2
        ));
    }
    if let Some(m) = mean {
        let y = ymap(m);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#b04848\" stroke-dasharray=\"6,4\"/>\n",
            margin_l,
            width - gap
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#b04848\">mean {m:.3}</text>\n",
            width - gap - 90.0,
            y - 6.0
        ));
    }
    svg.push_str("</svg>\n");
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, svg)?;
    println!("wrote {}", out.display());
    Ok(())
}
