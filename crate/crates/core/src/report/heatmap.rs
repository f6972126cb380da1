use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{FgttError, Result};
use crate::model::ClassAttention;

/// Writes a square matrix with row and column labels; values carry nine
/// significant digits.
pub fn write_matrix_csv<W: Write>(matrix: &[f64], labels: &[String], out: W) -> Result<()> {
    let n = labels.len();
    if matrix.len() != n * n {
        return Err(FgttError::Shape(format!(
            "{} labels for a matrix of {} cells",
            n,
            matrix.len()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["group".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (i, l) in labels.iter().enumerate() {
        let mut rec = vec![l.clone()];
        rec.extend(matrix[i * n..(i + 1) * n].iter().map(|v| format!("{v:.8e}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| FgttError::io("<csv output>", e))?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(input: R) -> Result<(Vec<String>, Vec<f64>)> {
    let mut r = csv::Reader::from_reader(input);
    let labels: Vec<String> = r.headers()?.iter().skip(1).map(String::from).collect();
    let mut values = Vec::with_capacity(labels.len() * labels.len());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != labels.len() + 1 || labels.get(i).map(String::as_str) != rec.get(0) {
            return Err(FgttError::Header(format!(
                "matrix row {} does not match the column labels",
                i + 1
            )));
        }
        for v in rec.iter().skip(1) {
            values.push(
                v.parse()
                    .map_err(|_| FgttError::Param(format!("bad matrix value {v:?}")))?,
            );
        }
    }
    if values.len() != labels.len() * labels.len() {
        return Err(FgttError::Shape("matrix is not square".into()));
    }
    Ok((labels, values))
}

pub fn write_scores_csv<W: Write>(scores: &[f64], labels: &[String], out: W) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(FgttError::Shape(format!(
            "{} labels for {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "cls_attention"])?;
    for (l, s) in labels.iter().zip(scores) {
        w.write_record([l.clone(), format!("{s:.8e}")])?;
    }
    w.flush().map_err(|e| FgttError::io("<csv output>", e))?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(input: R) -> Result<(Vec<String>, Vec<f64>)> {
    let mut r = csv::Reader::from_reader(input);
    let mut labels = Vec::new();
    let mut scores = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        labels.push(rec[0].to_string());
        scores.push(
            rec[1]
                .parse()
                .map_err(|_| FgttError::Param(format!("bad score {:?}", &rec[1])))?,
        );
    }
    Ok((labels, scores))
}

/// White to dark blue.
fn color(t: f64) -> (u8, u8, u8) {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    (lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const CELL: usize = 56;
const MARGIN: usize = 110;

/// Annotated heatmap; color scale runs from 0 to the largest cell.
pub fn heatmap_svg(matrix: &[f64], labels: &[String], title: &str) -> Result<String> {
    let n = labels.len();
    if matrix.len() != n * n {
        return Err(FgttError::Shape(format!(
            "{} labels for a matrix of {} cells",
            n,
            matrix.len()
        )));
    }
    let max = matrix.iter().cloned().fold(0.0, f64::max);
    let size = MARGIN + n * CELL + 20;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-size="14">{}</text>"#,
        MARGIN,
        escape(title)
    );
    for (i, l) in labels.iter().enumerate() {
        let c = MARGIN + i * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            MARGIN - 6,
            c,
            escape(l)
        );
        let _ = writeln!(
            s,
            r#"<text x="{c}" y="{}" text-anchor="start" transform="rotate(-45 {c} {})">{}</text>"#,
            MARGIN - 6,
            MARGIN - 6,
            escape(l)
        );
    }
    for i in 0..n {
        for j in 0..n {
            let v = matrix[i * n + j];
            let t = if max > 0.0 { v / max } else { 0.0 };
            let (r, g, b) = color(t);
            let (x, y) = (MARGIN + j * CELL, MARGIN + i * CELL);
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({r},{g},{b})" stroke="white"/>"#
            );
            let ink = if t > 0.55 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" dominant-baseline="middle" fill="{ink}">{v:.3}</text>"#,
                x + CELL / 2,
                y + CELL / 2
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Horizontal bars, longest first in input order.
pub fn bar_chart_svg(scores: &[f64], labels: &[String], title: &str) -> Result<String> {
    if scores.len() != labels.len() {
        return Err(FgttError::Shape(format!(
            "{} labels for {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let max = scores.iter().cloned().fold(0.0, f64::max);
    let (bar_h, width) = (24, 320.0);
    let height = 40 + labels.len() * (bar_h + 6) + 10;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="11">"#,
        MARGIN + width as usize + 70
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="20" font-size="14">{}</text>"#,
        escape(title)
    );
    for (i, (l, v)) in labels.iter().zip(scores).enumerate() {
        let y = 36 + i * (bar_h + 6);
        let w = if max > 0.0 { v / max * width } else { 0.0 };
        let (r, g, b) = color(if max > 0.0 { v / max } else { 0.0 });
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            MARGIN - 6,
            y + bar_h / 2,
            escape(l)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{y}" width="{w:.2}" height="{bar_h}" fill="rgb({r},{g},{b})" stroke="rgb(8,48,107)"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" dominant-baseline="middle">{v:.3}</text>"#,
            MARGIN as f64 + w + 4.0,
            y + bar_h / 2
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| FgttError::io(path, e))
}

/// Writes `heatmap_<class>.csv/.svg` and `cls_<class>.csv/.svg` into
/// `dir`. Renderings are drawn from the written text, not the input.
///
/// `token_labels` names every sequence position (CLS first); the CLS
/// scores use the remaining labels.
pub fn emit_heatmap(
    agg: &ClassAttention,
    class_name: &str,
    token_labels: &[String],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let n = token_labels.len();
    if agg.pair_heatmap.len() != n * n || agg.cls_scores.len() + 1 != n {
        return Err(FgttError::Shape(format!(
            "{} labels for a {}-cell heatmap and {} group scores",
            n,
            agg.pair_heatmap.len(),
            agg.cls_scores.len()
        )));
    }
    let mut written = Vec::new();

    let mut text = Vec::new();
    write_matrix_csv(&agg.pair_heatmap, token_labels, &mut text)?;
    let (labels, matrix) = read_matrix_csv(text.as_slice())?;
    let p = dir.join(format!("heatmap_{class_name}.csv"));
    write_file(&p, &text)?;
    written.push(p);
    let svg = heatmap_svg(&matrix, &labels, &format!("Attention between tokens, {class_name}"))?;
    let p = dir.join(format!("heatmap_{class_name}.svg"));
    write_file(&p, svg.as_bytes())?;
    written.push(p);

    let mut text = Vec::new();
    write_scores_csv(&agg.cls_scores, &token_labels[1..], &mut text)?;
    let (labels, scores) = read_scores_csv(text.as_slice())?;
    let p = dir.join(format!("cls_{class_name}.csv"));
    write_file(&p, &text)?;
    written.push(p);
    let svg = bar_chart_svg(
        &scores,
        &labels,
        &format!("CLS attention by feature group, {class_name}"),
    )?;
    let p = dir.join(format!("cls_{class_name}.svg"));
    write_file(&p, svg.as_bytes())?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("g{i}")).collect()
    }

    #[test]
    fn uniform_matrix_renders_one_color() {
        let m = vec![1.0 / 9.0; 81];
        let svg = heatmap_svg(&m, &labels(9), "t").unwrap();
        let fills: std::collections::BTreeSet<&str> = svg
            .lines()
            .filter(|l| l.starts_with("<rect"))
            .map(|l| l.split("fill=\"").nth(1).unwrap().split('"').next().unwrap())
            .collect();
        assert_eq!(fills.len(), 1);
        assert_eq!(svg.matches(">0.111<").count(), 81);
    }

    #[test]
    fn matrix_round_trips_at_nine_digits() {
        let m: Vec<f64> = (0..81).map(|i| (i as f64 + 0.5).sqrt() / 13.0).collect();
        let mut buf = Vec::new();
        write_matrix_csv(&m, &labels(9), &mut buf).unwrap();
        let (l, back) = read_matrix_csv(buf.as_slice()).unwrap();
        assert_eq!(l, labels(9));
        for (a, b) in m.iter().zip(&back) {
            let want: f64 = format!("{a:.8e}").parse().unwrap();
            assert_eq!(*b, want);
            assert!(((a - b) / a).abs() < 1e-8);
        }
    }

    #[test]
    fn size_mismatch_is_an_error() {
        assert!(heatmap_svg(&[0.0; 4], &labels(3), "t").is_err());
        assert!(write_matrix_csv(&[0.0; 4], &labels(3), Vec::new()).is_err());
        assert!(bar_chart_svg(&[0.1], &labels(2), "t").is_err());
    }

    #[test]
    fn emitted_rendering_matches_text() {
        let dir = tempfile::tempdir().unwrap();
        let mut heat = vec![0.0; 9];
        heat[0] = 0.2;
        heat[1] = 0.5;
        heat[2] = 0.3;
        for i in 3..9 {
            heat[i] = 1.0 / 3.0;
        }
        let agg = ClassAttention {
            class: 0,
            count: 1,
            cls_scores: vec![0.625, 0.375],
            pair_heatmap: heat,
        };
        let l = vec!["CLS".to_string(), "Event".into(), "Traffic".into()];
        let files = emit_heatmap(&agg, "rear_end", &l, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let svg = std::fs::read_to_string(dir.path().join("cls_rear_end.svg")).unwrap();
        assert!(svg.contains(">0.625<") && svg.contains(">Event<"));
        let (_, s) = read_scores_csv(std::fs::File::open(dir.path().join("cls_rear_end.csv")).unwrap()).unwrap();
        assert_eq!(s, vec![0.625, 0.375]);
    }
}
