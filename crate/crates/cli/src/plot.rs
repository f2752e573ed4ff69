//! SVG channel plots and CSV frame tables for generated motion.

use std::path::Path;

use vldn_core::data::MotionSequence;
use vldn_core::error::{Error, Result};

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

/// Polyline plot of the selected channels over time.
pub fn motion_svg(motion: &MotionSequence, channels: &[usize]) -> Result<String> {
    let l = motion.len();
    for &c in channels {
        if c >= motion.frames.ncols() {
            return Err(Error::shape(format!("channel {c} out of range")));
        }
    }
    let (width, height, pad) = (800.0f64, 320.0f64, 40.0f64);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &c in channels {
        for t in 0..l {
            let v = motion.frames[(t, c)] as f64;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Numeric("non-finite values in plot data".into()));
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let x_of = |t: usize| pad + (width - 2.0 * pad) * t as f64 / (l.max(2) - 1) as f64;
    let y_of = |v: f64| height - pad - (height - 2.0 * pad) * (v - lo) / (hi - lo);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n",
        width - 2.0 * pad,
        height - 2.0 * pad
    ));
    svg.push_str(&format!(
        "  <text x=\"{pad}\" y=\"{:.1}\" font-size=\"11\" fill=\"#444\">{:.3}</text>\n",
        height - pad + 14.0,
        lo
    ));
    svg.push_str(&format!(
        "  <text x=\"{pad}\" y=\"{:.1}\" font-size=\"11\" fill=\"#444\">{:.3}</text>\n",
        pad - 6.0,
        hi
    ));
    for (idx, &c) in channels.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut points = String::new();
        for t in 0..l {
            points.push_str(&format!(
                "{:.2},{:.2} ",
                x_of(t),
                y_of(motion.frames[(t, c)] as f64)
            ));
        }
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>\n",
            points.trim_end()
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"{color}\">ch{c}</text>\n",
            width - pad + 4.0,
            pad + 14.0 * idx as f64 + 10.0
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_motion_svg(path: &Path, motion: &MotionSequence, channels: &[usize]) -> Result<()> {
    let svg = motion_svg(motion, channels)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Frame table: one row per frame, one column per channel.
pub fn write_motion_csv(path: &Path, motion: &MotionSequence) -> Result<()> {
    use std::io::Write;
    let pstr = path.display().to_string();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(&pstr, e))?;
    let mut header = String::from("frame");
    for c in 0..motion.frames.ncols() {
        header.push_str(&format!(",c{c}"));
    }
    writeln!(file, "{header}").map_err(|e| Error::io(&pstr, e))?;
    for t in 0..motion.len() {
        let mut row = format!("{t}");
        for c in 0..motion.frames.ncols() {
            row.push_str(&format!(",{:.6}", motion.frames[(t, c)]));
        }
        writeln!(file, "{row}").map_err(|e| Error::io(&pstr, e))?;
    }
    Ok(())
}
