//! Reshape an artifact CSV into long-format `series,x,y` rows for plotting.

use std::collections::HashMap;

use super::{find, ExperimentError, PlotSpec};

/// Convert the text of an artifact CSV. The first line must be the
/// `# experiment=... config_hash=...` stamp.
pub fn emit_plotdata(csv_text: &str) -> Result<String, ExperimentError> {
    let bad = |m: String| ExperimentError::Config(m);
    let (stamp, body) = csv_text.split_once('\n').unwrap_or((csv_text, ""));
    let name = stamp
        .strip_prefix("# experiment=")
        .and_then(|r| r.split_whitespace().next())
        .ok_or_else(|| bad("artifact does not start with an experiment stamp".into()))?;
    let spec = find(name)?.plot;

    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = rd.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
    let col: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let idx = |c: &str| col.get(c).copied().ok_or_else(|| bad(format!("artifact has no column {c:?}")));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "x", "y"]).expect("in-memory write");
    match spec {
        PlotSpec::Columns { x, ys } => {
            let xi = idx(x)?;
            let yis: Vec<(usize, &str)> = ys.iter().map(|y| idx(y).map(|i| (i, *y))).collect::<Result<_, _>>()?;
            let recs: Vec<csv::StringRecord> = rd.records().collect::<Result<_, _>>().map_err(|e| bad(e.to_string()))?;
            for (yi, y) in yis {
                for r in &recs {
                    w.write_record([y, &r[xi], &r[yi]]).expect("in-memory write");
                }
            }
        }
        PlotSpec::Grouped { group, x, y } => {
            let gi: Vec<usize> = group.iter().map(|g| idx(g)).collect::<Result<_, _>>()?;
            let (xi, yi) = (idx(x)?, idx(y)?);
            for r in rd.records() {
                let r = r.map_err(|e| bad(e.to_string()))?;
                let series: Vec<&str> = gi.iter().map(|&i| &r[i]).collect();
                w.write_record([series.join("/").as_str(), &r[xi], &r[yi]]).expect("in-memory write");
            }
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8"))
}
