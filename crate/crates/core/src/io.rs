//! Delimited-text export with `# key = value` metadata headers.
//!
//! Header keys:
//! - grids: `<axis>_center` (rad/ps, absolute), `<axis>_spacing` (rad/ps),
//!   `<axis>_count`, plus `units`;
//! - tables: `columns` lists the comma-separated column names;
//! - histograms: `channels`, and `pixelmap_<channel>` as `center_nm, pitch_nm`;
//! - calibration: the spectrometer fields by name.
//!
//! Data rows are comma-separated; floats use `{:.12e}`.

use std::io::{self, BufRead, Write};

use crate::binned::BinnedMap;
use crate::events::{Channel, CoincidenceHistogram, EventClass, SimulationSummary, TimeTagEvent};
use crate::grid::FrequencyGrid;
use crate::instrument::TofsConfig;
use crate::observables::{FringeTrace, Peak2D};

pub type Header = Vec<(String, String)>;

pub fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

pub fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn write_header<W: Write>(w: &mut W, header: &[(String, String)]) -> io::Result<()> {
    for (k, v) in header {
        writeln!(w, "# {k} = {v}")?;
    }
    Ok(())
}

pub fn grid_header(axis: &str, grid: &FrequencyGrid) -> Header {
    vec![
        kv(&format!("{axis}_center"), fmt(grid.center())),
        kv(&format!("{axis}_spacing"), fmt(grid.spacing())),
        kv(&format!("{axis}_count"), grid.len()),
    ]
}

fn write_row<W: Write>(w: &mut W, vals: impl IntoIterator<Item = String>) -> io::Result<()> {
    let line: Vec<String> = vals.into_iter().collect();
    writeln!(w, "{}", line.join(","))
}

/// Real matrix, one row per first-axis index.
pub fn write_matrix<W: Write>(
    w: &mut W,
    header: &[(String, String)],
    rows: usize,
    cols: usize,
    value: impl Fn(usize, usize) -> f64,
) -> io::Result<()> {
    write_header(w, header)?;
    for i in 0..rows {
        write_row(w, (0..cols).map(|j| fmt(value(i, j))))?;
    }
    Ok(())
}

/// Map on (x, y) grids; rows follow x.
pub fn write_map<W: Write>(w: &mut W, header: &[(String, String)], map: &BinnedMap) -> io::Result<()> {
    let mut h = header.to_vec();
    h.extend(grid_header("x", &map.x));
    h.extend(grid_header("y", &map.y));
    h.push(kv("units", "rad/ps"));
    let (nx, ny) = map.shape();
    write_matrix(w, &h, nx, ny, |i, j| map.get(i, j))
}

pub fn write_trace<W: Write>(w: &mut W, header: &[(String, String)], trace: &FringeTrace) -> io::Result<()> {
    let mut h = header.to_vec();
    h.extend(trace.meta.iter().cloned());
    let with_err = trace.errors.len() == trace.len();
    h.push(kv("columns", if with_err { "tau,value,error" } else { "tau,value" }));
    write_header(w, &h)?;
    for i in 0..trace.len() {
        let mut row = vec![fmt(trace.tau[i]), fmt(trace.values[i])];
        if with_err {
            row.push(fmt(trace.errors[i]));
        }
        write_row(w, row)?;
    }
    Ok(())
}

/// Long format, τ_S outer.
pub fn write_peak2d<W: Write>(w: &mut W, header: &[(String, String)], peak: &Peak2D) -> io::Result<()> {
    let mut h = header.to_vec();
    h.push(kv("tau_s_count", peak.tau_s.len()));
    h.push(kv("tau_i_count", peak.tau_i.len()));
    h.push(kv("columns", "tau_s,tau_i,value"));
    write_header(w, &h)?;
    for (a, &ts) in peak.tau_s.iter().enumerate() {
        for (b, &ti) in peak.tau_i.iter().enumerate() {
            write_row(w, [fmt(ts), fmt(ti), fmt(peak.get(a, b))])?;
        }
    }
    Ok(())
}

pub fn write_summary<W: Write>(w: &mut W, s: &SimulationSummary) -> io::Result<()> {
    writeln!(w, "# summary pulses = {}", s.pulses)?;
    for c in EventClass::ALL {
        writeln!(w, "# summary class_{} = {}", c.label(), s.class_count(c))?;
        writeln!(w, "# summary fourfold_{} = {}", c.label(), s.fourfold_count(c))?;
    }
    writeln!(w, "# summary photons = {}", s.photons)?;
    writeln!(w, "# summary lost_efficiency = {}", s.lost_efficiency)?;
    writeln!(w, "# summary lost_window = {}", s.lost_window)?;
    writeln!(w, "# summary lost_dead_time = {}", s.lost_dead_time)?;
    writeln!(w, "# summary phase_rejected = {}", s.phase_rejected)
}

/// `pulse_index, channel, tag` records with the summary appended as comments.
pub fn write_time_tags<W: Write>(
    w: &mut W,
    header: &[(String, String)],
    events: &[TimeTagEvent],
    summary: Option<&SimulationSummary>,
) -> io::Result<()> {
    let mut h = header.to_vec();
    h.push(kv("columns", "pulse,channel,tag"));
    write_header(w, &h)?;
    for e in events {
        writeln!(w, "{},{},{}", e.pulse, e.channel, e.tag)?;
    }
    if let Some(s) = summary {
        write_summary(w, s)?;
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

/// Comment-header key-value pairs and the non-comment lines split on commas.
pub fn read_table<R: BufRead>(r: R) -> io::Result<(Header, Vec<Vec<String>>)> {
    let mut header = Vec::new();
    let mut rows = Vec::new();
    for line in r.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(c) = t.strip_prefix('#') {
            if let Some((k, v)) = c.split_once('=') {
                header.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        rows.push(t.split(',').map(|s| s.trim().to_string()).collect());
    }
    Ok((header, rows))
}

pub fn read_time_tags<R: BufRead>(r: R) -> io::Result<Vec<TimeTagEvent>> {
    let (_, rows) = read_table(r)?;
    rows.iter()
        .enumerate()
        .map(|(n, row)| {
            if row.len() != 3 {
                return Err(bad(format!("record {}: expected 3 fields", n + 1)));
            }
            let pulse = row[0].parse().map_err(|_| bad(format!("record {}: bad pulse index", n + 1)))?;
            let channel: Channel = row[1].parse().map_err(|_| bad(format!("record {}: bad channel", n + 1)))?;
            let tag = row[2].parse().map_err(|_| bad(format!("record {}: bad tag", n + 1)))?;
            Ok(TimeTagEvent { pulse, channel, tag })
        })
        .collect()
}

pub fn read_trace<R: BufRead>(r: R) -> io::Result<FringeTrace> {
    let (header, rows) = read_table(r)?;
    let mut trace = FringeTrace::default();
    for (k, v) in header {
        if k != "columns" {
            trace.meta.push((k, v));
        }
    }
    let num = |s: &str, n: usize| s.parse::<f64>().map_err(|_| bad(format!("row {n}: bad number '{s}'")));
    let cols = rows.first().map_or(2, |r| r.len());
    if !(2..=3).contains(&cols) {
        return Err(bad("trace needs 2 or 3 columns"));
    }
    for (n, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(bad(format!("row {}: expected {cols} fields", n + 1)));
        }
        trace.tau.push(num(&row[0], n + 1)?);
        trace.values.push(num(&row[1], n + 1)?);
        if cols == 3 {
            trace.errors.push(num(&row[2], n + 1)?);
        }
    }
    Ok(trace)
}

/// Sparse `(pixel, ..., count)` lines with the pixel maps in the header.
pub fn write_histogram<W: Write>(w: &mut W, header: &[(String, String)], hist: &CoincidenceHistogram) -> io::Result<()> {
    let mut h = header.to_vec();
    let names: Vec<&str> = hist.channels.iter().map(|c| c.label()).collect();
    h.push(kv("channels", names.join(",")));
    for (c, m) in hist.channels.iter().zip(&hist.maps) {
        h.push(kv(
            &format!("pixelmap_{c}"),
            format!("{}, {}", fmt(m.center_wavelength), fmt(m.pitch)),
        ));
    }
    h.push(kv("total", hist.total()));
    h.push(kv("columns", format!("{},count", names.join(","))));
    write_header(w, &h)?;
    for (k, v) in &hist.counts {
        write_row(w, k.iter().map(|p| p.to_string()).chain(std::iter::once(v.to_string())))?;
    }
    Ok(())
}

pub fn tofs_header(cfg: &TofsConfig) -> Header {
    vec![
        kv("dispersion_ps_per_nm", fmt(cfg.dispersion)),
        kv("center_wavelength_nm", fmt(cfg.center_wavelength)),
        kv("jitter_fwhm_ps", fmt(cfg.jitter_fwhm)),
        kv("tdc_bin_ps", fmt(cfg.tdc_bin)),
        kv("window_nm", fmt(cfg.window)),
        kv("insertion_loss_db", fmt(cfg.insertion_loss_db)),
        kv("clock_offset_ps", fmt(cfg.clock_offset)),
        kv("resolution_nm", fmt(cfg.spectral_resolution())),
    ]
}

/// Pixel to wavelength table over `lo..=hi`; pixel 0 is the center wavelength.
pub fn write_calibration<W: Write>(w: &mut W, cfg: &TofsConfig, lo: i64, hi: i64) -> io::Result<()> {
    let mut h = tofs_header(cfg);
    h.push(kv("columns", "pixel,wavelength_nm"));
    write_header(w, &h)?;
    let map = cfg.pixel_map();
    for p in lo..=hi {
        write_row(w, [p.to_string(), fmt(map.wavelength(p))])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn trace_round_trip() {
        let mut t = FringeTrace::new(vec![-1.0, 0.0, 1.5], vec![0.25, 0.5, 1.0 / 3.0]).with_meta("kind", "test");
        t.errors = vec![0.1, 0.2, 0.3];
        let mut buf = Vec::new();
        write_trace(&mut buf, &[kv("seed", 4)], &t).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back.tau, t.tau);
        assert!(back.values.iter().zip(&t.values).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(back.errors.len(), 3);
        assert!(back.meta.contains(&("kind".into(), "test".into())));
    }

    #[test]
    fn time_tags_round_trip() {
        let ev = vec![
            TimeTagEvent {
                pulse: 3,
                channel: Channel::C,
                tag: 310,
            },
            TimeTagEvent {
                pulse: 3,
                channel: Channel::Y,
                tag: -2,
            },
        ];
        let mut buf = Vec::new();
        write_time_tags(&mut buf, &[], &ev, Some(&SimulationSummary::default())).unwrap();
        let s = String::from_utf8(buf.clone()).unwrap();
        assert!(s.contains("3,c,310") && s.contains("# summary lost_window = 0"));
        assert_eq!(read_time_tags(buf.as_slice()).unwrap(), ev);
        assert!(read_time_tags("1,Q,3\n".as_bytes()).is_err());
    }

    #[test]
    fn histogram_lines() {
        let cfg = TofsConfig::cfbg();
        let mut counts = BTreeMap::new();
        counts.insert(vec![-3, 5], 7);
        let h = CoincidenceHistogram {
            channels: vec![Channel::C, Channel::D],
            maps: vec![cfg.pixel_map(); 2],
            counts,
        };
        let mut buf = Vec::new();
        write_histogram(&mut buf, &[], &h).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("# channels = c,d") && s.contains("\n-3,5,7\n"));
    }

    #[test]
    fn calibration_table() {
        let mut buf = Vec::new();
        write_calibration(&mut buf, &TofsConfig::cfbg(), -1, 1).unwrap();
        let (h, rows) = read_table(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 3);
        let lam: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
        assert!((lam[1] - 830.0).abs() < 1e-12 && (lam[2] - lam[1] - 0.1).abs() < 1e-9);
        assert!(h.iter().any(|(k, v)| k == "resolution_nm" && v.parse::<f64>().unwrap() == 0.1));
    }
}
