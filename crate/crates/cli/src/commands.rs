//! One function per subcommand. Each writes its data files into `out` and
//! returns lines for the terminal.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::Write;

use tfswap_core::analysis::{fit_fringes, select_orthogonal, symmetrize_jsi, visibility, FitModel, FringeFit, OverlapMatrix};
use tfswap_core::distinguish::{overlap, pump_phase_fringes, vjk};
use tfswap_core::events::{histogram, scan, subtract_background, ExperimentConfig, HeraldBins, ScanAxis, ScanOutput, ScanSpec, Simulator};
use tfswap_core::heralding::{gaussian_pjk, herald};
use tfswap_core::io::{self, fmt, kv, Header};
use tfswap_core::mixed::{hom_purity_bound, mixed_heralded_state, BandQuadrature, FilterBank};
use tfswap_core::observables::{fringes_pjk, heralded_jsi, peak2d, summed_jsi, FringeTrace};
use tfswap_core::schmidt::{schmidt_decompose, schmidt_with_detector_blur};
use tfswap_core::units::rad_per_ps_per_nm;
use tfswap_core::{BinnedMap, Channel, HeraldSetting, JointSpectralAmplitude};

use crate::config::RunConfig;
use crate::output::Output;
use crate::CliError;

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub emit_fit: bool,
}

type Lines = Vec<String>;

fn base_header(ctx: &Context, command: &str) -> Header {
    vec![kv("command", command), kv("config_hash", ctx.cfg.hash()), kv("seed", ctx.cfg.seed)]
}

fn fit_header(fit: &FringeFit) -> Header {
    fit.report().into_iter().map(|(k, v)| (format!("fit_{k}"), v)).collect()
}

fn fit_lines(fit: &FringeFit) -> Lines {
    fit.report().into_iter().map(|(k, v)| format!("{k} = {v}")).collect()
}

fn setting(cfg: &RunConfig, tau_i: f64) -> HeraldSetting {
    HeraldSetting::new(cfg.bin_detuning(cfg.bins.0), cfg.bin_detuning(cfg.bins.1), tau_i)
}

fn write_trace(out: &mut Output, name: &str, header: Header, trace: &FringeTrace) -> Result<(), CliError> {
    out.write(name, |w| io::write_trace(w, &header, trace))?;
    Ok(())
}

pub fn jsa(ctx: &Context, out: &mut Output) -> Result<Lines, CliError> {
    let jsa = ctx.cfg.jsa()?;
    let (sg, ig) = (jsa.signal_grid().clone(), jsa.idler_grid().clone());
    let s = jsa.sample();
    let n = ig.len();
    let mut h = base_header(ctx, "jsa");
    h.extend(io::grid_header("signal", &sg));
    h.extend(io::grid_header("idler", &ig));
    h.push(kv("units", "rad/ps"));
    h.push(kv("rows", "signal"));
    for (name, part) in [("jsa_real.csv", 0), ("jsa_imag.csv", 1)] {
        let mut hh = h.clone();
        hh.push(kv("part", if part == 0 { "real" } else { "imag" }));
        out.write(name, |w| {
            io::write_matrix(
                w,
                &hh,
                sg.len(),
                n,
                |i, j| if part == 0 { s[i * n + j].re } else { s[i * n + j].im },
            )
        })?;
    }
    let jsi = BinnedMap::new(sg, ig, s.iter().map(|a| a.norm_sqr()).collect())?;
    out.write("jsi.csv", |w| io::write_map(w, &base_header(ctx, "jsa"), &jsi))?;
    let (ms, mi) = jsa.marginal_stds();
    Ok(vec![format!("signal_std = {ms:.6} rad/ps"), format!("idler_std = {mi:.6} rad/ps")])
}

pub fn schmidt(ctx: &Context, out: &mut Output) -> Result<Lines, CliError> {
    let jsa = ctx.cfg.jsa()?;
    let sd = schmidt_decompose(&jsa);
    let tofs = &ctx.cfg.spectrometer;
    let blur = tofs.composite_sigma() / tofs.dispersion * rad_per_ps_per_nm(ctx.cfg.center_wavelength);
    let blurred = schmidt_with_detector_blur(&jsa, blur, blur)?;
    let mut h = base_header(ctx, "schmidt");
    h.push(kv("schmidt_number", format!("{:.10}", sd.schmidt_number)));
    h.push(kv("detector_blur", fmt(blur)));
    h.push(kv("schmidt_number_blurred", format!("{:.10}", blurred.schmidt_number)));
    h.push(kv("columns", "n,singular_value,weight"));
    out.write("schmidt.csv", |w| {
        io::write_header(w, &h)?;
        for (i, s) in sd.singular_values.iter().take(64).enumerate() {
            writeln!(w, "{i},{},{}", fmt(*s), fmt(s * s))?;
        }
        Ok(())
    })?;
    Ok(vec![
        format!("K = {:.6}", sd.schmidt_number),
        format!("K_blurred = {:.6}", blurred.schmidt_number),
    ])
}

pub fn pjk_map(ctx: &Context, out: &mut Output) -> Result<Lines, CliError> {
    let cfg = ctx.cfg;
    let jsa = cfg.jsa()?;
    let map = cfg.spectrometer.pixel_map();
    let tau_i = cfg.tau_i.start;
    let pixels: Vec<i64> = (-cfg.map_pixels..=cfg.map_pixels).step_by(cfg.map_stride as usize).collect();
    let det: Vec<f64> = pixels.iter().map(|&p| map.detuning(p)).collect();
    let n = pixels.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let s = HeraldSetting::new(det[i], det[j], tau_i);
            values[i * n + j] = match gaussian_pjk(&jsa, s) {
                Some(p) => p,
                None => herald(&jsa, s).map(|h| h.pjk).unwrap_or(0.0),
            };
        }
    }
    let mut h = base_header(ctx, "pjk-map");
    h.push(kv("pixel_center_nm", fmt(map.center_wavelength)));
    h.push(kv("pixel_pitch_nm", fmt(map.pitch)));
    h.push(kv("pixel_first", pixels[0]));
    h.push(kv("pixel_stride", cfg.map_stride));
    h.push(kv("pixel_count", n));
    h.push(kv("tau_i", fmt(tau_i)));
    h.push(kv("rows", "herald c pixel"));
    h.push(kv("cols", "herald d pixel"));
    out.write("pjk_map.csv", |w| io::write_matrix(w, &h, n, n, |i, j| values[i * n + j]))?;
    out.write("calibration.csv", |w| {
        io::write_calibration(w, &cfg.spectrometer, pixels[0], pixels[n - 1])
    })?;
    let (imax, vmax) = values
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    Ok(vec![format!(
        "max p_jk = {vmax:.6e} at pixels ({}, {})",
        pixels[imax / n],
        pixels[imax % n]
    )])
}

pub fn herald_jsi(ctx: &Context, out: &mut Output) -> Result<Lines, CliError> {
    let cfg = ctx.cfg;
    let jsa = cfg.jsa()?;
    let state = herald(&jsa, setting(cfg, cfg.tau_i.start))?;
    let map = heralded_jsi(&state);
    let mut h = base_header(ctx, "herald-jsi");
    h.push(kv("bins", format!("{},{}", cfg.bins.0, cfg.bins.1)));
    h.push(kv("omega_j", fmt(state.setting.omega_j)));
    h.push(kv("omega_k", fmt(state.setting.omega_k)));
    h.push(kv("pjk", fmt(state.pjk)));
    out.write("herald_jsi.csv", |w| io::write_map(w, &h, &map))?;
    Ok(vec![format!("p_jk = {:.6e}", state.pjk)])
}

pub fn summed_jsi_cmd(ctx: &Context, out: &mut Output) -> Result<Lines, CliError> {
    let jsa = ctx.cfg.jsa()?;
    let tau_i = ctx.cfg.tau_i.start;
    let map = summed_jsi(&jsa, tau_i)?;
    let mut h = base_header(ctx, "summed-jsi");
    h.push(kv("tau_i", fmt(tau_i)));
    out.write("summed_jsi.csv", |w| io::write_map(w, &h, &map))?;
    Ok(vec![format!("sum = {:.6e}", map.sum())])
}

pub fn fringes(ctx: &Context, out: &mut Output) -> Result<Lines, CliError> {
    let cfg = ctx.cfg;
    let jsa = cfg.jsa()?;
    let state = herald(&jsa, setting(cfg, cfg.tau_i.start))?;
    let trace = fringes_pjk(&jsa, &state, &cfg.tau_s.values(), cfg.fringe_model)?;
    let mut h = base_header(ctx, "fringes");
    h.push(kv("bins", format!("{},{}", cfg.bins.0, cfg.bins.1)));
    let mut lines = vec![format!("p_jk = {:.6e}", state.pjk)];
    if ctx.emit_fit {
        let fit = fit_fringes(&trace, cfg.fit_model)?;
        h.extend(fit_header(&fit));
        lines.extend(fit_lines(&fit));
    }
    write_trace(out, "fringes.csv", h, &trace)?;
    Ok(lines)
}

pub fn peak(ctx: &Context, out: &mut Output) -> Result<Lines, CliError> {
    let cfg = ctx.cfg;
    let jsa = cfg.jsa()?;
    let tau_i = cfg.tau_i.start;
    let p = peak2d(&jsa, &cfg.tau_s.values(), &[tau_i])?;
    let trace = FringeTrace::new(p.tau_s.clone(), p.values.clone()).with_meta("tau_i", tau_i);
    let mut h = base_header(ctx, "peak");
    let mut lines = vec![format!("P_max = {:.8}", trace.max()), format!("P_min = {:.8}", trace.min())];
    if ctx.emit_fit {
        let fit = fit_fringes(&trace, FitModel::Degenerate)?;
        h.extend(fit_header(&fit));
        lines.extend(fit_lines(&fit));
    }
    write_trace(out, "peak.csv", h, &trace)?;
    Ok(lines)
}

pub fn peak2d_cmd(ctx: &Context, out: &mut Output) -> Result<Lines, CliError> {
    let cfg = ctx.cfg;
    let jsa = cfg.jsa()?;
    let p = peak2d(&jsa, &cfg.tau_s.values(), &cfg.tau_i.values())?;
    out.write("peak2d.csv", |w| io::write_peak2d(w, &base_header(ctx, "peak2d"), &p))?;
    let m = p.values.iter().cloned().fold(f64::MIN, f64::max);
    Ok(vec![format!("P_max = {m:.8}")])
}

pub fn waterfall(ctx: &Context, out: &mut Output) -> Result<Lines, CliError> {
    let cfg = ctx.cfg;
    let jsa = cfg.jsa()?;
    let taus = cfg.tau_s.values();
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for ti in cfg.tau_i.values() {
        let state = herald(&jsa, setting(cfg, ti))?;
        let trace = fringes_pjk(&jsa, &state, &taus, cfg.fringe_model)?;
        if ctx.emit_fit {
            fits.push((ti, fit_fringes(&trace, FitModel::Delayed)?));
        }
        rows.push((ti, trace));
    }
    let mut h = base_header(ctx, "waterfall");
    h.push(kv("bins", format!("{},{}", cfg.bins.0, cfg.bins.1)));
    h.push(kv("columns", "tau_i,tau_s,value"));
    out.write("waterfall.csv", |w| {
        io::write_header(w, &h)?;
        for (ti, t) in &rows {
            for (s, v) in t.tau.iter().zip(&t.values) {
                writeln!(w, "{},{},{}", fmt(*ti), fmt(*s), fmt(*v))?;
            }
        }
        Ok(())
    })?;
    if ctx.emit_fit {
        let mut h = base_header(ctx, "waterfall");
        h.push(kv("columns", "tau_i,visibility,frequency,phase,envelope,phase_err"));
        out.write("waterfall_fit.csv", |w| {
            io::write_header(w, &h)?;
            for (ti, f) in &fits {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    fmt(*ti),
                    fmt(f.visibility),
                    fmt(f.frequency),
                    fmt(f.phase),
                    fmt(f.envelope),
                    fmt(f.errors.phase)
                )?;
            }
            Ok(())
        })?;
    }
    Ok(vec![format!("{} delay rows", rows.len())])
}

pub fn experiment(cfg: &RunConfig) -> Result<ExperimentConfig, CliError> {
    let jsa = cfg.jsa()?;
    let mut e = ExperimentConfig::new(cfg.source_pair(&jsa)?);
    e.eta1 = cfg.eta1;
    e.eta2 = cfg.eta2;
    e.tau_s = cfg.tau_s.start;
    e.tau_i = cfg.tau_i.start;
    e.phase = cfg.pump_phase;
    e.channels = [cfg.spectrometer; 4];
    e.efficiency = cfg.efficiency;
    e.pulses = cfg.pulses;
    e.seed = cfg.seed;
    e.validate()?;
    Ok(e)
}

/// Pixel range of herald bin `j` on the idler spectrometers.
fn herald_pixels(cfg: &RunConfig, j: i64) -> (i64, i64) {
    let p = cfg.spectrometer.pixel_map().pixel(cfg.center_wavelength + j as f64 * cfg.bin_pitch);
    let half = cfg.herald_width / 2;
    (p - half, p + half)
}

pub fn simulate(ctx: &Context, out: &mut Output) -> Result<Lines, CliError> {
    let cfg = ctx.cfg;
    let e = experiment(cfg)?;
    let run = Simulator::new(e.clone())?.run()?;
    let mut h = base_header(ctx, "simulate");
    h.push(kv("tau_s", fmt(e.tau_s)));
    h.push(kv("tau_i", fmt(e.tau_i)));
    h.push(kv("pulses", e.pulses));
    h.push(kv("weight", fmt(run.weight)));
    h.extend(io::tofs_header(&cfg.spectrometer));
    out.write("time_tags.csv", |w| io::write_time_tags(w, &h, &run.events, Some(&run.summary)))?;
    let four = histogram(&run.events, &e.channels, &Channel::ALL, cfg.coincidence_window)?;
    out.write("fourfold_hist.csv", |w| {
        io::write_histogram(w, &base_header(ctx, "simulate"), &four)
    })?;
    let two = histogram(&run.events, &e.channels, &[Channel::C, Channel::D], cfg.coincidence_window)?;
    out.write("herald_hist.csv", |w| io::write_histogram(w, &base_header(ctx, "simulate"), &two))?;
    Ok(vec![
        format!("events = {}", run.events.len()),
        format!("fourfold = {}", four.total()),
        format!("herald_twofold = {}", two.total()),
    ])
}

pub fn background(ctx: &Context, out: &mut Output) -> Result<Lines, CliError> {
    let cfg = ctx.cfg;
    let e = experiment(cfg)?;
    let spec = ScanSpec {
        axis: ScanAxis::Signal,
        tau_s: cfg.tau_s.values(),
        tau_i: vec![cfg.tau_i.start],
        herald: Some(HeraldBins {
            c: herald_pixels(cfg, cfg.bins.0),
            d: herald_pixels(cfg, cfg.bins.1),
        }),
        conditional: false,
        window: cfg.coincidence_window,
    };
    let trace = |e: &ExperimentConfig| -> Result<FringeTrace, CliError> {
        match scan(e, &spec)? {
            ScanOutput::Trace(t) => Ok(t),
            ScanOutput::Map { .. } => unreachable!("signal scans give traces"),
        }
    };
    let signal = trace(&e)?;
    let only1 = trace(&ExperimentConfig { eta2: 0.0, ..e.clone() })?;
    let only2 = trace(&ExperimentConfig { eta1: 0.0, ..e.clone() })?;
    let sub = subtract_background(&signal, &[&only1, &only2])?;
    for (name, t) in [("signal.csv", &signal), ("source1_only.csv", &only1), ("source2_only.csv", &only2)] {
        write_trace(out, name, base_header(ctx, "subtract-background"), t)?;
    }
    let mut h = base_header(ctx, "subtract-background");
    let mut lines = Vec::new();
    if ctx.emit_fit {
        let fit = fit_fringes(&sub, cfg.fit_model)?;
        h.extend(fit_header(&fit));
        lines.extend(fit_lines(&fit));
    }
    write_trace(out, "subtracted.csv", h, &sub)?;
    let total: f64 = signal.values.iter().sum();
    let bg: f64 = only1.values.iter().chain(&only2.values).sum();
    if total > 0.0 {
        lines.push(format!("background_fraction = {:.6}", bg / total));
    }
    Ok(lines)
}

pub fn purity(ctx: &Context, out: &mut Output) -> Result<Lines, CliError> {
    let cfg = ctx.cfg;
    let jsa = cfg.jsa()?;
    let q = BandQuadrature::default();
    let (wj, wk) = (cfg.bin_detuning(cfg.bins.0), cfg.bin_detuning(cfg.bins.1));
    let mut rows = Vec::new();
    for &width in &cfg.purity_widths {
        let bank = cfg.filter_bank(width, &jsa)?;
        let nearest = |w: f64| {
            let c = bank.centers();
            let l = (0..c.len())
                .min_by(|&a, &b| (c[a] - w).abs().total_cmp(&(c[b] - w).abs()))
                .unwrap_or(0);
            bank.filter(l)
        };
        let (fj, fk) = (nearest(wj), nearest(wk));
        let bound = hom_purity_bound(&jsa, &fj, &fj, &q);
        let state = mixed_heralded_state(&jsa, &fj, &fk, cfg.tau_i.start, &q)?;
        let p = if state.is_empty() { 0.0 } else { state.purity() };
        rows.push((width, bound, p));
    }
    let full = FilterBank::full_band(jsa.idler_grid()).filter(0);
    let full_bound = hom_purity_bound(&jsa, &full, &full, &q);
    let mut h = base_header(ctx, "purity");
    h.push(kv("filter_shape", &cfg.filter_shape));
    h.push(kv("filter_sigma_nm", fmt(cfg.filter_sigma)));
    h.push(kv("band_centers", format!("{},{}", fmt(wj), fmt(wk))));
    h.push(kv("full_band_bound", fmt(full_bound)));
    h.push(kv("columns", "width_nm,hom_bound,state_purity"));
    out.write("purity.csv", |w| {
        io::write_header(w, &h)?;
        for (a, b, c) in &rows {
            writeln!(w, "{},{},{}", fmt(*a), fmt(*b), fmt(*c))?;
        }
        Ok(())
    })?;
    let mut lines = vec![format!("full_band_bound = {full_bound:.6}")];
    lines.extend(rows.iter().map(|(a, b, _)| format!("bound({a} nm) = {b:.6}")));
    Ok(lines)
}

pub fn distinguishability(ctx: &Context, out: &mut Output) -> Result<Lines, CliError> {
    let cfg = ctx.cfg;
    let jsa = cfg.jsa()?;
    let pair = cfg.source_pair(&jsa)?;
    let o = overlap(&pair)?;
    let n = cfg.phase_points;
    let phases: Vec<f64> = (0..n).map(|i| 2.0 * TAU * i as f64 / (n - 1) as f64).collect();
    let (two, four) = pump_phase_fringes(&pair, cfg.pairing, &phases)?;
    let v2 = visibility(&two)?;
    let v4 = visibility(&four)?;
    let mut h = base_header(ctx, "distinguishability");
    h.push(kv("overlap", fmt(o.norm())));
    h.push(kv(
        "source2_offset",
        format!("{},{}", fmt(pair.offsets()[0]), fmt(pair.offsets()[1])),
    ));
    let mut h2 = h.clone();
    h2.push(kv("visibility", fmt(v2.value)));
    write_trace(out, "twofold.csv", h2, &two)?;
    let mut h4 = h.clone();
    h4.push(kv("visibility", fmt(v4.value)));
    write_trace(out, "fourfold.csv", h4, &four)?;
    let half = (cfg.ortho_bins / 2) as i64;
    let bins: Vec<i64> = (-half..=half).collect();
    let mut vals = Vec::new();
    for &j in &bins {
        for &k in &bins {
            vals.push(if j == k {
                0.0
            } else {
                vjk(&pair, cfg.bin_detuning(j), cfg.bin_detuning(k))?
            });
        }
    }
    let m = bins.len();
    let mut hv = h.clone();
    hv.push(kv("bin_first", bins[0]));
    hv.push(kv("bin_pitch_nm", fmt(cfg.bin_pitch)));
    hv.push(kv("diagonal", "unused"));
    out.write("vjk.csv", |w| io::write_matrix(w, &hv, m, m, |i, j| vals[i * m + j]))?;
    let vmin = vals.iter().cloned().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    Ok(vec![
        format!("overlap = {:.6}", o.norm()),
        format!("twofold_visibility = {:.6}", v2.value),
        format!("fourfold_visibility = {:.6}", v4.value),
        format!("min_vjk = {vmin:.6}"),
    ])
}

/// Heralded JSIs of every bin pair on a comb of `ortho_bins` bins.
pub fn ortho_maps(cfg: &RunConfig, jsa: &JointSpectralAmplitude) -> Result<BTreeMap<(i64, i64), BinnedMap>, CliError> {
    let n = cfg.ortho_bins as i64;
    let c = tfswap_core::units::angular_frequency(cfg.center_wavelength);
    let omega =
        |j: i64| tfswap_core::units::angular_frequency(cfg.center_wavelength + (j as f64 - 0.5 * (n - 1) as f64) * cfg.ortho_pitch) - c;
    let mut maps = BTreeMap::new();
    for j in 0..n {
        for k in 0..n {
            if j != k {
                let s = herald(jsa, HeraldSetting::new(omega(j), omega(k), cfg.tau_i.start))?;
                maps.insert((j, k), heralded_jsi(&s));
            }
        }
    }
    Ok(maps)
}

pub fn orthomodes(ctx: &Context, out: &mut Output) -> Result<Lines, CliError> {
    let cfg = ctx.cfg;
    let jsa = cfg.jsa()?;
    let modes = symmetrize_jsi(&ortho_maps(cfg, &jsa)?)?;
    let o = OverlapMatrix::from_maps(&modes, cfg.overlap_norm)?;
    let sets = select_orthogonal(&o, cfg.ortho_threshold)?;
    let label = |l: &(i64, i64)| format!("{}:{}", l.0, l.1);
    let mut h = base_header(ctx, "orthomodes");
    h.push(kv("labels", o.labels.iter().map(label).collect::<Vec<_>>().join(",")));
    h.push(kv("normalization", format!("{:?}", cfg.overlap_norm).to_lowercase()));
    let n = o.len();
    out.write("overlaps.csv", |w| io::write_matrix(w, &h, n, n, |i, j| o.get(i, j)))?;
    let mut hs = base_header(ctx, "orthomodes");
    hs.push(kv("threshold", fmt(cfg.ortho_threshold)));
    hs.push(kv("columns", "size,max_overlap,modes"));
    out.write("subsets.csv", |w| {
        io::write_header(w, &hs)?;
        for s in &sets {
            let names: Vec<String> = s.labels.iter().map(label).collect();
            writeln!(w, "{},{},{}", s.labels.len(), fmt(s.max_overlap), names.join(" "))?;
        }
        Ok(())
    })?;
    let best = sets.first().map_or(0, |s| s.labels.len());
    let count = sets.iter().filter(|s| s.labels.len() == best).count();
    Ok(vec![format!("largest subset = {best} modes ({count} sets)")])
}
