use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use pv_elliptic::curve_periods::{continue_in_phi, solve_boutroux, BoutrouxData, BILINEAR_CONSTANT};
use pv_elliptic::dynamics::{integrate_ray, DetourEvent, InitialCondition, IntegratorStats, PainleveParams};
use pv_elliptic::identities::{run_identities, IdentityReport};
use pv_elliptic::verify::{
    leading_order_ic, run_pipeline, sample_times, ComparisonReport, FrameFit, PipelineInput,
};
use pv_elliptic::{Complex64, Frame};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

/// Whether the run's checks passed.
pub type Outcome = Result<bool, CliError>;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Numerical(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Serialize)]
struct BoutrouxRecord {
    #[serde(flatten)]
    data: BoutrouxData,
    bilinear: Complex64,
    bilinear_error: f64,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct BoutrouxReport {
    bilinear_constant: Complex64,
    records: Vec<BoutrouxRecord>,
    pass: bool,
}

pub fn boutroux(cfg: &RunConfig, out: &Path) -> Outcome {
    let solved = if cfg.boutroux.phi_grid.is_empty() {
        vec![solve_boutroux(cfg.phi, cfg.a_seed).map_err(|e| CliError::Numerical(format!("phi = {}: {e}", cfg.phi)))?]
    } else {
        continue_in_phi(&cfg.boutroux.phi_grid).map_err(|(_, i, e)| {
            CliError::Numerical(format!("grid entry {i} (phi = {}): {e}", cfg.boutroux.phi_grid[i]))
        })?
    };
    let records: Vec<BoutrouxRecord> = solved
        .into_iter()
        .map(|data| {
            let bilinear = data.bilinear();
            let bilinear_error = (bilinear - BILINEAR_CONSTANT).norm() / BILINEAR_CONSTANT.norm();
            let pass = data.residual.0 <= cfg.tolerances.boutroux
                && data.residual.1 <= cfg.tolerances.boutroux
                && data.tau0.im > 0.0
                && bilinear_error <= cfg.tolerances.bilinear;
            BoutrouxRecord {
                data,
                bilinear,
                bilinear_error,
                pass,
            }
        })
        .collect();
    let pass = records.iter().all(|r| r.pass);
    write_json(
        &out.join(&cfg.outputs.report),
        &BoutrouxReport {
            bilinear_constant: BILINEAR_CONSTANT,
            records,
            pass,
        },
    )?;
    Ok(pass)
}

#[derive(Debug, Serialize)]
struct IdentitiesOutput<'a> {
    boutroux: BoutrouxData,
    frame: pv_elliptic::FrameParams,
    #[serde(flatten)]
    report: &'a IdentityReport,
}

pub fn identities(cfg: &RunConfig, out: &Path) -> Outcome {
    let bd = solve_boutroux(cfg.phi, cfg.a_seed).map_err(|e| CliError::Numerical(e.to_string()))?;
    let frame = Frame::new(bd, cfg.seed_frame.x0, cfg.seed_frame.beta0)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let report = run_identities(&frame, &cfg.identity_options()).map_err(|e| CliError::Numerical(e.to_string()))?;
    write_json(
        &out.join(&cfg.outputs.report),
        &IdentitiesOutput {
            boutroux: bd,
            frame: frame.params(),
            report: &report,
        },
    )?;
    Ok(report.pass)
}

pub const VERIFY_COLUMNS: [&str; 13] = [
    "re_x",
    "im_x",
    "re_psi_num",
    "im_psi_num",
    "re_h_num",
    "im_h_num",
    "re_h_pred",
    "im_h_pred",
    "abs_x_delta",
    "re_b_minus_b0",
    "im_b_minus_b0",
    "re_b_corr_pred",
    "im_b_corr_pred",
];

#[derive(Debug, Serialize)]
struct VerifyOutput<'a> {
    boutroux: BoutrouxData,
    ic: InitialCondition,
    detours: usize,
    skipped: usize,
    integrator: IntegratorStats,
    fit: &'a FrameFit,
    comparison: &'a ComparisonReport,
    pass: bool,
}

pub fn verify(cfg: &RunConfig, out: &Path) -> Outcome {
    let input = PipelineInput {
        params: PainleveParams::from(cfg.params),
        phi: cfg.phi,
        a_seed: cfg.a_seed,
        ic: cfg.ic,
        seed_frame: cfg.seed_frame,
        t0: cfg.t0(),
        t_end: cfg.t_end,
        t_inf: cfg.strip.t_inf,
        sample_step: cfg.sample_step,
        integrator: cfg.tolerances.integrator,
        verify: cfg.verify_options(),
    };
    let res = run_pipeline(&input).map_err(|e| CliError::Numerical(e.to_string()))?;
    let g = &res.report.gates;
    let pass = g.w_bounded && g.h_order.pass && g.b_order.pass && g.detailed_order.pass;

    let table = out.join(&cfg.outputs.table);
    let mut w = csv_writer(&table)?;
    w.write_record(VERIFY_COLUMNS).map_err(csv_err(&table))?;
    for r in &res.report.rows {
        let db = r.b_num - r.b0;
        let vals = [
            r.x.re,
            r.x.im,
            r.psi_num.re,
            r.psi_num.im,
            r.h_num.re,
            r.h_num.im,
            r.h_pred.re,
            r.h_pred.im,
            (r.x * r.delta_num).norm(),
            db.re,
            db.im,
            r.b_corr_pred.re,
            r.b_corr_pred.im,
        ];
        w.serialize(vals).map_err(csv_err(&table))?;
    }
    w.flush().map_err(|e| CliError::io(&table, e))?;

    let plot = out.join(&cfg.outputs.plot);
    let f = File::create(&plot).map_err(|e| CliError::io(&plot, e))?;
    let mut p = BufWriter::new(f);
    for r in &res.report.rows {
        writeln!(p, "{} {}", r.x.norm(), (r.x * r.delta_num).norm()).map_err(|e| CliError::io(&plot, e))?;
    }
    p.flush().map_err(|e| CliError::io(&plot, e))?;

    write_json(
        &out.join(&cfg.outputs.report),
        &VerifyOutput {
            boutroux: res.bd,
            ic: res.ic,
            detours: res.trajectory.detours.len(),
            skipped: res.trajectory.skipped.len(),
            integrator: res.trajectory.stats,
            fit: &res.fit,
            comparison: &res.report,
            pass,
        },
    )?;
    Ok(pass)
}

pub const ORBIT_COLUMNS: [&str; 10] = [
    "re_t", "im_t", "re_x", "im_x", "re_y", "im_y", "re_dy", "im_dy", "chart", "after_detour",
];

#[derive(Debug, Serialize)]
struct OrbitOutput<'a> {
    ic: InitialCondition,
    samples: usize,
    skipped: &'a [f64],
    detours: &'a [DetourEvent],
    integrator: IntegratorStats,
}

pub fn orbit(cfg: &RunConfig, out: &Path) -> Outcome {
    let ic = match cfg.ic {
        Some(ic) => ic,
        None => {
            let bd = solve_boutroux(cfg.phi, cfg.a_seed).map_err(|e| CliError::Numerical(e.to_string()))?;
            let frame = Frame::new(bd, cfg.seed_frame.x0, cfg.seed_frame.beta0)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            leading_order_ic(&frame, cfg.t0()).map_err(|e| CliError::Numerical(e.to_string()))?
        }
    };
    let params = PainleveParams::from(cfg.params);
    let outs = sample_times(ic.t0, cfg.t_end, cfg.sample_step);
    let tr = integrate_ray(&ic, cfg.t_end, &params, cfg.phi, &outs, &cfg.tolerances.integrator)
        .map_err(|e| CliError::Numerical(e.to_string()))?;

    let table = out.join(&cfg.outputs.table);
    let mut w = csv_writer(&table)?;
    w.write_record(ORBIT_COLUMNS).map_err(csv_err(&table))?;
    let mut prev = f64::NEG_INFINITY;
    for s in &tr.samples {
        let t = s.t.re;
        let after = tr.detours.iter().any(|d| d.lo >= prev && d.hi <= t);
        prev = t;
        let chart = match s.chart {
            pv_elliptic::dynamics::Chart::Y => "y",
            pv_elliptic::dynamics::Chart::InvY => "inv_y",
        };
        w.write_record([
            s.t.re.to_string(),
            s.t.im.to_string(),
            s.x.re.to_string(),
            s.x.im.to_string(),
            s.y.re.to_string(),
            s.y.im.to_string(),
            s.dy.re.to_string(),
            s.dy.im.to_string(),
            chart.to_string(),
            after.to_string(),
        ])
        .map_err(csv_err(&table))?;
    }
    w.flush().map_err(|e| CliError::io(&table, e))?;
    write_json(
        &out.join(&cfg.outputs.report),
        &OrbitOutput {
            ic,
            samples: tr.samples.len(),
            skipped: &tr.skipped,
            detours: &tr.detours,
            integrator: tr.stats,
        },
    )?;
    Ok(true)
}
