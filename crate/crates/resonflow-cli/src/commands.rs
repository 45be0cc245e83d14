use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use resonflow::atommodel::ProblemParams;
use resonflow::oracle::{ground_state_energy, resonance_at, resonance_by_dilation, GroundState, PlateauReport};
use resonflow::resonance::{fgr_condition, zd_zod, FgrReport, LevelShift};
use resonflow::rgflow::{attach_eigenvector, resume_flow, run_flow, FamilyModel, FlowModel, FlowRecord, FlowRun};
use serde::{Deserialize, Serialize};

use crate::config::{Setup, SweepKind};
use crate::output::{shifts_csv, spectrum_csv, Outputs, SpectrumRow};
use crate::snapshot;

/// Outcome of a command: the staged files and whether the computation
/// itself succeeded.
pub struct Done {
    pub outputs: Outputs,
    pub ok: bool,
}

#[derive(Serialize, Deserialize)]
pub struct FlowFile {
    pub config_hash: String,
    pub record: FlowRecord,
}

#[derive(Serialize)]
struct OracleFile<'a> {
    config_hash: &'a str,
    plateau: Option<PlateauReport>,
    error: Option<String>,
}

#[derive(Serialize)]
struct FgrFile<'a> {
    config_hash: &'a str,
    fgr: FgrReport,
    shift: LevelShift,
    verdict: &'a str,
}

#[derive(Serialize)]
struct SweepPoint {
    p: [C64; 3],
    lambda0: f64,
    vartheta: f64,
    z: Option<C64>,
    ground: Option<GroundState>,
    record: Option<FlowRecord>,
    error: Option<String>,
}

#[derive(Serialize)]
struct SweepFile<'a> {
    config_hash: &'a str,
    kind: SweepKind,
    points: Vec<SweepPoint>,
}

fn guess(s: &Setup, prm: &ProblemParams) -> C64 {
    let e = C64::new(s.atom.energies[prm.level()], 0.0);
    match zd_zod(&s.atom, prm, &s.grid) {
        Ok(sh) => e + sh.second_order() * prm.lambda0 * prm.lambda0,
        Err(_) => e,
    }
}

fn add_shifts(out: &mut Outputs, s: &Setup) -> Option<(LevelShift, FgrReport)> {
    let sh = zd_zod(&s.atom, &s.params, &s.grid).ok()?;
    let f = fgr_condition(&s.atom, &s.params).ok()?;
    out.add("shifts.csv", shifts_csv(&s.hash, sh.z_d, sh.z_od, sh.im_zod_residue, f.value, f.holds));
    Some((sh, f))
}

/// Models and record of an earlier run, from `kernels/<j>.bin` and the
/// `flow.json` one directory up.
pub fn load_resume(s: &Setup, snap: &Path) -> Result<(FlowRecord, Vec<FamilyModel>)> {
    let stem = snap.file_stem().and_then(|x| x.to_str()).context("snapshot name must be <j>.bin")?;
    let last: usize = stem.parse().context("snapshot name must be <j>.bin")?;
    let dir = snap.parent().context("snapshot has no directory")?;
    let mut models = Vec::new();
    for j in 0..=last {
        let p = dir.join(format!("{j}.bin"));
        let bytes = std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
        let (m, h) = snapshot::decode(&bytes).with_context(|| format!("decoding {}", p.display()))?;
        ensure!(h == s.hash, "{} was written with config {h}, not {}", p.display(), s.hash);
        ensure!(m.step == j, "{} holds step {}", p.display(), m.step);
        models.push(m);
    }
    let flow = dir.parent().unwrap_or(Path::new(".")).join("flow.json");
    let text = std::fs::read_to_string(&flow).with_context(|| format!("reading {}", flow.display()))?;
    let file: FlowFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", flow.display()))?;
    ensure!(file.config_hash == s.hash, "flow.json belongs to config {}", file.config_hash);
    ensure!(file.record.steps.len() > last, "flow.json has only {} steps", file.record.steps.len());
    let mut record = file.record;
    record.z_inf = None;
    record.enclosure = None;
    record.converged = false;
    record.eigen_residual = None;
    record.psi_minus_omega = None;
    record.error = None;
    Ok((record, models))
}

fn flow_model(s: &Setup, prm: ProblemParams) -> Result<FlowModel> {
    Ok(FlowModel::new(s.atom.clone(), prm, s.basis.clone(), s.opts.clone())?)
}

pub fn flow(s: &Setup, resume: Option<(FlowRecord, Vec<FamilyModel>)>) -> Result<Done> {
    let m = flow_model(s, s.params.clone())?;
    let mut run: FlowRun = match resume {
        Some((rec, models)) => resume_flow(&m, rec, models),
        None => run_flow(&m),
    };
    if run.record.converged {
        // a failed reconstruction leaves the fields empty
        let _ = attach_eigenvector(&m, &mut run);
    }
    let mut out = Outputs::default();
    out.json("flow.json", &FlowFile { config_hash: s.hash.clone(), record: run.record.clone() });
    for model in &run.models {
        out.add(format!("kernels/{}.bin", model.step), snapshot::encode(model, &s.hash));
    }
    let rows: Vec<SpectrumRow> = run
        .record
        .z_inf
        .iter()
        .map(|&z| SpectrumRow { source: "flow", z, vartheta: s.params.vartheta(), lambda0: s.params.lambda0, p: s.params.p })
        .collect();
    out.add("spectrum.csv", spectrum_csv(&s.hash, &rows));
    add_shifts(&mut out, s);
    Ok(Done { outputs: out, ok: run.record.error.is_none() })
}

pub fn oracle(s: &Setup) -> Result<Done> {
    let g = guess(s, &s.params);
    let res = resonance_by_dilation(&s.atom, &s.params, &s.basis, &s.config.oracle.thetas, Some(g));
    let mut out = Outputs::default();
    let ok = res.is_ok();
    let rows: Vec<SpectrumRow> = match &res {
        Ok(rep) => rep
            .thetas
            .iter()
            .zip(&rep.values)
            .map(|(&t, &z)| SpectrumRow { source: "oracle", z, vartheta: t, lambda0: s.params.lambda0, p: s.params.p })
            .collect(),
        Err(_) => vec![],
    };
    out.add("spectrum.csv", spectrum_csv(&s.hash, &rows));
    let (plateau, error) = match res {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    out.json("oracle.json", &OracleFile { config_hash: &s.hash, plateau, error });
    add_shifts(&mut out, s);
    Ok(Done { outputs: out, ok })
}

pub const FGR_FAILS: &str = "FGR fails, no width predicted";

pub fn fgr(s: &Setup) -> Result<Done> {
    let mut out = Outputs::default();
    let Some((shift, f)) = add_shifts(&mut out, s) else {
        bail!("the level shifts cannot be evaluated for this configuration (complex momentum or a grid node on a pole)");
    };
    let verdict = if f.holds { "FGR holds, width predicted" } else { FGR_FAILS };
    println!("{verdict}");
    out.json("fgr.json", &FgrFile { config_hash: &s.hash, fgr: f, shift, verdict });
    Ok(Done { outputs: out, ok: true })
}

fn sweep_points(s: &Setup) -> Vec<([C64; 3], f64, f64)> {
    let sw = s.config.sweep.as_ref().expect("checked by caller");
    let ps: Vec<[C64; 3]> = if sw.p_grid.is_empty() { vec![s.params.p] } else { sw.p_grid.iter().map(|&p| ProblemParams::real_p(p)).collect() };
    let ls = if sw.lambdas.is_empty() { vec![s.params.lambda0] } else { sw.lambdas.clone() };
    let vs = if sw.varthetas.is_empty() { vec![s.params.vartheta()] } else { sw.varthetas.clone() };
    let mut pts = Vec::new();
    for p in &ps {
        for &l in &ls {
            for &v in &vs {
                pts.push((*p, l, v));
            }
        }
    }
    pts
}

pub fn sweep(s: &Setup) -> Result<Done> {
    let Some(sw) = &s.config.sweep else {
        bail!("the sweep command needs a [sweep] table");
    };
    let kind = sw.kind;
    let pts = sweep_points(s);
    let results: Vec<SweepPoint> = pts
        .par_iter()
        .map(|&(p, lambda0, vartheta)| {
            let mut pt = SweepPoint { p, lambda0, vartheta, z: None, ground: None, record: None, error: None };
            let prm = match s.config.problem(&s.atom, lambda0, vartheta, p) {
                Ok(x) => x,
                Err(e) => {
                    pt.error = Some(e.to_string());
                    return pt;
                }
            };
            match kind {
                SweepKind::Dispersion => {
                    let mut q = prm;
                    q.theta = C64::new(0.0, 0.0);
                    pt.vartheta = 0.0;
                    match ground_state_energy(&s.atom, &q, &s.basis) {
                        Ok(g) => {
                            pt.z = Some(C64::new(g.energy, 0.0));
                            pt.ground = Some(g);
                        }
                        Err(e) => pt.error = Some(e.to_string()),
                    }
                }
                SweepKind::Flow => match flow_model(s, prm) {
                    Ok(m) => {
                        let run = run_flow(&m);
                        pt.z = run.record.z_inf;
                        pt.error = run.record.error.clone();
                        pt.record = Some(run.record);
                    }
                    Err(e) => pt.error = Some(e.to_string()),
                },
                SweepKind::Oracle => match resonance_at(&s.atom, &prm, &s.basis, guess(s, &prm)) {
                    Ok(e) => pt.z = Some(e.value),
                    Err(e) => pt.error = Some(e.to_string()),
                },
            }
            pt
        })
        .collect();
    let source = match kind {
        SweepKind::Dispersion => "dispersion",
        SweepKind::Flow => "flow",
        SweepKind::Oracle => "oracle",
    };
    let rows: Vec<SpectrumRow> = results.iter().filter_map(|r| r.z.map(|z| SpectrumRow { source, z, vartheta: r.vartheta, lambda0: r.lambda0, p: r.p })).collect();
    let ok = results.iter().all(|r| r.error.is_none());
    let mut out = Outputs::default();
    out.add("spectrum.csv", spectrum_csv(&s.hash, &rows));
    out.json("sweep.json", &SweepFile { config_hash: &s.hash, kind, points: results });
    Ok(Done { outputs: out, ok })
}
