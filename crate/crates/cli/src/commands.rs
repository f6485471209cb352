//! The subcommands. Each writes its artifacts through a [`RunDir`] and
//! returns the process exit code; progress goes to stderr.

use crate::artifacts::RunDir;
use crate::config::{parse_complex, parse_list, reference_kind, usage, RunConfig, Tolerances};
use crate::{exit, Command};
use anyhow::Context;
use lemnika_core::atomizer::{atomize_pair, construct_pair, tail_plan, ApproximantPair, AtomizeError, ErrorReport};
use lemnika_core::classical::{
    bernstein_walsh, counting_measure_distance, fekete_points, lemniscate_sandwich, monic_chebyshev, BernsteinWalshReport,
    CompactSet1D, FeketeResult, LemniscateReport, SetKind,
};
use lemnika_core::cpoly::FactoredPoly;
use lemnika_core::homlift::{
    extremal_eval, homogenize, robin_eval, sandwich_check, u_n_eval, u_tilde_eval, CircledSetModel, LiftedPair,
    SandwichReport,
};
use lemnika_core::mamass::{
    discrete_ma_measure, solve_common_level_sets, support_localization, weak_star_report, MomentReport,
};
use lemnika_core::potential::{check_admissibility, AdmissibilityReport, PlanarMeasure, Tail};
use lemnika_core::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::Path;

pub fn dispatch(cmd: Command, mut cfg: RunConfig) -> anyhow::Result<i32> {
    match cmd {
        Command::Atomize(a) => {
            set(&mut cfg.measure, a.measure);
            set(&mut cfg.eps, a.eps);
            set(&mut cfg.k_max, a.k_max);
            atomize(&cfg, &a.out, &a.report)
        }
        Command::Lift(a) => {
            set_opt(&mut cfg.model, a.model);
            lift(&cfg, &a.pair, &a.n, &a.out)
        }
        Command::Sandwich(a) => {
            set_opt(&mut cfg.model, a.model);
            sandwich(&cfg, &a.pair_2d, a.eps, &a.out)
        }
        Command::Ma(a) => {
            set(&mut cfg.measure, a.measure);
            set_opt(&mut cfg.model, a.model);
            let from_list = a.n_list.is_some() || a.pair_2d.is_empty();
            if let Some(l) = a.n_list {
                cfg.n_list = parse_list(&l)?;
            }
            ma(&cfg, &a.pair_2d, from_list, &a.out)
        }
        Command::Fekete(a) => {
            set(&mut cfg.fekete.set, a.set);
            set(&mut cfg.fekete.n, a.n);
            set(&mut cfg.fekete.candidates, a.candidates);
            fekete(&cfg, &a.out)
        }
        Command::Sandwich1d(a) => {
            set(&mut cfg.fekete.set, a.set);
            set(&mut cfg.fekete.n, a.n);
            set(&mut cfg.fekete.eps, a.eps);
            set(&mut cfg.fekete.poly, a.poly);
            sandwich1d(&cfg, &a.out)
        }
        Command::RenderGrid(a) => {
            set_opt(&mut cfg.model, a.model);
            set(&mut cfg.render.field, a.field);
            set(&mut cfg.render.slice, a.slice);
            set(&mut cfg.render.nx, a.nx);
            set(&mut cfg.render.ny, a.ny);
            if let Some(w) = a.window {
                cfg.render.window = parse_window(&w)?;
            }
            render_grid(&cfg, a.pair_2d.as_deref(), a.bidisk, &a.out)
        }
        Command::Pipeline(a) => {
            set(&mut cfg.measure, a.measure);
            set_opt(&mut cfg.model, a.model);
            set(&mut cfg.eps, a.eps);
            if let Some(l) = a.n_list {
                cfg.n_list = parse_list(&l)?;
            }
            pipeline(&cfg)
        }
    }
}

fn set<T>(field: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *field = v;
    }
}

fn set_opt<T>(field: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *field = v;
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("malformed {}: {e}", path.display())))
}

/// Label for the circled set in reports.
fn model_label(cfg: &RunConfig) -> String {
    cfg.model.clone().unwrap_or_else(|| cfg.measure.clone())
}

// ---------------------------------------------------------------- atomize

#[derive(Debug, Serialize)]
struct AtomizeReport {
    measure: String,
    epsilon: f64,
    /// `certified`, `budget_exceeded`, `failed` or `inadmissible`.
    outcome: String,
    error: Option<String>,
    admissibility: AdmissibilityReport,
    k: Option<usize>,
    degree: Option<usize>,
    shift: Option<f64>,
    certificate: Option<ErrorReport>,
    pass: bool,
}

enum Atomized {
    Inadmissible(AdmissibilityReport),
    Done { report: AtomizeReport, pair: Option<ApproximantPair>, code: i32 },
}

fn run_atomize(cfg: &RunConfig, mu: &PlanarMeasure) -> Atomized {
    let adm = check_admissibility(mu);
    if !adm.pass {
        return Atomized::Inadmissible(adm);
    }
    eprintln!("atomizing {} to ε = {}", cfg.measure, cfg.eps);
    let (outcome, error, pair) = match atomize_pair(mu, cfg.eps, cfg.atomize_config()) {
        Ok(p) => ("certified", None, Some(p)),
        Err(AtomizeError::BudgetExceeded { best, .. }) => {
            let msg = format!("certified error {} still above {} at k = {}", best.certificate.sup_error_off_exceptional, cfg.eps, best.k);
            ("budget_exceeded", Some(msg), Some(*best))
        }
        Err(e) => ("failed", Some(e.to_string()), None),
    };
    let pass = pair.as_ref().is_some_and(|p| certified(p, cfg.eps, &cfg.tolerances));
    let report = AtomizeReport {
        measure: cfg.measure.clone(),
        epsilon: cfg.eps,
        outcome: outcome.into(),
        error,
        admissibility: adm,
        k: pair.as_ref().map(|p| p.k),
        degree: pair.as_ref().map(|p| p.degree()),
        shift: pair.as_ref().map(|p| p.shift),
        certificate: pair.as_ref().map(|p| p.certificate.clone()),
        pass,
    };
    let code = if pass { exit::OK } else { exit::ATOMIZATION_BUDGET };
    Atomized::Done { report, pair, code }
}

fn certified(p: &ApproximantPair, eps: f64, tol: &Tolerances) -> bool {
    p.certificate.sup_error_off_exceptional <= eps && p.certificate.upper_bound_violation <= tol.upper
}

fn atomize(cfg: &RunConfig, out: &str, report: &str) -> anyhow::Result<i32> {
    let mu = cfg.load_measure()?;
    let mut dir = RunDir::create(&cfg.out_dir)?;
    dir.write_json("config.json", cfg)?;
    let code = match run_atomize(cfg, &mu) {
        Atomized::Inadmissible(adm) => {
            dir.write_json("admissibility.json", &adm)?;
            exit::ADMISSIBILITY
        }
        Atomized::Done { report: r, pair, code } => {
            if let Some(p) = &pair {
                dir.write_json(out, p)?;
            }
            dir.write_json(report, &r)?;
            code
        }
    };
    dir.finish("atomize")?;
    Ok(code)
}

// ---------------------------------------------------------------- lift

/// Lift to degree `n` (the pair's own degree when `None`).
fn lift_pair(pair: &ApproximantPair, model: &CircledSetModel, n: Option<usize>) -> anyhow::Result<LiftedPair> {
    let n = n.unwrap_or(pair.degree());
    if n == pair.degree() {
        return LiftedPair::from_pair(pair, model).map_err(|e| usage(e.to_string()));
    }
    let mut p = homogenize(&pair.p.poly, n).map_err(|e| usage(e.to_string()))?;
    let mut q = homogenize(&pair.q.poly, n).map_err(|e| usage(e.to_string()))?;
    p.slice.log_constant += n as f64 * model.slice_offset;
    q.slice.log_constant += n as f64 * model.slice_offset;
    let mut lifted = LiftedPair::new(p, q).map_err(|e| usage(e.to_string()))?;
    lifted.exceptional = pair.p.exceptional.iter().chain(&pair.q.exceptional).copied().collect();
    lifted.epsilon = Some(pair.certificate.sup_error_off_exceptional);
    Ok(lifted)
}

fn lift(cfg: &RunConfig, pair_path: &Path, n: &str, out: &str) -> anyhow::Result<i32> {
    let pair: ApproximantPair = read_json(pair_path)?;
    let model = cfg.load_model(None)?;
    let n = match n {
        "auto" => None,
        s => Some(s.parse::<usize>().map_err(|_| usage(format!("--n expects an integer or auto, got {s:?}")))?),
    };
    let lifted = lift_pair(&pair, &model, n)?;
    let mut dir = RunDir::create(&cfg.out_dir)?;
    dir.write_json(out, &lifted)?;
    dir.finish("lift")?;
    Ok(exit::OK)
}

// ---------------------------------------------------------------- sandwich

#[derive(Debug, Serialize)]
struct SandwichArtifact {
    model: String,
    n: usize,
    report: SandwichReport,
}

fn sandwich(cfg: &RunConfig, pair_path: &Path, eps: Option<f64>, out: &str) -> anyhow::Result<i32> {
    let pair: LiftedPair = read_json(pair_path)?;
    let model = cfg.load_model(None)?;
    let eps = eps.or(pair.epsilon).unwrap_or(cfg.eps);
    let report = sandwich_check(&model, &pair, eps, &cfg.sandwich_grid);
    let code = if report.pass { exit::OK } else { exit::SANDWICH };
    let mut dir = RunDir::create(&cfg.out_dir)?;
    dir.write_json(out, &SandwichArtifact { model: model_label(cfg), n: pair.n, report })?;
    dir.finish("sandwich")?;
    Ok(code)
}

// ---------------------------------------------------------------- ma

#[derive(Debug, Serialize)]
struct DegreeSummary {
    n: usize,
    /// `constructed`, `exact` or the input file.
    source: String,
    pair_epsilon: Option<f64>,
    degree_sum: u32,
    atoms: usize,
    flagged: usize,
    total_mass: f64,
    max_residual: f64,
    /// `max |ρ_K|` over the atoms.
    localization: f64,
    error: Option<String>,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct MaArtifact {
    model: String,
    degrees: Vec<DegreeSummary>,
    moments: Option<MomentReport>,
    pass: bool,
}

/// Solves the level sets of one pair, writing `n{n}/…`; returns the summary
/// and the measure when the solve succeeded.
fn ma_one(
    dir: &mut RunDir,
    pair: &LiftedPair,
    source: String,
    model: &CircledSetModel,
    tol: &Tolerances,
) -> anyhow::Result<(DegreeSummary, Option<lemnika_core::mamass::DiscreteMAMeasure>)> {
    let n = pair.n;
    eprintln!("level sets at n = {n}");
    let mut summary = DegreeSummary {
        n,
        source,
        pair_epsilon: pair.epsilon,
        degree_sum: 0,
        atoms: 0,
        flagged: 0,
        total_mass: 0.0,
        max_residual: 0.0,
        localization: 0.0,
        error: None,
        pass: false,
    };
    let sol = match solve_common_level_sets(pair) {
        Ok(s) => s,
        Err(e) => {
            summary.error = Some(e.to_string());
            return Ok((summary, None));
        }
    };
    let mu = discrete_ma_measure(&sol.points, n);
    dir.write_json(&format!("n{n}/level_set.json"), &sol)?;
    dir.write_json(&format!("n{n}/measure.json"), &mu)?;
    dir.write_text(&format!("n{n}/atoms.csv"), &mu.to_csv())?;
    summary.degree_sum = sol.degree_sum;
    summary.atoms = mu.atoms.len();
    summary.flagged = sol.points.iter().filter(|p| p.flagged).count();
    summary.total_mass = mu.total_mass;
    summary.max_residual = sol.max_residual;
    summary.localization = support_localization(&mu, model);
    let complete = sol.degree_sum as usize == n * n;
    let mass_ok = (mu.total_mass - TAU * TAU).abs() <= tol.mass;
    let residual_ok = sol.max_residual <= tol.residual;
    if !complete {
        summary.error = Some(format!("local degrees sum to {} instead of {}", sol.degree_sum, n * n));
    } else if !mass_ok {
        summary.error = Some(format!("total mass {} differs from (2π)²", mu.total_mass));
    } else if !residual_ok {
        summary.error = Some(format!("level-set residual {} above tolerance", sol.max_residual));
    }
    summary.pass = complete && mass_ok && residual_ok;
    Ok((summary, Some(mu)))
}

/// Pair of degree `n` built from `mu` at the configured target.
fn constructed_pair(cfg: &RunConfig, mu: &PlanarMeasure, n: usize) -> anyhow::Result<ApproximantPair> {
    let built = match mu.tail {
        Tail::Radial { .. } => {
            let (k, m) = tail_plan(n).ok_or_else(|| usage(format!("degree {n} has no split n = kM with M ≥ 3")))?;
            construct_pair(mu, k, Some(m), cfg.eps, cfg.certify)
        }
        Tail::None => {
            if n % 2 != 0 || n == 0 {
                return Err(usage(format!("compactly supported measures need an even degree, got {n}")));
            }
            construct_pair(mu, n / 2, None, cfg.eps, cfg.certify)
        }
    };
    built.with_context(|| format!("constructing the degree-{n} pair"))
}

fn is_bidisk(model: &CircledSetModel) -> bool {
    matches!(model.kind, lemnika_core::homlift::ModelKind::Bidisk)
}

fn ma(cfg: &RunConfig, files: &[std::path::PathBuf], from_list: bool, out: &str) -> anyhow::Result<i32> {
    let mut pairs: Vec<(LiftedPair, String)> = Vec::new();
    for f in files {
        pairs.push((read_json(f)?, f.display().to_string()));
    }
    let exact = cfg.load_model(None).is_ok_and(|m| is_bidisk(&m));
    let model = if from_list && !exact {
        let mu = cfg.load_measure()?;
        let model = cfg.load_model(Some(&mu))?;
        for &n in &cfg.n_list {
            eprintln!("constructing degree {n}");
            let pair = constructed_pair(cfg, &mu, n)?;
            pairs.push((LiftedPair::from_pair(&pair, &model)?, "constructed".into()));
        }
        model
    } else {
        let model = cfg.load_model(None)?;
        if from_list {
            for &n in &cfg.n_list {
                pairs.push((LiftedPair::bidisk(n), "exact".into()));
            }
        }
        model
    };
    let mut seen = std::collections::BTreeSet::new();
    if let Some((p, _)) = pairs.iter().find(|(p, _)| !seen.insert(p.n)) {
        return Err(usage(format!("two pairs of degree {}", p.n)));
    }
    let mut dir = RunDir::create(&cfg.out_dir)?;
    dir.write_json("config.json", cfg)?;
    let (artifact, code) = ma_stage(&mut dir, cfg, &model, &pairs)?;
    dir.write_json(out, &artifact)?;
    dir.finish("ma")?;
    Ok(code)
}

fn ma_stage(
    dir: &mut RunDir,
    cfg: &RunConfig,
    model: &CircledSetModel,
    pairs: &[(LiftedPair, String)],
) -> anyhow::Result<(MaArtifact, i32)> {
    let mut degrees = Vec::new();
    let mut measures = Vec::new();
    for (pair, source) in pairs {
        let (s, mu) = ma_one(dir, pair, source.clone(), model, &cfg.tolerances)?;
        degrees.push(s);
        measures.extend(mu);
    }
    let moments = reference_kind(model).map(|k| weak_star_report(&measures, k));
    let pass = degrees.iter().all(|d| d.pass);
    let code = if pass { exit::OK } else { exit::MA_DEGENERACY };
    Ok((MaArtifact { model: model_label(cfg), degrees, moments, pass }, code))
}

// ---------------------------------------------------------------- one variable

fn parse_set(spec: &str, m: usize) -> anyhow::Result<CompactSet1D> {
    if let Some(rest) = spec.strip_prefix("interval:") {
        let v: Vec<f64> = rest
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| usage(format!("bad set {spec:?}"))))
            .collect::<anyhow::Result<_>>()?;
        match v.as_slice() {
            [a, b] if a < b => Ok(CompactSet1D::interval(*a, *b, m)),
            _ => Err(usage(format!("interval needs a < b: {spec:?}"))),
        }
    } else if let Some(r) = spec.strip_prefix("disk:") {
        match r.trim().parse::<f64>() {
            Ok(r) if r > 0.0 => Ok(CompactSet1D::disk(r, m)),
            _ => Err(usage(format!("disk needs a positive radius: {spec:?}"))),
        }
    } else {
        Err(usage(format!("unknown set {spec:?}; use interval:a,b or disk:r")))
    }
}

/// Center and half-extent of the set.
fn set_extent(k: &CompactSet1D) -> (Complex64, f64) {
    match k.kind {
        SetKind::Interval { a, b } => (Complex64::new(0.5 * (a + b), 0.0), 0.5 * (b - a)),
        SetKind::Disk { r } => (Complex64::new(0.0, 0.0), r),
        SetKind::Cloud => (Complex64::new(0.0, 0.0), 1.0),
    }
}

#[derive(Debug, Serialize)]
struct FeketeArtifact {
    set: String,
    n: usize,
    candidates: usize,
    fekete: FeketeResult,
    /// Kolmogorov distance of the points, mapped to `[-1, 1]`, from the
    /// arcsine law (intervals only).
    arcsine_distance: Option<f64>,
    bernstein_walsh: Vec<BernsteinWalshReport>,
}

fn fekete(cfg: &RunConfig, out: &str) -> anyhow::Result<i32> {
    let fc = &cfg.fekete;
    let k = parse_set(&fc.set, fc.candidates)?;
    let res = fekete_points(&k, fc.n).map_err(|e| usage(e.to_string()))?;
    let (c, h) = set_extent(&k);
    let arcsine_distance = matches!(k.kind, SetKind::Interval { .. })
        .then(|| counting_measure_distance(&res.points.iter().map(|&z| (z - c) / h).collect::<Vec<_>>()));
    // Samples on a 41×41 grid covering three times the set.
    let samples: Vec<Complex64> = (0..41)
        .flat_map(|j| {
            (0..41).map(move |i| c + 3.0 * h * Complex64::new(i as f64 / 20.0 - 1.0, j as f64 / 20.0 - 1.0))
        })
        .collect();
    let probe = Complex64::new(fc.probe[0], fc.probe[1]);
    let mut bw = Vec::new();
    for &n in &fc.n_list {
        let pts = fekete_points(&k, n).map_err(|e| usage(e.to_string()))?;
        bw.push(bernstein_walsh(&k, &pts.points, &samples, probe).map_err(|e| usage(e.to_string()))?);
    }
    let mut dir = RunDir::create(&cfg.out_dir)?;
    dir.write_json(
        out,
        &FeketeArtifact {
            set: fc.set.clone(),
            n: fc.n,
            candidates: k.candidates.len(),
            fekete: res,
            arcsine_distance,
            bernstein_walsh: bw,
        },
    )?;
    dir.finish("fekete")?;
    Ok(exit::OK)
}

#[derive(Debug, Serialize)]
struct Sandwich1dArtifact {
    set: String,
    n: usize,
    poly: String,
    epsilon: f64,
    zeros: Vec<Complex64>,
    report: LemniscateReport,
}

fn sandwich1d(cfg: &RunConfig, out: &str) -> anyhow::Result<i32> {
    let fc = &cfg.fekete;
    let k = parse_set(&fc.set, fc.candidates)?;
    let (c, h) = set_extent(&k);
    let p = match (fc.poly.as_str(), &k.kind) {
        ("fekete", _) => FactoredPoly::from_roots(&fekete_points(&k, fc.n).map_err(|e| usage(e.to_string()))?.points),
        // Chebyshev polynomial of the set: scaled T_n on an interval, zⁿ on a disk.
        ("chebyshev", SetKind::Interval { .. }) => {
            let t = monic_chebyshev(fc.n);
            FactoredPoly::from_roots(&t.zeros.iter().map(|z| c + h * z.at).collect::<Vec<_>>())
        }
        ("chebyshev", _) => FactoredPoly::from_roots(&vec![c; fc.n]),
        (other, _) => return Err(usage(format!("unknown polynomial {other:?}; use fekete or chebyshev"))),
    };
    let report = lemniscate_sandwich(&p, &k, fc.eps);
    let code = if report.pass { exit::OK } else { exit::SANDWICH };
    let zeros = p.zeros.iter().flat_map(|z| std::iter::repeat(z.at).take(z.mult as usize)).collect();
    let mut dir = RunDir::create(&cfg.out_dir)?;
    dir.write_json(
        out,
        &Sandwich1dArtifact { set: fc.set.clone(), n: fc.n, poly: fc.poly.clone(), epsilon: fc.eps, zeros, report },
    )?;
    dir.finish("sandwich1d")?;
    Ok(code)
}

// ---------------------------------------------------------------- render-grid

fn parse_window(s: &str) -> anyhow::Result<[f64; 4]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| usage(format!("bad window {s:?}"))))
        .collect::<anyhow::Result<_>>()?;
    <[f64; 4]>::try_from(v).map_err(|_| usage(format!("window needs x0,x1,y0,y1: {s:?}")))
}

enum Slice {
    /// Fixed `w`, the plane point is `z`.
    W(Complex64),
    /// Fixed `z`, the plane point is `w`.
    Z(Complex64),
    /// `z = x`, `w = y`, both real.
    Radial,
}

impl Slice {
    fn parse(s: &str) -> anyhow::Result<Self> {
        if s == "radial" {
            Ok(Self::Radial)
        } else if let Some(v) = s.strip_prefix("w=") {
            Ok(Self::W(parse_complex(v)?))
        } else if let Some(v) = s.strip_prefix("z=") {
            Ok(Self::Z(parse_complex(v)?))
        } else {
            Err(usage(format!("unknown slice {s:?}; use w=re,im, z=re,im or radial")))
        }
    }

    fn point(&self, x: f64, y: f64) -> (Complex64, Complex64) {
        match *self {
            Self::W(w) => (Complex64::new(x, y), w),
            Self::Z(z) => (z, Complex64::new(x, y)),
            Self::Radial => (Complex64::new(x, 0.0), Complex64::new(y, 0.0)),
        }
    }
}

fn render_grid(cfg: &RunConfig, pair_path: Option<&Path>, bidisk: Option<usize>, out: &str) -> anyhow::Result<i32> {
    let r = &cfg.render;
    let [x0, x1, y0, y1] = r.window;
    if !(x0 < x1 && y0 < y1) || r.nx == 0 || r.ny == 0 || r.window.iter().any(|v| !v.is_finite()) {
        return Err(usage(format!("WindowEmpty: window {:?} with {}×{} points", r.window, r.nx, r.ny)));
    }
    let slice = Slice::parse(&r.slice)?;
    let pair = match (pair_path, bidisk) {
        (Some(_), Some(_)) => return Err(usage("give either --pair-2d or --bidisk")),
        (Some(p), None) => Some(read_json::<LiftedPair>(p)?),
        (None, Some(n)) => Some(LiftedPair::bidisk(n)),
        (None, None) => None,
    };
    let needs_pair = matches!(r.field.as_str(), "utilde" | "un" | "mask");
    let pair = match (needs_pair, pair) {
        (true, None) => return Err(usage(format!("field {} needs --pair-2d or --bidisk", r.field))),
        (_, p) => p,
    };
    let model = match r.field.as_str() {
        "vk" | "rho" => Some(cfg.load_model(None)?),
        "utilde" | "un" | "mask" => None,
        f => return Err(usage(format!("unknown field {f:?}; use vk, rho, utilde, un or mask"))),
    };
    let coord = |i: usize, n: usize, a: f64, b: f64| if n == 1 { a } else { a + (b - a) * i as f64 / (n - 1) as f64 };
    let mut csv = String::from("x,y,re_z,im_z,re_w,im_w,value\n");
    for j in 0..r.ny {
        let y = coord(j, r.ny, y0, y1);
        for i in 0..r.nx {
            let x = coord(i, r.nx, x0, x1);
            let (z, w) = slice.point(x, y);
            let value = match r.field.as_str() {
                "vk" => extremal_eval(model.as_ref().unwrap(), z, w),
                "rho" => robin_eval(model.as_ref().unwrap(), z, w).unwrap_or(f64::NAN),
                "utilde" => u_tilde_eval(pair.as_ref().unwrap(), z, w),
                "un" => u_n_eval(pair.as_ref().unwrap(), z, w),
                _ => {
                    let p = pair.as_ref().unwrap();
                    let inside = p.p.log_abs(z, w) <= 0.0 && p.q.log_abs(z, w) <= 0.0;
                    if inside { 1.0 } else { 0.0 }
                }
            };
            csv.push_str(&format!("{x:e},{y:e},{:e},{:e},{:e},{:e},{value:e}\n", z.re, z.im, w.re, w.im));
        }
    }
    let mut dir = RunDir::create(&cfg.out_dir)?;
    dir.write_text(out, &csv)?;
    dir.finish("render-grid")?;
    Ok(exit::OK)
}

// ---------------------------------------------------------------- pipeline

#[derive(Debug, Serialize)]
struct StageSummary {
    stage: String,
    n: Option<usize>,
    pass: bool,
    detail: String,
}

#[derive(Debug, Serialize)]
struct PipelineSummary {
    version: String,
    measure: String,
    model: String,
    epsilon: f64,
    stages: Vec<StageSummary>,
    exit_code: i32,
}

fn pipeline(cfg: &RunConfig) -> anyhow::Result<i32> {
    let mut dir = RunDir::create(&cfg.out_dir)?;
    #[derive(Serialize)]
    struct Echo<'a> {
        version: &'a str,
        #[serde(flatten)]
        config: &'a RunConfig,
    }
    dir.write_json("config.json", &Echo { version: env!("CARGO_PKG_VERSION"), config: cfg })?;
    let mut stages = Vec::new();
    let mut code = exit::OK;
    let fail = |c: i32, code: &mut i32| {
        if *code == exit::OK {
            *code = c;
        }
    };
    let model = cfg.load_model(None).ok();
    let mut pairs: Vec<(LiftedPair, String)> = Vec::new();
    let model = if model.as_ref().is_some_and(is_bidisk) {
        let model = model.unwrap();
        for &n in &cfg.n_list {
            let pair = LiftedPair::bidisk(n);
            let rep = sandwich_check(&model, &pair, 0.0, &cfg.sandwich_grid);
            dir.write_json(&format!("n{n}/lifted.json"), &pair)?;
            dir.write_json(&format!("n{n}/sandwich.json"), &rep)?;
            if !rep.pass {
                fail(exit::SANDWICH, &mut code);
            }
            stages.push(StageSummary { stage: "sandwich".into(), n: Some(n), pass: rep.pass, detail: sandwich_detail(&rep) });
            pairs.push((pair, "exact".into()));
        }
        model
    } else {
        let mu = cfg.load_measure()?;
        let model = cfg.load_model(Some(&mu))?;
        match run_atomize(cfg, &mu) {
            Atomized::Inadmissible(adm) => {
                dir.write_json("admissibility.json", &adm)?;
                stages.push(StageSummary { stage: "admissibility".into(), n: None, pass: false, detail: adm.reasons.join("; ") });
                return finish_pipeline(dir, cfg, stages, exit::ADMISSIBILITY);
            }
            Atomized::Done { report, pair, code: c } => {
                dir.write_json("report.json", &report)?;
                stages.push(StageSummary {
                    stage: "atomize".into(),
                    n: report.degree,
                    pass: report.pass,
                    detail: report.error.clone().unwrap_or_else(|| {
                        format!("k = {:?}, sup error {:?}", report.k, report.certificate.as_ref().map(|c| c.sup_error_off_exceptional))
                    }),
                });
                let Some(pair) = pair.filter(|_| c == exit::OK) else {
                    return finish_pipeline(dir, cfg, stages, c);
                };
                dir.write_json("pair.json", &pair)?;
                dir.write_json("certificate.json", &pair.certificate)?;
                let lifted = LiftedPair::from_pair(&pair, &model)?;
                let rep = sandwich_check(&model, &lifted, pair.certificate.sup_error_off_exceptional, &cfg.sandwich_grid);
                dir.write_json("lifted.json", &lifted)?;
                dir.write_json("sandwich.json", &rep)?;
                if !rep.pass {
                    fail(exit::SANDWICH, &mut code);
                }
                stages.push(StageSummary { stage: "sandwich".into(), n: Some(lifted.n), pass: rep.pass, detail: sandwich_detail(&rep) });
            }
        }
        for &n in &cfg.n_list {
            eprintln!("constructing degree {n}");
            let pair = match constructed_pair(cfg, &mu, n) {
                Ok(p) => p,
                Err(e) => {
                    stages.push(StageSummary { stage: "construct".into(), n: Some(n), pass: false, detail: format!("{e:#}") });
                    fail(exit::ATOMIZATION_BUDGET, &mut code);
                    continue;
                }
            };
            let lifted = LiftedPair::from_pair(&pair, &model)?;
            let eps = pair.certificate.sup_error_off_exceptional;
            let rep = sandwich_check(&model, &lifted, eps, &cfg.sandwich_grid);
            dir.write_json(&format!("n{n}/pair.json"), &pair)?;
            dir.write_json(&format!("n{n}/lifted.json"), &lifted)?;
            dir.write_json(&format!("n{n}/sandwich.json"), &rep)?;
            if !rep.pass {
                fail(exit::SANDWICH, &mut code);
            }
            stages.push(StageSummary { stage: "sandwich".into(), n: Some(n), pass: rep.pass, detail: sandwich_detail(&rep) });
            pairs.push((lifted, "constructed".into()));
        }
        model
    };
    let (artifact, c) = ma_stage(&mut dir, cfg, &model, &pairs)?;
    for d in &artifact.degrees {
        let detail = d.error.clone().unwrap_or_else(|| format!("{} atoms, mass {:.12}", d.atoms, d.total_mass));
        stages.push(StageSummary { stage: "ma".into(), n: Some(d.n), pass: d.pass, detail });
    }
    if c != exit::OK {
        fail(c, &mut code);
    }
    dir.write_json("moments.json", &artifact)?;
    finish_pipeline(dir, cfg, stages, code)
}

fn sandwich_detail(r: &SandwichReport) -> String {
    format!(
        "upper excess {:.3e}, lower deficit {:.3e}, ε {:.3e}, {} samples",
        r.max_upper_excess, r.max_lower_deficit, r.epsilon, r.n_samples
    )
}

fn finish_pipeline(mut dir: RunDir, cfg: &RunConfig, stages: Vec<StageSummary>, code: i32) -> anyhow::Result<i32> {
    let summary = PipelineSummary {
        version: env!("CARGO_PKG_VERSION").into(),
        measure: cfg.measure.clone(),
        model: model_label(cfg),
        epsilon: cfg.eps,
        stages,
        exit_code: code,
    };
    dir.write_json("summary.json", &summary)?;
    dir.finish("pipeline")?;
    Ok(code)
}
