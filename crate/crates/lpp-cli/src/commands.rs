//! The seven subcommands. Each one first turns the merged configuration into
//! a typed job (all validation happens there) and only then computes.

use crate::config::ExperimentConfig;
use crate::exit::CliError;
use crate::output::{Artifacts, Table};
use clap::ValueEnum;
use lpp_core::contour::geometric_radii;
use lpp_core::finite::{conditional_probability, density_and_tail, SeriesOptions};
use lpp_core::identities::{region_representative, verify_identity, IdentityId, IdentityOptions};
use lpp_core::integral::{ConvergenceCheck, RadiiMode};
use lpp_core::lattice::{conditional_mc, unconditional_samples, McOptions};
use lpp_core::limit::{bridge_crossing, diag_limit, offdiag_two_point_limit, BridgeMethod, BridgeSpec, DiagSpec};
use lpp_core::plan::ObservationPlan;
use lpp_core::{
    classify_omega, classify_region, g_star_family, lln_surface, unconditional_lln, ModelParams, RegionQuery, RegionTag,
};
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Constants,
    Density,
    Conditional,
    Simulate,
    IdentityCheck,
    Limit,
    Convergence,
}

const MODEL_DEFAULTS: &str = "model.a = 1\nmodel.b = 1\nmodel.ell = 5\n";

/// Per-command defaults, the lowest layer of the merged configuration.
pub fn defaults(cmd: Command) -> ExperimentConfig {
    let specific = match cmd {
        Command::Constants => "",
        Command::Density => "geometry.m = 1\ngeometry.n = 1\ngeometry.t = 0:8:0.5\n",
        Command::Conditional | Command::Convergence => {
            "geometry.points = 0.7,0.3; 0.9,0.4\ngeometry.r = 0,0\nnumeric.l = 10,20,40\n\
             numeric.n_max = 3\nnumeric.nodes = 48\nnumeric.radii = steepest:1.2\n"
        }
        Command::Simulate => {
            "numeric.mode = unconditional\ngeometry.m = 64\ngeometry.n = 64\ngeometry.points = 0.5,0.4\n\
             numeric.l = 24\nnumeric.delta = 0.2\nnumeric.samples = 1000\nnumeric.budget = 200000000\n\
             numeric.seed = 1\n"
        }
        Command::IdentityCheck => "numeric.identity = QQ111-a\nnumeric.l = 6\nnumeric.radii = geometric:0.05:1.75\nnumeric.nodes = 0\n",
        Command::Limit => "numeric.kind = offdiag\ngeometry.points = 0.7,0.3; 0.9,0.4\ngeometry.r = 0,0\n",
    };
    ExperimentConfig::parse(&format!("{MODEL_DEFAULTS}{specific}")).expect("built-in defaults parse")
}

/// What a command hands back: its artifacts and, for checks that ran to the
/// end but failed, the error that sets the exit code.
pub struct Outcome {
    pub artifacts: Artifacts,
    pub failure: Option<CliError>,
}

impl From<Artifacts> for Outcome {
    fn from(artifacts: Artifacts) -> Self {
        Outcome { artifacts, failure: None }
    }
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    CliError::Validation(msg.into()).into()
}

fn pair_query(cfg: &ExperimentConfig, p: &ModelParams) -> anyhow::Result<RegionQuery> {
    let pts = cfg.points("geometry.points")?;
    if pts.len() != 2 {
        return Err(invalid(format!("geometry.points needs exactly two points, got {}", pts.len())));
    }
    let q = RegionQuery::new(pts[0].0, pts[0].1, pts[1].0, pts[1].1);
    classify_region(p, &q)?;
    Ok(q)
}

fn thresholds_pair(cfg: &ExperimentConfig) -> anyhow::Result<(f64, f64)> {
    let r = cfg.list("geometry.r")?;
    match r.as_slice() {
        [r1, r2] => Ok((*r1, *r2)),
        _ => Err(invalid(format!("geometry.r needs two values, got {}", r.len()))),
    }
}

fn scale_ladder(cfg: &ExperimentConfig) -> anyhow::Result<Vec<f64>> {
    let ls = cfg.list("numeric.l")?;
    if ls.is_empty() || ls.iter().any(|&l| !(l > 0.0)) {
        return Err(invalid("numeric.l must be a nonempty list of positive scales"));
    }
    Ok(ls)
}

fn check_radii(mode: &RadiiMode) -> anyhow::Result<()> {
    match *mode {
        RadiiMode::Geometric { inner, ratio } => {
            geometric_radii(5, inner, ratio)?;
        }
        RadiiMode::Steepest { ratio } if !(ratio > 1.0) => {
            return Err(invalid(format!("steepest radii ratio {ratio} must exceed 1")));
        }
        _ => {}
    }
    Ok(())
}

pub fn run(cmd: Command, cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    match cmd {
        Command::Constants => constants(cfg).map(Outcome::from),
        Command::Density => density(cfg).map(Outcome::from),
        Command::Conditional => conditional(cfg).map(Outcome::from),
        Command::Simulate => simulate(cfg).map(Outcome::from),
        Command::IdentityCheck => identity_check(cfg),
        Command::Limit => limit(cfg).map(Outcome::from),
        Command::Convergence => convergence(cfg).map(Outcome::from),
    }
}

fn constants(cfg: &ExperimentConfig) -> anyhow::Result<Artifacts> {
    let p = cfg.model()?;
    let points = if cfg.contains("geometry.points") {
        cfg.points("geometry.points")?
    } else {
        Vec::new()
    };
    let query = if points.len() == 2 {
        Some(pair_query(cfg, &p)?)
    } else {
        None
    };

    let mut out = Artifacts::default();
    let mut t = Table::new("constants", &["name", "value"]);
    for (name, v) in [
        ("a", p.a),
        ("b", p.b),
        ("ell", p.ell),
        ("D", p.d),
        ("m_slope", p.m_slope),
        ("mu", p.mu),
        ("sigma", p.sigma),
        ("c_plus", p.c_plus),
        ("c_minus", p.c_minus),
        ("j_rate", p.j_rate),
        ("z_c", p.z_c()),
        ("z_c_minus", p.z_c_minus()),
    ] {
        t.push(vec![name.into(), v.into()]);
    }
    out.tables.push(t);

    if !points.is_empty() {
        let mut s = Table::new("surface", &["x", "y", "omega", "conditional_lln", "unconditional_lln"]);
        for &(x, y) in &points {
            let h = lln_surface(&p, x, y)?;
            s.push(vec![
                x.into(),
                y.into(),
                format!("{:?}", classify_omega(&p, x, y)).into(),
                h.into(),
                unconditional_lln(p.a, p.b, x, y).into(),
            ]);
        }
        out.tables.push(s);
    }
    if let Some(q) = query {
        let label = classify_region(&p, &q)?;
        let family = g_star_family(&p, &label.query)?;
        let mut c = Table::new(
            "critical_points",
            &["region", "exponent", "z_minus", "z_plus", "g2_minus", "g2_plus", "discriminant_q"],
        );
        for (name, r) in ["1", "2", "3", "12", "23", "123"].iter().zip(family) {
            c.push(vec![
                label.tag.to_string().into(),
                (*name).into(),
                r.z_minus.into(),
                r.z_plus.into(),
                r.g2_minus.into(),
                r.g2_plus.into(),
                r.discriminant_q.into(),
            ]);
        }
        out.tables.push(c);
    }
    Ok(out)
}

fn density(cfg: &ExperimentConfig) -> anyhow::Result<Artifacts> {
    let m = cfg.positive_i64("geometry.m")?;
    let n = cfg.positive_i64("geometry.n")?;
    let grid = cfg.grid("geometry.t")?;
    if grid.iter().any(|&t| t < 0.0) {
        return Err(invalid("geometry.t values must be non-negative"));
    }
    let n_max = if cfg.contains("numeric.n_max") {
        Some(cfg.usize("numeric.n_max")?)
    } else {
        None
    };
    let mut t = Table::new("density", &["m", "n", "t", "density", "tail"]);
    for &x in &grid {
        let (dens, tail) = density_and_tail(m, n, x, n_max)?;
        t.push(vec![m.into(), n.into(), x.into(), dens.into(), tail.into()]);
    }
    Ok(Artifacts {
        tables: vec![t],
        documents: Vec::new(),
    })
}

struct LadderJob {
    params: ModelParams,
    query: RegionQuery,
    r: (f64, f64),
    scales: Vec<f64>,
    n_max: usize,
    opts: SeriesOptions,
}

impl LadderJob {
    fn from_config(cfg: &ExperimentConfig) -> anyhow::Result<Self> {
        let params = cfg.model()?;
        let query = pair_query(cfg, &params)?;
        let r = thresholds_pair(cfg)?;
        let scales = scale_ladder(cfg)?;
        let n_max = cfg.usize("numeric.n_max")?;
        if !(1..=6).contains(&n_max) {
            return Err(invalid(format!("numeric.n_max must lie in 1..=6, got {n_max}")));
        }
        check_radii(&cfg.radii_mode()?)?;
        let opts = SeriesOptions {
            radii: cfg.radius_strategy()?,
            nodes: cfg.nodes()?,
            check: Some(ConvergenceCheck::None),
            ..Default::default()
        };
        Ok(LadderJob {
            params,
            query,
            r,
            scales,
            n_max,
            opts,
        })
    }

    fn region(&self) -> anyhow::Result<RegionTag> {
        Ok(classify_region(&self.params, &self.query)?.tag)
    }

    fn plan(&self, l: f64) -> anyhow::Result<ObservationPlan> {
        Ok(ObservationPlan::scaled_two_point(&self.params, &self.query, self.r.0, self.r.1, l)?)
    }
}

fn conditional(cfg: &ExperimentConfig) -> anyhow::Result<Artifacts> {
    let job = LadderJob::from_config(cfg)?;
    let region = job.region()?.to_string();
    let mut t = Table::new(
        "conditional",
        &["l", "region", "conditional", "error", "numerator", "denominator", "n_max"],
    );
    for &l in &job.scales {
        let plan = job.plan(l)?;
        let c = conditional_probability(&plan, job.n_max, Some(&job.params), &job.opts)?;
        t.push(vec![
            l.into(),
            region.clone().into(),
            c.value.into(),
            c.error.into(),
            c.numerator.value.into(),
            c.denominator.value.into(),
            job.n_max.into(),
        ]);
    }
    Ok(Artifacts {
        tables: vec![t],
        documents: Vec::new(),
    })
}

fn convergence(cfg: &ExperimentConfig) -> anyhow::Result<Artifacts> {
    let job = LadderJob::from_config(cfg)?;
    let region = job.region()?.to_string();
    let target = offdiag_two_point_limit(&job.params, &job.query, job.r.0, job.r.1)?;
    let mut t = Table::new("convergence", &["l", "region", "conditional", "error", "limit", "gap"]);
    for &l in &job.scales {
        let plan = job.plan(l)?;
        let c = conditional_probability(&plan, job.n_max, Some(&job.params), &job.opts)?;
        t.push(vec![
            l.into(),
            region.clone().into(),
            c.value.into(),
            c.error.into(),
            target.into(),
            (c.value - target).abs().into(),
        ]);
    }
    Ok(Artifacts {
        tables: vec![t],
        documents: Vec::new(),
    })
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

fn simulate(cfg: &ExperimentConfig) -> anyhow::Result<Artifacts> {
    let seed = cfg.u64("numeric.seed")?;
    let samples = cfg.u64("numeric.samples")?;
    if samples < 2 {
        return Err(invalid("numeric.samples must be at least 2"));
    }
    match cfg.raw("numeric.mode")? {
        "unconditional" => {
            let rows = cfg.positive_i64("geometry.m")? as usize;
            let cols = cfg.positive_i64("geometry.n")? as usize;
            let draws = unconditional_samples(rows, cols, &[(rows, cols)], samples, seed)?;
            let mut t = Table::new("samples", &["replica", "lp", "lp_per_row"]);
            let scaled: Vec<f64> = draws.iter().map(|v| v[0] / rows as f64).collect();
            for (k, v) in draws.iter().enumerate() {
                t.push(vec![k.into(), v[0].into(), scaled[k].into()]);
            }
            let (mean, se) = mean_and_se(&scaled);
            let typical = unconditional_lln(1.0, cols as f64 / rows as f64, 1.0, 1.0);
            let summary = json!({
                "mode": "unconditional",
                "rows": rows,
                "cols": cols,
                "samples": samples,
                "mean_lp_per_row": mean,
                "se_lp_per_row": se,
                "typical_value_per_row": typical,
            });
            Ok(Artifacts {
                tables: vec![t],
                documents: vec![("summary".into(), summary)],
            })
        }
        "conditional" => {
            let p = cfg.model()?;
            let l = cfg.f64("numeric.l")?;
            let delta = cfg.f64("numeric.delta")?;
            let observables = cfg.points("geometry.points")?;
            let opts = McOptions {
                budget: cfg.u64("numeric.budget")?,
                ..Default::default()
            };
            let mc = conditional_mc(&p, l, delta, &observables, samples, seed, &opts)?;
            let mut t = Table::new("samples", &["sample", "x", "y", "lp_scaled"]);
            for o in &mc.observables {
                for (k, v) in o.samples.iter().enumerate() {
                    t.push(vec![k.into(), o.x.into(), o.y.into(), (*v).into()]);
                }
            }
            let obs: Vec<_> = mc
                .observables
                .iter()
                .map(|o| {
                    json!({
                        "x": o.x,
                        "y": o.y,
                        "mean_scaled": o.mean_scaled,
                        "se_scaled": o.se_scaled,
                        "mean_fluctuation": o.mean_fluctuation,
                        "se_fluctuation": o.se_fluctuation,
                        "conditional_lln": o.conditional_lln,
                        "unconditional_lln": o.unconditional_lln,
                    })
                })
                .collect();
            let summary = json!({
                "mode": "conditional",
                "l": l,
                "delta": delta,
                "accepted": mc.accepted,
                "drawn": mc.drawn,
                "acceptance_rate": mc.acceptance_rate,
                "rate_reference": mc.rate_reference,
                "window_halfwidth": mc.window_halfwidth,
                "target": mc.target,
                "observables": obs,
            });
            Ok(Artifacts {
                tables: vec![t],
                documents: vec![("summary".into(), summary)],
            })
        }
        other => Err(invalid(format!("numeric.mode must be conditional or unconditional, got '{other}'"))),
    }
}

fn identity_check(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let p = cfg.model()?;
    let l = cfg.f64("numeric.l")?;
    if !(l > 0.0) {
        return Err(invalid("numeric.l must be positive"));
    }
    let ids: Vec<IdentityId> = match cfg.raw("numeric.identity")?.trim() {
        "all" => IdentityId::ALL.to_vec(),
        list => list
            .split(',')
            .map(|s| IdentityId::parse(s).map_err(|_| invalid(format!("unknown identity '{}'", s.trim()))))
            .collect::<anyhow::Result<_>>()?,
    };
    let radii = cfg.radii_mode()?;
    check_radii(&radii)?;
    let nodes = cfg.nodes()?;
    let (r1, r2) = if cfg.contains("geometry.r") {
        thresholds_pair(cfg)?
    } else {
        (0.0, 0.0)
    };
    let fixed = if cfg.contains("geometry.points") {
        Some(pair_query(cfg, &p)?)
    } else {
        None
    };
    let mut jobs = Vec::new();
    for &id in &ids {
        let q_nodes = nodes.unwrap_or(if id.dimension() > 6 { 16 } else { 32 });
        let opts = IdentityOptions {
            r1,
            r2,
            radii: radii.clone(),
            nodes: Some(q_nodes),
            ..Default::default()
        };
        match fixed {
            Some(q) => jobs.push((id, q, opts)),
            None => {
                for &tag in id.regions() {
                    jobs.push((id, region_representative(&p, tag)?, opts.clone()));
                }
            }
        }
    }

    let mut t = Table::new(
        "identities",
        &["identity", "region", "applicable", "lhs", "rhs", "residual", "tolerance", "node_spread", "passed"],
    );
    let mut failed = Vec::new();
    for (id, q, opts) in jobs {
        let report = verify_identity(id, &p, &q, l, &opts)?;
        let coarse = IdentityOptions {
            nodes: opts.nodes.map(|n| (n / 2).max(8)),
            ..opts.clone()
        };
        let half = verify_identity(id, &p, &q, l, &coarse)?;
        let spread = (report.lhs - half.lhs).abs() / report.lhs.abs().max(f64::MIN_POSITIVE);
        if !report.passed() {
            failed.push(format!("{} in {} (residual {:.3e})", id.name(), report.region, report.residual));
        }
        t.push(vec![
            id.name().into(),
            report.region.to_string().into(),
            report.applicable.into(),
            report.lhs.into(),
            report.rhs.into(),
            report.residual.into(),
            report.tolerance.into(),
            spread.into(),
            report.passed().into(),
        ]);
    }
    Ok(Outcome {
        artifacts: Artifacts {
            tables: vec![t],
            documents: Vec::new(),
        },
        failure: (!failed.is_empty()).then(|| CliError::Tolerance(failed.join("; "))),
    })
}

fn limit(cfg: &ExperimentConfig) -> anyhow::Result<Artifacts> {
    let p = cfg.model()?;
    let kind = cfg.raw("numeric.kind")?.to_string();
    let value = match kind.as_str() {
        "offdiag" => {
            let q = pair_query(cfg, &p)?;
            let (r1, r2) = thresholds_pair(cfg)?;
            offdiag_two_point_limit(&p, &q, r1, r2)?
        }
        "diag" => {
            let shifts = cfg.list("geometry.shifts")?;
            let times = cfg.list("geometry.times")?;
            let thresholds = cfg.list("geometry.thresholds")?;
            if shifts.len() != times.len() || times.len() != thresholds.len() {
                return Err(invalid("geometry.shifts, times and thresholds must have equal lengths"));
            }
            let constraints = shifts
                .iter()
                .zip(&times)
                .zip(&thresholds)
                .map(|((&s, &t), &h)| (s, t, h))
                .collect();
            diag_limit(&DiagSpec { params: p, constraints })?
        }
        "bridge" => {
            let spec = BridgeSpec::new(1.0, cfg.list("geometry.times")?, cfg.list("geometry.thresholds")?)?;
            let method = if spec.times.len() <= 2 {
                BridgeMethod::ClosedForm
            } else {
                BridgeMethod::Contour
            };
            bridge_crossing(&spec, method)?.value
        }
        other => return Err(invalid(format!("numeric.kind must be offdiag, diag or bridge, got '{other}'"))),
    };
    let mut t = Table::new("limit", &["kind", "value"]);
    t.push(vec![kind.into(), value.into()]);
    Ok(Artifacts {
        tables: vec![t],
        documents: Vec::new(),
    })
}
