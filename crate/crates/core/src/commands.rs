//! Subcommands behind the command-line tool. Every CSV starts with a
//! `# config_hash:` comment and a header row; floats use shortest
//! round-trip formatting so identical configs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::adjoint::ThdProblem;
use crate::assembly::eval_field;
use crate::config::{MachineConfig, RunConfig};
use crate::coupling::{
    rotation_sweep, solve_full, sweep_angles, AngleSolution, CoupledProblem, CouplingPrecomp,
};
use crate::error::{Error, Result};
use crate::fourier::{emf_spectrum, thd};
use crate::geometry::{build_demo_machine, DofMap, MultipatchModel};
use crate::optimizer::run_optimization;

/// CSV text builder with the config hash comment.
#[derive(Debug, Clone)]
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(hash: &str, header: &[&str]) -> Self {
        let mut text = format!("# config_hash: {hash}\n");
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn comment(&mut self, line: &str) {
        let _ = writeln!(self.text, "# {line}");
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text)?;
        Ok(())
    }
}

fn f(v: f64) -> String {
    format!("{v}")
}

/// Files written by a command and a one-line summary.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

impl Report {
    fn add(&mut self, path: PathBuf) {
        self.files.push(path);
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(cfg.output_dir.as_deref().unwrap_or("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Runs `f` on a pool of `cfg.threads` workers (the global pool if 0).
pub fn with_threads<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if cfg.threads == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
        .install(f)
}

/// One field sample in physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub x: [f64; 2],
    pub u: f64,
    pub b: [f64; 2],
    /// `(side, patch)` with side 0 stator, 1 rotor; `None` outside the mesh.
    pub region: Option<(u8, usize)>,
}

fn rotate(x: [f64; 2], a: f64) -> [f64; 2] {
    let (s, c) = a.sin_cos();
    [c * x[0] - s * x[1], s * x[0] + c * x[1]]
}

/// Samples `u` and `B = (du/dy, -du/dx)` on a `grid x grid` square covering
/// the stator. The rotor is turned by `solution.alpha`; points outside the
/// mesh get zeros.
pub fn sample_field(
    prob: &CoupledProblem,
    sol: &AngleSolution,
    grid: usize,
) -> Result<Vec<FieldSample>> {
    let r_out = outer_radius(&prob.stator.model);
    let ust = prob.stator.dofmap.expand(&sol.u_st);
    let urt = prob.rotor.dofmap.expand(&sol.u_rt);
    let r_gamma = prob.rotor.model.interface_radius;
    let h = 2.0 * r_out / (grid - 1) as f64;
    let mut out = Vec::with_capacity(grid * grid);
    for j in 0..grid {
        for i in 0..grid {
            let x = [-r_out + i as f64 * h, -r_out + j as f64 * h];
            let r = x[0].hypot(x[1]);
            let (side, model, dm, u, xl) = if r < r_gamma {
                (
                    1u8,
                    &prob.rotor.model,
                    &prob.rotor.dofmap,
                    &urt,
                    rotate(x, -sol.alpha),
                )
            } else {
                (0u8, &prob.stator.model, &prob.stator.dofmap, &ust, x)
            };
            let sample = match model.locate(xl) {
                Some((k, xi, eta)) => {
                    let (v, g) = eval_field(model, dm, u, k, xi, eta)?;
                    let g = if side == 1 { rotate(g, sol.alpha) } else { g };
                    FieldSample {
                        x,
                        u: v,
                        b: [g[1], -g[0]],
                        region: Some((side, k)),
                    }
                }
                None => FieldSample {
                    x,
                    u: 0.0,
                    b: [0.0; 2],
                    region: None,
                },
            };
            out.push(sample);
        }
    }
    Ok(out)
}

fn outer_radius(model: &MultipatchModel) -> f64 {
    model
        .patches
        .iter()
        .flat_map(|p| p.control_points.iter())
        .map(|c| c[0].hypot(c[1]))
        .fold(0.0, f64::max)
}

fn coefficient_rows(
    csv: &mut Csv,
    side: &str,
    model: &MultipatchModel,
    dm: &DofMap,
    u: &[f64],
    alpha: f64,
) {
    let pts = dm.global_points(model);
    let ug = dm.expand(u);
    for (g, p) in pts.iter().enumerate() {
        let p = rotate(*p, alpha);
        csv.row(&[side.to_string(), g.to_string(), f(p[0]), f(p[1]), f(ug[g])]);
    }
}

/// Single coupled solve at `cfg.solve.alpha`.
pub fn cmd_solve(cfg: &RunConfig) -> Result<Report> {
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    with_threads(cfg, || {
        let prob = CoupledProblem::from_config(&cfg.machine)?;
        let pre = CouplingPrecomp::new(&prob)?;
        let alpha = cfg.solve.alpha;
        let sol = pre.solve_at_angle(alpha)?;
        let mut rep = Report::default();
        let mut coef = Csv::new(&hash, &["side", "global", "x", "y", "u"]);
        coefficient_rows(
            &mut coef,
            "stator",
            &prob.stator.model,
            &prob.stator.dofmap,
            &sol.u_st,
            0.0,
        );
        coefficient_rows(
            &mut coef,
            "rotor",
            &prob.rotor.model,
            &prob.rotor.dofmap,
            &sol.u_rt,
            alpha,
        );
        let p = dir.join("solve_coefficients.csv");
        coef.write(&p)?;
        rep.add(p);
        let mut grid = Csv::new(&hash, &["x", "y", "u", "Bx", "By"]);
        for s in sample_field(&prob, &sol, cfg.solve.grid)? {
            grid.row(&[f(s.x[0]), f(s.x[1]), f(s.u), f(s.b[0]), f(s.b[1])]);
        }
        let p = dir.join("solve_field.csv");
        grid.write(&p)?;
        rep.add(p);
        let psi = pre.flux_linkage(0, alpha, &sol.lambda);
        rep.summary = format!(
            "solved {} dofs with {} harmonics at alpha = {alpha}; phase-1 flux linkage {psi}",
            prob.total_dofs(),
            prob.n_harmonics()
        );
        Ok(rep)
    })
}

/// Flux-linkage sweep over one electrical period, EMF spectrum and THD.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Report> {
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    with_threads(cfg, || {
        let m = &cfg.machine;
        let prob = CoupledProblem::from_config(m)?;
        let pre = CouplingPrecomp::new(&prob)?;
        let angles = sweep_angles(m.pole_pairs, m.n_angles);
        let sw = rotation_sweep(&pre, &angles, cfg.sweep.low_memory)?;
        let spec = emf_spectrum(&sw.psi)?;
        let index_set = m.index_set()?;
        let value = thd(&spec, &index_set)?;
        let mut rep = Report::default();
        let mut fl = Csv::new(&hash, &["index", "alpha", "t", "psi"]);
        for (j, (&a, &p)) in angles.iter().zip(&sw.psi).enumerate() {
            fl.row(&[j.to_string(), f(a), f(m.pole_pairs as f64 * a), f(p)]);
        }
        let p = dir.join("sweep_flux.csv");
        fl.write(&p)?;
        rep.add(p);
        let mut sc = Csv::new(&hash, &["harmonic", "A", "B", "magnitude"]);
        sc.comment(&format!("thd: {value}"));
        for n in 0..spec.len() {
            sc.row(&[
                n.to_string(),
                f(spec.a[n]),
                f(spec.b[n]),
                f(spec.magnitude(n)),
            ]);
        }
        let p = dir.join("sweep_spectrum.csv");
        sc.write(&p)?;
        rep.add(p);
        rep.summary = format!("swept {} angles; THD = {value}", angles.len());
        Ok(rep)
    })
}

/// Shape optimization with history, final geometry and optional snapshots.
pub fn cmd_optimize(cfg: &RunConfig) -> Result<Report> {
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    with_threads(cfg, || {
        let tp = ThdProblem::new(&cfg.machine)?;
        let mut rep = Report::default();
        let hist_path = dir.join("optimize_history.csv");
        let snap_dir = dir.join("snapshots");
        if cfg.optimizer.snapshots {
            fs::create_dir_all(&snap_dir)?;
        }
        let mut hist = Csv::new(&hash, &["iteration", "thd", "step", "min_detJ"]);
        let res = run_optimization(&tp, &cfg.optimizer, |row, model| {
            hist.row(&[
                row.iteration.to_string(),
                f(row.thd),
                f(row.step),
                f(row.min_det),
            ]);
            // Rewritten after every accepted step so a failure keeps the partial history.
            hist.write(&hist_path)?;
            if cfg.optimizer.snapshots {
                fs::write(
                    snap_dir.join(format!("rotor_{:03}.json", row.iteration)),
                    model.to_json()?,
                )?;
            }
            Ok(())
        })?;
        rep.add(hist_path);
        let p = dir.join("optimize_rotor.json");
        fs::write(&p, res.model.to_json()?)?;
        rep.add(p);
        let (first, last) = (res.history[0].thd, res.history.last().unwrap().thd);
        rep.summary = format!(
            "THD {first} -> {last} in {} accepted iterations ({})",
            res.history.len() - 1,
            res.termination.as_str()
        );
        Ok(rep)
    })
}

fn median(mut v: Vec<Duration>) -> f64 {
    v.sort_unstable();
    let n = v.len();

    if n % 2 == 1 {
        v[n / 2].as_secs_f64()
    } else {
        0.5 * (v[n / 2 - 1].as_secs_f64() + v[n / 2].as_secs_f64())
    }
}

fn time_it<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, Duration)> {
    let t0 = Instant::now();
    let v = f()?;
    Ok((v, t0.elapsed()))
}

/// Median timings of one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub level: usize,
    pub dofs: usize,
    pub n_harmonics: usize,
    pub time_full_s: f64,
    pub time_interface_s: f64,
    pub time_pre_s: f64,
    pub time_post_s: f64,
}

const ONLINE_BATCH: u32 = 20;

/// Times the full saddle solve, the offline precompute, the interface solve
/// and the reconstruction at a fixed angle; medians over `repetitions`.
pub fn bench_case(m: &MachineConfig, repetitions: usize, alpha: f64) -> Result<BenchRow> {
    let prob = CoupledProblem::from_config(m)?;
    let mut full = Vec::new();
    let mut pre_t = Vec::new();
    let mut int_t = Vec::new();
    let mut post_t = Vec::new();
    let mut pre = None;
    for _ in 0..repetitions {
        full.push(time_it(|| solve_full(&prob, alpha))?.1);
        let (p, dt) = time_it(|| CouplingPrecomp::new(&prob))?;
        pre_t.push(dt);
        pre = Some(p);
    }
    let pre = pre.expect("at least one repetition");
    // The online steps take microseconds; each sample averages a batch.
    let (lambda, _) = pre.solve_interface(alpha)?;
    for _ in 0..repetitions {
        let (_, dt) =
            time_it(|| (0..ONLINE_BATCH).try_for_each(|_| pre.solve_interface(alpha).map(drop)))?;
        int_t.push(dt / ONLINE_BATCH);
        let (_, dt) = time_it(|| {
            (0..ONLINE_BATCH).try_for_each(|_| pre.reconstruct(alpha, &lambda).map(drop))
        })?;
        post_t.push(dt / ONLINE_BATCH);
    }
    Ok(BenchRow {
        level: m.refinement,
        dofs: prob.total_dofs(),
        n_harmonics: prob.n_harmonics(),
        time_full_s: median(full),
        time_interface_s: median(int_t),
        time_pre_s: median(pre_t),
        time_post_s: median(post_t),
    })
}

/// Timing table over refinement levels and harmonic counts.
pub fn cmd_bench(cfg: &RunConfig) -> Result<Report> {
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    with_threads(cfg, || {
        let mut csv = Csv::new(
            &hash,
            &[
                "level",
                "dofs",
                "n_harmonics",
                "time_full_s",
                "time_interface_s",
                "time_pre_s",
                "time_post_s",
            ],
        );
        let mut n = 0;
        for &level in &cfg.bench.levels {
            for &nh in &cfg.bench.harmonics {
                let m = MachineConfig {
                    refinement: level,
                    n_harmonics: nh,
                    ..cfg.machine.clone()
                };
                m.validate()?;
                let r = bench_case(&m, cfg.bench.repetitions, 0.1)?;
                csv.row(&[
                    r.level.to_string(),
                    r.dofs.to_string(),
                    r.n_harmonics.to_string(),
                    f(r.time_full_s),
                    f(r.time_interface_s),
                    f(r.time_pre_s),
                    f(r.time_post_s),
                ]);
                n += 1;
            }
        }
        let p = dir.join("bench.csv");
        csv.write(&p)?;
        Ok(Report {
            files: vec![p],
            summary: format!("{n} benchmark rows"),
        })
    })
}

/// Geometry dumps of the demo machine.
pub fn cmd_export(cfg: &RunConfig) -> Result<Report> {
    let dir = out_dir(cfg)?;
    let (stator, rotor) = build_demo_machine(&cfg.machine)?;
    let mut rep = Report::default();
    for (name, m) in [("stator", &stator), ("rotor", &rotor)] {
        let p = dir.join(format!("{name}.json"));
        fs::write(&p, m.to_json()?)?;
        rep.add(p);
    }
    rep.summary = format!(
        "{} stator and {} rotor patches",
        stator.patches.len(),
        rotor.patches.len()
    );
    Ok(rep)
}

/// Loads a config file; read failures map to configuration errors.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_json(&text)
}
