//! Mode dispatch and result files.

use std::fs;
use std::io::Write as _;
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use hfd::ensemble::{
    count_equations, run_ensemble, termination_report, EnsembleConfig, EnsembleError,
    TERMINATION_TOL,
};
use hfd::linalg::{inner, norm_sqr};
use hfd::noise::{sample_path, trajectory_seed, NoiseError};
use hfd::oracles::{hops_check, lindblad_oracle, HopsError};
use hfd::trajectory::{collect, PropagationError};
use hfd::{EnsembleResult, Matrix, Path};
use thiserror::Error;

use crate::config::{ConfigError, ConfigErrors, EngineKind, Mode, RunConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Hops(#[from] HopsError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(ConfigErrors(vec![e]))
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Also write the noise path of trajectory 0.
    pub dump_noise: bool,
    /// Trajectory counter on standard error.
    pub progress: bool,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    /// Results directory, absent for `counts`.
    pub dir: Option<PathBuf>,
    /// Human-readable summary printed by the binary.
    pub summary: String,
}

/// Lines of `meta.txt` that legitimately differ between reruns.
pub const VOLATILE_META_KEYS: [&str; 3] = ["# created", "# wall_time_s", "workers ="];

pub fn is_volatile_meta_line(line: &str) -> bool {
    VOLATILE_META_KEYS.iter().any(|k| line.starts_with(k))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Creates `<out_dir>/<timestamp>-seed<seed>`, never reusing a directory.
pub fn create_run_dir(base: &FsPath, seed: u64) -> std::io::Result<PathBuf> {
    fs::create_dir_all(base)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let stem = format!("{stamp}-seed{seed}");
    for n in 0.. {
        let name = if n == 0 {
            stem.clone()
        } else {
            format!("{stem}-{n}")
        };
        let dir = base.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!("unbounded search")
}

fn write_meta(
    dir: &FsPath,
    cfg: &RunConfig,
    lines: &[(&str, String)],
    wall: f64,
) -> Result<(), RunError> {
    let mut f = fs::File::create(dir.join("meta.txt"))?;
    writeln!(f, "# hfd-cli {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(f, "# created = {}", chrono::Utc::now().to_rfc3339())?;
    writeln!(f, "# wall_time_s = {wall:.6}")?;
    for (k, v) in lines {
        writeln!(f, "# {k} = {v}")?;
    }
    writeln!(f, "# rerun with: hfd --config meta.txt")?;
    writeln!(f)?;
    f.write_all(cfg.emit().as_bytes())?;
    Ok(())
}

fn write_rho(dir: &FsPath, times: &[f64], rho: &[Matrix]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(dir.join("rho.csv"))?;
    let d = rho.first().map_or(0, Matrix::dim);
    let mut header = vec!["t".to_string()];
    for i in 0..d {
        for j in 0..d {
            header.push(format!("re_{i}{j}"));
            header.push(format!("im_{i}{j}"));
        }
    }
    w.write_record(&header)?;
    for (t, r) in times.iter().zip(rho) {
        let mut row = vec![num(*t)];
        for z in r.as_slice() {
            row.push(num(z.re));
            row.push(num(z.im));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_observables(
    dir: &FsPath,
    times: &[f64],
    series: &[(String, Vec<f64>, Vec<f64>)],
) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(dir.join("observables.csv"))?;
    let mut header = vec!["t".to_string()];
    for (name, _, _) in series {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_stderr"));
    }
    w.write_record(&header)?;
    for (n, t) in times.iter().enumerate() {
        let mut row = vec![num(*t)];
        for (_, mean, se) in series {
            row.push(num(mean[n]));
            row.push(num(se[n]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_table(
    dir: &FsPath,
    file: &str,
    header: &[String],
    times: &[f64],
    rows: &[Vec<f64>],
) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(dir.join(file))?;
    w.write_record(header)?;
    for (t, r) in times.iter().zip(rows) {
        let mut row = vec![num(*t)];
        row.extend(r.iter().map(|x| num(*x)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_noise(dir: &FsPath, path: &Path) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(dir.join("noise_path.csv"))?;
    w.write_record(["t", "re_zconj", "im_zconj"])?;
    for (i, z) in path.samples().iter().enumerate() {
        w.write_record([num(path.half_time(i)), num(z.re), num(z.im)])?;
    }
    w.flush()?;
    Ok(())
}

fn expect(psi: &[hfd::Complex64], a: &Matrix) -> f64 {
    inner(psi, &a.apply(psi)).re / norm_sqr(psi)
}

fn engine_name(kind: EngineKind) -> &'static str {
    match kind {
        EngineKind::OuHfd => "ou-hfd",
        EngineKind::GeneralHfd => "general-hfd",
        EngineKind::SdeOracle => "sde-oracle",
        EngineKind::Exact3 => "exact3",
    }
}

/// Validates `cfg` and runs its mode.
pub fn execute(cfg: &RunConfig, opts: RunOptions) -> Result<Outcome, RunError> {
    cfg.validate(None)?;
    let r = &cfg.run;
    if r.mode == Mode::Counts {
        let (hfd, sde) = count_equations(r.order);
        return Ok(Outcome {
            dir: None,
            summary: format!("HFD: {hfd}, SDE: {sde}"),
        });
    }
    let start = Instant::now();
    let sys = cfg.system_spec()?;
    let kernel = cfg.kernel()?;
    let dir = create_run_dir(FsPath::new(&r.out_dir), r.seed)?;
    let first_seed = trajectory_seed(r.seed, 0);
    if opts.dump_noise {
        write_noise(&dir, &sample_path(&kernel, r.t_max, r.dt, first_seed)?)?;
    }
    let mut meta = vec![
        ("mode", r.mode.as_str().to_string()),
        ("seed", r.seed.to_string()),
    ];

    let summary = match r.mode {
        Mode::Counts => unreachable!(),
        Mode::OuHfd | Mode::GeneralHfd | Mode::SdeOracle | Mode::Exact3 => {
            let kind = match r.mode {
                Mode::OuHfd => EngineKind::OuHfd,
                Mode::GeneralHfd => EngineKind::GeneralHfd,
                Mode::SdeOracle => EngineKind::SdeOracle,
                _ => EngineKind::Exact3,
            };
            let spec = cfg.engine_spec(kind)?;
            let ecfg = EnsembleConfig {
                trajectories: r.trajectories,
                dt: r.dt,
                t_max: r.t_max,
                master_seed: r.seed,
                workers: r.workers,
                progress: opts.progress,
            };
            let res = run_ensemble(&sys, &kernel, &spec, &ecfg)?;
            write_ensemble(&dir, &res)?;
            let sanity = res.sanity(&sys);
            let term = termination_report(&res, TERMINATION_TOL);
            meta.push(("engine", res.meta.engine.clone()));
            meta.push(("truncation", res.meta.truncation.clone()));
            meta.push(("termination", term.to_string()));
            meta.push(("max_trace_error", format!("{:.3e}", sanity.max_trace_error)));
            meta.push((
                "max_hermiticity_error",
                format!("{:.3e}", sanity.max_hermiticity_error),
            ));
            meta.push(("min_eigenvalue", format!("{:.3e}", sanity.min_eigenvalue)));
            format!(
                "{} trajectories of {} ({}): {term}; sanity {}",
                r.trajectories,
                res.meta.engine,
                res.meta.truncation,
                if sanity.passed() { "ok" } else { "FAILED" }
            )
        }
        Mode::Lindblad => {
            let (big_gamma, _) = kernel.ou_parameters().ok_or_else(|| ConfigError {
                line: None,
                message: "lindblad needs a real OU bath".into(),
            })?;
            let sol = lindblad_oracle(&sys, big_gamma, r.dt, r.t_max)?;
            let series: Vec<_> = sys
                .observables
                .iter()
                .map(|o| {
                    (
                        o.name.clone(),
                        sol.expectation(&o.matrix),
                        vec![0.0; sol.times.len()],
                    )
                })
                .collect();
            write_observables(&dir, &sol.times, &series)?;
            write_rho(&dir, &sol.times, &sol.rho)?;
            meta.push(("engine", "lindblad".into()));
            meta.push(("rate", num(big_gamma)));
            format!(
                "Lindblad reference with rate {big_gamma} over {} samples",
                sol.times.len()
            )
        }
        Mode::Compare => {
            let path = sample_path(&kernel, r.t_max, r.dt, first_seed)?;
            let a = collect(
                cfg.engine_spec(r.engine)?.build(&sys, &kernel)?.as_ref(),
                &path,
            )?;
            let b = collect(
                cfg.engine_spec(r.reference)?.build(&sys, &kernel)?.as_ref(),
                &path,
            )?;
            let levels = a.q[0].len().min(b.q[0].len());
            let mut header = vec![
                "t".to_string(),
                "overlap_deficit".to_string(),
                "observable_deviation".to_string(),
            ];
            header.extend((0..levels).map(|k| format!("q{k}_deviation")));
            let mut rows = Vec::with_capacity(a.times.len());
            let mut worst = vec![0.0f64; levels + 2];
            for n in 0..a.times.len() {
                let (pa, pb) = (&a.psi[n], &b.psi[n]);
                let overlap = inner(pa, pb).norm_sqr() / (norm_sqr(pa) * norm_sqr(pb));
                let obs_dev = sys
                    .observables
                    .iter()
                    .map(|o| (expect(pa, &o.matrix) - expect(pb, &o.matrix)).abs())
                    .fold(0.0, f64::max);
                let mut row = vec![(1.0 - overlap).abs(), obs_dev];
                row.extend((0..levels).map(|k| a.q[n][k].max_abs_diff(&b.q[n][k])));
                for (w, x) in worst.iter_mut().zip(&row) {
                    *w = w.max(*x);
                }
                rows.push(row);
            }
            write_table(&dir, "report.csv", &header, &a.times, &rows)?;
            meta.push(("engine", engine_name(r.engine).into()));
            meta.push(("reference", engine_name(r.reference).into()));
            meta.push(("path_seed", first_seed.to_string()));
            meta.push(("max_overlap_deficit", format!("{:.3e}", worst[0])));
            meta.push(("max_observable_deviation", format!("{:.3e}", worst[1])));
            let qs: Vec<String> = worst[2..].iter().map(|x| format!("{x:.3e}")).collect();
            format!(
                "{} vs {}: max overlap deficit {:.3e}, max observable deviation {:.3e}, max Q_k deviation [{}]",
                engine_name(r.engine),
                engine_name(r.reference),
                worst[0],
                worst[1],
                qs.join(", ")
            )
        }
        Mode::HopsCheck => {
            let path = sample_path(&kernel, r.t_max, r.dt, first_seed)?;
            let engine = cfg.engine_spec(r.engine)?.build(&sys, &kernel)?;
            let rep = hops_check(engine.as_ref(), &path, r.hops_depth, r.hops_keep)?;
            let header: Vec<String> = ["t", "residual", "truncation_change", "scale"]
                .map(String::from)
                .into();
            let rows: Vec<Vec<f64>> = (0..rep.times.len())
                .map(|n| vec![rep.residual[n], rep.truncation_change[n], rep.scale[n]])
                .collect();
            write_table(&dir, "report.csv", &header, &rep.times, &rows)?;
            meta.push(("engine", engine_name(r.engine).into()));
            meta.push(("path_seed", first_seed.to_string()));
            meta.push(("max_residual", format!("{:.3e}", rep.max_residual())));
            meta.push((
                "max_truncation_change",
                format!("{:.3e}", rep.max_truncation_change()),
            ));
            format!(
                "depth {}: max residual {:.3e}, max change keeping {} levels {:.3e}",
                r.hops_depth,
                rep.max_residual(),
                r.hops_keep,
                rep.max_truncation_change()
            )
        }
    };
    write_meta(&dir, cfg, &meta, start.elapsed().as_secs_f64())?;
    Ok(Outcome {
        dir: Some(dir),
        summary,
    })
}

fn write_ensemble(dir: &FsPath, res: &EnsembleResult) -> Result<(), RunError> {
    let series: Vec<_> = res
        .observables
        .iter()
        .map(|o| (o.name.clone(), o.mean.clone(), o.stderr.clone()))
        .collect();
    write_observables(dir, &res.times, &series)?;
    let levels = res.qnorms.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((0..levels).map(|k| format!("Q{k}")));
    write_table(dir, "qnorms.csv", &header, &res.times, &res.qnorms)?;
    write_rho(dir, &res.times, &res.rho)
}
