use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use notipkit::bounds::tdp_on_subset;
use notipkit::clusters::Affine;
use notipkit::io::{load_data, save_data, save_matrix};
use notipkit::randomization::{observed_pvalues, randomized_pvalue_matrix_with};
use notipkit::{
    calibrate_learned, calibrate_simes, cluster_tdp_table, default_k_max, experiment_driver,
    extract_clusters, largest_controlled_region, learn_template, notip_single_dataset, pvalue_to_z,
    simulate_run, Alternative, AriContext, CalibratedFamily, DataMatrix, Design, InferenceConfig,
    LearnedTemplate, Method, SimulationConfig, StatMap, TwoSampleDesign,
};
use serde::Serialize;

use crate::args::*;
use crate::failure::{AtPath, CliResult, Failure};
use crate::manifest::{self, Recorder};

fn out_dir(out: &OutputArgs) -> CliResult<&Path> {
    fs::create_dir_all(&out.output_dir).at(&out.output_dir)?;
    Ok(&out.output_dir)
}

fn write_file(
    rec: &mut Recorder,
    path: PathBuf,
    f: impl FnOnce(&mut BufWriter<File>) -> CliResult<()>,
) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(&path).at(&path)?);
    f(&mut w)?;
    w.flush().at(&path)?;
    rec.output(&path);
    Ok(())
}

fn write_json(rec: &mut Recorder, path: PathBuf, value: &impl Serialize) -> CliResult<()> {
    write_file(rec, path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn load_simulation_config(path: Option<&Path>) -> CliResult<SimulationConfig> {
    match path {
        None => Ok(SimulationConfig::default()),
        // a config that does not parse or validate is a usage problem
        Some(p) => SimulationConfig::from_file(p).map_err(|e| match e {
            notipkit::Error::Io(_) => Failure::from(e),
            other => Failure::usage(format!("{}: {other}", p.display())),
        }),
    }
}

struct Loaded {
    data: DataMatrix,
    design: Design,
    alternative: Alternative,
}

fn load_input(input: &DataArgs, rec: &mut Recorder) -> CliResult<Loaded> {
    let data = load_data(&input.data).at(&input.data)?;
    rec.input("data", &input.data);
    let design = match &input.labels {
        None => Design::OneSample,
        Some(path) => {
            let text = fs::read_to_string(path).at(path)?;
            let labels = text
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .enumerate()
                .map(|(i, s)| match s {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Failure::data(format!(
                        "{}: label {} is {other:?}, expected 0 or 1",
                        path.display(),
                        i + 1
                    ))),
                })
                .collect::<CliResult<Vec<bool>>>()?;
            if labels.len() != data.n() {
                return Err(Failure::data(format!(
                    "{}: {} labels for {} subjects",
                    path.display(),
                    labels.len(),
                    data.n()
                )));
            }
            rec.input("labels", path);
            Design::TwoSample(TwoSampleDesign::new(labels).at(path)?)
        }
    };
    let alternative = if input.two_sided {
        Alternative::TwoSided
    } else {
        Alternative::Greater
    };
    Ok(Loaded {
        data,
        design,
        alternative,
    })
}

pub fn simulate(a: &SimulateArgs, rec: &mut Recorder) -> CliResult<()> {
    let mut cfg = load_simulation_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(Failure::usage)?;
    if let Some(p) = &a.config {
        rec.input("config", p);
    }
    rec.config(&cfg)?;
    rec.seed("seed", cfg.seed);
    let dir = out_dir(&a.out)?;
    let run = simulate_run(&cfg, 0)?;

    for (name, data) in [("data.bin", &run.data), ("train.bin", &run.train)] {
        let path = dir.join(name);
        save_data(&path, data).at(&path)?;
        rec.output(&path);
    }
    write_file(rec, dir.join("truth.csv"), |w| {
        Ok(run.truth.write_csv(w)?)
    })?;
    write_file(rec, dir.join("train_truth.csv"), |w| {
        Ok(run.train_truth.write_csv(w)?)
    })?;
    write_file(rec, dir.join("config.toml"), |w| {
        Ok(w.write_all(cfg.to_toml_string().as_bytes())?)
    })?;
    println!(
        "simulated {} + {} subjects on {:?} ({} signal voxels) into {}",
        cfg.n_infer,
        cfg.n_train,
        cfg.dims,
        run.truth.m1(),
        dir.display()
    );
    Ok(())
}

pub fn learn(a: &LearnArgs, rec: &mut Recorder) -> CliResult<()> {
    let input = load_input(&a.input, rec)?;
    let m = input.data.m();
    let cfg = InferenceConfig {
        k_max: a.kmax,
        b_train: a.b_train,
        seed: a.seed,
        include_identity: !a.no_identity,
        alternative: input.alternative,
        ..Default::default()
    };
    cfg.validate(m)?;
    let k_max = cfg.resolved_k_max(m);
    rec.config(&cfg)?;
    rec.seed("seed", a.seed);
    rec.seed("training", cfg.training_seed());

    let nulls = randomized_pvalue_matrix_with(
        &input.data,
        a.b_train,
        cfg.training_seed(),
        &input.design,
        cfg.include_identity,
        cfg.alternative,
    )?;
    let template = learn_template(&nulls, k_max)?;
    let dir = out_dir(&a.out)?;
    let path = dir.join("template.tpl");
    template.save(&path).at(&path)?;
    rec.output(&path);
    println!(
        "learned {} curves of length {k_max} on m = {m} into {}",
        template.b_train(),
        path.display()
    );
    Ok(())
}

/// Calibrate the family of `method` on `input`.
fn calibrate(
    method: Method,
    c: &CalibArgs,
    input: &Loaded,
    pvals: &[f64],
    rec: &mut Recorder,
) -> CliResult<CalibratedFamily> {
    let m = input.data.m();
    let cfg = InferenceConfig {
        alpha: c.alpha,
        k_max: c.kmax,
        b_train: c.b_train,
        b_infer: c.b_infer,
        seed: c.seed,
        include_identity: !c.no_identity,
        alternative: input.alternative,
        ..Default::default()
    };
    cfg.validate(m)?;
    rec.seed("seed", c.seed);
    if matches!(
        method,
        Method::CalibratedSimes | Method::Notip | Method::NotipSingle
    ) {
        rec.seed("inference", cfg.inference_seed());
    }
    let nulls = || {
        randomized_pvalue_matrix_with(
            &input.data,
            c.b_infer,
            cfg.inference_seed(),
            &input.design,
            cfg.include_identity,
            cfg.alternative,
        )
    };
    let family = match method {
        Method::Ari => AriContext::new(pvals, c.alpha)?.calibrated()?,
        Method::CalibratedSimes => {
            let k_max = c.kmax.unwrap_or_else(|| default_k_max(m));
            calibrate_simes(&nulls()?, c.alpha, k_max)?
        }
        Method::NotipSingle => {
            rec.seed("training", cfg.training_seed());
            notip_single_dataset(&input.data, &input.design, &cfg)?
        }
        Method::Notip => {
            let Some(path) = &c.template else {
                return Err(Failure::usage(
                    "method notip needs --template (or --single to learn on the same data)",
                ));
            };
            let template = LearnedTemplate::load(path).at(path)?;
            rec.input("template", path);
            let k_max = c.kmax.unwrap_or(template.k_max());
            calibrate_learned(&nulls()?, &template, c.alpha, k_max).at(path)?
        }
    };
    if let Some(w) = &family.warning {
        eprintln!("warning: {w}");
    }
    Ok(family)
}

fn effective_method(method: MethodArg, single: bool) -> Method {
    match (Method::from(method), single) {
        (Method::Notip, true) => Method::NotipSingle,
        (m, _) => m,
    }
}

#[derive(Serialize)]
struct InferReport {
    m: usize,
    q: f64,
    calibration: notipkit::calibration::CalibrationSummary,
    region: RegionSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    subset: Option<notipkit::BoundReport>,
}

#[derive(Serialize)]
struct RegionSummary {
    size: usize,
    v: usize,
    fdp_bound: f64,
    tdp_bound: f64,
    cutoff: Option<f64>,
}

fn read_indices(path: &Path) -> CliResult<Vec<usize>> {
    let text = fs::read_to_string(path).at(path)?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Failure::data(format!("{}: bad index {s:?}", path.display())))
        })
        .collect()
}

pub fn infer(a: &InferArgs, rec: &mut Recorder) -> CliResult<()> {
    let method = effective_method(a.method, a.calib.single);
    let input = load_input(&a.input, rec)?;
    let pvals = observed_pvalues(&input.data, &input.design, input.alternative)?;
    let family = calibrate(method, &a.calib, &input, &pvals, rec)?;
    rec.config(&serde_json::json!({
        "method": method,
        "alpha": a.calib.alpha,
        "q": a.q,
        "k_max": family.k_max,
        "b_infer": a.calib.b_infer,
        "b_train": a.calib.b_train,
        "include_identity": !a.calib.no_identity,
        "alternative": input.alternative,
    }))?;
    let region = largest_controlled_region(&pvals, family.thresholds(), a.q, family.k_max)?;

    let subset = match &a.subset {
        None => None,
        Some(path) => {
            rec.input("subset", path);
            let idx = read_indices(path)?;
            let s = notipkit::VoxelSubset::from_indices(idx, &pvals).at(path)?;
            Some(tdp_on_subset(s.p_values(), &family)?)
        }
    };
    let report = InferReport {
        m: pvals.len(),
        q: a.q,
        calibration: family.summary(),
        region: RegionSummary {
            size: region.size,
            v: region.report.v,
            fdp_bound: region.report.fdp_bound,
            tdp_bound: region.report.tdp_bound,
            cutoff: region.cutoff,
        },
        subset,
    };

    let dir = out_dir(&a.out)?;
    write_json(rec, dir.join("report.json"), &report)?;
    write_file(rec, dir.join("region.csv"), |w| {
        writeln!(w, "index,p_value")?;
        for &i in &region.indices {
            writeln!(w, "{i},{}", pvals[i])?;
        }
        Ok(())
    })?;
    let fam_path = dir.join("family.bin");
    save_matrix(&fam_path, 1, family.k_max, family.thresholds()).at(&fam_path)?;
    rec.output(&fam_path);
    println!(
        "{}: region of {} tests, at most {} false (TDP >= {:.3})",
        family.method, region.size, region.report.v, region.report.tdp_bound
    );
    Ok(())
}

#[derive(Serialize)]
struct ClusterReport {
    connectivity: notipkit::Connectivity,
    calibrations: Vec<notipkit::calibration::CalibrationSummary>,
    tables: Vec<notipkit::ClusterTable>,
}

fn affine(a: &ClusterArgs) -> CliResult<Option<Affine>> {
    let n = a.dims.len();
    let pad = |v: &[f64], what: &str| -> CliResult<[f64; 3]> {
        if v.len() != n {
            return Err(Failure::usage(format!(
                "--{what} needs {n} values, got {}",
                v.len()
            )));
        }
        let mut out = [0.0; 3];
        out[..n].copy_from_slice(v);
        Ok(out)
    };
    match (&a.voxel_size, &a.origin) {
        (None, None) => Ok(None),
        (vs, origin) => Ok(Some(Affine {
            voxel_size: match vs {
                Some(v) => pad(v, "voxel-size")?,
                None => [1.0; 3],
            },
            origin: match origin {
                Some(o) => pad(o, "origin")?,
                None => [0.0; 3],
            },
        })),
    }
}

fn z_label(z: f64) -> String {
    format!("{z}").replace('-', "m")
}

pub fn cluster_report(a: &ClusterArgs, rec: &mut Recorder) -> CliResult<()> {
    let input = load_input(&a.input, rec)?;
    let m = input.data.m();
    let grid: usize = a.dims.iter().product();
    if !(2..=3).contains(&a.dims.len()) || grid != m {
        return Err(Failure::usage(format!(
            "--dims {:?} describe {grid} voxels but the data has {m} tests",
            a.dims
        )));
    }
    let affine = affine(a)?;
    let pvals = observed_pvalues(&input.data, &input.design, input.alternative)?;
    let z: Vec<f64> = pvals.iter().map(|&p| pvalue_to_z(p)).collect();
    let map = StatMap::from_tests(&z, &a.dims, None)?;

    let methods: Vec<Method> = if a.methods.is_empty() {
        let mut v = vec![Method::Ari, Method::CalibratedSimes];
        if a.calib.template.is_some() {
            v.push(Method::Notip);
        } else if a.calib.single {
            v.push(Method::NotipSingle);
        }
        v
    } else {
        a.methods
            .iter()
            .map(|&m| effective_method(m, a.calib.single))
            .collect()
    };
    let families = methods
        .iter()
        .map(|&meth| calibrate(meth, &a.calib, &input, &pvals, rec))
        .collect::<CliResult<Vec<_>>>()?;
    rec.config(&serde_json::json!({
        "dims": a.dims,
        "z_threshold": a.z_threshold,
        "connectivity": notipkit::Connectivity::from(a.connectivity),
        "methods": methods,
        "alpha": a.calib.alpha,
        "b_infer": a.calib.b_infer,
        "affine": affine,
    }))?;

    let dir = out_dir(&a.out)?;
    let mut tables = Vec::with_capacity(a.z_threshold.len());
    for &zt in &a.z_threshold {
        let clusters = extract_clusters(&map, zt, a.connectivity.into())?;
        let table = cluster_tdp_table(&map, &clusters, zt, &pvals, &families, affine.as_ref())?;
        write_file(
            rec,
            dir.join(format!("clusters_z{}.csv", z_label(zt))),
            |w| Ok(table.write_csv(w)?),
        )?;
        println!("z > {zt}: {} clusters", table.rows.len());
        tables.push(table);
    }
    let report = ClusterReport {
        connectivity: a.connectivity.into(),
        calibrations: families.iter().map(|f| f.summary()).collect(),
        tables,
    };
    write_json(rec, dir.join("clusters.json"), &report)
}

#[derive(Serialize)]
struct ExperimentSummary<'a> {
    n_runs: usize,
    completed: usize,
    summary: &'a [notipkit::simulator::MethodSummary],
    tpr_gain_notip_over_ari: Option<f64>,
    tpr_gain_notip_over_simes: Option<f64>,
    failures: &'a [(usize, String)],
}

pub fn experiment(a: &ExperimentArgs, rec: &mut Recorder) -> CliResult<()> {
    let mut cfg = load_simulation_config(a.config.as_deref())?;
    if let Some(v) = a.n_runs {
        cfg.n_runs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.q {
        cfg.q = v;
    }
    if a.kmax.is_some() {
        cfg.k_max = a.kmax;
    }
    if let Some(v) = a.b_train {
        cfg.b_train = v;
    }
    if let Some(v) = a.b_infer {
        cfg.b_infer = v;
    }
    cfg.validate().map_err(Failure::usage)?;
    if let Some(p) = &a.config {
        rec.input("config", p);
    }
    rec.config(&cfg)?;
    rec.seed("seed", cfg.seed);

    let report = experiment_driver(&cfg)?;
    let dir = out_dir(&a.out)?;
    write_file(rec, dir.join("metrics.csv"), |w| {
        Ok(report.write_metrics_csv(w)?)
    })?;
    let summary = ExperimentSummary {
        n_runs: cfg.n_runs,
        completed: report.runs.len(),
        summary: &report.summary,
        tpr_gain_notip_over_ari: report.tpr_gain(Method::Notip, Method::Ari),
        tpr_gain_notip_over_simes: report.tpr_gain(Method::Notip, Method::CalibratedSimes),
        failures: &report.failures,
    };
    write_json(rec, dir.join("summary.json"), &summary)?;
    for s in &report.summary {
        println!(
            "{:<17} mean TPR {:.3}  mean FDP {:.3}  FDP > q in {:.1}% of runs",
            s.method.as_str(),
            s.mean_tpr,
            s.mean_fdp,
            100.0 * s.violation_fraction
        );
    }
    if let Some((run, msg)) = report.failures.first() {
        return Err(Failure {
            code: crate::failure::EXIT_NUMERICAL,
            error: anyhow::anyhow!(
                "{} of {} runs failed (first: run {run}: {msg}); completed runs were written",
                report.failures.len(),
                cfg.n_runs
            ),
        });
    }
    Ok(())
}

pub fn export_template(a: &ExportArgs, rec: &mut Recorder) -> CliResult<()> {
    if a.every == 0 {
        return Err(Failure::usage("--every must be >= 1"));
    }
    let template = LearnedTemplate::load(&a.template).at(&a.template)?;
    rec.input("template", &a.template);
    rec.config(&serde_json::json!({ "every": a.every }))?;
    let dir = out_dir(&a.out)?;
    write_file(rec, dir.join("template.csv"), |w| {
        Ok(template.write_csv(w, a.every)?)
    })
}

/// Arguments of a recorded run, with the output directory optionally moved.
/// Switches to the recorded working directory so relative paths resolve as
/// they did originally.
pub fn replay_args(a: &ReplayArgs) -> CliResult<Vec<String>> {
    let man = manifest::load(&a.manifest)?;
    let mut args = man.args;
    if let Some(dir) = &a.output_dir {
        let dir = std::path::absolute(dir).at(dir)?;
        manifest::pin_flag(
            &mut args,
            &["--output-dir", "-o"],
            &dir.display().to_string(),
        );
    }
    if !man.cwd.as_os_str().is_empty() {
        std::env::set_current_dir(&man.cwd).at(&man.cwd)?;
    }
    Ok(args)
}
